use serde::{Deserialize, Serialize};

use super::{Example, Input, Splits};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// Five-node motif planted in each graph; the motif decides the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Motif {
    /// Label 1.
    House,
    /// Label 0.
    Cycle,
}

impl Motif {
    pub fn for_label(label: usize) -> Self {
        if label == 1 {
            Motif::House
        } else {
            Motif::Cycle
        }
    }

    /// Edges in motif-local ids 0..5.
    pub fn edges(self) -> &'static [(usize, usize)] {
        match self {
            Motif::House => &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)],
            Motif::Cycle => &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)],
        }
    }

    pub const SIZE: usize = 5;
}

/// Preferential-attachment base graphs with a house (label 1) or five-cycle
/// (label 0) motif attached by a single bridge edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphGenSpec {
    pub base_nodes: usize,
    pub feature_dim: usize,
    pub feature_value: f64,
    pub feature_noise: f64,
    /// Append a one-hot encoding of each node's degree, capped at this many
    /// buckets (degrees 1, 2, ..., and `degree_buckets` or more). Zero
    /// disables it.
    pub degree_buckets: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for GraphGenSpec {
    fn default() -> Self {
        Self {
            base_nodes: 20,
            feature_dim: 10,
            feature_value: 1.0,
            feature_noise: 0.01,
            degree_buckets: 5,
            train_size: 800,
            dev_size: 200,
            test_size: 200,
            seed: 1,
        }
    }
}

impl GraphGenSpec {
    /// Width of each node feature row.
    pub fn row_width(&self) -> usize {
        self.feature_dim + self.degree_buckets
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_nodes < 5 {
            return Err(Error::Config(format!(
                "base_nodes must be at least 5, got {}",
                self.base_nodes
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        Ok(())
    }

    fn graph(&self, label: usize, rng: &mut Rng) -> Example {
        let base = self.base_nodes;
        // Barabási–Albert with one edge per new node, seeded by the edge 0-1.
        let mut edges = vec![(0, 1)];
        let mut endpoints = vec![0, 1];
        for v in 2..base {
            let u = endpoints[rng.below(endpoints.len())];
            edges.push((u, v));
            endpoints.push(u);
            endpoints.push(v);
        }
        let motif = Motif::for_label(label);
        edges.extend(motif.edges().iter().map(|&(a, b)| (base + a, base + b)));
        edges.push((rng.below(base), base + rng.below(Motif::SIZE)));

        let num_nodes = base + Motif::SIZE;
        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let features = degree
            .iter()
            .map(|&d| {
                let mut row: Vec<f64> = (0..self.feature_dim)
                    .map(|_| self.feature_value + self.feature_noise * rng.normal())
                    .collect();
                if self.degree_buckets > 0 {
                    let bucket = d.clamp(1, self.degree_buckets) - 1;
                    row.extend((0..self.degree_buckets).map(|b| f64::from(u8::from(b == bucket))));
                }
                row
            })
            .collect();
        let rationale = (0..num_nodes).map(|i| i >= base).collect();
        Example {
            input: Input::Graph {
                num_nodes,
                edges,
                features,
            },
            label,
            rationale: Some(rationale),
        }
    }

    fn split(&self, stream: u64, size: usize) -> Vec<Example> {
        let base = Rng::with_stream(self.seed, 100 + stream);
        let mut out: Vec<Example> = (0..size)
            .map(|i| self.graph(i % 2, &mut base.split(i as u64)))
            .collect();
        base.split(u64::MAX).shuffle(&mut out);
        out
    }
}

pub fn gen_graphs(spec: &GraphGenSpec) -> Result<Splits> {
    spec.validate()?;
    Ok(Splits {
        train: spec.split(0, spec.train_size),
        dev: spec.split(1, spec.dev_size),
        test: spec.split(2, spec.test_size),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn small() -> GraphGenSpec {
        GraphGenSpec {
            train_size: 60,
            dev_size: 10,
            test_size: 10,
            ..GraphGenSpec::default()
        }
    }

    #[test]
    fn motif_definitions() {
        assert_eq!(
            Motif::House.edges(),
            &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]
        );
        let cycle = Motif::Cycle.edges();
        assert_eq!(cycle.len(), 5);
        let mut degree = [0; 5];
        for &(a, b) in cycle {
            degree[a] += 1;
            degree[b] += 1;
        }
        assert_eq!(degree, [2; 5]);
    }

    fn connected(ex: &Example) -> bool {
        let Input::Graph { num_nodes, edges, .. } = &ex.input else {
            return false;
        };
        let mut adj = vec![vec![]; *num_nodes];
        for &(u, v) in edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut seen = vec![false; *num_nodes];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    #[test]
    fn graphs_are_connected_and_labeled_by_motif() {
        let splits = gen_graphs(&small()).unwrap();
        for (_, split) in splits.named() {
            for ex in split {
                ex.validate().unwrap();
                assert!(connected(ex));
                let gold = ex.rationale.as_ref().unwrap();
                assert_eq!(gold.iter().filter(|&&g| g).count(), Motif::SIZE);
                let Input::Graph { edges, .. } = &ex.input else { unreachable!() };
                let inside = edges.iter().filter(|&&(u, v)| gold[u] && gold[v]).count();
                assert_eq!(inside, Motif::for_label(ex.label).edges().len());
                let bridges = edges.iter().filter(|&&(u, v)| gold[u] != gold[v]).count();
                assert_eq!(bridges, 1);
            }
        }
    }

    #[test]
    fn deterministic_and_validated() {
        assert_eq!(gen_graphs(&small()).unwrap(), gen_graphs(&small()).unwrap());
        let bad = GraphGenSpec {
            base_nodes: 4,
            ..small()
        };
        assert!(gen_graphs(&bad).is_err());
    }
}
