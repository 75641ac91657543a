use std::collections::BTreeSet;
use std::rc::Rc;

use super::init_uniform;
use crate::error::{Error, Result};
use crate::tensor::{Bound, ParamId, ParamStore, Rng, SparseMatrix, Tape, Tensor, Var};

/// `D^{-1/2} (A + I) D^{-1/2}` for an undirected graph. Each edge may be listed
/// once in either orientation; duplicates and self loops in `edges` are ignored.
pub fn normalized_adjacency(num_nodes: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
    let mut set = BTreeSet::new();
    for &(u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::invalid(
                "gcn_forward",
                format!("edge ({u}, {v}) references a node outside 0..{num_nodes}"),
            ));
        }
        if u != v {
            set.insert((u.min(v), u.max(v)));
        }
    }
    let mut degree = vec![1.0f64; num_nodes];
    for &(u, v) in &set {
        degree[u] += 1.0;
        degree[v] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut triplets: Vec<(usize, usize, f64)> = (0..num_nodes)
        .map(|i| (i, i, inv_sqrt[i] * inv_sqrt[i]))
        .collect();
    for &(u, v) in &set {
        let w = inv_sqrt[u] * inv_sqrt[v];
        triplets.push((u, v, w));
        triplets.push((v, u, w));
    }
    SparseMatrix::from_triplets(num_nodes, &triplets)
}

/// Block-diagonal normalized adjacency for a batch of graphs, nodes numbered
/// consecutively in batch order.
pub fn batch_adjacency<'a>(graphs: impl IntoIterator<Item = (usize, &'a [(usize, usize)])>) -> Result<SparseMatrix> {
    let mut offset = 0;
    let mut triplets = vec![];
    for (n, edges) in graphs {
        let block = normalized_adjacency(n, edges)?;
        for r in 0..n {
            triplets.extend(block.row(r).map(|(c, v)| (offset + r, offset + c, v)));
        }
        offset += n;
    }
    SparseMatrix::from_triplets(offset, &triplets)
}

/// Two-layer graph convolution `Â ReLU(Â X W1 + b1) W2 + b2`. Biases start at
/// zero.
#[derive(Clone, Debug)]
pub struct GcnEncoder {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    w1: ParamId,
    w2: ParamId,
    b1: ParamId,
    b2: ParamId,
}

impl GcnEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let w1 = store.add(
            format!("{prefix}.w1"),
            init_uniform(rng, &[input_dim, hidden], (6.0 / (input_dim + hidden) as f64).sqrt()),
        );
        let w2 = store.add(
            format!("{prefix}.w2"),
            init_uniform(rng, &[hidden, output_dim], (6.0 / (hidden + output_dim) as f64).sqrt()),
        );
        let b1 = store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden]));
        let b2 = store.add(format!("{prefix}.b2"), Tensor::zeros(&[output_dim]));
        Self {
            input_dim,
            hidden,
            output_dim,
            w1,
            w2,
            b1,
            b2,
        }
    }

    pub fn weights(&self) -> (ParamId, ParamId) {
        (self.w1, self.w2)
    }

    pub fn biases(&self) -> (ParamId, ParamId) {
        (self.b1, self.b2)
    }

    /// `features [N, input_dim]` to `[N, output_dim]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, features: Var, adj: &Rc<SparseMatrix>) -> Result<Var> {
        let shape = tape.shape(features);
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::shape(
                "gcn_forward",
                format!("expected [nodes, {}], got {shape:?}", self.input_dim),
            ));
        }
        let xw = tape.matmul(features, bound.var(self.w1))?;
        let h1 = tape.propagate(xw, adj.clone())?;
        let h1 = tape.add(h1, bound.var(self.b1))?;
        let h1 = tape.relu(h1);
        let hw = tape.matmul(h1, bound.var(self.w2))?;
        let h2 = tape.propagate(hw, adj.clone())?;
        tape.add(h2, bound.var(self.b2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(store: &ParamStore, gcn: &GcnEncoder, x: Tensor, adj: SparseMatrix) -> Tensor {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.constant(x);
        let y = gcn.forward(&mut tape, &bound, x, &Rc::new(adj)).unwrap();
        tape.value(y).clone()
    }

    fn dense_mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut store = ParamStore::new();
        let gcn = GcnEncoder::new(&mut store, "gcn", 2, 3, 2, &mut Rng::new(1));
        let (w1, w2) = gcn.weights();
        store.get_mut(w1).data_mut().fill(0.0);
        store.get_mut(w2).data_mut().fill(0.0);
        let adj = normalized_adjacency(3, &[(0, 1), (1, 2)]).unwrap();
        let out = run(&store, &gcn, Tensor::new(vec![3, 2], vec![1.0; 6]).unwrap(), adj);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_is_a_plain_two_layer_map() {
        let mut store = ParamStore::new();
        let gcn = GcnEncoder::new(&mut store, "gcn", 2, 3, 2, &mut Rng::new(5));
        let adj = normalized_adjacency(1, &[]).unwrap();
        assert_eq!(adj.to_dense(), vec![1.0]);
        let x = vec![0.4, -0.9];
        let out = run(&store, &gcn, Tensor::new(vec![1, 2], x.clone()).unwrap(), adj);
        let (w1, w2) = gcn.weights();
        let h: Vec<f64> = dense_mm(&x, store.get(w1).data(), 1, 2, 3)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let want = dense_mm(&h, store.get(w2).data(), 1, 3, 2);
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn path_graph_matches_dense_oracle() {
        let mut store = ParamStore::new();
        let gcn = GcnEncoder::new(&mut store, "gcn", 2, 4, 3, &mut Rng::new(8));
        // Path 0-1-2: degrees with self loops are 2, 3, 2.
        let s = |a: f64, b: f64| 1.0 / (a * b).sqrt();
        let dense_adj = vec![
            s(2., 2.), s(2., 3.), 0.0,
            s(3., 2.), s(3., 3.), s(3., 2.),
            0.0, s(2., 3.), s(2., 2.),
        ];
        let adj = normalized_adjacency(3, &[(1, 0), (1, 2)]).unwrap();
        for (a, b) in adj.to_dense().iter().zip(&dense_adj) {
            assert!((a - b).abs() < 1e-15);
        }
        let mut rng = Rng::new(3);
        let (b1, b2) = gcn.biases();
        for id in [b1, b2] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.normal());
        }
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let out = run(&store, &gcn, Tensor::new(vec![3, 2], x.clone()).unwrap(), adj);
        let (w1, w2) = gcn.weights();
        let ax = dense_mm(&dense_adj, &x, 3, 3, 2);
        let h: Vec<f64> = dense_mm(&ax, store.get(w1).data(), 3, 2, 4)
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v + store.get(b1).data()[i % 4]).max(0.0))
            .collect();
        let ah = dense_mm(&dense_adj, &h, 3, 3, 4);
        let want: Vec<f64> = dense_mm(&ah, store.get(w2).data(), 3, 4, 3)
            .into_iter()
            .enumerate()
            .map(|(i, v)| v + store.get(b2).data()[i % 3])
            .collect();
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut store = ParamStore::new();
        let gcn = GcnEncoder::new(&mut store, "gcn", 3, 4, 2, &mut Rng::new(21));
        let mut rng = Rng::new(22);
        for _ in 0..10 {
            let n = 5;
            let mut edges = vec![];
            for v in 1..n {
                edges.push((rng.below(v), v));
            }
            edges.push((rng.below(n), rng.below(n)));
            let x: Vec<f64> = (0..n * 3).map(|_| rng.normal()).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            // Node i becomes node perm[i].
            let pedges: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
            let mut px = vec![0.0; n * 3];
            for i in 0..n {
                px[perm[i] * 3..perm[i] * 3 + 3].copy_from_slice(&x[i * 3..i * 3 + 3]);
            }
            let out = run(&store, &gcn, Tensor::new(vec![n, 3], x).unwrap(), normalized_adjacency(n, &edges).unwrap());
            let pout = run(&store, &gcn, Tensor::new(vec![n, 3], px).unwrap(), normalized_adjacency(n, &pedges).unwrap());
            for i in 0..n {
                for j in 0..2 {
                    assert!((out.data()[i * 2 + j] - pout.data()[perm[i] * 2 + j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn isolated_nodes_and_bad_edges() {
        let adj = normalized_adjacency(3, &[(0, 1), (0, 1), (2, 2)]).unwrap();
        let d = adj.to_dense();
        assert_eq!(d[2 * 3 + 2], 1.0);
        assert!(d.iter().all(|v| v.is_finite()));
        assert!(normalized_adjacency(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn batch_adjacency_is_block_diagonal() {
        let e1 = [(0, 1)];
        let e2: [(usize, usize); 0] = [];
        let adj = batch_adjacency([(2, &e1[..]), (1, &e2[..])]).unwrap();
        let d = adj.to_dense();
        assert_eq!(adj.dim(), 3);
        assert_eq!(d[2], 0.0);
        assert_eq!(d[8], 1.0);
        assert!((d[1] - 0.5).abs() < 1e-15);
    }
}
