//! Labeled examples, synthetic corpora with planted rationales, and JSONL I/O.

mod graph;
mod jsonl;
mod text;

pub use graph::{gen_graphs, GraphGenSpec, Motif};
pub use jsonl::{read_jsonl, write_jsonl};
pub use text::{gen_text, TextGenSpec, TokenRange};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Input {
    Text {
        tokens: Vec<usize>,
    },
    Graph {
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        /// One feature row per node.
        features: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExampleKind {
    Text,
    Graph,
}

/// One labeled instance with an optional gold rationale over its positions
/// (tokens or nodes).
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Input,
    pub label: usize,
    pub rationale: Option<Vec<bool>>,
}

impl Example {
    pub fn text(tokens: Vec<usize>, label: usize, rationale: Option<Vec<bool>>) -> Result<Self> {
        let ex = Self {
            input: Input::Text { tokens },
            label,
            rationale,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn kind(&self) -> ExampleKind {
        match self.input {
            Input::Text { .. } => ExampleKind::Text,
            Input::Graph { .. } => ExampleKind::Graph,
        }
    }

    /// Number of maskable positions.
    pub fn len(&self) -> usize {
        match &self.input {
            Input::Text { tokens } => tokens.len(),
            Input::Graph { num_nodes, .. } => *num_nodes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tokens(&self) -> Option<&[usize]> {
        match &self.input {
            Input::Text { tokens } => Some(tokens),
            Input::Graph { .. } => None,
        }
    }

    /// Feature width for graphs; `None` for text.
    pub fn feature_dim(&self) -> Option<usize> {
        match &self.input {
            Input::Graph { features, .. } => Some(features.first().map_or(0, Vec::len)),
            Input::Text { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Config(format!("label must be 0 or 1, got {}", self.label)));
        }
        if let Some(r) = &self.rationale {
            if r.len() != self.len() {
                return Err(Error::Config(format!(
                    "rationale length {} does not match {} positions",
                    r.len(),
                    self.len()
                )));
            }
        }
        if let Input::Graph {
            num_nodes,
            edges,
            features,
        } = &self.input
        {
            if features.len() != *num_nodes {
                return Err(Error::Config(format!(
                    "{} feature rows for {num_nodes} nodes",
                    features.len()
                )));
            }
            let width = features.first().map_or(0, Vec::len);
            if features.iter().any(|f| f.len() != width) {
                return Err(Error::Config("feature rows have unequal widths".into()));
            }
            if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= *num_nodes || v >= *num_nodes) {
                return Err(Error::Config(format!(
                    "edge ({u}, {v}) outside 0..{num_nodes}"
                )));
            }
        }
        Ok(())
    }
}

/// Train/dev/test partition of a corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    pub fn named(&self) -> [(&'static str, &[Example]); 3] {
        [("train", &self.train), ("dev", &self.dev), ("test", &self.test)]
    }
}
