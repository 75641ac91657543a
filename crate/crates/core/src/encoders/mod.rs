//! Building blocks shared by the extractor and the predictor.
//!
//! Every layer registers its parameters in a caller-owned [`ParamStore`] and
//! runs its forward pass against the tape bindings of that store.
//!
//! [`ParamStore`]: crate::tensor::ParamStore

mod embedding;
mod gcn;
mod gru;
mod linear;
mod pool;

pub use embedding::EmbeddingTable;
pub use gcn::{batch_adjacency, normalized_adjacency, GcnEncoder};
pub use gru::GruEncoder;
pub use linear::Linear;
pub use pool::{pool_representation, Representation};

use crate::tensor::{Rng, Tensor};

/// Uniform initialization in `[-bound, bound]`.
pub(crate) fn init_uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (2.0 * rng.next_f64() - 1.0) * bound).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
