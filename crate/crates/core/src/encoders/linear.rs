use super::init_uniform;
use crate::error::Result;
use crate::tensor::{Bound, ParamId, ParamStore, Rng, Tape, Var};

/// Affine map `x W + b` applied over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub input_dim: usize,
    pub output_dim: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, input_dim: usize, output_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        let weight = store.add(
            format!("{prefix}.weight"),
            init_uniform(rng, &[input_dim, output_dim], bound),
        );
        let bias = store.add(format!("{prefix}.bias"), init_uniform(rng, &[output_dim], bound));
        Self {
            input_dim,
            output_dim,
            weight,
            bias,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(self.weight))?;
        tape.add(y, bound.var(self.bias))
    }
}
