use super::init_uniform;
use crate::error::Result;
use crate::tensor::{Bound, ParamId, ParamStore, Rng, Tape, Var};

/// Token embedding table of shape `vocab_size x dim`.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub vocab_size: usize,
    pub dim: usize,
    weight: ParamId,
}

impl EmbeddingTable {
    pub fn new(store: &mut ParamStore, prefix: &str, vocab_size: usize, dim: usize, rng: &mut Rng) -> Self {
        let weight = store.add(
            format!("{prefix}.weight"),
            init_uniform(rng, &[vocab_size, dim], 1.0),
        );
        Self {
            vocab_size,
            dim,
            weight,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    /// Looks up `ids` laid out as `id_shape`; output is `id_shape + [dim]`.
    pub fn lookup(&self, tape: &mut Tape, bound: &Bound, ids: &[usize], id_shape: &[usize]) -> Result<Var> {
        tape.embedding(bound.var(self.weight), ids, id_shape)
    }

    /// Rationale candidate rows: `mask[t] * embedding(ids[t])`. `mask` has
    /// shape `id_shape`; a zero mask entry yields an exact zero row.
    pub fn embed_and_mask(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ids: &[usize],
        id_shape: &[usize],
        mask: Var,
    ) -> Result<Var> {
        let emb = self.lookup(tape, bound, ids, id_shape)?;
        tape.row_scale(emb, mask)
    }
}
