use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Pooled encoder output for a batch: `Enc(Z)` per example.
#[derive(Clone, Debug)]
pub struct Representation {
    /// `[batch, dim]` masked mean of the per-position states.
    pub pooled: Var,
    /// Per-position states `[batch, positions, dim]` before pooling.
    pub states: Var,
    /// `Σ_t m_t` for each example.
    pub mask_mass: Vec<f64>,
}

/// `pooled = Σ_t m_t state_t / max(Σ_t m_t, 1)`.
pub fn pool_representation(tape: &mut Tape, states: Var, mask: Var) -> Result<Representation> {
    let pooled = tape.masked_mean(states, mask)?;
    let positions = *tape.shape(mask).last().unwrap_or(&1);
    let mask_mass = tape
        .value(mask)
        .data()
        .chunks(positions.max(1))
        .map(|c| c.iter().sum())
        .collect();
    Ok(Representation {
        pooled,
        states,
        mask_mass,
    })
}
