use super::ObjectiveKind;
use crate::encoders::Representation;
use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Mean cross-entropy of classifier `logits [batch, classes]`.
pub fn predictor_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let ce = tape.cross_entropy(logits, labels)?;
    tape.mean_all(ce)
}

/// Extractor objective recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ExtractorLoss {
    pub loss: Var,
    /// Examples whose representation norm fell below the floor.
    pub clamped: usize,
}

/// MMI: `CE + Ω`; N2R: `-log max(‖Enc(Z)‖, floor) + Ω`; MMI_N2R: both terms
/// with `Ω` added once. Terms are averaged over the batch.
pub fn extractor_loss(
    tape: &mut Tape,
    objective: ObjectiveKind,
    repr: &Representation,
    logits: Var,
    labels: &[usize],
    omega: Var,
    norm_floor: f64,
) -> Result<ExtractorLoss> {
    let mut loss = omega;
    let mut clamped = 0;
    if objective.uses_cross_entropy() {
        let ce = predictor_loss(tape, logits, labels)?;
        loss = tape.add(loss, ce)?;
    }
    if objective.uses_norm() {
        let norm = tape.l2_norm(repr.pooled)?;
        clamped = tape.value(norm).data().iter().filter(|&&n| n < norm_floor).count();
        let norm = tape.clamp_min(norm, norm_floor);
        let log = tape.log(norm);
        let mean = tape.mean_all(log)?;
        let neg = tape.scale(mean, -1.0);
        loss = tape.add(loss, neg)?;
    }
    Ok(ExtractorLoss { loss, clamped })
}
