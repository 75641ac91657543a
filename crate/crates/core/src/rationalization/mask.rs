use crate::error::{Error, Result};
use crate::tensor::{gumbel_sample, Rng, Tape, Tensor, Var};

/// Binary selection over the positions of one example, with the relaxed
/// probabilities it was thresholded from.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub hard: Vec<bool>,
    pub soft: Vec<f64>,
}

impl Mask {
    /// Thresholds `soft` at 0.5; exact ties are not selected.
    pub fn from_soft(soft: Vec<f64>) -> Self {
        Self {
            hard: soft.iter().map(|&p| p > 0.5).collect(),
            soft,
        }
    }

    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    pub fn selected(&self) -> usize {
        self.hard.iter().filter(|&&m| m).count()
    }

    pub fn hard_values(&self) -> Vec<f64> {
        self.hard.iter().map(|&m| f64::from(u8::from(m))).collect()
    }
}

/// A batch of masks recorded on a tape.
#[derive(Clone, Debug)]
pub struct SampledMask {
    /// `[batch, positions]`, forward value `hard`, gradient into `soft`.
    pub mask: Var,
    pub soft: Var,
    pub hard: Tensor,
}

impl SampledMask {
    pub fn split(&self, tape: &Tape) -> Vec<Mask> {
        let l = *self.hard.shape().last().unwrap_or(&1);
        tape.value(self.soft)
            .data()
            .chunks(l.max(1))
            .zip(self.hard.data().chunks(l.max(1)))
            .map(|(s, h)| Mask {
                soft: s.to_vec(),
                hard: h.iter().map(|&v| v == 1.0).collect(),
            })
            .collect()
    }
}

/// Samples masks from extractor logits `[batch, positions, 2]` (index 0 is
/// "select"): `soft = softmax((logits + g) / tau)[0]`, `hard = soft > 0.5`.
/// With `noise = None` the Gumbel term is omitted.
pub fn sample_mask(tape: &mut Tape, logits: Var, noise: Option<&mut Rng>, temperature: f64) -> Result<SampledMask> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 3 || shape[2] != 2 {
        return Err(Error::shape("extract_mask", format!("expected [batch, positions, 2] logits, got {shape:?}")));
    }
    if shape[1] == 0 {
        return Err(Error::invalid("extract_mask", "no positions to mask"));
    }
    let perturbed = match noise {
        Some(rng) => {
            let g = tape.constant(gumbel_sample(rng, &shape));
            tape.add(logits, g)?
        }
        None => logits,
    };
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    let probs = tape.softmax(scaled, 2)?;
    let soft = tape.select(probs, 2, 0)?;
    let hard_data = tape.value(soft).data().iter().map(|&p| f64::from(u8::from(p > 0.5))).collect();
    let hard = Tensor::new(shape[..2].to_vec(), hard_data)?;
    let mask = tape.straight_through(soft, hard.clone())?;
    Ok(SampledMask { mask, soft, hard })
}

/// Evaluation-time mask: select exactly where the select logit wins.
pub fn deterministic_mask(logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 3 || shape[2] != 2 {
        return Err(Error::shape("extract_mask", format!("expected [batch, positions, 2] logits, got {shape:?}")));
    }
    let data = logits.data().chunks(2).map(|c| f64::from(u8::from(c[0] > c[1]))).collect();
    Tensor::new(shape[..2].to_vec(), data)
}

/// `λ1 |mean(m) - s| + λ2 Σ_t |m_t - m_{t-1}|` per row of `mask [batch, l]`,
/// averaged over the batch.
pub fn sparsity_regularizer(tape: &mut Tape, mask: Var, lambda1: f64, lambda2: f64, target: f64) -> Result<Var> {
    let shape = tape.shape(mask).to_vec();
    if shape.len() != 2 || shape[1] == 0 {
        return Err(Error::shape("sparsity_regularizer", format!("expected [batch, positions], got {shape:?}")));
    }
    let l = shape[1];
    let frac = tape.mean(mask, 1)?;
    let gap = tape.add_scalar(frac, -target);
    let gap = tape.abs(gap);
    let mut per_row = tape.scale(gap, lambda1);
    if l >= 2 {
        let next = tape.slice(mask, 1, 1, l)?;
        let prev = tape.slice(mask, 1, 0, l - 1)?;
        let diff = tape.sub(next, prev)?;
        let diff = tape.abs(diff);
        let tv = tape.sum(diff, 1)?;
        let tv = tape.scale(tv, lambda2);
        per_row = tape.add(per_row, tv)?;
    }
    tape.mean_all(per_row)
}

/// Scalar evaluation of the regularizer for one mask.
pub fn regularizer_value(mask: &[f64], lambda1: f64, lambda2: f64, target: f64) -> f64 {
    if mask.is_empty() {
        return lambda1 * target;
    }
    let frac = mask.iter().sum::<f64>() / mask.len() as f64;
    let tv: f64 = mask.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    lambda1 * (frac - target).abs() + lambda2 * tv
}
