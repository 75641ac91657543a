use super::CheckReport;
use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, AdamState, ParamStore, Rng, Tape, Tensor};

/// `H(Y|Z)` in nats for `Z` uniform over the rows of `table`, each row
/// `[P(Y=0|z), P(Y=1|z)]`.
pub fn conditional_entropy(table: &[[f64; 2]]) -> f64 {
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    table.iter().map(|r| h(r[0]) + h(r[1])).sum::<f64>() / table.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyReport {
    pub rows: usize,
    pub samples: usize,
    pub fitted_ce: f64,
    pub entropy: f64,
    pub passed: bool,
}

impl EntropyReport {
    pub fn line(&self) -> String {
        format!(
            "{} z values, {} samples: fitted CE {:.4} vs H(Y|Z) {:.4} (|diff| {:.4})",
            self.rows,
            self.samples,
            self.fitted_ce,
            self.entropy,
            (self.fitted_ce - self.entropy).abs()
        )
    }

    pub fn report(&self) -> CheckReport {
        CheckReport {
            name: "entropy_identity".into(),
            passed: self.passed,
            detail: vec![self.line()],
        }
    }
}

/// Samples `(z, y)` pairs, fits one pair of logits per `z` by full-batch Adam
/// on cross-entropy and compares the fitted loss with `H(Y|Z)`.
pub fn entropy_identity_check(table: &[[f64; 2]], samples: usize, steps: usize, rng: &mut Rng) -> Result<EntropyReport> {
    if table.is_empty() || samples == 0 {
        return Err(Error::invalid("entropy_identity_check", "empty table or no samples"));
    }
    for (z, row) in table.iter().enumerate() {
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row[0] + row[1] - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "entropy_identity_check",
                format!("row {z} = {row:?} is not a distribution"),
            ));
        }
    }
    let z_count = table.len();
    let mut counts = vec![0.0; z_count * 2];
    for _ in 0..samples {
        let z = rng.below(z_count);
        let y = usize::from(rng.next_f64() < table[z][1]);
        counts[z * 2 + y] += 1.0;
    }
    let weights = Tensor::new(vec![z_count, 2], counts.iter().map(|c| c / samples as f64).collect())?;

    let mut params = ParamStore::new();
    let logits = params.add("logits", Tensor::zeros(&[z_count, 2]));
    let mut adam = AdamState::new(AdamConfig::with_lr(0.1), &params);
    let mut fitted = f64::NAN;
    for _ in 0..=steps {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let probs = tape.softmax(bound.var(logits), 1)?;
        let logp = tape.log(probs);
        let w = tape.constant(weights.clone());
        let weighted = tape.mul(logp, w)?;
        let total = tape.sum_all(weighted);
        let loss = tape.scale(total, -1.0);
        fitted = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        params.accumulate(&bound, &grads)?;
        adam.step(&mut params)?;
    }
    let entropy = conditional_entropy(table);
    Ok(EntropyReport {
        rows: z_count,
        samples,
        fitted_ce: fitted,
        entropy,
        passed: (fitted - entropy).abs() <= 0.02,
    })
}
