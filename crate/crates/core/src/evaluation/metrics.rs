use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::rationalization::{batches, Batch, Game};

/// Selection and accuracy statistics over a split. `p`, `r` and `f1` are
/// absent when gold rationales are missing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenMetrics {
    pub s: f64,
    pub acc: f64,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub f1: Option<f64>,
}

/// Evaluation summary of a split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub examples: usize,
    pub s: f64,
    pub acc: f64,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub f1: Option<f64>,
    /// Mean predictor cross-entropy.
    pub pred_loss: f64,
    /// Mean `‖Enc(Z)‖₂`.
    pub mean_norm: f64,
}

/// Micro-averaged precision, recall and F1 over all positions; undefined
/// ratios are reported as 0.
pub fn token_metrics(
    pred_masks: &[Vec<bool>],
    gold_masks: Option<&[Vec<bool>]>,
    labels: &[usize],
    preds: &[usize],
) -> Result<TokenMetrics> {
    if labels.len() != preds.len() || labels.len() != pred_masks.len() {
        return Err(Error::invalid(
            "token_metrics",
            format!("{} masks, {} labels, {} predictions", pred_masks.len(), labels.len(), preds.len()),
        ));
    }
    let total: usize = pred_masks.iter().map(Vec::len).sum();
    let selected: usize = pred_masks.iter().flatten().filter(|&&m| m).count();
    let correct = labels.iter().zip(preds).filter(|(a, b)| a == b).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut p, mut r, mut f1) = (None, None, None);
    if let Some(gold) = gold_masks {
        if gold.len() != pred_masks.len() {
            return Err(Error::invalid("token_metrics", "gold and predicted mask counts differ"));
        }
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (i, (pm, gm)) in pred_masks.iter().zip(gold).enumerate() {
            if pm.len() != gm.len() {
                return Err(Error::invalid(
                    "token_metrics",
                    format!("example {i}: mask length {} vs gold length {}", pm.len(), gm.len()),
                ));
            }
            for (&a, &g) in pm.iter().zip(gm) {
                match (a, g) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let (pv, rv) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
        p = Some(pv);
        r = Some(rv);
        f1 = Some(if pv + rv > 0.0 { 2.0 * pv * rv / (pv + rv) } else { 0.0 });
    }
    Ok(TokenMetrics {
        s: ratio(selected, total),
        acc: ratio(correct, labels.len()),
        p,
        r,
        f1,
    })
}

/// Noise-free output of the game on one example.
#[derive(Clone, Debug, PartialEq)]
pub struct ExamplePrediction {
    pub mask: Vec<bool>,
    pub prediction: usize,
    pub loss: f64,
    pub norm: f64,
}

/// Deterministic predictions for every example, in input order.
pub fn predict_examples(game: &Game, examples: &[Example]) -> Result<Vec<ExamplePrediction>> {
    let mut out: Vec<Option<ExamplePrediction>> = vec![None; examples.len()];
    for idx in batches(examples, game.config.batch_size, None) {
        let refs: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
        let batch = Batch::new(&refs)?;
        let o = game.predict(&batch)?;
        let masks = o.mask.data().chunks(batch.positions);
        for (j, (&i, m)) in idx.iter().zip(masks).enumerate() {
            out[i] = Some(ExamplePrediction {
                mask: m.iter().map(|&v| v == 1.0).collect(),
                prediction: o.predictions[j],
                loss: o.losses[j],
                norm: o.norms[j],
            });
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every example is batched")).collect())
}

/// Metrics of the game's deterministic rationales on `examples`.
pub fn evaluate(game: &Game, examples: &[Example]) -> Result<MetricsRecord> {
    if examples.is_empty() {
        return Err(Error::invalid("evaluate", "split is empty"));
    }
    let preds = predict_examples(game, examples)?;
    let masks: Vec<Vec<bool>> = preds.iter().map(|p| p.mask.clone()).collect();
    let gold: Option<Vec<Vec<bool>>> = examples.iter().map(|e| e.rationale.clone()).collect();
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let predicted: Vec<usize> = preds.iter().map(|p| p.prediction).collect();
    let t = token_metrics(&masks, gold.as_deref(), &labels, &predicted)?;
    let n = examples.len() as f64;
    Ok(MetricsRecord {
        examples: examples.len(),
        s: t.s,
        acc: t.acc,
        p: t.p,
        r: t.r,
        f1: t.f1,
        pred_loss: preds.iter().map(|p| p.loss).sum::<f64>() / n,
        mean_norm: preds.iter().map(|p| p.norm).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn bools(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn named_cases() {
        let gold = vec![bools(&[1, 1, 0, 0])];
        let m = token_metrics(&[bools(&[1, 0, 1, 0])], Some(&gold), &[1], &[1]).unwrap();
        assert_eq!((m.p, m.r, m.f1, m.s, m.acc), (Some(0.5), Some(0.5), Some(0.5), 0.5, 1.0));
        let m = token_metrics(&gold, Some(&gold), &[1], &[0]).unwrap();
        assert_eq!((m.p, m.r, m.f1, m.acc), (Some(1.0), Some(1.0), Some(1.0), 0.0));
        let m = token_metrics(&[bools(&[0, 0, 0, 0])], Some(&gold), &[1], &[1]).unwrap();
        assert_eq!((m.p, m.r, m.f1, m.s), (Some(0.0), Some(0.0), Some(0.0), 0.0));
    }

    #[test]
    fn missing_gold_leaves_overlap_absent() {
        let m = token_metrics(&[bools(&[1, 0])], None, &[0], &[0]).unwrap();
        assert_eq!((m.p, m.r, m.f1), (None, None, None));
        assert_eq!((m.s, m.acc), (0.5, 1.0));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let gold = vec![bools(&[1, 1, 0])];
        assert!(token_metrics(&[bools(&[1, 0])], Some(&gold), &[0], &[0]).is_err());
    }

    #[test]
    fn bounds_and_harmonic_mean_on_random_masks() {
        let mut rng = Rng::new(3);
        for _ in 0..500 {
            let n = 1 + rng.below(5);
            let mut pm = vec![];
            let mut gm = vec![];
            for _ in 0..n {
                let l = 1 + rng.below(10);
                pm.push((0..l).map(|_| rng.below(2) == 1).collect::<Vec<_>>());
                gm.push((0..l).map(|_| rng.below(3) == 0).collect::<Vec<_>>());
            }
            let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
            let m = token_metrics(&pm, Some(&gm), &labels, &preds).unwrap();
            let (p, r, f1) = (m.p.unwrap(), m.r.unwrap(), m.f1.unwrap());
            for v in [m.s, m.acc, p, r, f1] {
                assert!((0.0..=1.0).contains(&v));
            }
            if p + r > 0.0 {
                assert!((f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
            } else {
                assert_eq!(f1, 0.0);
            }
        }
    }
}
