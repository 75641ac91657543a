use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{Example, Input};
use crate::error::{Error, Result};
use crate::rationalization::{batches, Batch, Game};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub rho: f64,
    pub acc: f64,
    pub ce: f64,
    pub norm: f64,
}

/// Predictor behaviour as the fraction of intact gold content varies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegradationCurve {
    pub points: Vec<CurvePoint>,
    /// Examples left out because they have no non-rationale positions.
    pub skipped: usize,
}

impl DegradationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho,acc,ce,norm\n");
        for p in &self.points {
            writeln!(out, "{:.1},{},{},{}", p.rho, p.acc, p.ce, p.norm).expect("write to string");
        }
        out
    }
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Per-example draws shared by every grid point, so the kept gold positions
/// are nested as `rho` grows.
struct Plan {
    /// Gold positions in the order they are kept.
    order: Vec<usize>,
    /// Non-rationale source position for each gold position.
    source: Vec<usize>,
}

fn plan(gold: &[bool], rng: &mut Rng) -> Option<Plan> {
    let others: Vec<usize> = (0..gold.len()).filter(|&t| !gold[t]).collect();
    if others.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..gold.len()).filter(|&t| gold[t]).collect();
    rng.shuffle(&mut order);
    let source = (0..gold.len()).map(|_| others[rng.below(others.len())]).collect();
    Some(Plan { order, source })
}

fn degrade(ex: &Example, plan: &Plan, keep: usize) -> Example {
    let mut out = ex.clone();
    for &t in &plan.order[keep..] {
        let s = plan.source[t];
        match &mut out.input {
            Input::Text { tokens } => tokens[t] = tokens[s],
            Input::Graph { features, .. } => features[t] = features[s].clone(),
        }
    }
    out
}

/// Replaces a growing share of gold-rationale content with content copied
/// from the same example's non-rationale positions and feeds the gold mask to
/// the predictor. At `rho` the first `round(rho * k)` of a random ordering of
/// the `k` gold positions stay intact.
pub fn degradation_sweep(game: &Game, test: &[Example], grid: &[f64], rng: &Rng) -> Result<DegradationCurve> {
    if grid.iter().any(|r| !(0.0..=1.0).contains(r)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("degradation_sweep", "grid must be strictly increasing within [0, 1]"));
    }
    let mut kept = vec![];
    let mut plans = vec![];
    let mut skipped = 0;
    for (i, ex) in test.iter().enumerate() {
        let gold = ex
            .rationale
            .as_ref()
            .ok_or_else(|| Error::invalid("degradation_sweep", format!("example {i} has no gold rationale")))?;
        match plan(gold, &mut rng.split(i as u64)) {
            Some(p) => {
                kept.push(ex);
                plans.push(p);
            }
            None => skipped += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid("degradation_sweep", "no example has non-rationale positions"));
    }
    let mut points = vec![];
    for &rho in grid {
        let degraded: Vec<Example> = kept
            .iter()
            .zip(&plans)
            .map(|(ex, p)| degrade(ex, p, (rho * p.order.len() as f64).round() as usize))
            .collect();
        let (mut correct, mut ce, mut norm) = (0usize, 0.0, 0.0);
        for idx in batches(&degraded, game.config.batch_size, None) {
            let refs: Vec<&Example> = idx.iter().map(|&i| &degraded[i]).collect();
            let batch = Batch::new(&refs)?;
            let gold = batch.gold.as_ref().expect("gold checked above");
            let mask = Tensor::new(
                vec![batch.size, batch.positions],
                gold.iter().map(|&g| f64::from(u8::from(g))).collect(),
            )?;
            let o = game.predict_with_mask(&batch, &mask)?;
            correct += o.predictions.iter().zip(&batch.labels).filter(|(a, b)| a == b).count();
            ce += o.losses.iter().sum::<f64>();
            norm += o.norms.iter().sum::<f64>();
        }
        let n = degraded.len() as f64;
        points.push(CurvePoint {
            rho,
            acc: correct as f64 / n,
            ce: ce / n,
            norm: norm / n,
        });
    }
    Ok(DegradationCurve { points, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kept_sets_are_nested_and_sources_are_outside_gold() {
        let gold = [false, true, true, false, true, true, false];
        let ex = Example::text(vec![10, 1, 2, 11, 3, 4, 12], 1, Some(gold.to_vec())).unwrap();
        let p = plan(&gold, &mut Rng::new(9)).unwrap();
        let mut prev_intact = 0;
        for keep in 0..=4 {
            let d = degrade(&ex, &p, keep);
            let toks = d.tokens().unwrap();
            let intact = (0..7).filter(|&t| gold[t] && toks[t] == ex.tokens().unwrap()[t]).count();
            assert_eq!(intact, keep);
            assert!(intact >= prev_intact);
            prev_intact = intact;
            for t in 0..7 {
                if !gold[t] {
                    assert_eq!(toks[t], ex.tokens().unwrap()[t]);
                } else if toks[t] != ex.tokens().unwrap()[t] {
                    assert!([10, 11, 12].contains(&toks[t]));
                }
            }
        }
    }

    #[test]
    fn all_gold_example_has_no_plan() {
        assert!(plan(&[true, true], &mut Rng::new(1)).is_none());
    }

    #[test]
    fn csv_layout() {
        let c = DegradationCurve {
            points: vec![CurvePoint {
                rho: 0.0,
                acc: 0.5,
                ce: 0.75,
                norm: 1.25,
            }],
            skipped: 0,
        };
        assert_eq!(c.to_csv(), "rho,acc,ce,norm\n0.0,0.5,0.75,1.25\n");
        assert_eq!(default_grid().len(), 11);
    }
}
