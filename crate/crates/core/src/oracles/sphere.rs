use std::f64::consts::FRAC_PI_2;

use super::CheckReport;
use crate::tensor::Rng;

/// Angle between two vectors in `[0, π]`.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}

fn sphere_point(rng: &mut Rng, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthogonalityReport {
    pub p: usize,
    pub trials: usize,
    pub epsilon: f64,
    /// Empirical `Pr(|Θ - π/2| >= ε)`.
    pub tail: f64,
    pub mean_abs_cos: f64,
}

impl OrthogonalityReport {
    /// Mean `|cos Θ|` stays within `3 / √p`.
    pub fn passed(&self) -> bool {
        self.mean_abs_cos <= 3.0 / (self.p as f64).sqrt()
    }

    pub fn report(&self) -> CheckReport {
        CheckReport {
            name: "orthogonality".into(),
            passed: self.passed(),
            detail: vec![
                format!(
                    "p = {}, {} pairs, eps = {}: Pr(|theta - pi/2| >= eps) = {:.5}",
                    self.p, self.trials, self.epsilon, self.tail
                ),
                format!(
                    "mean |cos theta| = {:.5} (bound 3/sqrt(p) = {:.5})",
                    self.mean_abs_cos,
                    3.0 / (self.p as f64).sqrt()
                ),
            ],
        }
    }
}

/// Angles between independent uniform points on the unit sphere in `R^p`.
pub fn orthogonality_check(p: usize, trials: usize, epsilon: f64, rng: &mut Rng) -> OrthogonalityReport {
    let (mut hits, mut cos_sum) = (0usize, 0.0);
    for _ in 0..trials {
        let a = sphere_point(rng, p);
        let b = sphere_point(rng, p);
        let theta = angle(&a, &b);
        hits += usize::from((theta - FRAC_PI_2).abs() >= epsilon);
        cos_sum += theta.cos().abs();
    }
    OrthogonalityReport {
        p,
        trials,
        epsilon,
        tail: hits as f64 / trials as f64,
        mean_abs_cos: cos_sum / trials as f64,
    }
}

/// Tail probabilities for each dimension and whether they never increase.
pub fn orthogonality_tail_monotone(dims: &[usize], trials: usize, epsilon: f64, rng: &Rng) -> (bool, Vec<f64>) {
    let tails: Vec<f64> = dims
        .iter()
        .enumerate()
        .map(|(i, &p)| orthogonality_check(p, trials, epsilon, &mut rng.split(i as u64)).tail)
        .collect();
    let monotone = tails.windows(2).all(|w| w[1] <= w[0]) && tails.first() > tails.last();
    (monotone, tails)
}
