use super::CheckReport;
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearityReport {
    /// `(k_a, k_b, ‖x_a W‖ / ‖x_b W‖)` for every ordered pair with `k_b > 0`.
    pub ratios: Vec<(usize, usize, f64)>,
    /// Largest relative error of the ratio against `k_a / k_b`.
    pub max_error: f64,
    /// Same statistic once noise coordinates are attached; reported only.
    pub noisy_max_error: f64,
    pub skipped_zero: bool,
}

impl LinearityReport {
    pub fn passed(&self) -> bool {
        self.max_error <= 1e-12
    }

    pub fn report(&self) -> CheckReport {
        let mut detail = vec![
            format!("{} ratio pairs, max relative error {:.3e}", self.ratios.len(), self.max_error),
            format!("with noise coordinates: max relative error {:.3e} (not asserted)", self.noisy_max_error),
        ];
        if self.skipped_zero {
            detail.push("k = 0 gives a zero norm; ratios against it are skipped".into());
        }
        CheckReport {
            name: "norm_linearity".into(),
            passed: self.passed(),
            detail,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn vec_mat(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let n = w[0].len();
    let mut out = vec![0.0; n];
    for (xi, row) in x.iter().zip(w) {
        for j in 0..n {
            out[j] += xi * row[j];
        }
    }
    out
}

fn max_ratio_error(norms: &[(usize, f64)]) -> (f64, Vec<(usize, usize, f64)>) {
    let mut worst = 0.0f64;
    let mut ratios = vec![];
    for &(ka, na) in norms {
        for &(kb, nb) in norms {
            if kb == 0 {
                continue;
            }
            let ratio = na / nb;
            let want = ka as f64 / kb as f64;
            worst = worst.max((ratio - want).abs() / want.max(f64::MIN_POSITIVE));
            ratios.push((ka, kb, ratio));
        }
    }
    (worst, ratios)
}

/// `W` (`m x n`) repeats one row `c` in every row, so `x_k = (1,..,1,0,..,0)`
/// with `k` ones maps to `k c` and norm ratios equal count ratios. The noisy
/// variant appends `m` coordinates with random values whose rows are
/// orthogonal to `c`.
pub fn norm_linearity_check(m: usize, n: usize, k_values: &[usize], rng: &mut Rng) -> LinearityReport {
    assert!(k_values.iter().all(|&k| k <= m), "every k must be at most m");
    let c: Vec<f64> = (0..n).map(|_| 0.5 + rng.next_f64()).collect();
    let w: Vec<Vec<f64>> = vec![c.clone(); m];
    let cc: f64 = c.iter().map(|v| v * v).sum();
    let noise_rows: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let r: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let proj = r.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / cc;
            r.iter().zip(&c).map(|(a, b)| a - proj * b).collect()
        })
        .collect();
    let mut w_noisy = w.clone();
    w_noisy.extend(noise_rows);

    let mut clean = vec![];
    let mut noisy = vec![];
    for &k in k_values {
        let mut x = vec![0.0; m];
        x[..k].fill(1.0);
        clean.push((k, norm(&vec_mat(&x, &w))));
        x.extend((0..m).map(|_| 0.3 * rng.normal()));
        noisy.push((k, norm(&vec_mat(&x, &w_noisy))));
    }
    let (max_error, ratios) = max_ratio_error(&clean);
    let nonzero: Vec<(usize, f64)> = noisy.into_iter().filter(|&(k, _)| k > 0).collect();
    let (noisy_max_error, _) = max_ratio_error(&nonzero);
    LinearityReport {
        ratios,
        max_error,
        noisy_max_error,
        skipped_zero: k_values.contains(&0),
    }
}
