use serde::Serialize;

use crate::error::{Error, Result};

/// Joint distribution over finite `(Y, R1, R2)`, stored row-major with `Y`
/// slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteJoint {
    dims: [usize; 3],
    p: Vec<f64>,
}

impl FiniteJoint {
    pub fn new(dims: [usize; 3], p: Vec<f64>) -> Result<Self> {
        if p.len() != dims.iter().product::<usize>() || p.is_empty() {
            return Err(Error::invalid(
                "mutual_information",
                format!("table has {} entries for dims {dims:?}", p.len()),
            ));
        }
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("mutual_information", "entries must be finite and non-negative"));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mutual_information", format!("table sums to {total}, not 1")));
        }
        Ok(Self { dims, p })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn get(&self, y: usize, r1: usize, r2: usize) -> f64 {
        let [_, a, b] = self.dims;
        self.p[(y * a + r1) * b + r2]
    }
}

/// Mutual information terms in nats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MutualInformation {
    pub y_r1: f64,
    pub y_r2: f64,
    pub y_r1_given_r2: f64,
    pub y_r2_given_r1: f64,
    pub y_r1r2: f64,
}

impl MutualInformation {
    /// `I(Y;R1,R2) < I(Y;R1) + I(Y;R2)` with margin `tol`.
    pub fn strictly_subadditive(&self, tol: f64) -> bool {
        self.y_r1r2 < self.y_r1 + self.y_r2 - tol
    }
}

fn term(pxyz: f64, num: f64, den: f64) -> f64 {
    if pxyz == 0.0 {
        0.0
    } else {
        pxyz * (pxyz * num / den).ln()
    }
}

/// Exact MI by summation over the table.
pub fn mutual_information(joint: &FiniteJoint) -> MutualInformation {
    let [ny, na, nb] = joint.dims;
    let mut py = vec![0.0; ny];
    let mut pa = vec![0.0; na];
    let mut pb = vec![0.0; nb];
    let mut pya = vec![0.0; ny * na];
    let mut pyb = vec![0.0; ny * nb];
    let mut pab = vec![0.0; na * nb];
    for y in 0..ny {
        for a in 0..na {
            for b in 0..nb {
                let v = joint.get(y, a, b);
                py[y] += v;
                pa[a] += v;
                pb[b] += v;
                pya[y * na + a] += v;
                pyb[y * nb + b] += v;
                pab[a * nb + b] += v;
            }
        }
    }
    let mut mi = MutualInformation {
        y_r1: 0.0,
        y_r2: 0.0,
        y_r1_given_r2: 0.0,
        y_r2_given_r1: 0.0,
        y_r1r2: 0.0,
    };
    for y in 0..ny {
        for a in 0..na {
            mi.y_r1 += term(pya[y * na + a], 1.0, py[y] * pa[a]);
        }
        for b in 0..nb {
            mi.y_r2 += term(pyb[y * nb + b], 1.0, py[y] * pb[b]);
        }
        for a in 0..na {
            for b in 0..nb {
                let v = joint.get(y, a, b);
                mi.y_r1r2 += term(v, 1.0, py[y] * pab[a * nb + b]);
                mi.y_r1_given_r2 += term(v, pb[b], pyb[y * nb + b] * pab[a * nb + b]);
                mi.y_r2_given_r1 += term(v, pa[a], pya[y * na + a] * pab[a * nb + b]);
            }
        }
    }
    mi
}

/// Uniform binary `Y` with `R1 = R2 = Y`: both parts carry all the
/// information, so their joint adds nothing.
pub fn redundant_joint() -> FiniteJoint {
    FiniteJoint::new([2, 2, 2], vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]).expect("valid table")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn independent_variables_have_zero_mi() {
        let (py, pa, pb) = ([0.3, 0.7], [0.2, 0.5, 0.3], [0.6, 0.4]);
        let mut p = vec![];
        for y in py {
            for a in pa {
                for b in pb {
                    p.push(y * a * b);
                }
            }
        }
        let mi = mutual_information(&FiniteJoint::new([2, 3, 2], p).unwrap());
        for v in [mi.y_r1, mi.y_r2, mi.y_r1_given_r2, mi.y_r2_given_r1, mi.y_r1r2] {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn redundant_parts_are_strictly_subadditive() {
        let mi = mutual_information(&redundant_joint());
        assert!((mi.y_r1 - LN_2).abs() < 1e-15);
        assert!((mi.y_r2 - LN_2).abs() < 1e-15);
        assert!((mi.y_r1r2 - LN_2).abs() < 1e-15);
        assert!(mi.y_r2_given_r1.abs() < 1e-15);
        assert!(mi.strictly_subadditive(0.1));
    }

    #[test]
    fn rejects_unnormalized_tables() {
        assert!(FiniteJoint::new([2, 1, 1], vec![0.5, 0.6]).is_err());
        assert!(FiniteJoint::new([2, 1, 1], vec![1.5, -0.5]).is_err());
        assert!(FiniteJoint::new([2, 2, 1], vec![1.0]).is_err());
    }

    #[test]
    fn chain_rule_and_non_negativity_on_random_tables() {
        let mut rng = Rng::new(6);
        for _ in 0..1000 {
            let dims = [2 + rng.below(2), 1 + rng.below(4), 1 + rng.below(4)];
            let n: usize = dims.iter().product();
            let mut p: Vec<f64> = (0..n)
                .map(|_| if rng.below(5) == 0 { 0.0 } else { rng.next_f64() })
                .collect();
            let total: f64 = p.iter().sum();
            if total == 0.0 {
                continue;
            }
            p.iter_mut().for_each(|v| *v /= total);
            let Ok(joint) = FiniteJoint::new(dims, p) else { continue };
            let mi = mutual_information(&joint);
            for v in [mi.y_r1, mi.y_r2, mi.y_r1_given_r2, mi.y_r2_given_r1, mi.y_r1r2] {
                assert!(v > -1e-12);
            }
            assert!((mi.y_r1r2 - (mi.y_r1 + mi.y_r2_given_r1)).abs() < 1e-12);
            assert!((mi.y_r1r2 - (mi.y_r2 + mi.y_r1_given_r2)).abs() < 1e-12);
        }
    }
}
