//! Central finite-difference checks for every differentiable tape operation.
//!
//! Each case builds a small graph from random inputs, reduces the output to a
//! scalar with a fixed random weighting, and compares the tape gradient of
//! every input against `(f(x + h) - f(x - h)) / 2h`. Relative error is
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`.
//!
//! `straight_through` and `detach` are excluded: their gradients are
//! deliberate surrogates that do not match the forward function.

use std::rc::Rc;

use super::{Rng, SparseMatrix, Tape, Tensor, Var};
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

type Builder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// A graph over random inputs to be differentiated.
pub struct Case {
    pub inputs: Vec<Tensor>,
    build: Builder,
}

impl Case {
    pub fn new(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Self {
        Self {
            inputs,
            build: Box::new(build),
        }
    }
}

/// Outcome for one operation kind across all of its random instances.
#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn forward(case: &Case, inputs: &[Tensor]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

fn weighted(out: &Tensor, weights: &[f64]) -> f64 {
    out.data().iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Largest relative error between tape and finite-difference gradients.
pub fn check_case(case: &Case, rng: &mut Rng) -> Result<f64> {
    let out = forward(case, &case.inputs)?;
    let weights: Vec<f64> = (0..out.numel()).map(|_| rng.normal()).collect();

    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = (case.build)(&mut tape, &vars)?;
    let w = tape.constant(Tensor::new(out.shape().to_vec(), weights.clone())?);
    let prod = tape.mul(y, w)?;
    let loss = tape.sum_all(prod);
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var, case.inputs[k].numel());
        for i in 0..case.inputs[k].numel() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (weighted(&forward(case, &plus)?, &weights)
                - weighted(&forward(case, &minus)?, &weights))
                / (2.0 * STEP);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Values in ±[0.1, 1.1], away from the kinks of relu/abs.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = 0.1 + rng.next_f64();
            if rng.below(2) == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| lo + (hi - lo) * rng.next_f64()).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn dim(rng: &mut Rng) -> usize {
    1 + rng.below(4)
}

type Generator = fn(&mut Rng) -> Case;

/// Every checked operation with its random-instance generator.
pub fn op_generators() -> Vec<(&'static str, Generator)> {
    vec![
        ("matmul", |r| {
            let (m, k, n) = (dim(r), dim(r), dim(r));
            let lead = if r.below(2) == 0 { vec![m] } else { vec![dim(r), m] };
            let mut sa = lead.clone();
            sa.push(k);
            Case::new(vec![random_tensor(r, &sa), random_tensor(r, &[k, n])], |t, v| t.matmul(v[0], v[1]))
        }),
        ("add", |r| {
            let s = [dim(r), dim(r)];
            let rhs: Vec<usize> = if r.below(2) == 0 { s.to_vec() } else { vec![s[1]] };
            Case::new(vec![random_tensor(r, &s), random_tensor(r, &rhs)], |t, v| t.add(v[0], v[1]))
        }),
        ("sub", |r| {
            let s = [dim(r), dim(r)];
            let rhs: Vec<usize> = if r.below(2) == 0 { s.to_vec() } else { vec![s[1]] };
            Case::new(vec![random_tensor(r, &s), random_tensor(r, &rhs)], |t, v| t.sub(v[0], v[1]))
        }),
        ("mul", |r| {
            let s = [dim(r), dim(r), dim(r)];
            let rhs: Vec<usize> = match r.below(3) {
                0 => s.to_vec(),
                1 => s[1..].to_vec(),
                _ => vec![s[2]],
            };
            Case::new(vec![random_tensor(r, &s), random_tensor(r, &rhs)], |t, v| t.mul(v[0], v[1]))
        }),
        ("row_scale", |r| {
            let (b, l, d) = (dim(r), dim(r), dim(r));
            Case::new(
                vec![random_tensor(r, &[b, l, d]), away_from_zero(r, &[b, l])],
                |t, v| t.row_scale(v[0], v[1]),
            )
        }),
        ("sigmoid", |r| {
            let s = [dim(r), dim(r)];
            Case::new(vec![random_tensor(r, &s)], |t, v| Ok(t.sigmoid(v[0])))
        }),
        ("tanh", |r| {
            let s = [dim(r), dim(r)];
            Case::new(vec![random_tensor(r, &s)], |t, v| Ok(t.tanh(v[0])))
        }),
        ("relu", |r| {
            let s = [dim(r), dim(r)];
            Case::new(vec![away_from_zero(r, &s)], |t, v| Ok(t.relu(v[0])))
        }),
        ("exp", |r| {
            let s = [dim(r), dim(r)];
            Case::new(vec![random_tensor(r, &s)], |t, v| Ok(t.exp(v[0])))
        }),
        ("log", |r| {
            let s = [dim(r), dim(r)];
            Case::new(vec![uniform(r, &s, 0.5, 2.0)], |t, v| Ok(t.log(v[0])))
        }),
        ("abs", |r| {
            let s = [dim(r), dim(r)];
            Case::new(vec![away_from_zero(r, &s)], |t, v| Ok(t.abs(v[0])))
        }),
        ("scale", |r| {
            let c = r.normal();
            Case::new(vec![{ let s = [dim(r)]; random_tensor(r, &s) }], move |t, v| Ok(t.scale(v[0], c)))
        }),
        ("add_scalar", |r| {
            let c = r.normal();
            Case::new(vec![{ let s = [dim(r)]; random_tensor(r, &s) }], move |t, v| Ok(t.add_scalar(v[0], c)))
        }),
        ("clamp_min", |r| {
            // Inputs straddle the floor at 0 but stay at least 0.1 away from it.
            Case::new(vec![{ let s = [dim(r), dim(r)]; away_from_zero(r, &s) }], |t, v| Ok(t.clamp_min(v[0], 0.0)))
        }),
        ("softmax", |r| {
            let s = [dim(r), dim(r), dim(r)];
            let axis = r.below(3);
            Case::new(vec![random_tensor(r, &s)], move |t, v| t.softmax(v[0], axis))
        }),
        ("sum", |r| {
            let s = [dim(r), dim(r), dim(r)];
            let axis = r.below(3);
            Case::new(vec![random_tensor(r, &s)], move |t, v| t.sum(v[0], axis))
        }),
        ("mean", |r| {
            let s = [dim(r), dim(r), dim(r)];
            let axis = r.below(3);
            Case::new(vec![random_tensor(r, &s)], move |t, v| t.mean(v[0], axis))
        }),
        ("sum_all", |r| {
            Case::new(vec![{ let s = [dim(r), dim(r)]; random_tensor(r, &s) }], |t, v| Ok(t.sum_all(v[0])))
        }),
        ("mean_all", |r| {
            Case::new(vec![{ let s = [dim(r), dim(r)]; random_tensor(r, &s) }], |t, v| t.mean_all(v[0]))
        }),
        ("concat", |r| {
            let axis = r.below(2);
            let mut s1 = vec![dim(r), dim(r)];
            let mut s2 = s1.clone();
            s1[axis] = dim(r);
            s2[axis] = dim(r);
            Case::new(vec![random_tensor(r, &s1), random_tensor(r, &s2)], move |t, v| {
                t.concat(&[v[0], v[1]], axis)
            })
        }),
        ("stack", |r| {
            let s = [dim(r), dim(r)];
            let axis = r.below(3);
            Case::new(
                vec![random_tensor(r, &s), random_tensor(r, &s), random_tensor(r, &s)],
                move |t, v| t.stack(v, axis),
            )
        }),
        ("slice", |r| {
            let s = [dim(r) + 1, dim(r) + 1];
            let axis = r.below(2);
            let start = r.below(s[axis]);
            let end = start + 1 + r.below(s[axis] - start);
            Case::new(vec![random_tensor(r, &s)], move |t, v| t.slice(v[0], axis, start, end))
        }),
        ("select", |r| {
            let s = [dim(r), dim(r), dim(r)];
            let axis = r.below(3);
            let index = r.below(s[axis]);
            Case::new(vec![random_tensor(r, &s)], move |t, v| t.select(v[0], axis, index))
        }),
        ("reshape", |r| {
            let (a, b) = (dim(r), dim(r));
            Case::new(vec![random_tensor(r, &[a, b])], move |t, v| {
                let flat = t.reshape(v[0], &[a * b])?;
                // Chain a nonlinearity so the check sees positions, not a pure copy.
                let y = t.tanh(flat);
                t.reshape(y, &[b, a])
            })
        }),
        ("embedding_lookup", |r| {
            let (vocab, d) = (dim(r) + 1, dim(r));
            let (b, l) = (dim(r), dim(r));
            let ids: Vec<usize> = (0..b * l).map(|_| r.below(vocab)).collect();
            Case::new(vec![random_tensor(r, &[vocab, d])], move |t, v| t.embedding(v[0], &ids, &[b, l]))
        }),
        ("l2_norm", |r| {
            Case::new(vec![{ let s = [dim(r), dim(r)]; away_from_zero(r, &s) }], |t, v| t.l2_norm(v[0]))
        }),
        ("masked_mean", |r| {
            let (b, l, h) = (dim(r), dim(r) + 1, dim(r));
            // Either every weight sum is well above 1 or well below it.
            let weights = if r.below(2) == 0 {
                uniform(r, &[b, l], 0.8, 1.0)
            } else {
                uniform(r, &[b, l], 0.05, 0.8 / l as f64)
            };
            Case::new(vec![random_tensor(r, &[b, l, h]), weights], |t, v| t.masked_mean(v[0], v[1]))
        }),
        ("cross_entropy_with_logits", |r| {
            let (b, c) = (dim(r), dim(r) + 1);
            let labels: Vec<usize> = (0..b).map(|_| r.below(c)).collect();
            Case::new(vec![random_tensor(r, &[b, c])], move |t, v| t.cross_entropy(v[0], &labels))
        }),
        ("propagate", |r| {
            let n = dim(r) + 1;
            let mut trips = vec![];
            for i in 0..n {
                for j in 0..n {
                    if r.below(2) == 0 {
                        trips.push((i, j, r.normal()));
                    }
                }
            }
            let adj = Rc::new(SparseMatrix::from_triplets(n, &trips).unwrap());
            Case::new(vec![{ let s = [n, dim(r)]; random_tensor(r, &s) }], move |t, v| t.propagate(v[0], adj.clone()))
        }),
    ]
}

/// A random chain of up to five smooth, shape-preserving ops on two inputs.
pub fn random_dag(rng: &mut Rng) -> Case {
    let shape = [dim(rng), dim(rng)];
    let ops: Vec<usize> = (0..1 + rng.below(5)).map(|_| rng.below(8)).collect();
    let scales: Vec<f64> = (0..ops.len()).map(|_| rng.normal()).collect();
    Case::new(
        vec![random_tensor(rng, &shape), random_tensor(rng, &shape)],
        move |t, v| {
            let (mut x, other) = (v[0], v[1]);
            for (op, c) in ops.iter().zip(&scales) {
                x = match op {
                    0 => t.add(x, other)?,
                    1 => t.mul(x, other)?,
                    2 => t.sigmoid(x),
                    3 => t.tanh(x),
                    4 => t.softmax(x, 1)?,
                    5 => t.scale(x, *c),
                    6 => t.sub(other, x)?,
                    _ => {
                        let s = t.sigmoid(x);
                        t.log(s)
                    }
                };
            }
            Ok(x)
        },
    )
}

/// Runs `instances` random cases per operation kind plus as many random DAGs.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<OpReport>> {
    let mut reports = vec![];
    for (k, (name, generator)) in op_generators().into_iter().enumerate() {
        let mut rng = Rng::with_stream(seed, k as u64);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let case = generator(&mut rng);
            worst = worst.max(check_case(&case, &mut rng)?);
        }
        reports.push(OpReport {
            op: name,
            instances,
            max_rel_error: worst,
        });
    }
    let mut rng = Rng::with_stream(seed, 1_000);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let case = random_dag(&mut rng);
        worst = worst.max(check_case(&case, &mut rng)?);
    }
    reports.push(OpReport {
        op: "random_dag",
        instances,
        max_rel_error: worst,
    });
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for report in run_suite(17, 5).unwrap() {
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn a_wrong_gradient_is_detected() {
        let mut rng = Rng::new(1);
        let case = Case::new(vec![Tensor::vector(vec![0.3, -0.2])], |t, v| {
            // Forward is |x| but the surrogate gradient is the identity, which
            // disagrees with d|x|/dx on the negative entry.
            let hard = Tensor::vector(t.value(v[0]).data().iter().map(|x| x.abs()).collect());
            t.straight_through(v[0], hard)
        });
        assert!(check_case(&case, &mut rng).unwrap() > TOLERANCE);
    }
}
