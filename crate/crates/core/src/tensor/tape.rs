//! Reverse-mode automatic differentiation over whole tensors.
//!
//! Every operation appends a node holding its forward value and enough
//! information to replay the chain rule. Nodes are only ever appended, so the
//! node list is already in topological order and backward is a single reverse
//! sweep.

use std::rc::Rc;

use super::kernels::{gemm, SparseMatrix};
use super::{split_axis, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    RowScale(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Scale(Var, f64),
    AddScalar(Var),
    ClampMin(Var, f64),
    Softmax(Var, usize),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    Concat(Vec<Var>, usize),
    Stack(Vec<Var>, usize),
    Slice(Var, usize, usize, usize),
    Select(Var, usize, usize),
    Reshape(Var),
    Embedding(Var, Vec<usize>),
    L2Norm(Var),
    MaskedMean(Var, Var),
    CrossEntropy(Var, Vec<usize>),
    StraightThrough(Var),
    Propagate(Var, Rc<SparseMatrix>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; `None` when no gradient reached it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of the loss w.r.t. `var`, zero-filled when none reached it.
    pub fn wrt(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// Records a computation and differentiates it once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

/// rhs must equal lhs or a trailing suffix of it (broadcast over leading dims).
fn broadcast_ok(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(Error::shape(
            op,
            format!("{sa:?} and {sb:?} (rhs must match trailing dims of lhs)"),
        ));
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Sums `g` (shape of the broadcast output) down to a length-`n` rhs.
fn reduce_broadcast(g: &[f64], n: usize, out: &mut [f64]) {
    for chunk in g.chunks(n) {
        add_into(out, chunk);
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut value = value;
        value.requires_grad = false;
        value.grad = None;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = &self.nodes[a.0].value;
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient flag follows `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    /// `a[..., k] x b[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let k = sb[0];
        let n = sb[1];
        let m = ta.numel() / k.max(1);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut data, false);
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        broadcast_ok(name, ta, tb)?;
        let n = tb.numel().max(1);
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % n]))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    /// Elementwise sum; `b` may broadcast over the leading dims of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Scales each row `x[..., :]` by `w[...]`. A zero weight yields an exact
    /// `+0.0` row regardless of the row contents.
    pub fn row_scale(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let sx = tx.shape();
        if sx.is_empty() || sx[..sx.len() - 1] != *tw.shape() {
            return Err(Error::shape(
                "row_scale",
                format!("{sx:?} rows vs weights {:?}", tw.shape()),
            ));
        }
        let d = sx[sx.len() - 1];
        let mut data = vec![0.0; tx.numel()];
        if d > 0 {
            for ((dst, src), &m) in data
                .chunks_mut(d)
                .zip(tx.data().chunks(d))
                .zip(tw.data())
            {
                if m != 0.0 {
                    dst.iter_mut().zip(src).for_each(|(o, &v)| *o = m * v);
                }
            }
        }
        let out = Tensor::new(sx.to_vec(), data)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(out, Op::RowScale(x, w), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |v| v + c)
    }

    /// `max(a, floor)`; the gradient is cut where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |v| v.max(floor))
    }

    /// Softmax along `axis`, computed with the per-slice maximum subtracted.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        check_axis("softmax", t.shape(), axis)?;
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let x = t.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (x[idx(j)] - max).exp();
                    y[idx(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    y[idx(j)] /= sum;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), y)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Softmax(a, axis), rg))
    }

    fn reduce_axis(&mut self, name: &'static str, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        check_axis(name, t.shape(), axis)?;
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let x = t.data();
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &x[(o * n + j) * inner..(o * n + j + 1) * inner];
                add_into(&mut y[o * inner..(o + 1) * inner], src);
            }
        }
        if mean && n > 0 {
            y.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(shape, y)?;
        let op = if mean { Op::Mean(a, axis) } else { Op::Sum(a, axis) };
        let rg = self.rg(&[a]);
        Ok(self.push(out, op, rg))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("sum", a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("mean", a, axis, true)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Mean of every element, as a scalar.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.numel() == 0 {
            return Err(Error::shape("mean_all", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::MeanAll(a), rg))
    }

    /// Concatenates along an existing axis.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.nodes[first.0].value.shape().to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = &self.nodes[p.0].value;
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack", "no inputs"))?;
        let base = self.nodes[first.0].value.shape().to_vec();
        if axis > base.len() {
            return Err(Error::shape("stack", format!("axis {axis} for {base:?}")));
        }
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            if s != base.as_slice() {
                return Err(Error::shape("stack", format!("{base:?} vs {s:?}")));
            }
        }
        let mut shape = base.clone();
        shape.insert(axis, parts.len());
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis..].iter().product();
        let mut data = Vec::with_capacity(outer * parts.len() * inner);
        for o in 0..outer {
            for p in parts {
                data.extend_from_slice(&self.nodes[p.0].value.data()[o * inner..(o + 1) * inner]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Stack(parts.to_vec(), axis), rg))
    }

    /// `a[..., start..end, ...]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        check_axis("slice", t.shape(), axis)?;
        if start > end || end > t.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} on axis {axis} of {:?}", t.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let w = end - start;
        let mut data = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            data.extend_from_slice(&t.data()[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = w;
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Slice(a, axis, start, end), rg))
    }

    /// `a[..., index, ...]` with `axis` removed.
    pub fn select(&mut self, a: Var, axis: usize, index: usize) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        check_axis("select", t.shape(), axis)?;
        if index >= t.shape()[axis] {
            return Err(Error::shape(
                "select",
                format!("index {index} on axis {axis} of {:?}", t.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            data.extend_from_slice(&t.data()[(o * n + index) * inner..(o * n + index + 1) * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Select(a, axis, index), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", t.shape())));
        }
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Gathers rows of `table [vocab, d]`; output shape is `id_shape + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], id_shape: &[usize]) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        if t.ndim() != 2 {
            return Err(Error::shape("embedding_lookup", format!("table {:?}", t.shape())));
        }
        if id_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::shape(
                "embedding_lookup",
                format!("{} ids for id shape {id_shape:?}", ids.len()),
            ));
        }
        let (vocab, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::TokenOutOfRange { id, vocab });
            }
            data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let mut shape = id_shape.to_vec();
        shape.push(d);
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(out, Op::Embedding(table, ids.to_vec()), rg))
    }

    /// Vector 2-norm over the last axis.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.ndim() == 0 {
            return Err(Error::shape("l2_norm", "scalar input"));
        }
        let d = t.shape()[t.ndim() - 1];
        let data = if d == 0 {
            vec![0.0; t.numel()]
        } else {
            t.data()
                .chunks(d)
                .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect()
        };
        let out = Tensor::new(t.shape()[..t.ndim() - 1].to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::L2Norm(a), rg))
    }

    /// `states [..., L, H]` pooled with `weights [..., L]`:
    /// `Σ_t w_t s_t / max(Σ_t w_t, 1)`.
    pub fn masked_mean(&mut self, states: Var, weights: Var) -> Result<Var> {
        let (ts, tw) = (&self.nodes[states.0].value, &self.nodes[weights.0].value);
        let ss = ts.shape();
        if ss.len() < 2 || ss[..ss.len() - 1] != *tw.shape() {
            return Err(Error::shape(
                "masked_mean",
                format!("states {ss:?} vs weights {:?}", tw.shape()),
            ));
        }
        let h = ss[ss.len() - 1];
        let l = ss[ss.len() - 2];
        let groups = tw.numel() / l.max(1);
        let mut data = vec![0.0; groups * h];
        for b in 0..groups {
            let w = &tw.data()[b * l..(b + 1) * l];
            let denom = w.iter().sum::<f64>().max(1.0);
            let dst = &mut data[b * h..(b + 1) * h];
            for (t, &m) in w.iter().enumerate() {
                if m != 0.0 {
                    let src = &ts.data()[(b * l + t) * h..(b * l + t + 1) * h];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += m * s);
                }
            }
            dst.iter_mut().for_each(|v| *v /= denom);
        }
        let mut shape = ss[..ss.len() - 2].to_vec();
        shape.push(h);
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[states, weights]);
        Ok(self.push(out, Op::MaskedMean(states, weights), rg))
    }

    /// Per-row cross-entropy of `logits [B, C]` against integer labels; returns `[B]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = &self.nodes[logits.0].value;
        if t.ndim() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::shape(
                "cross_entropy_with_logits",
                format!("logits {:?} vs {} labels", t.shape(), labels.len()),
            ));
        }
        let c = t.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::invalid(
                "cross_entropy_with_logits",
                format!("label {bad} with {c} classes"),
            ));
        }
        let data = t
            .data()
            .chunks(c)
            .zip(labels)
            .map(|(row, &y)| {
                // ln_1p over the non-max terms keeps precision when the
                // loss is tiny.
                let (arg, max) = row
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
                let rest: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != arg)
                    .map(|(_, v)| (v - max).exp())
                    .sum();
                (max - row[y]) + rest.ln_1p()
            })
            .collect();
        let out = Tensor::new(vec![labels.len()], data)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(out, Op::CrossEntropy(logits, labels.to_vec()), rg))
    }

    /// Forward value `hard`, gradient routed to `soft` unchanged.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Result<Var> {
        same_shape("straight_through", &self.nodes[soft.0].value, &hard)?;
        let rg = self.rg(&[soft]);
        Ok(self.push(hard, Op::StraightThrough(soft), rg))
    }

    /// `adj * x` for `x [N, F]` and a constant sparse `adj [N, N]`.
    pub fn propagate(&mut self, x: Var, adj: Rc<SparseMatrix>) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.ndim() != 2 || t.shape()[0] != adj.dim() {
            return Err(Error::shape(
                "propagate",
                format!("features {:?} vs adjacency {}x{}", t.shape(), adj.dim(), adj.dim()),
            ));
        }
        let width = t.shape()[1];
        let mut data = vec![0.0; t.numel()];
        adj.mul_dense(t.data(), width, &mut data);
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Propagate(x, adj), rg))
    }

    /// Differentiates the scalar `loss` w.r.t. every gradient-tracking node.
    /// A tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::EmptyTape);
        }
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate_grad(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate_grad(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let y = &nodes[i].value;
        // Accumulates into the gradient buffer of `v` when it tracks gradients.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.numel()]);
            f(buf);
        };
        let val = |v: Var| &nodes[v.0].value;

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let k = tb.shape()[0];
                let n = tb.shape()[1];
                let m = ta.numel() / k.max(1);
                acc(*a, &mut |ga| gemm(m, n, k, g, false, tb.data(), true, ga, true));
                acc(*b, &mut |gb| gemm(k, m, n, ta.data(), true, g, false, gb, true));
            }
            Op::Add(a, b) => {
                let n = val(*b).numel().max(1);
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| reduce_broadcast(g, n, gb));
            }
            Op::Sub(a, b) => {
                let n = val(*b).numel().max(1);
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| {
                    for chunk in g.chunks(n) {
                        gb.iter_mut().zip(chunk).for_each(|(d, s)| *d -= s);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let n = tb.numel().max(1);
                acc(*a, &mut |ga| {
                    for (j, (d, gi)) in ga.iter_mut().zip(g).enumerate() {
                        *d += gi * tb.data()[j % n];
                    }
                });
                acc(*b, &mut |gb| {
                    for (j, (gi, xa)) in g.iter().zip(ta.data()).enumerate() {
                        gb[j % n] += gi * xa;
                    }
                });
            }
            Op::RowScale(x, w) => {
                let (tx, tw) = (val(*x), val(*w));
                let d = tx.shape()[tx.ndim() - 1];
                if d == 0 {
                    return;
                }
                acc(*x, &mut |gx| {
                    for ((dst, gr), &m) in gx.chunks_mut(d).zip(g.chunks(d)).zip(tw.data()) {
                        dst.iter_mut().zip(gr).for_each(|(o, &v)| *o += m * v);
                    }
                });
                acc(*w, &mut |gw| {
                    for ((dst, gr), xr) in gw.iter_mut().zip(g.chunks(d)).zip(tx.data().chunks(d)) {
                        *dst += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((d, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    *d += gi * yi * (1.0 - yi);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((d, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    *d += gi * (1.0 - yi * yi);
                }
            }),
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((d, gi), xi) in ga.iter_mut().zip(g).zip(x.data()) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                })
            }
            Op::Exp(a) => acc(*a, &mut |ga| {
                for ((d, gi), yi) in ga.iter_mut().zip(g).zip(y.data()) {
                    *d += gi * yi;
                }
            }),
            Op::Log(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((d, gi), xi) in ga.iter_mut().zip(g).zip(x.data()) {
                        *d += gi / xi;
                    }
                })
            }
            Op::Abs(a) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((d, gi), xi) in ga.iter_mut().zip(g).zip(x.data()) {
                        if *xi > 0.0 {
                            *d += gi;
                        } else if *xi < 0.0 {
                            *d -= gi;
                        }
                    }
                })
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi);
            }),
            Op::AddScalar(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::ClampMin(a, floor) => {
                let x = val(*a);
                acc(*a, &mut |ga| {
                    for ((d, gi), xi) in ga.iter_mut().zip(g).zip(x.data()) {
                        if *xi >= *floor {
                            *d += gi;
                        }
                    }
                })
            }
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = split_axis(y.shape(), *axis);
                let yd = y.data();
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for k in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + k;
                            let dot: f64 = (0..n).map(|j| g[idx(j)] * yd[idx(j)]).sum();
                            for j in 0..n {
                                ga[idx(j)] += yd[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                })
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let x = val(*a);
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                let scale = match nodes[i].op {
                    Op::Mean(..) if n > 0 => 1.0 / n as f64,
                    _ => 1.0,
                };
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..n {
                            let dst = &mut ga[(o * n + j) * inner..(o * n + j + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
                        }
                    }
                })
            }
            Op::SumAll(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::MeanAll(a) => {
                let n = val(*a).numel() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = split_axis(y.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).shape()[*axis];
                    acc(*p, &mut |gp| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + w) * inner];
                            add_into(&mut gp[o * w * inner..(o + 1) * w * inner], src);
                        }
                    });
                    offset += w;
                }
            }
            Op::Stack(parts, axis) => {
                let base = val(parts[0]).shape();
                let outer: usize = base[..*axis].iter().product();
                let inner: usize = base[*axis..].iter().product();
                let count = parts.len();
                for (j, p) in parts.iter().enumerate() {
                    acc(*p, &mut |gp| {
                        for o in 0..outer {
                            let src = &g[(o * count + j) * inner..(o * count + j + 1) * inner];
                            add_into(&mut gp[o * inner..(o + 1) * inner], src);
                        }
                    });
                }
            }
            Op::Slice(a, axis, start, end) => {
                let x = val(*a);
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                let w = end - start;
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        let src = &g[o * w * inner..(o + 1) * w * inner];
                        add_into(&mut ga[(o * n + start) * inner..(o * n + end) * inner], src);
                    }
                })
            }
            Op::Select(a, axis, index) => {
                let x = val(*a);
                let (outer, n, inner) = split_axis(x.shape(), *axis);
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        add_into(&mut ga[(o * n + index) * inner..(o * n + index + 1) * inner], src);
                    }
                })
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Embedding(table, ids) => {
                let d = val(*table).shape()[1];
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                })
            }
            Op::L2Norm(a) => {
                let x = val(*a);
                let d = x.shape()[x.ndim() - 1];
                if d == 0 {
                    return;
                }
                acc(*a, &mut |ga| {
                    for (r, (dst, src)) in ga.chunks_mut(d).zip(x.data().chunks(d)).enumerate() {
                        let norm = y.data()[r];
                        if norm > 0.0 {
                            let s = g[r] / norm;
                            dst.iter_mut().zip(src).for_each(|(o, v)| *o += s * v);
                        }
                    }
                })
            }
            Op::MaskedMean(states, weights) => {
                let (ts, tw) = (val(*states), val(*weights));
                let ss = ts.shape();
                let h = ss[ss.len() - 1];
                let l = ss[ss.len() - 2];
                let groups = tw.numel() / l.max(1);
                let sums: Vec<f64> = tw.data().chunks(l.max(1)).map(|w| w.iter().sum()).collect();
                acc(*states, &mut |gs| {
                    for b in 0..groups {
                        let denom = sums[b].max(1.0);
                        let gb = &g[b * h..(b + 1) * h];
                        for t in 0..l {
                            let m = tw.data()[b * l + t];
                            if m != 0.0 {
                                let dst = &mut gs[(b * l + t) * h..(b * l + t + 1) * h];
                                dst.iter_mut().zip(gb).for_each(|(o, gi)| *o += m * gi / denom);
                            }
                        }
                    }
                });
                acc(*weights, &mut |gw| {
                    for b in 0..groups {
                        let denom = sums[b].max(1.0);
                        let gb = &g[b * h..(b + 1) * h];
                        let pooled = &y.data()[b * h..(b + 1) * h];
                        // The denominator only depends on the weights above the floor of 1.
                        let g_dot_pooled: f64 = if sums[b] > 1.0 {
                            gb.iter().zip(pooled).map(|(a, c)| a * c).sum()
                        } else {
                            0.0
                        };
                        for t in 0..l {
                            let s = &ts.data()[(b * l + t) * h..(b * l + t + 1) * h];
                            let g_dot_s: f64 = gb.iter().zip(s).map(|(a, c)| a * c).sum();
                            gw[b * l + t] += (g_dot_s - g_dot_pooled) / denom;
                        }
                    }
                });
            }
            Op::CrossEntropy(logits, labels) => {
                let x = val(*logits);
                let c = x.shape()[1];
                acc(*logits, &mut |gl| {
                    for (r, (dst, row)) in gl.chunks_mut(c).zip(x.data().chunks(c)).enumerate() {
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for (j, (o, v)) in dst.iter_mut().zip(row).enumerate() {
                            let p = (v - max).exp() / z;
                            let target = if j == labels[r] { 1.0 } else { 0.0 };
                            *o += g[r] * (p - target);
                        }
                    }
                })
            }
            Op::StraightThrough(soft) => acc(*soft, &mut |gs| add_into(gs, g)),
            Op::Propagate(x, adj) => {
                let width = val(*x).shape()[1];
                acc(*x, &mut |gx| adj.mul_transpose_acc(g, width, gx))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_of_two_logits() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![2.0, 0.0]));
        let y = t.softmax(x, 0).unwrap();
        assert!(close(t.value(y).data(), &[0.8807971, 0.1192029], 1e-7));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let y = t.cross_entropy(x, &[0]).unwrap();
        assert!((t.value(y).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn l2_norm_of_ones() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 1.0, 1.0]));
        let y = t.l2_norm(x).unwrap();
        assert!((t.value(y).item() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_all(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn grad_of_norm_is_unit_vector() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![3.0, 4.0]));
        let n = t.l2_norm(x).unwrap();
        let g = t.backward(n).unwrap();
        assert!(close(g.get(x).unwrap(), &[0.6, 0.8], 1e-15));
    }

    #[test]
    fn norm_grad_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![0.0, 0.0]));
        let n = t.l2_norm(x).unwrap();
        let g = t.backward(n).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_nonscalar_and_reuse() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let y = t.scale(x, 2.0);
        assert!(matches!(t.backward(y), Err(Error::NonScalarLoss(_))));
        let s = t.sum_all(y);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::TapeConsumed)));
    }

    #[test]
    fn backward_on_empty_tape_fails() {
        let mut t = Tape::new();
        assert!(matches!(t.backward(Var(0)), Err(Error::EmptyTape)));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = t.constant(Tensor::zeros(&[2]));
        let err = t.add(a, c).unwrap_err().to_string();
        assert!(err.contains("add"), "{err}");
    }

    #[test]
    fn stable_softmax_and_ce_for_large_logits() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![2, 3], vec![1e3, -1e3, 0.0, -1e3, -1e3, 1e3]).unwrap());
        let s = t.softmax(x, 1).unwrap();
        assert!(t.value(s).is_finite());
        let ce = t.cross_entropy(x, &[1, 2]).unwrap();
        assert!(t.value(ce).is_finite());
        let loss = t.sum_all(ce);
        let g = t.backward(loss).unwrap();
        assert!(g.get(x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn row_scale_zero_weight_gives_positive_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![2, 2], vec![-1.0, f64::MAX, 3.0, 4.0]).unwrap());
        let w = t.constant(Tensor::vector(vec![0.0, 2.0]));
        let y = t.row_scale(x, w).unwrap();
        let d = t.value(y).data();
        assert_eq!(d[0].to_bits(), 0.0f64.to_bits());
        assert_eq!(d[1].to_bits(), 0.0f64.to_bits());
        assert_eq!(&d[2..], &[6.0, 8.0]);
    }

    #[test]
    fn straight_through_forwards_hard_backwards_soft() {
        let mut t = Tape::new();
        let soft = t.param(Tensor::vector(vec![0.7, 0.2]));
        let st = t
            .straight_through(soft, Tensor::vector(vec![1.0, 0.0]))
            .unwrap();
        assert_eq!(t.value(st).data(), &[1.0, 0.0]);
        let w = t.constant(Tensor::vector(vec![3.0, 5.0]));
        let p = t.mul(st, w).unwrap();
        let loss = t.sum_all(p);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(soft).unwrap(), &[3.0, 5.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let d = t.detach(x);
        let y = t.mul(d, x).unwrap();
        let loss = t.sum_all(y);
        let g = t.backward(loss).unwrap();
        // Only the non-detached factor contributes: d(d*x)/dx = d.
        assert_eq!(g.get(x).unwrap(), &[1.0, 2.0]);
        assert!(g.get(d).is_none());
    }

    #[test]
    fn masked_mean_all_zero_weights_is_zero() {
        let mut t = Tape::new();
        let s = t.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = t.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let p = t.masked_mean(s, w).unwrap();
        assert_eq!(t.value(p).data(), &[0.0, 0.0]);
        assert_eq!(t.value(p).shape(), &[1, 2]);
    }

    #[test]
    fn embedding_rejects_out_of_vocab() {
        let mut t = Tape::new();
        let table = t.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            t.embedding(table, &[0, 3], &[2]),
            Err(Error::TokenOutOfRange { id: 3, vocab: 3 })
        ));
    }
}
