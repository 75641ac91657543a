use super::init_uniform;
use crate::error::{Error, Result};
use crate::tensor::{Bound, ParamId, ParamStore, Rng, Tape, Tensor, Var};

/// Parameters of one recurrence direction. Gate blocks along the last axis of
/// the weights are ordered reset, update, candidate.
#[derive(Clone, Debug)]
struct Direction {
    w_input: ParamId,
    w_hidden: ParamId,
    b_input: ParamId,
    b_hidden: ParamId,
}

/// Single-layer bidirectional GRU.
///
/// For each direction, with `x` the input and `h` the previous state:
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r ∘ (h W_hn + b_hn))
/// h' = (1 - z) ∘ n + z ∘ h
/// ```
///
/// The output at each position is `[forward state ‖ backward state]`.
#[derive(Clone, Debug)]
pub struct GruEncoder {
    pub input_dim: usize,
    pub hidden: usize,
    forward: Direction,
    backward: Direction,
}

impl GruEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut direction = |name: &str| Direction {
            w_input: store.add(
                format!("{prefix}.{name}.w_input"),
                init_uniform(rng, &[input_dim, 3 * hidden], bound),
            ),
            w_hidden: store.add(
                format!("{prefix}.{name}.w_hidden"),
                init_uniform(rng, &[hidden, 3 * hidden], bound),
            ),
            b_input: store.add(
                format!("{prefix}.{name}.b_input"),
                init_uniform(rng, &[3 * hidden], bound),
            ),
            b_hidden: store.add(
                format!("{prefix}.{name}.b_hidden"),
                init_uniform(rng, &[3 * hidden], bound),
            ),
        };
        let forward = direction("fwd");
        let backward = direction("bwd");
        Self {
            input_dim,
            hidden,
            forward,
            backward,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    fn run(&self, tape: &mut Tape, bound: &Bound, dir: &Direction, inputs: Var, reverse: bool) -> Result<Vec<Var>> {
        let shape = tape.shape(inputs).to_vec();
        let (batch, len) = (shape[0], shape[1]);
        let h = self.hidden;
        let projected = tape.matmul(inputs, bound.var(dir.w_input))?;
        let projected = tape.add(projected, bound.var(dir.b_input))?;
        let mut state = tape.constant(Tensor::zeros(&[batch, h]));
        let mut states = vec![state; len];
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let gx = tape.select(projected, 1, t)?;
            let gh = tape.matmul(state, bound.var(dir.w_hidden))?;
            let gh = tape.add(gh, bound.var(dir.b_hidden))?;

            let xr = tape.slice(gx, 1, 0, h)?;
            let hr = tape.slice(gh, 1, 0, h)?;
            let r = tape.add(xr, hr)?;
            let r = tape.sigmoid(r);

            let xz = tape.slice(gx, 1, h, 2 * h)?;
            let hz = tape.slice(gh, 1, h, 2 * h)?;
            let z = tape.add(xz, hz)?;
            let z = tape.sigmoid(z);

            let xn = tape.slice(gx, 1, 2 * h, 3 * h)?;
            let hn = tape.slice(gh, 1, 2 * h, 3 * h)?;
            let gated = tape.mul(r, hn)?;
            let n = tape.add(xn, gated)?;
            let n = tape.tanh(n);

            // h' = n + z ∘ (h - n)
            let diff = tape.sub(state, n)?;
            let carry = tape.mul(z, diff)?;
            state = tape.add(n, carry)?;
            states[t] = state;
        }
        Ok(states)
    }

    /// `inputs [batch, len, input_dim]` to `[batch, len, 2 * hidden]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, inputs: Var) -> Result<Var> {
        let shape = tape.shape(inputs).to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim {
            return Err(Error::shape(
                "gru_forward",
                format!("expected [batch, len, {}], got {shape:?}", self.input_dim),
            ));
        }
        if shape[1] == 0 {
            return Err(Error::invalid("gru_forward", "empty sequence"));
        }
        let fwd = self.run(tape, bound, &self.forward, inputs, false)?;
        let bwd = self.run(tape, bound, &self.backward, inputs, true)?;
        let fwd = tape.stack(&fwd, 1)?;
        let bwd = tape.stack(&bwd, 1)?;
        tape.concat(&[fwd, bwd], 2)
    }
}
