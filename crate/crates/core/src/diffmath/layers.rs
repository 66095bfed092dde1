use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Single-layer feed-forward transform `act(W·x + b)`.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

impl Ffn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), out_dim, in_dim, rng);
        let bias = store.add_zeros(format!("{name}.bias"), vec![out_dim]);
        Self {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.value(x).len();
        if n != self.in_dim {
            return Err(Error::Dimension(format!(
                "ffn expects input of {} values, got {n}",
                self.in_dim
            )));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let wx = tape.matvec(w, x);
        let z = tape.add(wx, b);
        Ok(match self.activation {
            Activation::Identity => z,
            Activation::Tanh => tape.tanh(z),
        })
    }

    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.vector(x.to_vec());
        let y = self.forward(&mut tape, store, xv)?;
        Ok(tape.data(y).to_vec())
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(W_z·[h; x] + b_z)
/// r  = σ(W_r·[h; x] + b_r)
/// h̃  = tanh(W_h·[r ⊙ h; x] + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub b_h: ParamId,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let cols = hidden + input;
        let mut gate = |g: &str, rng: &mut R| {
            (
                store.add_xavier(format!("{name}.w_{g}"), hidden, cols, rng),
                store.add_zeros(format!("{name}.b_{g}"), vec![hidden]),
            )
        };
        let (w_z, b_z) = gate("z", rng);
        let (w_r, b_r) = gate("r", rng);
        let (w_h, b_h) = gate("h", rng);
        Self {
            w_z,
            b_z,
            w_r,
            b_r,
            w_h,
            b_h,
            input,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, h: Var, x: Var) -> Result<Var> {
        let (hn, xn) = (tape.value(h).len(), tape.value(x).len());
        if hn != self.hidden || xn != self.input {
            return Err(Error::Dimension(format!(
                "gru cell ({} hidden, {} input) got h of {hn} and x of {xn}",
                self.hidden, self.input
            )));
        }
        let hx = tape.concat(&[h, x]);
        let z = self.gate(tape, store, self.w_z, self.b_z, hx);
        let z = tape.sigmoid(z);
        let r = self.gate(tape, store, self.w_r, self.b_r, hx);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let rhx = tape.concat(&[rh, x]);
        let cand = self.gate(tape, store, self.w_h, self.b_h, rhx);
        let cand = tape.tanh(cand);
        let keep = tape.one_minus(z);
        let carried = tape.mul(keep, h);
        let fresh = tape.mul(z, cand);
        Ok(tape.add(carried, fresh))
    }

    fn gate(&self, tape: &mut Tape, store: &ParamStore, w: ParamId, b: ParamId, x: Var) -> Var {
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        let wx = tape.matvec(w, x);
        tape.add(wx, b)
    }

    /// One step on plain tensors.
    pub fn forward(&self, store: &ParamStore, h: &Tensor, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let xv = tape.constant(x.clone());
        let out = self.step(&mut tape, store, hv, xv)?;
        tape.check()?;
        Ok(tape.value(out).clone())
    }
}
