//! Single LSTM cell used by every recurrent component.

use std::rc::Rc;

use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;

/// LSTM cell with input, forget, cell and output gates stacked into one
/// `[4h, in]` input map and one `[4h, h]` recurrent map.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden: usize) -> Self {
        LstmCell { prefix: prefix.into(), input_dim, hidden }
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        params.insert(
            format!("{}.w_ih", self.prefix),
            Tensor::uniform_init(vec![4 * self.hidden, self.input_dim], self.input_dim, rng),
        );
        params.insert(
            format!("{}.w_hh", self.prefix),
            Tensor::uniform_init(vec![4 * self.hidden, self.hidden], self.hidden, rng),
        );
        params.insert(format!("{}.b", self.prefix), Tensor::zeros(vec![4 * self.hidden]));
    }

    pub fn zero_state(&self, tape: &Rc<Tape>) -> (Value, Value) {
        let z = vec![0.0; self.hidden];
        (tape.vector(&z), tape.vector(&z))
    }

    /// One step; returns the next `(h, c)`.
    pub fn step(&self, bound: &BoundParams, x: &Value, h: &Value, c: &Value) -> (Value, Value) {
        let w_ih = bound.get(&format!("{}.w_ih", self.prefix));
        let w_hh = bound.get(&format!("{}.w_hh", self.prefix));
        let b = bound.get(&format!("{}.b", self.prefix));
        let gates = w_ih.matvec(x).add(&w_hh.matvec(h)).add(b);
        let hdim = self.hidden;
        let i = gates.slice(0, hdim).sigmoid();
        let f = gates.slice(hdim, hdim).sigmoid();
        let g = gates.slice(2 * hdim, hdim).tanh();
        let o = gates.slice(3 * hdim, hdim).sigmoid();
        let c_next = f.mul(c).add(&i.mul(&g));
        let h_next = o.mul(&c_next.tanh());
        (h_next, c_next)
    }

    /// Run over a sequence of inputs, returning the hidden state at each step.
    pub fn run(&self, bound: &BoundParams, tape: &Rc<Tape>, inputs: &[Value]) -> Vec<Value> {
        let (mut h, mut c) = self.zero_state(tape);
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (h2, c2) = self.step(bound, x, &h, &c);
            h = h2;
            c = c2;
            out.push(h.clone());
        }
        out
    }

    /// Tape-free step in plain `f64`, for discrete reference paths and
    /// fixed-parameter inference.
    pub fn step_f64(&self, params: &Params, x: &[f64], h: &mut Vec<f64>, c: &mut Vec<f64>) {
        use crate::tensor::f64math::{add_assign, matvec, sigmoid};
        let w_ih = params.get(&format!("{}.w_ih", self.prefix));
        let w_hh = params.get(&format!("{}.w_hh", self.prefix));
        let b = params.get(&format!("{}.b", self.prefix));
        let mut gates = matvec(w_ih, x);
        add_assign(&mut gates, &matvec(w_hh, h));
        add_assign(&mut gates, b.data());
        let hd = self.hidden;
        let mut c2 = vec![0.0; hd];
        let mut h2 = vec![0.0; hd];
        for j in 0..hd {
            let i_g = sigmoid(gates[j]);
            let f_g = sigmoid(gates[hd + j]);
            let g_g = gates[2 * hd + j].tanh();
            let o_g = sigmoid(gates[3 * hd + j]);
            c2[j] = f_g * c[j] + i_g * g_g;
            h2[j] = o_g * c2[j].tanh();
        }
        *h = h2;
        *c = c2;
    }

    pub fn run_f64(&self, params: &Params, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            self.step_f64(params, x, &mut h, &mut c);
            out.push(h.clone());
        }
        out
    }
}
