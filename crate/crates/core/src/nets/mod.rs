//! Feature networks, inference-network architectures, joint
//! parameterizations and the label language model.

mod feature;
mod labellm;
mod lstm;
mod pair;
mod tagger;

pub use feature::FeatureNet;
pub use labellm::{Direction, LabelLM};
pub use lstm::LstmCell;
pub use pair::{InferenceNetPair, PairKind, StackedHead};
pub use tagger::{InferenceArch, InferenceNet};

use std::rc::Rc;

use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;

/// Affine map `W x + b` with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear { prefix: prefix.into(), in_dim, out_dim }
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        params.insert(
            format!("{}.w", self.prefix),
            Tensor::uniform_init(vec![self.out_dim, self.in_dim], self.in_dim, rng),
        );
        params.insert(format!("{}.b", self.prefix), Tensor::zeros(vec![self.out_dim]));
    }

    pub fn forward(&self, bound: &BoundParams, x: &Value) -> Value {
        let w = bound.get(&format!("{}.w", self.prefix));
        let b = bound.get(&format!("{}.b", self.prefix));
        w.matvec(x).add(b)
    }
}

/// Stack per-position simplex rows produced by a tagger into a `[T, L]`
/// matrix value.
pub fn stack_sequence(rows: &[Value]) -> Value {
    Value::stack_rows(rows)
}

/// Mirror a relaxed sequence onto a tape as constant rows.
pub fn const_rows(tape: &Rc<Tape>, rows: &[Vec<f64>]) -> Vec<Value> {
    rows.iter().map(|r| tape.vector(r)).collect()
}
