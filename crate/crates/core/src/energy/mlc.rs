//! Multi-label classification energy.
//!
//! `E(x, y) = E_loc + E_lab` on label vectors `y` in the unit hypercube:
//! a per-label linear score against an MLP feature representation of `x`,
//! plus a label-interaction term `c2 . g(C1 y)` that scores `y` independent
//! of the input. The nonlinearity `g` is a ReLU.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nets::Linear;
use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::{Tape, Value};
use crate::tensor::{f64math, Tensor};

#[derive(Clone, Debug)]
pub struct MlcEnergy {
    pub prefix: String,
    pub num_labels: usize,
    pub input_dim: usize,
    pub feature_hidden: usize,
    pub label_hidden: usize,
    feat: Linear,
}

impl MlcEnergy {
    pub fn new(
        prefix: impl Into<String>,
        num_labels: usize,
        input_dim: usize,
        feature_hidden: usize,
        label_hidden: usize,
    ) -> Self {
        let prefix = prefix.into();
        MlcEnergy {
            feat: Linear::new(format!("{prefix}.feat"), input_dim, feature_hidden),
            prefix,
            num_labels,
            input_dim,
            feature_hidden,
            label_hidden,
        }
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        self.feat.init(params, rng);
        params.insert(
            format!("{}.b", self.prefix),
            Tensor::uniform_init(vec![self.num_labels, self.feature_hidden], self.feature_hidden, rng),
        );
        params.insert(
            format!("{}.c1", self.prefix),
            Tensor::uniform_init(vec![self.label_hidden, self.num_labels], self.num_labels, rng),
        );
        params.insert(
            format!("{}.c2", self.prefix),
            Tensor::uniform_init(vec![self.label_hidden], self.label_hidden, rng),
        );
    }

    /// Tape route on a relaxed label vector in `[0,1]^L`.
    pub fn energy(&self, bound: &BoundParams, tape: &Rc<Tape>, x: &[f64], y: &Value) -> Result<Value> {
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "feature vector length {} does not match input_dim {}",
                x.len(),
                self.input_dim
            )));
        }
        if y.shape() != vec![self.num_labels] {
            return Err(Error::invalid(format!(
                "label vector shape {:?} does not match {} labels",
                y.shape(),
                self.num_labels
            )));
        }
        if y.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("label vector leaves the unit hypercube"));
        }
        let fx = self.feat.forward(bound, &tape.vector(x)).relu();
        let b = bound.get(&format!("{}.b", self.prefix));
        let e_loc = y.dot(&b.matvec(&fx));
        let c1 = bound.get(&format!("{}.c1", self.prefix));
        let c2 = bound.get(&format!("{}.c2", self.prefix));
        let e_lab = c2.dot(&c1.matvec(y).relu());
        Ok(e_loc.add(&e_lab))
    }

    /// Discrete route on a binary label vector.
    pub fn energy_discrete(&self, params: &Params, x: &[f64], labels: &[bool]) -> f64 {
        let w = params.get(&format!("{}.feat.w", self.prefix));
        let bia = params.get(&format!("{}.feat.b", self.prefix));
        let mut fx = f64math::matvec(w, x);
        f64math::add_assign(&mut fx, bia.data());
        for v in fx.iter_mut() {
            *v = v.max(0.0);
        }
        let b = params.get(&format!("{}.b", self.prefix));
        let h = self.feature_hidden;
        let e_loc: f64 = labels
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(i, _)| f64math::dot(&b.data()[i * h..(i + 1) * h], &fx))
            .sum();
        let c1 = params.get(&format!("{}.c1", self.prefix));
        let c2 = params.get(&format!("{}.c2", self.prefix));
        let y: Vec<f64> = labels.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect();
        let hval = f64math::matvec(c1, &y);
        let e_lab: f64 = hval
            .iter()
            .zip(c2.data())
            .map(|(v, c)| c * v.max(0.0))
            .sum();
        e_loc + e_lab
    }
}
