//! Joint parameterizations of the test-time and cost-augmented inference
//! networks.
//!
//! - separated: two independent networks;
//! - shared: one feature trunk with separate output heads;
//! - stacked: the cost-augmented net consumes the test-time net's output
//!   together with the gold labels. Gradient from the cost-augmented path
//!   into the test-time net is blocked.

use crate::error::{Error, Result};
use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::Value;
use crate::tensor::{RelaxedLabelSeq, Tensor};

use super::lstm::LstmCell;
use super::tagger::InferenceNet;
use super::Linear;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StackedHead {
    /// softmax(W [a_i ; y_i] + b) per position, W stored as [2L, L].
    Affine,
    /// Bidirectional LSTM over the concatenated rows, then a linear head.
    Recurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    Separated,
    Shared,
    Stacked(StackedHead),
}

#[derive(Clone, Debug)]
pub struct InferenceNetPair {
    pub kind: PairKind,
    pub predictor: InferenceNet,
    /// Full second network (separated only).
    cost_net: Option<InferenceNet>,
    num_labels: usize,
    prefix: String,
    head_hidden: usize,
}

impl InferenceNetPair {
    /// `template` fixes the architecture; the pair clones it under its own
    /// parameter namespaces.
    pub fn new(prefix: impl Into<String>, kind: PairKind, template: &InferenceNet) -> Self {
        let prefix = prefix.into();
        let num_labels = template.num_labels;
        let mut predictor = template.clone();
        predictor.prefix = format!("{prefix}.a");
        let cost_net = match kind {
            PairKind::Separated => {
                let mut f = template.clone();
                f.prefix = format!("{prefix}.f");
                Some(f)
            }
            PairKind::Shared | PairKind::Stacked(_) => None,
        };
        InferenceNetPair {
            kind,
            predictor,
            cost_net,
            num_labels,
            head_hidden: template.hidden,
            prefix,
        }
    }

    fn shared_cost_head(&self) -> Linear {
        // Reuses the predictor's encoder; only the output head differs.
        let feat = 2 * self.predictor.hidden;
        Linear::new(format!("{}.f_head", self.prefix), feat, self.num_labels)
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        self.predictor.init(params, rng);
        match self.kind {
            PairKind::Separated => {
                self.cost_net.as_ref().expect("separated pair").init(params, rng)
            }
            PairKind::Shared => self.shared_cost_head().init(params, rng),
            PairKind::Stacked(StackedHead::Affine) => {
                let l = self.num_labels;
                params.insert(
                    format!("{}.f_head.w", self.prefix),
                    Tensor::uniform_init(vec![2 * l, l], 2 * l, rng),
                );
                params.insert(format!("{}.f_head.b", self.prefix), Tensor::zeros(vec![l]));
            }
            PairKind::Stacked(StackedHead::Recurrent) => {
                let l = self.num_labels;
                let h = self.head_hidden;
                LstmCell::new(format!("{}.f_head.fwd", self.prefix), 2 * l, h).init(params, rng);
                LstmCell::new(format!("{}.f_head.bwd", self.prefix), 2 * l, h).init(params, rng);
                Linear::new(format!("{}.f_head.out", self.prefix), 2 * h, l).init(params, rng);
            }
        }
    }

    /// Test-time network output: per-position simplex rows.
    pub fn predictor_forward(&self, bound: &BoundParams, tokens: &[usize]) -> Result<Vec<Value>> {
        self.predictor.forward(bound, tokens)
    }

    pub fn predictor_logits(&self, bound: &BoundParams, tokens: &[usize]) -> Result<Vec<Value>> {
        self.predictor.logits(bound, tokens)
    }

    /// Cost-augmented network output.
    ///
    /// Separated and shared kinds ignore `gold` entirely; the stacked kind
    /// requires it. For stacked heads the test-time rows are detached, so no
    /// gradient reaches the predictor through this path.
    pub fn cost_aug_forward(
        &self,
        bound: &BoundParams,
        tokens: &[usize],
        gold: Option<&RelaxedLabelSeq>,
    ) -> Result<Vec<Value>> {
        match self.kind {
            PairKind::Separated => {
                self.cost_net.as_ref().expect("separated pair").forward(bound, tokens)
            }
            PairKind::Shared => {
                let feats = self.predictor.encode(bound, tokens)?;
                let head = self.shared_cost_head();
                Ok(feats
                    .iter()
                    .map(|x| head.forward(bound, x).softmax())
                    .collect())
            }
            PairKind::Stacked(head) => {
                let gold = gold.ok_or_else(|| {
                    Error::invalid("stacked cost-augmented net requires gold labels")
                })?;
                if gold.len() != tokens.len() {
                    return Err(Error::invalid(format!(
                        "gold length {} does not match token length {}",
                        gold.len(),
                        tokens.len()
                    )));
                }
                let a_rows = self.predictor.forward(bound, tokens)?;
                let tape = a_rows[0].tape();
                let joined: Vec<Value> = a_rows
                    .iter()
                    .zip(gold.rows())
                    .map(|(a, y)| Value::concat(&[a.detach(), tape.vector(y)]))
                    .collect();
                match head {
                    StackedHead::Affine => {
                        let w = bound.get(&format!("{}.f_head.w", self.prefix));
                        let b = bound.get(&format!("{}.f_head.b", self.prefix));
                        Ok(joined
                            .iter()
                            .map(|x| x.vecmat(w).add(b).softmax())
                            .collect())
                    }
                    StackedHead::Recurrent => {
                        let h = self.head_hidden;
                        let l = self.num_labels;
                        let fwd = LstmCell::new(format!("{}.f_head.fwd", self.prefix), 2 * l, h);
                        let bwd = LstmCell::new(format!("{}.f_head.bwd", self.prefix), 2 * l, h);
                        let out = Linear::new(format!("{}.f_head.out", self.prefix), 2 * h, l);
                        let f = fwd.run(bound, &tape, &joined);
                        let rev: Vec<Value> = joined.iter().rev().cloned().collect();
                        let mut b = bwd.run(bound, &tape, &rev);
                        b.reverse();
                        Ok(f.iter()
                            .zip(&b)
                            .map(|(x, y)| {
                                out.forward(bound, &Value::concat(&[x.clone(), y.clone()]))
                                    .softmax()
                            })
                            .collect())
                    }
                }
            }
        }
    }

    /// Parameter namespaces owned by the test-time network.
    pub fn predictor_prefixes(&self) -> Vec<String> {
        vec![format!("{}.a.", self.prefix)]
    }

    /// Parameter namespaces owned by the cost-augmented network.
    pub fn cost_prefixes(&self) -> Vec<String> {
        match self.kind {
            PairKind::Separated => vec![format!("{}.f.", self.prefix)],
            PairKind::Shared | PairKind::Stacked(_) => vec![format!("{}.f_head.", self.prefix)],
        }
    }

    /// Every namespace updated during inference-network steps.
    pub fn all_prefixes(&self) -> Vec<String> {
        let mut v = self.predictor_prefixes();
        v.extend(self.cost_prefixes());
        v
    }
}
