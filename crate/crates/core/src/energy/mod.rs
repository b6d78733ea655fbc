//! Energy functions over (input features, relaxed label sequence) pairs.
//!
//! Every energy comes in two routes that the test suite plays against each
//! other:
//!
//! - a tape route over relaxed rows, used for training and gradient-based
//!   inference;
//! - a discrete `f64` route over label indices, a direct transcription of
//!   the discrete definitions with integer indexing and no relaxation
//!   machinery.
//!
//! On one-hot inputs the two must agree to 1e-12.
//!
//! Sign convention: the unary and structured terms are folded into the
//! energy with a leading minus, so training minimizes the gold energy.
//! Tag-LM terms carry their own internal minus (they are negative
//! log-likelihoods) and enter the total additively.

mod mlc;
mod scorers;
mod tlm;

pub use mlc::MlcEnergy;
pub use scorers::{
    product_flatten, CnnScorer, HighOrderScorer, SelfAttScorer, TermContribution, VkpScorer,
    WindowTlmScorer,
};
pub use tlm::{global_energy, global_energy_discrete, tlm_energy, tlm_energy_discrete, GeVariant, GlobalTlmTerm};

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nets::FeatureNet;
use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::{Tape, Value};
use crate::tensor::f64math;
use crate::tensor::Tensor;

/// Structured term kinds selectable in an [`EnergyModel`].
#[derive(Clone, Debug)]
pub enum StructuredTerm {
    /// Bilinear label-pair coupling between adjacent positions.
    LinearChain,
    /// Pairs of labels up to `window` apart.
    SkipChain { window: usize },
    /// A scorer over every complete window of `window + 1` consecutive
    /// labels.
    HighOrder(HighOrderScorer),
    /// Skip-chain with low-rank pair matrices `W_i = S D_i^T`.
    FullyConnected { window: usize, rank: usize },
    /// Linear chain plus tag-LM global terms.
    GlobalTlm(GlobalTlmTerm),
}

/// Unary scores from a feature encoder plus one structured term.
#[derive(Clone, Debug)]
pub struct EnergyModel {
    pub prefix: String,
    pub num_labels: usize,
    pub feature: FeatureNet,
    pub term: StructuredTerm,
}

impl EnergyModel {
    pub fn new(
        prefix: impl Into<String>,
        num_labels: usize,
        vocab: usize,
        embed_dim: usize,
        feature_dim: usize,
        term: StructuredTerm,
    ) -> Result<Self> {
        let prefix = prefix.into();
        match &term {
            StructuredTerm::SkipChain { window } | StructuredTerm::FullyConnected { window, .. }
                if *window < 1 =>
            {
                return Err(Error::invalid("skip-chain window must be at least 1"))
            }
            StructuredTerm::FullyConnected { rank, .. } if *rank < 1 => {
                return Err(Error::invalid("fully-connected rank must be at least 1"))
            }
            StructuredTerm::HighOrder(scorer) if scorer.window() < 1 => {
                return Err(Error::invalid("high-order window must be at least 1"))
            }
            _ => {}
        }
        Ok(EnergyModel {
            feature: FeatureNet::new(format!("{prefix}.feat"), vocab, embed_dim, feature_dim),
            prefix,
            num_labels,
            term,
        })
    }

    fn unary_name(&self) -> String {
        format!("{}.unary", self.prefix)
    }

    fn chain_name(&self) -> String {
        format!("{}.chain", self.prefix)
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        self.feature.init(params, rng);
        let d = self.feature.output_dim();
        let l = self.num_labels;
        params.insert(self.unary_name(), Tensor::uniform_init(vec![l, d], d, rng));
        match &self.term {
            StructuredTerm::LinearChain => {
                params.insert(self.chain_name(), Tensor::uniform_init(vec![l, l], l, rng));
            }
            StructuredTerm::SkipChain { window } => {
                for i in 1..=*window {
                    params.insert(
                        format!("{}.skip{i}", self.prefix),
                        Tensor::uniform_init(vec![l, l], l, rng),
                    );
                }
            }
            StructuredTerm::HighOrder(scorer) => scorer.init(params, rng),
            StructuredTerm::FullyConnected { window, rank } => {
                params.insert(
                    format!("{}.fc.s", self.prefix),
                    Tensor::uniform_init(vec![l, *rank], *rank, rng),
                );
                for i in 1..=*window {
                    params.insert(
                        format!("{}.fc.d{i}", self.prefix),
                        Tensor::uniform_init(vec![l, *rank], *rank, rng),
                    );
                }
            }
            StructuredTerm::GlobalTlm(term) => {
                params.insert(self.chain_name(), Tensor::uniform_init(vec![l, l], l, rng));
                term.init(params, rng);
            }
        }
    }

    /// Unary scores `U_j . f(x, t)` as a plain `[T, L]` table (features held
    /// fixed). This is what Viterbi and gradient-descent inference consume.
    pub fn unary_scores(&self, params: &Params, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        let feats = self.feature.forward_f64(params, tokens)?;
        let u = params.get(&self.unary_name());
        Ok(feats.iter().map(|f| f64math::matvec(u, f)).collect())
    }

    /// Chain transition matrix for exact decoding, if this energy has one.
    pub fn chain_matrix(&self, params: &Params) -> Option<Tensor> {
        match &self.term {
            StructuredTerm::LinearChain | StructuredTerm::GlobalTlm(_) => {
                Some(params.get(&self.chain_name()).clone())
            }
            _ => None,
        }
    }

    /// True when Viterbi over `unary_scores` + `chain_matrix` is exact.
    pub fn is_chain(&self) -> bool {
        matches!(self.term, StructuredTerm::LinearChain)
    }

    /// Tape route on relaxed rows, with the feature encoder on the tape so
    /// all energy parameters receive gradients.
    pub fn energy(
        &self,
        bound: &BoundParams,
        tape: &Rc<Tape>,
        tokens: &[usize],
        rows: &[Value],
    ) -> Result<Value> {
        if rows.len() != tokens.len() {
            return Err(Error::invalid(format!(
                "relaxed output length {} does not match input length {}",
                rows.len(),
                tokens.len()
            )));
        }
        let feats = self.feature.forward(bound, tokens)?;
        let u = bound.get(&self.unary_name());
        let mut unary = tape.scalar(0.0);
        for (row, f) in rows.iter().zip(&feats) {
            unary = unary.add(&row.dot(&u.matvec(f)));
        }
        self.energy_given_unary(bound, tape, tokens, rows, &unary)
    }

    /// Tape route with a precomputed unary score total (a constant or any
    /// scalar value); used by gradient-descent inference where features are
    /// frozen.
    pub fn energy_given_unary(
        &self,
        bound: &BoundParams,
        tape: &Rc<Tape>,
        tokens: &[usize],
        rows: &[Value],
        unary_total: &Value,
    ) -> Result<Value> {
        let structured = self.structured_value(bound, tape, tokens, rows)?;
        Ok(unary_total.add(&structured.linear_part).neg().add(&structured.additive_part))
    }

    fn structured_value(
        &self,
        bound: &BoundParams,
        tape: &Rc<Tape>,
        tokens: &[usize],
        rows: &[Value],
    ) -> Result<StructuredValue> {
        let zero = tape.scalar(0.0);
        let mut out = StructuredValue { linear_part: zero.clone(), additive_part: zero };
        match &self.term {
            StructuredTerm::LinearChain => {
                let w = bound.get(&self.chain_name());
                out.linear_part = pairwise_sum(rows, w, 1);
            }
            StructuredTerm::SkipChain { window } => {
                let mut total = out.linear_part.clone();
                for i in 1..=*window {
                    let w = bound.get(&format!("{}.skip{i}", self.prefix));
                    total = total.add(&pairwise_sum(rows, w, i));
                }
                out.linear_part = total;
            }
            StructuredTerm::HighOrder(scorer) => {
                let sum = scorer.window_sum(bound, tape, rows)?;
                match scorer.contribution() {
                    TermContribution::Score => out.linear_part = sum,
                    TermContribution::AdditiveEnergy => out.additive_part = sum,
                }
            }
            StructuredTerm::FullyConnected { window, rank: _ } => {
                let s = bound.get(&format!("{}.fc.s", self.prefix));
                let mut total = out.linear_part.clone();
                for i in 1..=*window {
                    let d = bound.get(&format!("{}.fc.d{i}", self.prefix));
                    let w = s.matmul(&d.transpose());
                    total = total.add(&pairwise_sum(rows, &w, i));
                }
                out.linear_part = total;
            }
            StructuredTerm::GlobalTlm(term) => {
                let w = bound.get(&self.chain_name());
                out.linear_part = pairwise_sum(rows, w, 1);
                out.additive_part = term.energy(bound, tape, tokens, rows)?;
            }
        }
        Ok(out)
    }

    /// Discrete route: the energy of a label sequence, written directly from
    /// the discrete definitions with integer indexing.
    pub fn energy_discrete(&self, params: &Params, tokens: &[usize], labels: &[usize]) -> Result<f64> {
        let unary = self.unary_scores(params, tokens)?;
        Ok(self.energy_discrete_given_unary(params, &unary, tokens, labels))
    }

    /// Discrete route with precomputed unary scores (the common case inside
    /// brute-force enumeration, where features do not change per candidate).
    pub fn energy_discrete_given_unary(
        &self,
        params: &Params,
        unary: &[Vec<f64>],
        tokens: &[usize],
        labels: &[usize],
    ) -> f64 {
        let unary_total: f64 = labels.iter().enumerate().map(|(t, &y)| unary[t][y]).sum();
        let (linear, additive) = self.structured_discrete(params, tokens, labels);
        -(unary_total + linear) + additive
    }

    fn structured_discrete(&self, params: &Params, tokens: &[usize], labels: &[usize]) -> (f64, f64) {
        match &self.term {
            StructuredTerm::LinearChain => {
                let w = params.get(&self.chain_name());
                (pairwise_sum_discrete(labels, w, 1), 0.0)
            }
            StructuredTerm::SkipChain { window } => {
                let mut total = 0.0;
                for i in 1..=*window {
                    let w = params.get(&format!("{}.skip{i}", self.prefix));
                    total += pairwise_sum_discrete(labels, w, i);
                }
                (total, 0.0)
            }
            StructuredTerm::HighOrder(scorer) => {
                let sum = scorer.window_sum_discrete(params, labels);
                match scorer.contribution() {
                    TermContribution::Score => (sum, 0.0),
                    TermContribution::AdditiveEnergy => (0.0, sum),
                }
            }
            StructuredTerm::FullyConnected { window, rank } => {
                let s = params.get(&format!("{}.fc.s", self.prefix));
                let l = self.num_labels;
                let mut total = 0.0;
                for i in 1..=*window {
                    let d = params.get(&format!("{}.fc.d{i}", self.prefix));
                    // W_i[a][b] = sum_r S[a][r] * D_i[b][r]
                    let mut w = vec![0.0; l * l];
                    for a in 0..l {
                        for b in 0..l {
                            let mut acc = 0.0;
                            for r in 0..*rank {
                                acc += s.data()[a * rank + r] * d.data()[b * rank + r];
                            }
                            w[a * l + b] = acc;
                        }
                    }
                    let wt = Tensor::matrix(l, l, w);
                    total += pairwise_sum_discrete(labels, &wt, i);
                }
                (total, 0.0)
            }
            StructuredTerm::GlobalTlm(term) => {
                let w = params.get(&self.chain_name());
                let linear = pairwise_sum_discrete(labels, w, 1);
                let additive = term.energy_discrete(params, tokens, labels);
                (linear, additive)
            }
        }
    }
}

/// Structured score split by how it enters the total energy: the linear
/// part is negated with the unary scores, the additive part (tag-LM NLL
/// terms) enters as-is.
struct StructuredValue {
    linear_part: Value,
    additive_part: Value,
}

/// `sum_t y_{t-lag}^T W y_t` over positions with `t - lag >= 1` (1-based);
/// terms that would reach before the first position are omitted.
fn pairwise_sum(rows: &[Value], w: &Value, lag: usize) -> Value {
    let tape = rows[0].tape();
    let mut total = tape.scalar(0.0);
    for t in lag..rows.len() {
        total = total.add(&rows[t - lag].dot(&w.matvec(&rows[t])));
    }
    total
}

fn pairwise_sum_discrete(labels: &[usize], w: &Tensor, lag: usize) -> f64 {
    (lag..labels.len())
        .map(|t| w.at(labels[t - lag], labels[t]))
        .sum()
}

/// Standalone relaxed linear-chain energy on explicit inputs:
/// `-( sum_t y_t . (U f_t) + sum_{t>=2} y_{t-1}^T W y_t )`.
pub fn linear_chain_energy(
    tape: &Rc<Tape>,
    rows: &[Value],
    feats: &[Value],
    u: &Value,
    w: &Value,
) -> Result<Value> {
    if rows.len() != feats.len() {
        return Err(Error::invalid(format!(
            "relaxed output length {} does not match feature length {}",
            rows.len(),
            feats.len()
        )));
    }
    let mut unary = tape.scalar(0.0);
    for (row, f) in rows.iter().zip(feats) {
        unary = unary.add(&row.dot(&u.matvec(f)));
    }
    Ok(unary.add(&pairwise_sum(rows, w, 1)).neg())
}

/// Discrete linear-chain energy on explicit score tables:
/// `-( sum_t unary[t][y_t] + sum_{t>=2} W[y_{t-1}][y_t] )`.
pub fn linear_chain_energy_discrete(unary: &[Vec<f64>], w: &Tensor, labels: &[usize]) -> f64 {
    let u: f64 = labels.iter().enumerate().map(|(t, &y)| unary[t][y]).sum();
    -(u + pairwise_sum_discrete(labels, w, 1))
}
