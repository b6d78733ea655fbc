//! Training losses: local cross entropy, L1 cost, entropy regularizer and
//! the hinge family. Each has a tape route and a plain `f64` route.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tape::{Tape, Value, SAFE_LOG_FLOOR};

/// Hinge variants. Perceptron is margin-rescaled with the cost forced to 0,
/// contrastive with the cost forced to 1; slack rescaling multiplies the
/// unit-margin hinge by the cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    MarginRescaled,
    SlackRescaled,
    Perceptron,
    Contrastive,
    Compound,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "margin" | "margin-rescaled" => Ok(LossKind::MarginRescaled),
            "slack" | "slack-rescaled" => Ok(LossKind::SlackRescaled),
            "perceptron" => Ok(LossKind::Perceptron),
            "contrastive" => Ok(LossKind::Contrastive),
            "compound" => Ok(LossKind::Compound),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::MarginRescaled => "margin-rescaled",
            LossKind::SlackRescaled => "slack-rescaled",
            LossKind::Perceptron => "perceptron",
            LossKind::Contrastive => "contrastive",
            LossKind::Compound => "compound",
        }
    }
}

/// `sum_t CE(gold_t, dist_t)`; log probabilities clamp at -30 so a zero at
/// the gold index degrades gracefully instead of overflowing.
pub fn local_ce_loss(gold_rows: &[Value], dists: &[Value]) -> Result<Value> {
    if gold_rows.len() != dists.len() {
        return Err(Error::invalid(format!(
            "gold length {} does not match distribution length {}",
            gold_rows.len(),
            dists.len()
        )));
    }
    let tape = dists[0].tape();
    let mut total = tape.scalar(0.0);
    for (g, d) in gold_rows.iter().zip(dists) {
        total = total.add(&g.dot(&d.safe_log()));
    }
    Ok(total.neg())
}

pub fn local_ce_loss_f64(gold: &[usize], dists: &[Vec<f64>]) -> f64 {
    gold.iter()
        .zip(dists)
        .map(|(&y, d)| -d[y].ln().max(SAFE_LOG_FLOOR))
        .sum()
}

/// L1 distance `sum_t sum_i |a_{t,i} - b_{t,i}|`, built as
/// `relu(a-b) + relu(b-a)` so it stays differentiable on the tape.
pub fn delta_cost(a: &[Value], b: &[Value]) -> Result<Value> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "cost arguments have lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let tape = a[0].tape();
    let mut total = tape.scalar(0.0);
    for (x, y) in a.iter().zip(b) {
        let d = x.sub(y);
        total = total.add(&d.relu().add(&d.neg().relu()).sum());
    }
    Ok(total)
}

pub fn delta_cost_f64(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y))
        .map(|(p, q)| (p - q).abs())
        .sum()
}

/// Sum of per-position entropies of label distributions.
pub fn entropy_reg(dists: &[Value]) -> Value {
    let tape = dists[0].tape();
    let mut total = tape.scalar(0.0);
    for d in dists {
        total = total.add(&d.dot(&d.safe_log()));
    }
    total.neg()
}

pub fn entropy_reg_f64(dists: &[Vec<f64>]) -> f64 {
    -dists
        .iter()
        .flat_map(|d| d.iter())
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>()
}

/// Sum of Bernoulli entropies for a multi-label probability vector.
pub fn bernoulli_entropy(tape: &Rc<Tape>, y: &Value) -> Value {
    let n = y.shape()[0];
    let ones = tape.vector(&vec![1.0; n]);
    let comp = ones.sub(y);
    y.dot(&y.safe_log()).add(&comp.dot(&comp.safe_log())).neg()
}

pub fn bernoulli_entropy_f64(y: &[f64]) -> f64 {
    -y.iter()
        .map(|&p| {
            let a = if p > 0.0 { p * p.ln() } else { 0.0 };
            let b = if p < 1.0 { (1.0 - p) * (1.0 - p).ln() } else { 0.0 };
            a + b
        })
        .sum::<f64>()
}

/// Binary cross entropy against 0/1 targets, clamped like the local CE.
pub fn binary_ce(tape: &Rc<Tape>, target_bits: &[f64], probs: &Value) -> Value {
    let n = probs.shape()[0];
    let target = tape.vector(target_bits);
    let ones = tape.vector(&vec![1.0; n]);
    let pos = target.dot(&probs.safe_log());
    let neg = ones.sub(&target).dot(&ones.sub(probs).safe_log());
    pos.add(&neg).neg()
}

/// Hinge losses on scalar energies.
pub fn hinge_loss_f64(kind: LossKind, delta: f64, e_pred: f64, e_gold: f64) -> f64 {
    let pos = |x: f64| x.max(0.0);
    match kind {
        LossKind::MarginRescaled | LossKind::Compound => pos(delta - e_pred + e_gold),
        LossKind::SlackRescaled => delta * pos(1.0 - e_pred + e_gold),
        LossKind::Perceptron => pos(-e_pred + e_gold),
        LossKind::Contrastive => pos(1.0 - e_pred + e_gold),
    }
}

/// Tape route of [`hinge_loss_f64`].
pub fn hinge_loss(
    tape: &Rc<Tape>,
    kind: LossKind,
    delta: &Value,
    e_pred: &Value,
    e_gold: &Value,
) -> Value {
    let one = tape.scalar(1.0);
    match kind {
        LossKind::MarginRescaled | LossKind::Compound => {
            delta.sub(e_pred).add(e_gold).relu()
        }
        LossKind::SlackRescaled => delta.mul(&one.sub(e_pred).add(e_gold).relu()),
        LossKind::Perceptron => e_gold.sub(e_pred).relu(),
        LossKind::Contrastive => one.sub(e_pred).add(e_gold).relu(),
    }
}
