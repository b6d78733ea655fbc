//! Exact, brute-force, gradient-descent and amortized inference.

use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::nets::{const_rows, InferenceNet};
use crate::params::Params;
use crate::tape::{Tape, Value};
use crate::tensor::{argmax, f64math, RelaxedLabelSeq, Tensor};

/// Gradient-descent step grid explored when comparing inference methods.
pub const GD_STEP_GRID: [usize; 9] = [5, 10, 20, 30, 40, 50, 100, 500, 1000];

/// Learning rates tuned over for gradient-descent inference. Rates this
/// large look odd next to training rates, but energy minimization over
/// logits needs them.
pub const GD_LR_GRID: [f64; 9] = [1e4, 5e3, 1e3, 500.0, 100.0, 50.0, 10.0, 5.0, 1.0];

/// Instance-tailoring step counts reported by the comparison harness.
pub const TAILOR_STEP_GRID: [usize; 3] = [3, 5, 10];

/// Outcome of one inference call on one instance.
#[derive(Clone, Debug)]
pub struct InferenceResult {
    pub method: String,
    pub relaxed: RelaxedLabelSeq,
    /// Per-row argmax of the relaxed output, lowest index on ties.
    pub labels: Vec<usize>,
    pub energy_relaxed: f64,
    pub energy_discrete: f64,
    pub time_ms: f64,
    pub iterations: usize,
}

/// The serialized per-instance record emitted in report mode.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InferenceRecord {
    pub method: String,
    pub energy_relaxed: f64,
    pub energy_discrete: f64,
    pub time_ms: f64,
    pub iterations: usize,
}

impl InferenceResult {
    pub fn record(&self) -> InferenceRecord {
        InferenceRecord {
            method: self.method.clone(),
            energy_relaxed: self.energy_relaxed,
            energy_discrete: self.energy_discrete,
            time_ms: self.time_ms,
            iterations: self.iterations,
        }
    }
}

fn check_scores(unary: &[Vec<f64>]) -> Result<()> {
    if unary.is_empty() {
        return Err(Error::invalid("scores for an empty sequence"));
    }
    for row in unary {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score table".into()));
        }
    }
    Ok(())
}

/// Exact argmax of `sum_t unary[t][y_t] + sum_{t>=2} W[y_{t-1}][y_t]` by
/// dynamic programming; ties break toward the lowest label index per stage.
pub fn viterbi(unary: &[Vec<f64>], w: &Tensor) -> Result<(Vec<usize>, f64)> {
    check_scores(unary)?;
    let t_len = unary.len();
    let l = unary[0].len();
    let mut delta = unary[0].clone();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(t_len);
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; l];
        let mut bp = vec![0usize; l];
        for j in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..l {
                let s = delta[i] + w.at(i, j);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + unary[t][j];
            bp[j] = arg;
        }
        delta = next;
        back.push(bp);
    }
    let mut last = argmax(&delta);
    let score = delta[last];
    let mut labels = vec![0usize; t_len];
    labels[t_len - 1] = last;
    for t in (1..t_len).rev() {
        last = back[t - 1][last];
        labels[t - 1] = last;
    }
    Ok((labels, score))
}

/// `log Z` over all label sequences, computed in log space.
pub fn forward_log_partition(unary: &[Vec<f64>], w: &Tensor) -> Result<f64> {
    check_scores(unary)?;
    let l = unary[0].len();
    let mut alpha = unary[0].clone();
    for row in unary.iter().skip(1) {
        let mut next = vec![0.0; l];
        for (j, nj) in next.iter_mut().enumerate() {
            let terms: Vec<f64> = (0..l).map(|i| alpha[i] + w.at(i, j)).collect();
            *nj = f64math::logsumexp(&terms) + row[j];
        }
        alpha = next;
    }
    Ok(f64math::logsumexp(&alpha))
}

/// Tape version of the forward algorithm, for conditional log-likelihood
/// training: `unary` is a `[T, L]` value, `w` an `[L, L]` value.
pub fn forward_log_partition_value(tape: &Rc<Tape>, unary: &Value, w: &Value) -> Value {
    let t_len = unary.shape()[0];
    let wt = w.transpose();
    let mut alpha = unary.row(0);
    for t in 1..t_len {
        // alpha'[j] = unary[t][j] + lse_i(alpha[i] + W[i][j])
        let broadcast = Value::stack_rows(&vec![alpha.clone(); wt.shape()[0]]);
        let scores = wt.add(&broadcast);
        alpha = scores.logsumexp().add(&unary.row(t));
    }
    let _ = tape;
    alpha.logsumexp()
}

/// Exhaustive minimizer over one-hot sequences via a caller-supplied
/// discrete energy; ties break lexicographically. The search space `L^T`
/// must stay within 10^6.
pub fn brute_force_argmin_by<F>(t_len: usize, l: usize, energy: F) -> Result<(Vec<usize>, f64)>
where
    F: Fn(&[usize]) -> f64,
{
    if t_len == 0 {
        return Err(Error::invalid("brute force over an empty sequence"));
    }
    let space = (l as f64).powi(t_len as i32);
    if space > 1e6 {
        return Err(Error::invalid(format!(
            "enumeration budget exceeded: L^T = {space:.3e} > 1e6"
        )));
    }
    let mut labels = vec![0usize; t_len];
    let mut best = (labels.clone(), energy(&labels));
    loop {
        // Lexicographic odometer.
        let mut pos = t_len;
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < l {
                break;
            }
            labels[pos] = 0;
        }
        let e = energy(&labels);
        if e < best.1 {
            best = (labels.clone(), e);
        }
    }
}

/// Exhaustive minimizer of a full energy model on one instance.
pub fn brute_force_argmin(
    model: &EnergyModel,
    params: &Params,
    tokens: &[usize],
) -> Result<(Vec<usize>, f64)> {
    let unary = model.unary_scores(params, tokens)?;
    brute_force_argmin_by(tokens.len(), model.num_labels, |labels| {
        model.energy_discrete_given_unary(params, &unary, tokens, labels)
    })
}

/// Energy of arbitrary relaxed rows under frozen parameters.
pub fn relaxed_energy(
    model: &EnergyModel,
    params: &Params,
    tokens: &[usize],
    rows: &[Vec<f64>],
) -> Result<f64> {
    let unary = model.unary_scores(params, tokens)?;
    relaxed_energy_given_unary(model, params, tokens, &unary, rows)
}

fn relaxed_energy_given_unary(
    model: &EnergyModel,
    params: &Params,
    tokens: &[usize],
    unary: &[Vec<f64>],
    rows: &[Vec<f64>],
) -> Result<f64> {
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let row_vals = const_rows(&tape, rows);
    let mut unary_total = tape.scalar(0.0);
    for (row, u) in row_vals.iter().zip(unary) {
        unary_total = unary_total.add(&row.dot(&tape.vector(u)));
    }
    Ok(model
        .energy_given_unary(&bound, &tape, tokens, &row_vals, &unary_total)?
        .item())
}

fn finish_result(
    method: &str,
    model: &EnergyModel,
    params: &Params,
    unary: &[Vec<f64>],
    tokens: &[usize],
    rows: Vec<Vec<f64>>,
    energy_relaxed: f64,
    started: Instant,
    iterations: usize,
) -> InferenceResult {
    let relaxed = RelaxedLabelSeq::new(rows);
    let labels = relaxed.discretize();
    let energy_discrete = model.energy_discrete_given_unary(params, unary, tokens, &labels);
    InferenceResult {
        method: method.to_string(),
        relaxed,
        labels,
        energy_relaxed,
        energy_discrete,
        time_ms: started.elapsed().as_secs_f64() * 1e3,
        iterations,
    }
}

/// Gradient descent over free logits, minimizing the energy of their
/// row-softmax. The best iterate seen (including the initialization) is
/// returned; a non-finite energy aborts with the last finite one.
pub fn gd_infer(
    model: &EnergyModel,
    params: &Params,
    tokens: &[usize],
    steps: usize,
    lr: f64,
    init_logits: Option<Vec<Vec<f64>>>,
) -> Result<InferenceResult> {
    if steps == 0 {
        return Err(Error::invalid("gradient-descent inference needs at least one step"));
    }
    if lr < 0.0 {
        return Err(Error::invalid(format!("negative learning rate {lr}")));
    }
    let started = Instant::now();
    let t_len = tokens.len();
    let l = model.num_labels;
    let unary = model.unary_scores(params, tokens)?;
    let mut logits: Vec<f64> = match init_logits {
        Some(init) => {
            if init.len() != t_len {
                return Err(Error::invalid(format!(
                    "init logits length {} does not match input length {t_len}",
                    init.len()
                )));
            }
            init.into_iter().flatten().collect()
        }
        None => vec![0.0; t_len * l],
    };

    let mut best_energy = f64::INFINITY;
    let mut best_rows: Vec<Vec<f64>> = Vec::new();
    for step in 0..=steps {
        let tape = Tape::new();
        let bound = params.bind_frozen(&tape);
        let leaf = tape.leaf(&Tensor::matrix(t_len, l, logits.clone()).with_grad());
        let rows: Vec<Value> = (0..t_len).map(|t| leaf.row(t).softmax()).collect();
        let mut unary_total = tape.scalar(0.0);
        for (row, u) in rows.iter().zip(&unary) {
            unary_total = unary_total.add(&row.dot(&tape.vector(u)));
        }
        let energy = model.energy_given_unary(&bound, &tape, tokens, &rows, &unary_total)?;
        let e = energy.item();
        if !e.is_finite() {
            break;
        }
        if e < best_energy {
            best_energy = e;
            best_rows = rows.iter().map(|r| r.data()).collect();
        }
        if step == steps {
            break;
        }
        let grads = tape.backward(&energy)?;
        let g = grads.get(&leaf);
        for (x, gx) in logits.iter_mut().zip(g.data()) {
            *x -= lr * gx;
        }
    }
    Ok(finish_result("gd", model, params, &unary, tokens, best_rows, best_energy, started, steps))
}

/// Amortized inference: a single forward pass of the inference network,
/// with the energy evaluated on both the relaxed output and its
/// discretization.
pub fn infnet_infer(
    net: &InferenceNet,
    model: &EnergyModel,
    params: &Params,
    tokens: &[usize],
) -> Result<InferenceResult> {
    let started = Instant::now();
    let rows = net.forward_f64(params, tokens)?;
    let unary = model.unary_scores(params, tokens)?;
    let energy_relaxed = relaxed_energy_given_unary(model, params, tokens, &unary, &rows)?;
    Ok(finish_result("infnet", model, params, &unary, tokens, rows, energy_relaxed, started, 1))
}

/// Fine-tune a clone of the inference network on one instance, descending
/// the energy of its own output; the passed-in parameters are untouched.
pub fn instance_tailor(
    net: &InferenceNet,
    model: &EnergyModel,
    params: &Params,
    tokens: &[usize],
    steps: usize,
    lr: f64,
) -> Result<InferenceResult> {
    let started = Instant::now();
    let unary = model.unary_scores(params, tokens)?;
    if steps == 0 {
        let mut r = infnet_infer(net, model, params, tokens)?;
        r.method = "instance-tailored".into();
        return Ok(r);
    }
    let mut tuned = params.freeze_except(&[format!("{}.", net.prefix)]);
    let mut best_energy = f64::INFINITY;
    let mut best_rows: Vec<Vec<f64>> = Vec::new();
    for step in 0..=steps {
        let tape = Tape::new();
        let bound = tuned.bind(&tape);
        let rows = net.forward(&bound, tokens)?;
        let mut unary_total = tape.scalar(0.0);
        for (row, u) in rows.iter().zip(&unary) {
            unary_total = unary_total.add(&row.dot(&tape.vector(u)));
        }
        let energy = model.energy_given_unary(&bound, &tape, tokens, &rows, &unary_total)?;
        let e = energy.item();
        if !e.is_finite() {
            break;
        }
        if e < best_energy {
            best_energy = e;
            best_rows = rows.iter().map(|r| r.data()).collect();
        }
        if step == steps {
            break;
        }
        let grads = tape.backward(&energy)?;
        let by_name = bound.grads(&grads);
        for (name, t) in tuned.iter_mut() {
            if t.requires_grad() {
                let g = &by_name[name];
                for (x, gx) in t.data_mut().iter_mut().zip(g.data()) {
                    *x -= lr * gx;
                }
            }
        }
    }
    Ok(finish_result(
        "instance-tailored",
        model,
        params,
        &unary,
        tokens,
        best_rows,
        best_energy,
        started,
        steps,
    ))
}

/// Gradient-descent inference warm-started at the inference network's
/// pre-softmax logits.
pub fn warm_start_gd(
    net: &InferenceNet,
    model: &EnergyModel,
    params: &Params,
    tokens: &[usize],
    steps: usize,
    lr: f64,
) -> Result<InferenceResult> {
    if steps == 0 {
        let mut r = infnet_infer(net, model, params, tokens)?;
        r.method = "warm-start".into();
        return Ok(r);
    }
    let logits = net.logits_f64(params, tokens)?;
    let mut r = gd_infer(model, params, tokens, steps, lr, Some(logits))?;
    r.method = "warm-start".into();
    Ok(r)
}

/// Energy gap between a method's output and the exact minimizer's output
/// for the same input.
pub fn search_error(energy_method: f64, energy_exact: f64) -> f64 {
    energy_method - energy_exact
}

/// Per-row argmax with lowest-index tie-break.
pub fn greedy_local_decode(rows: &[Vec<f64>]) -> Vec<usize> {
    rows.iter().map(|r| argmax(r)).collect()
}
