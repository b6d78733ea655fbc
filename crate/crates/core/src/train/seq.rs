//! Alternating margin-based training of sequence energies and inference
//! networks, plus the CRF conditional log-likelihood and local baselines.
//!
//! One alternation cycle runs `k >= 1` inference-network steps ("I steps",
//! ascending cost-minus-energy) and one energy step ("E step", descending
//! the truncated hinges). Zero truncation during I steps is dropped by
//! default and can be re-enabled for ablations; E steps always retain it.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::data::{token_accuracy, Example};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::infer::forward_log_partition_value;
use crate::nets::{const_rows, InferenceNet, InferenceNetPair};
use crate::params::{BoundParams, Params};
use crate::rng;
use crate::tape::{Tape, Value};
use crate::tensor::RelaxedLabelSeq;

use super::losses::{delta_cost, entropy_reg, local_ce_loss, LossKind};
use super::optim::{grad_norm, OptimKind, Optimizer};

/// Optional stabilizer terms and the alternation schedule.
#[derive(Clone, Debug)]
pub struct StabilizerConfig {
    /// L2 penalty on inference-network parameters.
    pub l2_infnet: f64,
    /// Entropy regularizer weight; signed (negative favors low entropy).
    pub entropy_weight: f64,
    /// Local cross-entropy weight; must be nonnegative.
    pub ce_weight: f64,
    /// Distance penalty toward a pretrained cost-augmented network.
    pub pretrain_dist_weight: f64,
    /// Weight of the test-time (perceptron) term in the compound objective.
    pub compound_weight: f64,
    /// I steps per E step; must be at least 1.
    pub i_steps: usize,
    /// Re-enable zero truncation during I steps (ablation switch).
    pub truncate_i_steps: bool,
    /// Anneal the CE weight as `exp(-0.01 * epoch)`.
    pub ce_anneal: bool,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        StabilizerConfig {
            l2_infnet: 0.0,
            entropy_weight: 0.0,
            ce_weight: 1.0,
            pretrain_dist_weight: 0.0,
            compound_weight: 1.0,
            i_steps: 1,
            truncate_i_steps: false,
            ce_anneal: false,
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.i_steps < 1 {
            return Err(Error::invalid("i_steps must be at least 1"));
        }
        if self.ce_weight < 0.0 {
            return Err(Error::invalid("the local CE weight must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct JointConfig {
    pub loss: LossKind,
    pub stab: StabilizerConfig,
    pub epochs: usize,
    pub batch: usize,
    pub lr_infnet: f64,
    pub lr_energy: f64,
    pub l2_energy: f64,
    /// None = choose automatically: adaptive moments without the CE term,
    /// SGD with momentum 0.9 otherwise.
    pub infnet_adam: Option<bool>,
    pub patience: usize,
    pub seed: u64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            loss: LossKind::Compound,
            stab: StabilizerConfig::default(),
            epochs: 10,
            batch: 100,
            lr_infnet: 5e-3,
            lr_energy: 1e-3,
            l2_energy: 0.0,
            infnet_adam: None,
            patience: 100,
            seed: 0,
        }
    }
}

impl JointConfig {
    fn compound_weight(&self) -> f64 {
        match self.loss {
            LossKind::Compound => self.stab.compound_weight,
            _ => 0.0,
        }
    }

    fn infnet_optimizer(&self) -> Optimizer {
        let adam = self.infnet_adam.unwrap_or(self.stab.ce_weight == 0.0);
        if adam {
            Optimizer::new(OptimKind::Adam { lr: self.lr_infnet })
        } else {
            Optimizer::new(OptimKind::Sgd { lr: self.lr_infnet, momentum: 0.9 })
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub step: usize,
    /// Truncated margin-rescaled hinge, batch mean.
    pub l0: f64,
    /// Cost-augmented objective (cost minus energy), batch mean.
    pub l1: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_psi: f64,
    pub dev_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best checkpoint by dev metric (last checkpoint when aborted).
    pub params: Params,
    /// The state at the end of training, regardless of dev metric.
    pub final_params: Params,
    pub log: Vec<TrainLogRecord>,
    pub best_dev: f64,
    pub epochs_run: usize,
    /// True when training stopped on a non-finite loss.
    pub aborted: bool,
}

pub struct IStepStats {
    pub l0: f64,
    pub l1: f64,
    pub grad_norm_psi: f64,
    pub objective: f64,
}

pub struct EStepStats {
    pub l0: f64,
    pub grad_norm_theta: f64,
    pub loss: f64,
}

fn delta_for(
    tape: &Rc<Tape>,
    kind: LossKind,
    f_rows: &[Value],
    gold_rows: &[Value],
) -> Result<Value> {
    match kind {
        LossKind::Perceptron => Ok(tape.scalar(0.0)),
        LossKind::Contrastive => Ok(tape.scalar(1.0)),
        _ => delta_cost(f_rows, gold_rows),
    }
}

fn l2_sq_over(bound: &BoundParams, params: &Params, prefixes: &[String], tape: &Rc<Tape>) -> Value {
    let mut total = tape.scalar(0.0);
    for name in params.names() {
        if prefixes.iter().any(|p| name.starts_with(p.as_str())) {
            let v = bound.get(name);
            total = total.add(&v.dot(v));
        }
    }
    total
}

/// One inference-network update on a minibatch: ascends the cost-augmented
/// (and, under the compound objective, test-time) terms plus stabilizers,
/// holding the energy parameters fixed.
pub fn i_step(
    energy: &EnergyModel,
    pair: &InferenceNetPair,
    params: &mut Params,
    opt: &mut Optimizer,
    batch: &[Example],
    cfg: &JointConfig,
    ce_weight_now: f64,
    pretrain: Option<&Params>,
) -> Result<IStepStats> {
    let cw = cfg.compound_weight();
    // The energy is frozen for this step; pruning it from backward roughly
    // halves the cost.
    params.set_grad_prefix(&format!("{}.", energy.prefix), false);
    let result = (|| {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let mut objective = tape.scalar(0.0);
        let mut l0_sum = 0.0;
        let mut l1_sum = 0.0;
        for ex in batch {
            let gold_seq = RelaxedLabelSeq::one_hot(&ex.labels, energy.num_labels);
            let gold_rows = const_rows(&tape, gold_seq.rows());
            let f_rows = pair.cost_aug_forward(&bound, &ex.tokens, Some(&gold_seq))?;
            let e_f = energy.energy(&bound, &tape, &ex.tokens, &f_rows)?;
            let e_gold = energy.energy(&bound, &tape, &ex.tokens, &gold_rows)?;
            let delta = delta_for(&tape, cfg.loss, &f_rows, &gold_rows)?;

            let mut term = match cfg.loss {
                LossKind::SlackRescaled => {
                    let unit = tape.scalar(1.0).sub(&e_f).add(&e_gold);
                    if cfg.stab.truncate_i_steps {
                        delta.mul(&unit.relu())
                    } else {
                        delta.mul(&unit)
                    }
                }
                _ => {
                    if cfg.stab.truncate_i_steps {
                        delta.sub(&e_f).add(&e_gold).relu()
                    } else {
                        // Truncation dropped; the gold energy is constant
                        // with respect to the inference networks.
                        delta.sub(&e_f)
                    }
                }
            };
            if cw > 0.0 {
                let a_rows = pair.predictor_forward(&bound, &ex.tokens)?;
                let e_a = energy.energy(&bound, &tape, &ex.tokens, &a_rows)?;
                let perc = if cfg.stab.truncate_i_steps {
                    e_gold.sub(&e_a).relu()
                } else {
                    e_a.neg()
                };
                term = term.add(&perc.scale(cw));
                if ce_weight_now > 0.0 {
                    term = term.sub(&local_ce_loss(&gold_rows, &a_rows)?.scale(ce_weight_now));
                }
            }
            if cfg.stab.entropy_weight != 0.0 {
                term = term.add(&entropy_reg(&f_rows).scale(cfg.stab.entropy_weight));
            }
            if ce_weight_now > 0.0 {
                term = term.sub(&local_ce_loss(&gold_rows, &f_rows)?.scale(ce_weight_now));
            }
            objective = objective.add(&term);

            // Diagnostics: truncated margin hinge and cost-augmented value.
            let delta_v = delta.item();
            let l1 = delta_v - e_f.item();
            l1_sum += l1;
            l0_sum += (delta_v - e_f.item() + e_gold.item()).max(0.0);
        }
        objective = objective.scale(1.0 / batch.len() as f64);

        if cfg.stab.l2_infnet > 0.0 {
            let mut pref = pair.cost_prefixes();
            if cw > 0.0 {
                pref.extend(pair.predictor_prefixes());
            }
            objective = objective
                .sub(&l2_sq_over(&bound, params, &pref, &tape).scale(cfg.stab.l2_infnet));
        }
        if cfg.stab.pretrain_dist_weight > 0.0 {
            let p0 = pretrain.ok_or_else(|| {
                Error::invalid("pretrain-distance stabilizer needs snapshot parameters")
            })?;
            let mut dist = tape.scalar(0.0);
            for name in params.names() {
                if pair.cost_prefixes().iter().any(|p| name.starts_with(p.as_str())) {
                    let cur = bound.get(name);
                    let snap = tape.constant(p0.get(name));
                    let d = cur.sub(&snap);
                    dist = dist.add(&d.dot(&d));
                }
            }
            objective = objective.sub(&dist.scale(cfg.stab.pretrain_dist_weight));
        }

        let loss = objective.neg();
        if !loss.item().is_finite() {
            return Err(Error::NonFinite("inference-network step loss".into()));
        }
        let grads = tape.backward(&loss)?;
        let by_name = bound.grads(&grads);
        let gpsi = grad_norm(&by_name, &pair.predictor_prefixes());
        opt.step(params, &by_name, &pair.all_prefixes());
        Ok(IStepStats {
            l0: l0_sum / batch.len() as f64,
            l1: l1_sum / batch.len() as f64,
            grad_norm_psi: gpsi,
            objective: -loss.item(),
        })
    })();
    params.set_grad_prefix(&format!("{}.", energy.prefix), true);
    result
}

/// One energy update on a minibatch: descends the truncated hinges (both of
/// them under the compound objective) plus L2 on the energy parameters,
/// holding the inference networks fixed.
pub fn e_step(
    energy: &EnergyModel,
    pair: &InferenceNetPair,
    params: &mut Params,
    opt: &mut Optimizer,
    batch: &[Example],
    cfg: &JointConfig,
) -> Result<EStepStats> {
    let cw = cfg.compound_weight();
    for p in pair.all_prefixes() {
        params.set_grad_prefix(&p, false);
    }
    let result = (|| {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let mut loss = tape.scalar(0.0);
        let mut l0_sum = 0.0;
        for ex in batch {
            let gold_seq = RelaxedLabelSeq::one_hot(&ex.labels, energy.num_labels);
            let gold_rows = const_rows(&tape, gold_seq.rows());
            let f_rows: Vec<Value> = pair
                .cost_aug_forward(&bound, &ex.tokens, Some(&gold_seq))?
                .iter()
                .map(|r| r.detach())
                .collect();
            let e_f = energy.energy(&bound, &tape, &ex.tokens, &f_rows)?;
            let e_gold = energy.energy(&bound, &tape, &ex.tokens, &gold_rows)?;
            let delta = delta_for(&tape, cfg.loss, &f_rows, &gold_rows)?;
            let mut term = match cfg.loss {
                LossKind::SlackRescaled => {
                    delta.mul(&tape.scalar(1.0).sub(&e_f).add(&e_gold).relu())
                }
                _ => delta.sub(&e_f).add(&e_gold).relu(),
            };
            if cw > 0.0 {
                let a_rows: Vec<Value> = pair
                    .predictor_forward(&bound, &ex.tokens)?
                    .iter()
                    .map(|r| r.detach())
                    .collect();
                let e_a = energy.energy(&bound, &tape, &ex.tokens, &a_rows)?;
                term = term.add(&e_gold.sub(&e_a).relu().scale(cw));
            }
            l0_sum += (delta.item() - e_f.item() + e_gold.item()).max(0.0);
            loss = loss.add(&term);
        }
        loss = loss.scale(1.0 / batch.len() as f64);
        if cfg.l2_energy > 0.0 {
            let pref = vec![format!("{}.", energy.prefix)];
            loss = loss.add(&l2_sq_over(&bound, params, &pref, &tape).scale(cfg.l2_energy));
        }
        if !loss.item().is_finite() {
            return Err(Error::NonFinite("energy step loss".into()));
        }
        let grads = tape.backward(&loss)?;
        let by_name = bound.grads(&grads);
        let gtheta = grad_norm(&by_name, &[format!("{}.", energy.prefix)]);
        opt.step(params, &by_name, &[format!("{}.", energy.prefix)]);
        Ok(EStepStats {
            l0: l0_sum / batch.len() as f64,
            grad_norm_theta: gtheta,
            loss: loss.item(),
        })
    })();
    for p in pair.all_prefixes() {
        params.set_grad_prefix(&p, true);
    }
    result
}

/// Alternate `k` I steps with one E step over shuffled minibatches, with
/// early stopping on the dev metric supplied by `eval`.
pub fn alternating_train<F>(
    energy: &EnergyModel,
    pair: &InferenceNetPair,
    mut params: Params,
    train: &[Example],
    cfg: &JointConfig,
    pretrain: Option<&Params>,
    mut eval: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Params) -> Result<f64>,
{
    cfg.stab.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut theta_opt = Optimizer::new(OptimKind::Adam { lr: cfg.lr_energy });
    let mut infnet_opt = cfg.infnet_optimizer();
    let mut log = Vec::new();
    let mut best_dev = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut stale = 0usize;
    let mut cycle = 0usize;
    let mut aborted = false;
    let mut epochs_run = 0usize;
    // Global counter so the I/E pattern carries across epoch boundaries even
    // when an epoch holds fewer batches than one full cycle.
    let mut role_counter = 0usize;

    'training: for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom as _;
        order.shuffle(&mut rng::stream(cfg.seed, &format!("shuffle{epoch}")));
        let batches: Vec<Vec<Example>> = order
            .chunks(cfg.batch.max(1))
            .map(|idx| idx.iter().map(|&i| train[i].clone()).collect())
            .collect();
        let ce_now = if cfg.stab.ce_anneal {
            cfg.stab.ce_weight * (-0.01 * epoch as f64).exp()
        } else {
            cfg.stab.ce_weight
        };

        let mut last_i = IStepStats { l0: 0.0, l1: 0.0, grad_norm_psi: 0.0, objective: 0.0 };
        for batch in batches.iter() {
            let role_i = role_counter % (cfg.stab.i_steps + 1) < cfg.stab.i_steps;
            role_counter += 1;
            if role_i {
                match i_step(energy, pair, &mut params, &mut infnet_opt, batch, cfg, ce_now, pretrain)
                {
                    Ok(stats) => last_i = stats,
                    Err(Error::NonFinite(_)) => {
                        aborted = true;
                        break 'training;
                    }
                    Err(e) => return Err(e),
                }
            } else {
                match e_step(energy, pair, &mut params, &mut theta_opt, batch, cfg) {
                    Ok(stats) => {
                        cycle += 1;
                        log.push(TrainLogRecord {
                            epoch,
                            step: cycle,
                            l0: stats.l0,
                            l1: last_i.l1,
                            grad_norm_theta: stats.grad_norm_theta,
                            grad_norm_psi: last_i.grad_norm_psi,
                            dev_metric: None,
                        });
                    }
                    Err(Error::NonFinite(_)) => {
                        aborted = true;
                        break 'training;
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let dev = eval(epoch, &params)?;
        log.push(TrainLogRecord {
            epoch,
            step: cycle,
            l0: last_i.l0,
            l1: last_i.l1,
            grad_norm_theta: 0.0,
            grad_norm_psi: last_i.grad_norm_psi,
            dev_metric: Some(dev),
        });
        if dev > best_dev {
            best_dev = dev;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: if aborted { params.clone() } else { best_params },
        final_params: params,
        log,
        best_dev,
        epochs_run,
        aborted,
    })
}

/// Retuning: descend the energy of the test-time network's own output over
/// unlabeled inputs. Labels are never read. Returns the best checkpoint by
/// mean energy, with the (non-increasing) best-so-far energy curve.
pub fn retune_infnet(
    net: &InferenceNet,
    energy: &EnergyModel,
    params: &Params,
    inputs: &[Vec<usize>],
    epochs: usize,
    lr: f64,
    batch: usize,
) -> Result<(Params, Vec<f64>)> {
    let mean_energy = |p: &Params| -> Result<f64> {
        let mut total = 0.0;
        for x in inputs {
            let rows = net.forward_f64(p, x)?;
            total += crate::infer::relaxed_energy(energy, p, x, &rows)?;
        }
        Ok(total / inputs.len().max(1) as f64)
    };

    let mut work = params.clone();
    work.set_grad_prefix(&format!("{}.", energy.prefix), false);
    let mut best = mean_energy(&work)?;
    let mut best_params = work.clone();
    let mut curve = vec![best];
    let mut opt = Optimizer::new(OptimKind::Adam { lr });
    let net_prefix = vec![format!("{}.", net.prefix)];

    for _ in 0..epochs {
        for chunk in inputs.chunks(batch.max(1)) {
            let tape = Tape::new();
            let bound = work.bind(&tape);
            let mut loss = tape.scalar(0.0);
            for x in chunk {
                let rows = net.forward(&bound, x)?;
                loss = loss.add(&energy.energy(&bound, &tape, x, &rows)?);
            }
            loss = loss.scale(1.0 / chunk.len() as f64);
            if !loss.item().is_finite() {
                break;
            }
            let grads = tape.backward(&loss)?;
            let by_name = bound.grads(&grads);
            opt.step(&mut work, &by_name, &net_prefix);
        }
        let e = mean_energy(&work)?;
        if e < best {
            best = e;
            best_params = work.clone();
        }
        curve.push(best);
    }
    best_params.set_grad_prefix(&format!("{}.", energy.prefix), true);
    Ok((best_params, curve))
}

/// One conditional log-likelihood step for a linear-chain energy:
/// `loss = mean(log Z(x) - score(x, y_gold))`, gradients through the
/// forward algorithm. Rejected for any other structured term.
pub fn crf_cll_loss(
    energy: &EnergyModel,
    bound: &BoundParams,
    tape: &Rc<Tape>,
    batch: &[Example],
) -> Result<Value> {
    if !energy.is_chain() {
        return Err(Error::invalid(
            "conditional log-likelihood is only tractable for the linear-chain energy",
        ));
    }
    let u = bound.get(&format!("{}.unary", energy.prefix));
    let w = bound.get(&format!("{}.chain", energy.prefix));
    let mut loss = tape.scalar(0.0);
    for ex in batch {
        let feats = energy.feature.forward(bound, &ex.tokens)?;
        let unary_rows: Vec<Value> = feats.iter().map(|f| u.matvec(f)).collect();
        let unary = Value::stack_rows(&unary_rows);
        let log_z = forward_log_partition_value(tape, &unary, w);
        let mut score = tape.scalar(0.0);
        for (t, &y) in ex.labels.iter().enumerate() {
            score = score.add(&unary.row(t).slice(y, 1));
            if t > 0 {
                score = score.add(&w.row(ex.labels[t - 1]).slice(y, 1));
            }
        }
        loss = loss.add(&log_z.sub(&score));
    }
    Ok(loss.scale(1.0 / batch.len() as f64))
}

pub fn crf_cll_step(
    energy: &EnergyModel,
    params: &mut Params,
    opt: &mut Optimizer,
    batch: &[Example],
    l2: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let mut loss = crf_cll_loss(energy, &bound, &tape, batch)?;
    if l2 > 0.0 {
        let pref = vec![format!("{}.", energy.prefix)];
        loss = loss.add(&l2_sq_over(&bound, params, &pref, &tape).scale(l2));
    }
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::NonFinite("conditional log-likelihood loss".into()));
    }
    let grads = tape.backward(&loss)?;
    let by_name = bound.grads(&grads);
    opt.step(params, &by_name, &[format!("{}.", energy.prefix)]);
    Ok(value)
}

/// Train a linear-chain energy by conditional log-likelihood with early
/// stopping on dev token accuracy (Viterbi decoding).
pub fn train_crf_cll(
    energy: &EnergyModel,
    mut params: Params,
    train: &[Example],
    dev: &[Example],
    epochs: usize,
    lr: f64,
    batch: usize,
    l2: f64,
    seed: u64,
) -> Result<(Params, f64)> {
    let mut opt = Optimizer::new(OptimKind::Adam { lr });
    let mut best = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom as _;
        order.shuffle(&mut rng::stream(seed, &format!("cll-shuffle{epoch}")));
        for chunk in order.chunks(batch.max(1)) {
            let b: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
            crf_cll_step(energy, &mut params, &mut opt, &b, l2)?;
        }
        let acc = viterbi_accuracy(energy, &params, dev)?;
        if acc > best {
            best = acc;
            best_params = params.clone();
        }
    }
    Ok((best_params, best))
}

/// Dev-set token accuracy of Viterbi decoding under a chain energy.
pub fn viterbi_accuracy(energy: &EnergyModel, params: &Params, data: &[Example]) -> Result<f64> {
    let w = energy
        .chain_matrix(params)
        .ok_or_else(|| Error::invalid("Viterbi needs a chain transition matrix"))?;
    let mut pred = Vec::with_capacity(data.len());
    let mut gold = Vec::with_capacity(data.len());
    for ex in data {
        let unary = energy.unary_scores(params, &ex.tokens)?;
        let (labels, _) = crate::infer::viterbi(&unary, &w)?;
        pred.push(labels);
        gold.push(ex.labels.clone());
    }
    token_accuracy(&pred, &gold)
}

/// Token accuracy of an inference network's discretized output.
pub fn infnet_accuracy(net: &InferenceNet, params: &Params, data: &[Example]) -> Result<f64> {
    let mut pred = Vec::with_capacity(data.len());
    let mut gold = Vec::with_capacity(data.len());
    for ex in data {
        let rows = net.forward_f64(params, &ex.tokens)?;
        pred.push(crate::infer::greedy_local_decode(&rows));
        gold.push(ex.labels.clone());
    }
    token_accuracy(&pred, &gold)
}

/// Train a tagger on the local (per-token) cross entropy only.
pub fn train_local_tagger(
    net: &InferenceNet,
    mut params: Params,
    train: &[Example],
    dev: &[Example],
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> Result<(Params, f64)> {
    let mut opt = Optimizer::new(OptimKind::Adam { lr });
    let mut best = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let prefix = vec![format!("{}.", net.prefix)];
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom as _;
        order.shuffle(&mut rng::stream(seed, &format!("local-shuffle{epoch}")));
        for chunk in order.chunks(batch.max(1)) {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let mut loss = tape.scalar(0.0);
            for &i in chunk {
                let ex = &train[i];
                let gold = const_rows(
                    &tape,
                    RelaxedLabelSeq::one_hot(&ex.labels, net.num_labels).rows(),
                );
                let dists = net.forward(&bound, &ex.tokens)?;
                loss = loss.add(&local_ce_loss(&gold, &dists)?);
            }
            loss = loss.scale(1.0 / chunk.len() as f64);
            if !loss.item().is_finite() {
                return Err(Error::NonFinite("local tagger loss".into()));
            }
            let grads = tape.backward(&loss)?;
            let by_name = bound.grads(&grads);
            opt.step(&mut params, &by_name, &prefix);
        }
        let acc = infnet_accuracy(net, &params, dev)?;
        if acc > best {
            best = acc;
            best_params = params.clone();
        }
    }
    Ok((best_params, best))
}

/// Train an inference network against a fixed energy: descend
/// `E(x, A(x)) + ce_weight * CE(A(x), y)`, early stopping on dev accuracy.
#[allow(clippy::too_many_arguments)]
pub fn train_infnet_for_energy(
    net: &InferenceNet,
    energy: &EnergyModel,
    mut params: Params,
    train: &[Example],
    dev: &[Example],
    epochs: usize,
    lr: f64,
    ce_weight: f64,
    batch: usize,
    seed: u64,
) -> Result<(Params, f64)> {
    params.set_grad_prefix(&format!("{}.", energy.prefix), false);
    let mut opt = Optimizer::new(OptimKind::Sgd { lr, momentum: 0.9 });
    let mut best = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let prefix = vec![format!("{}.", net.prefix)];
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom as _;
        order.shuffle(&mut rng::stream(seed, &format!("amortize-shuffle{epoch}")));
        for chunk in order.chunks(batch.max(1)) {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let mut loss = tape.scalar(0.0);
            for &i in chunk {
                let ex = &train[i];
                let rows = net.forward(&bound, &ex.tokens)?;
                let mut term = energy.energy(&bound, &tape, &ex.tokens, &rows)?;
                if ce_weight > 0.0 {
                    let gold = const_rows(
                        &tape,
                        RelaxedLabelSeq::one_hot(&ex.labels, net.num_labels).rows(),
                    );
                    term = term.add(&local_ce_loss(&gold, &rows)?.scale(ce_weight));
                }
                loss = loss.add(&term);
            }
            loss = loss.scale(1.0 / chunk.len() as f64);
            if !loss.item().is_finite() {
                return Err(Error::NonFinite("amortized inference loss".into()));
            }
            let grads = tape.backward(&loss)?;
            let by_name = bound.grads(&grads);
            opt.step(&mut params, &by_name, &prefix);
        }
        let acc = infnet_accuracy(net, &params, dev)?;
        if acc > best {
            best = acc;
            best_params = params.clone();
        }
    }
    best_params.set_grad_prefix(&format!("{}.", energy.prefix), true);
    Ok((best_params, best))
}
