//! Multi-label classification: the same alternating scheme over the MLC
//! energy with a feed-forward inference network, plus the local baseline
//! and threshold tuning.

use crate::data::{example_f1, MlcExample};
use crate::energy::MlcEnergy;
use crate::error::{Error, Result};
use crate::nets::InferenceNet;
use crate::params::Params;
use crate::rng;
use crate::tape::Tape;

use super::losses::{bernoulli_entropy, binary_ce, LossKind};
use super::optim::{grad_norm, OptimKind, Optimizer};
use super::seq::{JointConfig, TrainLogRecord, TrainOutcome};

/// Classification thresholds swept on the dev set at evaluation time.
pub const MLC_TAU_GRID: [f64; 20] = [
    0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55,
    0.6, 0.65, 0.7, 0.75,
];

fn gold_bits(labels: &[bool]) -> Vec<f64> {
    labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Predict label bits at threshold `tau` (applied at evaluation only).
pub fn mlc_predict(
    net: &InferenceNet,
    params: &Params,
    features: &[f64],
    tau: f64,
) -> Result<Vec<bool>> {
    Ok(net
        .mlc_forward_f64(params, features)?
        .iter()
        .map(|&p| p > tau)
        .collect())
}

/// Example-based F1 on a dataset at a fixed threshold.
pub fn mlc_f1_at(
    net: &InferenceNet,
    params: &Params,
    data: &[MlcExample],
    tau: f64,
) -> Result<f64> {
    let mut pred = Vec::with_capacity(data.len());
    let mut gold = Vec::with_capacity(data.len());
    for ex in data {
        pred.push(mlc_predict(net, params, &ex.features, tau)?);
        gold.push(ex.labels.clone());
    }
    example_f1(&pred, &gold)
}

/// Sweep the threshold grid on `data`; returns `(best_tau, best_f1)`.
pub fn mlc_threshold_sweep(
    net: &InferenceNet,
    params: &Params,
    data: &[MlcExample],
) -> Result<(f64, f64)> {
    let mut best = (MLC_TAU_GRID[0], f64::NEG_INFINITY);
    for &tau in &MLC_TAU_GRID {
        let f1 = mlc_f1_at(net, params, data, tau)?;
        if f1 > best.1 {
            best = (tau, f1);
        }
    }
    Ok(best)
}

/// Alternating SPEN training for MLC: the cost-augmented network ascends
/// cost-minus-energy (plus stabilizers), the energy descends the chosen
/// hinge. The trained network doubles as the test-time predictor, as in the
/// perceptron/contrastive variants.
pub fn mlc_alternating_train(
    energy: &MlcEnergy,
    net: &InferenceNet,
    mut params: Params,
    train: &[MlcExample],
    dev: &[MlcExample],
    cfg: &JointConfig,
) -> Result<TrainOutcome> {
    cfg.stab.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut theta_opt = Optimizer::new(OptimKind::Adam { lr: cfg.lr_energy });
    let mut infnet_opt = Optimizer::new(OptimKind::Adam { lr: cfg.lr_infnet });
    let net_prefix = vec![format!("{}.", net.prefix)];
    let energy_prefix = vec![format!("{}.", energy.prefix)];

    let mut best_dev = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut log = Vec::new();
    let mut cycle = 0usize;
    let mut role_counter = 0usize;
    let mut aborted = false;
    let mut epochs_run = 0usize;
    let mut stale = 0usize;

    'training: for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom as _;
        order.shuffle(&mut rng::stream(cfg.seed, &format!("mlc-shuffle{epoch}")));
        let mut last_l1 = 0.0;
        let mut last_psi = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let role_i = role_counter % (cfg.stab.i_steps + 1) < cfg.stab.i_steps;
            role_counter += 1;
            let batch: Vec<&MlcExample> = chunk.iter().map(|&i| &train[i]).collect();

            let tape = Tape::new();
            if role_i {
                params.set_grad_prefix(&format!("{}.", energy.prefix), false);
            } else {
                params.set_grad_prefix(&format!("{}.", net.prefix), false);
            }
            let bound = params.bind(&tape);
            let mut objective = tape.scalar(0.0);
            let mut l0_sum = 0.0;
            let mut l1_sum = 0.0;
            let mut step_err: Option<crate::error::Error> = None;
            for ex in &batch {
                let gold = gold_bits(&ex.labels);
                let gold_v = tape.vector(&gold);
                let y = match net.mlc_forward(&bound, &tape, &ex.features) {
                    Ok(y) => {
                        if role_i {
                            y
                        } else {
                            y.detach()
                        }
                    }
                    Err(e) => {
                        step_err = Some(e);
                        break;
                    }
                };
                let e_pred = energy.energy(&bound, &tape, &ex.features, &y)?;
                let e_gold = energy.energy(&bound, &tape, &ex.features, &gold_v)?;
                let diff = y.sub(&gold_v);
                let delta = match cfg.loss {
                    LossKind::Perceptron => tape.scalar(0.0),
                    LossKind::Contrastive => tape.scalar(1.0),
                    _ => diff.relu().add(&diff.neg().relu()).sum(),
                };
                let hinge = match cfg.loss {
                    LossKind::SlackRescaled => {
                        delta.mul(&tape.scalar(1.0).sub(&e_pred).add(&e_gold).relu())
                    }
                    _ => delta.sub(&e_pred).add(&e_gold).relu(),
                };
                l0_sum += hinge.item();
                l1_sum += delta.item() - e_pred.item();
                if role_i {
                    // Ascend: cost-augmented hinge plus stabilizers.
                    let mut term = if cfg.stab.truncate_i_steps {
                        hinge
                    } else {
                        delta.sub(&e_pred)
                    };
                    if cfg.stab.entropy_weight != 0.0 {
                        term = term
                            .add(&bernoulli_entropy(&tape, &y).scale(cfg.stab.entropy_weight));
                    }
                    if cfg.stab.ce_weight > 0.0 {
                        term =
                            term.sub(&binary_ce(&tape, &gold, &y).scale(cfg.stab.ce_weight));
                    }
                    objective = objective.add(&term);
                } else {
                    objective = objective.add(&hinge);
                }
            }
            if let Some(e) = step_err {
                params.set_grad_prefix(&format!("{}.", energy.prefix), true);
                params.set_grad_prefix(&format!("{}.", net.prefix), true);
                return Err(e);
            }
            objective = objective.scale(1.0 / batch.len() as f64);
            let loss = if role_i {
                let mut obj = objective;
                if cfg.stab.l2_infnet > 0.0 {
                    let mut reg = tape.scalar(0.0);
                    for name in params.names() {
                        if name.starts_with(&net_prefix[0]) {
                            let v = bound.get(name);
                            reg = reg.add(&v.dot(v));
                        }
                    }
                    obj = obj.sub(&reg.scale(cfg.stab.l2_infnet));
                }
                obj.neg()
            } else {
                let mut obj = objective;
                if cfg.l2_energy > 0.0 {
                    let mut reg = tape.scalar(0.0);
                    for name in params.names() {
                        if name.starts_with(&energy_prefix[0]) {
                            let v = bound.get(name);
                            reg = reg.add(&v.dot(v));
                        }
                    }
                    obj = obj.add(&reg.scale(cfg.l2_energy));
                }
                obj
            };
            if !loss.item().is_finite() {
                aborted = true;
                params.set_grad_prefix(&format!("{}.", energy.prefix), true);
                params.set_grad_prefix(&format!("{}.", net.prefix), true);
                break 'training;
            }
            let grads = tape.backward(&loss)?;
            let by_name = bound.grads(&grads);
            if role_i {
                last_psi = grad_norm(&by_name, &net_prefix);
                infnet_opt.step(&mut params, &by_name, &net_prefix);
            } else {
                cycle += 1;
                log.push(TrainLogRecord {
                    epoch,
                    step: cycle,
                    l0: l0_sum / batch.len() as f64,
                    l1: last_l1,
                    grad_norm_theta: grad_norm(&by_name, &energy_prefix),
                    grad_norm_psi: last_psi,
                    dev_metric: None,
                });
                theta_opt.step(&mut params, &by_name, &energy_prefix);
            }
            last_l1 = l1_sum / batch.len() as f64;
            params.set_grad_prefix(&format!("{}.", energy.prefix), true);
            params.set_grad_prefix(&format!("{}.", net.prefix), true);
        }

        let (_, dev_f1) = mlc_threshold_sweep(net, &params, dev)?;
        log.push(TrainLogRecord {
            epoch,
            step: cycle,
            l0: 0.0,
            l1: last_l1,
            grad_norm_theta: 0.0,
            grad_norm_psi: last_psi,
            dev_metric: Some(dev_f1),
        });
        if dev_f1 > best_dev {
            best_dev = dev_f1;
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

/// Feed-forward baseline trained on binary cross entropy alone.
pub fn train_mlc_baseline(
    net: &InferenceNet,
    mut params: Params,
    train: &[MlcExample],
    dev: &[MlcExample],
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> Result<(Params, f64)> {
    let mut opt = Optimizer::new(OptimKind::Adam { lr });
    let prefix = vec![format!("{}.", net.prefix)];
    let mut best = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom as _;
        order.shuffle(&mut rng::stream(seed, &format!("mlc-base-shuffle{epoch}")));
        for chunk in order.chunks(batch.max(1)) {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let mut loss = tape.scalar(0.0);
            for &i in chunk {
                let ex = &train[i];
                let y = net.mlc_forward(&bound, &tape, &ex.features)?;
                loss = loss.add(&binary_ce(&tape, &gold_bits(&ex.labels), &y));
            }
            loss = loss.scale(1.0 / chunk.len() as f64);
            if !loss.item().is_finite() {
                return Err(Error::NonFinite("MLC baseline loss".into()));
            }
            let grads = tape.backward(&loss)?;
            let by_name = bound.grads(&grads);
            opt.step(&mut params, &by_name, &prefix);
        }
        let (_, f1) = mlc_threshold_sweep(net, &params, dev)?;
        if f1 > best {
            best = f1;
            best_params = params.clone();
        }
    }
    Ok((best_params, best))
}
