//! Training objectives: local baselines, CRF conditional log-likelihood,
//! margin-based joint training of energies and inference networks, the
//! compound objective, stabilizers, alternation schedule and retuning.

mod losses;
mod mlc;
mod optim;
mod seq;

#[cfg(test)]
mod tests;

pub use losses::{
    bernoulli_entropy, bernoulli_entropy_f64, binary_ce, delta_cost, delta_cost_f64, entropy_reg,
    entropy_reg_f64, hinge_loss, hinge_loss_f64, local_ce_loss, local_ce_loss_f64, LossKind,
};
pub use mlc::{
    mlc_alternating_train, mlc_f1_at, mlc_predict, mlc_threshold_sweep, train_mlc_baseline,
    MLC_TAU_GRID,
};
pub use optim::{grad_norm, OptimKind, Optimizer};
pub use seq::{
    alternating_train, crf_cll_loss, crf_cll_step, e_step, i_step, infnet_accuracy, retune_infnet,
    train_crf_cll, train_infnet_for_energy, train_local_tagger, viterbi_accuracy, EStepStats,
    IStepStats, JointConfig, StabilizerConfig, TrainLogRecord, TrainOutcome,
};
