use super::*;
use crate::data::{synth_chain_generate, ChainParams, Example};
use crate::energy::{EnergyModel, StructuredTerm};
use crate::nets::{InferenceArch, InferenceNet, InferenceNetPair, PairKind};
use crate::params::Params;
use crate::rng;
use crate::tensor::Tensor;

fn setup(seed: u64, kind: PairKind) -> (EnergyModel, InferenceNetPair, Params) {
    let l = 3;
    let vocab = 8;
    let energy = EnergyModel::new("energy", l, vocab, 4, 6, StructuredTerm::LinearChain).unwrap();
    let template = InferenceNet::new("t", InferenceArch::Rnn { layers: 1 }, vocab, 4, 4, l);
    let pair = InferenceNetPair::new("pair", kind, &template);
    let mut params = Params::new();
    let mut r = rng::stream(seed, "init");
    energy.init(&mut params, &mut r);
    pair.init(&mut params, &mut r);
    (energy, pair, params)
}

fn tiny_batch(seed: u64, n: usize) -> Vec<Example> {
    let p = ChainParams::strong_chain(3, 8, 0.2, 0.85);
    synth_chain_generate(seed, n, (3, 6), &p).unwrap().examples
}

#[test]
fn i_step_with_zero_compound_weight_leaves_predictor_untouched() {
    let (energy, pair, mut params) = setup(0, PairKind::Separated);
    let before: Vec<(String, Tensor)> = params
        .iter()
        .filter(|(k, _)| k.starts_with("pair.a."))
        .map(|(k, t)| (k.to_string(), t.clone()))
        .collect();
    let mut cfg = JointConfig::default();
    cfg.loss = LossKind::MarginRescaled;
    cfg.stab.ce_weight = 1.0;
    let mut opt = cfg.infnet_optimizer_for_tests();
    let batch = tiny_batch(0, 4);
    i_step(&energy, &pair, &mut params, &mut opt, &batch, &cfg, 1.0, None).unwrap();
    for (name, t) in before {
        assert_eq!(params.get(&name).data(), t.data(), "{name} moved");
    }
    // The cost-augmented network did move.
    let moved = params
        .iter()
        .filter(|(k, _)| k.starts_with("pair.f."))
        .any(|(_, t)| t.data().iter().any(|v| !v.is_finite() || *v != 0.0));
    assert!(moved);
}

#[test]
fn satisfied_truncated_margin_gives_exactly_zero_update() {
    // With U = W = 0 the energy is identically zero, so the perceptron
    // hinge is [E(gold) - E(F)]_+ = [0]_+ = 0: no gradient anywhere, and
    // with no stabilizers the parameters must not move at all.
    let (energy, pair, mut params) = setup(1, PairKind::Separated);
    *params.get_mut("energy.unary") = Tensor::zeros(vec![3, 6]).with_grad();
    *params.get_mut("energy.chain") = Tensor::zeros(vec![3, 3]).with_grad();
    let snapshot = params.clone();
    let mut cfg = JointConfig::default();
    cfg.loss = LossKind::Perceptron;
    cfg.stab.truncate_i_steps = true;
    cfg.stab.ce_weight = 0.0;
    cfg.stab.compound_weight = 0.0;
    let mut opt = cfg.infnet_optimizer_for_tests();
    let batch = tiny_batch(1, 3);
    i_step(&energy, &pair, &mut params, &mut opt, &batch, &cfg, 0.0, None).unwrap();
    for (name, t) in snapshot.iter() {
        assert_eq!(params.get(name).data(), t.data(), "{name} moved");
    }
}

#[test]
fn large_ce_weight_drives_cost_net_toward_gold() {
    let (energy, pair, mut params) = setup(2, PairKind::Separated);
    let batch = tiny_batch(2, 4);
    let mut cfg = JointConfig::default();
    cfg.loss = LossKind::MarginRescaled;
    cfg.stab.ce_weight = 50.0;
    cfg.lr_infnet = 0.002;
    let ce_of = |params: &Params| -> f64 {
        batch
            .iter()
            .map(|ex| {
                let rows = pair_cost_rows_f64(&pair, params, ex);
                local_ce_loss_f64(&ex.labels, &rows)
            })
            .sum()
    };
    let before = ce_of(&params);
    let mut opt = cfg.infnet_optimizer_for_tests();
    for _ in 0..20 {
        i_step(&energy, &pair, &mut params, &mut opt, &batch, &cfg, 50.0, None).unwrap();
    }
    let after = ce_of(&params);
    assert!(after < before, "CE did not decrease: {before} -> {after}");
}

// Separated cost net is a plain tagger; read its rows through the f64 path.
fn pair_cost_rows_f64(_pair: &InferenceNetPair, params: &Params, ex: &Example) -> Vec<Vec<f64>> {
    let net = InferenceNet::new(
        "pair.f",
        InferenceArch::Rnn { layers: 1 },
        8,
        4,
        4,
        3,
    );
    net.forward_f64(params, &ex.tokens).unwrap()
}

#[test]
fn repeated_e_steps_widen_the_energy_gap() {
    let (energy, pair, mut params) = setup(3, PairKind::Separated);
    let batch = tiny_batch(3, 4);
    let cfg = JointConfig { loss: LossKind::MarginRescaled, ..JointConfig::default() };
    let gap = |params: &Params| -> f64 {
        // mean E(F(x)) - E(gold): positive and growing means the energy
        // separates gold from the cost-augmented outputs.
        batch
            .iter()
            .map(|ex| {
                let rows = pair_cost_rows_f64(&pair, params, ex);
                let e_f = crate::infer::relaxed_energy(&energy, params, &ex.tokens, &rows).unwrap();
                let e_g = energy.energy_discrete(params, &ex.tokens, &ex.labels).unwrap();
                e_f - e_g
            })
            .sum::<f64>()
            / batch.len() as f64
    };
    let before = gap(&params);
    let mut opt = Optimizer::new(OptimKind::Adam { lr: 1e-2 });
    for _ in 0..50 {
        e_step(&energy, &pair, &mut params, &mut opt, &batch, &cfg).unwrap();
    }
    let after = gap(&params);
    assert!(
        after > before + 0.5,
        "gap failed to widen: {before:.4} -> {after:.4}"
    );
}

#[test]
fn inactive_hinges_leave_only_l2_shrinkage() {
    // U = W = 0 makes both hinges exactly zero (perceptron), so with
    // l2_energy > 0 the only signal on the energy side is the L2 term:
    // every nonzero energy parameter shrinks toward zero.
    let (energy, pair, mut params) = setup(4, PairKind::Separated);
    *params.get_mut("energy.unary") = Tensor::zeros(vec![3, 6]).with_grad();
    *params.get_mut("energy.chain") = Tensor::zeros(vec![3, 3]).with_grad();
    let mut cfg = JointConfig { loss: LossKind::Perceptron, ..JointConfig::default() };
    cfg.l2_energy = 1e-3;
    let before = params.clone();
    let mut opt = Optimizer::new(OptimKind::Sgd { lr: 0.05, momentum: 0.0 });
    let batch = tiny_batch(4, 3);
    e_step(&energy, &pair, &mut params, &mut opt, &batch, &cfg).unwrap();
    let mut checked = 0;
    for (name, old) in before.iter() {
        if !name.starts_with("energy.feat") {
            continue;
        }
        for (a, b) in params.get(name).data().iter().zip(old.data()) {
            if b.abs() > 1e-9 {
                assert!(a.abs() < b.abs(), "{name} failed to shrink: {b} -> {a}");
                checked += 1;
            }
        }
    }
    assert!(checked > 50, "too few coordinates exercised: {checked}");
    // U and W have zero L2 gradient and must stay exactly zero.
    assert!(params.get("energy.unary").data().iter().all(|v| *v == 0.0));
}

#[test]
fn compound_with_zero_weight_equals_margin_rescaled_e_step() {
    let batch = tiny_batch(5, 3);
    let run = |loss: LossKind, cw: f64| -> Vec<f64> {
        let (energy, pair, mut params) = setup(5, PairKind::Separated);
        let mut cfg = JointConfig { loss, ..JointConfig::default() };
        cfg.stab.compound_weight = cw;
        let mut opt = Optimizer::new(OptimKind::Adam { lr: 1e-2 });
        e_step(&energy, &pair, &mut params, &mut opt, &batch, &cfg).unwrap();
        params.get("energy.unary").data().to_vec()
    };
    let a = run(LossKind::Compound, 0.0);
    let b = run(LossKind::MarginRescaled, 1.0);
    assert_eq!(a, b);
}

#[test]
fn alternating_train_is_bitwise_deterministic() {
    let train = tiny_batch(6, 24);
    let dev = tiny_batch(7, 8);
    let run = || {
        let (energy, pair, params) = setup(6, PairKind::Stacked(crate::nets::StackedHead::Affine));
        let cfg = JointConfig {
            epochs: 2,
            batch: 6,
            seed: 6,
            ..JointConfig::default()
        };
        let out = alternating_train(&energy, &pair, params, &train, &cfg, None, |_, p| {
            infnet_accuracy(&pair.predictor, p, &dev)
        })
        .unwrap();
        (out.log, out.best_dev)
    };
    let (log1, dev1) = run();
    let (log2, dev2) = run();
    assert_eq!(log1, log2);
    assert_eq!(dev1.to_bits(), dev2.to_bits());
}

#[test]
fn alternating_train_runs_all_k_settings() {
    let train = tiny_batch(8, 12);
    let dev = tiny_batch(9, 4);
    for k in [1usize, 5, 50] {
        let (energy, pair, params) = setup(8, PairKind::Shared);
        let mut cfg = JointConfig { epochs: 1, batch: 3, seed: 8, ..JointConfig::default() };
        cfg.stab.i_steps = k;
        let out = alternating_train(&energy, &pair, params, &train, &cfg, None, |_, p| {
            infnet_accuracy(&pair.predictor, p, &dev)
        })
        .unwrap();
        assert!(!out.aborted);
        assert!(out.log.iter().all(|r| r.l0.is_finite() && r.l1.is_finite()));
    }
}

#[test]
fn zero_i_steps_is_rejected() {
    let mut cfg = JointConfig::default();
    cfg.stab.i_steps = 0;
    assert!(cfg.stab.validate().is_err());
}

#[test]
fn retune_zero_epochs_is_identity_and_curve_never_increases() {
    let (energy, pair, params) = setup(10, PairKind::Separated);
    let inputs: Vec<Vec<usize>> = tiny_batch(10, 6).into_iter().map(|e| e.tokens).collect();
    let (same, curve0) =
        retune_infnet(&pair.predictor, &energy, &params, &inputs, 0, 1e-3, 4).unwrap();
    for (name, t) in params.iter() {
        assert_eq!(same.get(name).data(), t.data());
    }
    assert_eq!(curve0.len(), 1);

    let (_, curve) =
        retune_infnet(&pair.predictor, &energy, &params, &inputs, 5, 1e-3, 4).unwrap();
    for w in curve.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "best-so-far energy increased: {curve:?}");
    }
}

#[test]
fn cll_single_label_vocabulary_has_zero_loss() {
    let energy = EnergyModel::new("energy", 1, 8, 4, 6, StructuredTerm::LinearChain).unwrap();
    let mut params = Params::new();
    energy.init(&mut params, &mut rng::stream(11, "init"));
    let mut opt = Optimizer::new(OptimKind::Adam { lr: 1e-3 });
    let batch = vec![Example { tokens: vec![1, 2, 3], labels: vec![0, 0, 0] }];
    let loss = crf_cll_step(&energy, &mut params, &mut opt, &batch, 0.0).unwrap();
    assert!(loss.abs() < 1e-12, "only one labeling exists, got loss {loss}");
}

#[test]
fn cll_loss_is_nonnegative() {
    let (energy, _, mut params) = setup(12, PairKind::Separated);
    let mut opt = Optimizer::new(OptimKind::Adam { lr: 1e-3 });
    for seed in 0..5u64 {
        let batch = tiny_batch(seed, 3);
        let loss = crf_cll_step(&energy, &mut params, &mut opt, &batch, 0.0).unwrap();
        assert!(loss >= -1e-12, "log Z must dominate the gold score, got {loss}");
    }
}

#[test]
fn cll_rejects_non_chain_energies() {
    let energy =
        EnergyModel::new("energy", 3, 8, 4, 6, StructuredTerm::SkipChain { window: 2 }).unwrap();
    let mut params = Params::new();
    energy.init(&mut params, &mut rng::stream(13, "init"));
    let mut opt = Optimizer::new(OptimKind::Adam { lr: 1e-3 });
    let batch = tiny_batch(13, 2);
    assert!(crf_cll_step(&energy, &mut params, &mut opt, &batch, 0.0).is_err());
}

impl JointConfig {
    fn infnet_optimizer_for_tests(&self) -> Optimizer {
        if self.stab.ce_weight == 0.0 {
            Optimizer::new(OptimKind::Adam { lr: self.lr_infnet })
        } else {
            Optimizer::new(OptimKind::Sgd { lr: self.lr_infnet, momentum: 0.9 })
        }
    }
}
