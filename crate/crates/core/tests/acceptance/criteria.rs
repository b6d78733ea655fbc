//! Criterion implementations. Each returns Ok(detail) or Err(detail).

use std::time::Instant;

use spen_core::data::{
    synth_chain_generate, synth_highorder_generate, synth_mlc_generate, ChainParams, Example,
    MlcSynthParams, TrigramParams,
};
use spen_core::energy::{
    CnnScorer, EnergyModel, GeVariant, GlobalTlmTerm, HighOrderScorer, SelfAttScorer,
    StructuredTerm, VkpScorer, WindowTlmScorer,
};
use spen_core::harness::{gradient_suite, viterbi_matches_brute_force};
use spen_core::infer::{
    forward_log_partition, gd_infer, infnet_infer, viterbi, GD_LR_GRID,
};
use spen_core::nets::{
    const_rows, InferenceArch, InferenceNet, InferenceNetPair, PairKind, StackedHead,
};
use spen_core::relaxop::{apply, backward_through, RelaxOpKind};
use spen_core::rng;
use spen_core::tape::Tape;
use spen_core::tensor::{argmax, f64math, RelaxedLabelSeq, Tensor};
use spen_core::train::{
    alternating_train, hinge_loss_f64, mlc_alternating_train, mlc_threshold_sweep, retune_infnet,
    train_crf_cll, train_infnet_for_energy, train_mlc_baseline, JointConfig, LossKind,
};
use spen_core::Params;

use rand::Rng as _;

fn fail(msg: impl Into<String>) -> String {
    msg.into()
}

/// Run one closure per seed on its own thread (independent training runs
/// share no mutable state).
fn per_seed<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>, String>
where
    T: Send,
    F: Fn(u64) -> Result<T, String> + Sync,
{
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&sd| scope.spawn(move || f(sd)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| "seed worker panicked".to_string())?)
            .collect()
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------- 1

pub fn c1_viterbi_vs_brute_force() -> Result<String, String> {
    let mut data_rng = rng::stream(101, "acceptance-c1");
    let mut checked = 0;
    for block in 0..10u64 {
        let model = EnergyModel::new("energy", 4, 10, 3, 4, StructuredTerm::LinearChain)
            .map_err(|e| fail(e.to_string()))?;
        let mut params = Params::new();
        model.init(&mut params, &mut rng::stream(200 + block, "init"));
        for _ in 0..20 {
            let t_len = data_rng.gen_range(2..=6);
            let tokens: Vec<usize> = (0..t_len).map(|_| data_rng.gen_range(0..10)).collect();
            let ok = viterbi_matches_brute_force(&model, &params, &tokens)
                .map_err(|e| fail(e.to_string()))?;
            if !ok {
                return Err(fail(format!(
                    "Viterbi disagreed with enumeration on instance {checked} (tokens {tokens:?})"
                )));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked}/200 instances matched exactly"))
}

// ---------------------------------------------------------------- 2

pub fn c2_partition_vs_enumeration() -> Result<String, String> {
    let mut rng = rng::stream(102, "acceptance-c2");
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let t_len = rng.gen_range(1..=5);
        let l = rng.gen_range(2..=3usize);
        let unary: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..l).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let wd: Vec<f64> = (0..l * l).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w = Tensor::matrix(l, l, wd);
        let log_z = forward_log_partition(&unary, &w).map_err(|e| fail(e.to_string()))?;

        // Enumerate all L^T paths.
        let mut scores = Vec::new();
        let mut labels = vec![0usize; t_len];
        loop {
            let mut s = 0.0;
            for (t, &y) in labels.iter().enumerate() {
                s += unary[t][y];
                if t > 0 {
                    s += w.at(labels[t - 1], y);
                }
            }
            scores.push(s);
            let mut pos = t_len;
            let mut done = false;
            loop {
                if pos == 0 {
                    done = true;
                    break;
                }
                pos -= 1;
                labels[pos] += 1;
                if labels[pos] < l {
                    break;
                }
                labels[pos] = 0;
            }
            if done {
                break;
            }
        }
        let direct = f64math::logsumexp(&scores);
        let err = (log_z - direct).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            return Err(fail(format!(
                "case {case}: |forward - enumeration| = {err:.3e} > 1e-9"
            )));
        }
    }
    Ok(format!("100 instances, worst gap {worst:.2e} (tolerance 1e-9)"))
}

// ---------------------------------------------------------------- 3

pub fn c3_gradient_suite() -> Result<String, String> {
    let rows = gradient_suite().map_err(|e| fail(e.to_string()))?;
    let mut worst = ("", 0.0f64);
    for row in &rows {
        if row.max_rel_err > worst.1 {
            worst = (&row.name, row.max_rel_err);
        }
        if row.max_rel_err >= 1e-5 {
            return Err(fail(format!(
                "{} has max relative error {:.3e} >= 1e-5",
                row.name, row.max_rel_err
            )));
        }
    }
    Ok(format!(
        "{} checks under 1e-5; worst {} at {:.2e}",
        rows.len(),
        worst.0,
        worst.1
    ))
}

// ---------------------------------------------------------------- 4

pub fn c4_one_hot_reduction() -> Result<String, String> {
    let l = 3usize;
    let vocab = 8usize;
    let mut rng = rng::stream(104, "acceptance-c4");
    let mut worst: f64 = 0.0;
    for case in 0..1000u64 {
        let term = match case % 8 {
            0 => StructuredTerm::LinearChain,
            1 => StructuredTerm::SkipChain { window: 2 },
            2 => StructuredTerm::HighOrder(HighOrderScorer::Vkp(
                VkpScorer::new("energy.ho", l, 2, 4).unwrap(),
            )),
            3 => StructuredTerm::HighOrder(HighOrderScorer::Cnn(CnnScorer::new(
                "energy.ho",
                l,
                2,
                5,
            ))),
            4 => StructuredTerm::HighOrder(HighOrderScorer::Tlm(WindowTlmScorer::new(
                "energy.ho",
                l,
                2,
                3,
                4,
            ))),
            5 => StructuredTerm::HighOrder(HighOrderScorer::SelfAtt(
                SelfAttScorer::new("energy.ho", l, 2, 1).unwrap(),
            )),
            6 => StructuredTerm::FullyConnected { window: 3, rank: 2 },
            _ => StructuredTerm::GlobalTlm(
                GlobalTlmTerm::new("energy.ge", l, 3, 4, GeVariant::B, 0.0, 1.0, None).unwrap(),
            ),
        };
        let model =
            EnergyModel::new("energy", l, vocab, 3, 4, term).map_err(|e| fail(e.to_string()))?;
        let mut params = Params::new();
        model.init(&mut params, &mut rng::stream(9000 + case, "init"));
        let t_len = rng.gen_range(3..=6);
        let tokens: Vec<usize> = (0..t_len).map(|_| rng.gen_range(0..vocab)).collect();
        let labels: Vec<usize> = (0..t_len).map(|_| rng.gen_range(0..l)).collect();

        let discrete = model
            .energy_discrete(&params, &tokens, &labels)
            .map_err(|e| fail(e.to_string()))?;
        let tape = Tape::new();
        let bound = params.bind_frozen(&tape);
        let rows = const_rows(&tape, RelaxedLabelSeq::one_hot(&labels, l).rows());
        let relaxed = model
            .energy(&bound, &tape, &tokens, &rows)
            .map_err(|e| fail(e.to_string()))?
            .item();
        let err = (discrete - relaxed).abs();
        worst = worst.max(err);
        if err > 1e-12 {
            return Err(fail(format!(
                "case {case} (variant {}): |relaxed - discrete| = {err:.3e} > 1e-12",
                case % 8
            )));
        }
    }
    Ok(format!("1000 randomized cases, worst gap {worst:.2e} (tolerance 1e-12)"))
}

// ---------------------------------------------------------------- 5

/// L = 8 chain with two interleaved 4-phase cycles ("groups"). Shared
/// tokens reveal only the phase; rare anchor tokens reveal the group, and
/// the correct labeling propagates that evidence across long spans. Exact
/// decoding and a bidirectional net both carry anchors arbitrarily far; a
/// handful of gradient-descent steps cannot.
fn anchored_two_cycle_chain() -> ChainParams {
    let l = 8usize;
    let vocab = 30usize;
    let (stay, cross) = (0.97, 0.03);
    let mut transitions = vec![0.0; l * l];
    for g in 0..2 {
        for ph in 0..4 {
            let from = g * 4 + ph;
            let next = (ph + 1) % 4;
            transitions[from * l + (g * 4 + next)] = stay;
            transitions[from * l + ((1 - g) * 4 + next)] = cross;
        }
    }
    // Tokens 1..=24: six per phase, shared between groups. Tokens 25..=28:
    // two anchors per group. Token 29 and UNK never emitted.
    let p_anchor = 0.12;
    let mut emissions = vec![0.0; l * vocab];
    for g in 0..2 {
        for ph in 0..4 {
            let lab = g * 4 + ph;
            for k in 0..6 {
                emissions[lab * vocab + (1 + ph * 6 + k)] = (1.0 - p_anchor) / 6.0;
            }
            for k in 0..2 {
                emissions[lab * vocab + (25 + g * 2 + k)] = p_anchor / 2.0;
            }
        }
    }
    ChainParams {
        num_labels: l,
        vocab,
        transitions,
        emissions,
        initial: vec![1.0 / l as f64; l],
    }
}

pub fn c5_amortization_quality() -> Result<String, String> {
    struct SeedOut {
        viterbi_acc: f64,
        infnet_acc: f64,
        viterbi_energy: f64,
        infnet_energy: f64,
        infnet_search: f64,
        gd10_search: f64,
    }
    let chain = anchored_two_cycle_chain();
    let run = |seed: u64| -> Result<SeedOut, String> {
        let train = synth_chain_generate(seed * 31 + 1, 2000, (10, 30), &chain)
            .map_err(|e| fail(e.to_string()))?
            .examples;
        let dev = synth_chain_generate(seed * 31 + 2, 300, (10, 30), &chain)
            .map_err(|e| fail(e.to_string()))?
            .examples;
        let test = synth_chain_generate(seed * 31 + 3, 500, (10, 30), &chain)
            .map_err(|e| fail(e.to_string()))?
            .examples;

        let energy = EnergyModel::new("energy", 8, 30, 12, 16, StructuredTerm::LinearChain)
            .map_err(|e| fail(e.to_string()))?;
        let net = InferenceNet::new("infnet", InferenceArch::Rnn { layers: 1 }, 30, 12, 24, 8);
        let mut params = Params::new();
        let mut init = rng::stream(seed, "init");
        energy.init(&mut params, &mut init);
        net.init(&mut params, &mut init);

        // BLSTM-CRF by conditional log-likelihood, then an inference network
        // amortizing it: local-CE-stabilized training followed by a pure
        // energy-minimization retune over unlabeled inputs.
        let (params, _) = train_crf_cll(&energy, params, &train, &dev, 15, 1.5e-3, 25, 0.0, seed)
            .map_err(|e| fail(e.to_string()))?;
        // Local-CE-heavy phase, then an annealed phase emphasizing the
        // energy, then a pure energy retune over unlabeled inputs.
        let (params, _) = train_infnet_for_energy(
            &net, &energy, params, &train, &dev, 8, 5e-3, 1.0, 25, seed,
        )
        .map_err(|e| fail(e.to_string()))?;
        let (params, _) = train_infnet_for_energy(
            &net, &energy, params, &train, &dev, 8, 2e-3, 0.3, 25, seed + 1000,
        )
        .map_err(|e| fail(e.to_string()))?;
        let retune_inputs: Vec<Vec<usize>> = train
            .iter()
            .chain(dev.iter())
            .map(|e| e.tokens.clone())
            .collect();
        let (params, _) = retune_infnet(&net, &energy, &params, &retune_inputs, 10, 1e-3, 25)
            .map_err(|e| fail(e.to_string()))?;

        let w = energy.chain_matrix(&params).expect("chain");
        let mut v_correct = 0usize;
        let mut i_correct = 0usize;
        let mut total = 0usize;
        let mut v_energy = 0.0;
        let mut i_energy = 0.0;
        let mut i_search = 0.0;
        for ex in &test {
            let unary = energy.unary_scores(&params, &ex.tokens).map_err(|e| fail(e.to_string()))?;
            let (v_labels, _) = viterbi(&unary, &w).map_err(|e| fail(e.to_string()))?;
            let e_v = energy.energy_discrete_given_unary(&params, &unary, &ex.tokens, &v_labels);
            let r = infnet_infer(&net, &energy, &params, &ex.tokens)
                .map_err(|e| fail(e.to_string()))?;
            total += ex.labels.len();
            v_correct += v_labels.iter().zip(&ex.labels).filter(|(a, b)| a == b).count();
            i_correct += r.labels.iter().zip(&ex.labels).filter(|(a, b)| a == b).count();
            v_energy += e_v;
            i_energy += r.energy_discrete;
            i_search += r.energy_discrete - e_v;
        }

        // Cold-start gradient descent with 10 steps, learning rate tuned on
        // the dev set over the standard grid (lowest mean relaxed energy).
        let gd_lr = {
            let sample: Vec<&Example> = dev.iter().take(20).collect();
            let mut best = (f64::INFINITY, GD_LR_GRID[0]);
            for &lr in &GD_LR_GRID {
                let mut e = 0.0;
                for ex in &sample {
                    e += gd_infer(&energy, &params, &ex.tokens, 10, lr, None)
                        .map_err(|x| fail(x.to_string()))?
                        .energy_relaxed;
                }
                if e < best.0 {
                    best = (e, lr);
                }
            }
            best.1
        };
        let mut gd_search = 0.0;
        for ex in &test {
            let unary = energy.unary_scores(&params, &ex.tokens).map_err(|e| fail(e.to_string()))?;
            let (v_labels, _) = viterbi(&unary, &w).map_err(|e| fail(e.to_string()))?;
            let e_v = energy.energy_discrete_given_unary(&params, &unary, &ex.tokens, &v_labels);
            let r = gd_infer(&energy, &params, &ex.tokens, 10, gd_lr, None)
                .map_err(|e| fail(e.to_string()))?;
            gd_search += r.energy_discrete - e_v;
        }

        let n = test.len() as f64;
        Ok(SeedOut {
            viterbi_acc: v_correct as f64 / total as f64,
            infnet_acc: i_correct as f64 / total as f64,
            viterbi_energy: v_energy / n,
            infnet_energy: i_energy / n,
            infnet_search: i_search / n,
            gd10_search: gd_search / n,
        })
    };

    let outs = per_seed(&[1, 2, 3], run)?;
    let v_acc = mean(&outs.iter().map(|o| o.viterbi_acc).collect::<Vec<_>>());
    let i_acc = mean(&outs.iter().map(|o| o.infnet_acc).collect::<Vec<_>>());
    let i_search = mean(&outs.iter().map(|o| o.infnet_search).collect::<Vec<_>>());
    let gd_search = mean(&outs.iter().map(|o| o.gd10_search).collect::<Vec<_>>());
    let v_energy = mean(&outs.iter().map(|o| o.viterbi_energy).collect::<Vec<_>>());
    let i_energy = mean(&outs.iter().map(|o| o.infnet_energy).collect::<Vec<_>>());

    let gap_points = (v_acc - i_acc) * 100.0;
    if gap_points > 1.0 {
        return Err(fail(format!(
            "inference net trails Viterbi by {gap_points:.2} accuracy points (limit 1.0): \
             viterbi {v_acc:.4}, infnet {i_acc:.4}"
        )));
    }
    if i_search >= gd_search {
        return Err(fail(format!(
            "inference-net mean search error {i_search:.4} is not below GD-10's {gd_search:.4}"
        )));
    }
    // Mean energy within 5% of Viterbi's mean energy.
    let energy_gap = (i_energy - v_energy).abs() / v_energy.abs().max(1e-9);
    if energy_gap > 0.05 {
        return Err(fail(format!(
            "inference-net mean energy {i_energy:.3} deviates {:.1}% from Viterbi's {v_energy:.3}",
            energy_gap * 100.0
        )));
    }
    Ok(format!(
        "accuracy gap {gap_points:.2} pts (viterbi {:.2}%, infnet {:.2}%); \
         search error {i_search:.3} < gd10 {gd_search:.3}; energy within {:.1}%",
        v_acc * 100.0,
        i_acc * 100.0,
        energy_gap * 100.0
    ))
}

// ---------------------------------------------------------------- 6

/// Best-of-reps timing: external load only ever adds time, so the minimum
/// is the robust estimate of the work itself.
fn best_seconds<F: FnMut()>(mut pass: F, reps: usize) -> f64 {
    pass(); // warmup
    (0..reps)
        .map(|_| {
            let t0 = Instant::now();
            pass();
            t0.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn c6_complexity_scaling() -> Result<String, String> {
    let t_len = 20usize;
    let sizes = [64usize, 128, 256];

    // Exact decoding: T x L^2 dynamic program over random score tables.
    let mut vit_times = Vec::new();
    for &l in &sizes {
        let mut rng = rng::stream(l as u64, "acceptance-c6-vit");
        let tables: Vec<Vec<Vec<f64>>> = (0..40)
            .map(|_| {
                (0..t_len)
                    .map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let wd: Vec<f64> = (0..l * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Tensor::matrix(l, l, wd);
        vit_times.push(best_seconds(
            || {
                for unary in &tables {
                    std::hint::black_box(viterbi(unary, &w).unwrap());
                }
            },
            9,
        ));
    }

    // Amortized inference: one forward pass of a convolutional tagger whose
    // per-position cost is dominated by the L-sized projection and softmax.
    let mut net_times = Vec::new();
    for &l in &sizes {
        let net = InferenceNet::new(
            "infnet",
            InferenceArch::Cnn { widths: vec![1, 3], layers: 1 },
            50,
            4,
            8,
            l,
        );
        let mut params = Params::new();
        net.init(&mut params, &mut rng::stream(l as u64, "init"));
        let mut rng = rng::stream(l as u64, "acceptance-c6-net");
        let seqs: Vec<Vec<usize>> = (0..150)
            .map(|_| (0..t_len).map(|_| rng.gen_range(0..50)).collect())
            .collect();
        net_times.push(best_seconds(
            || {
                for s in &seqs {
                    std::hint::black_box(net.forward_f64(&params, s).unwrap());
                }
            },
            9,
        ));
    }

    let vit_r1 = vit_times[1] / vit_times[0];
    let vit_r2 = vit_times[2] / vit_times[1];
    let net_r1 = net_times[1] / net_times[0];
    let net_r2 = net_times[2] / net_times[1];
    let detail = format!(
        "viterbi ratios {vit_r1:.2}, {vit_r2:.2} (want [3,6]); \
         infnet ratios {net_r1:.2}, {net_r2:.2} (want [1.5,3])"
    );
    for r in [vit_r1, vit_r2] {
        if !(3.0..=6.0).contains(&r) {
            return Err(fail(format!("Viterbi per-doubling ratio {r:.2} outside [3, 6]; {detail}")));
        }
    }
    for r in [net_r1, net_r2] {
        if !(1.5..=3.0).contains(&r) {
            return Err(fail(format!(
                "inference-net per-doubling ratio {r:.2} outside [1.5, 3]; {detail}"
            )));
        }
    }
    Ok(detail)
}

// ---------------------------------------------------------------- 7

pub fn c7_truncation_ablation() -> Result<String, String> {
    let chain = ChainParams::strong_chain(5, 20, 0.25, 0.9);
    let run = |seed: u64| -> Result<(f64, f64, f64), String> {
        let train = synth_chain_generate(seed * 47 + 1, 800, (5, 12), &chain)
            .map_err(|e| fail(e.to_string()))?
            .examples;
        let dev = synth_chain_generate(seed * 47 + 2, 250, (5, 12), &chain)
            .map_err(|e| fail(e.to_string()))?
            .examples;

        let mut results = [0.0f64; 2];
        let mut init_acc = 0.0;
        for (idx, truncate) in [(0usize, true), (1usize, false)] {
            let energy = EnergyModel::new("energy", 5, 20, 8, 12, StructuredTerm::LinearChain)
                .map_err(|e| fail(e.to_string()))?;
            let template =
                InferenceNet::new("t", InferenceArch::Rnn { layers: 1 }, 20, 8, 8, 5);
            let pair = InferenceNetPair::new("pair", PairKind::Separated, &template);
            let mut params = Params::new();
            let mut init = rng::stream(seed, "init");
            energy.init(&mut params, &mut init);
            pair.init(&mut params, &mut init);

            // Compound objective without the local CE term: the test-time
            // network learns only through the (possibly truncated)
            // perceptron term. Convergence without CE is slow, hence the
            // long epoch budget.
            let mut cfg = JointConfig::default();
            cfg.loss = LossKind::Compound;
            cfg.stab.ce_weight = 0.0;
            cfg.stab.compound_weight = 1.0;
            cfg.stab.truncate_i_steps = truncate;
            cfg.stab.i_steps = 1;
            cfg.epochs = 50;
            cfg.batch = 20;
            cfg.lr_infnet = 3e-4;
            cfg.lr_energy = 1e-2;
            cfg.patience = 1000;
            cfg.seed = seed;

            init_acc = spen_core::train::infnet_accuracy(&pair.predictor, &params, &dev)
                .map_err(|e| fail(e.to_string()))?;
            let outcome = alternating_train(&energy, &pair, params, &train, &cfg, None, |_, p| {
                spen_core::train::infnet_accuracy(&pair.predictor, p, &dev)
            })
            .map_err(|e| fail(e.to_string()))?;
            // The ablation asks what the procedure converges to, so score
            // the final state, not the best checkpoint.
            results[idx] =
                spen_core::train::infnet_accuracy(&pair.predictor, &outcome.final_params, &dev)
                    .map_err(|e| fail(e.to_string()))?;
        }
        Ok((init_acc, results[0], results[1]))
    };

    let outs = per_seed(&[1, 2, 3], run)?;
    let init = mean(&outs.iter().map(|o| o.0).collect::<Vec<_>>()) * 100.0;
    let truncated = mean(&outs.iter().map(|o| o.1).collect::<Vec<_>>()) * 100.0;
    let untruncated = mean(&outs.iter().map(|o| o.2).collect::<Vec<_>>()) * 100.0;
    let detail = format!(
        "init {init:.1}%; with truncation {truncated:.1}% (must stay within 2 pts); \
         without truncation {untruncated:.1}% (must gain >= 20 pts)"
    );
    if (truncated - init).abs() > 2.0 {
        return Err(fail(format!("truncated run moved {:.1} pts; {detail}", truncated - init)));
    }
    if untruncated - init < 20.0 {
        return Err(fail(format!(
            "untruncated run gained only {:.1} pts; {detail}",
            untruncated - init
        )));
    }
    Ok(detail)
}

// ---------------------------------------------------------------- 8

pub fn c8_hinge_identities() -> Result<String, String> {
    let mut rng = rng::stream(108, "acceptance-c8");
    for case in 0..10_000 {
        let delta = rng.gen_range(0.0..5.0);
        let e_pred = rng.gen_range(-10.0..10.0);
        let e_gold = rng.gen_range(-10.0..10.0);
        let perceptron = hinge_loss_f64(LossKind::Perceptron, delta, e_pred, e_gold);
        let margin_zero = hinge_loss_f64(LossKind::MarginRescaled, 0.0, e_pred, e_gold);
        if perceptron.to_bits() != margin_zero.to_bits() {
            return Err(fail(format!(
                "case {case}: perceptron {perceptron} != margin(delta=0) {margin_zero}"
            )));
        }
        let m1 = hinge_loss_f64(LossKind::MarginRescaled, 1.0, e_pred, e_gold);
        let s1 = hinge_loss_f64(LossKind::SlackRescaled, 1.0, e_pred, e_gold);
        let c1 = hinge_loss_f64(LossKind::Contrastive, 1.0, e_pred, e_gold);
        if m1.to_bits() != s1.to_bits() || s1.to_bits() != c1.to_bits() {
            return Err(fail(format!(
                "case {case}: margin/slack/contrastive differ at delta=1: {m1} {s1} {c1}"
            )));
        }
    }
    Ok("10000 random triples, identities exact".into())
}

// ---------------------------------------------------------------- 9

pub fn c9_stacked_divergence() -> Result<String, String> {
    let chain = ChainParams::strong_chain(6, 24, 0.35, 0.85);
    let run = |seed: u64| -> Result<(f64, f64), String> {
        let train = synth_chain_generate(seed * 59 + 1, 700, (6, 14), &chain)
            .map_err(|e| fail(e.to_string()))?
            .examples;
        let dev = synth_chain_generate(seed * 59 + 2, 200, (6, 14), &chain)
            .map_err(|e| fail(e.to_string()))?
            .examples;

        // (a) compound objective with the stacked parameterization.
        let stacked_disagree = {
            let energy = EnergyModel::new("energy", 6, 24, 8, 12, StructuredTerm::LinearChain)
                .map_err(|e| fail(e.to_string()))?;
            let template = InferenceNet::new("t", InferenceArch::Rnn { layers: 1 }, 24, 8, 8, 6);
            let pair =
                InferenceNetPair::new("pair", PairKind::Stacked(StackedHead::Affine), &template);
            let mut params = Params::new();
            let mut init = rng::stream(seed, "init");
            energy.init(&mut params, &mut init);
            pair.init(&mut params, &mut init);
            let mut cfg = JointConfig::default();
            cfg.epochs = 6;
            cfg.batch = 20;
            cfg.seed = seed;
            cfg.patience = 100;
            let outcome = alternating_train(&energy, &pair, params, &train, &cfg, None, |_, p| {
                spen_core::train::infnet_accuracy(&pair.predictor, p, &dev)
            })
            .map_err(|e| fail(e.to_string()))?;
            let params = outcome.params;

            let mut diff = 0usize;
            let mut total = 0usize;
            for ex in &dev {
                let a_rows = pair.predictor.forward_f64(&params, &ex.tokens)
                    .map_err(|e| fail(e.to_string()))?;
                let tape = Tape::new();
                let bound = params.bind_frozen(&tape);
                let gold = RelaxedLabelSeq::one_hot(&ex.labels, 6);
                let f_rows = pair
                    .cost_aug_forward(&bound, &ex.tokens, Some(&gold))
                    .map_err(|e| fail(e.to_string()))?;
                for (a, f) in a_rows.iter().zip(&f_rows) {
                    if argmax(a) != argmax(&f.data()) {
                        diff += 1;
                    }
                    total += 1;
                }
            }
            diff as f64 / total as f64
        };

        // (b) margin-rescaled single network, then a retuned copy as the
        // test-time network.
        let margin_disagree = {
            let energy = EnergyModel::new("energy", 6, 24, 8, 12, StructuredTerm::LinearChain)
                .map_err(|e| fail(e.to_string()))?;
            let template = InferenceNet::new("t", InferenceArch::Rnn { layers: 1 }, 24, 8, 8, 6);
            let pair = InferenceNetPair::new("pair", PairKind::Separated, &template);
            let mut params = Params::new();
            let mut init = rng::stream(seed, "init");
            energy.init(&mut params, &mut init);
            pair.init(&mut params, &mut init);
            let mut cfg = JointConfig::default();
            cfg.loss = LossKind::MarginRescaled;
            cfg.epochs = 6;
            cfg.batch = 20;
            cfg.seed = seed;
            cfg.patience = 100;
            let cost_net = InferenceNet::new("pair.f", InferenceArch::Rnn { layers: 1 }, 24, 8, 8, 6);
            let outcome = alternating_train(&energy, &pair, params, &train, &cfg, None, |_, p| {
                spen_core::train::infnet_accuracy(&cost_net, p, &dev)
            })
            .map_err(|e| fail(e.to_string()))?;
            let params = outcome.params;
            let inputs: Vec<Vec<usize>> = dev.iter().map(|e| e.tokens.clone()).collect();
            let (retuned, _) = retune_infnet(&cost_net, &energy, &params, &inputs, 3, 1e-3, 20)
                .map_err(|e| fail(e.to_string()))?;

            let mut diff = 0usize;
            let mut total = 0usize;
            for ex in &dev {
                let f_rows = cost_net.forward_f64(&params, &ex.tokens)
                    .map_err(|e| fail(e.to_string()))?;
                let a_rows = cost_net.forward_f64(&retuned, &ex.tokens)
                    .map_err(|e| fail(e.to_string()))?;
                for (a, f) in a_rows.iter().zip(&f_rows) {
                    if argmax(a) != argmax(f) {
                        diff += 1;
                    }
                    total += 1;
                }
            }
            diff as f64 / total as f64
        };

        Ok((stacked_disagree, margin_disagree))
    };

    let outs = per_seed(&[1, 2, 3], run)?;
    let stacked = mean(&outs.iter().map(|o| o.0).collect::<Vec<_>>()) * 100.0;
    let margin = mean(&outs.iter().map(|o| o.1).collect::<Vec<_>>()) * 100.0;
    if stacked <= margin {
        return Err(fail(format!(
            "stacked disagreement {stacked:.2}% does not exceed margin-rescaled {margin:.2}%"
        )));
    }
    Ok(format!(
        "disagreement: stacked {stacked:.2}% > margin-rescaled+retune {margin:.2}%"
    ))
}

// ---------------------------------------------------------------- 10

pub fn c10_high_order_under_noise() -> Result<String, String> {
    let tri = TrigramParams::modular_rule(4, 16, 0.35, 0.05);
    let run = |seed: u64| -> Result<(f64, f64), String> {
        let alpha = 0.3;
        let corrupt = |ds: spen_core::data::LabeledDataset, salt: u64| -> Result<Vec<Example>, String> {
            Ok(ds.unk_corrupt(alpha, seed * 13 + salt).map_err(|e| fail(e.to_string()))?.examples)
        };
        let train = corrupt(
            synth_highorder_generate(seed * 71 + 1, 1200, (8, 16), &tri)
                .map_err(|e| fail(e.to_string()))?,
            1,
        )?;
        let dev = corrupt(
            synth_highorder_generate(seed * 71 + 2, 200, (8, 16), &tri)
                .map_err(|e| fail(e.to_string()))?,
            2,
        )?;
        let test = corrupt(
            synth_highorder_generate(seed * 71 + 3, 400, (8, 16), &tri)
                .map_err(|e| fail(e.to_string()))?,
            3,
        )?;

        let mut accs = [0.0f64; 2];
        for (idx, use_cnn) in [(0usize, false), (1usize, true)] {
            let term = if use_cnn {
                StructuredTerm::HighOrder(HighOrderScorer::Cnn(CnnScorer::new(
                    "energy.ho",
                    4,
                    2,
                    24,
                )))
            } else {
                StructuredTerm::LinearChain
            };
            let energy = EnergyModel::new("energy", 4, 16, 10, 12, term)
                .map_err(|e| fail(e.to_string()))?;
            let template = InferenceNet::new("t", InferenceArch::Rnn { layers: 1 }, 16, 10, 20, 4);
            let pair = InferenceNetPair::new("pair", PairKind::Separated, &template);
            let mut params = Params::new();
            let mut init = rng::stream(seed, "init");
            energy.init(&mut params, &mut init);
            pair.init(&mut params, &mut init);
            let mut cfg = JointConfig::default();
            cfg.epochs = 30;
            cfg.batch = 20;
            cfg.seed = seed;
            cfg.stab.ce_weight = 1.0;
            cfg.stab.i_steps = 2;
            cfg.lr_energy = 1e-3;
            cfg.l2_energy = 1e-4;
            cfg.patience = 100;
            let outcome = alternating_train(&energy, &pair, params, &train, &cfg, None, |_, p| {
                spen_core::train::infnet_accuracy(&pair.predictor, p, &dev)
            })
            .map_err(|e| fail(e.to_string()))?;
            accs[idx] = spen_core::train::infnet_accuracy(&pair.predictor, &outcome.params, &test)
                .map_err(|e| fail(e.to_string()))?;
        }
        Ok((accs[0], accs[1]))
    };

    let outs = per_seed(&[1, 2, 3], run)?;
    let chain_acc = mean(&outs.iter().map(|o| o.0).collect::<Vec<_>>()) * 100.0;
    let cnn_acc = mean(&outs.iter().map(|o| o.1).collect::<Vec<_>>()) * 100.0;
    let gain = cnn_acc - chain_acc;
    if gain < 0.5 {
        return Err(fail(format!(
            "CNN energy gained only {gain:.2} pts over linear chain ({cnn_acc:.2}% vs {chain_acc:.2}%)"
        )));
    }
    Ok(format!(
        "UnkTrain alpha=0.3: CNN(M=2) {cnn_acc:.2}% vs linear chain {chain_acc:.2}% (+{gain:.2} pts)"
    ))
}

// ---------------------------------------------------------------- 11

pub fn c11_operator_contracts() -> Result<String, String> {
    let mut rng = rng::stream(111, "acceptance-c11");
    for case in 0..10_000u64 {
        let n = rng.gen_range(2..=8);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
        for kind in [RelaxOpKind::Sx, RelaxOpKind::Gx] {
            let out = apply(&z, kind, case).map_err(|e| fail(e.to_string()))?;
            let sum: f64 = out.probs.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || out.probs.iter().any(|&p| p <= 0.0) {
                return Err(fail(format!(
                    "case {case}: {} output off the simplex (sum {sum})",
                    kind.name()
                )));
            }
        }
        for kind in [RelaxOpKind::Stl, RelaxOpKind::Sg, RelaxOpKind::St] {
            let out = apply(&z, kind, case).map_err(|e| fail(e.to_string()))?;
            let ones = out.probs.iter().filter(|&&p| p == 1.0).count();
            let zeros = out.probs.iter().filter(|&&p| p == 0.0).count();
            if ones != 1 || zeros != n - 1 {
                return Err(fail(format!(
                    "case {case}: {} output is not exactly one-hot: {:?}",
                    kind.name(),
                    out.probs
                )));
            }
        }
        // ST is SG with zero noise, forward and backward.
        let st = apply(&z, RelaxOpKind::St, case).map_err(|e| fail(e.to_string()))?;
        let q = f64math::softmax(&z);
        let mut expect = vec![0.0; n];
        expect[argmax(&q)] = 1.0;
        if st.probs != expect {
            return Err(fail(format!("case {case}: ST != onehot(argmax(softmax(z)))")));
        }
        let upstream: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let zeros = vec![0.0; n];
        let st_b = backward_through(&z, RelaxOpKind::St, &upstream, None)
            .map_err(|e| fail(e.to_string()))?;
        let sg_b = backward_through(&z, RelaxOpKind::Sg, &upstream, Some(&zeros))
            .map_err(|e| fail(e.to_string()))?;
        if st_b != sg_b {
            return Err(fail(format!("case {case}: ST backward != SG backward at g = 0")));
        }
        // Replayability with a fixed seed.
        if case % 100 == 0 {
            let a = apply(&z, RelaxOpKind::Gx, case).map_err(|e| fail(e.to_string()))?;
            let b = apply(&z, RelaxOpKind::Gx, case).map_err(|e| fail(e.to_string()))?;
            if a.probs != b.probs {
                return Err(fail(format!("case {case}: GX not replayable under a fixed seed")));
            }
        }
    }
    Ok("10000 random logit vectors, all contracts hold".into())
}

// ---------------------------------------------------------------- 12

pub fn c12_mlc_trend() -> Result<String, String> {
    let run = |seed: u64| -> Result<(f64, f64), String> {
        let p = MlcSynthParams {
            num_labels: 20,
            num_features: 30,
            num_groups: 5,
            feature_noise: 0.4,
            label_noise: 0.05,
            direction_seed: seed,
        };
        let train = synth_mlc_generate(seed * 83 + 1, 1500, &p).map_err(|e| fail(e.to_string()))?;
        let dev = synth_mlc_generate(seed * 83 + 2, 300, &p).map_err(|e| fail(e.to_string()))?;
        let test = synth_mlc_generate(seed * 83 + 3, 500, &p).map_err(|e| fail(e.to_string()))?;

        // Feed-forward baseline on binary cross entropy.
        let base_net = InferenceNet::new_mlp("infnet", 30, 40, 1, 20);
        let mut base_params = Params::new();
        base_net.init(&mut base_params, &mut rng::stream(seed, "init"));
        let (base_params, _) =
            train_mlc_baseline(&base_net, base_params, &train, &dev, 40, 1e-3, 30, seed)
                .map_err(|e| fail(e.to_string()))?;
        let (tau_b, _) = mlc_threshold_sweep(&base_net, &base_params, &dev)
            .map_err(|e| fail(e.to_string()))?;
        let base_f1 = spen_core::train::mlc_f1_at(&base_net, &base_params, &test, tau_b)
            .map_err(|e| fail(e.to_string()))?;

        // SPEN with an inference network, margin-rescaled with stabilizers.
        let energy = spen_core::energy::MlcEnergy::new("energy", 20, 30, 40, 20);
        let net = InferenceNet::new_mlp("infnet", 30, 40, 1, 20);
        let mut params = Params::new();
        let mut init = rng::stream(seed, "init");
        net.init(&mut params, &mut init);
        energy.init(&mut params, &mut init);
        let mut cfg = JointConfig::default();
        cfg.loss = LossKind::MarginRescaled;
        cfg.stab.truncate_i_steps = true;
        cfg.stab.ce_weight = 1.0;
        cfg.stab.i_steps = 2;
        cfg.epochs = 40;
        cfg.batch = 30;
        cfg.lr_infnet = 1e-3;
        cfg.seed = seed;
        cfg.patience = 100;
        let outcome = mlc_alternating_train(&energy, &net, params, &train, &dev, &cfg)
            .map_err(|e| fail(e.to_string()))?;
        let (tau_s, _) = mlc_threshold_sweep(&net, &outcome.params, &dev)
            .map_err(|e| fail(e.to_string()))?;
        let spen_f1 = spen_core::train::mlc_f1_at(&net, &outcome.params, &test, tau_s)
            .map_err(|e| fail(e.to_string()))?;
        Ok((base_f1, spen_f1))
    };

    let outs = per_seed(&[1, 2, 3], run)?;
    let base = mean(&outs.iter().map(|o| o.0).collect::<Vec<_>>()) * 100.0;
    let spen = mean(&outs.iter().map(|o| o.1).collect::<Vec<_>>()) * 100.0;
    if spen < base - 0.5 {
        return Err(fail(format!(
            "SPEN example F1 {spen:.2} falls more than 0.5 pts below the MLP baseline {base:.2}"
        )));
    }
    Ok(format!("example F1: SPEN {spen:.2} vs MLP baseline {base:.2} (non-inferiority -0.5)"))
}
