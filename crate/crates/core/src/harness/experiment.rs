//! Training and comparison pipelines assembled from the configuration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{
    load_conll, span_f1, synth_chain_generate, synth_highorder_generate, synth_mlc_generate,
    token_accuracy, ChainParams, Example, LabeledDataset, MlcExample, MlcSynthParams, Scheme,
    TrigramParams,
};
use crate::energy::{
    CnnScorer, EnergyModel, GeVariant, GlobalTlmTerm, HighOrderScorer, MlcEnergy, SelfAttScorer,
    StructuredTerm, VkpScorer, WindowTlmScorer,
};
use crate::error::{Error, Result};
use crate::infer::{
    brute_force_argmin_by, gd_infer, greedy_local_decode, infnet_infer, instance_tailor, viterbi,
    warm_start_gd, InferenceRecord, InferenceResult, GD_LR_GRID,
};
use crate::nets::{InferenceNet, InferenceNetPair, PairKind};
use crate::params::Params;
use crate::rng;
use crate::tensor::RelaxedLabelSeq;
use crate::train::{
    alternating_train, mlc_alternating_train, mlc_threshold_sweep, retune_infnet, train_crf_cll,
    train_infnet_for_energy, train_local_tagger, train_mlc_baseline, JointConfig, LossKind,
    StabilizerConfig,
};

use super::config::{EnergyKind, ExperimentConfig, Task};
use super::report::{ExperimentReport, MethodRow};

/// Sequence data resolved from the config.
pub struct SeqData {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub vocab: usize,
    pub labels: usize,
    pub label_vocab: Vec<String>,
    pub scheme: Scheme,
    pub manifest: serde_json::Value,
}

fn split_seeds(seed: u64) -> (u64, u64, u64) {
    use rand::Rng as _;
    let mut r = rng::stream(seed, "data-split");
    (r.gen(), r.gen(), r.gen())
}

pub fn build_seq_data(cfg: &ExperimentConfig) -> Result<SeqData> {
    let seed = cfg.u64_of("seed")?;
    let (s_train, s_dev, s_test) = split_seeds(seed);
    let t_range = (cfg.usize_of("data.t_min")?, cfg.usize_of("data.t_max")?);
    let labels = cfg.usize_of("data.labels")?;
    let vocab = cfg.usize_of("data.vocab")?;
    let (n_train, n_dev, n_test) = (
        cfg.usize_of("data.n_train")?,
        cfg.usize_of("data.n_dev")?,
        cfg.usize_of("data.n_test")?,
    );

    let (mut train, mut dev, mut test, label_vocab, scheme, manifest, vocab, labels) =
        match cfg.task()? {
            Task::ChainSynthetic => {
                let p = ChainParams::strong_chain(
                    labels,
                    vocab,
                    cfg.f64_of("data.emission_noise")?,
                    cfg.f64_of("data.transition_prob")?,
                );
                let train = synth_chain_generate(s_train, n_train, t_range, &p)?;
                let dev = synth_chain_generate(s_dev, n_dev, t_range, &p)?;
                let test = synth_chain_generate(s_test, n_test, t_range, &p)?;
                let manifest = train.manifest();
                (
                    train.examples,
                    dev.examples,
                    test.examples,
                    (0..labels).map(|i| format!("L{i}")).collect::<Vec<_>>(),
                    Scheme::None,
                    manifest,
                    vocab,
                    labels,
                )
            }
            Task::HighOrderSynthetic => {
                let p = TrigramParams::modular_rule(
                    labels,
                    vocab,
                    cfg.f64_of("data.emission_noise")?,
                    cfg.f64_of("data.rule_noise")?,
                );
                let train = synth_highorder_generate(s_train, n_train, t_range, &p)?;
                let dev = synth_highorder_generate(s_dev, n_dev, t_range, &p)?;
                let test = synth_highorder_generate(s_test, n_test, t_range, &p)?;
                let manifest = train.manifest();
                (
                    train.examples,
                    dev.examples,
                    test.examples,
                    (0..labels).map(|i| format!("L{i}")).collect::<Vec<_>>(),
                    Scheme::None,
                    manifest,
                    vocab,
                    labels,
                )
            }
            Task::ConllFile => {
                let scheme = cfg.scheme()?;
                let path = PathBuf::from(cfg.str_of("data.path"));
                let tc = cfg.usize_of("data.token_column")?;
                let lc = cfg.usize_of("data.label_column")?;
                let train_ds = load_conll(&path, tc, lc, scheme)?;
                let (dev, test) = {
                    let dev_path = cfg.str_of("data.dev_path");
                    let test_path = cfg.str_of("data.test_path");
                    let load_split = |p: &str| -> Result<Vec<Example>> {
                        let raw = load_conll(Path::new(p), tc, lc, scheme)?;
                        remap_through(&train_ds, &raw, Path::new(p))
                    };
                    if dev_path.is_empty() || test_path.is_empty() {
                        // Deterministic 80/10/10 split of the training file.
                        let n = train_ds.examples.len();
                        let dev_n = (n / 10).max(1);
                        let test_n = (n / 10).max(1);
                        let dev = train_ds.examples[n - dev_n - test_n..n - test_n].to_vec();
                        let test = train_ds.examples[n - test_n..].to_vec();
                        (dev, test)
                    } else {
                        (load_split(dev_path)?, load_split(test_path)?)
                    }
                };
                let mut train_examples = train_ds.examples.clone();
                if cfg.str_of("data.dev_path").is_empty() {
                    let n = train_examples.len();
                    let cut = n - (n / 10).max(1) * 2;
                    train_examples.truncate(cut.max(1));
                }
                let manifest = train_ds.manifest();
                let v = train_ds.num_tokens_vocab();
                let l = train_ds.num_labels();
                (
                    train_examples,
                    dev,
                    test,
                    train_ds.label_vocab.clone(),
                    scheme,
                    manifest,
                    v,
                    l,
                )
            }
            Task::MlcSynthetic => {
                return Err(Error::invalid(
                    "sequence pipeline invoked on the MLC task; use the MLC pipeline",
                ))
            }
        };

    // Token corruption: the train alpha covers train and dev (training on
    // noisy text), the test alpha covers the test split.
    let a_train = cfg.f64_of("data.unk_train_alpha")?;
    let a_test = cfg.f64_of("data.unk_test_alpha")?;
    if a_train > 0.0 {
        train = corrupt_examples(train, a_train, seed, "unk-train");
        dev = corrupt_examples(dev, a_train, seed, "unk-dev");
    }
    if a_test > 0.0 {
        test = corrupt_examples(test, a_test, seed, "unk-test");
    }
    Ok(SeqData { train, dev, test, vocab, labels, label_vocab, scheme, manifest })
}

fn corrupt_examples(examples: Vec<Example>, alpha: f64, seed: u64, stream: &str) -> Vec<Example> {
    use rand::Rng as _;
    let mut rng = rng::stream(seed, stream);
    examples
        .into_iter()
        .map(|mut ex| {
            for t in &mut ex.tokens {
                if rng.gen::<f64>() < alpha {
                    *t = crate::data::UNK;
                }
            }
            ex
        })
        .collect()
}

fn remap_through(train: &LabeledDataset, raw: &LabeledDataset, path: &Path) -> Result<Vec<Example>> {
    // Labels must come from the training label set; tokens map through the
    // training vocabulary with unseen ones becoming UNK.
    let token_strings: Vec<Vec<String>> = {
        let inv: std::collections::BTreeMap<usize, &str> =
            raw.token_vocab.iter().map(|(s, &i)| (i, s.as_str())).collect();
        raw.examples
            .iter()
            .map(|ex| ex.tokens.iter().map(|t| inv[t].to_string()).collect())
            .collect()
    };
    let labels: Vec<Vec<usize>> = raw
        .examples
        .iter()
        .map(|ex| {
            ex.labels
                .iter()
                .map(|&l| {
                    let s = &raw.label_vocab[l];
                    train
                        .label_vocab
                        .iter()
                        .position(|t| t == s)
                        .ok_or_else(|| {
                            Error::Data(format!(
                                "{}: label {s:?} does not occur in the training set",
                                path.display()
                            ))
                        })
                })
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(train.reindex(&token_strings, &labels))
}

pub fn build_energy(cfg: &ExperimentConfig, labels: usize, vocab: usize) -> Result<EnergyModel> {
    let window = cfg.usize_of("energy.window")?;
    let term = match cfg.energy_kind()? {
        EnergyKind::LinearChain => StructuredTerm::LinearChain,
        EnergyKind::SkipChain => StructuredTerm::SkipChain { window },
        EnergyKind::Cnn => StructuredTerm::HighOrder(HighOrderScorer::Cnn(CnnScorer::new(
            "energy.ho",
            labels,
            window,
            cfg.usize_of("energy.filters")?,
        ))),
        EnergyKind::Vkp => StructuredTerm::HighOrder(HighOrderScorer::Vkp(VkpScorer::new(
            "energy.ho",
            labels,
            window,
            cfg.usize_of("energy.label_embed")?,
        )?)),
        EnergyKind::Tlm => StructuredTerm::HighOrder(HighOrderScorer::Tlm(WindowTlmScorer::new(
            "energy.ho",
            labels,
            window,
            cfg.usize_of("energy.tlm_embed")?,
            cfg.usize_of("energy.tlm_hidden")?,
        ))),
        EnergyKind::SelfAtt => StructuredTerm::HighOrder(HighOrderScorer::SelfAtt(
            SelfAttScorer::new("energy.ho", labels, window, cfg.usize_of("energy.heads")?)?,
        )),
        EnergyKind::FullyConnected => StructuredTerm::FullyConnected {
            window: cfg.usize_of("energy.fc_window")?,
            rank: cfg.usize_of("energy.rank")?,
        },
        EnergyKind::GlobalTlm => {
            let variant = match cfg.str_of("energy.tlm_variant") {
                "a" => GeVariant::A,
                "b" => GeVariant::B,
                "c" => GeVariant::C,
                other => {
                    return Err(Error::Config(format!("unknown TLM variant {other:?}")))
                }
            };
            let word = if variant == GeVariant::C {
                Some((vocab, cfg.usize_of("energy.tlm_embed")?))
            } else {
                None
            };
            StructuredTerm::GlobalTlm(GlobalTlmTerm::new(
                "energy.ge",
                labels,
                cfg.usize_of("energy.tlm_embed")?,
                cfg.usize_of("energy.tlm_hidden")?,
                variant,
                cfg.f64_of("energy.gamma")?,
                cfg.f64_of("energy.tlm_weight")?,
                word,
            )?)
        }
        EnergyKind::Mlc => {
            return Err(Error::invalid("MLC energy has its own pipeline; task must be mlc-synthetic"))
        }
    };
    EnergyModel::new(
        "energy",
        labels,
        vocab,
        cfg.usize_of("energy.embed")?,
        cfg.usize_of("energy.feature_dim")?,
        term,
    )
}

pub fn build_pair(cfg: &ExperimentConfig, labels: usize, vocab: usize) -> Result<InferenceNetPair> {
    let template = InferenceNet::new(
        "template",
        cfg.infnet_arch()?,
        vocab,
        cfg.usize_of("infnet.embed")?,
        cfg.usize_of("infnet.hidden")?,
        labels,
    );
    Ok(InferenceNetPair::new("pair", cfg.pair_kind()?, &template))
}

fn joint_config(cfg: &ExperimentConfig) -> Result<JointConfig> {
    Ok(JointConfig {
        loss: cfg.loss_kind()?,
        stab: StabilizerConfig {
            l2_infnet: cfg.f64_of("training.l2_infnet")?,
            entropy_weight: cfg.f64_of("training.entropy_weight")?,
            ce_weight: cfg.f64_of("training.ce_weight")?,
            pretrain_dist_weight: cfg.f64_of("training.pretrain_dist_weight")?,
            compound_weight: cfg.f64_of("training.lambda")?,
            i_steps: cfg.usize_of("training.i_steps")?,
            truncate_i_steps: cfg.bool_of("training.truncate_i")?,
            ce_anneal: cfg.bool_of("training.ce_anneal")?,
        },
        epochs: cfg.usize_of("training.epochs")?,
        batch: cfg.usize_of("training.batch")?,
        lr_infnet: cfg.f64_of("training.lr")?,
        lr_energy: cfg.f64_of("training.lr_energy")?,
        l2_energy: cfg.f64_of("training.l2_energy")?,
        infnet_adam: None,
        patience: cfg.usize_of("training.patience")?,
        seed: cfg.u64_of("seed")?,
    })
}

/// The network evaluated at test time for a given configuration: the
/// test-time net under the compound objective, the cost-augmented net for
/// the single-network losses, or the standalone net for local/amortized
/// objectives.
pub fn eval_net(cfg: &ExperimentConfig, labels: usize, vocab: usize) -> Result<InferenceNet> {
    let objective = cfg.str_of("training.objective");
    let mut net = InferenceNet::new(
        "infnet",
        cfg.infnet_arch()?,
        vocab,
        cfg.usize_of("infnet.embed")?,
        cfg.usize_of("infnet.hidden")?,
        labels,
    );
    match objective {
        "local" | "amortize" => Ok(net),
        "joint" => {
            if cfg.loss_kind()? == LossKind::Compound {
                net.prefix = "pair.a".into();
            } else {
                net.prefix = "pair.f".into();
            }
            Ok(net)
        }
        "cll" => Err(Error::invalid(
            "conditional log-likelihood training has no inference network",
        )),
        other => Err(Error::Config(format!("unknown training objective {other:?}"))),
    }
}

fn seq_metric(
    pred: &[Vec<usize>],
    gold: &[Vec<usize>],
    label_vocab: &[String],
    scheme: Scheme,
) -> Result<f64> {
    match scheme {
        Scheme::None => token_accuracy(pred, gold),
        _ => Ok(span_f1(pred, gold, label_vocab, scheme)?.f1),
    }
}

pub struct TrainArtifacts {
    pub report: ExperimentReport,
    pub checkpoint: PathBuf,
    pub aborted: bool,
}

/// The `train` pipeline: runs the configured objective, writes per-epoch
/// and final checkpoints, the training log (line-delimited JSON) and the
/// report.
pub fn run_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let seed = cfg.u64_of("seed")?;
    let objective = cfg.str_of("training.objective").to_string();

    if cfg.task()? == Task::MlcSynthetic {
        return run_train_mlc(cfg, out_dir, started);
    }

    let data = build_seq_data(cfg)?;
    let mut init_rng = rng::stream(seed, "init");
    let mut params = Params::new();
    let jc = joint_config(cfg)?;
    let mut aborted = false;
    let mut train_log = None;
    let best_dev;

    let ckpt_path = out_dir.join("final.ckpt");
    match objective.as_str() {
        "joint" => {
            let energy = build_energy(cfg, data.labels, data.vocab)?;
            let pair = build_pair(cfg, data.labels, data.vocab)?;
            if cfg.loss_kind()? != LossKind::Compound
                && matches!(cfg.pair_kind()?, PairKind::Stacked(_))
            {
                return Err(Error::Config(
                    "single-network losses need pair.kind = separated or shared \
                     (the stacked cost net consumes gold labels at prediction time)"
                        .into(),
                ));
            }
            energy.init(&mut params, &mut init_rng);
            pair.init(&mut params, &mut init_rng);

            // Pretrained snapshot for the distance stabilizer.
            let pretrain = if jc.stab.pretrain_dist_weight > 0.0 {
                Some(params.clone())
            } else {
                None
            };
            let enet = eval_net(cfg, data.labels, data.vocab)?;
            let dev = data.dev.clone();
            let (lv, sch) = (data.label_vocab.clone(), data.scheme);
            let epoch_dir = out_dir.to_path_buf();
            let outcome = alternating_train(
                &energy,
                &pair,
                params,
                &data.train,
                &jc,
                pretrain.as_ref(),
                |epoch, p| {
                    p.save(&epoch_dir.join(format!("epoch{epoch}.ckpt")))?;
                    let mut pred = Vec::new();
                    let mut gold = Vec::new();
                    for ex in &dev {
                        let rows = enet.forward_f64(p, &ex.tokens)?;
                        pred.push(greedy_local_decode(&rows));
                        gold.push(ex.labels.clone());
                    }
                    seq_metric(&pred, &gold, &lv, sch)
                },
            )?;
            params = outcome.params;
            aborted = outcome.aborted;
            best_dev = outcome.best_dev;
            train_log = Some(outcome.log);

            let retune_epochs = cfg.usize_of("training.retune_epochs")?;
            if retune_epochs > 0 && !aborted {
                let inputs: Vec<Vec<usize>> =
                    data.dev.iter().map(|e| e.tokens.clone()).collect();
                let (tuned, _) = retune_infnet(
                    &enet,
                    &energy,
                    &params,
                    &inputs,
                    retune_epochs,
                    cfg.f64_of("training.retune_lr")?,
                    jc.batch,
                )?;
                params = tuned;
            }
        }
        "cll" => {
            let energy = build_energy(cfg, data.labels, data.vocab)?;
            energy.init(&mut params, &mut init_rng);
            let (best, acc) = train_crf_cll(
                &energy,
                params,
                &data.train,
                &data.dev,
                jc.epochs,
                jc.lr_energy,
                jc.batch,
                jc.l2_energy,
                seed,
            )?;
            params = best;
            best_dev = acc;
        }
        "local" => {
            let net = eval_net(cfg, data.labels, data.vocab)?;
            net.init(&mut params, &mut init_rng);
            let (best, acc) = train_local_tagger(
                &net,
                params,
                &data.train,
                &data.dev,
                jc.epochs,
                jc.lr_energy,
                jc.batch,
                seed,
            )?;
            params = best;
            best_dev = acc;
        }
        "amortize" => {
            let energy = build_energy(cfg, data.labels, data.vocab)?;
            let ckpt = cfg.str_of("training.energy_checkpoint");
            if ckpt.is_empty() {
                return Err(Error::Config(
                    "missing required key \"training.energy_checkpoint\" for amortize".into(),
                ));
            }
            let energy_params = Params::load(Path::new(ckpt))?;
            for (name, t) in energy_params.iter() {
                if name.starts_with("energy.") {
                    params.insert(name, t.clone());
                }
            }
            // Sanity: the checkpoint must cover this energy's parameters.
            let mut expect = Params::new();
            energy.init(&mut expect, &mut rng::stream(0, "shape-check"));
            for name in expect.names() {
                if !params.contains(name) {
                    return Err(Error::Format(format!(
                        "energy checkpoint {ckpt} lacks parameter {name:?}"
                    )));
                }
            }
            let net = eval_net(cfg, data.labels, data.vocab)?;
            net.init(&mut params, &mut init_rng);
            let (best, acc) = train_infnet_for_energy(
                &net,
                &energy,
                params,
                &data.train,
                &data.dev,
                jc.epochs,
                jc.lr_infnet,
                jc.stab.ce_weight,
                jc.batch,
                seed,
            )?;
            params = best;
            best_dev = acc;
        }
        other => return Err(Error::Config(format!("unknown training objective {other:?}"))),
    }

    params.save(&ckpt_path)?;
    if let Some(log) = &train_log {
        let mut lines = String::new();
        for rec in log {
            lines.push_str(&serde_json::to_string(rec)?);
            lines.push('\n');
        }
        std::fs::write(out_dir.join("train_log.jsonl"), lines)?;
    }

    let report = ExperimentReport {
        task: cfg.task()?.name().to_string(),
        seed,
        config: cfg.echo(),
        wall_time_s: started.elapsed().as_secs_f64(),
        methods: vec![MethodRow {
            method: format!("train/{objective}"),
            steps: cfg.usize_of("training.epochs")?,
            oracle: false,
            metric: if best_dev.is_nan() { None } else { Some(best_dev) },
            energy_relaxed: None,
            energy_discrete: None,
            search_error: None,
            examples_per_sec: None,
            note: aborted.then(|| "aborted on non-finite loss".to_string()),
        }],
        instances: Default::default(),
        train_log,
        dataset: data.manifest,
    };
    report.save(&out_dir.join("report.json"))?;
    Ok(TrainArtifacts { report, checkpoint: ckpt_path, aborted })
}

fn run_train_mlc(cfg: &ExperimentConfig, out_dir: &Path, started: Instant) -> Result<TrainArtifacts> {
    let seed = cfg.u64_of("seed")?;
    let (s_train, s_dev, s_test) = split_seeds(seed);
    let p = MlcSynthParams {
        num_labels: cfg.usize_of("data.labels")?,
        num_features: cfg.usize_of("data.mlc_features")?,
        num_groups: cfg.usize_of("data.mlc_groups")?,
        feature_noise: cfg.f64_of("data.mlc_feature_noise")?,
        label_noise: cfg.f64_of("data.mlc_label_noise")?,
        direction_seed: seed,
    };
    let train: Vec<MlcExample> = synth_mlc_generate(s_train, cfg.usize_of("data.n_train")?, &p)?;
    let dev = synth_mlc_generate(s_dev, cfg.usize_of("data.n_dev")?, &p)?;
    let _ = s_test; // the test split is drawn by evaluation runs

    let mut params = Params::new();
    let mut init_rng = rng::stream(seed, "init");
    let jc = joint_config(cfg)?;
    let net = InferenceNet::new_mlp(
        "infnet",
        p.num_features,
        cfg.usize_of("infnet.hidden")?,
        cfg.usize_of("infnet.layers")?,
        p.num_labels,
    );
    net.init(&mut params, &mut init_rng);

    let (aborted, train_log) = if cfg.str_of("training.objective") == "local" {
        let (best, _f1) = train_mlc_baseline(
            &net, params, &train, &dev, jc.epochs, jc.lr_infnet, jc.batch, seed,
        )?;
        params = best;
        (false, None)
    } else {
        let energy = MlcEnergy::new(
            "energy",
            p.num_labels,
            p.num_features,
            cfg.usize_of("energy.mlc_feat_hidden")?,
            cfg.usize_of("energy.mlc_label_hidden")?,
        );
        energy.init(&mut params, &mut init_rng);
        let outcome = mlc_alternating_train(&energy, &net, params, &train, &dev, &jc)?;
        params = outcome.params;
        (outcome.aborted, Some(outcome.log))
    };
    let (tau, dev_f1) = mlc_threshold_sweep(&net, &params, &dev)?;

    let ckpt_path = out_dir.join("final.ckpt");
    params.save(&ckpt_path)?;
    if let Some(log) = &train_log {
        let mut lines = String::new();
        for rec in log {
            lines.push_str(&serde_json::to_string(rec)?);
            lines.push('\n');
        }
        std::fs::write(out_dir.join("train_log.jsonl"), lines)?;
    }
    let report = ExperimentReport {
        task: Task::MlcSynthetic.name().to_string(),
        seed,
        config: cfg.echo(),
        wall_time_s: started.elapsed().as_secs_f64(),
        methods: vec![MethodRow {
            method: format!("train/{}/tau={tau}", cfg.str_of("training.objective")),
            steps: jc.epochs,
            oracle: false,
            metric: Some(dev_f1),
            energy_relaxed: None,
            energy_discrete: None,
            search_error: None,
            examples_per_sec: None,
            note: aborted.then(|| "aborted on non-finite loss".to_string()),
        }],
        instances: Default::default(),
        train_log,
        dataset: serde_json::json!({
            "n_train": train.len(),
            "L": p.num_labels,
            "features": p.num_features,
        }),
    };
    report.save(&out_dir.join("report.json"))?;
    Ok(TrainArtifacts { report, checkpoint: ckpt_path, aborted })
}

/// The `compare` pipeline: evaluate the configured inference methods on the
/// test split against a trained checkpoint.
pub fn run_compare(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    oracle_override: Option<bool>,
) -> Result<ExperimentReport> {
    if cfg.task()? == Task::MlcSynthetic {
        return Err(Error::invalid(
            "compare covers sequence inference methods; MLC metrics are produced by train",
        ));
    }
    let started = Instant::now();
    let data = build_seq_data(cfg)?;
    let params = Params::load(checkpoint)?;
    let energy = build_energy(cfg, data.labels, data.vocab)?;

    // Checkpoint compatibility: every parameter this config's energy would
    // create must be present with the same shape.
    {
        let mut expect = Params::new();
        energy.init(&mut expect, &mut rng::stream(0, "shape-check"));
        for (name, t) in expect.iter() {
            if !params.contains(name) {
                return Err(Error::Format(format!(
                    "checkpoint {} lacks parameter {name:?} required by this config",
                    checkpoint.display()
                )));
            }
            if params.get(name).shape() != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint {} parameter {name:?} has shape {:?}, config needs {:?}",
                    checkpoint.display(),
                    params.get(name).shape(),
                    t.shape()
                )));
            }
        }
    }

    let net = eval_net(cfg, data.labels, data.vocab).ok().filter(|n| {
        params.names().any(|k| k.starts_with(&format!("{}.", n.prefix)))
    });
    let oracle = oracle_override.unwrap_or(cfg.bool_of("eval.oracle_gd")?);
    let test = &data.test;

    // Viterbi reference energies for search error (chain energies only).
    let reference: Option<Vec<f64>> = if energy.is_chain() {
        let w = energy.chain_matrix(&params).expect("chain matrix");
        Some(
            test.par_iter()
                .map(|ex| {
                    let unary = energy.unary_scores(&params, &ex.tokens)?;
                    let (labels, _) = viterbi(&unary, &w)?;
                    energy.energy_discrete(&params, &ex.tokens, &labels)
                })
                .collect::<Result<Vec<f64>>>()?,
        )
    } else {
        None
    };

    let mut methods = Vec::new();
    let mut instances = std::collections::BTreeMap::new();

    let summarize = |name: &str,
                     steps: usize,
                     oracle: bool,
                     results: Vec<InferenceResult>,
                     elapsed: f64,
                     methods: &mut Vec<MethodRow>,
                     instances: &mut std::collections::BTreeMap<String, Vec<InferenceRecord>>|
     -> Result<()> {
        let pred: Vec<Vec<usize>> = results.iter().map(|r| r.labels.clone()).collect();
        let gold: Vec<Vec<usize>> = test.iter().map(|e| e.labels.clone()).collect();
        let metric = seq_metric(&pred, &gold, &data.label_vocab, data.scheme)?;
        let n = results.len() as f64;
        let mean_rel = results.iter().map(|r| r.energy_relaxed).sum::<f64>() / n;
        let mean_disc = results.iter().map(|r| r.energy_discrete).sum::<f64>() / n;
        let search = reference.as_ref().map(|refs| {
            results
                .iter()
                .zip(refs)
                .map(|(r, e0)| r.energy_discrete - e0)
                .sum::<f64>()
                / n
        });
        let key = if oracle { format!("{name}-oracle") } else { name.to_string() };
        instances.insert(key, results.iter().map(|r| r.record()).collect());
        methods.push(MethodRow {
            method: name.to_string(),
            steps,
            oracle,
            metric: Some(metric),
            energy_relaxed: Some(mean_rel),
            energy_discrete: Some(mean_disc),
            search_error: search,
            examples_per_sec: Some(n / elapsed.max(1e-12)),
            note: None,
        });
        Ok(())
    };

    for method in cfg.str_list("eval.methods") {
        match method.as_str() {
            "viterbi" => {
                if !energy.is_chain() {
                    methods.push(MethodRow::skipped(
                        "viterbi",
                        "exact decoding needs a linear-chain energy; skipped",
                    ));
                    continue;
                }
                let w = energy.chain_matrix(&params).expect("chain matrix");
                let t0 = Instant::now();
                let results: Vec<InferenceResult> = test
                    .par_iter()
                    .map(|ex| {
                        let t1 = Instant::now();
                        let unary = energy.unary_scores(&params, &ex.tokens)?;
                        let (labels, _) = viterbi(&unary, &w)?;
                        let e = energy.energy_discrete_given_unary(
                            &params, &unary, &ex.tokens, &labels,
                        );
                        Ok(InferenceResult {
                            method: "viterbi".into(),
                            relaxed: RelaxedLabelSeq::one_hot(&labels, data.labels),
                            labels,
                            energy_relaxed: e,
                            energy_discrete: e,
                            time_ms: t1.elapsed().as_secs_f64() * 1e3,
                            iterations: 1,
                        })
                    })
                    .collect::<Result<_>>()?;
                summarize("viterbi", 0, false, results, t0.elapsed().as_secs_f64(), &mut methods, &mut instances)?;
            }
            "greedy" => {
                let t0 = Instant::now();
                let results: Vec<InferenceResult> = test
                    .par_iter()
                    .map(|ex| {
                        let t1 = Instant::now();
                        let unary = energy.unary_scores(&params, &ex.tokens)?;
                        let labels = greedy_local_decode(&unary);
                        let e = energy.energy_discrete_given_unary(
                            &params, &unary, &ex.tokens, &labels,
                        );
                        Ok(InferenceResult {
                            method: "greedy".into(),
                            relaxed: RelaxedLabelSeq::one_hot(&labels, data.labels),
                            labels,
                            energy_relaxed: e,
                            energy_discrete: e,
                            time_ms: t1.elapsed().as_secs_f64() * 1e3,
                            iterations: 1,
                        })
                    })
                    .collect::<Result<_>>()?;
                summarize("greedy", 0, false, results, t0.elapsed().as_secs_f64(), &mut methods, &mut instances)?;
            }
            "infnet" => match &net {
                Some(net) => {
                    let t0 = Instant::now();
                    let results: Vec<InferenceResult> = test
                        .par_iter()
                        .map(|ex| infnet_infer(net, &energy, &params, &ex.tokens))
                        .collect::<Result<_>>()?;
                    summarize("infnet", 1, false, results, t0.elapsed().as_secs_f64(), &mut methods, &mut instances)?;
                }
                None => methods.push(MethodRow::skipped(
                    "infnet",
                    "checkpoint holds no inference network; skipped",
                )),
            },
            "gd" => {
                for steps in cfg.usize_list("eval.gd_steps")? {
                    let fixed_lr = cfg.f64_of("eval.gd_lr")?;
                    if oracle {
                        // Oracle tuning peeks at the labels per instance; it
                        // is evaluation-only and flagged in the report.
                        let t0 = Instant::now();
                        let results: Vec<InferenceResult> = test
                            .par_iter()
                            .map(|ex| {
                                let mut best: Option<(f64, InferenceResult)> = None;
                                for &lr in &GD_LR_GRID {
                                    let r = gd_infer(&energy, &params, &ex.tokens, steps, lr, None)?;
                                    let acc = r
                                        .labels
                                        .iter()
                                        .zip(&ex.labels)
                                        .filter(|(a, b)| a == b)
                                        .count() as f64;
                                    if best.as_ref().map_or(true, |(b, _)| acc > *b) {
                                        best = Some((acc, r));
                                    }
                                }
                                Ok(best.expect("nonempty grid").1)
                            })
                            .collect::<Result<_>>()?;
                        summarize("gd", steps, true, results, t0.elapsed().as_secs_f64(), &mut methods, &mut instances)?;
                    } else {
                        let lr = if fixed_lr > 0.0 {
                            fixed_lr
                        } else {
                            tune_gd_lr(&energy, &params, &data.dev, steps)?
                        };
                        let t0 = Instant::now();
                        let results: Vec<InferenceResult> = test
                            .par_iter()
                            .map(|ex| gd_infer(&energy, &params, &ex.tokens, steps, lr, None))
                            .collect::<Result<_>>()?;
                        summarize("gd", steps, false, results, t0.elapsed().as_secs_f64(), &mut methods, &mut instances)?;
                    }
                }
            }
            "instance-tailored" => match &net {
                Some(net) => {
                    let steps = cfg.usize_of("eval.tailor_steps")?;
                    let lr = cfg.f64_of("eval.tailor_lr")?;
                    let t0 = Instant::now();
                    let results: Vec<InferenceResult> = test
                        .par_iter()
                        .map(|ex| instance_tailor(net, &energy, &params, &ex.tokens, steps, lr))
                        .collect::<Result<_>>()?;
                    summarize("instance-tailored", steps, false, results, t0.elapsed().as_secs_f64(), &mut methods, &mut instances)?;
                }
                None => methods.push(MethodRow::skipped(
                    "instance-tailored",
                    "checkpoint holds no inference network; skipped",
                )),
            },
            "warm-start" => match &net {
                Some(net) => {
                    let steps = cfg.usize_of("eval.warm_steps")?;
                    let lr = cfg.f64_of("eval.warm_lr")?;
                    let t0 = Instant::now();
                    let results: Vec<InferenceResult> = test
                        .par_iter()
                        .map(|ex| warm_start_gd(net, &energy, &params, &ex.tokens, steps, lr))
                        .collect::<Result<_>>()?;
                    summarize("warm-start", steps, false, results, t0.elapsed().as_secs_f64(), &mut methods, &mut instances)?;
                }
                None => methods.push(MethodRow::skipped(
                    "warm-start",
                    "checkpoint holds no inference network; skipped",
                )),
            },
            other => {
                return Err(Error::Config(format!("unknown evaluation method {other:?}")))
            }
        }
    }

    Ok(ExperimentReport {
        task: cfg.task()?.name().to_string(),
        seed: cfg.u64_of("seed")?,
        config: cfg.echo(),
        wall_time_s: started.elapsed().as_secs_f64(),
        methods,
        instances,
        train_log: None,
        dataset: data.manifest,
    })
}

/// Pick the learning rate from the standard grid that reaches the lowest
/// mean relaxed energy on (a slice of) the dev set.
pub fn tune_gd_lr(
    energy: &EnergyModel,
    params: &Params,
    dev: &[Example],
    steps: usize,
) -> Result<f64> {
    let sample: Vec<&Example> = dev.iter().take(20).collect();
    if sample.is_empty() {
        return Ok(GD_LR_GRID[GD_LR_GRID.len() - 1]);
    }
    let mut best = (f64::INFINITY, GD_LR_GRID[0]);
    for &lr in &GD_LR_GRID {
        let mean: f64 = sample
            .par_iter()
            .map(|ex| {
                gd_infer(energy, params, &ex.tokens, steps, lr, None).map(|r| r.energy_relaxed)
            })
            .sum::<Result<f64>>()?
            / sample.len() as f64;
        if mean < best.0 {
            best = (mean, lr);
        }
    }
    Ok(best.1)
}

/// Stand-alone brute-force cross-check used by tests and diagnostics: the
/// Viterbi decode must match exhaustive enumeration.
pub fn viterbi_matches_brute_force(
    energy: &EnergyModel,
    params: &Params,
    tokens: &[usize],
) -> Result<bool> {
    let unary = energy.unary_scores(params, tokens)?;
    let w = energy
        .chain_matrix(params)
        .ok_or_else(|| Error::invalid("chain energy required"))?;
    let (vit, _) = viterbi(&unary, &w)?;
    let (bf, _) = brute_force_argmin_by(tokens.len(), energy.num_labels, |labels| {
        energy.energy_discrete_given_unary(params, &unary, tokens, labels)
    })?;
    Ok(vit == bf)
}
