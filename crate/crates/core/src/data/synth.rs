//! Synthetic sequence generators with known ground-truth models.
//!
//! The chain generator samples labels from a first-order Markov chain and
//! tokens from per-label emission tables: a desk-scale stand-in for tagging
//! corpora whose Bayes-optimal decoder (Viterbi on the true model) is
//! computable. The trigram generator plants genuine third-order label
//! dependencies that no first-order model can represent.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::{Example, LabeledDataset, Provenance, Scheme, UNK};

/// Ground-truth chain model: label transitions plus per-label emissions.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChainParams {
    pub num_labels: usize,
    pub vocab: usize,
    /// Row-stochastic `[L, L]` transition table, flattened row-major.
    pub transitions: Vec<f64>,
    /// Row-stochastic `[L, V]` emission table, flattened row-major.
    pub emissions: Vec<f64>,
    /// Initial label distribution.
    pub initial: Vec<f64>,
}

impl ChainParams {
    /// A chain with strong next-label structure: from label `i`, label
    /// `(i+1) % L` has probability `1 - trans_noise` and the rest share the
    /// remainder. Each label owns a disjoint slice of the vocabulary and
    /// emits its own tokens with probability `1 - emit_noise`, anything
    /// else uniformly. Index 0 of the vocabulary is reserved for UNK and is
    /// never emitted.
    pub fn strong_chain(num_labels: usize, vocab: usize, emit_noise: f64, trans_prob: f64) -> Self {
        assert!(vocab > num_labels + 1, "vocab too small for distinct emissions");
        let l = num_labels;
        let mut transitions = vec![0.0; l * l];
        for i in 0..l {
            for j in 0..l {
                transitions[i * l + j] = if j == (i + 1) % l {
                    trans_prob
                } else {
                    (1.0 - trans_prob) / (l - 1) as f64
                };
            }
        }
        // Tokens 1..V split into L contiguous runs.
        let usable = vocab - 1;
        let per = usable / l;
        let mut emissions = vec![0.0; l * vocab];
        for i in 0..l {
            let start = 1 + i * per;
            let end = if i == l - 1 { vocab } else { start + per };
            let own = (end - start) as f64;
            for v in 1..vocab {
                let inside = v >= start && v < end;
                emissions[i * vocab + v] = if inside {
                    (1.0 - emit_noise) / own + emit_noise / usable as f64
                } else {
                    emit_noise / usable as f64
                };
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

    fn validate(&self) -> Result<()> {
        let l = self.num_labels;
        for i in 0..l {
            let row: f64 = self.transitions[i * l..(i + 1) * l].iter().sum();
            if row <= 0.0 {
                return Err(Error::Data(format!("degenerate transition row {i}")));
            }
            let erow: f64 = self.emissions[i * self.vocab..(i + 1) * self.vocab].iter().sum();
            if erow <= 0.0 {
                return Err(Error::Data(format!("degenerate emission row {i}")));
            }
        }
        Ok(())
    }
}

fn sample_from(weights: &[f64], rng: &mut rng::Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn generic_vocab(vocab: usize) -> std::collections::BTreeMap<String, usize> {
    let mut m = std::collections::BTreeMap::new();
    m.insert("<unk>".to_string(), UNK);
    for v in 1..vocab {
        m.insert(format!("w{v}"), v);
    }
    m
}

fn generic_labels(l: usize) -> Vec<String> {
    (0..l).map(|i| format!("L{i}")).collect()
}

/// Sample `n` sequences with lengths uniform in `t_range` (inclusive).
pub fn synth_chain_generate(
    seed: u64,
    n: usize,
    t_range: (usize, usize),
    params: &ChainParams,
) -> Result<LabeledDataset> {
    params.validate()?;
    if t_range.0 == 0 || t_range.0 > t_range.1 {
        return Err(Error::invalid(format!("bad length range {t_range:?}")));
    }
    let mut rng = rng::stream(seed, "data");
    let l = params.num_labels;
    let v = params.vocab;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let t_len = rng.gen_range(t_range.0..=t_range.1);
        let mut labels = Vec::with_capacity(t_len);
        let mut tokens = Vec::with_capacity(t_len);
        let mut prev = sample_from(&params.initial, &mut rng);
        for t in 0..t_len {
            let y = if t == 0 {
                prev
            } else {
                sample_from(&params.transitions[prev * l..(prev + 1) * l], &mut rng)
            };
            labels.push(y);
            tokens.push(sample_from(&params.emissions[y * v..(y + 1) * v], &mut rng));
            prev = y;
        }
        examples.push(Example { tokens, labels });
    }
    Ok(LabeledDataset {
        examples,
        token_vocab: generic_vocab(v),
        label_vocab: generic_labels(l),
        scheme: Scheme::None,
        provenance: Provenance::SyntheticChain { seed, params: params.clone() },
    })
}

/// Ground-truth trigram model: `p(y_t | y_{t-2}, y_{t-1})`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrigramParams {
    pub num_labels: usize,
    pub vocab: usize,
    /// `[L, L, L]` table flattened as `[(a * L + b) * L + c]`, rows
    /// stochastic over `c`.
    pub trigram: Vec<f64>,
    /// Row-stochastic `[L, V]` emission table.
    pub emissions: Vec<f64>,
    /// Distribution over the first two labels, `[L * L]`.
    pub initial_pair: Vec<f64>,
}

impl TrigramParams {
    /// A modular-sum rule: `y_t = (y_{t-2} + y_{t-1}) mod L` with
    /// probability `1 - rule_noise`. Conditioned on either single parent the
    /// next label is uniform, so bigram statistics carry no signal; the
    /// dependency is genuinely third-order. Emissions as in
    /// [`ChainParams::strong_chain`].
    pub fn modular_rule(num_labels: usize, vocab: usize, emit_noise: f64, rule_noise: f64) -> Self {
        let l = num_labels;
        let mut trigram = vec![0.0; l * l * l];
        for a in 0..l {
            for b in 0..l {
                for c in 0..l {
                    trigram[(a * l + b) * l + c] = if c == (a + b) % l {
                        1.0 - rule_noise
                    } else {
                        rule_noise / (l - 1) as f64
                    };
                }
            }
        }
        let chain = ChainParams::strong_chain(l, vocab, emit_noise, 0.5);
        TrigramParams {
            num_labels: l,
            vocab,
            trigram,
            emissions: chain.emissions,
            initial_pair: vec![1.0 / (l * l) as f64; l * l],
        }
    }

    /// A trigram table that ignores `y_{t-2}` (reducible to a bigram chain).
    pub fn from_bigram(chain: &ChainParams) -> Self {
        let l = chain.num_labels;
        let mut trigram = vec![0.0; l * l * l];
        for a in 0..l {
            for b in 0..l {
                for c in 0..l {
                    trigram[(a * l + b) * l + c] = chain.transitions[b * l + c];
                }
            }
        }
        let mut initial_pair = vec![0.0; l * l];
        for a in 0..l {
            for b in 0..l {
                initial_pair[a * l + b] = chain.initial[a] * chain.transitions[a * l + b];
            }
        }
        TrigramParams {
            num_labels: l,
            vocab: chain.vocab,
            trigram,
            emissions: chain.emissions.clone(),
            initial_pair,
        }
    }

    fn validate(&self) -> Result<()> {
        let l = self.num_labels;
        for ab in 0..l * l {
            let row: f64 = self.trigram[ab * l..(ab + 1) * l].iter().sum();
            if row <= 0.0 {
                return Err(Error::Data(format!("degenerate trigram row {ab}")));
            }
        }
        Ok(())
    }
}

/// Sample sequences with genuine third-order label dependencies.
pub fn synth_highorder_generate(
    seed: u64,
    n: usize,
    t_range: (usize, usize),
    params: &TrigramParams,
) -> Result<LabeledDataset> {
    params.validate()?;
    if t_range.0 < 2 || t_range.0 > t_range.1 {
        return Err(Error::invalid(format!(
            "trigram generation needs lengths of at least 2, got {t_range:?}"
        )));
    }
    let mut rng = rng::stream(seed, "data");
    let l = params.num_labels;
    let v = params.vocab;
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let t_len = rng.gen_range(t_range.0..=t_range.1);
        let first_pair = sample_from(&params.initial_pair, &mut rng);
        let mut labels = vec![first_pair / l, first_pair % l];
        while labels.len() < t_len {
            let a = labels[labels.len() - 2];
            let b = labels[labels.len() - 1];
            let row = &params.trigram[(a * l + b) * l..(a * l + b + 1) * l];
            labels.push(sample_from(row, &mut rng));
        }
        let tokens = labels
            .iter()
            .map(|&y| sample_from(&params.emissions[y * v..(y + 1) * v], &mut rng))
            .collect();
        examples.push(Example { tokens, labels });
    }
    Ok(LabeledDataset {
        examples,
        token_vocab: generic_vocab(v),
        label_vocab: generic_labels(l),
        scheme: Scheme::None,
        provenance: Provenance::SyntheticTrigram { seed, params: params.clone() },
    })
}

/// Ground truth for the correlated multi-label task: labels are partitioned
/// into latent groups; a group switches on as a block and contributes its
/// own direction to the feature vector.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MlcSynthParams {
    pub num_labels: usize,
    pub num_features: usize,
    pub num_groups: usize,
    /// Standard deviation of the feature noise.
    pub feature_noise: f64,
    /// Probability that an individual label flips against its group.
    pub label_noise: f64,
    /// Seed fixing the ground-truth group directions. Splits drawn with
    /// different sampling seeds share one feature law iff this matches.
    pub direction_seed: u64,
}

/// Sample a correlated multi-label dataset. Label `j` belongs to group
/// `j % num_groups`; active groups co-activate their member labels, so the
/// label-interaction structure is real and learnable.
pub fn synth_mlc_generate(
    seed: u64,
    n: usize,
    params: &MlcSynthParams,
) -> Result<Vec<super::MlcExample>> {
    if params.num_groups == 0 || params.num_groups > params.num_labels {
        return Err(Error::invalid("group count must be in [1, num_labels]"));
    }
    let mut rng = rng::stream(seed, "data");
    let mut dir_rng = rng::stream(params.direction_seed, "mlc-directions");
    let g = params.num_groups;
    let f = params.num_features;
    // Fixed random direction per group, part of the ground truth.
    let dirs: Vec<Vec<f64>> = (0..g)
        .map(|_| (0..f).map(|_| dir_rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let active: Vec<bool> = (0..g).map(|_| rng.gen::<f64>() < 0.5).collect();
        let mut features = vec![0.0; f];
        for (gi, dir) in dirs.iter().enumerate() {
            if active[gi] {
                for (x, d) in features.iter_mut().zip(dir) {
                    *x += d;
                }
            }
        }
        for x in features.iter_mut() {
            *x += params.feature_noise * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        let labels: Vec<bool> = (0..params.num_labels)
            .map(|j| {
                let base = active[j % g];
                if rng.gen::<f64>() < params.label_noise {
                    !base
                } else {
                    base
                }
            })
            .collect();
        out.push(super::MlcExample { features, labels });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::viterbi;
    use crate::tensor::Tensor;

    #[test]
    fn same_seed_reproduces_exactly() {
        let p = ChainParams::strong_chain(3, 10, 0.2, 0.85);
        let a = synth_chain_generate(11, 20, (3, 8), &p).unwrap();
        let b = synth_chain_generate(11, 20, (3, 8), &p).unwrap();
        assert_eq!(a.examples, b.examples);
        let tp = TrigramParams::modular_rule(3, 10, 0.3, 0.05);
        let c = synth_highorder_generate(11, 20, (3, 8), &tp).unwrap();
        let d = synth_highorder_generate(11, 20, (3, 8), &tp).unwrap();
        assert_eq!(c.examples, d.examples);
    }

    #[test]
    fn deterministic_emissions_make_viterbi_perfect() {
        // One token per label, no noise: decoding the true model recovers
        // the labels exactly.
        let p = ChainParams::strong_chain(3, 10, 0.0, 0.85);
        let ds = synth_chain_generate(5, 30, (3, 8), &p).unwrap();
        let l = p.num_labels;
        let w_data: Vec<f64> = p.transitions.iter().map(|v| v.ln()).collect();
        let w = Tensor::matrix(l, l, w_data);
        for ex in &ds.examples {
            let unary: Vec<Vec<f64>> = ex
                .tokens
                .iter()
                .map(|&tok| {
                    (0..l)
                        .map(|y| p.emissions[y * p.vocab + tok].max(1e-300).ln())
                        .collect()
                })
                .collect();
            let (decoded, _) = viterbi(&unary, &w).unwrap();
            assert_eq!(decoded, ex.labels);
        }
    }

    #[test]
    fn degenerate_transition_rows_are_rejected() {
        let mut p = ChainParams::strong_chain(3, 10, 0.2, 0.85);
        for v in p.transitions[0..3].iter_mut() {
            *v = 0.0;
        }
        assert!(synth_chain_generate(0, 5, (3, 5), &p).is_err());
    }

    #[test]
    fn bigram_reducible_trigram_matches_chain_statistics() {
        // Chi-square on sampled bigram counts: the trigram generator with a
        // bigram-reducible table must match the chain's transition law.
        let l = 3;
        let chain = ChainParams::strong_chain(l, 10, 0.5, 0.7);
        let tri = TrigramParams::from_bigram(&chain);
        let ds = synth_highorder_generate(23, 600, (10, 20), &tri).unwrap();

        let mut counts = vec![0.0f64; l * l];
        let mut from = vec![0.0f64; l];
        for ex in &ds.examples {
            for w in ex.labels.windows(2) {
                counts[w[0] * l + w[1]] += 1.0;
                from[w[0]] += 1.0;
            }
        }
        let mut chi2 = 0.0;
        for a in 0..l {
            for b in 0..l {
                let expect = from[a] * chain.transitions[a * l + b];
                let diff = counts[a * l + b] - expect;
                chi2 += diff * diff / expect.max(1e-9);
            }
        }
        // df = L(L-1) = 6; the 99.9th percentile of chi-square(6) is 22.46.
        assert!(chi2 < 22.46, "chi-square {chi2} too large for a bigram law");
    }

    #[test]
    fn deterministic_trigram_rule_holds_exactly() {
        // With zero rule noise every generated label obeys
        // y_t = (y_{t-2} + y_{t-1}) mod L, so a window-2 model can reach
        // accuracy 1.0 by construction.
        let tp = TrigramParams::modular_rule(4, 12, 0.4, 0.0);
        let ds = synth_highorder_generate(3, 40, (5, 12), &tp).unwrap();
        for ex in &ds.examples {
            for t in 2..ex.labels.len() {
                assert_eq!(ex.labels[t], (ex.labels[t - 2] + ex.labels[t - 1]) % 4);
            }
        }
    }
}
