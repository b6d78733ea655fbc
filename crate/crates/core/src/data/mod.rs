//! Dataset ingestion, synthetic generation with known oracles, corruption,
//! and evaluation metrics.

mod conll;
mod metrics;
mod synth;

pub use conll::{load_conll, write_conll};
pub use metrics::{
    example_f1, span_f1, throughput, token_accuracy, MetricReport, Scheme, SpanScores,
};
pub use synth::{
    synth_chain_generate, synth_highorder_generate, synth_mlc_generate, ChainParams,
    MlcSynthParams, TrigramParams,
};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng;

/// One labeled sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
}

/// One multi-label example: fixed-length features and label bits.
#[derive(Clone, Debug, PartialEq)]
pub struct MlcExample {
    pub features: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Where a dataset came from; synthetic provenance carries enough to
/// re-sample identically.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum Provenance {
    File { path: String },
    SyntheticChain { seed: u64, params: ChainParams },
    SyntheticTrigram { seed: u64, params: TrigramParams },
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub examples: Vec<Example>,
    /// token string -> index; index 0 is reserved for the UNK symbol.
    pub token_vocab: BTreeMap<String, usize>,
    pub label_vocab: Vec<String>,
    pub scheme: Scheme,
    pub provenance: Provenance,
}

/// Index of the reserved unknown-word symbol.
pub const UNK: usize = 0;

impl LabeledDataset {
    pub fn num_tokens_vocab(&self) -> usize {
        self.token_vocab.len()
    }

    pub fn num_labels(&self) -> usize {
        self.label_vocab.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Manifest summary for reports.
    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "n_sequences": self.examples.len(),
            "V": self.num_tokens_vocab(),
            "L": self.num_labels(),
            "scheme": self.scheme.name(),
            "provenance": serde_json::to_value(&self.provenance).unwrap(),
        })
    }

    /// Replace each token independently by UNK with probability `alpha`;
    /// labels untouched.
    pub fn unk_corrupt(&self, alpha: f64, seed: u64) -> Result<LabeledDataset> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("corruption rate {alpha} outside [0, 1]")));
        }
        use rand::Rng as _;
        let mut rng = rng::stream(seed, "unk-corrupt");
        let mut out = self.clone();
        for ex in &mut out.examples {
            for t in &mut ex.tokens {
                if rng.gen::<f64>() < alpha {
                    *t = UNK;
                }
            }
        }
        Ok(out)
    }

    /// Re-index another dataset's tokens through this dataset's vocabulary;
    /// unseen tokens map to UNK. Token strings must be recoverable, so this
    /// only applies to file-backed datasets.
    pub fn reindex(&self, strings: &[Vec<String>], labels: &[Vec<usize>]) -> Vec<Example> {
        strings
            .iter()
            .zip(labels)
            .map(|(toks, labs)| Example {
                tokens: toks
                    .iter()
                    .map(|s| *self.token_vocab.get(s).unwrap_or(&UNK))
                    .collect(),
                labels: labs.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        synth_chain_generate(7, 50, (4, 9), &ChainParams::strong_chain(3, 10, 0.2, 0.85)).unwrap()
    }

    #[test]
    fn corrupt_zero_is_identity_and_one_is_all_unk() {
        let ds = tiny();
        let same = ds.unk_corrupt(0.0, 1).unwrap();
        assert_eq!(
            same.examples.iter().map(|e| &e.tokens).collect::<Vec<_>>(),
            ds.examples.iter().map(|e| &e.tokens).collect::<Vec<_>>()
        );
        let all = ds.unk_corrupt(1.0, 1).unwrap();
        for ex in &all.examples {
            assert!(ex.tokens.iter().all(|&t| t == UNK));
        }
        // Labels untouched either way.
        for (a, b) in ds.examples.iter().zip(&all.examples) {
            assert_eq!(a.labels, b.labels);
        }
    }

    #[test]
    fn corrupt_rate_concentrates_near_alpha() {
        let ds = synth_chain_generate(3, 400, (20, 30), &ChainParams::strong_chain(3, 12, 0.3, 0.8))
            .unwrap();
        let corrupted = ds.unk_corrupt(0.3, 9).unwrap();
        let total: usize = corrupted.examples.iter().map(|e| e.tokens.len()).sum();
        let unks: usize = corrupted
            .examples
            .iter()
            .flat_map(|e| e.tokens.iter())
            .filter(|&&t| t == UNK)
            .count();
        // Binomial(n, 0.3): three standard deviations around the mean.
        let n = total as f64;
        let sd = (n * 0.3 * 0.7).sqrt();
        let lo = 0.3 * n - 3.0 * sd;
        let hi = 0.3 * n + 3.0 * sd;
        // The base dataset has its own UNK-free tokens (generator reserves
        // index 0), so every UNK here comes from corruption.
        assert!(
            (unks as f64) > lo && (unks as f64) < hi,
            "unk count {unks} outside [{lo:.1}, {hi:.1}] of n={n}"
        );
    }

    #[test]
    fn corrupt_rejects_bad_alpha() {
        assert!(tiny().unk_corrupt(1.5, 0).is_err());
    }
}
