//! Word features: embedding table plus a bidirectional LSTM encoder.

use crate::error::{Error, Result};
use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::Value;
use crate::tensor::Tensor;

use super::lstm::LstmCell;

/// Produces one `d`-dimensional feature vector per position, the
/// concatenation of forward and backward LSTM states (`d = 2 * hidden`).
#[derive(Clone, Debug)]
pub struct FeatureNet {
    pub prefix: String,
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    /// When false the embedding table is held fixed during training.
    pub fine_tune_embeddings: bool,
    fwd: LstmCell,
    bwd: LstmCell,
}

impl FeatureNet {
    /// `output_dim` must be even; each direction contributes half.
    pub fn new(prefix: impl Into<String>, vocab: usize, embed_dim: usize, output_dim: usize) -> Self {
        assert!(output_dim % 2 == 0, "feature dimension must be even, got {output_dim}");
        let prefix = prefix.into();
        let hidden = output_dim / 2;
        FeatureNet {
            fwd: LstmCell::new(format!("{prefix}.fwd"), embed_dim, hidden),
            bwd: LstmCell::new(format!("{prefix}.bwd"), embed_dim, hidden),
            prefix,
            vocab,
            embed_dim,
            hidden,
            fine_tune_embeddings: true,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        let embed = Tensor::uniform_init(vec![self.vocab, self.embed_dim], self.embed_dim, rng);
        if self.fine_tune_embeddings {
            params.insert(format!("{}.embed", self.prefix), embed);
        } else {
            params.insert_fixed(format!("{}.embed", self.prefix), embed);
        }
        self.fwd.init(params, rng);
        self.bwd.init(params, rng);
    }

    /// Per-position feature vectors for a token sequence.
    pub fn forward(&self, bound: &BoundParams, tokens: &[usize]) -> Result<Vec<Value>> {
        if tokens.is_empty() {
            return Err(Error::invalid("feature forward on an empty sequence"));
        }
        let table = bound.get(&format!("{}.embed", self.prefix));
        for &t in tokens {
            if t >= self.vocab {
                return Err(Error::invalid(format!(
                    "token index {t} outside vocabulary of size {}",
                    self.vocab
                )));
            }
        }
        let embeds: Vec<Value> = tokens.iter().map(|&t| table.embed_row(t)).collect();
        let tape = embeds[0].tape();
        let fwd_states = self.fwd.run(bound, &tape, &embeds);
        let rev: Vec<Value> = embeds.iter().rev().cloned().collect();
        let mut bwd_states = self.bwd.run(bound, &tape, &rev);
        bwd_states.reverse();
        Ok(fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(f, b)| Value::concat(&[f.clone(), b.clone()]))
            .collect())
    }

    /// Tape-free forward in plain `f64`; used where features are constants
    /// (gradient-descent inference, Viterbi scoring, brute-force oracles).
    pub fn forward_f64(&self, params: &Params, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        if tokens.is_empty() {
            return Err(Error::invalid("feature forward on an empty sequence"));
        }
        let table = params.get(&format!("{}.embed", self.prefix));
        let e = self.embed_dim;
        let embeds: Vec<Vec<f64>> = tokens
            .iter()
            .map(|&t| {
                if t >= self.vocab {
                    return Err(Error::invalid(format!(
                        "token index {t} outside vocabulary of size {}",
                        self.vocab
                    )));
                }
                Ok(table.data()[t * e..(t + 1) * e].to_vec())
            })
            .collect::<Result<_>>()?;
        let fwd_states = self.fwd.run_f64(params, &embeds);
        let rev: Vec<Vec<f64>> = embeds.iter().rev().cloned().collect();
        let mut bwd_states = self.bwd.run_f64(params, &rev);
        bwd_states.reverse();
        Ok(fwd_states
            .into_iter()
            .zip(bwd_states)
            .map(|(mut f, b)| {
                f.extend(b);
                f
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tape::Tape;

    fn net_and_params(seed: u64, d: usize) -> (FeatureNet, Params) {
        let net = FeatureNet::new("feat", 12, 8, d);
        let mut params = Params::new();
        net.init(&mut params, &mut rng::stream(seed, "init"));
        (net, params)
    }

    #[test]
    fn length_five_input_yields_five_d100_vectors() {
        let (net, params) = net_and_params(0, 100);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let out = net.forward(&bound, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(out.len(), 5);
        for v in &out {
            assert_eq!(v.shape(), vec![100]);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (net, params) = net_and_params(3, 10);
        let run = || {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            net.forward(&bound, &[3, 1, 4])
                .unwrap()
                .iter()
                .map(|v| v.data())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reversing_the_input_changes_outputs() {
        // Exercises bidirectionality: position 0 of the reversed sequence is
        // not a simple copy of anything from the original run.
        let (net, params) = net_and_params(5, 10);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let fwd = net.forward(&bound, &[1, 2, 3, 4, 5]).unwrap();
        let rev = net.forward(&bound, &[5, 4, 3, 2, 1]).unwrap();
        let diff: f64 = fwd[0]
            .data()
            .iter()
            .zip(rev[4].data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "bidirectional encoder collapsed to a unidirectional one");
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let (net, params) = net_and_params(0, 10);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        assert!(net.forward(&bound, &[]).is_err());
    }
}
