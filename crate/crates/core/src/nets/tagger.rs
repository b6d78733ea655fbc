//! Inference-network architectures.
//!
//! Sequence taggers (convolutional, bidirectional recurrent, encoder-decoder
//! with fixed position-aligned attention) map token sequences to per-position
//! label distributions. The feed-forward variant handles multi-label
//! classification, producing one sigmoid per label.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;

use super::lstm::LstmCell;
use super::Linear;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InferenceArch {
    /// Convolutional tagger; same-padding with a zero pad vector, so short
    /// inputs (even length 1) are valid. Widths must be odd.
    Cnn { widths: Vec<usize>, layers: usize },
    /// Bidirectional recurrent tagger.
    Rnn { layers: usize },
    /// Encoder-decoder whose decoder step i consumes encoder state i
    /// directly (no learned attention weights).
    Seq2Seq,
    /// Feed-forward net over a fixed-length feature vector; L sigmoids.
    Mlp { layers: usize },
}

/// A network trained to map inputs directly to relaxed outputs.
#[derive(Clone, Debug)]
pub struct InferenceNet {
    pub prefix: String,
    pub arch: InferenceArch,
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub num_labels: usize,
    /// Input feature length for the MLP architecture (unused otherwise).
    pub input_dim: usize,
}

impl InferenceNet {
    pub fn new(
        prefix: impl Into<String>,
        arch: InferenceArch,
        vocab: usize,
        embed_dim: usize,
        hidden: usize,
        num_labels: usize,
    ) -> Self {
        if let InferenceArch::Cnn { widths, .. } = &arch {
            assert!(
                widths.iter().all(|w| w % 2 == 1),
                "convolution widths must be odd for same-padding, got {widths:?}"
            );
        }
        InferenceNet {
            prefix: prefix.into(),
            arch,
            vocab,
            embed_dim,
            hidden,
            num_labels,
            input_dim: 0,
        }
    }

    /// Feed-forward net for multi-label classification over `input_dim`
    /// features.
    pub fn new_mlp(
        prefix: impl Into<String>,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        num_labels: usize,
    ) -> Self {
        InferenceNet {
            prefix: prefix.into(),
            arch: InferenceArch::Mlp { layers },
            vocab: 0,
            embed_dim: 0,
            hidden,
            num_labels,
            input_dim,
        }
    }

    fn feature_dim(&self) -> usize {
        match &self.arch {
            InferenceArch::Cnn { .. } => self.hidden,
            InferenceArch::Rnn { .. } => 2 * self.hidden,
            InferenceArch::Seq2Seq => self.hidden,
            InferenceArch::Mlp { .. } => self.hidden,
        }
    }

    fn out_head(&self) -> Linear {
        Linear::new(format!("{}.out", self.prefix), self.feature_dim(), self.num_labels)
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        match &self.arch {
            InferenceArch::Cnn { widths, layers } => {
                params.insert(
                    format!("{}.embed", self.prefix),
                    Tensor::uniform_init(vec![self.vocab, self.embed_dim], self.embed_dim, rng),
                );
                for l in 0..*layers {
                    let in_dim = if l == 0 { self.embed_dim } else { self.hidden };
                    for &w in widths {
                        Linear::new(
                            format!("{}.conv{l}.w{w}", self.prefix),
                            w * in_dim,
                            self.hidden,
                        )
                        .init(params, rng);
                    }
                }
            }
            InferenceArch::Rnn { layers } => {
                params.insert(
                    format!("{}.embed", self.prefix),
                    Tensor::uniform_init(vec![self.vocab, self.embed_dim], self.embed_dim, rng),
                );
                for l in 0..*layers {
                    let in_dim = if l == 0 { self.embed_dim } else { 2 * self.hidden };
                    LstmCell::new(format!("{}.l{l}.fwd", self.prefix), in_dim, self.hidden)
                        .init(params, rng);
                    LstmCell::new(format!("{}.l{l}.bwd", self.prefix), in_dim, self.hidden)
                        .init(params, rng);
                }
            }
            InferenceArch::Seq2Seq => {
                params.insert(
                    format!("{}.embed", self.prefix),
                    Tensor::uniform_init(vec![self.vocab, self.embed_dim], self.embed_dim, rng),
                );
                LstmCell::new(format!("{}.enc.fwd", self.prefix), self.embed_dim, self.hidden)
                    .init(params, rng);
                LstmCell::new(format!("{}.enc.bwd", self.prefix), self.embed_dim, self.hidden)
                    .init(params, rng);
                LstmCell::new(format!("{}.dec", self.prefix), 2 * self.hidden, self.hidden)
                    .init(params, rng);
            }
            InferenceArch::Mlp { layers } => {
                for l in 0..*layers {
                    let in_dim = if l == 0 { self.input_dim } else { self.hidden };
                    Linear::new(format!("{}.fc{l}", self.prefix), in_dim, self.hidden)
                        .init(params, rng);
                }
            }
        }
        self.out_head().init(params, rng);
    }

    /// Per-position feature vectors before the output head.
    pub fn encode(&self, bound: &BoundParams, tokens: &[usize]) -> Result<Vec<Value>> {
        if matches!(self.arch, InferenceArch::Mlp { .. }) {
            return Err(Error::invalid(
                "MLC feed-forward net cannot run on a token sequence task",
            ));
        }
        if tokens.is_empty() {
            return Err(Error::invalid("inference net forward on an empty sequence"));
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
        match &self.arch {
            InferenceArch::Cnn { widths, layers } => {
                let mut xs = embeds;
                for l in 0..*layers {
                    let in_dim = if l == 0 { self.embed_dim } else { self.hidden };
                    let pad = tape.vector(&vec![0.0; in_dim]);
                    let mut next = Vec::with_capacity(xs.len());
                    for t in 0..xs.len() {
                        let mut acc: Option<Value> = None;
                        for &w in widths {
                            let half = w / 2;
                            let window: Vec<Value> = (0..w)
                                .map(|k| {
                                    let pos = t as isize + k as isize - half as isize;
                                    if pos < 0 || pos >= xs.len() as isize {
                                        pad.clone()
                                    } else {
                                        xs[pos as usize].clone()
                                    }
                                })
                                .collect();
                            let lin = Linear::new(
                                format!("{}.conv{l}.w{w}", self.prefix),
                                w * in_dim,
                                self.hidden,
                            );
                            let z = lin.forward(bound, &Value::concat(&window));
                            acc = Some(match acc {
                                Some(a) => a.add(&z),
                                None => z,
                            });
                        }
                        next.push(acc.expect("at least one filter width").relu());
                    }
                    xs = next;
                }
                Ok(xs)
            }
            InferenceArch::Rnn { layers } => {
                let mut xs = embeds;
                for l in 0..*layers {
                    let fwd = LstmCell::new(
                        format!("{}.l{l}.fwd", self.prefix),
                        if l == 0 { self.embed_dim } else { 2 * self.hidden },
                        self.hidden,
                    );
                    let bwd = LstmCell::new(
                        format!("{}.l{l}.bwd", self.prefix),
                        if l == 0 { self.embed_dim } else { 2 * self.hidden },
                        self.hidden,
                    );
                    let f = fwd.run(bound, &tape, &xs);
                    let rev: Vec<Value> = xs.iter().rev().cloned().collect();
                    let mut b = bwd.run(bound, &tape, &rev);
                    b.reverse();
                    xs = f
                        .iter()
                        .zip(&b)
                        .map(|(x, y)| Value::concat(&[x.clone(), y.clone()]))
                        .collect();
                }
                Ok(xs)
            }
            InferenceArch::Seq2Seq => {
                let enc_f = LstmCell::new(
                    format!("{}.enc.fwd", self.prefix),
                    self.embed_dim,
                    self.hidden,
                );
                let enc_b = LstmCell::new(
                    format!("{}.enc.bwd", self.prefix),
                    self.embed_dim,
                    self.hidden,
                );
                let f = enc_f.run(bound, &tape, &embeds);
                let rev: Vec<Value> = embeds.iter().rev().cloned().collect();
                let mut b = enc_b.run(bound, &tape, &rev);
                b.reverse();
                // Fixed attention: decoder step i deterministically attends
                // to (consumes) encoder state i.
                let enc_states: Vec<Value> = f
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| Value::concat(&[x.clone(), y.clone()]))
                    .collect();
                let dec = LstmCell::new(format!("{}.dec", self.prefix), 2 * self.hidden, self.hidden);
                Ok(dec.run(bound, &tape, &enc_states))
            }
            InferenceArch::Mlp { .. } => Err(Error::invalid(
                "MLC feed-forward net cannot run on a token sequence task",
            )),
        }
    }

    /// Pre-softmax logit vectors, one per position.
    pub fn logits(&self, bound: &BoundParams, tokens: &[usize]) -> Result<Vec<Value>> {
        let feats = self.encode(bound, tokens)?;
        let head = self.out_head();
        Ok(feats.iter().map(|x| head.forward(bound, x)).collect())
    }

    /// Relaxed output: per-position label distributions.
    pub fn forward(&self, bound: &BoundParams, tokens: &[usize]) -> Result<Vec<Value>> {
        Ok(self.logits(bound, tokens)?.iter().map(|z| z.softmax()).collect())
    }

    /// Tape-free logits in plain `f64`, for fixed-parameter inference and
    /// evaluation passes.
    pub fn logits_f64(&self, params: &Params, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        use crate::tensor::f64math::{add_assign, matvec};
        if matches!(self.arch, InferenceArch::Mlp { .. }) {
            return Err(Error::invalid(
                "MLC feed-forward net cannot run on a token sequence task",
            ));
        }
        if tokens.is_empty() {
            return Err(Error::invalid("inference net forward on an empty sequence"));
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
        let feats = match &self.arch {
            InferenceArch::Cnn { widths, layers } => {
                let mut xs = embeds;
                for l in 0..*layers {
                    let in_dim = if l == 0 { self.embed_dim } else { self.hidden };
                    let zero = vec![0.0; in_dim];
                    let conv: Vec<(&Tensor, &Tensor, usize)> = widths
                        .iter()
                        .map(|&w| {
                            (
                                params.get(&format!("{}.conv{l}.w{w}.w", self.prefix)),
                                params.get(&format!("{}.conv{l}.w{w}.b", self.prefix)),
                                w,
                            )
                        })
                        .collect();
                    let mut window = vec![0.0; widths.iter().max().unwrap() * in_dim];
                    let mut next = Vec::with_capacity(xs.len());
                    for t in 0..xs.len() {
                        let mut acc = vec![0.0; self.hidden];
                        for &(wt, bt, w) in &conv {
                            let half = w / 2;
                            for k in 0..w {
                                let pos = t as isize + k as isize - half as isize;
                                let src = if pos < 0 || pos >= xs.len() as isize {
                                    &zero
                                } else {
                                    &xs[pos as usize]
                                };
                                window[k * in_dim..(k + 1) * in_dim].copy_from_slice(src);
                            }
                            let cols = w * in_dim;
                            for (j, (a, b)) in acc.iter_mut().zip(bt.data()).enumerate() {
                                let row = &wt.data()[j * cols..(j + 1) * cols];
                                let mut s = *b;
                                for (x, y) in row.iter().zip(&window[..cols]) {
                                    s += x * y;
                                }
                                *a += s;
                            }
                        }
                        for v in acc.iter_mut() {
                            *v = v.max(0.0);
                        }
                        next.push(acc);
                    }
                    xs = next;
                }
                xs
            }
            InferenceArch::Rnn { layers } => {
                let mut xs = embeds;
                for l in 0..*layers {
                    let in_dim = if l == 0 { self.embed_dim } else { 2 * self.hidden };
                    let fwd = LstmCell::new(format!("{}.l{l}.fwd", self.prefix), in_dim, self.hidden);
                    let bwd = LstmCell::new(format!("{}.l{l}.bwd", self.prefix), in_dim, self.hidden);
                    let f = fwd.run_f64(params, &xs);
                    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
                    let mut b = bwd.run_f64(params, &rev);
                    b.reverse();
                    xs = f
                        .into_iter()
                        .zip(b)
                        .map(|(mut x, y)| {
                            x.extend(y);
                            x
                        })
                        .collect();
                }
                xs
            }
            InferenceArch::Seq2Seq => {
                let enc_f =
                    LstmCell::new(format!("{}.enc.fwd", self.prefix), self.embed_dim, self.hidden);
                let enc_b =
                    LstmCell::new(format!("{}.enc.bwd", self.prefix), self.embed_dim, self.hidden);
                let f = enc_f.run_f64(params, &embeds);
                let rev: Vec<Vec<f64>> = embeds.iter().rev().cloned().collect();
                let mut b = enc_b.run_f64(params, &rev);
                b.reverse();
                let enc_states: Vec<Vec<f64>> = f
                    .into_iter()
                    .zip(b)
                    .map(|(mut x, y)| {
                        x.extend(y);
                        x
                    })
                    .collect();
                let dec = LstmCell::new(format!("{}.dec", self.prefix), 2 * self.hidden, self.hidden);
                dec.run_f64(params, &enc_states)
            }
            InferenceArch::Mlp { .. } => unreachable!("rejected above"),
        };
        let w = params.get(&format!("{}.out.w", self.prefix));
        let b = params.get(&format!("{}.out.b", self.prefix));
        Ok(feats
            .iter()
            .map(|x| {
                let mut z = matvec(w, x);
                add_assign(&mut z, b.data());
                z
            })
            .collect())
    }

    /// Tape-free relaxed output rows.
    pub fn forward_f64(&self, params: &Params, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
        use crate::tensor::f64math::softmax;
        Ok(self
            .logits_f64(params, tokens)?
            .iter()
            .map(|z| softmax(z))
            .collect())
    }

    /// Tape-free MLC probabilities.
    pub fn mlc_forward_f64(&self, params: &Params, x: &[f64]) -> Result<Vec<f64>> {
        use crate::tensor::f64math::{add_assign, matvec, sigmoid};
        let layers = match &self.arch {
            InferenceArch::Mlp { layers } => *layers,
            other => {
                return Err(Error::invalid(format!(
                    "architecture {other:?} cannot run on an MLC task"
                )))
            }
        };
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "feature vector length {} does not match input_dim {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut h = x.to_vec();
        for l in 0..layers {
            let w = params.get(&format!("{}.fc{l}.w", self.prefix));
            let b = params.get(&format!("{}.fc{l}.b", self.prefix));
            let mut z = matvec(w, &h);
            add_assign(&mut z, b.data());
            for v in z.iter_mut() {
                *v = v.max(0.0);
            }
            h = z;
        }
        let w = params.get(&format!("{}.out.w", self.prefix));
        let b = params.get(&format!("{}.out.b", self.prefix));
        let mut z = matvec(w, &h);
        add_assign(&mut z, b.data());
        Ok(z.iter().map(|&v| sigmoid(v)).collect())
    }

    /// MLC logits for a fixed-length feature vector.
    pub fn mlc_logits(&self, bound: &BoundParams, tape: &Rc<Tape>, x: &[f64]) -> Result<Value> {
        let layers = match &self.arch {
            InferenceArch::Mlp { layers } => *layers,
            other => {
                return Err(Error::invalid(format!(
                    "architecture {other:?} cannot run on an MLC task"
                )))
            }
        };
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "feature vector length {} does not match input_dim {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut h = tape.vector(x);
        for l in 0..layers {
            let in_dim = if l == 0 { self.input_dim } else { self.hidden };
            let lin = Linear::new(format!("{}.fc{l}", self.prefix), in_dim, self.hidden);
            h = lin.forward(bound, &h).relu();
        }
        Ok(self.out_head().forward(bound, &h))
    }

    /// MLC output: a vector in `[0,1]^L` of per-label probabilities.
    pub fn mlc_forward(&self, bound: &BoundParams, tape: &Rc<Tape>, x: &[f64]) -> Result<Value> {
        Ok(self.mlc_logits(bound, tape, x)?.sigmoid())
    }
}
