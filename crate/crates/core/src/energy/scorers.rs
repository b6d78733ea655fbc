//! Scorers over windows of M+1 consecutive relaxed labels.
//!
//! Each scorer provides a tape route and a discrete `f64` route written
//! directly from the discrete definition. VKP, CNN and self-attention
//! produce scores (folded into the energy with the leading minus); the
//! windowed tag-LM produces a negative log-likelihood that enters the
//! energy additively.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nets::{Direction, LabelLM, Linear};
use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::{Tape, Value, SAFE_LOG_FLOOR};
use crate::tensor::{f64math, Tensor};

/// How a scorer's window sum enters the total energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermContribution {
    /// Negated together with the unary scores (higher score = lower energy).
    Score,
    /// Added as-is (already an energy, e.g. a negative log-likelihood).
    AdditiveEnergy,
}

#[derive(Clone, Debug)]
pub enum HighOrderScorer {
    Vkp(VkpScorer),
    Cnn(CnnScorer),
    Tlm(WindowTlmScorer),
    SelfAtt(SelfAttScorer),
}

impl HighOrderScorer {
    pub fn window(&self) -> usize {
        match self {
            HighOrderScorer::Vkp(s) => s.window,
            HighOrderScorer::Cnn(s) => s.window,
            HighOrderScorer::Tlm(s) => s.window,
            HighOrderScorer::SelfAtt(s) => s.window,
        }
    }

    pub fn contribution(&self) -> TermContribution {
        match self {
            HighOrderScorer::Tlm(_) => TermContribution::AdditiveEnergy,
            _ => TermContribution::Score,
        }
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        match self {
            HighOrderScorer::Vkp(s) => s.init(params, rng),
            HighOrderScorer::Cnn(s) => s.init(params, rng),
            HighOrderScorer::Tlm(s) => s.lm.init(params, rng),
            HighOrderScorer::SelfAtt(s) => s.init(params, rng),
        }
    }

    /// Sum of window scores over all complete windows (positions
    /// `M+1..=T` 1-based); zero when the sequence is shorter than `M+1`.
    pub fn window_sum(&self, bound: &BoundParams, tape: &Rc<Tape>, rows: &[Value]) -> Result<Value> {
        let m = self.window();
        let mut total = tape.scalar(0.0);
        if rows.len() <= m {
            return Ok(total);
        }
        // VKP shares one materialized tensor across windows.
        let vkp_w = match self {
            HighOrderScorer::Vkp(s) => Some(s.build_w(bound, tape)),
            _ => None,
        };
        for t in m..rows.len() {
            let window = &rows[t - m..=t];
            let f = match self {
                HighOrderScorer::Vkp(s) => s.score_with_w(vkp_w.as_ref().unwrap(), window),
                HighOrderScorer::Cnn(s) => s.score_window(bound, window),
                HighOrderScorer::Tlm(s) => s.score_window(bound, tape, window)?,
                HighOrderScorer::SelfAtt(s) => s.score_window(bound, window),
            };
            total = total.add(&f);
        }
        Ok(total)
    }

    pub fn window_sum_discrete(&self, params: &Params, labels: &[usize]) -> f64 {
        let m = self.window();
        if labels.len() <= m {
            return 0.0;
        }
        (m..labels.len())
            .map(|t| {
                let window = &labels[t - m..=t];
                match self {
                    HighOrderScorer::Vkp(s) => s.entry_discrete(params, window),
                    HighOrderScorer::Cnn(s) => s.score_discrete(params, window),
                    HighOrderScorer::Tlm(s) => s.score_discrete(params, window),
                    HighOrderScorer::SelfAtt(s) => {
                        let rows: Vec<Vec<f64>> = window
                            .iter()
                            .map(|&y| {
                                let mut r = vec![0.0; s.num_labels];
                                r[y] = 1.0;
                                r
                            })
                            .collect();
                        s.score_f64(params, &rows)
                    }
                }
            })
            .sum()
    }
}

/// Recursive vectorized outer product: `product(v) = v`,
/// `product(a, b) = vec(a b^T)` flattened row-major (last index fastest).
pub fn product_flatten(rows: &[Value]) -> Value {
    assert!(!rows.is_empty(), "product of zero vectors");
    let mut acc = rows[0].clone();
    for r in &rows[1..] {
        let m = acc.shape()[0];
        let n = r.shape()[0];
        acc = acc
            .reshape(vec![m, 1])
            .matmul(&r.clone().reshape(vec![1, n]))
            .reshape(vec![m * n]);
    }
    acc
}

/// Label-tuple scorer through a vectorized Kronecker product: the window's
/// first M rows are flattened into a joint indicator which selects a row of
/// a tensor whose entries come from label embeddings:
/// `W[i..k] = v . LayerNorm(e + MLP(e))` with `e = [e_i; ...; e_k]`.
///
/// The layer norm carries learned gain and bias.
#[derive(Clone, Debug)]
pub struct VkpScorer {
    pub prefix: String,
    pub num_labels: usize,
    pub window: usize,
    pub label_embed: usize,
}

impl VkpScorer {
    pub fn new(
        prefix: impl Into<String>,
        num_labels: usize,
        window: usize,
        label_embed: usize,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid(
                "VKP window must be at least 1; the unary term already covers single labels",
            ));
        }
        Ok(VkpScorer { prefix: prefix.into(), num_labels, window, label_embed })
    }

    fn dim(&self) -> usize {
        (self.window + 1) * self.label_embed
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        let d = self.dim();
        params.insert(
            format!("{}.embed", self.prefix),
            Tensor::uniform_init(vec![self.num_labels, self.label_embed], self.label_embed, rng),
        );
        Linear::new(format!("{}.mlp0", self.prefix), d, d).init(params, rng);
        Linear::new(format!("{}.mlp1", self.prefix), d, d).init(params, rng);
        params.insert(format!("{}.ln.gain", self.prefix), Tensor::new(vec![d], vec![1.0; d]));
        params.insert(format!("{}.ln.bias", self.prefix), Tensor::zeros(vec![d]));
        params.insert(format!("{}.v", self.prefix), Tensor::uniform_init(vec![d], d, rng));
    }

    /// Materialize the scoring tensor reshaped to `[L^M, L]`. Entries are
    /// laid out row-major over label tuples, last index fastest.
    pub fn build_w(&self, bound: &BoundParams, tape: &Rc<Tape>) -> Value {
        let l = self.num_labels;
        let k = self.window + 1;
        let table = bound.get(&format!("{}.embed", self.prefix));
        let embeds: Vec<Value> = (0..l).map(|i| table.embed_row(i)).collect();
        let mlp0 = Linear::new(format!("{}.mlp0", self.prefix), self.dim(), self.dim());
        let mlp1 = Linear::new(format!("{}.mlp1", self.prefix), self.dim(), self.dim());
        let gain = bound.get(&format!("{}.ln.gain", self.prefix));
        let bias = bound.get(&format!("{}.ln.bias", self.prefix));
        let v = bound.get(&format!("{}.v", self.prefix));

        let total = l.pow(k as u32);
        let mut entries = Vec::with_capacity(total);
        let mut tuple = vec![0usize; k];
        for flat in 0..total {
            let mut rem = flat;
            for slot in (0..k).rev() {
                tuple[slot] = rem % l;
                rem /= l;
            }
            let e = Value::concat(&tuple.iter().map(|&i| embeds[i].clone()).collect::<Vec<_>>());
            let h = e.add(&mlp1.forward(bound, &mlp0.forward(bound, &e).relu()));
            let normed = h.layer_norm(gain, bias);
            entries.push(v.dot(&normed));
        }
        let _ = tape;
        Value::concat(&entries).reshape(vec![l.pow(self.window as u32), l])
    }

    /// Score one window against a prebuilt tensor.
    pub fn score_with_w(&self, w: &Value, window: &[Value]) -> Value {
        debug_assert_eq!(window.len(), self.window + 1);
        let prod = product_flatten(&window[..self.window]);
        prod.vecmat(w).dot(&window[self.window])
    }

    /// Standalone window score (builds the tensor internally).
    pub fn score_window(&self, bound: &BoundParams, tape: &Rc<Tape>, window: &[Value]) -> Value {
        let w = self.build_w(bound, tape);
        self.score_with_w(&w, window)
    }

    /// Discrete route: the tensor entry for a label tuple, computed directly
    /// from the embeddings in plain `f64`.
    pub fn entry_discrete(&self, params: &Params, tuple: &[usize]) -> f64 {
        debug_assert_eq!(tuple.len(), self.window + 1);
        let table = params.get(&format!("{}.embed", self.prefix));
        let nl = self.label_embed;
        let mut e = Vec::with_capacity(self.dim());
        for &i in tuple {
            e.extend_from_slice(&table.data()[i * nl..(i + 1) * nl]);
        }
        let w0 = params.get(&format!("{}.mlp0.w", self.prefix));
        let b0 = params.get(&format!("{}.mlp0.b", self.prefix));
        let w1 = params.get(&format!("{}.mlp1.w", self.prefix));
        let b1 = params.get(&format!("{}.mlp1.b", self.prefix));
        let mut h0 = f64math::matvec(w0, &e);
        f64math::add_assign(&mut h0, b0.data());
        for v in h0.iter_mut() {
            *v = v.max(0.0);
        }
        let mut h1 = f64math::matvec(w1, &h0);
        f64math::add_assign(&mut h1, b1.data());
        f64math::add_assign(&mut h1, &e);

        // Layer norm, same epsilon as the tape op.
        let n = h1.len() as f64;
        let mu = h1.iter().sum::<f64>() / n;
        let var = h1.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let s = (var + 1e-5).sqrt();
        let gain = params.get(&format!("{}.ln.gain", self.prefix));
        let bias = params.get(&format!("{}.ln.bias", self.prefix));
        let v = params.get(&format!("{}.v", self.prefix));
        (0..h1.len())
            .map(|j| v.data()[j] * (gain.data()[j] * (h1[j] - mu) / s + bias.data()[j]))
            .sum()
    }
}

/// Filters over the concatenation of M+1 consecutive label rows:
/// `sum_n relu(W_n . [y_{t-M}; ...; y_t] + b_n)`.
#[derive(Clone, Debug)]
pub struct CnnScorer {
    pub prefix: String,
    pub num_labels: usize,
    pub window: usize,
    pub filters: usize,
}

impl CnnScorer {
    pub fn new(prefix: impl Into<String>, num_labels: usize, window: usize, filters: usize) -> Self {
        CnnScorer { prefix: prefix.into(), num_labels, window, filters }
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        let in_dim = (self.window + 1) * self.num_labels;
        params.insert(
            format!("{}.w", self.prefix),
            Tensor::uniform_init(vec![self.filters, in_dim], in_dim, rng),
        );
        params.insert(format!("{}.b", self.prefix), Tensor::zeros(vec![self.filters]));
    }

    pub fn score_window(&self, bound: &BoundParams, window: &[Value]) -> Value {
        debug_assert_eq!(window.len(), self.window + 1);
        let w = bound.get(&format!("{}.w", self.prefix));
        let b = bound.get(&format!("{}.b", self.prefix));
        w.matvec(&Value::concat(window)).add(b).relu().sum()
    }

    pub fn score_discrete(&self, params: &Params, window: &[usize]) -> f64 {
        let w = params.get(&format!("{}.w", self.prefix));
        let b = params.get(&format!("{}.b", self.prefix));
        let l = self.num_labels;
        let cols = (self.window + 1) * l;
        (0..self.filters)
            .map(|n| {
                let mut z = b.data()[n];
                for (slot, &y) in window.iter().enumerate() {
                    z += w.data()[n * cols + slot * l + y];
                }
                z.max(0.0)
            })
            .sum()
    }
}

/// Windowed tag-LM: the leading window label is context, the remaining M
/// labels are scored; the result is an expected negative log-likelihood,
/// added to the energy as-is.
#[derive(Clone, Debug)]
pub struct WindowTlmScorer {
    pub lm: LabelLM,
    pub window: usize,
}

impl WindowTlmScorer {
    pub fn new(
        prefix: impl Into<String>,
        num_labels: usize,
        window: usize,
        embed_dim: usize,
        hidden: usize,
    ) -> Self {
        WindowTlmScorer {
            lm: LabelLM::new(prefix, num_labels, embed_dim, hidden, Direction::Forward, None),
            window,
        }
    }

    pub fn score_window(&self, bound: &BoundParams, tape: &Rc<Tape>, window: &[Value]) -> Result<Value> {
        debug_assert_eq!(window.len(), self.window + 1);
        let l = self.lm.num_labels;
        let dists = self.lm.dists_given_context(bound, tape, &window[..self.window])?;
        let mut total = tape.scalar(0.0);
        for (j, dist) in dists.iter().enumerate() {
            let log_p = dist.slice(0, l).safe_log();
            total = total.add(&window[j + 1].dot(&log_p));
        }
        Ok(total.neg())
    }

    pub fn score_discrete(&self, params: &Params, window: &[usize]) -> f64 {
        let dists = self
            .lm
            .dists_given_context_discrete(params, &window[..self.window]);
        -dists
            .iter()
            .enumerate()
            .map(|(j, d)| d[window[j + 1]].ln().max(SAFE_LOG_FLOOR))
            .sum::<f64>()
    }
}

/// Multi-head self-attention over the window rows (`Q = K = V`), scored as
/// the sum of all entries of the attended output.
#[derive(Clone, Debug)]
pub struct SelfAttScorer {
    pub prefix: String,
    pub num_labels: usize,
    pub window: usize,
    pub heads: usize,
}

impl SelfAttScorer {
    pub fn new(
        prefix: impl Into<String>,
        num_labels: usize,
        window: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || num_labels % heads != 0 {
            return Err(Error::invalid(format!(
                "head count {heads} must divide the model dimension {num_labels}"
            )));
        }
        Ok(SelfAttScorer { prefix: prefix.into(), num_labels, window, heads })
    }

    fn head_dim(&self) -> usize {
        self.num_labels / self.heads
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        let l = self.num_labels;
        let dk = self.head_dim();
        for h in 0..self.heads {
            for name in ["wq", "wk", "wv"] {
                params.insert(
                    format!("{}.{name}{h}", self.prefix),
                    Tensor::uniform_init(vec![l, dk], l, rng),
                );
            }
        }
        params.insert(format!("{}.wo", self.prefix), Tensor::uniform_init(vec![l, l], l, rng));
    }

    pub fn score_window(&self, bound: &BoundParams, window: &[Value]) -> Value {
        debug_assert_eq!(window.len(), self.window + 1);
        let q = Value::stack_rows(window);
        let dk = self.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let wq = bound.get(&format!("{}.wq{h}", self.prefix));
            let wk = bound.get(&format!("{}.wk{h}", self.prefix));
            let wv = bound.get(&format!("{}.wv{h}", self.prefix));
            let qh = q.matmul(wq);
            let kh = q.matmul(wk);
            let vh = q.matmul(wv);
            let attn = qh.matmul(&kh.transpose()).scale(scale).softmax();
            heads.push(attn.matmul(&vh));
        }
        let rows: Vec<Value> = (0..window.len())
            .map(|r| Value::concat(&heads.iter().map(|h| h.row(r)).collect::<Vec<_>>()))
            .collect();
        let wo = bound.get(&format!("{}.wo", self.prefix));
        Value::stack_rows(&rows).matmul(wo).sum()
    }

    /// Plain `f64` route over arbitrary relaxed rows.
    pub fn score_f64(&self, params: &Params, window: &[Vec<f64>]) -> f64 {
        let l = self.num_labels;
        let dk = self.head_dim();
        let n = window.len();
        let scale = 1.0 / (dk as f64).sqrt();
        let matmul_rows = |rows: &[Vec<f64>], w: &Tensor| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| {
                    (0..w.cols())
                        .map(|j| (0..l).map(|i| r[i] * w.at(i, j)).sum())
                        .collect()
                })
                .collect()
        };
        let mut concat: Vec<Vec<f64>> = vec![Vec::with_capacity(l); n];
        for h in 0..self.heads {
            let wq = params.get(&format!("{}.wq{h}", self.prefix));
            let wk = params.get(&format!("{}.wk{h}", self.prefix));
            let wv = params.get(&format!("{}.wv{h}", self.prefix));
            let qh = matmul_rows(window, wq);
            let kh = matmul_rows(window, wk);
            let vh = matmul_rows(window, wv);
            for r in 0..n {
                let logits: Vec<f64> =
                    (0..n).map(|c| f64math::dot(&qh[r], &kh[c]) * scale).collect();
                let att = f64math::softmax(&logits);
                for j in 0..dk {
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += att[c] * vh[c][j];
                    }
                    concat[r].push(acc);
                }
            }
        }
        let wo = params.get(&format!("{}.wo", self.prefix));
        let mut total = 0.0;
        for r in 0..n {
            for j in 0..l {
                let mut acc = 0.0;
                for i in 0..l {
                    acc += concat[r][i] * wo.at(i, j);
                }
                total += acc;
            }
        }
        total
    }
}
