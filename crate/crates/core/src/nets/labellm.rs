//! Autoregressive language model over label sequences.
//!
//! The label vocabulary is the task's L labels plus explicit start and end
//! symbols. Relaxed rows are embedded as probability-weighted sums over the
//! label embedding table, so one-hot rows reduce to ordinary lookups.
//!
//! The optional word channel concatenates a word embedding (from the model's
//! own word table) to each label embedding, which realizes "words as
//! additional inputs" for the word-conditioned global energy terms.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;

use super::lstm::LstmCell;
use super::Linear;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug)]
pub struct LabelLM {
    pub prefix: String,
    pub num_labels: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub direction: Direction,
    /// `(vocab, dim)` of the word-input channel, when enabled.
    pub word_channel: Option<(usize, usize)>,
    cell: LstmCell,
    out: Linear,
}

impl LabelLM {
    pub fn new(
        prefix: impl Into<String>,
        num_labels: usize,
        embed_dim: usize,
        hidden: usize,
        direction: Direction,
        word_channel: Option<(usize, usize)>,
    ) -> Self {
        let prefix = prefix.into();
        let input_dim = embed_dim + word_channel.map_or(0, |(_, d)| d);
        LabelLM {
            cell: LstmCell::new(format!("{prefix}.cell"), input_dim, hidden),
            out: Linear::new(format!("{prefix}.out"), hidden, num_labels + 2),
            prefix,
            num_labels,
            embed_dim,
            hidden,
            direction,
            word_channel,
        }
    }

    /// Label vocabulary size including start and end symbols.
    pub fn vocab(&self) -> usize {
        self.num_labels + 2
    }

    pub fn start_index(&self) -> usize {
        self.num_labels
    }

    pub fn end_index(&self) -> usize {
        self.num_labels + 1
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        params.insert(
            format!("{}.embed", self.prefix),
            Tensor::uniform_init(vec![self.vocab(), self.embed_dim], self.embed_dim, rng),
        );
        if let Some((vocab, dim)) = self.word_channel {
            params.insert(
                format!("{}.wembed", self.prefix),
                Tensor::uniform_init(vec![vocab, dim], dim, rng),
            );
        }
        self.cell.init(params, rng);
        self.out.init(params, rng);
    }

    /// Embed a relaxed label row (length L) as a weighted sum of embeddings.
    fn embed_relaxed(&self, bound: &BoundParams, tape: &Rc<Tape>, row: &Value) -> Value {
        let table = bound.get(&format!("{}.embed", self.prefix));
        let padded = Value::concat(&[row.clone(), tape.vector(&[0.0, 0.0])]);
        padded.vecmat(table)
    }

    fn word_vec(&self, bound: &BoundParams, tape: &Rc<Tape>, token: Option<usize>) -> Option<Value> {
        self.word_channel.map(|(_, dim)| match token {
            Some(t) => bound.get(&format!("{}.wembed", self.prefix)).embed_row(t),
            None => tape.vector(&vec![0.0; dim]),
        })
    }

    /// Next-label distributions at positions `1..=T+1` for relaxed rows
    /// `y_1..y_T`; entry `t-1` conditions on the start symbol and `y_1..y_{t-1}`.
    ///
    /// `tokens` must be given exactly when the word channel is enabled; the
    /// word paired with the start symbol is a zero vector.
    pub fn sequence_dists(
        &self,
        bound: &BoundParams,
        tape: &Rc<Tape>,
        rows: &[Value],
        tokens: Option<&[usize]>,
    ) -> Result<Vec<Value>> {
        match (self.word_channel, tokens) {
            (Some(_), None) => {
                return Err(Error::invalid("word-conditioned label LM needs tokens"))
            }
            (None, Some(_)) => {
                return Err(Error::invalid("label LM has no word channel, got tokens"))
            }
            (Some(_), Some(ts)) if ts.len() != rows.len() => {
                return Err(Error::invalid(format!(
                    "token count {} does not match label count {}",
                    ts.len(),
                    rows.len()
                )));
            }
            _ => {}
        }
        let table = bound.get(&format!("{}.embed", self.prefix));
        let (mut h, mut c) = self.cell.zero_state(tape);
        let mut dists = Vec::with_capacity(rows.len() + 1);

        let start = table.embed_row(self.start_index());
        let first = match self.word_vec(bound, tape, None) {
            Some(w) => Value::concat(&[start, w]),
            None => start,
        };
        let (h2, c2) = self.cell.step(bound, &first, &h, &c);
        h = h2;
        c = c2;
        dists.push(self.out.forward(bound, &h).softmax());

        for (i, row) in rows.iter().enumerate() {
            let lab = self.embed_relaxed(bound, tape, row);
            let input = match self.word_vec(bound, tape, tokens.map(|ts| ts[i])) {
                Some(w) => Value::concat(&[lab, w]),
                None => lab,
            };
            let (h2, c2) = self.cell.step(bound, &input, &h, &c);
            h = h2;
            c = c2;
            dists.push(self.out.forward(bound, &h).softmax());
        }
        Ok(dists)
    }

    /// Distribution over the label vocabulary after consuming `prefix` rows
    /// (conditioned only on the start symbol when the prefix is empty).
    ///
    /// Rows may be relaxed or one-hot; each must sum to 1.
    pub fn next_dist(
        &self,
        bound: &BoundParams,
        tape: &Rc<Tape>,
        prefix: &[Value],
        tokens: Option<&[usize]>,
    ) -> Result<Value> {
        for row in prefix {
            let s: f64 = row.data().iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("prefix row sums to {s}, expected 1")));
            }
        }
        let mut dists = self.sequence_dists(bound, tape, prefix, tokens)?;
        Ok(dists.pop().expect("at least the start-conditioned distribution"))
    }

    /// Discrete-index reference path: the same model run with ordinary
    /// embedding lookups in plain `f64` arithmetic, no tape involved.
    pub fn next_dist_discrete(
        &self,
        params: &Params,
        prefix: &[usize],
        tokens: Option<&[usize]>,
    ) -> Vec<f64> {
        let dists = self.sequence_dists_discrete(params, prefix, tokens);
        dists.into_iter().last().expect("nonempty")
    }

    /// Discrete analogue of [`LabelLM::sequence_dists`].
    pub fn sequence_dists_discrete(
        &self,
        params: &Params,
        labels: &[usize],
        tokens: Option<&[usize]>,
    ) -> Vec<Vec<f64>> {
        use crate::tensor::f64math::{add_assign, matvec, softmax};
        let out_w = params.get(&format!("{}.out.w", self.prefix));
        let out_b = params.get(&format!("{}.out.b", self.prefix));
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut dists = Vec::with_capacity(labels.len() + 1);

        let emit = |h: &Vec<f64>, dists: &mut Vec<Vec<f64>>| {
            let mut z = matvec(out_w, h);
            add_assign(&mut z, out_b.data());
            dists.push(softmax(&z));
        };

        let mut first = self.embed_f64(params, self.start_index());
        first.extend(self.word_f64(params, None));
        self.cell.step_f64(params, &first, &mut h, &mut c);
        emit(&h, &mut dists);

        for (i, &lab) in labels.iter().enumerate() {
            let mut input = self.embed_f64(params, lab);
            input.extend(self.word_f64(params, tokens.map(|ts| ts[i])));
            self.cell.step_f64(params, &input, &mut h, &mut c);
            emit(&h, &mut dists);
        }
        dists
    }

    fn embed_f64(&self, params: &Params, idx: usize) -> Vec<f64> {
        let e = self.embed_dim;
        let table = params.get(&format!("{}.embed", self.prefix));
        table.data()[idx * e..(idx + 1) * e].to_vec()
    }

    fn word_f64(&self, params: &Params, pos: Option<usize>) -> Vec<f64> {
        match self.word_channel {
            None => Vec::new(),
            Some((_, dim)) => match pos {
                Some(t) => {
                    let wt = params.get(&format!("{}.wembed", self.prefix));
                    wt.data()[t * dim..(t + 1) * dim].to_vec()
                }
                None => vec![0.0; dim],
            },
        }
    }

    /// Next-label distributions after each consumed row, with no start
    /// symbol prepended: entry `j` conditions on `rows[0..=j]`. The windowed
    /// high-order scorer uses the leading window label as pure context.
    pub fn dists_given_context(
        &self,
        bound: &BoundParams,
        tape: &Rc<Tape>,
        rows: &[Value],
    ) -> Result<Vec<Value>> {
        if self.word_channel.is_some() {
            return Err(Error::invalid(
                "windowed scoring does not support the word channel",
            ));
        }
        let (mut h, mut c) = self.cell.zero_state(tape);
        let mut dists = Vec::with_capacity(rows.len());
        for row in rows {
            let input = self.embed_relaxed(bound, tape, row);
            let (h2, c2) = self.cell.step(bound, &input, &h, &c);
            h = h2;
            c = c2;
            dists.push(self.out.forward(bound, &h).softmax());
        }
        Ok(dists)
    }

    /// Discrete analogue of [`LabelLM::dists_given_context`].
    pub fn dists_given_context_discrete(&self, params: &Params, labels: &[usize]) -> Vec<Vec<f64>> {
        use crate::tensor::f64math::{add_assign, matvec, softmax};
        let out_w = params.get(&format!("{}.out.w", self.prefix));
        let out_b = params.get(&format!("{}.out.b", self.prefix));
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut dists = Vec::with_capacity(labels.len());
        for &lab in labels {
            let input = self.embed_f64(params, lab);
            self.cell.step_f64(params, &input, &mut h, &mut c);
            let mut z = matvec(out_w, &h);
            add_assign(&mut z, out_b.data());
            dists.push(softmax(&z));
        }
        dists
    }
}
