//! Tag-LM energies over whole label sequences.
//!
//! The basic term is the (relaxed) negative log-likelihood of the sequence
//! under an autoregressive label LM, with explicit start and end symbols:
//! `-sum_{t=1}^{T+1} log(y_t . lm(y_0..y_{t-1}))`. On one-hot rows this is
//! exactly the discrete NLL (log terms clamped at -30 on both routes).
//!
//! Global variants: GE(a) is the forward term; GE(b) adds a backward LM run
//! on the reversed sequence; GE(c) adds word-conditioned forward and
//! backward LMs scaled by gamma.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nets::{Direction, LabelLM};
use crate::params::{BoundParams, Params};
use crate::rng::Rng;
use crate::tape::{Tape, Value, SAFE_LOG_FLOOR};

/// Relaxed sequence NLL under `lm`, start/end symbols included.
pub fn tlm_energy(
    bound: &BoundParams,
    tape: &Rc<Tape>,
    lm: &LabelLM,
    rows: &[Value],
    tokens: Option<&[usize]>,
) -> Result<Value> {
    let l = lm.num_labels;
    for row in rows {
        let got = row.shape()[0];
        if got != l {
            return Err(Error::invalid(format!(
                "label LM over {l} labels cannot score rows of width {got}"
            )));
        }
    }
    let dists = lm.sequence_dists(bound, tape, rows, tokens)?;
    let mut total = tape.scalar(0.0);
    for (t, row) in rows.iter().enumerate() {
        let p = row.dot(&dists[t].slice(0, l));
        total = total.add(&p.safe_log());
    }
    let p_end = dists[rows.len()].slice(lm.end_index(), 1);
    total = total.add(&p_end.safe_log());
    Ok(total.neg())
}

/// Discrete route: exact NLL of a label sequence (same -30 clamp).
pub fn tlm_energy_discrete(
    params: &Params,
    lm: &LabelLM,
    labels: &[usize],
    tokens: Option<&[usize]>,
) -> f64 {
    let dists = lm.sequence_dists_discrete(params, labels, tokens);
    let mut total = 0.0;
    for (t, &y) in labels.iter().enumerate() {
        total += dists[t][y].ln().max(SAFE_LOG_FLOOR);
    }
    total += dists[labels.len()][lm.end_index()].ln().max(SAFE_LOG_FLOOR);
    -total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeVariant {
    /// Forward tag LM only.
    A,
    /// Forward plus backward tag LMs.
    B,
    /// Forward and backward, plus word-conditioned forward and backward
    /// terms weighted by gamma.
    C,
}

/// Linear-chain energy augmented with global tag-LM terms.
#[derive(Clone, Debug)]
pub struct GlobalTlmTerm {
    pub prefix: String,
    pub num_labels: usize,
    pub variant: GeVariant,
    /// Weight on the word-conditioned terms (GE(c)).
    pub gamma: f64,
    /// Mixture weight of the whole tag-LM block inside the total energy.
    pub weight: f64,
    fwd: LabelLM,
    bwd: Option<LabelLM>,
    word_fwd: Option<LabelLM>,
    word_bwd: Option<LabelLM>,
}

impl GlobalTlmTerm {
    pub fn new(
        prefix: impl Into<String>,
        num_labels: usize,
        embed_dim: usize,
        hidden: usize,
        variant: GeVariant,
        gamma: f64,
        weight: f64,
        word_channel: Option<(usize, usize)>,
    ) -> Result<Self> {
        let prefix = prefix.into();
        if variant == GeVariant::C && word_channel.is_none() {
            return Err(Error::invalid(
                "GE(c) requires a word channel for its word-conditioned terms",
            ));
        }
        let fwd = LabelLM::new(
            format!("{prefix}.fwd"),
            num_labels,
            embed_dim,
            hidden,
            Direction::Forward,
            None,
        );
        let bwd = match variant {
            GeVariant::A => None,
            _ => Some(LabelLM::new(
                format!("{prefix}.bwd"),
                num_labels,
                embed_dim,
                hidden,
                Direction::Backward,
                None,
            )),
        };
        let (word_fwd, word_bwd) = if variant == GeVariant::C {
            (
                Some(LabelLM::new(
                    format!("{prefix}.wfwd"),
                    num_labels,
                    embed_dim,
                    hidden,
                    Direction::Forward,
                    word_channel,
                )),
                Some(LabelLM::new(
                    format!("{prefix}.wbwd"),
                    num_labels,
                    embed_dim,
                    hidden,
                    Direction::Backward,
                    word_channel,
                )),
            )
        } else {
            (None, None)
        };
        Ok(GlobalTlmTerm {
            prefix,
            num_labels,
            variant,
            gamma,
            weight,
            fwd,
            bwd,
            word_fwd,
            word_bwd,
        })
    }

    pub fn init(&self, params: &mut Params, rng: &mut Rng) {
        self.fwd.init(params, rng);
        if let Some(lm) = &self.bwd {
            lm.init(params, rng);
        }
        if let Some(lm) = &self.word_fwd {
            lm.init(params, rng);
        }
        if let Some(lm) = &self.word_bwd {
            lm.init(params, rng);
        }
    }

    pub fn forward_lm(&self) -> &LabelLM {
        &self.fwd
    }

    /// The global energy block (weighted); see [`global_energy`].
    pub fn energy(
        &self,
        bound: &BoundParams,
        tape: &Rc<Tape>,
        tokens: &[usize],
        rows: &[Value],
    ) -> Result<Value> {
        global_energy(bound, tape, self, tokens, rows)
    }

    pub fn energy_discrete(&self, params: &Params, tokens: &[usize], labels: &[usize]) -> f64 {
        global_energy_discrete(params, self, tokens, labels)
    }
}

fn reversed<T: Clone>(xs: &[T]) -> Vec<T> {
    xs.iter().rev().cloned().collect()
}

/// Sum of the configured tag-LM energy terms, scaled by the term's mixture
/// weight: `weight * (nll_fwd [+ nll_bwd] [+ gamma * (nll_wfwd + nll_wbwd)])`.
///
/// Backward terms run the corresponding LM over the reversed sequence.
pub fn global_energy(
    bound: &BoundParams,
    tape: &Rc<Tape>,
    term: &GlobalTlmTerm,
    tokens: &[usize],
    rows: &[Value],
) -> Result<Value> {
    let mut total = tlm_energy(bound, tape, &term.fwd, rows, None)?;
    if let Some(lm) = &term.bwd {
        let rev = reversed(rows);
        total = total.add(&tlm_energy(bound, tape, lm, &rev, None)?);
    }
    if term.variant == GeVariant::C && term.gamma != 0.0 {
        let wf = term.word_fwd.as_ref().expect("GE(c) word forward LM");
        let wb = term.word_bwd.as_ref().expect("GE(c) word backward LM");
        let fwd_term = tlm_energy(bound, tape, wf, rows, Some(tokens))?;
        let rev_rows = reversed(rows);
        let rev_tokens = reversed(tokens);
        let bwd_term = tlm_energy(bound, tape, wb, &rev_rows, Some(&rev_tokens))?;
        total = total.add(&fwd_term.add(&bwd_term).scale(term.gamma));
    }
    Ok(total.scale(term.weight))
}

pub fn global_energy_discrete(
    params: &Params,
    term: &GlobalTlmTerm,
    tokens: &[usize],
    labels: &[usize],
) -> f64 {
    let mut total = tlm_energy_discrete(params, &term.fwd, labels, None);
    if let Some(lm) = &term.bwd {
        let rev = reversed(labels);
        total += tlm_energy_discrete(params, lm, &rev, None);
    }
    if term.variant == GeVariant::C && term.gamma != 0.0 {
        let wf = term.word_fwd.as_ref().expect("GE(c) word forward LM");
        let wb = term.word_bwd.as_ref().expect("GE(c) word backward LM");
        let rev_labels = reversed(labels);
        let rev_tokens = reversed(tokens);
        total += term.gamma
            * (tlm_energy_discrete(params, wf, labels, Some(tokens))
                + tlm_energy_discrete(params, wb, &rev_labels, Some(&rev_tokens)));
    }
    term.weight * total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::const_rows;
    use crate::params::Params;
    use crate::rng;
    use crate::tensor::{RelaxedLabelSeq, Tensor};

    fn uniform_lm(l: usize) -> (LabelLM, Params) {
        let lm = LabelLM::new("lm", l, 3, 4, Direction::Forward, None);
        let mut params = Params::new();
        lm.init(&mut params, &mut rng::stream(0, "init"));
        let v = l + 2;
        *params.get_mut("lm.out.w") = Tensor::zeros(vec![v, 4]).with_grad();
        *params.get_mut("lm.out.b") = Tensor::zeros(vec![v]).with_grad();
        (lm, params)
    }

    #[test]
    fn uniform_lm_energy_is_t_plus_one_log_v() {
        let l = 3;
        let (lm, params) = uniform_lm(l);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let rows = const_rows(&tape, RelaxedLabelSeq::uniform(4, l).rows());
        let e = tlm_energy(&bound, &tape, &lm, &rows, None).unwrap().item();
        let expect = 5.0 * (l as f64 + 2.0).ln();
        assert!((e - expect).abs() < 1e-12, "{e} vs {expect}");
    }

    #[test]
    fn one_hot_rows_reduce_to_discrete_nll() {
        let lm = LabelLM::new("lm", 3, 3, 4, Direction::Forward, None);
        let mut params = Params::new();
        lm.init(&mut params, &mut rng::stream(5, "init"));
        let labels = [1usize, 0, 2, 2];
        let discrete = tlm_energy_discrete(&params, &lm, &labels, None);

        let tape = Tape::new();
        let bound = params.bind(&tape);
        let rows = const_rows(&tape, RelaxedLabelSeq::one_hot(&labels, 3).rows());
        let relaxed = tlm_energy(&bound, &tape, &lm, &rows, None).unwrap().item();
        assert!((discrete - relaxed).abs() < 1e-12);

        // And the discrete value is the plain NLL under the LM's own
        // distributions.
        let dists = lm.sequence_dists_discrete(&params, &labels, None);
        let mut nll = 0.0;
        for (t, &y) in labels.iter().enumerate() {
            nll -= dists[t][y].ln();
        }
        nll -= dists[4][lm.end_index()].ln();
        assert!((discrete - nll).abs() < 1e-12);
    }

    #[test]
    fn mismatched_label_width_is_rejected() {
        let (lm, params) = uniform_lm(3);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let rows = const_rows(&tape, RelaxedLabelSeq::uniform(2, 5).rows());
        assert!(tlm_energy(&bound, &tape, &lm, &rows, None).is_err());
    }

    #[test]
    fn ge_c_without_word_channel_is_rejected() {
        assert!(GlobalTlmTerm::new("g", 3, 3, 4, GeVariant::C, 0.5, 1.0, None).is_err());
        assert!(GlobalTlmTerm::new("g", 3, 3, 4, GeVariant::C, 0.5, 1.0, Some((9, 3))).is_ok());
    }

    #[test]
    fn ge_c_with_zero_gamma_equals_ge_b() {
        let tokens = [1usize, 4, 2];
        let labels = [0usize, 2, 1];
        let eval = |variant: GeVariant, gamma: f64, word: Option<(usize, usize)>| {
            let term = GlobalTlmTerm::new("g", 3, 3, 4, variant, gamma, 1.0, word).unwrap();
            let mut params = Params::new();
            term.init(&mut params, &mut rng::stream(4, "init"));
            term.energy_discrete(&params, &tokens, &labels)
        };
        let b = eval(GeVariant::B, 0.0, None);
        let c = eval(GeVariant::C, 0.0, Some((9, 3)));
        assert_eq!(b.to_bits(), c.to_bits());
    }

    #[test]
    fn ge_a_equals_plain_tlm_energy() {
        let term = GlobalTlmTerm::new("g", 3, 3, 4, GeVariant::A, 0.0, 1.0, None).unwrap();
        let mut params = Params::new();
        term.init(&mut params, &mut rng::stream(6, "init"));
        let tokens = [0usize, 1];
        let labels = [2usize, 0];
        let via_ge = term.energy_discrete(&params, &tokens, &labels);
        let direct = tlm_energy_discrete(&params, term.forward_lm(), &labels, None);
        assert_eq!(via_ge.to_bits(), direct.to_bits());
    }

    #[test]
    fn backward_term_on_palindrome_equals_forward_with_symmetric_lm() {
        // Direction-symmetric LM: backward parameters copied from forward.
        let term = GlobalTlmTerm::new("g", 3, 3, 4, GeVariant::B, 0.0, 1.0, None).unwrap();
        let mut params = Params::new();
        term.init(&mut params, &mut rng::stream(9, "init"));
        for suffix in ["embed", "cell.w_ih", "cell.w_hh", "cell.b", "out.w", "out.b"] {
            let fwd = params.get(&format!("g.fwd.{suffix}")).clone();
            *params.get_mut(&format!("g.bwd.{suffix}")) = fwd;
        }
        let labels = [1usize, 2, 1]; // palindrome
        let fwd_nll = tlm_energy_discrete(&params, term.forward_lm(), &labels, None);
        let total = term.energy_discrete(&params, &[0, 0, 0], &labels);
        assert!((total - 2.0 * fwd_nll).abs() < 1e-12);
    }
}
