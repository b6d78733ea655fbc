//! Evaluation metrics: token accuracy, span F1 with conlleval semantics,
//! example-based F1 for multi-label outputs, and throughput measurement.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};

/// Label scheme for span extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Plain labels; no span structure.
    None,
    Bio,
    Bioes,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::None => "none",
            Scheme::Bio => "BIO",
            Scheme::Bioes => "BIOES",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        match s {
            "none" => Ok(Scheme::None),
            "BIO" | "bio" => Ok(Scheme::Bio),
            "BIOES" | "bioes" => Ok(Scheme::Bioes),
            other => Err(Error::Config(format!("unknown label scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Out,
    Begin,
    Inside,
    End,
    Single,
}

fn parse_tag<'a>(tag: &'a str, scheme: Scheme) -> Result<(Kind, &'a str)> {
    if tag == "O" {
        return Ok((Kind::Out, ""));
    }
    let (head, ty) = tag
        .split_once('-')
        .ok_or_else(|| Error::Data(format!("tag {tag:?} is neither O nor PREFIX-TYPE")))?;
    let kind = match (head, scheme) {
        ("B", _) => Kind::Begin,
        ("I", _) => Kind::Inside,
        ("E", Scheme::Bioes) => Kind::End,
        ("S", Scheme::Bioes) => Kind::Single,
        _ => {
            return Err(Error::Data(format!(
                "tag prefix {head:?} not allowed under scheme {}",
                scheme.name()
            )))
        }
    };
    Ok((kind, ty))
}

/// conlleval-style chunk-boundary predicates, extended to BIOES.
fn end_of_chunk(prev: (Kind, &str), cur: (Kind, &str)) -> bool {
    match prev.0 {
        Kind::Out => false,
        Kind::End | Kind::Single => true,
        Kind::Begin | Kind::Inside => match cur.0 {
            Kind::Begin | Kind::Single | Kind::Out => true,
            Kind::Inside | Kind::End => prev.1 != cur.1,
        },
    }
}

fn start_of_chunk(prev: (Kind, &str), cur: (Kind, &str)) -> bool {
    match cur.0 {
        Kind::Out => false,
        Kind::Begin | Kind::Single => true,
        Kind::Inside | Kind::End => match prev.0 {
            Kind::Out | Kind::End | Kind::Single => true,
            Kind::Begin | Kind::Inside => prev.1 != cur.1,
        },
    }
}

/// Extract typed spans `(type, start, end_inclusive)`. Invalid transitions
/// are repaired by the usual convention: an I-X that cannot continue a span
/// starts a new one.
fn extract_spans(tags: &[(Kind, &str)]) -> Vec<(String, usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    let mut prev = (Kind::Out, "");
    for (i, &cur) in tags.iter().enumerate() {
        if open.is_some() && end_of_chunk(prev, cur) {
            let (ty, start) = open.take().unwrap();
            spans.push((ty, start, i - 1));
        }
        if open.is_none() && start_of_chunk(prev, cur) {
            open = Some((cur.1.to_string(), i));
        }
        prev = cur;
    }
    if let Some((ty, start)) = open {
        spans.push((ty, start, tags.len() - 1));
    }
    spans
}

/// Strict well-formedness for gold sequences.
fn validate_gold(tags: &[(Kind, &str)], scheme: Scheme, seq: usize) -> Result<()> {
    let mut open: Option<&str> = None;
    for (i, &(kind, ty)) in tags.iter().enumerate() {
        let bad = |why: &str| {
            Err(Error::Data(format!(
                "gold sequence {seq}, position {i}: {why} under scheme {}",
                scheme.name()
            )))
        };
        match kind {
            Kind::Out => {
                if scheme == Scheme::Bioes && open.is_some() {
                    return bad("span left unclosed before O");
                }
                open = None;
            }
            Kind::Begin => {
                if scheme == Scheme::Bioes && open.is_some() {
                    return bad("span left unclosed before B");
                }
                open = Some(ty);
            }
            Kind::Single => {
                if open.is_some() {
                    return bad("span left unclosed before S");
                }
            }
            Kind::Inside => match open {
                Some(o) if o == ty => {}
                _ => return bad("I tag without a matching open span"),
            },
            Kind::End => match open.take() {
                Some(o) if o == ty => {}
                _ => return bad("E tag without a matching open span"),
            },
        }
    }
    if scheme == Scheme::Bioes && open.is_some() {
        return Err(Error::Data(format!(
            "gold sequence {seq} ends with an unclosed span"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pred_spans: usize,
    pub gold_spans: usize,
    pub matched: usize,
}

/// Micro-averaged span precision/recall/F1. Gold must be well-formed;
/// predictions are repaired. A predicted span counts iff boundaries and
/// type both match a gold span.
pub fn span_f1(
    pred: &[Vec<usize>],
    gold: &[Vec<usize>],
    label_vocab: &[String],
    scheme: Scheme,
) -> Result<SpanScores> {
    if scheme == Scheme::None {
        return Err(Error::invalid("span F1 needs a BIO or BIOES scheme"));
    }
    if pred.len() != gold.len() {
        return Err(Error::invalid(format!(
            "prediction count {} does not match gold count {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut matched = 0usize;
    let mut pred_total = 0usize;
    let mut gold_total = 0usize;
    for (seq, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::invalid(format!(
                "sequence {seq}: prediction length {} vs gold length {}",
                p.len(),
                g.len()
            )));
        }
        let to_tags = |ids: &[usize]| -> Result<Vec<(Kind, &str)>> {
            ids.iter()
                .map(|&i| {
                    let s = label_vocab
                        .get(i)
                        .ok_or_else(|| Error::Data(format!("label id {i} out of vocabulary")))?;
                    parse_tag(s, scheme)
                })
                .collect()
        };
        let gold_tags = to_tags(g)?;
        validate_gold(&gold_tags, scheme, seq)?;
        let pred_tags = to_tags(p)?;
        let gspans = extract_spans(&gold_tags);
        let pspans = extract_spans(&pred_tags);
        gold_total += gspans.len();
        pred_total += pspans.len();
        matched += pspans.iter().filter(|s| gspans.contains(s)).count();
    }
    let precision = if pred_total == 0 { 0.0 } else { matched as f64 / pred_total as f64 };
    let recall = if gold_total == 0 { 0.0 } else { matched as f64 / gold_total as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SpanScores { precision, recall, f1, pred_spans: pred_total, gold_spans: gold_total, matched })
}

/// Fraction of positions labeled correctly.
pub fn token_accuracy(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::invalid(format!(
            "prediction count {} does not match gold count {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::invalid(format!(
                "prediction length {} vs gold length {}",
                p.len(),
                g.len()
            )));
        }
        total += g.len();
        correct += p.iter().zip(g).filter(|(a, b)| a == b).count();
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

/// Example-based F1 for multi-label outputs, averaged over examples.
/// An example with empty gold and empty prediction scores 1.
pub fn example_f1(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::invalid("prediction/gold count mismatch"));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        let np = p.iter().filter(|&&b| b).count();
        let ng = g.iter().filter(|&&b| b).count();
        let inter = p.iter().zip(g).filter(|(&a, &b)| a && b).count();
        total += if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
    }
    Ok(total / pred.len() as f64)
}

/// Median examples/sec over `reps >= 3` timed repetitions, after one
/// untimed warmup pass.
pub fn throughput<F: FnMut()>(mut pass: F, examples: usize, reps: usize) -> f64 {
    let reps = reps.max(3);
    pass(); // warmup
    let mut rates = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        pass();
        let dt = t0.elapsed().as_secs_f64().max(1e-12);
        rates.push(examples as f64 / dt);
    }
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rates[reps / 2]
}

/// Per-run metric bundle serialized into reports.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub token_accuracy: f64,
    pub span: Option<SpanScores>,
    pub mean_energy_relaxed: f64,
    pub mean_energy_discrete: f64,
    pub mean_search_error: Option<f64>,
    pub examples_per_sec: f64,
}
