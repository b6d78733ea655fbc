//! Dense row-major tensors in 64-bit precision.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// A dense tensor: a shape plus row-major `f64` storage.
///
/// Parameters and constants live in `Tensor`s outside any tape; each forward
/// pass copies them onto a fresh tape as leaves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "tensor shape {:?} holds {} values, got {}",
            shape,
            n,
            data.len()
        );
        Tensor { shape, data, requires_grad: false }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], requires_grad: false }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Tensor::new(vec![v.len()], v)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    /// Uniform init in `[-r, r]` with `r = 1/sqrt(fan_in)`.
    pub fn uniform_init(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Self {
        let r = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-r..=r)).collect();
        Tensor { shape, data, requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows for a matrix, 1 for a vector.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Row length for a matrix or vector.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A length-T sequence of length-L probability rows: the relaxed output
/// space for sequence labeling. One-hot rows recover discrete outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedLabelSeq {
    rows: Vec<Vec<f64>>,
}

impl RelaxedLabelSeq {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        if let Some(first) = rows.first() {
            assert!(
                rows.iter().all(|r| r.len() == first.len()),
                "relaxed rows must share one label dimension"
            );
        }
        RelaxedLabelSeq { rows }
    }

    pub fn one_hot(labels: &[usize], num_labels: usize) -> Self {
        let rows = labels
            .iter()
            .map(|&l| {
                assert!(l < num_labels, "label {l} out of range {num_labels}");
                let mut r = vec![0.0; num_labels];
                r[l] = 1.0;
                r
            })
            .collect();
        RelaxedLabelSeq { rows }
    }

    pub fn uniform(len: usize, num_labels: usize) -> Self {
        RelaxedLabelSeq { rows: vec![vec![1.0 / num_labels as f64; num_labels]; len] }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// Most probable label per row, lowest index winning ties.
    pub fn discretize(&self) -> Vec<usize> {
        self.rows.iter().map(|r| argmax(r)).collect()
    }
}

/// Plain `f64` helpers shared by the discrete (tape-free) evaluation paths.
pub mod f64math {
    use super::Tensor;

    pub fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
        let (rows, cols) = (m.rows(), m.cols());
        debug_assert_eq!(cols, x.len());
        let mut out = vec![0.0; rows];
        for i in 0..rows {
            let mut s = 0.0;
            for j in 0..cols {
                s += m.data()[i * cols + j] * x[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn add_assign(a: &mut [f64], b: &[f64]) {
        debug_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn softmax(z: &[f64]) -> Vec<f64> {
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
        let sum: f64 = out.iter().sum();
        let inv = 1.0 / sum;
        for v in out.iter_mut() {
            *v *= inv;
        }
        out
    }

    pub fn logsumexp(z: &[f64]) -> f64 {
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
    }
}

/// Index of the maximum entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
