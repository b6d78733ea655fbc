//! Define-by-run reverse-mode autodiff.
//!
//! A [`Tape`] records every forward operation; [`Tape::backward`] replays the
//! record in reverse topological order exactly once, accumulating vector-
//! Jacobian products. Tapes are rebuilt per forward pass, which keeps
//! variable-length sequence models simple. Values are handles onto the tape;
//! cloning a handle is cheap.
//!
//! Shape mismatches are programming errors and panic with a diagnostic that
//! names both shapes, mirroring how dense linear-algebra crates treat them.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp used by [`Value::safe_log`]: log outputs saturate at -30.
pub const SAFE_LOG_FLOOR: f64 = -30.0;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    /// Matrix plus a row vector broadcast over every row.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    /// `[m,k] * [k] -> [m]`
    MatVec(usize, usize),
    /// `[k] * [k,n] -> [n]`
    VecMat(usize, usize),
    Dot(usize, usize),
    Transpose(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    StackRows(Vec<usize>),
    Row(usize, usize),
    Softmax(usize),
    LogSumExp(usize),
    Log(usize),
    SafeLog(usize),
    Exp(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Sum(usize),
    Mean(usize),
    /// Row lookup into an embedding table; backward scatter-adds.
    EmbedRow(usize, usize),
    /// Same data, new shape.
    Reshape(usize),
    /// `LayerNorm(x) * gain + bias`, all 1-D of equal length.
    LayerNorm { x: usize, gain: usize, bias: usize },
    Detach,
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
    needs_grad: bool,
}

/// Recording tape. Create one per forward pass via [`Tape::new`].
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a tape.
#[derive(Clone)]
pub struct Value {
    tape: Rc<Tape>,
    id: usize,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, zeros if `v` did not influence the loss.
    pub fn get(&self, v: &Value) -> Tensor {
        let shape = v.shape();
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Rc<Tape> {
        Rc::new(Tape { nodes: RefCell::new(Vec::new()) })
    }

    pub fn len(self: &Rc<Tape>) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(self: &Rc<Tape>) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(self: &Rc<Tape>, op: Op, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool) -> Value {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite forward value from {:?}",
            op
        );
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op, shape, data, needs_grad });
        Value { tape: Rc::clone(self), id }
    }

    /// Register a leaf; it participates in backward iff `t.requires_grad()`.
    pub fn leaf(self: &Rc<Tape>, t: &Tensor) -> Value {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Register a constant leaf (never receives gradient).
    pub fn constant(self: &Rc<Tape>, t: &Tensor) -> Value {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn scalar(self: &Rc<Tape>, v: f64) -> Value {
        self.push(Op::Leaf, vec![1], vec![v], false)
    }

    pub fn vector(self: &Rc<Tape>, v: &[f64]) -> Value {
        self.push(Op::Leaf, vec![v.len()], v.to_vec(), false)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(self: &Rc<Tape>, loss: &Value) -> Result<Gradients> {
        debug_assert!(Rc::ptr_eq(self, &loss.tape));
        let nodes = self.nodes.borrow();
        if nodes[loss.id].data.len() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.id].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        // Node ids are in creation order, so reverse id order is a reverse
        // topological order of the DAG.
        for id in (0..=loss.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            if !node.needs_grad {
                grads[id] = Some(g);
                continue;
            }

            let acc = |grads: &mut Vec<Option<Vec<f64>>>, src: usize, upd: &[f64]| {
                if !nodes[src].needs_grad {
                    return;
                }
                let slot =
                    grads[src].get_or_insert_with(|| vec![0.0; nodes[src].data.len()]);
                for (a, b) in slot.iter_mut().zip(upd) {
                    *a += b;
                }
            };

            match &node.op {
                Op::Leaf | Op::Detach => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::AddRow(m, v) => {
                    acc(&mut grads, *m, &g);
                    let cols = nodes[*v].data.len();
                    let mut gv = vec![0.0; cols];
                    for chunk in g.chunks(cols) {
                        for (a, b) in gv.iter_mut().zip(chunk) {
                            *a += b;
                        }
                    }
                    acc(&mut grads, *v, &gv);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> =
                        g.iter().zip(&nodes[*b].data).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> =
                        g.iter().zip(&nodes[*a].data).map(|(x, y)| x * y).collect();
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    let n = nodes[*b].shape[1];
                    // gA = g * B^T
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                ga[i * k + p] += gij * nodes[*b].data[p * n + j];
                            }
                        }
                    }
                    // gB = A^T * g
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let aip = nodes[*a].data[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::MatVec(mat, x) => {
                    let (m, k) = (nodes[*mat].shape[0], nodes[*mat].shape[1]);
                    let mut gm = vec![0.0; m * k];
                    let mut gx = vec![0.0; k];
                    for i in 0..m {
                        let gi = g[i];
                        for p in 0..k {
                            gm[i * k + p] += gi * nodes[*x].data[p];
                            gx[p] += gi * nodes[*mat].data[i * k + p];
                        }
                    }
                    acc(&mut grads, *mat, &gm);
                    acc(&mut grads, *x, &gx);
                }
                Op::VecMat(x, mat) => {
                    let (k, n) = (nodes[*mat].shape[0], nodes[*mat].shape[1]);
                    let mut gx = vec![0.0; k];
                    let mut gm = vec![0.0; k * n];
                    for p in 0..k {
                        let xp = nodes[*x].data[p];
                        for j in 0..n {
                            gx[p] += g[j] * nodes[*mat].data[p * n + j];
                            gm[p * n + j] += xp * g[j];
                        }
                    }
                    acc(&mut grads, *x, &gx);
                    acc(&mut grads, *mat, &gm);
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    let ga: Vec<f64> = nodes[*b].data.iter().map(|v| s * v).collect();
                    let gb: Vec<f64> = nodes[*a].data.iter().map(|v| s * v).collect();
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Transpose(a) => {
                    let (m, n) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = g[j * m + i];
                        }
                    }
                    acc(&mut grads, *a, &ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = nodes[p].data.len();
                        acc(&mut grads, p, &g[off..off + len]);
                        off += len;
                    }
                }
                Op::Slice(a, start) => {
                    let mut ga = vec![0.0; nodes[*a].data.len()];
                    ga[*start..*start + g.len()].copy_from_slice(&g);
                    acc(&mut grads, *a, &ga);
                }
                Op::StackRows(parts) => {
                    let cols = nodes[parts[0]].data.len();
                    for (r, &p) in parts.iter().enumerate() {
                        acc(&mut grads, p, &g[r * cols..(r + 1) * cols]);
                    }
                }
                Op::Row(a, i) => {
                    let cols = nodes[*a].shape[1];
                    let mut ga = vec![0.0; nodes[*a].data.len()];
                    ga[i * cols..(i + 1) * cols].copy_from_slice(&g);
                    acc(&mut grads, *a, &ga);
                }
                Op::Softmax(a) => {
                    // Per row: gz = y .* (g - <g, y>)
                    let cols = *node.shape.last().unwrap();
                    let mut ga = vec![0.0; node.data.len()];
                    for r in 0..node.data.len() / cols {
                        let y = &node.data[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            ga[r * cols + j] = y[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *a, &ga);
                }
                Op::LogSumExp(a) => {
                    // gz_row = softmax(row) * g_r
                    let cols = *nodes[*a].shape.last().unwrap();
                    let mut ga = vec![0.0; nodes[*a].data.len()];
                    for r in 0..nodes[*a].data.len() / cols {
                        let row = &nodes[*a].data[r * cols..(r + 1) * cols];
                        let sm = softmax_row(row);
                        for j in 0..cols {
                            ga[r * cols + j] = sm[j] * g[r];
                        }
                    }
                    acc(&mut grads, *a, &ga);
                }
                Op::Log(a) => {
                    let ga: Vec<f64> =
                        g.iter().zip(&nodes[*a].data).map(|(gi, x)| gi / x).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::SafeLog(a) => {
                    let floor = SAFE_LOG_FLOOR.exp();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&nodes[*a].data)
                        .map(|(gi, &x)| if x > floor { gi / x } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> =
                        g.iter().zip(&node.data).map(|(gi, y)| gi * y).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&nodes[*a].data)
                        .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.data)
                        .map(|(gi, y)| gi * (1.0 - y * y))
                        .collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.data)
                        .map(|(gi, y)| gi * y * (1.0 - y))
                        .collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; nodes[*a].data.len()];
                    acc(&mut grads, *a, &ga);
                }
                Op::Mean(a) => {
                    let n = nodes[*a].data.len() as f64;
                    let ga = vec![g[0] / n; nodes[*a].data.len()];
                    acc(&mut grads, *a, &ga);
                }
                Op::Reshape(a) => {
                    acc(&mut grads, *a, &g);
                }
                Op::EmbedRow(table, idx) => {
                    let cols = nodes[*table].shape[1];
                    let mut gt = vec![0.0; nodes[*table].data.len()];
                    gt[idx * cols..(idx + 1) * cols].copy_from_slice(&g);
                    acc(&mut grads, *table, &gt);
                }
                Op::LayerNorm { x, gain, bias } => {
                    let xs = &nodes[*x].data;
                    let n = xs.len();
                    let nf = n as f64;
                    let mu = xs.iter().sum::<f64>() / nf;
                    let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / nf;
                    let s = (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = xs.iter().map(|v| (v - mu) / s).collect();
                    let gain_d = &nodes[*gain].data;
                    let dgain: Vec<f64> =
                        g.iter().zip(&xhat).map(|(gi, xh)| gi * xh).collect();
                    let dxhat: Vec<f64> =
                        g.iter().zip(gain_d).map(|(gi, w)| gi * w).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / nf;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / nf;
                    let dx: Vec<f64> = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(dxh, xh)| (dxh - mean_dxhat - xh * mean_dxhat_xhat) / s)
                        .collect();
                    acc(&mut grads, *x, &dx);
                    acc(&mut grads, *gain, &dgain);
                    acc(&mut grads, *bias, &g);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|v| v / z).collect()
}

fn logsumexp_row(row: &[f64]) -> f64 {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

impl Value {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> Rc<Tape> {
        Rc::clone(&self.tape)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn data(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].data.clone()
    }

    /// Value of a scalar node.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        assert_eq!(nodes[self.id].data.len(), 1, "item() on non-scalar");
        nodes[self.id].data[0]
    }

    fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn same_tape(&self, other: &Value) {
        debug_assert!(
            Rc::ptr_eq(&self.tape, &other.tape),
            "values must live on the same tape"
        );
    }

    pub fn add(&self, other: &Value) -> Value {
        self.same_tape(other);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            assert_eq!(
                a.shape, b.shape,
                "add: shape {:?} vs {:?}",
                a.shape, b.shape
            );
            let d = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
            (a.shape.clone(), d)
        };
        let needs = self.needs_grad() || other.needs_grad();
        self.tape.push(Op::Add(self.id, other.id), shape, data, needs)
    }

    /// Add a row vector to every row of a matrix.
    pub fn add_row(&self, row: &Value) -> Value {
        self.same_tape(row);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[row.id]);
            assert_eq!(a.shape.len(), 2, "add_row: lhs must be a matrix");
            assert_eq!(
                a.shape[1],
                b.data.len(),
                "add_row: shape {:?} vs {:?}",
                a.shape,
                b.shape
            );
            let cols = a.shape[1];
            let d = a
                .data
                .iter()
                .enumerate()
                .map(|(i, x)| x + b.data[i % cols])
                .collect();
            (a.shape.clone(), d)
        };
        let needs = self.needs_grad() || row.needs_grad();
        self.tape.push(Op::AddRow(self.id, row.id), shape, data, needs)
    }

    pub fn sub(&self, other: &Value) -> Value {
        self.same_tape(other);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            assert_eq!(
                a.shape, b.shape,
                "sub: shape {:?} vs {:?}",
                a.shape, b.shape
            );
            let d = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
            (a.shape.clone(), d)
        };
        let needs = self.needs_grad() || other.needs_grad();
        self.tape.push(Op::Sub(self.id, other.id), shape, data, needs)
    }

    pub fn mul(&self, other: &Value) -> Value {
        self.same_tape(other);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            assert_eq!(
                a.shape, b.shape,
                "mul: shape {:?} vs {:?}",
                a.shape, b.shape
            );
            let d = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
            (a.shape.clone(), d)
        };
        let needs = self.needs_grad() || other.needs_grad();
        self.tape.push(Op::Mul(self.id, other.id), shape, data, needs)
    }

    pub fn scale(&self, c: f64) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|x| x * c).collect())
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Scale(self.id, c), shape, data, needs)
    }

    pub fn neg(&self) -> Value {
        self.scale(-1.0)
    }

    pub fn matmul(&self, other: &Value) -> Value {
        self.same_tape(other);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            assert!(
                a.shape.len() == 2 && b.shape.len() == 2 && a.shape[1] == b.shape[0],
                "matmul: shape {:?} vs {:?}",
                a.shape,
                b.shape
            );
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = a.data[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        out[i * n + j] += aip * b.data[p * n + j];
                    }
                }
            }
            (vec![m, n], out)
        };
        let needs = self.needs_grad() || other.needs_grad();
        self.tape.push(Op::MatMul(self.id, other.id), shape, data, needs)
    }

    /// `[m,k] * [k] -> [m]`.
    pub fn matvec(&self, x: &Value) -> Value {
        self.same_tape(x);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[x.id]);
            assert!(
                a.shape.len() == 2 && a.shape[1] == b.data.len(),
                "matvec: shape {:?} vs {:?}",
                a.shape,
                b.shape
            );
            let (m, k) = (a.shape[0], a.shape[1]);
            let mut out = vec![0.0; m];
            for i in 0..m {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data[i * k + p] * b.data[p];
                }
                out[i] = s;
            }
            (vec![m], out)
        };
        let needs = self.needs_grad() || x.needs_grad();
        self.tape.push(Op::MatVec(self.id, x.id), shape, data, needs)
    }

    /// `[k] * [k,n] -> [n]` (row-vector times matrix).
    pub fn vecmat(&self, mat: &Value) -> Value {
        self.same_tape(mat);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[mat.id]);
            assert!(
                b.shape.len() == 2 && b.shape[0] == a.data.len(),
                "vecmat: shape {:?} vs {:?}",
                a.shape,
                b.shape
            );
            let (k, n) = (b.shape[0], b.shape[1]);
            let mut out = vec![0.0; n];
            for p in 0..k {
                let xp = a.data[p];
                if xp == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[j] += xp * b.data[p * n + j];
                }
            }
            (vec![n], out)
        };
        let needs = self.needs_grad() || mat.needs_grad();
        self.tape.push(Op::VecMat(self.id, mat.id), shape, data, needs)
    }

    pub fn dot(&self, other: &Value) -> Value {
        self.same_tape(other);
        let data = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            assert_eq!(
                a.shape, b.shape,
                "dot: shape {:?} vs {:?}",
                a.shape, b.shape
            );
            vec![a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()]
        };
        let needs = self.needs_grad() || other.needs_grad();
        self.tape.push(Op::Dot(self.id, other.id), vec![1], data, needs)
    }

    pub fn transpose(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            assert_eq!(a.shape.len(), 2, "transpose: shape {:?}", a.shape);
            let (m, n) = (a.shape[0], a.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = a.data[i * n + j];
                }
            }
            (vec![n, m], out)
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Transpose(self.id), shape, data, needs)
    }

    pub fn concat(parts: &[Value]) -> Value {
        assert!(!parts.is_empty(), "concat of zero vectors");
        let tape = parts[0].tape();
        let mut data = Vec::new();
        let mut needs = false;
        {
            let nodes = tape.nodes.borrow();
            for p in parts {
                debug_assert!(Rc::ptr_eq(&tape, &p.tape));
                data.extend_from_slice(&nodes[p.id].data);
                needs |= nodes[p.id].needs_grad;
            }
        }
        let ids = parts.iter().map(|p| p.id).collect();
        let len = data.len();
        tape.push(Op::Concat(ids), vec![len], data, needs)
    }

    /// 1-D slice `[start, start+len)`.
    pub fn slice(&self, start: usize, len: usize) -> Value {
        let data = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            assert!(
                start + len <= a.data.len(),
                "slice [{start}, {}) out of shape {:?}",
                start + len,
                a.shape
            );
            a.data[start..start + len].to_vec()
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Slice(self.id, start), vec![len], data, needs)
    }

    /// Stack equal-length vectors into a matrix, one per row.
    pub fn stack_rows(rows: &[Value]) -> Value {
        assert!(!rows.is_empty(), "stack_rows of zero rows");
        let tape = rows[0].tape();
        let mut data = Vec::new();
        let mut needs = false;
        let cols;
        {
            let nodes = tape.nodes.borrow();
            cols = nodes[rows[0].id].data.len();
            for r in rows {
                debug_assert!(Rc::ptr_eq(&tape, &r.tape));
                assert_eq!(
                    nodes[r.id].data.len(),
                    cols,
                    "stack_rows: shape {:?} vs {:?}",
                    nodes[rows[0].id].shape,
                    nodes[r.id].shape
                );
                data.extend_from_slice(&nodes[r.id].data);
                needs |= nodes[r.id].needs_grad;
            }
        }
        let ids = rows.iter().map(|r| r.id).collect();
        tape.push(Op::StackRows(ids), vec![rows.len(), cols], data, needs)
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&self, i: usize) -> Value {
        let (cols, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            assert_eq!(a.shape.len(), 2, "row: shape {:?}", a.shape);
            assert!(i < a.shape[0], "row {i} out of shape {:?}", a.shape);
            let cols = a.shape[1];
            (cols, a.data[i * cols..(i + 1) * cols].to_vec())
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Row(self.id, i), vec![cols], data, needs)
    }

    /// Row-wise softmax with max subtraction (a vector is a single row).
    pub fn softmax(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let cols = *n.shape.last().expect("softmax on empty shape");
            let mut out = Vec::with_capacity(n.data.len());
            for row in n.data.chunks(cols) {
                out.extend(softmax_row(row));
            }
            (n.shape.clone(), out)
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Softmax(self.id), shape, data, needs)
    }

    /// Row-wise log-sum-exp with max subtraction; a vector collapses to a
    /// scalar, a matrix to a vector of per-row values.
    pub fn logsumexp(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            let cols = *n.shape.last().expect("logsumexp on empty shape");
            let rows = n.data.len() / cols;
            let out: Vec<f64> = n.data.chunks(cols).map(logsumexp_row).collect();
            (vec![rows], out)
        };
        let needs = self.needs_grad();
        self.tape.push(Op::LogSumExp(self.id), shape, data, needs)
    }

    pub fn exp(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|x| x.exp()).collect())
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Exp(self.id), shape, data, needs)
    }

    pub fn log(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            debug_assert!(n.data.iter().all(|&x| x > 0.0), "log of non-positive value");
            (n.shape.clone(), n.data.iter().map(|x| x.ln()).collect())
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Log(self.id), shape, data, needs)
    }

    /// Log clamped below at -30; gradient is zero in the clamped region.
    pub fn safe_log(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (
                n.shape.clone(),
                n.data.iter().map(|x| x.ln().max(SAFE_LOG_FLOOR)).collect(),
            )
        };
        let needs = self.needs_grad();
        self.tape.push(Op::SafeLog(self.id), shape, data, needs)
    }

    pub fn relu(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|x| x.max(0.0)).collect())
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Relu(self.id), shape, data, needs)
    }

    pub fn tanh(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|x| x.tanh()).collect())
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Tanh(self.id), shape, data, needs)
    }

    pub fn sigmoid(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (
                n.shape.clone(),
                n.data.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
            )
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Sigmoid(self.id), shape, data, needs)
    }

    pub fn sum(&self) -> Value {
        let data = {
            let nodes = self.tape.nodes.borrow();
            vec![nodes[self.id].data.iter().sum()]
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Sum(self.id), vec![1], data, needs)
    }

    pub fn mean(&self) -> Value {
        let data = {
            let nodes = self.tape.nodes.borrow();
            let d = &nodes[self.id].data;
            vec![d.iter().sum::<f64>() / d.len() as f64]
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Mean(self.id), vec![1], data, needs)
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Value {
        let data = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            assert_eq!(
                shape.iter().product::<usize>(),
                n.data.len(),
                "reshape: shape {:?} vs {:?}",
                shape,
                n.shape
            );
            n.data.clone()
        };
        let needs = self.needs_grad();
        self.tape.push(Op::Reshape(self.id), shape, data, needs)
    }

    /// Forward identity whose gradient is blocked.
    pub fn detach(&self) -> Value {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.clone())
        };
        self.tape.push(Op::Detach, shape, data, false)
    }

    /// Embedding lookup: row `idx` of a `[V, e]` table.
    pub fn embed_row(&self, idx: usize) -> Value {
        let (cols, data) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            assert_eq!(a.shape.len(), 2, "embed_row: shape {:?}", a.shape);
            assert!(
                idx < a.shape[0],
                "embed_row: index {idx} out of table shape {:?}",
                a.shape
            );
            let cols = a.shape[1];
            (cols, a.data[idx * cols..(idx + 1) * cols].to_vec())
        };
        let needs = self.needs_grad();
        self.tape.push(Op::EmbedRow(self.id, idx), vec![cols], data, needs)
    }

    /// Layer normalization over a vector with learned gain and bias.
    pub fn layer_norm(&self, gain: &Value, bias: &Value) -> Value {
        self.same_tape(gain);
        self.same_tape(bias);
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            let (x, g, b) = (&nodes[self.id], &nodes[gain.id], &nodes[bias.id]);
            assert!(
                x.shape.len() == 1
                    && x.shape == g.shape
                    && x.shape == b.shape,
                "layer_norm: shape {:?} with gain {:?}, bias {:?}",
                x.shape,
                g.shape,
                b.shape
            );
            let n = x.data.len() as f64;
            let mu = x.data.iter().sum::<f64>() / n;
            let var = x.data.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let s = (var + LAYER_NORM_EPS).sqrt();
            let d: Vec<f64> = x
                .data
                .iter()
                .zip(g.data.iter().zip(&b.data))
                .map(|(v, (gi, bi))| gi * (v - mu) / s + bi)
                .collect();
            (x.shape.clone(), d)
        };
        let needs = self.needs_grad() || gain.needs_grad() || bias.needs_grad();
        self.tape.push(
            Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id },
            shape,
            data,
            needs,
        )
    }
}
