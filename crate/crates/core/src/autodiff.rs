//! A small reverse-mode differentiation tape.
//!
//! Values are dense `f64` tensors. Every primitive records its inputs on
//! the [`Tape`]; [`Tape::backward`] walks the record in reverse and
//! accumulates vector-Jacobian products, summing at fan-out.
//!
//! Besides the usual network pieces the tape carries the operations the
//! end-to-end vocoder needs to stay differentiable from the loss back to
//! the reflection coefficients: the Levinson step-up recursion, the LP
//! predictor, μ-law companding, the interpolated embedding lookup and the
//! interpolated probability pick used by the interpolated cross-entropy.
//!
//! Primitives with a kink (absolute value, clamping, floors, rounding)
//! record a discrete branch id. [`grad_check`] compares those ids between
//! the base point and each perturbed point and skips coordinates whose
//! finite difference would straddle a kink.

use crate::error::{Error, Result};
use crate::lp;
use crate::signal::{self, U_MAX};

/// Rows in an embedding table: μ-law values -128..=128.
pub const EMBED_ROWS: usize = 257;
/// Classes in the output distribution: μ-law values -128..=127.
pub const N_CLASSES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: v,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Softmax(Var),
    Sum(Var),
    LogFloor { x: Var, floor: f64 },
    Abs(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Lar(Var),
    EmbedInterp { table: Var, x: Var },
    Levinson(Var),
    Predict { history: Var, a: Var },
    MuCompand(Var),
    InterpPick { probs: Var, target: Var },
    Pick { probs: Var, index: usize },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Record of one forward computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    branches: Vec<i64>,
}

/// Gradients of a backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed.
    pub fn wrt(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

/// Row of the embedding table and interpolation weight for a μ-law value.
#[inline]
pub(crate) fn interp_cell(x: f64) -> (usize, f64) {
    let mut j = x.floor();
    if j >= U_MAX {
        j = U_MAX - 1.0;
    }
    let f = x - j;
    ((j + U_MAX) as usize, f)
}

/// Class index for an integer μ-law value, with 128 folded onto 127.
#[inline]
fn class_of(v: f64) -> usize {
    (v + U_MAX).clamp(0.0, (N_CLASSES - 1) as f64) as usize
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Branch ids recorded by kinked primitives, in order.
    pub fn branches(&self) -> &[i64] {
        &self.branches
    }

    /// Records a branch id for a discontinuity decided outside the tape,
    /// such as rounding a value to pick a class.
    pub fn note_branch(&mut self, id: i64) {
        self.branches.push(id);
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Tensor::scalar(x))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn vals(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (la, lb) = (self.vals(a).len(), self.vals(b).len());
        if la != lb {
            return Err(shape_err(op, format!("{la} vs {lb} elements")));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(op, out)
    }

    /// `W x + b` with `W` of shape `[out, in]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wt = self.value(w);
        if wt.shape.len() != 2 {
            return Err(shape_err("affine", format!("weight shape {:?}", wt.shape)));
        }
        let (rows, cols) = (wt.shape[0], wt.shape[1]);
        let xv = self.vals(x);
        let bv = self.vals(b);
        if xv.len() != cols || bv.len() != rows {
            return Err(shape_err(
                "affine",
                format!(
                    "W {rows}x{cols}, x {}, b {}",
                    xv.len(),
                    bv.len()
                ),
            ));
        }
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                bv[r]
                    + wt.data[r * cols..(r + 1) * cols]
                        .iter()
                        .zip(xv)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        Ok(self.push(Op::Affine { x, w, b }, Tensor::vector(out)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    fn zip(&mut self, op_name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_len(op_name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Scale(x, c), |v| c * v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts.iter().flat_map(|p| self.vals(*p).to_vec()).collect();
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(data))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.vals(x);
        if start + len > v.len() {
            return Err(shape_err(
                "slice",
                format!("{start}..{} of {}", start + len, v.len()),
            ));
        }
        let out = Tensor::vector(v[start..start + len].to_vec());
        Ok(self.push(Op::Slice { x, start }, out))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax(self.vals(x));
        self.push(Op::Softmax(x), Tensor::vector(out))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.vals(x).iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// `log(max(x, floor))`; no gradient where the floor is active.
    pub fn log_floor(&mut self, x: Var, floor: f64) -> Var {
        for &v in self.nodes[x.0].value.data.iter() {
            self.branches.push((v > floor) as i64);
        }
        self.map(x, Op::LogFloor { x, floor }, |v| v.max(floor).ln())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        for &v in self.nodes[x.0].value.data.iter() {
            self.branches.push(v.signum() as i64 * (v != 0.0) as i64);
        }
        self.map(x, Op::Abs(x), f64::abs)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        for &v in self.nodes[x.0].value.data.iter() {
            self.branches.push(if v < lo {
                -1
            } else if v > hi {
                1
            } else {
                0
            });
        }
        self.map(x, Op::Clamp { x, lo, hi }, |v| v.clamp(lo, hi))
    }

    /// Elementwise log-area ratio `log((1−k)/(1+k))`.
    pub fn lar(&mut self, k: Var) -> Var {
        self.map(k, Op::Lar(k), |v| ((1.0 - v) / (1.0 + v)).ln())
    }

    /// Interpolated embedding `(1−f)·v_⌊x⌋ + f·v_{⌊x⌋+1}` of a real μ-law
    /// value; differentiable in the table rows and in `x`.
    pub fn embed_interp(&mut self, table: Var, x: Var) -> Result<Var> {
        let t = self.value(table);
        if t.shape.len() != 2 || t.shape[0] != EMBED_ROWS {
            return Err(shape_err("embed_interp", format!("table {:?}", t.shape)));
        }
        let xv = self.value(x).item();
        if !(xv.abs() <= U_MAX) {
            return Err(Error::Domain(format!("embedding input {xv} outside [-128, 128]")));
        }
        let (row, f) = interp_cell(xv);
        let out: Vec<f64> = t
            .row(row)
            .iter()
            .zip(t.row(row + 1))
            .map(|(a, b)| (1.0 - f) * a + f * b)
            .collect();
        self.branches.push(row as i64);
        Ok(self.push(Op::EmbedInterp { table, x }, Tensor::vector(out)))
    }

    /// Step-up recursion from reflection to prediction coefficients.
    pub fn levinson(&mut self, k: Var) -> Var {
        let a = lp::step_up(self.vals(k));
        self.push(Op::Levinson(k), Tensor::vector(a))
    }

    /// `Σ a_i s_{t−i}` with `history` ordered oldest first.
    pub fn predict(&mut self, history: Var, a: Var) -> Result<Var> {
        self.same_len("predict", history, a)?;
        let p = signal::predict_unchecked(self.vals(history), self.vals(a));
        Ok(self.push(Op::Predict { history, a }, Tensor::scalar(p)))
    }

    /// μ-law compression of values in [-1, 1].
    pub fn mu_compand(&mut self, x: Var) -> Result<Var> {
        for &v in self.nodes[x.0].value.data.iter() {
            if !(v.abs() <= 1.0) {
                return Err(Error::Domain(format!("compand input {v} outside [-1, 1]")));
            }
            self.branches.push(v.signum() as i64);
        }
        Ok(self.map(x, Op::MuCompand(x), signal::compand))
    }

    /// `(1−f)·P(⌊e⌋) + f·P(⌊e⌋+1)` for a real μ-law target `e`.
    pub fn interp_pick(&mut self, probs: Var, target: Var) -> Result<Var> {
        let p = self.vals(probs);
        if p.len() != N_CLASSES {
            return Err(shape_err("interp_pick", format!("{} classes", p.len())));
        }
        let e = self.value(target).item();
        if !(e.abs() <= U_MAX) {
            return Err(Error::Domain(format!("target {e} outside [-128, 128]")));
        }
        let j = e.floor();
        let f = e - j;
        let v = (1.0 - f) * p[class_of(j)] + f * p[class_of(j + 1.0)];
        self.branches.push(j as i64);
        Ok(self.push(Op::InterpPick { probs, target }, Tensor::scalar(v)))
    }

    /// `P(index)`, a constant class choice.
    pub fn pick(&mut self, probs: Var, index: usize) -> Result<Var> {
        let p = self.vals(probs);
        if index >= p.len() {
            return Err(shape_err("pick", format!("index {index} of {}", p.len())));
        }
        let v = p[index];
        Ok(self.push(Op::Pick { probs, index }, Tensor::scalar(v)))
    }

    /// Gradients of the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        self.backward_seeded(&[(loss, Tensor::scalar(1.0))])
    }

    /// Backward pass starting from several seeded output gradients.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, g) in seeds {
            accumulate(&mut grads, *v, &self.nodes[v.0].value, g.data());
            top = top.max(v.0 + 1);
        }
        for i in (0..top).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g.data, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value.data;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let wt = self.value(*w);
                let (rows, cols) = (wt.shape[0], wt.shape[1]);
                let xv = self.vals(*x);
                let mut gx = vec![0.0; cols];
                let mut gw = vec![0.0; rows * cols];
                for r in 0..rows {
                    let wr = &wt.data[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        gx[c] += wr[c] * g[r];
                        gw[r * cols + c] = g[r] * xv[c];
                    }
                }
                self.acc(grads, *x, &gx);
                self.acc(grads, *w, &gw);
                self.acc(grads, *b, g);
            }
            Op::Tanh(x) => {
                let gx: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.acc(grads, *x, &gx);
            }
            Op::Sigmoid(x) => {
                let gx: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.acc(grads, *x, &gx);
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g);
                self.acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.acc(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                let ga: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                let gb: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                self.acc(grads, *a, &ga);
                self.acc(grads, *b, &gb);
            }
            Op::Scale(x, c) => {
                let gx: Vec<f64> = g.iter().map(|v| c * v).collect();
                self.acc(grads, *x, &gx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.vals(*p).len();
                    self.acc(grads, *p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let mut gx = vec![0.0; self.vals(*x).len()];
                gx[*start..*start + g.len()].copy_from_slice(g);
                self.acc(grads, *x, &gx);
            }
            Op::Softmax(x) => {
                let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                let gx: Vec<f64> = g.iter().zip(y).map(|(g, y)| y * (g - dot)).collect();
                self.acc(grads, *x, &gx);
            }
            Op::Sum(x) => {
                let gx = vec![g[0]; self.vals(*x).len()];
                self.acc(grads, *x, &gx);
            }
            Op::LogFloor { x, floor } => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.vals(*x))
                    .map(|(g, &v)| if v > *floor { g / v } else { 0.0 })
                    .collect();
                self.acc(grads, *x, &gx);
            }
            Op::Abs(x) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.vals(*x))
                    .map(|(g, &v)| if v == 0.0 { 0.0 } else { g * v.signum() })
                    .collect();
                self.acc(grads, *x, &gx);
            }
            Op::Clamp { x, lo, hi } => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.vals(*x))
                    .map(|(g, &v)| if v >= *lo && v <= *hi { *g } else { 0.0 })
                    .collect();
                self.acc(grads, *x, &gx);
            }
            Op::Lar(k) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.vals(*k))
                    .map(|(g, &v)| -2.0 * g / (1.0 - v * v))
                    .collect();
                self.acc(grads, *k, &gx);
            }
            Op::EmbedInterp { table, x } => {
                let t = self.value(*table);
                let (row, f) = interp_cell(self.value(*x).item());
                let cols = t.shape[1];
                let mut gt = vec![0.0; t.data.len()];
                let mut gxv = 0.0;
                for c in 0..cols {
                    gt[row * cols + c] += (1.0 - f) * g[c];
                    gt[(row + 1) * cols + c] += f * g[c];
                    gxv += g[c] * (t.data[(row + 1) * cols + c] - t.data[row * cols + c]);
                }
                self.acc(grads, *table, &gt);
                self.acc(grads, *x, &[gxv]);
            }
            Op::Levinson(k) => {
                let gk = levinson_vjp(self.vals(*k), g);
                self.acc(grads, *k, &gk);
            }
            Op::Predict { history, a } => {
                let (h, av) = (self.vals(*history), self.vals(*a));
                let m = av.len();
                let mut gh = vec![0.0; m];
                let mut ga = vec![0.0; m];
                for i in 0..m {
                    ga[i] = g[0] * h[m - 1 - i];
                    gh[m - 1 - i] = g[0] * av[i];
                }
                self.acc(grads, *history, &gh);
                self.acc(grads, *a, &ga);
            }
            Op::MuCompand(x) => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(self.vals(*x))
                    .map(|(g, &v)| g * signal::compand_derivative(v))
                    .collect();
                self.acc(grads, *x, &gx);
            }
            Op::InterpPick { probs, target } => {
                let p = self.vals(*probs);
                let e = self.value(*target).item();
                let j = e.floor();
                let f = e - j;
                let (c0, c1) = (class_of(j), class_of(j + 1.0));
                let mut gp = vec![0.0; p.len()];
                gp[c0] += (1.0 - f) * g[0];
                gp[c1] += f * g[0];
                self.acc(grads, *probs, &gp);
                self.acc(grads, *target, &[g[0] * (p[c1] - p[c0])]);
            }
            Op::Pick { probs, index } => {
                let mut gp = vec![0.0; self.vals(*probs).len()];
                gp[*index] = g[0];
                self.acc(grads, *probs, &gp);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: &[f64]) {
        accumulate(grads, v, &self.nodes[v.0].value, g);
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, like: &Tensor, g: &[f64]) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: like.shape.clone(),
                data: g.to_vec(),
            })
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Vector-Jacobian product of the step-up recursion: given `∂L/∂a` for
/// `a = step_up(k)`, returns `∂L/∂k`. The forward recursion is replayed to
/// recover every intermediate order, then differentiated in reverse.
pub fn levinson_vjp(k: &[f64], grad_a: &[f64]) -> Vec<f64> {
    let m = k.len();
    let mut orders: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    orders.push(Vec::new());
    for i in 0..m {
        let prev = &orders[i];
        let mut a: Vec<f64> = (0..i).map(|j| prev[j] - k[i] * prev[i - 1 - j]).collect();
        a.push(k[i]);
        orders.push(a);
    }
    let mut gk = vec![0.0; m];
    let mut ga = grad_a.to_vec();
    for i in (0..m).rev() {
        // a^{(i+1)}_j = a^{(i)}_j − k_i a^{(i)}_{i−1−j} for j < i; a^{(i+1)}_i = k_i.
        let prev = &orders[i];
        let mut gk_i = ga[i];
        let mut gprev = vec![0.0; i];
        for j in 0..i {
            gk_i -= ga[j] * prev[i - 1 - j];
            gprev[j] += ga[j];
            gprev[i - 1 - j] -= k[i] * ga[j];
        }
        gk[i] = gk_i;
        ga = gprev;
    }
    gk
}

/// Parameters of one GRU layer as tape variables.
///
/// Formulation (gates stacked `[z, r, n]` in the `3H` dimension):
///
/// ```text
/// z  = σ(W_z x + b_z + U_z h + c_z)
/// r  = σ(W_r x + b_r + U_r h + c_r)
/// n  = tanh(W_n x + b_n + r ⊙ (U_n h + c_n))
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    /// Input weights `[3H, I]`.
    pub w: Var,
    /// Recurrent weights `[3H, H]`.
    pub u: Var,
    /// Input bias `[3H]`.
    pub bx: Var,
    /// Recurrent bias `[3H]`.
    pub bh: Var,
}

/// One GRU step built from tape primitives.
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, p: &GruVars) -> Result<Var> {
    let hidden = tape.value(h).len();
    if tape.value(p.u).shape() != [3 * hidden, hidden] {
        return Err(shape_err(
            "gru_cell",
            format!("U {:?} for state {hidden}", tape.value(p.u).shape()),
        ));
    }
    let xg = tape.affine(x, p.w, p.bx)?;
    let hg = tape.affine(h, p.u, p.bh)?;
    let xz = tape.slice(xg, 0, hidden)?;
    let xr = tape.slice(xg, hidden, hidden)?;
    let xn = tape.slice(xg, 2 * hidden, hidden)?;
    let hz = tape.slice(hg, 0, hidden)?;
    let hr = tape.slice(hg, hidden, hidden)?;
    let hn = tape.slice(hg, 2 * hidden, hidden)?;
    let zs = tape.add(xz, hz)?;
    let z = tape.sigmoid(zs);
    let rs = tape.add(xr, hr)?;
    let r = tape.sigmoid(rs);
    let rh = tape.mul(r, hn)?;
    let ns = tape.add(xn, rh)?;
    let n = tape.tanh(ns);
    let d = tape.sub(n, h)?;
    let zd = tape.mul(z, d)?;
    tape.add(h, zd)
}

/// Embedding table with rows for μ-law values -128..=128.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable(Tensor);

impl EmbeddingTable {
    pub fn new(table: Tensor) -> Result<Self> {
        if table.shape().len() != 2 || table.shape()[0] != EMBED_ROWS {
            return Err(shape_err(
                "embedding",
                format!("expected [{EMBED_ROWS}, E], got {:?}", table.shape()),
            ));
        }
        Ok(Self(table))
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// Row for a μ-law value `v` in -128..=128.
    pub fn row(&self, v: i32) -> &[f64] {
        self.0.row((v + U_MAX as i32) as usize)
    }

    /// Interpolated lookup (training path).
    pub fn embed_interp(&self, x: f64) -> Result<Vec<f64>> {
        if !(x.abs() <= U_MAX) {
            return Err(Error::Domain(format!("embedding input {x} outside [-128, 128]")));
        }
        let (row, f) = interp_cell(x);
        Ok(self
            .0
            .row(row)
            .iter()
            .zip(self.0.row(row + 1))
            .map(|(a, b)| (1.0 - f) * a + f * b)
            .collect())
    }

    /// Nearest-row lookup, ties away from zero (inference path).
    pub fn embed_round(&self, x: f64) -> Result<&[f64]> {
        if !(x.abs() <= U_MAX) {
            return Err(Error::Domain(format!("embedding input {x} outside [-128, 128]")));
        }
        Ok(self.row(signal::round_half_away(x) as i32))
    }
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` pairs whose relative error exceeded the tolerance.
    pub failing_indices: Vec<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose ±h evaluation crossed a kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing_indices.is_empty()
    }
}

/// Relative error used by [`grad_check`].
pub fn rel_error(fd: f64, bp: f64) -> f64 {
    (fd - bp).abs() / fd.abs().max(bp.abs()).max(1e-8)
}

/// Compares tape gradients of a scalar function against central
/// differences `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_with(&f, point, tolerance, |probe| {
        let (fp, fm) = probe(h)?;
        Ok(fp.zip(fm).map(|(fp, fm)| (fp - fm) / (2.0 * h)))
    })
}

/// Like [`grad_check`], but each derivative is a Richardson extrapolation
/// (Ridders' tableau) over central differences at steps `h0, h0/2, h0/4, ...`.
///
/// Steps whose ±h evaluation crosses a kink are dropped before the tableau
/// starts; a coordinate is skipped when no step down to `h0 / 2^20` stays on
/// the base branch. Suited to composed functions whose coordinates mix tiny
/// gradients (which need a large step to beat rounding) with strong local
/// curvature (which needs a small one).
pub fn grad_check_extrapolated<F>(f: F, point: &[Tensor], h0: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    const SHRINK: f64 = 2.0;
    const TABLE: usize = 8;
    const MAX_HALVINGS: usize = 20;
    check_with(&f, point, tolerance, |probe| {
        let mut h = h0;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(TABLE);
        let mut best = None;
        let mut err = f64::INFINITY;
        for _ in 0..MAX_HALVINGS {
            let central = match probe(h)? {
                (Some(fp), Some(fm)) => Some((fp - fm) / (2.0 * h)),
                _ => None,
            };
            h /= SHRINK;
            let Some(d) = central else {
                if rows.is_empty() {
                    continue;
                }
                // A kink inside a step smaller than one already used.
                break;
            };
            let mut row = vec![d];
            let mut fac = SHRINK * SHRINK;
            if let Some(prev) = rows.last() {
                for j in 1..=prev.len() {
                    let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
                    let e = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
                    if e <= err {
                        err = e;
                        best = Some(v);
                    }
                    row.push(v);
                    fac *= SHRINK * SHRINK;
                }
                let diag_jump = (row[row.len() - 1] - prev[prev.len() - 1]).abs();
                if diag_jump >= 2.0 * err {
                    rows.push(row);
                    break;
                }
            } else {
                best = Some(d);
            }
            rows.push(row);
            if rows.len() == TABLE {
                break;
            }
        }
        Ok(best)
    })
}

/// `probe(h)` returns `f(x ± h)` for the current coordinate, `None` on a side
/// whose branch signature differs from the base point.
type Probe<'a> = dyn FnMut(f64) -> Result<(Option<f64>, Option<f64>)> + 'a;

fn check_with<F, D>(f: &F, point: &[Tensor], tolerance: f64, mut derivative: D) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    D: FnMut(&mut Probe<'_>) -> Result<Option<f64>>,
{
    let eval = |pt: &[Tensor]| -> Result<(f64, Vec<i64>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pt.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.value(out).item(), tape.branches))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(shape_err("grad_check", "function must be scalar".into()));
    }
    let grads = tape.backward(out);
    let base_branches = tape.branches().to_vec();

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = point.to_vec();
    for (i, p) in point.iter().enumerate() {
        let g = grads.wrt(vars[i], p);
        for c in 0..p.len() {
            let orig = p.data[c];
            let fd = {
                let work = &mut work;
                let mut probe = |h: f64| -> Result<(Option<f64>, Option<f64>)> {
                    work[i].data[c] = orig + h;
                    let (fp, bp) = eval(work)?;
                    work[i].data[c] = orig - h;
                    let (fm, bm) = eval(work)?;
                    work[i].data[c] = orig;
                    Ok((
                        (bp == base_branches).then_some(fp),
                        (bm == base_branches).then_some(fm),
                    ))
                };
                derivative(&mut probe)?
            };
            let Some(fd) = fd else {
                report.skipped += 1;
                continue;
            };
            let err = rel_error(fd, g.data[c]);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
            if err > tolerance || !err.is_finite() {
                report.failing_indices.push((i, c));
            }
        }
    }
    Ok(report)
}
