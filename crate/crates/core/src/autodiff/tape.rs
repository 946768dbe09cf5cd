//! Reverse-mode tape. Each forward pass records onto a fresh [`Tape`];
//! [`Tape::backward`] walks it once in reverse and the tape is then dropped.

use super::linalg;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Sin,
    Exp,
    Log,
    Square,
    Negate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Trace,
    L2NormSq,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Var, Unary),
    Clamp(Var, f64, f64),
    Reduce(Var, Reduce, usize),
    SumRows(Var),
    Transpose(Var),
    Concat(Var, Var, Axis),
    Softmax(Var),
    LogSoftmax(Var),
    Inverse(Var),
    BlockLeftMatMul(Var, Var),
    Reshape(Var),
    SliceCols(Var, usize),
    SelectPerRow(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every tracked node of a tape.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into `param.grad`.
    pub fn accumulate_into(&self, v: Var, param: &mut Tensor) {
        if let Some(g) = self.get(v) {
            param.accumulate_grad(g);
        }
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(shape_err(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (o, &x) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = (x - m).exp();
            z += *o;
        }
        out[r * cols..(r + 1) * cols].iter_mut().for_each(|o| *o /= z);
    }
    out
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tr(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records `t`; it is a gradient target when `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let tracked = t.requires_grad();
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
        self.push(value, Op::Leaf, tracked)
    }

    /// Records a trainable copy of `t` regardless of its flag.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = Tensor::new(t.shape().to_vec(), t.into_data()).expect("valid tensor");
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, k2, m) = (av.rows(), av.cols(), bv.rows(), bv.cols());
        if k != k2 {
            return Err(shape_err(format!(
                "matmul inner dimensions differ: {n}×{k} · {k2}×{m}"
            )));
        }
        let out = linalg::matmul(av.data(), bv.data(), n, k, m);
        let tracked = self.tr(a) || self.tr(b);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), tracked))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, what)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let tracked = self.tr(a) || self.tr(b);
        Ok(self.push(t, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let tracked = self.tr(a) || self.tr(b);
        Ok(self.push(t, Op::Sub(a, b), tracked))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "hadamard", |x, y| x * y)?;
        let tracked = self.tr(a) || self.tr(b);
        Ok(self.push(t, Op::Hadamard(a, b), tracked))
    }

    /// `a[n×m] + row[1×m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        let m = av.cols();
        if rv.numel() != m {
            return Err(shape_err(format!(
                "add_row: row of {} values for {} columns",
                rv.numel(),
                m
            )));
        }
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(m) {
            chunk.iter_mut().zip(rv.data()).for_each(|(x, b)| *x += b);
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let tracked = self.tr(a) || self.tr(row);
        Ok(self.push(t, Op::AddRow(a, row), tracked))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * k).collect())?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::Scale(a, k), tracked))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x + k).collect())?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::AddScalar(a), tracked))
    }

    pub fn elementwise(&mut self, a: Var, f: Unary) -> Result<Var> {
        let av = self.value(a);
        if f == Unary::Log {
            if let Some(bad) = av.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        let map: fn(f64) -> f64 = match f {
            Unary::Relu => |x| x.max(0.0),
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Sin => f64::sin,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Square => |x| x * x,
            Unary::Negate => |x| -x,
        };
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| map(x)).collect())?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::Unary(a, f), tracked))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(a, Unary::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(a, Unary::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.elementwise(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.elementwise(a, Unary::Log)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.elementwise(a, Unary::Square)
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().map(|x| x.clamp(lo, hi)).collect(),
        )?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::Clamp(a, lo, hi), tracked))
    }

    pub fn reduce(&mut self, a: Var, r: Reduce) -> Result<Var> {
        let av = self.value(a);
        let mut arg = 0;
        let v = match r {
            Reduce::Sum => av.data().iter().sum(),
            Reduce::Mean => av.data().iter().sum::<f64>() / av.numel() as f64,
            Reduce::Trace => {
                if av.rows() != av.cols() {
                    return Err(shape_err(format!("trace of non-square {:?}", av.shape())));
                }
                (0..av.rows()).map(|i| av.get(i, i)).sum()
            }
            Reduce::L2NormSq => av.data().iter().map(|x| x * x).sum(),
            Reduce::Max => {
                let mut best = f64::NEG_INFINITY;
                for (i, &x) in av.data().iter().enumerate() {
                    if x > best {
                        best = x;
                        arg = i;
                    }
                }
                best
            }
        };
        let tracked = self.tr(a);
        Ok(self.push(Tensor::scalar(v), Op::Reduce(a, r, arg), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduce::Sum)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduce::Mean)
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduce::Trace)
    }

    pub fn l2_norm_sq(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, Reduce::L2NormSq)
    }

    /// Row sums: `n×m → n×1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let m = av.cols();
        let data: Vec<f64> = av.data().chunks(m).map(|c| c.iter().sum()).collect();
        let t = Tensor::column(data)?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::SumRows(a), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transposed();
        let tracked = self.tr(a);
        Ok(self.push(t, Op::Transpose(a), tracked))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: Axis) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let t = match axis {
            Axis::Rows => {
                if av.cols() != bv.cols() {
                    return Err(shape_err("concat rows: column counts differ"));
                }
                let mut d = av.data().to_vec();
                d.extend_from_slice(bv.data());
                Tensor::matrix(av.rows() + bv.rows(), av.cols(), d)?
            }
            Axis::Cols => {
                if av.rows() != bv.rows() {
                    return Err(shape_err("concat cols: row counts differ"));
                }
                let (ca, cb) = (av.cols(), bv.cols());
                let mut d = Vec::with_capacity(av.numel() + bv.numel());
                for r in 0..av.rows() {
                    d.extend_from_slice(av.row_slice(r));
                    d.extend_from_slice(bv.row_slice(r));
                }
                Tensor::matrix(av.rows(), ca + cb, d)?
            }
        };
        let tracked = self.tr(a) || self.tr(b);
        Ok(self.push(t, Op::Concat(a, b, axis), tracked))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::new(
            av.shape().to_vec(),
            softmax_rows(av.data(), av.rows(), av.cols()),
        )?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::Softmax(a), tracked))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        let mut out = av.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let t = Tensor::new(av.shape().to_vec(), out)?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::LogSoftmax(a), tracked))
    }

    pub fn inverse(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.rows();
        if n != av.cols() {
            return Err(shape_err(format!("inverse of non-square {:?}", av.shape())));
        }
        let inv = linalg::invert(av.data(), n)?;
        let tracked = self.tr(a);
        Ok(self.push(Tensor::matrix(n, n, inv)?, Op::Inverse(a), tracked))
    }

    /// Applies `w[L×L]` on the left of every consecutive `L×c` block of
    /// `m[(B·L)×c]`, i.e. mixes the attribute axis of a batch of samples.
    pub fn block_left_matmul(&mut self, w: Var, m: Var) -> Result<Var> {
        let (wv, mv) = (self.value(w), self.value(m));
        let l = wv.rows();
        if wv.cols() != l {
            return Err(shape_err("block_left_matmul: mixing matrix must be square"));
        }
        if mv.rows() % l != 0 {
            return Err(shape_err(format!(
                "block_left_matmul: {} rows are not a multiple of {l}",
                mv.rows()
            )));
        }
        let c = mv.cols();
        let block = l * c;
        let mut out = Vec::with_capacity(mv.numel());
        for chunk in mv.data().chunks(block) {
            out.extend(linalg::matmul(wv.data(), chunk, l, l, c));
        }
        let t = Tensor::matrix(mv.rows(), c, out)?;
        let tracked = self.tr(w) || self.tr(m);
        Ok(self.push(t, Op::BlockLeftMatMul(w, m), tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        let t = Tensor::new(shape, av.data().to_vec())?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::Reshape(a), tracked))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start >= end || end > av.cols() {
            return Err(shape_err(format!(
                "slice_cols {start}..{end} of {} columns",
                av.cols()
            )));
        }
        let mut d = Vec::with_capacity(av.rows() * (end - start));
        for r in 0..av.rows() {
            d.extend_from_slice(&av.row_slice(r)[start..end]);
        }
        let t = Tensor::matrix(av.rows(), end - start, d)?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::SliceCols(a, start), tracked))
    }

    /// Picks column `idx[r]` from row `r`: `n×k → n×1`.
    pub fn select_per_row(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if idx.len() != av.rows() || idx.iter().any(|&i| i >= av.cols()) {
            return Err(shape_err("select_per_row: index list does not match rows/cols"));
        }
        let d = idx.iter().enumerate().map(|(r, &c)| av.get(r, c)).collect();
        let t = Tensor::column(d)?;
        let tracked = self.tr(a);
        Ok(self.push(t, Op::SelectPerRow(a, idx.to_vec()), tracked))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward requires a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.tr(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        let mut send = |v: Var, delta: &[f64]| {
            if self.nodes[v.0].tracked {
                add_into(&mut grads[v.0], delta);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.tr(*a) {
                    send(*a, &linalg::matmul_nt(g, bv.data(), n, m, k));
                }
                if self.tr(*b) {
                    send(*b, &linalg::matmul_tn(av.data(), g, n, k, m));
                }
            }
            Op::Add(a, b) => {
                send(*a, g);
                send(*b, g);
            }
            Op::Sub(a, b) => {
                send(*a, g);
                if self.tr(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    send(*b, &neg);
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.tr(*a) {
                    let d: Vec<f64> = g.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    send(*a, &d);
                }
                if self.tr(*b) {
                    let d: Vec<f64> = g.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    send(*b, &d);
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g);
                if self.tr(*row) {
                    let m = self.value(*row).numel();
                    let mut d = vec![0.0; m];
                    for chunk in g.chunks(m) {
                        d.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                    send(*row, &d);
                }
            }
            Op::Scale(a, k) => {
                let d: Vec<f64> = g.iter().map(|x| x * k).collect();
                send(*a, &d);
            }
            Op::AddScalar(a) => send(*a, g),
            Op::Unary(a, f) => {
                let x = self.value(*a).data();
                let y = out.data();
                let d: Vec<f64> = match f {
                    Unary::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Unary::Sigmoid => g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    Unary::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Unary::Sin => g.iter().zip(x).map(|(g, x)| g * x.cos()).collect(),
                    Unary::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                    Unary::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                    Unary::Square => g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect(),
                    Unary::Negate => g.iter().map(|g| -g).collect(),
                };
                send(*a, &d);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let d: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > *lo && x < *hi { *g } else { 0.0 })
                    .collect();
                send(*a, &d);
            }
            Op::Reduce(a, r, arg) => {
                let av = self.value(*a);
                let g0 = g[0];
                let d: Vec<f64> = match r {
                    Reduce::Sum => vec![g0; av.numel()],
                    Reduce::Mean => vec![g0 / av.numel() as f64; av.numel()],
                    Reduce::Trace => {
                        let n = av.rows();
                        let mut d = vec![0.0; n * n];
                        for i in 0..n {
                            d[i * n + i] = g0;
                        }
                        d
                    }
                    Reduce::L2NormSq => av.data().iter().map(|x| 2.0 * x * g0).collect(),
                    Reduce::Max => {
                        let mut d = vec![0.0; av.numel()];
                        d[*arg] = g0;
                        d
                    }
                };
                send(*a, &d);
            }
            Op::SumRows(a) => {
                let m = self.value(*a).cols();
                let d: Vec<f64> = g.iter().flat_map(|&x| std::iter::repeat_n(x, m)).collect();
                send(*a, &d);
            }
            Op::Transpose(a) => {
                let d = linalg::transpose(g, out.rows(), out.cols());
                send(*a, &d);
            }
            Op::Concat(a, b, axis) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                match axis {
                    Axis::Rows => {
                        let split = av.numel();
                        send(*a, &g[..split]);
                        send(*b, &g[split..]);
                    }
                    Axis::Cols => {
                        let (ca, cb) = (av.cols(), bv.cols());
                        let mut da = Vec::with_capacity(av.numel());
                        let mut db = Vec::with_capacity(bv.numel());
                        for row in g.chunks(ca + cb) {
                            da.extend_from_slice(&row[..ca]);
                            db.extend_from_slice(&row[ca..]);
                        }
                        send(*a, &da);
                        send(*b, &db);
                    }
                }
            }
            Op::Softmax(a) => {
                let cols = out.cols();
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), sr) in d
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(out.data().chunks(cols))
                {
                    let dot: f64 = gr.iter().zip(sr).map(|(x, y)| x * y).sum();
                    for ((o, gi), si) in dr.iter_mut().zip(gr).zip(sr) {
                        *o = si * (gi - dot);
                    }
                }
                send(*a, &d);
            }
            Op::LogSoftmax(a) => {
                let cols = out.cols();
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), lr) in d
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(out.data().chunks(cols))
                {
                    let total: f64 = gr.iter().sum();
                    for ((o, gi), li) in dr.iter_mut().zip(gr).zip(lr) {
                        *o = gi - li.exp() * total;
                    }
                }
                send(*a, &d);
            }
            Op::Inverse(a) => {
                // d(X⁻¹) = −X⁻¹ dX X⁻¹  ⇒  ∂L/∂X = −X⁻ᵀ G X⁻ᵀ
                let n = out.rows();
                let xt = linalg::transpose(out.data(), n, n);
                let tmp = linalg::matmul(&xt, g, n, n, n);
                let d: Vec<f64> = linalg::matmul(&tmp, &xt, n, n, n)
                    .into_iter()
                    .map(|v| -v)
                    .collect();
                send(*a, &d);
            }
            Op::BlockLeftMatMul(w, m) => {
                let (wv, mv) = (self.value(*w), self.value(*m));
                let l = wv.rows();
                let c = mv.cols();
                let block = l * c;
                if self.tr(*w) {
                    let mut dw = vec![0.0; l * l];
                    for (gb, mb) in g.chunks(block).zip(mv.data().chunks(block)) {
                        let part = linalg::matmul_nt(gb, mb, l, c, l);
                        dw.iter_mut().zip(part).for_each(|(x, y)| *x += y);
                    }
                    send(*w, &dw);
                }
                if self.tr(*m) {
                    let mut dm = Vec::with_capacity(mv.numel());
                    for gb in g.chunks(block) {
                        dm.extend(linalg::matmul_tn(wv.data(), gb, l, l, c));
                    }
                    send(*m, &dm);
                }
            }
            Op::Reshape(a) => send(*a, g),
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (cols, width) = (av.cols(), out.cols());
                let mut d = vec![0.0; av.numel()];
                for (r, gr) in g.chunks(width).enumerate() {
                    d[r * cols + start..r * cols + start + width].copy_from_slice(gr);
                }
                send(*a, &d);
            }
            Op::SelectPerRow(a, idx) => {
                let cols = self.value(*a).cols();
                let mut d = vec![0.0; self.value(*a).numel()];
                for (r, (&c, gv)) in idx.iter().zip(g).enumerate() {
                    d[r * cols + c] = *gv;
                }
                send(*a, &d);
            }
        }
    }
}

/// `h(A) = tr[(I + α·A∘A)^L] − L`, built from tape primitives so it is
/// differentiable with respect to `a`. The power uses repeated products.
pub fn acyclicity_penalty(tape: &mut Tape, a: Var, alpha: f64) -> Result<Var> {
    let av = tape.value(a);
    let l = av.rows();
    if av.cols() != l {
        return Err(shape_err(format!("acyclicity_penalty of non-square {:?}", av.shape())));
    }
    if alpha <= 0.0 {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let sq = tape.hadamard(a, a)?;
    let scaled = tape.scale(sq, alpha)?;
    let eye = tape.constant(Tensor::eye(l));
    let base = tape.add(eye, scaled)?;
    let mut power = base;
    for _ in 1..l {
        power = tape.matmul(power, base)?;
    }
    let tr = tape.trace(power)?;
    tape.add_scalar(tr, -(l as f64))
}

/// Value of the acyclicity penalty without gradient tracking.
pub fn acyclicity_value(a: &Tensor, alpha: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(a.clone());
    let h = acyclicity_penalty(&mut tape, v, alpha)?;
    Ok(tape.value(h).item())
}
