use std::cell::{Cell, RefCell};

use super::{NumgradError, Result, Tensor, NORM_EPSILON};

/// Dynamic reverse-mode tape.
///
/// Operations append nodes; node indices only ever point backwards, so the
/// construction order is a topological order and [`Value::backward`] replays
/// it in reverse. A tape supports one backward pass; build a fresh tape per
/// training step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    backward_run: Cell<bool>,
}

/// Handle to one node of a [`Tape`]. Cheap to copy; reading the stored
/// tensor or gradient clones it out.
#[derive(Clone, Copy)]
pub struct Value<'t> {
    tape: &'t Tape,
    index: usize,
}

struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Relu(usize),
    LogSoftmax(usize),
    CosineRows(usize, usize),
    GatherRows(usize, Vec<usize>),
    ScatterRows(usize, Vec<usize>),
    Pick(usize, Vec<usize>),
    WeightedSum(usize, Tensor),
    Sum(usize),
    Mean(usize),
    Scale(usize, f64),
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a differentiable leaf (parameter or input).
    pub fn var(&self, value: Tensor) -> Value<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a constant leaf. Backward never writes a gradient into it,
    /// and nothing downstream of only constants is tracked.
    pub fn constant(&self, value: Tensor) -> Value<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Value<'_> {
        let grad = Tensor::zeros(value.shape().to_vec());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        Value {
            tape: self,
            index: nodes.len() - 1,
        }
    }

    fn value_of(&self, index: usize) -> Tensor {
        self.nodes.borrow()[index].value.clone()
    }

    fn requires_grad(&self, index: usize) -> bool {
        self.nodes.borrow()[index].requires_grad
    }

    fn backward_from(&self, root: usize) -> Result<()> {
        if self.backward_run.replace(true) {
            return Err(NumgradError::BackwardAlreadyRun);
        }
        let mut nodes = self.nodes.borrow_mut();
        if nodes[root].value.numel() != 1 {
            return Err(NumgradError::NonScalarRoot(
                nodes[root].value.shape().to_vec(),
            ));
        }
        nodes[root].grad.fill(1.0);

        for i in (0..=root).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let g = nodes[i].grad.clone();
            let op = nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (av, bv) = (nodes[a].value.clone(), nodes[b].value.clone());
                    if nodes[a].requires_grad {
                        let da = matmul_kernel(&g, &bv.transpose2());
                        nodes[a].grad.add_assign(&da);
                    }
                    if nodes[b].requires_grad {
                        let db = matmul_kernel(&av.transpose2(), &g);
                        nodes[b].grad.add_assign(&db);
                    }
                }
                Op::Add(a, b) => {
                    if nodes[a].requires_grad {
                        nodes[a].grad.add_assign(&g);
                    }
                    if nodes[b].requires_grad {
                        nodes[b].grad.add_assign(&g);
                    }
                }
                Op::AddRow(m, r) => {
                    if nodes[m].requires_grad {
                        nodes[m].grad.add_assign(&g);
                    }
                    if nodes[r].requires_grad {
                        let (rows, cols) = g.dims2().expect("AddRow output is rank-2");
                        let dr = nodes[r].grad.data_mut();
                        for i in 0..rows {
                            for j in 0..cols {
                                dr[j] += g.data()[i * cols + j];
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    if nodes[x].requires_grad {
                        let xv = nodes[x].value.clone();
                        let dx = nodes[x].grad.data_mut();
                        for (k, (&gv, &v)) in g.data().iter().zip(xv.data()).enumerate() {
                            if v > 0.0 {
                                dx[k] += gv;
                            }
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    if nodes[x].requires_grad {
                        // dx = g - softmax * sum(g), per row; softmax = exp(output)
                        let y = nodes[i].value.clone();
                        let cols = *y.shape().last().expect("log_softmax output non-empty");
                        let dx = nodes[x].grad.data_mut();
                        for (row_g, (row_y, row_dx)) in g
                            .data()
                            .chunks(cols)
                            .zip(y.data().chunks(cols).zip(dx.chunks_mut(cols)))
                        {
                            let gsum: f64 = row_g.iter().sum();
                            for j in 0..cols {
                                row_dx[j] += row_g[j] - row_y[j].exp() * gsum;
                            }
                        }
                    }
                }
                Op::CosineRows(z, c) => {
                    let zv = nodes[z].value.clone();
                    let cv = nodes[c].value.clone();
                    let s = nodes[i].value.clone();
                    let (n, d) = zv.dims2().expect("CosineRows input is rank-2");
                    let cn = cv.l2_norm();
                    if nodes[z].requires_grad {
                        let dz = nodes[z].grad.data_mut();
                        for r in 0..n {
                            let zr = &zv.data()[r * d..(r + 1) * d];
                            let zn = zr.iter().map(|v| v * v).sum::<f64>().sqrt();
                            let gi = g.data()[r];
                            let si = s.data()[r];
                            for j in 0..d {
                                dz[r * d + j] +=
                                    gi * (cv.data()[j] / (zn * cn) - si * zr[j] / (zn * zn));
                            }
                        }
                    }
                    if nodes[c].requires_grad {
                        let dc = nodes[c].grad.data_mut();
                        for r in 0..n {
                            let zr = &zv.data()[r * d..(r + 1) * d];
                            let zn = zr.iter().map(|v| v * v).sum::<f64>().sqrt();
                            let gi = g.data()[r];
                            let si = s.data()[r];
                            for j in 0..d {
                                dc[j] += gi * (zr[j] / (zn * cn) - si * cv.data()[j] / (cn * cn));
                            }
                        }
                    }
                }
                Op::GatherRows(x, idx) => {
                    if nodes[x].requires_grad {
                        let cols = nodes[x].value.shape()[1];
                        let dx = nodes[x].grad.data_mut();
                        for (j, &src_row) in idx.iter().enumerate() {
                            for k in 0..cols {
                                dx[src_row * cols + k] += g.data()[j * cols + k];
                            }
                        }
                    }
                }
                Op::ScatterRows(src, idx) => {
                    if nodes[src].requires_grad {
                        let cols = nodes[src].value.shape()[1];
                        let ds = nodes[src].grad.data_mut();
                        for (j, &dst_row) in idx.iter().enumerate() {
                            for k in 0..cols {
                                ds[j * cols + k] += g.data()[dst_row * cols + k];
                            }
                        }
                    }
                }
                Op::Pick(m, idx) => {
                    if nodes[m].requires_grad {
                        let cols = nodes[m].value.shape()[1];
                        let dm = nodes[m].grad.data_mut();
                        for (r, &col) in idx.iter().enumerate() {
                            dm[r * cols + col] += g.data()[r];
                        }
                    }
                }
                Op::WeightedSum(x, w) => {
                    if nodes[x].requires_grad {
                        let gv = g.item();
                        let dx = nodes[x].grad.data_mut();
                        for (k, &wk) in w.data().iter().enumerate() {
                            dx[k] += gv * wk;
                        }
                    }
                }
                Op::Sum(x) => {
                    if nodes[x].requires_grad {
                        let gv = g.item();
                        for dv in nodes[x].grad.data_mut() {
                            *dv += gv;
                        }
                    }
                }
                Op::Mean(x) => {
                    if nodes[x].requires_grad {
                        let n = nodes[x].value.numel() as f64;
                        let gv = g.item() / n;
                        for dv in nodes[x].grad.data_mut() {
                            *dv += gv;
                        }
                    }
                }
                Op::Scale(x, k) => {
                    if nodes[x].requires_grad {
                        let dx = nodes[x].grad.data_mut();
                        for (p, &gv) in g.data().iter().enumerate() {
                            dx[p] += k * gv;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl<'t> Value<'t> {
    pub fn tensor(&self) -> Tensor {
        self.tape.value_of(self.index)
    }

    pub fn grad(&self) -> Tensor {
        self.tape.nodes.borrow()[self.index].grad.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.index].value.shape().to_vec()
    }

    /// The single element of a scalar value.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.index].value.item()
    }

    /// Runs the backward pass from this (scalar) root, populating the
    /// gradients of every reachable differentiable node exactly once.
    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.index)
    }

    fn same_tape(&self, other: &Value<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(NumgradError::TapeMismatch)
        }
    }

    fn unary(&self, value: Tensor, op: Op) -> Value<'t> {
        let rg = self.tape.requires_grad(self.index);
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Value<'t>, value: Tensor, op: Op) -> Value<'t> {
        let rg = self.tape.requires_grad(self.index) || self.tape.requires_grad(other.index);
        self.tape.push(value, op, rg)
    }

    /// Matrix product of two rank-2 values.
    pub fn matmul(self, rhs: Value<'t>) -> Result<Value<'t>> {
        self.same_tape(&rhs)?;
        let a = self.tensor();
        let b = rhs.tensor();
        let (m, ka) = a.dims2()?;
        let (kb, n) = b.dims2()?;
        if ka != kb {
            return Err(NumgradError::Dimension(format!(
                "matmul inner dimensions differ: {}x{} vs {}x{}",
                m, ka, kb, n
            )));
        }
        let out = matmul_kernel(&a, &b);
        Ok(self.binary(&rhs, out, Op::Matmul(self.index, rhs.index)))
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(self, rhs: Value<'t>) -> Result<Value<'t>> {
        self.same_tape(&rhs)?;
        let a = self.tensor();
        let b = rhs.tensor();
        if a.shape() != b.shape() {
            return Err(NumgradError::Dimension(format!(
                "add shapes differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = a;
        out.add_assign(&b);
        Ok(self.binary(&rhs, out, Op::Add(self.index, rhs.index)))
    }

    /// Adds a length-`k` row vector to every row of an `n x k` matrix.
    pub fn add_row(self, row: Value<'t>) -> Result<Value<'t>> {
        self.same_tape(&row)?;
        let m = self.tensor();
        let r = row.tensor();
        let (_, cols) = m.dims2()?;
        if r.shape() != [cols] {
            return Err(NumgradError::Dimension(format!(
                "add_row expects a row of length {}, got shape {:?}",
                cols,
                r.shape()
            )));
        }
        let mut out = m;
        for chunk in out.data_mut().chunks_mut(cols) {
            for (v, &b) in chunk.iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        Ok(self.binary(&row, out, Op::AddRow(self.index, row.index)))
    }

    /// Elementwise `max(0, x)`. The subgradient at 0 is 0.
    pub fn relu(self) -> Value<'t> {
        let mut out = self.tensor();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.unary(out, Op::Relu(self.index))
    }

    /// Log-softmax over the last axis (a vector, or each row of a matrix).
    /// Stabilized by max subtraction: finite inputs give finite outputs.
    pub fn log_softmax(self) -> Result<Value<'t>> {
        let x = self.tensor();
        let cols = match x.shape() {
            [n] => *n,
            [_, c] => *c,
            other => {
                return Err(NumgradError::Dimension(format!(
                    "log_softmax expects rank 1 or 2, got shape {:?}",
                    other
                )))
            }
        };
        if cols == 0 || x.numel() == 0 {
            return Err(NumgradError::Dimension(
                "log_softmax on empty input".to_string(),
            ));
        }
        let mut out = x;
        for row in out.data_mut().chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.unary(out, Op::LogSoftmax(self.index)))
    }

    /// Cosine similarity between every row of `self` (`n x d`) and the
    /// vector `c` (`d`). Errors if any row norm or the center norm falls
    /// below [`NORM_EPSILON`], so training pathologies surface instead of
    /// being clamped away.
    pub fn cosine_rows(self, c: Value<'t>) -> Result<Value<'t>> {
        self.same_tape(&c)?;
        let z = self.tensor();
        let cv = c.tensor();
        let (n, d) = z.dims2()?;
        if cv.shape() != [d] {
            return Err(NumgradError::Dimension(format!(
                "cosine_rows expects a center of length {}, got shape {:?}",
                d,
                cv.shape()
            )));
        }
        let cn = cv.l2_norm();
        if cn <= NORM_EPSILON {
            return Err(NumgradError::DegenerateEmbedding {
                norm: cn,
                limit: NORM_EPSILON,
            });
        }
        let mut out = Tensor::zeros(vec![n]);
        for r in 0..n {
            let zr = z.row(r);
            let zn = zr.iter().map(|v| v * v).sum::<f64>().sqrt();
            if zn <= NORM_EPSILON {
                return Err(NumgradError::DegenerateEmbedding {
                    norm: zn,
                    limit: NORM_EPSILON,
                });
            }
            let dot: f64 = zr.iter().zip(cv.data()).map(|(a, b)| a * b).sum();
            out.data_mut()[r] = dot / (zn * cn);
        }
        Ok(self.binary(&c, out, Op::CosineRows(self.index, c.index)))
    }

    /// Collects the listed rows of a rank-2 value into a new matrix.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Value<'t>> {
        let x = self.tensor();
        let (n, d) = x.dims2()?;
        let mut out = Tensor::zeros(vec![idx.len(), d]);
        for (j, &r) in idx.iter().enumerate() {
            if r >= n {
                return Err(NumgradError::Dimension(format!(
                    "gather_rows index {} out of range for {} rows",
                    r, n
                )));
            }
            out.data_mut()[j * d..(j + 1) * d].copy_from_slice(x.row(r));
        }
        Ok(self.unary(out, Op::GatherRows(self.index, idx.to_vec())))
    }

    /// Spreads the rows of `self` (`m x k`) into a zero matrix with
    /// `row_count` rows, placing row `j` at `idx[j]`. Indices must be unique.
    pub fn scatter_rows(self, row_count: usize, idx: &[usize]) -> Result<Value<'t>> {
        let x = self.tensor();
        let (m, k) = x.dims2()?;
        if idx.len() != m {
            return Err(NumgradError::Dimension(format!(
                "scatter_rows got {} indices for {} rows",
                idx.len(),
                m
            )));
        }
        let mut seen = vec![false; row_count];
        let mut out = Tensor::zeros(vec![row_count, k]);
        for (j, &r) in idx.iter().enumerate() {
            if r >= row_count {
                return Err(NumgradError::Dimension(format!(
                    "scatter_rows index {} out of range for {} rows",
                    r, row_count
                )));
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(NumgradError::Dimension(format!(
                    "scatter_rows duplicate target row {}",
                    r
                )));
            }
            out.data_mut()[r * k..(r + 1) * k].copy_from_slice(x.row(j));
        }
        Ok(self.unary(out, Op::ScatterRows(self.index, idx.to_vec())))
    }

    /// Picks one element per row: `out[i] = self[i, idx[i]]`.
    pub fn pick(self, idx: &[usize]) -> Result<Value<'t>> {
        let x = self.tensor();
        let (n, c) = x.dims2()?;
        if idx.len() != n {
            return Err(NumgradError::Dimension(format!(
                "pick got {} indices for {} rows",
                idx.len(),
                n
            )));
        }
        let mut out = Tensor::zeros(vec![n]);
        for (r, &col) in idx.iter().enumerate() {
            if col >= c {
                return Err(NumgradError::Dimension(format!(
                    "pick column {} out of range for {} columns",
                    col, c
                )));
            }
            out.data_mut()[r] = x.get2(r, col);
        }
        Ok(self.unary(out, Op::Pick(self.index, idx.to_vec())))
    }

    /// Scalar `sum(w .* x)` against a constant weight tensor of the same
    /// shape. The weights receive no gradient.
    pub fn weighted_sum(self, w: &Tensor) -> Result<Value<'t>> {
        let x = self.tensor();
        if x.shape() != w.shape() {
            return Err(NumgradError::Dimension(format!(
                "weighted_sum shapes differ: {:?} vs {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let s: f64 = x.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        Ok(self.unary(Tensor::scalar(s), Op::WeightedSum(self.index, w.clone())))
    }

    /// Scalar sum over all elements. Errors on an empty tensor.
    pub fn sum(self) -> Result<Value<'t>> {
        let x = self.tensor();
        if x.numel() == 0 {
            return Err(NumgradError::Dimension("sum of empty tensor".to_string()));
        }
        let s: f64 = x.data().iter().sum();
        Ok(self.unary(Tensor::scalar(s), Op::Sum(self.index)))
    }

    /// Scalar mean over all elements. Errors on an empty tensor.
    pub fn mean(self) -> Result<Value<'t>> {
        let x = self.tensor();
        if x.numel() == 0 {
            return Err(NumgradError::Dimension("mean of empty tensor".to_string()));
        }
        let s: f64 = x.data().iter().sum();
        let n = x.numel() as f64;
        Ok(self.unary(Tensor::scalar(s / n), Op::Mean(self.index)))
    }

    /// Multiplies every element by a constant.
    pub fn scale(self, k: f64) -> Value<'t> {
        let mut out = self.tensor();
        for v in out.data_mut() {
            *v *= k;
        }
        self.unary(out, Op::Scale(self.index, k))
    }
}

use super::tensor::matmul_kernel;

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_case() {
        let t = Tape::new();
        let eye = t.var(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = t.var(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = eye.matmul(m).unwrap();
        assert_eq!(p.tensor().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_selector_row() {
        let t = Tape::new();
        let a = t.var(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let b = t.var(Tensor::matrix(2, 1, vec![2.0, 5.0]).unwrap());
        let p = a.matmul(b).unwrap();
        assert_eq!(p.tensor().data(), &[2.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let t = Tape::new();
        let a = t.var(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let b = t.var(Tensor::matrix(2, 1, vec![0.0; 2]).unwrap());
        assert!(matches!(
            a.matmul(b),
            Err(NumgradError::Dimension(_))
        ));
    }

    #[test]
    fn matmul_grad_matches_closed_form() {
        // d sum(A*B) / dA at A=[[1,2]], B=[[3],[4]] is [[3,4]]
        let t = Tape::new();
        let a = t.var(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = t.var(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let s = a.matmul(b).unwrap().sum().unwrap();
        s.backward().unwrap();
        assert_eq!(a.grad().data(), &[3.0, 4.0]);
        assert_eq!(b.grad().data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_sign_cases_and_grad() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = x.relu();
        assert_eq!(y.tensor().data(), &[0.0, 0.0, 2.0]);
        let s = y.sum().unwrap();
        s.backward().unwrap();
        // subgradient at 0 is 0
        assert_eq!(x.grad().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_grad_scales_with_upstream() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![3.5]));
        let s = x.relu().sum().unwrap().scale(2.0);
        s.backward().unwrap();
        assert_eq!(x.grad().data(), &[2.0]);
    }

    #[test]
    fn log_softmax_symmetry() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![0.0, 0.0]));
        let y = x.log_softmax().unwrap();
        let want = -(2.0f64.ln());
        assert!(close(y.tensor().data()[0], want, 1e-12));
        assert!(close(y.tensor().data()[1], want, 1e-12));
    }

    #[test]
    fn log_softmax_hand_evaluated() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![1.0, 0.0]));
        let y = x.log_softmax().unwrap();
        let e = std::f64::consts::E;
        assert!(close(y.tensor().data()[0], (e / (e + 1.0)).ln(), 1e-12));
        assert!(close(y.tensor().data()[1], (1.0 / (e + 1.0)).ln(), 1e-12));
    }

    #[test]
    fn log_softmax_is_stabilized() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![1000.0, 0.0]));
        let y = x.log_softmax().unwrap();
        assert!(y.tensor().all_finite());
        let total: f64 = y.tensor().data().iter().map(|v| v.exp()).sum();
        assert!(close(total, 1.0, 1e-9));
    }

    #[test]
    fn log_softmax_empty_is_dimension_error() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![]));
        assert!(matches!(
            x.log_softmax(),
            Err(NumgradError::Dimension(_))
        ));
    }

    #[test]
    fn cosine_rows_cardinal_cases() {
        let t = Tape::new();
        let z = t.var(Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap());
        let c = t.var(Tensor::vector(vec![1.0, 0.0]));
        let s = z.cosine_rows(c).unwrap();
        let got = s.tensor();
        assert!(close(got.data()[0], 1.0, 1e-12));
        assert!(close(got.data()[1], 0.0, 1e-12));
        assert!(close(got.data()[2], 1.0 / 2.0f64.sqrt(), 1e-12));
    }

    #[test]
    fn cosine_rows_rejects_near_zero_norm() {
        let t = Tape::new();
        let z = t.var(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let c = t.var(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(
            z.cosine_rows(c),
            Err(NumgradError::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn reduce_examples() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(x.mean().unwrap().item(), 2.0);

        let empty = t.var(Tensor::vector(vec![]));
        assert!(empty.sum().is_err());

        let t2 = Tape::new();
        let x2 = t2.var(Tensor::vector(vec![4.0, 4.0, 4.0, 4.0]));
        let m = x2.mean().unwrap();
        m.backward().unwrap();
        assert_eq!(x2.grad().data(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn backward_of_sum_gives_ones() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![5.0, 7.0]));
        let s = x.sum().unwrap();
        s.backward().unwrap();
        assert_eq!(x.grad().data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![1.0, 2.0]));
        let y = x.relu();
        assert!(matches!(
            y.backward(),
            Err(NumgradError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn backward_twice_is_rejected() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![1.0]));
        let s = x.sum().unwrap();
        s.backward().unwrap();
        assert!(matches!(
            s.backward(),
            Err(NumgradError::BackwardAlreadyRun)
        ));
    }

    #[test]
    fn constants_get_no_gradient() {
        let t = Tape::new();
        let x = t.var(Tensor::vector(vec![2.0, 3.0]));
        let w = t.constant(Tensor::vector(vec![10.0, 20.0]));
        let s = x.add(w).unwrap().sum().unwrap();
        s.backward().unwrap();
        assert_eq!(x.grad().data(), &[1.0, 1.0]);
        assert_eq!(w.grad().data(), &[0.0, 0.0]);
    }

    #[test]
    fn cross_tape_values_are_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.var(Tensor::vector(vec![1.0]));
        let b = t2.var(Tensor::vector(vec![1.0]));
        assert!(matches!(a.add(b), Err(NumgradError::TapeMismatch)));
    }

    #[test]
    fn gather_scatter_roundtrip_and_grads() {
        let t = Tape::new();
        let x = t.var(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let g = x.gather_rows(&[2, 0]).unwrap();
        assert_eq!(g.tensor().data(), &[5.0, 6.0, 1.0, 2.0]);
        let sc = g.scatter_rows(3, &[2, 0]).unwrap();
        assert_eq!(sc.tensor().data(), &[1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
        let s = sc.sum().unwrap();
        s.backward().unwrap();
        // row 1 was never gathered, so it receives no gradient
        assert_eq!(x.grad().data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn pick_selects_and_routes_grads() {
        let t = Tape::new();
        let m = t.var(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let p = m.pick(&[1, 0]).unwrap();
        assert_eq!(p.tensor().data(), &[2.0, 3.0]);
        let s = p.sum().unwrap();
        s.backward().unwrap();
        assert_eq!(m.grad().data(), &[0.0, 1.0, 1.0, 0.0]);
    }
}
