//! Reverse-mode differentiation over dense tensors.
//!
//! Every operation on a [`Tape`] evaluates eagerly and appends a node holding
//! its value and the indices of its inputs. Node indices are therefore a
//! topological order, and [`Tape::backward`] is one reverse sweep.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::dct::{dct_orthonormal, idct_orthonormal};
use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_into, Tensor};
use super::DiffError;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentReduce {
    Sum,
    Mean,
    Min,
    Max,
    Std,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    GatherRows(usize, Rc<[usize]>),
    Segment {
        input: usize,
        reduce: SegmentReduce,
        segments: Rc<[usize]>,
        // argmin/argmax row per output element, usize::MAX for empty segments
        picks: Vec<usize>,
        // per-segment means, kept for the std backward pass
        means: Vec<f64>,
    },
    RowSum(usize),
    MeanRowsBroadcast(usize),
    Sum(usize),
    Mean(usize),
    Mse(usize, usize),
    SoftmaxRows(usize),
    SoftmaxCrossEntropy(usize, Rc<[usize]>),
    Dct(usize),
    Idct(usize),
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a computation.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    bound: HashMap<(u64, usize), Var>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    bound: HashMap<(u64, usize), Var>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero-filled when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.index] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.index]),
        }
    }

    /// One gradient per parameter of `store`, in store order. Parameters never
    /// bound on the tape get zeros.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        (0..store.len())
            .map(|i| match self.bound.get(&(store.id(), i)) {
                Some(v) => self.wrt(*v),
                None => Tensor::zeros(store.value(ParamId(i)).shape()),
            })
            .collect()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        v.index
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Records an input. Gradients are still computed for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter as a leaf, reusing the same leaf on repeated calls.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.id(), id.0);
        if let Some(v) = self.bound.get(&key) {
            return *v;
        }
        let v = self.leaf(store.value(id).clone());
        self.bound.insert(key, v);
        v
    }

    /// Makes later `param(store, id)` calls return `var` instead of the
    /// stored value. Used to differentiate with respect to substituted
    /// parameter values.
    pub fn bind(&mut self, store: &ParamStore, id: ParamId, var: Var) {
        self.bound.insert((store.id(), id.0), var);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = {
            let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
            va.matmul(vb)?
        };
        Ok(self.push(value, Op::MatMul(ia, ib)))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var, DiffError> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = {
            let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
            if va.shape() != vb.shape() {
                return Err(mismatch(name, va, vb));
            }
            va.zip_map(vb, f)?
        };
        Ok(self.push(value, op(ia, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// `m (r×c) + row (c)`, the row broadcast over every row of `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var, DiffError> {
        let (im, ir) = (self.idx(m), self.idx(row));
        let value = {
            let (vm, vr) = (&self.nodes[im].value, &self.nodes[ir].value);
            let c = vm.cols();
            if vm.rank() != 2 || vr.len() != c {
                return Err(mismatch("add_row", vm, vr));
            }
            let mut out = vm.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += vr.data()[i % c];
            }
            out
        };
        Ok(self.push(value, Op::AddRow(im, ir)))
    }

    /// `m (r×c) * col (r×1)`, each row of `m` scaled by its entry of `col`.
    pub fn mul_col(&mut self, m: Var, col: Var) -> Result<Var, DiffError> {
        let (im, ic) = (self.idx(m), self.idx(col));
        let value = {
            let (vm, vc) = (&self.nodes[im].value, &self.nodes[ic].value);
            let (r, c) = (vm.rows(), vm.cols());
            if vm.rank() != 2 || vc.len() != r {
                return Err(mismatch("mul_col", vm, vc));
            }
            let mut out = vm.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v *= vc.data()[i / c];
            }
            out
        };
        Ok(self.push(value, Op::MulCol(im, ic)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.map(f);
        self.push(value, op(ia))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.map(|x| x * s);
        self.push(value, Op::Scale(ia, s))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log)
    }

    /// Square root; its gradient at 0 is defined as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect();
        let rows = self.nodes[idx[0]].value.rows();
        let mut total = 0;
        for &i in &idx {
            let v = &self.nodes[i].value;
            if v.rank() != 2 || v.rows() != rows {
                return Err(mismatch("concat_cols", &self.nodes[idx[0]].value, v));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &idx {
                out.extend_from_slice(self.nodes[i].value.row(r));
            }
        }
        Ok(self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(idx)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect();
        let cols = self.nodes[idx[0]].value.cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &i in &idx {
            let v = &self.nodes[i].value;
            if v.rank() != 2 || v.cols() != cols {
                return Err(mismatch("concat_rows", &self.nodes[idx[0]].value, v));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(idx)))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let ia = self.idx(a);
        let value = {
            let v = &self.nodes[ia].value;
            if v.rank() != 2 || start > end || end > v.cols() {
                return Err(DiffError::ShapeMismatch {
                    op: "slice_cols",
                    left: v.shape().to_vec(),
                    right: vec![start, end],
                });
            }
            let mut out = Vec::with_capacity(v.rows() * (end - start));
            for r in 0..v.rows() {
                out.extend_from_slice(&v.row(r)[start..end]);
            }
            Tensor::matrix(v.rows(), end - start, out)
        };
        Ok(self.push(value, Op::SliceCols(ia, start)))
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var, DiffError> {
        let ia = self.idx(a);
        let value = {
            let v = &self.nodes[ia].value;
            let c = v.cols();
            if v.rank() != 2 || index.iter().any(|&i| i >= v.rows()) {
                return Err(DiffError::IndexOutOfRange {
                    op: "gather_rows",
                    len: v.rows(),
                });
            }
            let mut out = Vec::with_capacity(index.len() * c);
            for &i in index.iter() {
                out.extend_from_slice(v.row(i));
            }
            Tensor::matrix(index.len(), c, out)
        };
        Ok(self.push(value, Op::GatherRows(ia, index)))
    }

    /// Reduces the rows of `a` into `count` segments; row `k` belongs to
    /// segment `segments[k]`. Empty segments produce zeros. `Std` is the
    /// population standard deviation.
    pub fn segment(
        &mut self,
        a: Var,
        segments: Rc<[usize]>,
        count: usize,
        reduce: SegmentReduce,
    ) -> Result<Var, DiffError> {
        let ia = self.idx(a);
        let (value, picks, means) = {
            let v = &self.nodes[ia].value;
            if v.rank() != 2 || segments.len() != v.rows() || segments.iter().any(|&s| s >= count) {
                return Err(DiffError::IndexOutOfRange {
                    op: "segment",
                    len: count,
                });
            }
            segment_forward(v, &segments, count, reduce)
        };
        Ok(self.push(
            value,
            Op::Segment {
                input: ia,
                reduce,
                segments,
                picks,
                means,
            },
        ))
    }

    /// `r×c → r×1` row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let value = {
            let v = &self.nodes[ia].value;
            let sums = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
            Tensor::matrix(v.rows(), 1, sums)
        };
        self.push(value, Op::RowSum(ia))
    }

    /// Every row replaced by the column means of `a`.
    pub fn mean_rows_broadcast(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let value = {
            let v = &self.nodes[ia].value;
            let (r, c) = (v.rows(), v.cols());
            let mut mean = vec![0.0; c];
            for i in 0..r {
                for (m, x) in mean.iter_mut().zip(v.row(i)) {
                    *m += x;
                }
            }
            let inv = if r > 0 { 1.0 / r as f64 } else { 0.0 };
            let mut out = Vec::with_capacity(r * c);
            for _ in 0..r {
                out.extend(mean.iter().map(|m| m * inv));
            }
            Tensor::matrix(r, c, out)
        };
        self.push(value, Op::MeanRowsBroadcast(ia))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let s = self.nodes[ia].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia))
    }

    /// Mean of all entries; 0 for an empty tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = &self.nodes[ia].value;
        let m = if v.is_empty() {
            0.0
        } else {
            v.data().iter().sum::<f64>() / v.len() as f64
        };
        self.push(Tensor::scalar(m), Op::Mean(ia))
    }

    /// Mean squared difference over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = {
            let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
            if va.shape() != vb.shape() {
                return Err(mismatch("mse", va, vb));
            }
            let n = va.len().max(1) as f64;
            let s: f64 = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            s / n
        };
        Ok(self.push(Tensor::scalar(value), Op::Mse(ia, ib)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let value = softmax_rows(&self.nodes[ia].value);
        self.push(value, Op::SoftmaxRows(ia))
    }

    /// Mean cross-entropy of row-wise softmax against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Rc<[usize]>) -> Result<Var, DiffError> {
        let ia = self.idx(logits);
        let value = {
            let v = &self.nodes[ia].value;
            if v.rows() != targets.len() || targets.iter().any(|&t| t >= v.cols()) {
                return Err(DiffError::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    len: v.cols(),
                });
            }
            let p = softmax_rows(v);
            let n = targets.len().max(1) as f64;
            -targets
                .iter()
                .enumerate()
                .map(|(r, &t)| p.get(r, t).max(1e-300).ln())
                .sum::<f64>()
                / n
        };
        Ok(self.push(Tensor::scalar(value), Op::SoftmaxCrossEntropy(ia, targets)))
    }

    /// Orthonormal DCT-II over all entries, shape preserved.
    pub fn dct(&mut self, a: Var) -> Result<Var, DiffError> {
        let ia = self.idx(a);
        let v = &self.nodes[ia].value;
        let out = Tensor::new(v.shape().to_vec(), dct_orthonormal(v.data())?)?;
        Ok(self.push(out, Op::Dct(ia)))
    }

    /// Orthonormal inverse DCT (DCT-III) over all entries, shape preserved.
    pub fn idct(&mut self, a: Var) -> Result<Var, DiffError> {
        let ia = self.idx(a);
        let v = &self.nodes[ia].value;
        let out = Tensor::new(v.shape().to_vec(), idct_orthonormal(v.data())?)?;
        Ok(self.push(out, Op::Idct(ia)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let ia = self.idx(a);
        let out = self.nodes[ia].value.clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(ia)))
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(DiffError::DetachedLoss);
        }
        let root = loss.index;
        if self.nodes[root].value.len() != 1 || self.nodes[root].value.rank() > 1 {
            return Err(DiffError::LossNotScalar(self.nodes[root].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(Tensor::full(self.nodes[root].value.shape(), 1.0));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        shapes.truncate(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients {
            grads,
            shapes,
            bound: self.bound.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                // dA = G · Bᵀ
                let bt = vb.transpose();
                let mut da = vec![0.0; m * k];
                matmul_into(g.data(), bt.data(), &mut da, m, n, k);
                accumulate(grads, *a, Tensor::matrix(m, k, da));
                // dB = Aᵀ · G
                let at = va.transpose();
                let mut db = vec![0.0; k * n];
                matmul_into(at.data(), g.data(), &mut db, k, m, n);
                accumulate(grads, *b, Tensor::matrix(k, n, db));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                accumulate(grads, *a, g.zip_map(vb, |x, y| x * y).expect("shape"));
                accumulate(grads, *b, g.zip_map(va, |x, y| x * y).expect("shape"));
            }
            Op::AddRow(m, r) => {
                accumulate(grads, *m, g.clone());
                let vr = &self.nodes[*r].value;
                let c = vr.len();
                let mut dr = vec![0.0; c];
                for (k, x) in g.data().iter().enumerate() {
                    dr[k % c] += x;
                }
                accumulate(grads, *r, Tensor::new(vr.shape().to_vec(), dr).expect("shape"));
            }
            Op::MulCol(m, col) => {
                let vm = &self.nodes[*m].value;
                let vc = &self.nodes[*col].value;
                let c = vm.cols();
                let mut dm = g.clone();
                let mut dc = vec![0.0; vc.len()];
                for (k, x) in dm.data_mut().iter_mut().enumerate() {
                    let r = k / c;
                    dc[r] += *x * vm.data()[k];
                    *x *= vc.data()[r];
                }
                accumulate(grads, *m, dm);
                accumulate(grads, *col, Tensor::new(vc.shape().to_vec(), dc).expect("shape"));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::Offset(a) | Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape();
                let gg = Tensor::new(shape.to_vec(), g.data().to_vec()).expect("shape");
                accumulate(grads, *a, gg);
            }
            Op::Relu(a) => {
                let va = &self.nodes[*a].value;
                accumulate(grads, *a, g.zip_map(va, |x, y| if y > 0.0 { x } else { 0.0 }).expect("shape"));
            }
            Op::Sigmoid(a) => {
                accumulate(grads, *a, g.zip_map(out, |x, s| x * s * (1.0 - s)).expect("shape"));
            }
            Op::Exp(a) => accumulate(grads, *a, g.zip_map(out, |x, e| x * e).expect("shape")),
            Op::Log(a) => {
                let va = &self.nodes[*a].value;
                accumulate(grads, *a, g.zip_map(va, |x, y| x / y).expect("shape"));
            }
            Op::Sqrt(a) => {
                accumulate(
                    grads,
                    *a,
                    g.zip_map(out, |x, s| if s > 0.0 { x / (2.0 * s) } else { 0.0 })
                        .expect("shape"),
                );
            }
            Op::Square(a) => {
                let va = &self.nodes[*a].value;
                accumulate(grads, *a, g.zip_map(va, |x, y| 2.0 * x * y).expect("shape"));
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut start = 0;
                for &p in parts {
                    let c = self.nodes[p].value.cols();
                    let mut d = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + start..r * total + start + c]);
                    }
                    accumulate(grads, p, Tensor::matrix(rows, c, d));
                    start += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let v = &self.nodes[p].value;
                    let len = v.len();
                    let d = g.data()[start..start + len].to_vec();
                    accumulate(grads, p, Tensor::matrix(v.rows(), v.cols(), d));
                    start += len;
                }
            }
            Op::SliceCols(a, start) => {
                let va = &self.nodes[*a].value;
                let (rows, cols) = (va.rows(), va.cols());
                let width = out.cols();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + width].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, Tensor::matrix(rows, cols, d));
            }
            Op::GatherRows(a, index) => {
                let va = &self.nodes[*a].value;
                let c = va.cols();
                let mut d = vec![0.0; va.len()];
                for (k, &src) in index.iter().enumerate() {
                    for j in 0..c {
                        d[src * c + j] += g.data()[k * c + j];
                    }
                }
                accumulate(grads, *a, Tensor::matrix(va.rows(), c, d));
            }
            Op::Segment {
                input,
                reduce,
                segments,
                picks,
                means,
            } => {
                let va = &self.nodes[*input].value;
                let d = segment_backward(va, out, g, segments, picks, means, *reduce);
                accumulate(grads, *input, d);
            }
            Op::RowSum(a) => {
                let va = &self.nodes[*a].value;
                let c = va.cols();
                let d = (0..va.len()).map(|k| g.data()[k / c]).collect();
                accumulate(grads, *a, Tensor::matrix(va.rows(), c, d));
            }
            Op::MeanRowsBroadcast(a) => {
                let va = &self.nodes[*a].value;
                let (r, c) = (va.rows(), va.cols());
                let mut colsum = vec![0.0; c];
                for k in 0..g.len() {
                    colsum[k % c] += g.data()[k];
                }
                let inv = if r > 0 { 1.0 / r as f64 } else { 0.0 };
                let d = (0..r * c).map(|k| colsum[k % c] * inv).collect();
                accumulate(grads, *a, Tensor::matrix(r, c, d));
            }
            Op::Sum(a) => {
                let va = &self.nodes[*a].value;
                accumulate(grads, *a, Tensor::full(va.shape(), g.item()));
            }
            Op::Mean(a) => {
                let va = &self.nodes[*a].value;
                let n = va.len().max(1) as f64;
                accumulate(grads, *a, Tensor::full(va.shape(), g.item() / n));
            }
            Op::Mse(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let scale = 2.0 * g.item() / va.len().max(1) as f64;
                let da = va.zip_map(vb, |x, y| scale * (x - y)).expect("shape");
                let db = da.map(|x| -x);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = (out.rows(), out.cols());
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let s = out.row(i);
                    let gi = g.row(i);
                    let dot: f64 = s.iter().zip(gi).map(|(x, y)| x * y).sum();
                    for j in 0..c {
                        d[i * c + j] = s[j] * (gi[j] - dot);
                    }
                }
                let shape = self.nodes[*a].value.shape().to_vec();
                accumulate(grads, *a, Tensor::new(shape, d).expect("shape"));
            }
            Op::SoftmaxCrossEntropy(a, targets) => {
                let va = &self.nodes[*a].value;
                let mut p = softmax_rows(va);
                let n = targets.len().max(1) as f64;
                let c = p.cols();
                for (r, &t) in targets.iter().enumerate() {
                    p.data_mut()[r * c + t] -= 1.0;
                }
                let scale = g.item() / n;
                accumulate(grads, *a, p.map(|x| x * scale));
            }
            Op::Dct(a) => {
                let d = idct_orthonormal(g.data()).expect("non-empty");
                accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
            Op::Idct(a) => {
                let d = dct_orthonormal(g.data()).expect("non-empty");
                accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d).expect("shape"));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(existing) => existing.add_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(v: &Tensor) -> Tensor {
    let (r, c) = (v.rows(), v.cols());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = v.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / s));
    }
    Tensor::new(v.shape().to_vec(), out).expect("shape")
}

fn segment_forward(
    v: &Tensor,
    segments: &[usize],
    count: usize,
    reduce: SegmentReduce,
) -> (Tensor, Vec<usize>, Vec<f64>) {
    let c = v.cols();
    let mut sizes = vec![0usize; count];
    for &s in segments {
        sizes[s] += 1;
    }
    let mut out = vec![0.0; count * c];
    let mut picks = Vec::new();
    let mut means = Vec::new();
    match reduce {
        SegmentReduce::Sum | SegmentReduce::Mean => {
            for (r, &s) in segments.iter().enumerate() {
                for j in 0..c {
                    out[s * c + j] += v.data()[r * c + j];
                }
            }
            if reduce == SegmentReduce::Mean {
                for s in 0..count {
                    if sizes[s] > 0 {
                        let inv = 1.0 / sizes[s] as f64;
                        out[s * c..(s + 1) * c].iter_mut().for_each(|x| *x *= inv);
                    }
                }
            }
        }
        SegmentReduce::Min | SegmentReduce::Max => {
            picks = vec![usize::MAX; count * c];
            let better = |cand: f64, cur: f64| match reduce {
                SegmentReduce::Min => cand < cur,
                _ => cand > cur,
            };
            for (r, &s) in segments.iter().enumerate() {
                for j in 0..c {
                    let k = s * c + j;
                    let x = v.data()[r * c + j];
                    if picks[k] == usize::MAX || better(x, out[k]) {
                        out[k] = x;
                        picks[k] = r;
                    }
                }
            }
        }
        SegmentReduce::Std => {
            let mut mean = vec![0.0; count * c];
            for (r, &s) in segments.iter().enumerate() {
                for j in 0..c {
                    mean[s * c + j] += v.data()[r * c + j];
                }
            }
            for s in 0..count {
                if sizes[s] > 0 {
                    let inv = 1.0 / sizes[s] as f64;
                    mean[s * c..(s + 1) * c].iter_mut().for_each(|x| *x *= inv);
                }
            }
            for (r, &s) in segments.iter().enumerate() {
                for j in 0..c {
                    let d = v.data()[r * c + j] - mean[s * c + j];
                    out[s * c + j] += d * d;
                }
            }
            for s in 0..count {
                if sizes[s] > 0 {
                    let inv = 1.0 / sizes[s] as f64;
                    out[s * c..(s + 1) * c]
                        .iter_mut()
                        .for_each(|x| *x = (*x * inv).max(0.0).sqrt());
                }
            }
            means = mean;
        }
    }
    (Tensor::matrix(count, c, out), picks, means)
}

fn segment_backward(
    v: &Tensor,
    out: &Tensor,
    g: &Tensor,
    segments: &[usize],
    picks: &[usize],
    means: &[f64],
    reduce: SegmentReduce,
) -> Tensor {
    let c = v.cols();
    let count = out.rows();
    let mut d = vec![0.0; v.len()];
    let mut sizes = vec![0usize; count];
    for &s in segments {
        sizes[s] += 1;
    }
    match reduce {
        SegmentReduce::Sum => {
            for (r, &s) in segments.iter().enumerate() {
                for j in 0..c {
                    d[r * c + j] = g.data()[s * c + j];
                }
            }
        }
        SegmentReduce::Mean => {
            for (r, &s) in segments.iter().enumerate() {
                let inv = 1.0 / sizes[s] as f64;
                for j in 0..c {
                    d[r * c + j] = g.data()[s * c + j] * inv;
                }
            }
        }
        SegmentReduce::Min | SegmentReduce::Max => {
            for (k, &r) in picks.iter().enumerate() {
                if r != usize::MAX {
                    d[r * c + k % c] += g.data()[k];
                }
            }
        }
        SegmentReduce::Std => {
            for (r, &s) in segments.iter().enumerate() {
                let n = sizes[s] as f64;
                for j in 0..c {
                    let k = s * c + j;
                    let sd = out.data()[k];
                    if sd > 1e-12 {
                        d[r * c + j] = g.data()[k] * (v.data()[r * c + j] - means[k]) / (n * sd);
                    }
                }
            }
        }
    }
    Tensor::matrix(v.rows(), c, d)
}
