use rand::Rng;

use super::{EdgeIndex, GnnError};
use crate::diffcore::{ParamId, ParamStore, SegmentReduce, Tape, Tensor, Var};

fn check_width(tape: &Tape, x: Var, expected: usize, layer: &str) -> Result<(), GnnError> {
    let shape = tape.shape(x);
    let found = if shape.len() == 2 { shape[1] } else { 0 };
    if found != expected {
        return Err(GnnError::WidthMismatch {
            layer: layer.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

/// `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    name: String,
    w: ParamId,
    b: Option<ParamId>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_weight(format!("{name}.w"), in_dim, out_dim, rng);
        let b = Some(store.add_bias(format!("{name}.b"), out_dim));
        Self {
            name: name.to_string(),
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn without_bias(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_weight(format!("{name}.w"), in_dim, out_dim, rng);
        Self {
            name: name.to_string(),
            w,
            b: None,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.b
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, GnnError> {
        check_width(tape, x, self.in_dim, &self.name)?;
        let w = tape.param(store, self.w);
        let mut y = tape.matmul(x, w)?;
        if let Some(b) = self.b {
            let b = tape.param(store, b);
            y = tape.add_row(y, b)?;
        }
        Ok(y)
    }
}

/// Stack of linear maps with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &format!("{name}.{k}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var, GnnError> {
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, store, x)?;
            if k < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

/// Principal-neighbourhood layer with mean, min, max and std aggregators:
/// `out_i = x_i W_self + [mean | min | max | std]_{j→i}(x_j) W_agg + b`.
/// Nodes without incoming edges aggregate zeros.
#[derive(Clone, Debug)]
pub struct PnaLayer {
    self_map: Linear,
    agg_map: Linear,
}

impl PnaLayer {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            self_map: Linear::new(store, &format!("{name}.self"), in_dim, out_dim, rng),
            agg_map: Linear::without_bias(store, &format!("{name}.agg"), 4 * in_dim, out_dim, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.self_map.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.self_map.out_dim
    }

    /// The four aggregates, concatenated column-wise (`n × 4·in`).
    pub fn aggregate(tape: &mut Tape, x: Var, e: &EdgeIndex) -> Result<Var, GnnError> {
        let msgs = tape.gather_rows(x, e.src())?;
        let mut parts = Vec::with_capacity(4);
        for r in [SegmentReduce::Mean, SegmentReduce::Min, SegmentReduce::Max, SegmentReduce::Std] {
            parts.push(tape.segment(msgs, e.dst(), e.n(), r)?);
        }
        Ok(tape.concat_cols(&parts)?)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, e: &EdgeIndex) -> Result<Var, GnnError> {
        check_width(tape, x, self.in_dim(), &self.self_map.name)?;
        let own = self.self_map.forward(tape, store, x)?;
        if tape.shape(x)[0] != e.n() {
            return Err(GnnError::WidthMismatch {
                layer: format!("{} rows", self.self_map.name),
                expected: e.n(),
                found: tape.shape(x)[0],
            });
        }
        let agg = Self::aggregate(tape, x, e)?;
        let agg = self.agg_map.forward(tape, store, agg)?;
        Ok(tape.add(own, agg)?)
    }
}

/// Graph convolution `D^{-1/2}(A + I)D^{-1/2} X W + b`, optionally plus a
/// separate root term `X W_root`. Self-loop pairs in the edge index are
/// ignored since the loop is always added.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    lin: Linear,
    root: Option<Linear>,
}

impl GcnLayer {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            lin: Linear::new(store, name, in_dim, out_dim, rng),
            root: None,
        }
    }

    /// Variant with a root weight, which keeps nodes distinguishable on
    /// complete graphs where plain normalized propagation averages everything.
    pub fn with_root(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            lin: Linear::new(store, name, in_dim, out_dim, rng),
            root: Some(Linear::without_bias(store, &format!("{name}.root"), in_dim, out_dim, rng)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.lin.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.lin.out_dim
    }

    /// Symmetric-normalized propagation of `x` (no weights).
    pub fn propagate(tape: &mut Tape, x: Var, e: &EdgeIndex) -> Result<Var, GnnError> {
        let n = e.n();
        if tape.shape(x).first() != Some(&n) {
            return Err(GnnError::WidthMismatch {
                layer: "gcn rows".into(),
                expected: n,
                found: tape.shape(x).first().copied().unwrap_or(0),
            });
        }
        if e.is_complete_with_loops() {
            return Ok(tape.mean_rows_broadcast(x));
        }
        let mut deg = vec![1.0f64; n];
        let mut src = Vec::with_capacity(e.len() + n);
        let mut dst = Vec::with_capacity(e.len() + n);
        for &(a, b) in e.pairs() {
            if a != b {
                deg[b] += 1.0;
                src.push(a);
                dst.push(b);
            }
        }
        for k in 0..n {
            src.push(k);
            dst.push(k);
        }
        let norm: Vec<f64> = src.iter().zip(&dst).map(|(&a, &b)| 1.0 / (deg[a] * deg[b]).sqrt()).collect();
        let m = norm.len();
        let msgs = tape.gather_rows(x, src.into())?;
        let w = tape.leaf(Tensor::matrix(m, 1, norm));
        let msgs = tape.mul_col(msgs, w)?;
        Ok(tape.segment(msgs, dst.into(), n, SegmentReduce::Sum)?)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, e: &EdgeIndex) -> Result<Var, GnnError> {
        check_width(tape, x, self.in_dim(), &self.lin.name)?;
        let mixed = Self::propagate(tape, x, e)?;
        let mut y = self.lin.forward(tape, store, mixed)?;
        if let Some(root) = &self.root {
            let r = root.forward(tape, store, x)?;
            y = tape.add(y, r)?;
        }
        Ok(y)
    }
}
