//! Reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] is built eagerly per forward pass: every operation appends a
//! node holding its value and the indices of its parents, so node indices are
//! already a topological order. [`Tape::backward`] walks the nodes in reverse
//! and accumulates gradients; it may run once per tape.
//!
//! Parameters enter a tape through [`Tape::param`], which snapshots the
//! current value from a [`crate::params::ParamStore`] and remembers the entry
//! index so [`Tape::grads_to`] can accumulate the computed gradients back.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::params::ParamStore;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Val(usize);

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

enum Src {
    Leaf,
    Param(usize),
    MatMul { a: Val, b: Val, ta: bool, tb: bool },
    Add(Val, Val),
    Sub(Val, Val),
    Mul(Val, Val),
    AddRow { m: Val, row: Val },
    AddCol { m: Val, col: Val },
    MulRow { m: Val, row: Val },
    MulCol { m: Val, col: Val },
    AddK(Val),
    ScaleK { a: Val, k: f64 },
    MulScalar { m: Val, s: Val },
    ConcatRows(Vec<Val>),
    ConcatCols(Vec<Val>),
    SliceCols { a: Val, start: usize },
    GatherRows { a: Val, idx: Vec<usize> },
    RowSoftmax(Val),
    LayerNormRows { a: Val, eps: f64 },
    Gelu(Val),
    Sigmoid(Val),
    Exp(Val),
    Ln(Val),
    Clamp { a: Val, lo: f64, hi: f64 },
    RowSums(Val),
    MeanRows(Val),
    SumAll(Val),
    L2NormalizeRows(Val),
}

struct Node {
    value: Mat,
    grad: Option<Mat>,
    requires: bool,
    src: Src,
}

/// Dynamically built computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Val) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if any flowed.
    pub fn grad(&self, v: Val) -> Option<&Mat> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Mat, requires: bool, src: Src) -> Val {
        self.nodes.push(Node {
            value,
            grad: None,
            requires,
            src,
        });
        Val(self.nodes.len() - 1)
    }

    fn requires(&self, v: Val) -> bool {
        self.nodes[v.0].requires
    }

    fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
        Error::Shape {
            op,
            lhs_rows: a.0,
            lhs_cols: a.1,
            rhs_rows: b.0,
            rhs_cols: b.1,
        }
    }

    /// Constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Mat) -> Val {
        self.push(value, false, Src::Leaf)
    }

    /// Trainable input bound to a parameter-store entry.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Val> {
        let idx = store.index_of(name)?;
        let value = store.value_at(idx).clone();
        Ok(self.push(value, true, Src::Param(idx)))
    }

    pub fn matmul(&mut self, a: Val, b: Val) -> Result<Val> {
        self.matmul_flags(a, b, false, false)
    }

    /// a * b^T
    pub fn matmul_nt(&mut self, a: Val, b: Val) -> Result<Val> {
        self.matmul_flags(a, b, false, true)
    }

    /// a^T * b
    pub fn matmul_tn(&mut self, a: Val, b: Val) -> Result<Val> {
        self.matmul_flags(a, b, true, false)
    }

    pub fn matmul_flags(&mut self, a: Val, b: Val, ta: bool, tb: bool) -> Result<Val> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        let inner_a = if ta { sa.0 } else { sa.1 };
        let inner_b = if tb { sb.1 } else { sb.0 };
        if inner_a != inner_b {
            return Err(Self::shape_err("matmul", sa, sb));
        }
        let value = Mat::gemm(self.value(a), ta, self.value(b), tb);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(value, req, Src::MatMul { a, b, ta, tb }))
    }

    fn binary_same_shape(
        &mut self,
        op: &'static str,
        a: Val,
        b: Val,
        f: impl Fn(f64, f64) -> f64,
        src: Src,
    ) -> Result<Val> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Self::shape_err(op, sa, sb));
        }
        let value = self.value(a).zip_map(self.value(b), f);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(value, req, src))
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Src::Add(a, b))
    }

    pub fn sub(&mut self, a: Val, b: Val) -> Result<Val> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Src::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Val, b: Val) -> Result<Val> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Src::Mul(a, b))
    }

    /// m (r x c) + row (1 x c) broadcast over rows.
    pub fn add_row(&mut self, m: Val, row: Val) -> Result<Val> {
        let sm = self.value(m).shape();
        let sr = self.value(row).shape();
        if sr.0 != 1 || sr.1 != sm.1 {
            return Err(Self::shape_err("add_row", sm, sr));
        }
        let mut value = self.value(m).clone();
        for r in 0..sm.0 {
            for c in 0..sm.1 {
                *value.at_mut(r, c) += self.nodes[row.0].value.at(0, c);
            }
        }
        let req = self.requires(m) || self.requires(row);
        Ok(self.push(value, req, Src::AddRow { m, row }))
    }

    /// m (r x c) + col (r x 1) broadcast over columns.
    pub fn add_col(&mut self, m: Val, col: Val) -> Result<Val> {
        let sm = self.value(m).shape();
        let sc = self.value(col).shape();
        if sc.1 != 1 || sc.0 != sm.0 {
            return Err(Self::shape_err("add_col", sm, sc));
        }
        let mut value = self.value(m).clone();
        for r in 0..sm.0 {
            for c in 0..sm.1 {
                *value.at_mut(r, c) += self.nodes[col.0].value.at(r, 0);
            }
        }
        let req = self.requires(m) || self.requires(col);
        Ok(self.push(value, req, Src::AddCol { m, col }))
    }

    /// m (r x c) * row (1 x c) broadcast over rows.
    pub fn mul_row(&mut self, m: Val, row: Val) -> Result<Val> {
        let sm = self.value(m).shape();
        let sr = self.value(row).shape();
        if sr.0 != 1 || sr.1 != sm.1 {
            return Err(Self::shape_err("mul_row", sm, sr));
        }
        let mut value = self.value(m).clone();
        for r in 0..sm.0 {
            for c in 0..sm.1 {
                *value.at_mut(r, c) *= self.nodes[row.0].value.at(0, c);
            }
        }
        let req = self.requires(m) || self.requires(row);
        Ok(self.push(value, req, Src::MulRow { m, row }))
    }

    /// m (r x c) * col (r x 1) broadcast over columns.
    pub fn mul_col(&mut self, m: Val, col: Val) -> Result<Val> {
        let sm = self.value(m).shape();
        let sc = self.value(col).shape();
        if sc.1 != 1 || sc.0 != sm.0 {
            return Err(Self::shape_err("mul_col", sm, sc));
        }
        let mut value = self.value(m).clone();
        for r in 0..sm.0 {
            for c in 0..sm.1 {
                *value.at_mut(r, c) *= self.nodes[col.0].value.at(r, 0);
            }
        }
        let req = self.requires(m) || self.requires(col);
        Ok(self.push(value, req, Src::MulCol { m, col }))
    }

    pub fn add_k(&mut self, a: Val, k: f64) -> Val {
        let value = self.value(a).map(|x| x + k);
        let req = self.requires(a);
        self.push(value, req, Src::AddK(a))
    }

    pub fn scale_k(&mut self, a: Val, k: f64) -> Val {
        let value = self.value(a).map(|x| x * k);
        let req = self.requires(a);
        self.push(value, req, Src::ScaleK { a, k })
    }

    /// m * s where s is a 1x1 value.
    pub fn mul_scalar(&mut self, m: Val, s: Val) -> Result<Val> {
        let ss = self.value(s).shape();
        if ss != (1, 1) {
            return Err(Self::shape_err("mul_scalar", self.value(m).shape(), ss));
        }
        let k = self.value(s).item();
        let value = self.value(m).map(|x| x * k);
        let req = self.requires(m) || self.requires(s);
        Ok(self.push(value, req, Src::MulScalar { m, s }))
    }

    pub fn concat_rows(&mut self, parts: &[Val]) -> Result<Val> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero parts".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.1 != cols {
                return Err(Self::shape_err("concat_rows", (rows, cols), s));
            }
            rows += s.0;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).as_slice());
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Mat::from_vec(rows, cols, data),
            req,
            Src::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Val]) -> Result<Val> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero parts".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.0 != rows {
                return Err(Self::shape_err("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pm = &self.nodes[p.0].value;
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pm.cols()].copy_from_slice(pm.row(r));
            }
            offset += pm.cols();
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(out, req, Src::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Val, start: usize, len: usize) -> Result<Val> {
        let s = self.value(a).shape();
        if start + len > s.1 {
            return Err(Error::Contract(format!(
                "slice_cols {}..{} out of range for {} columns",
                start,
                start + len,
                s.1
            )));
        }
        let src_mat = &self.nodes[a.0].value;
        let mut out = Mat::zeros(s.0, len);
        for r in 0..s.0 {
            out.row_mut(r).copy_from_slice(&src_mat.row(r)[start..start + len]);
        }
        let req = self.requires(a);
        Ok(self.push(out, req, Src::SliceCols { a, start }))
    }

    /// Select rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Val, idx: &[usize]) -> Result<Val> {
        let s = self.value(a).shape();
        for &i in idx {
            if i >= s.0 {
                return Err(Error::Contract(format!(
                    "gather_rows index {} out of range for {} rows",
                    i, s.0
                )));
            }
        }
        let src_mat = &self.nodes[a.0].value;
        let mut out = Mat::zeros(idx.len(), s.1);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(src_mat.row(i));
        }
        let req = self.requires(a);
        Ok(self.push(
            out,
            req,
            Src::GatherRows {
                a,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Numerically stable softmax over each row.
    pub fn row_softmax(&mut self, a: Val) -> Val {
        let src_mat = &self.nodes[a.0].value;
        let mut out = src_mat.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let req = self.requires(a);
        self.push(out, req, Src::RowSoftmax(a))
    }

    /// Per-row standardization (x - mean) / sqrt(var + eps), no affine part.
    pub fn layer_norm_rows(&mut self, a: Val, eps: f64) -> Val {
        let src_mat = &self.nodes[a.0].value;
        let d = src_mat.cols() as f64;
        let mut out = src_mat.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        let req = self.requires(a);
        self.push(out, req, Src::LayerNormRows { a, eps })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Val) -> Val {
        let value = self.value(a).map(|x| {
            let u = GELU_C * (x + GELU_A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        let req = self.requires(a);
        self.push(value, req, Src::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Val) -> Val {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let req = self.requires(a);
        self.push(value, req, Src::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Val) -> Val {
        let value = self.value(a).map(f64::exp);
        let req = self.requires(a);
        self.push(value, req, Src::Exp(a))
    }

    /// Natural log; caller guarantees positive inputs.
    pub fn ln(&mut self, a: Val) -> Val {
        let value = self.value(a).map(f64::ln);
        let req = self.requires(a);
        self.push(value, req, Src::Ln(a))
    }

    /// Clamp to [lo, hi]; gradient is passed only strictly inside the range.
    pub fn clamp(&mut self, a: Val, lo: f64, hi: f64) -> Val {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let req = self.requires(a);
        self.push(value, req, Src::Clamp { a, lo, hi })
    }

    /// (r x c) -> (r x 1) row sums.
    pub fn row_sums(&mut self, a: Val) -> Val {
        let value = self.value(a).row_sums();
        let req = self.requires(a);
        self.push(value, req, Src::RowSums(a))
    }

    /// (r x c) -> (1 x c) column means.
    pub fn mean_rows(&mut self, a: Val) -> Val {
        let value = self.value(a).mean_rows();
        let req = self.requires(a);
        self.push(value, req, Src::MeanRows(a))
    }

    /// Sum of all entries as a 1x1 value.
    pub fn sum_all(&mut self, a: Val) -> Val {
        let value = Mat::scalar(self.value(a).sum());
        let req = self.requires(a);
        self.push(value, req, Src::SumAll(a))
    }

    /// Mean of all entries as a 1x1 value.
    pub fn mean_all(&mut self, a: Val) -> Val {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale_k(s, 1.0 / n)
    }

    /// Normalize each row to unit length. Zero rows stay zero and pass no
    /// gradient (the degenerate-side convention for cosine).
    pub fn l2_normalize_rows(&mut self, a: Val) -> Val {
        let src_mat = &self.nodes[a.0].value;
        let mut out = src_mat.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = crate::mat::norm(row);
            if n > 0.0 {
                for x in row.iter_mut() {
                    *x /= n;
                }
            }
        }
        let req = self.requires(a);
        self.push(out, req, Src::L2NormalizeRows(a))
    }

    /// Per-row cosine similarity of two equally shaped matrices, as (r x 1).
    /// Composed from primitives; rows of zero norm yield 0.
    pub fn cosine_rows(&mut self, a: Val, b: Val) -> Result<Val> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Self::shape_err("cosine_rows", sa, sb));
        }
        let na = self.l2_normalize_rows(a);
        let nb = self.l2_normalize_rows(b);
        let prod = self.mul(na, nb)?;
        Ok(self.row_sums(prod))
    }

    /// Reverse pass from a 1x1 loss. Consumes the tape's single backward
    /// budget: calling it twice on one tape is a contract error.
    pub fn backward(&mut self, loss: Val) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; rebuild the forward pass first".into(),
            ));
        }
        self.consumed = true;
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        self.nodes[loss.0].grad = Some(Mat::scalar(1.0));
        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let g = node.grad.as_ref().unwrap();
            // Parents always precede children on the tape, so `before`
            // contains every parent.
            match &node.src {
                Src::Leaf | Src::Param(_) => {}
                Src::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (&before[a.0].value, &before[b.0].value);
                    if before[a.0].requires {
                        let da = match (ta, tb) {
                            (false, false) => Mat::gemm(g, false, bv, true),
                            (false, true) => Mat::gemm(g, false, bv, false),
                            (true, false) => Mat::gemm(bv, false, g, true),
                            (true, true) => Mat::gemm(bv, true, g, true),
                        };
                        accum(&mut before[a.0].grad, da);
                    }
                    if before[b.0].requires {
                        let db = match (ta, tb) {
                            (false, false) => Mat::gemm(av, true, g, false),
                            (false, true) => Mat::gemm(g, true, av, false),
                            (true, false) => Mat::gemm(av, false, g, false),
                            (true, true) => Mat::gemm(g, true, av, true),
                        };
                        accum(&mut before[b.0].grad, db);
                    }
                }
                Src::Add(a, b) => {
                    let g = g.clone();
                    if before[a.0].requires {
                        accum(&mut before[a.0].grad, g.clone());
                    }
                    if before[b.0].requires {
                        accum(&mut before[b.0].grad, g);
                    }
                }
                Src::Sub(a, b) => {
                    if before[a.0].requires {
                        accum(&mut before[a.0].grad, g.clone());
                    }
                    if before[b.0].requires {
                        accum(&mut before[b.0].grad, g.map(|x| -x));
                    }
                }
                Src::Mul(a, b) => {
                    if before[a.0].requires {
                        let da = g.zip_map(&before[b.0].value, |gx, bx| gx * bx);
                        accum(&mut before[a.0].grad, da);
                    }
                    if before[b.0].requires {
                        let db = g.zip_map(&before[a.0].value, |gx, ax| gx * ax);
                        accum(&mut before[b.0].grad, db);
                    }
                }
                Src::AddRow { m, row } => {
                    if before[m.0].requires {
                        accum(&mut before[m.0].grad, g.clone());
                    }
                    if before[row.0].requires {
                        accum(&mut before[row.0].grad, g.col_sums());
                    }
                }
                Src::AddCol { m, col } => {
                    if before[m.0].requires {
                        accum(&mut before[m.0].grad, g.clone());
                    }
                    if before[col.0].requires {
                        accum(&mut before[col.0].grad, g.row_sums());
                    }
                }
                Src::MulRow { m, row } => {
                    let rv = &before[row.0].value;
                    if before[m.0].requires {
                        let mut dm = g.clone();
                        for r in 0..dm.rows() {
                            for c in 0..dm.cols() {
                                *dm.at_mut(r, c) *= rv.at(0, c);
                            }
                        }
                        accum(&mut before[m.0].grad, dm);
                    }
                    if before[row.0].requires {
                        let mv = &before[m.0].value;
                        let mut dr = Mat::zeros(1, mv.cols());
                        for r in 0..mv.rows() {
                            for c in 0..mv.cols() {
                                *dr.at_mut(0, c) += g.at(r, c) * mv.at(r, c);
                            }
                        }
                        accum(&mut before[row.0].grad, dr);
                    }
                }
                Src::MulCol { m, col } => {
                    let cv = &before[col.0].value;
                    if before[m.0].requires {
                        let mut dm = g.clone();
                        for r in 0..dm.rows() {
                            for c in 0..dm.cols() {
                                *dm.at_mut(r, c) *= cv.at(r, 0);
                            }
                        }
                        accum(&mut before[m.0].grad, dm);
                    }
                    if before[col.0].requires {
                        let mv = &before[m.0].value;
                        let mut dc = Mat::zeros(mv.rows(), 1);
                        for r in 0..mv.rows() {
                            for c in 0..mv.cols() {
                                *dc.at_mut(r, 0) += g.at(r, c) * mv.at(r, c);
                            }
                        }
                        accum(&mut before[col.0].grad, dc);
                    }
                }
                Src::AddK(a) => {
                    if before[a.0].requires {
                        accum(&mut before[a.0].grad, g.clone());
                    }
                }
                Src::ScaleK { a, k } => {
                    if before[a.0].requires {
                        let k = *k;
                        accum(&mut before[a.0].grad, g.map(|x| x * k));
                    }
                }
                Src::MulScalar { m, s } => {
                    let k = before[s.0].value.item();
                    if before[m.0].requires {
                        accum(&mut before[m.0].grad, g.map(|x| x * k));
                    }
                    if before[s.0].requires {
                        let mv = &before[m.0].value;
                        let ds = g
                            .as_slice()
                            .iter()
                            .zip(mv.as_slice())
                            .map(|(gx, mx)| gx * mx)
                            .sum();
                        accum(&mut before[s.0].grad, Mat::scalar(ds));
                    }
                }
                Src::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = before[p.0].value.rows();
                        let cols = before[p.0].value.cols();
                        if before[p.0].requires {
                            let mut dp = Mat::zeros(rows, cols);
                            for r in 0..rows {
                                dp.row_mut(r).copy_from_slice(g.row(offset + r));
                            }
                            accum(&mut before[p.0].grad, dp);
                        }
                        offset += rows;
                    }
                }
                Src::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = before[p.0].value.rows();
                        let cols = before[p.0].value.cols();
                        if before[p.0].requires {
                            let mut dp = Mat::zeros(rows, cols);
                            for r in 0..rows {
                                dp.row_mut(r)
                                    .copy_from_slice(&g.row(r)[offset..offset + cols]);
                            }
                            accum(&mut before[p.0].grad, dp);
                        }
                        offset += cols;
                    }
                }
                Src::SliceCols { a, start } => {
                    if before[a.0].requires {
                        let src_shape = before[a.0].value.shape();
                        let mut da = Mat::zeros(src_shape.0, src_shape.1);
                        for r in 0..g.rows() {
                            da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                        }
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::GatherRows { a, idx } => {
                    if before[a.0].requires {
                        let src_shape = before[a.0].value.shape();
                        let mut da = Mat::zeros(src_shape.0, src_shape.1);
                        for (r, &i) in idx.iter().enumerate() {
                            for c in 0..g.cols() {
                                *da.at_mut(i, c) += g.at(r, c);
                            }
                        }
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::RowSoftmax(a) => {
                    if before[a.0].requires {
                        let y = &node.value;
                        let mut da = Mat::zeros(y.rows(), y.cols());
                        for r in 0..y.rows() {
                            let dotp: f64 = g
                                .row(r)
                                .iter()
                                .zip(y.row(r))
                                .map(|(gx, yx)| gx * yx)
                                .sum();
                            for c in 0..y.cols() {
                                *da.at_mut(r, c) = y.at(r, c) * (g.at(r, c) - dotp);
                            }
                        }
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::LayerNormRows { a, eps } => {
                    if before[a.0].requires {
                        let x = &before[a.0].value;
                        let y = &node.value;
                        let d = x.cols() as f64;
                        let mut da = Mat::zeros(x.rows(), x.cols());
                        for r in 0..x.rows() {
                            let mean = x.row(r).iter().sum::<f64>() / d;
                            let var =
                                x.row(r).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                            let inv = 1.0 / (var + eps).sqrt();
                            let g_mean = g.row(r).iter().sum::<f64>() / d;
                            let gy_mean: f64 = g
                                .row(r)
                                .iter()
                                .zip(y.row(r))
                                .map(|(gx, yx)| gx * yx)
                                .sum::<f64>()
                                / d;
                            for c in 0..x.cols() {
                                *da.at_mut(r, c) =
                                    inv * (g.at(r, c) - g_mean - y.at(r, c) * gy_mean);
                            }
                        }
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::Gelu(a) => {
                    if before[a.0].requires {
                        let da = g.zip_map(&before[a.0].value, |gx, x| {
                            let u = GELU_C * (x + GELU_A * x * x * x);
                            let t = u.tanh();
                            let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                            gx * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                        });
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::Sigmoid(a) => {
                    if before[a.0].requires {
                        let da = g.zip_map(&node.value, |gx, y| gx * y * (1.0 - y));
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::Exp(a) => {
                    if before[a.0].requires {
                        let da = g.zip_map(&node.value, |gx, y| gx * y);
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::Ln(a) => {
                    if before[a.0].requires {
                        let da = g.zip_map(&before[a.0].value, |gx, x| gx / x);
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::Clamp { a, lo, hi } => {
                    if before[a.0].requires {
                        let (lo, hi) = (*lo, *hi);
                        let da = g.zip_map(&before[a.0].value, |gx, x| {
                            if x > lo && x < hi {
                                gx
                            } else {
                                0.0
                            }
                        });
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::RowSums(a) => {
                    if before[a.0].requires {
                        let shape = before[a.0].value.shape();
                        let mut da = Mat::zeros(shape.0, shape.1);
                        for r in 0..shape.0 {
                            let gr = g.at(r, 0);
                            for c in 0..shape.1 {
                                *da.at_mut(r, c) = gr;
                            }
                        }
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::MeanRows(a) => {
                    if before[a.0].requires {
                        let shape = before[a.0].value.shape();
                        let scale = 1.0 / shape.0 as f64;
                        let mut da = Mat::zeros(shape.0, shape.1);
                        for r in 0..shape.0 {
                            for c in 0..shape.1 {
                                *da.at_mut(r, c) = g.at(0, c) * scale;
                            }
                        }
                        accum(&mut before[a.0].grad, da);
                    }
                }
                Src::SumAll(a) => {
                    if before[a.0].requires {
                        let shape = before[a.0].value.shape();
                        let gv = g.item();
                        accum(&mut before[a.0].grad, Mat::from_fn(shape.0, shape.1, |_, _| gv));
                    }
                }
                Src::L2NormalizeRows(a) => {
                    if before[a.0].requires {
                        let x = &before[a.0].value;
                        let y = &node.value;
                        let mut da = Mat::zeros(x.rows(), x.cols());
                        for r in 0..x.rows() {
                            let n = crate::mat::norm(x.row(r));
                            if n == 0.0 {
                                continue; // zero rows pass no gradient
                            }
                            let gy_dot: f64 = g
                                .row(r)
                                .iter()
                                .zip(y.row(r))
                                .map(|(gx, yx)| gx * yx)
                                .sum();
                            for c in 0..x.cols() {
                                *da.at_mut(r, c) = (g.at(r, c) - gy_dot * y.at(r, c)) / n;
                            }
                        }
                        accum(&mut before[a.0].grad, da);
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulate parameter gradients of this tape into the store.
    pub fn grads_to(&self, store: &mut ParamStore) -> Result<()> {
        if !self.consumed {
            return Err(Error::Contract(
                "grads_to called before backward".into(),
            ));
        }
        for node in &self.nodes {
            if let (Src::Param(idx), Some(g)) = (&node.src, &node.grad) {
                store.accumulate_grad(*idx, g)?;
            }
        }
        store.mark_grads_ready();
        Ok(())
    }
}

fn accum(slot: &mut Option<Mat>, contrib: Mat) {
    match slot {
        Some(g) => g.add_assign(&contrib),
        None => *slot = Some(contrib),
    }
}

/// Gradient checking against central finite differences.
pub mod gradcheck {
    use super::*;

    /// Relative error with an absolute floor: tiny gradient pairs compare
    /// as equal instead of blowing up the ratio.
    pub fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs()).max(1e-6);
        (a - b).abs() / scale
    }

    /// Central finite difference of `f` with respect to every entry of the
    /// named parameter, leaving the store unchanged.
    pub fn fd_param_grad(
        store: &mut ParamStore,
        name: &str,
        h: f64,
        mut f: impl FnMut(&ParamStore) -> f64,
    ) -> Mat {
        let idx = store.index_of(name).expect("unknown parameter");
        let shape = store.value_at(idx).shape();
        let mut out = Mat::zeros(shape.0, shape.1);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = store.value_at(idx).at(r, c);
                *store.value_at_mut(idx).at_mut(r, c) = orig + h;
                let fp = f(store);
                *store.value_at_mut(idx).at_mut(r, c) = orig - h;
                let fm = f(store);
                *store.value_at_mut(idx).at_mut(r, c) = orig;
                *out.at_mut(r, c) = (fp - fm) / (2.0 * h);
            }
        }
        out
    }

    /// Max relative error between two gradient matrices.
    pub fn max_rel_err(a: &Mat, b: &Mat) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| rel_err(x, y))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::{fd_param_grad, max_rel_err};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_mat(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Store with one parameter `p` plus a fixed random cotangent: the loss
    /// is sum(op(p) * c), a generic linear functional of the op output.
    fn check_unary(
        op: impl Fn(&mut Tape, Val) -> Val,
        rows: usize,
        cols: usize,
        seed: u64,
        tol: f64,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let p = rand_mat(&mut rng, rows, cols);
        let mut store = ParamStore::new();
        store.insert("p", p).unwrap();
        let (orows, ocols) = {
            let mut t = Tape::new();
            let v = t.param(&store, "p").unwrap();
            let o = op(&mut t, v);
            t.value(o).shape()
        };
        let cot = rand_mat(&mut rng, orows, ocols);
        let run = |s: &ParamStore| -> f64 {
            let mut t = Tape::new();
            let v = t.param(s, "p").unwrap();
            let o = op(&mut t, v);
            let c = t.leaf(cot.clone());
            let prod = t.mul(o, c).unwrap();
            let l = t.sum_all(prod);
            t.value(l).item()
        };
        let mut t = Tape::new();
        let v = t.param(&store, "p").unwrap();
        let o = op(&mut t, v);
        let c = t.leaf(cot.clone());
        let prod = t.mul(o, c).unwrap();
        let l = t.sum_all(prod);
        t.backward(l).unwrap();
        t.grads_to(&mut store).unwrap();
        let analytic = store.grad("p").unwrap().clone();
        let numeric = fd_param_grad(&mut store, "p", 1e-5, run);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < tol, "max rel err {} >= {}", err, tol);
    }

    #[test]
    fn fd_elementwise_ops() {
        check_unary(|t, v| t.gelu(v), 3, 4, 1, 1e-6);
        check_unary(|t, v| t.sigmoid(v), 3, 4, 2, 1e-6);
        check_unary(|t, v| t.exp(v), 2, 3, 3, 1e-6);
        check_unary(
            |t, v| {
                let e = t.exp(v); // keep ln's domain positive
                t.ln(e)
            },
            2,
            3,
            4,
            1e-6,
        );
        check_unary(|t, v| t.clamp(v, -0.5, 0.5), 3, 4, 5, 1e-4);
        check_unary(|t, v| t.scale_k(v, -2.5), 2, 2, 6, 1e-6);
        check_unary(|t, v| t.add_k(v, 3.0), 2, 2, 7, 1e-6);
    }

    #[test]
    fn fd_row_ops() {
        check_unary(|t, v| t.row_softmax(v), 3, 5, 10, 1e-5);
        check_unary(|t, v| t.layer_norm_rows(v, 1e-5), 3, 5, 11, 1e-5);
        check_unary(|t, v| t.l2_normalize_rows(v), 3, 5, 12, 1e-5);
        check_unary(|t, v| t.row_sums(v), 4, 3, 13, 1e-6);
        check_unary(|t, v| t.mean_rows(v), 4, 3, 14, 1e-6);
        check_unary(|t, v| t.sum_all(v), 3, 3, 15, 1e-6);
        check_unary(|t, v| t.gather_rows(v, &[2, 0, 2, 1]).unwrap(), 3, 4, 16, 1e-6);
        check_unary(|t, v| t.slice_cols(v, 1, 2).unwrap(), 3, 4, 17, 1e-6);
    }

    #[test]
    fn fd_matmul_all_transpose_combos() {
        for (ta, tb, seed) in [
            (false, false, 20u64),
            (false, true, 21),
            (true, false, 22),
            (true, true, 23),
        ] {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let (m, k, n) = (3, 4, 2);
            let a_shape = if ta { (k, m) } else { (m, k) };
            let b_shape = if tb { (n, k) } else { (k, n) };
            let mut store = ParamStore::new();
            store
                .insert("a", rand_mat(&mut rng, a_shape.0, a_shape.1))
                .unwrap();
            store
                .insert("b", rand_mat(&mut rng, b_shape.0, b_shape.1))
                .unwrap();
            let cot = rand_mat(&mut rng, m, n);
            let run = |s: &ParamStore| -> f64 {
                let mut t = Tape::new();
                let a = t.param(s, "a").unwrap();
                let b = t.param(s, "b").unwrap();
                let o = t.matmul_flags(a, b, ta, tb).unwrap();
                let c = t.leaf(cot.clone());
                let prod = t.mul(o, c).unwrap();
                let l = t.sum_all(prod);
                t.value(l).item()
            };
            let mut t = Tape::new();
            let a = t.param(&store, "a").unwrap();
            let b = t.param(&store, "b").unwrap();
            let o = t.matmul_flags(a, b, ta, tb).unwrap();
            let c = t.leaf(cot.clone());
            let prod = t.mul(o, c).unwrap();
            let l = t.sum_all(prod);
            t.backward(l).unwrap();
            t.grads_to(&mut store).unwrap();
            for name in ["a", "b"] {
                let analytic = store.grad(name).unwrap().clone();
                let numeric = fd_param_grad(&mut store, name, 1e-5, run);
                let err = max_rel_err(&analytic, &numeric);
                assert!(err < 1e-6, "ta={} tb={} {}: err {}", ta, tb, name, err);
            }
        }
    }

    #[test]
    fn fd_broadcast_and_concat_ops() {
        let mut rng = ChaCha20Rng::seed_from_u64(30);
        let mut store = ParamStore::new();
        store.insert("m", rand_mat(&mut rng, 3, 4)).unwrap();
        store.insert("row", rand_mat(&mut rng, 1, 4)).unwrap();
        store.insert("col", rand_mat(&mut rng, 3, 1)).unwrap();
        store.insert("s", rand_mat(&mut rng, 1, 1)).unwrap();
        let cot = rand_mat(&mut rng, 3, 4 + 1 + 4);
        let build = |t: &mut Tape, s: &ParamStore| -> Val {
            let m = t.param(s, "m").unwrap();
            let row = t.param(s, "row").unwrap();
            let col = t.param(s, "col").unwrap();
            let sc = t.param(s, "s").unwrap();
            let a = t.add_row(m, row).unwrap();
            let b = t.mul_row(m, row).unwrap();
            let c = t.add_col(m, col).unwrap();
            let d = t.mul_col(c, col).unwrap();
            let e = t.mul_scalar(d, sc).unwrap();
            let f = t.sub(a, b).unwrap();
            let cat = t.concat_cols(&[e, col, f]).unwrap();
            let g = t.concat_rows(&[cat]).unwrap();
            g
        };
        let run = |s: &ParamStore| -> f64 {
            let mut t = Tape::new();
            let o = build(&mut t, s);
            let c = t.leaf(cot.clone());
            let prod = t.mul(o, c).unwrap();
            let l = t.sum_all(prod);
            t.value(l).item()
        };
        let mut t = Tape::new();
        let o = build(&mut t, &store);
        let c = t.leaf(cot.clone());
        let prod = t.mul(o, c).unwrap();
        let l = t.sum_all(prod);
        t.backward(l).unwrap();
        t.grads_to(&mut store).unwrap();
        for name in ["m", "row", "col", "s"] {
            let analytic = store.grad(name).unwrap().clone();
            let numeric = fd_param_grad(&mut store, name, 1e-5, run);
            let err = max_rel_err(&analytic, &numeric);
            assert!(err < 1e-5, "{}: err {}", name, err);
        }
    }

    #[test]
    fn grad_of_sum_linear_map_is_input_outer_product() {
        // loss = sum(W x): dW = x broadcast over output rows.
        let mut store = ParamStore::new();
        store
            .insert("w", Mat::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5]))
            .unwrap();
        let x = Mat::from_vec(3, 1, vec![1.0, 2.0, -3.0]);
        let mut t = Tape::new();
        let w = t.param(&store, "w").unwrap();
        let xv = t.leaf(x.clone());
        let y = t.matmul(w, xv).unwrap();
        let l = t.sum_all(y);
        t.backward(l).unwrap();
        t.grads_to(&mut store).unwrap();
        let g = store.grad("w").unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((g.at(r, c) - x.at(c, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_of_identical_vectors_has_zero_gradient() {
        let mut store = ParamStore::new();
        store
            .insert("a", Mat::from_vec(1, 3, vec![0.3, -0.7, 1.1]))
            .unwrap();
        let b = Mat::from_vec(1, 3, vec![0.3, -0.7, 1.1]);
        let mut t = Tape::new();
        let a = t.param(&store, "a").unwrap();
        let bv = t.leaf(b);
        let cosv = t.cosine_rows(a, bv).unwrap();
        assert!((t.value(cosv).item() - 1.0).abs() < 1e-12);
        let l = t.sum_all(cosv);
        t.backward(l).unwrap();
        t.grads_to(&mut store).unwrap();
        assert!(store.grad("a").unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn zero_norm_rows_have_zero_cosine_and_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("a", Mat::zeros(1, 3)).unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, "a").unwrap();
        let b = t.leaf(Mat::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
        let cosv = t.cosine_rows(a, b).unwrap();
        assert_eq!(t.value(cosv).item(), 0.0);
        let l = t.sum_all(cosv);
        t.backward(l).unwrap();
        t.grads_to(&mut store).unwrap();
        assert_eq!(store.grad("a").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("used", Mat::scalar(2.0)).unwrap();
        store.insert("unused", Mat::scalar(5.0)).unwrap();
        let mut t = Tape::new();
        let u = t.param(&store, "used").unwrap();
        let _lonely = t.param(&store, "unused").unwrap();
        let l = t.sum_all(u);
        t.backward(l).unwrap();
        t.grads_to(&mut store).unwrap();
        assert_eq!(store.grad("unused").unwrap().item(), 0.0);
        assert_eq!(store.grad("used").unwrap().item(), 1.0);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Mat::scalar(1.0));
        let l = t.sum_all(a);
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Mat::zeros(2, 3));
        let b = t.leaf(Mat::zeros(4, 2));
        match t.matmul(a, b) {
            Err(Error::Shape {
                lhs_rows: 2,
                lhs_cols: 3,
                rhs_rows: 4,
                rhs_cols: 2,
                ..
            }) => {}
            other => panic!("expected shape error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_uniform_on_equal_inputs() {
        let mut t = Tape::new();
        let a = t.leaf(Mat::from_vec(2, 3, vec![0.0, 0.0, 0.0, 5.0, 5.0, 5.0]));
        let s = t.row_softmax(a);
        for r in 0..2 {
            let sum: f64 = t.value(s).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for c in 0..3 {
                assert!((t.value(s).at(r, c) - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let mut t = Tape::new();
        let a = t.leaf(Mat::from_vec(1, 4, vec![3.0, 3.0, 3.0, 3.0]));
        let y = t.layer_norm_rows(a, 1e-5);
        assert!(t.value(y).max_abs() < 1e-9);
    }
}
