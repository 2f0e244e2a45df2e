//! Dense row-major f64 tensors.
//!
//! `Tensor` is a plain value: shape plus a flat buffer. Participation in a
//! computation graph is expressed separately through node ids handed out by
//! [`crate::graph::Graph`]; tensors detached from any graph are immutable
//! values and freely shareable across threads.

use crate::error::{Error, Result};
use crate::par;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::BadShape {
                op: "Tensor::new",
                expected: format!("{} values for shape", numel),
                got: shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    /// 0-d tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("from_rows: ragged rows"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    /// i.i.d. N(0, std^2) entries.
    pub fn randn<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                e * std
            })
            .collect();
        Tensor { shape, data }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Extent of the last axis (1 for 0-d tensors).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when the trailing axis is treated as the row.
    pub fn leading(&self) -> usize {
        self.numel() / self.last_dim()
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.ndim(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.ndim(), 2);
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

// ── shape helpers ────────────────────────────────────────────────────

/// Broadcast shape of `a` and `b` under numpy alignment rules.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = dim_right_aligned(a, nd, i);
        let db = dim_right_aligned(b, nd, i);
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        }
    }
    Ok(out)
}

fn dim_right_aligned(shape: &[usize], nd: usize, i: usize) -> usize {
    let pad = nd - shape.len();
    if i < pad {
        1
    } else {
        shape[i - pad]
    }
}

/// Row-major strides, with stride 0 on broadcast (size-1) axes relative to `out_shape`.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let mut strides = vec![0usize; nd];
    let pad = nd - shape.len();
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let s = if shape[i] == 1 { 0 } else { acc };
        strides[pad + i] = s;
        acc *= shape[i];
    }
    strides
}

/// Elementwise binary op with numpy-style broadcasting.
pub(crate) fn broadcast_zip(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Ok(Tensor { shape: a.shape.clone(), data });
    }
    let out_shape = broadcast_shape(op, &a.shape, &b.shape)?;
    let numel: usize = out_shape.iter().product();
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let mut data = vec![0.0; numel];
    let mut idx = vec![0usize; out_shape.len()];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for slot in data.iter_mut() {
        *slot = f(a.data[oa], b.data[ob]);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            oa -= sa[ax] * out_shape[ax];
            ob -= sb[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor { shape: out_shape, data })
}

/// Sum `t` down to `target` (inverse of broadcasting `target` up to `t.shape`).
pub(crate) fn sum_to(t: &Tensor, target: &[usize]) -> Result<Tensor> {
    if t.shape() == target {
        return Ok(t.clone());
    }
    // target must be broadcastable to t.shape
    let check = broadcast_shape("sum_to", t.shape(), target)?;
    if check != t.shape {
        return Err(Error::ShapeMismatch {
            op: "sum_to",
            lhs: t.shape.clone(),
            rhs: target.to_vec(),
        });
    }
    let numel: usize = target.iter().product();
    let mut out = vec![0.0; numel];
    let st = broadcast_strides(target, &t.shape);
    let mut idx = vec![0usize; t.shape.len()];
    let mut ot = 0usize;
    for &v in &t.data {
        out[ot] += v;
        for ax in (0..t.shape.len()).rev() {
            idx[ax] += 1;
            ot += st[ax];
            if idx[ax] < t.shape[ax] {
                break;
            }
            ot -= st[ax] * t.shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor { shape: target.to_vec(), data: out })
}

pub(crate) fn broadcast_to(t: &Tensor, target: &[usize]) -> Result<Tensor> {
    if t.shape() == target {
        return Ok(t.clone());
    }
    let check = broadcast_shape("broadcast_to", t.shape(), target)?;
    if check != target {
        return Err(Error::ShapeMismatch {
            op: "broadcast_to",
            lhs: t.shape.clone(),
            rhs: target.to_vec(),
        });
    }
    let numel: usize = target.iter().product();
    let st = broadcast_strides(&t.shape, target);
    let mut data = vec![0.0; numel];
    let mut idx = vec![0usize; target.len()];
    let mut ot = 0usize;
    for slot in data.iter_mut() {
        *slot = t.data[ot];
        for ax in (0..target.len()).rev() {
            idx[ax] += 1;
            ot += st[ax];
            if idx[ax] < target[ax] {
                break;
            }
            ot -= st[ax] * target[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor { shape: target.to_vec(), data })
}

// ── kernels ──────────────────────────────────────────────────────────

/// 2-D matrix product. Rows are computed independently, so the parallel and
/// sequential paths produce bit-identical output.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![0.0; m * n];
    let ad = &a.data;
    let bd = &b.data;
    par::for_each_row(&mut out, n.max(1), |i, row| {
        let arow = &ad[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            for (j, &bv) in brow.iter().enumerate() {
                row[j] += av * bv;
            }
        }
    });
    Tensor::new(vec![m, n], out)
}

/// Always-sequential matmul twin, kept public for benchmarking against the
/// feature-dispatched path.
pub fn matmul_seq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (j, &bv) in brow.iter().enumerate() {
                row[j] += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn transpose2(a: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 {
        return Err(Error::BadShape {
            op: "transpose",
            expected: "2-d tensor".into(),
            got: a.shape.clone(),
        });
    }
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], data)
}

/// Overflow-safe logistic function.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe softplus ln(1 + e^x).
pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Softmax over the last axis with max-subtraction.
pub(crate) fn softmax_last(t: &Tensor) -> Tensor {
    let d = t.last_dim();
    let mut out = t.data.clone();
    for row in out.chunks_mut(d.max(1)) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor { shape: t.shape.clone(), data: out }
}

pub(crate) fn sum_last(t: &Tensor) -> Tensor {
    let d = t.last_dim().max(1);
    let shape: Vec<usize> = t.shape[..t.shape.len().saturating_sub(1)].to_vec();
    let data = t.data.chunks(d).map(|c| c.iter().sum()).collect();
    Tensor { shape, data }
}

pub(crate) fn expand_last(t: &Tensor, d: usize) -> Tensor {
    let mut shape = t.shape.clone();
    shape.push(d);
    let mut data = Vec::with_capacity(t.numel() * d);
    for &v in &t.data {
        data.extend(std::iter::repeat(v).take(d));
    }
    Tensor { shape, data }
}

pub(crate) fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let lead_shape = &first.shape[..first.shape.len().saturating_sub(1)];
    if first.ndim() == 0 {
        return Err(Error::BadShape {
            op: "concat",
            expected: "tensors with at least one axis".into(),
            got: vec![],
        });
    }
    let mut total_last = 0usize;
    for p in parts {
        if p.ndim() != first.ndim() || &p.shape[..p.shape.len() - 1] != lead_shape {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape.clone(),
                rhs: p.shape.clone(),
            });
        }
        total_last += p.last_dim();
    }
    let rows: usize = lead_shape.iter().product();
    let mut data = Vec::with_capacity(rows * total_last);
    for r in 0..rows {
        for p in parts {
            let d = p.last_dim();
            data.extend_from_slice(&p.data[r * d..(r + 1) * d]);
        }
    }
    let mut shape = lead_shape.to_vec();
    shape.push(total_last);
    Tensor::new(shape, data)
}

pub(crate) fn slice_last(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let d = t.last_dim();
    if t.ndim() == 0 || start + len > d {
        return Err(Error::BadShape {
            op: "slice",
            expected: format!("range {}..{} within last axis", start, start + len),
            got: t.shape.clone(),
        });
    }
    let rows = t.numel() / d;
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&t.data[r * d + start..r * d + start + len]);
    }
    let mut shape = t.shape.clone();
    *shape.last_mut().unwrap() = len;
    Tensor::new(shape, data)
}

/// One-hot rows: out[i][choices[i]] = 1.0, shape (n, classes).
pub fn one_hot(choices: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; choices.len() * classes];
    for (i, &c) in choices.iter().enumerate() {
        if c >= classes {
            return Err(Error::BadGeneratorIndex { index: c, count: classes });
        }
        data[i * classes + c] = 1.0;
    }
    Tensor::new(vec![choices.len(), classes], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_bias_add() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::from_vec(vec![10., 20., 30.]);
        let c = broadcast_zip("add", &a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[11., 22., 33., 14., 25., 36.]);
    }

    #[test]
    fn broadcast_column_times_matrix() {
        let p = Tensor::new(vec![2, 1], vec![0.5, 2.0]).unwrap();
        let x = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = broadcast_zip("mul", &p, &x, |a, b| a * b).unwrap();
        assert_eq!(y.data(), &[0.5, 1.0, 6.0, 8.0]);
    }

    #[test]
    fn broadcast_shape_mismatch_is_error() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 2]);
        assert!(broadcast_zip("add", &a, &b, |x, y| x + y).is_err());
    }

    #[test]
    fn sum_to_collapses_broadcast_axes() {
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = sum_to(&t, &[3]).unwrap();
        assert_eq!(s.data(), &[5., 7., 9.]);
        let s2 = sum_to(&t, &[2, 1]).unwrap();
        assert_eq!(s2.data(), &[6., 15.]);
        let s3 = sum_to(&t, &[]).unwrap();
        assert_eq!(s3.item(), 21.0);
    }

    #[test]
    fn matmul_matches_sequential_twin() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::randn(vec![17, 9], 1.0, &mut rng);
        let b = Tensor::randn(vec![9, 13], 1.0, &mut rng);
        let c1 = matmul(&a, &b).unwrap();
        let c2 = matmul_seq(&a, &b).unwrap();
        assert_eq!(c1.data(), c2.data());
    }

    #[test]
    fn slice_concat_roundtrip() {
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let a = slice_last(&t, 0, 1).unwrap();
        let b = slice_last(&t, 1, 2).unwrap();
        let back = concat_last(&[&a, &b]).unwrap();
        assert_eq!(back, t);
    }
}
