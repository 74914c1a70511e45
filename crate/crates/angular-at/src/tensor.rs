//! Dense row-major f64 tensors and the numeric kernels shared by the
//! differentiation graph and the value-only forward paths.
//!
//! Everything here is deterministic: reductions run in ascending index order,
//! so repeated evaluation of the same inputs is bit-identical.

use crate::error::{Error, Result};

/// Inputs to `arccos` are clamped to `[-1 + ACOS_GUARD, 1 - ACOS_GUARD]`
/// before evaluation; the derivative is taken at the clamped value. This keeps
/// the `-1/sqrt(1-u^2)` slope finite when cosines round slightly past +/-1.
pub const ACOS_GUARD: f64 = 1e-7;

/// Which way a rank-2 reduction collapses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    /// One result per row (collapse along columns): `(r, c) -> (r,)`.
    PerRow,
    /// One result per column (collapse along rows): `(r, c) -> (c,)`.
    PerCol,
}

/// Dense row-major tensor. Rank 0 is a scalar (one element, empty shape);
/// rank 1 a vector; rank 2 a matrix. Higher ranks round-trip through storage
/// but the math kernels only accept rank <= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match shape {:?} (expects {})",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    /// Rank-2 tensor from nested rows; rows must have equal lengths.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("rows of unequal length"));
        }
        Ok(Tensor {
            shape: vec![r, c],
            data: rows.concat(),
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Scalar value of a rank-0 tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows/columns view: rank 2 as-is, rank 1 as a single row, rank 0 as 1x1.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("dims2 called on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        let (_, c) = self.dims2();
        self.data[i * c + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let (_, c) = self.dims2();
        self.data[i * c + j] = v;
    }

    /// Copy of row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let (_, c) = self.dims2();
        self.data[i * c..(i + 1) * c].to_vec()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Error if any entry of `t` is NaN or infinite.
pub fn ensure_finite(t: &Tensor, context: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x * c).collect(),
    }
}

/// Broadcast-add a length-`c` vector onto every row of an `(r, c)` matrix.
pub fn add_row(a: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2();
    if a.rank() != 2 || v.rank() != 1 || v.len() != c {
        return Err(Error::ShapeMismatch {
            op: "add_row",
            lhs: a.shape.clone(),
            rhs: v.shape.clone(),
        });
    }
    let mut data = a.data.clone();
    for i in 0..r {
        for j in 0..c {
            data[i * c + j] += v.data[j];
        }
    }
    Ok(Tensor {
        shape: vec![r, c],
        data,
    })
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            let out = &mut data[i * n..(i + 1) * n];
            for j in 0..n {
                out[j] += aip * brow[j];
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data,
    })
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "transpose",
            lhs: a.shape.clone(),
            rhs: vec![],
        });
    }
    let (r, c) = a.dims2();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(Tensor {
        shape: vec![c, r],
        data,
    })
}

/// `max(x, 0)` elementwise; exactly 0 maps to 0.
pub fn relu(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect(),
    }
}

pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Tensor {
    debug_assert!(lo <= hi);
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x.clamp(lo, hi)).collect(),
    }
}

/// `arccos` with the [`ACOS_GUARD`] clamp applied to the input first.
pub fn acos_clamped(a: &Tensor) -> Tensor {
    let lo = -1.0 + ACOS_GUARD;
    let hi = 1.0 - ACOS_GUARD;
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|x| x.clamp(lo, hi).acos()).collect(),
    }
}

pub fn sum_all(a: &Tensor) -> f64 {
    a.data.iter().sum()
}

fn reduce_dims(a: &Tensor, per: Reduce) -> (usize, usize, usize) {
    let (r, c) = a.dims2();
    match per {
        Reduce::PerRow => (r, c, 1),
        Reduce::PerCol => (c, r, 0),
    }
}

/// Element `(group, k)` where groups are rows (PerRow) or columns (PerCol).
fn grouped(a: &Tensor, per: Reduce, group: usize, k: usize) -> f64 {
    match per {
        Reduce::PerRow => a.get2(group, k),
        Reduce::PerCol => a.get2(k, group),
    }
}

pub fn sum_axis(a: &Tensor, per: Reduce) -> Tensor {
    let (groups, width, _) = reduce_dims(a, per);
    let mut data = vec![0.0; groups];
    for (g, out) in data.iter_mut().enumerate() {
        for k in 0..width {
            *out += grouped(a, per, g, k);
        }
    }
    Tensor {
        shape: vec![groups],
        data,
    }
}

/// L2 norm per row or per column.
pub fn norm_axis(a: &Tensor, per: Reduce) -> Tensor {
    let (groups, width, _) = reduce_dims(a, per);
    let mut data = vec![0.0; groups];
    for (g, out) in data.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..width {
            let v = grouped(a, per, g, k);
            acc += v * v;
        }
        *out = acc.sqrt();
    }
    Tensor {
        shape: vec![groups],
        data,
    }
}

/// Numerically stable log-sum-exp per row or per column.
pub fn lse_axis(a: &Tensor, per: Reduce) -> Tensor {
    let (groups, width, _) = reduce_dims(a, per);
    debug_assert!(width > 0, "log-sum-exp over an empty axis");
    let mut data = vec![0.0; groups];
    for (g, out) in data.iter_mut().enumerate() {
        let mut m = f64::NEG_INFINITY;
        for k in 0..width {
            m = m.max(grouped(a, per, g, k));
        }
        let mut acc = 0.0;
        for k in 0..width {
            acc += (grouped(a, per, g, k) - m).exp();
        }
        *out = m + acc.ln();
    }
    Tensor {
        shape: vec![groups],
        data,
    }
}

/// Max per group plus the index of the first (lowest-index) maximizer.
pub fn max_axis(a: &Tensor, per: Reduce) -> (Tensor, Vec<usize>) {
    let (groups, width, _) = reduce_dims(a, per);
    debug_assert!(width > 0, "max over an empty axis");
    let mut data = vec![0.0; groups];
    let mut arg = vec![0usize; groups];
    for g in 0..groups {
        let mut best = grouped(a, per, g, 0);
        let mut best_k = 0;
        for k in 1..width {
            let v = grouped(a, per, g, k);
            if v > best {
                best = v;
                best_k = k;
            }
        }
        data[g] = best;
        arg[g] = best_k;
    }
    (
        Tensor {
            shape: vec![groups],
            data,
        },
        arg,
    )
}

/// Per-row max over columns, skipping column `exclude[i]` in row `i`,
/// with the lowest-index tie rule. Requires at least two columns.
pub fn max_rows_excluding(a: &Tensor, exclude: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let (r, c) = a.dims2();
    if a.rank() != 2 || exclude.len() != r {
        return Err(Error::ShapeMismatch {
            op: "max_rows_excluding",
            lhs: a.shape.clone(),
            rhs: vec![exclude.len()],
        });
    }
    if c < 2 {
        return Err(Error::invalid(
            "max_rows_excluding needs at least 2 columns",
        ));
    }
    for (i, &e) in exclude.iter().enumerate() {
        if e >= c {
            return Err(Error::LabelOutOfRange {
                label: e,
                classes: c,
            });
        }
        let _ = i;
    }
    let mut data = vec![0.0; r];
    let mut arg = vec![0usize; r];
    for i in 0..r {
        let mut best = f64::NEG_INFINITY;
        let mut best_j = usize::MAX;
        for j in 0..c {
            if j == exclude[i] {
                continue;
            }
            let v = a.get2(i, j);
            if best_j == usize::MAX || v > best {
                best = v;
                best_j = j;
            }
        }
        data[i] = best;
        arg[i] = best_j;
    }
    Ok((
        Tensor {
            shape: vec![r],
            data,
        },
        arg,
    ))
}

/// Divide each row (PerRow) or column (PerCol) of `a` by the matching entry
/// of the rank-1 tensor `v`.
pub fn div_bcast(a: &Tensor, v: &Tensor, per: Reduce) -> Result<Tensor> {
    let (r, c) = a.dims2();
    let groups = match per {
        Reduce::PerRow => r,
        Reduce::PerCol => c,
    };
    if a.rank() != 2 || v.rank() != 1 || v.len() != groups {
        return Err(Error::ShapeMismatch {
            op: "div_bcast",
            lhs: a.shape.clone(),
            rhs: v.shape.clone(),
        });
    }
    let mut data = a.data.clone();
    for i in 0..r {
        for j in 0..c {
            let d = match per {
                Reduce::PerRow => v.data[i],
                Reduce::PerCol => v.data[j],
            };
            data[i * c + j] /= d;
        }
    }
    Ok(Tensor {
        shape: vec![r, c],
        data,
    })
}

/// Pick `a[i, idx[i]]` for every row, producing a rank-1 tensor.
pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (r, c) = a.dims2();
    if a.rank() != 2 || idx.len() != r {
        return Err(Error::ShapeMismatch {
            op: "gather_rows",
            lhs: a.shape.clone(),
            rhs: vec![idx.len()],
        });
    }
    let mut data = vec![0.0; r];
    for i in 0..r {
        let j = idx[i];
        if j >= c {
            return Err(Error::LabelOutOfRange {
                label: j,
                classes: c,
            });
        }
        data[i] = a.get2(i, j);
    }
    Ok(Tensor {
        shape: vec![r],
        data,
    })
}

/// `(B, K)` matrix with `value` at `(i, labels[i])` and zero elsewhere.
pub fn one_hot(labels: &[usize], classes: usize, value: f64) -> Result<Tensor> {
    let mut t = Tensor::zeros(vec![labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        t.set2(i, y, value);
    }
    Ok(t)
}

/// Row-wise argmax with the lowest-index tie rule.
pub fn argmax_rows(a: &Tensor) -> Vec<usize> {
    let (_, arg) = max_axis(a, Reduce::PerRow);
    arg
}
