//! Hypersphere classification head: weight/feature normalization, cosine
//! logits, and the scaled additive-margin cross-entropy.
//!
//! With columns of `W` and feature rows both L2-normalized, logits are
//! cosines of the angles between features and class weights, so the
//! classifier depends on directions only. The head is bias-free.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{self, Reduce, Tensor};

/// Scale and additive margin applied to cosine logits inside the
/// cross-entropy: `-log softmax(s (cos theta - m 1_y))_y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginConfig {
    pub s: f64,
    pub m: f64,
}

impl MarginConfig {
    pub fn new(s: f64, m: f64) -> Result<Self> {
        let cfg = MarginConfig { s, m };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s <= 0.0 || !self.s.is_finite() {
            return Err(Error::invalid(format!("scale s = {} must be > 0", self.s)));
        }
        if self.m < 0.0 || !self.m.is_finite() {
            return Err(Error::invalid(format!(
                "margin m = {} must be >= 0",
                self.m
            )));
        }
        Ok(())
    }
}

/// Divide every column of a `(d, K)` matrix by its L2 norm.
/// A zero-norm column is a hard error naming the column; no epsilon is
/// added to the denominator, so angle geometry is undistorted.
pub fn normalize_cols(g: &mut Graph, w: Var) -> Result<Var> {
    let norms = tensor::norm_axis(g.value(w), Reduce::PerCol);
    if let Some(idx) = norms.data().iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNormColumn { index: idx });
    }
    let n = g.norm_axis(w, Reduce::PerCol)?;
    g.div_bcast(w, n, Reduce::PerCol)
}

/// Divide every row of a `(batch, d)` matrix by its L2 norm; zero-norm rows
/// are hard errors naming the batch index.
pub fn normalize_rows(g: &mut Graph, z: Var) -> Result<Var> {
    let norms = tensor::norm_axis(g.value(z), Reduce::PerRow);
    if let Some(idx) = norms.data().iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNormRow { index: idx });
    }
    let n = g.norm_axis(z, Reduce::PerRow)?;
    g.div_bcast(z, n, Reduce::PerRow)
}

/// `(batch, K)` matrix of cosines between normalized feature rows and
/// normalized weight columns.
pub fn cosine_logits(g: &mut Graph, z: Var, w: Var) -> Result<Var> {
    let zt = normalize_rows(g, z)?;
    let wt = normalize_cols(g, w)?;
    g.matmul(zt, wt)
}

/// Cross-entropy over scaled, margin-adjusted logits:
/// mean over the batch of `-log softmax(s (x - m 1_y))_y`.
///
/// `x` is the `(batch, K)` cosine matrix for hypersphere heads; with
/// `s = 1, m = 0` this is the plain softmax cross-entropy over raw logits.
pub fn margin_ce_loss(g: &mut Graph, x: Var, labels: &[usize], cfg: &MarginConfig) -> Result<Var> {
    cfg.validate()?;
    let (rows, classes) = g.value(x).dims2();
    if labels.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "margin_ce_loss",
            lhs: g.value(x).shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let adjusted = if cfg.m != 0.0 {
        let oh = g.leaf(tensor::one_hot(labels, classes, cfg.m)?)?;
        g.sub(x, oh)?
    } else {
        // Still validates the labels even when no margin is applied.
        for &y in labels {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
        }
        x
    };
    let scaled = g.scale(adjusted, cfg.s)?;
    let lse = g.lse_axis(scaled, Reduce::PerRow)?;
    let picked = g.gather(scaled, labels.to_vec())?;
    let per_example = g.sub(lse, picked)?;
    g.mean_all(per_example)
}

/// Value-level row softmax, used for probability outputs (not a graph op;
/// prediction and probability reporting never need gradients).
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (r, c) = logits.dims2();
    let mut out = logits.clone();
    for i in 0..r {
        let row = &mut out.data_mut()[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
