//! The two angular regularizers: weight-feature compactness (squared angle
//! between an adversarial feature and its true-class weight) and inter-class
//! separation (mean over classes of each weight's worst-case cosine to the
//! other weights).
//!
//! Driving the separation term down pushes the class weights toward a
//! maximally spread configuration; for K classes in dimension >= K-1 its
//! minimum is the regular simplex value -1/(K-1).

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::head::{self};
use crate::tensor::Tensor;

/// Coefficients weighting the two regularizers in the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl RegularizerWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() || alpha < 0.0 || beta < 0.0 {
            return Err(Error::invalid(format!(
                "regularizer weights must be finite and >= 0, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(RegularizerWeights { alpha, beta })
    }
}

/// Compactness penalty from a precomputed cosine matrix: mean over the batch
/// of `arccos(cos theta_y)^2`, the squared angle between each (adversarial)
/// feature and its true-class weight column.
pub fn wfc_loss_from_cosines(g: &mut Graph, cos: Var, labels: &[usize]) -> Result<Var> {
    let picked = g.gather(cos, labels.to_vec())?;
    let angles = g.acos(picked)?;
    let sq = g.mul(angles, angles)?;
    g.mean_all(sq)
}

/// Compactness penalty from raw features: normalizes `z_adv` rows and `w`
/// columns, then applies [`wfc_loss_from_cosines`].
pub fn wfc_loss(g: &mut Graph, z_adv: Var, w: Var, labels: &[usize]) -> Result<Var> {
    let cos = head::cosine_logits(g, z_adv, w)?;
    wfc_loss_from_cosines(g, cos, labels)
}

/// `(K, K)` matrix of pairwise cosines between normalized weight columns;
/// symmetric with unit diagonal.
pub fn pairwise_cosine_matrix(g: &mut Graph, w: Var) -> Result<Var> {
    let wn = head::normalize_cols(g, w)?;
    let wt = g.transpose(wn)?;
    g.matmul(wt, wn)
}

/// Separation penalty: `(1/K) sum_i max_{j != i} cos(w_i, w_j)`.
/// Gradient flows only through each row's maximizing pair (lowest index on
/// ties). Requires K >= 2.
pub fn sep_loss(g: &mut Graph, w: Var) -> Result<Var> {
    let classes = g.value(w).dims2().1;
    if classes < 2 {
        return Err(Error::invalid(format!(
            "separation loss needs at least 2 classes, got {classes}"
        )));
    }
    let c = pairwise_cosine_matrix(g, w)?;
    let row_max = g.max_rows_excluding(c, (0..classes).collect())?;
    g.mean_all(row_max)
}

/// Value-level per-example angles `arccos(cos theta_y)` used by evaluation
/// statistics; same clamp as the graph op.
pub fn angles_to_true_class(cos: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let picked = crate::tensor::gather_rows(cos, labels)?;
    Ok(crate::tensor::acos_clamped(&picked).data().to_vec())
}
