//! Central finite-difference verification of reverse-mode gradients.
//!
//! The builder closure receives a fresh graph plus leaves for the named
//! parameters and returns the scalar loss node. It must be deterministic:
//! the checker re-invokes it 2x per parameter element.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Relative errors are measured against `max(|analytic|, |fd|, REL_FLOOR)`.
/// Central differences at h=1e-6 carry ~1e-9 absolute noise, so a pure
/// relative comparison is meaningless for components far below the floor;
/// those are effectively measured absolutely against the floor instead.
pub const REL_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Worst relative error per parameter name.
    pub per_parameter_errors: BTreeMap<String, f64>,
}

/// One forward+backward pass: loss value plus analytic gradients, in the
/// order the parameters were given.
pub fn analytic_gradients<F>(build: &F, params: &[(String, Tensor)]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|(_, t)| g.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&mut g, &vars)?;
    let value = g.value(loss).item();
    g.backward(loss)?;
    let grads = vars.iter().map(|&v| g.grad(v).clone()).collect();
    Ok((value, grads))
}

fn loss_value<F>(build: &F, params: &[(String, Tensor)]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|(_, t)| g.leaf(t.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&mut g, &vars)?;
    let v = g.value(loss).item();
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "finite-difference probe".to_string(),
        });
    }
    Ok(v)
}

/// Central differences `(f(p+h) - f(p-h)) / 2h` for every element of every
/// parameter.
pub fn fd_gradients<F>(build: &F, params: &[(String, Tensor)], h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid(format!(
            "finite-difference step {h} must be > 0"
        )));
    }
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].1.shape().to_vec());
        for e in 0..params[p].1.len() {
            let orig = params[p].1.data()[e];
            work[p].1.data_mut()[e] = orig + h;
            let plus = loss_value(build, &work)?;
            work[p].1.data_mut()[e] = orig - h;
            let minus = loss_value(build, &work)?;
            work[p].1.data_mut()[e] = orig;
            grad.data_mut()[e] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Elementwise comparison of analytic vs finite-difference gradients.
pub fn compare_gradients(
    names: &[String],
    analytic: &[Tensor],
    fd: &[Tensor],
) -> Result<GradReport> {
    if analytic.len() != fd.len() || names.len() != analytic.len() {
        return Err(Error::invalid("gradient lists have different lengths"));
    }
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut per = BTreeMap::new();
    for ((name, a), f) in names.iter().zip(analytic).zip(fd) {
        if a.shape() != f.shape() {
            return Err(Error::ShapeMismatch {
                op: "compare_gradients",
                lhs: a.shape().to_vec(),
                rhs: f.shape().to_vec(),
            });
        }
        let mut worst = 0.0f64;
        for (&av, &fv) in a.data().iter().zip(f.data()) {
            let abs = (av - fv).abs();
            let rel = abs / av.abs().max(fv.abs()).max(REL_FLOOR);
            max_abs = max_abs.max(abs);
            worst = worst.max(rel);
        }
        max_rel = max_rel.max(worst);
        per.insert(name.clone(), worst);
    }
    Ok(GradReport {
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        per_parameter_errors: per,
    })
}

/// Verify the graph's gradients of `build` against central differences.
pub fn finite_diff_check<F>(build: F, params: &[(String, Tensor)], h: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (_, analytic) = analytic_gradients(&build, params)?;
    let fd = fd_gradients(&build, params, h)?;
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    compare_gradients(&names, &analytic, &fd)
}

/// Convenience for building the `(name, tensor)` parameter list.
pub fn named(name: &str, t: Tensor) -> (String, Tensor) {
    (name.to_string(), t)
}
