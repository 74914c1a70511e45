//! Inner-maximization and evaluation attacks.
//!
//! White-box PGD ascends the sign of the input gradient of a batch-mean loss
//! (cross-entropy with optional angular margin, or the CW margin); black-box
//! SPSA estimates the gradient from Rademacher probes of a forward-only
//! model. Every iterate is projected onto the L∞ ball around the original
//! input intersected with the `[0, 1]` data domain.
//!
//! Determinism: randomness is drawn from one dedicated stream per example,
//! keyed by the attack seed and the example's absolute row index. Splitting a
//! batch into contiguous shards therefore reproduces the sequential result
//! bit-for-bit, which is what makes `--workers` safe.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::head::{margin_ce_loss, MarginConfig};
use crate::model::{Classifier, HeadKind, ParamVars};
use crate::rng::{derive_seed, seeded_rng};
use crate::tensor::{gather_rows, max_rows_excluding, Tensor};

/// Lower edge of the input domain.
pub const DOMAIN_LO: f64 = 0.0;
/// Upper edge of the input domain.
pub const DOMAIN_HI: f64 = 1.0;

/// Default L∞ radius.
pub const DEFAULT_EPSILON: f64 = 0.031;
/// The evaluation attack names [`AttackSpec::eval_preset`] understands.
pub const EVAL_PRESETS: &str = "pgd20, pgd500, cw20, spsa, none";
/// Step size used when crafting training-time adversarial examples.
pub const TRAIN_STEP_SIZE: f64 = 0.007;
/// Iteration count for training-time PGD.
pub const TRAIN_ITERATIONS: usize = 10;
/// Step size used by evaluation-time PGD.
pub const EVAL_STEP_SIZE: f64 = 0.003;
/// Default SPSA gradient-estimation radius.
pub const SPSA_PERTURBATION: f64 = 0.001;
/// Default SPSA sample count per iteration.
pub const SPSA_SAMPLES: usize = 128;
/// Default SPSA iteration count.
pub const SPSA_ITERATIONS: usize = 80;
/// Default SPSA ascent rate (the source constants stop at the estimator, so
/// the update rate is our choice).
pub const SPSA_LR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackFamily {
    PgdCe,
    PgdCw,
    Spsa,
}

impl AttackFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackFamily::PgdCe => "pgd_ce",
            AttackFamily::PgdCw => "pgd_cw",
            AttackFamily::Spsa => "spsa",
        }
    }
}

impl std::str::FromStr for AttackFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgd_ce" => Ok(AttackFamily::PgdCe),
            "pgd_cw" => Ok(AttackFamily::PgdCw),
            "spsa" => Ok(AttackFamily::Spsa),
            other => Err(Error::invalid(format!(
                "unknown attack family '{other}' (expected pgd_ce|pgd_cw|spsa)"
            ))),
        }
    }
}

/// Full description of one attack run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub family: AttackFamily,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub random_start: bool,
    pub spsa_perturbation: f64,
    pub spsa_samples: usize,
    pub spsa_lr: f64,
    pub seed: u64,
}

impl AttackSpec {
    /// PGD as used inside adversarial training (ε=0.031, η=0.007, 10 steps,
    /// random start).
    pub fn train_pgd(seed: u64) -> Self {
        AttackSpec {
            family: AttackFamily::PgdCe,
            epsilon: DEFAULT_EPSILON,
            step_size: TRAIN_STEP_SIZE,
            iterations: TRAIN_ITERATIONS,
            random_start: true,
            spsa_perturbation: SPSA_PERTURBATION,
            spsa_samples: SPSA_SAMPLES,
            spsa_lr: SPSA_LR,
            seed,
        }
    }

    /// Evaluation PGD (ε=0.031, η=0.003) with the given iteration budget.
    pub fn eval_pgd(iterations: usize, seed: u64) -> Self {
        AttackSpec {
            family: AttackFamily::PgdCe,
            step_size: EVAL_STEP_SIZE,
            iterations,
            ..Self::train_pgd(seed)
        }
    }

    /// Evaluation CW-margin PGD, 20 steps.
    pub fn eval_cw(seed: u64) -> Self {
        AttackSpec {
            family: AttackFamily::PgdCw,
            ..Self::eval_pgd(20, seed)
        }
    }

    /// Evaluation SPSA (c=0.001, 128 samples, 80 iterations).
    pub fn eval_spsa(seed: u64) -> Self {
        AttackSpec {
            family: AttackFamily::Spsa,
            iterations: SPSA_ITERATIONS,
            random_start: false,
            ..Self::eval_pgd(20, seed)
        }
    }

    /// Evaluation preset by public name (`pgd20`, `pgd500`, `cw20`, `spsa`);
    /// `none` is the clean pass. Each preset derives its own stream from
    /// `seed`, so one evaluation seed covers a list of attacks.
    pub fn eval_preset(name: &str, seed: u64) -> Result<Option<Self>> {
        match name.replace('-', "_").as_str() {
            "none" => Ok(None),
            "pgd20" => Ok(Some(Self::eval_pgd(
                20,
                crate::rng::derive_seed(seed, &[20]),
            ))),
            "pgd500" => Ok(Some(Self::eval_pgd(
                500,
                crate::rng::derive_seed(seed, &[500]),
            ))),
            "cw20" => Ok(Some(Self::eval_cw(crate::rng::derive_seed(seed, &[0xC7])))),
            "spsa" => Ok(Some(Self::eval_spsa(crate::rng::derive_seed(
                seed,
                &[0x59],
            )))),
            other => Err(Error::invalid(format!(
                "unknown attack '{other}' (valid: {EVAL_PRESETS})"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!(
                "attack epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.step_size <= 0.0 || !self.step_size.is_finite() {
            return Err(Error::invalid(format!(
                "attack step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("attack iterations must be >= 1"));
        }
        if self.family == AttackFamily::Spsa {
            if self.spsa_perturbation <= 0.0 || !self.spsa_perturbation.is_finite() {
                return Err(Error::invalid(format!(
                    "spsa perturbation must be positive, got {}",
                    self.spsa_perturbation
                )));
            }
            if self.spsa_samples == 0 {
                return Err(Error::invalid("spsa sample count must be >= 1"));
            }
            if self.spsa_lr <= 0.0 || !self.spsa_lr.is_finite() {
                return Err(Error::invalid(format!(
                    "spsa learning rate must be positive, got {}",
                    self.spsa_lr
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic sign with `sign(±0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamp `adv` into the L∞ ball of radius `epsilon` around `orig`, then into
/// `[domain_lo, domain_hi]`. Idempotent.
pub fn project_linf(
    adv: &Tensor,
    orig: &Tensor,
    epsilon: f64,
    domain_lo: f64,
    domain_hi: f64,
) -> Result<Tensor> {
    if adv.shape() != orig.shape() {
        return Err(Error::ShapeMismatch {
            op: "project_linf",
            lhs: adv.shape().to_vec(),
            rhs: orig.shape().to_vec(),
        });
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::invalid(format!(
            "projection radius must be >= 0, got {epsilon}"
        )));
    }
    if domain_lo.is_nan() || domain_hi.is_nan() || domain_lo > domain_hi {
        return Err(Error::invalid(format!(
            "empty domain [{domain_lo}, {domain_hi}]"
        )));
    }
    let data = adv
        .data()
        .iter()
        .zip(orig.data())
        .map(|(&a, &o)| {
            a.clamp(o - epsilon, o + epsilon)
                .clamp(domain_lo, domain_hi)
        })
        .collect();
    Tensor::new(adv.shape().to_vec(), data)
}

/// Per-example CW margins `max_{k≠y} z_k − z_y` (positive once the example is
/// misclassified with margin).
pub fn cw_margins(scores: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let (rows, _) = scores.dims2();
    if rows != labels.len() {
        return Err(Error::invalid(format!(
            "score rows ({rows}) and label count ({}) differ",
            labels.len()
        )));
    }
    let (max_others, _) = max_rows_excluding(scores, labels)?;
    let own = gather_rows(scores, labels)?;
    Ok(max_others
        .data()
        .iter()
        .zip(own.data())
        .map(|(&m, &z)| m - z)
        .collect())
}

/// Batch-mean CW margin loss over logits (or scaled cosines for hypersphere
/// heads).
pub fn cw_loss(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    let margins = cw_margins(scores, labels)?;
    Ok(margins.iter().sum::<f64>() / margins.len().max(1) as f64)
}

/// Which surrogate PGD ascends.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PgdLoss {
    MarginCe,
    Cw,
}

/// Scores ready for margin arithmetic: scaled cosines for hypersphere heads,
/// raw logits otherwise.
fn margin_scores_graph(g: &mut Graph, clf: &Classifier, x: Var, pv: &ParamVars) -> Result<Var> {
    let scores = clf.scores_graph(g, x, pv)?;
    match clf.head_kind() {
        HeadKind::Hypersphere => {
            let s = clf.scale().expect("hypersphere head has a scale");
            g.scale(scores, s)
        }
        HeadKind::PlainLinear => Ok(scores),
    }
}

fn margin_scores_values(clf: &Classifier, x: &Tensor) -> Result<Tensor> {
    let scores = clf.scores_values(x)?;
    match clf.head_kind() {
        HeadKind::Hypersphere => {
            let s = clf.scale().expect("hypersphere head has a scale");
            Ok(crate::tensor::scale(&scores, s))
        }
        HeadKind::PlainLinear => Ok(scores),
    }
}

/// Batch-mean gradient of the surrogate loss with respect to the input.
fn input_gradient(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    loss_kind: PgdLoss,
    margin: &MarginConfig,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let pv = clf.leaf_params(&mut g)?;
    let xv = g.leaf(x.clone())?;
    let loss = match loss_kind {
        PgdLoss::MarginCe => {
            let scores = clf.scores_graph(&mut g, xv, &pv)?;
            let cfg = match clf.head_kind() {
                HeadKind::Hypersphere => *margin,
                // Plain logits already carry their own scale; margins on raw
                // logits are not angular quantities.
                HeadKind::PlainLinear => MarginConfig::new(1.0, 0.0)?,
            };
            margin_ce_loss(&mut g, scores, labels, &cfg)?
        }
        PgdLoss::Cw => {
            let scores = margin_scores_graph(&mut g, clf, xv, &pv)?;
            let own = g.gather(scores, labels.to_vec())?;
            let others = g.max_rows_excluding(scores, labels.to_vec())?;
            let margins = g.sub(others, own)?;
            g.mean_all(margins)?
        }
    };
    g.backward(loss)?;
    Ok(g.grad(xv).clone())
}

fn uniform_start(x: &Tensor, epsilon: f64, seed: u64, row_offset: u64) -> Result<Tensor> {
    let (rows, cols) = x.dims2();
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let mut rng = seeded_rng(derive_seed(seed, &[row_offset + i as u64]));
        for &v in &x.row(i) {
            let noise: f64 = rng.random_range(-epsilon..=epsilon);
            data.push(v + noise);
        }
    }
    Tensor::new(vec![rows, cols], data)
}

fn pgd_with_offset(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
    margin: &MarginConfig,
    loss_kind: PgdLoss,
    row_offset: u64,
) -> Result<Tensor> {
    spec.validate()?;
    let mut adv = if spec.random_start {
        project_linf(
            &uniform_start(x, spec.epsilon, spec.seed, row_offset)?,
            x,
            spec.epsilon,
            DOMAIN_LO,
            DOMAIN_HI,
        )?
    } else {
        x.clone()
    };
    for iter in 0..spec.iterations {
        let grad = input_gradient(clf, &adv, labels, loss_kind, margin)?;
        if !grad.all_finite() {
            return Err(Error::NonFinite {
                context: format!("input gradient at attack iteration {iter}"),
            });
        }
        let stepped = Tensor::new(
            adv.shape().to_vec(),
            adv.data()
                .iter()
                .zip(grad.data())
                .map(|(&a, &gv)| a + spec.step_size * sign(gv))
                .collect(),
        )?;
        adv = project_linf(&stepped, x, spec.epsilon, DOMAIN_LO, DOMAIN_HI)?;
    }
    Ok(adv)
}

/// White-box PGD with the loss implied by `spec.family`.
pub fn pgd_attack(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
    margin: &MarginConfig,
) -> Result<Tensor> {
    let loss_kind = match spec.family {
        AttackFamily::PgdCe => PgdLoss::MarginCe,
        AttackFamily::PgdCw => PgdLoss::Cw,
        AttackFamily::Spsa => return Err(Error::invalid("pgd_attack cannot run an spsa spec")),
    };
    pgd_with_offset(clf, x, labels, spec, margin, loss_kind, 0)
}

fn spsa_with_offset(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
    row_offset: u64,
) -> Result<Tensor> {
    spec.validate()?;
    let (rows, cols) = x.dims2();
    if rows != labels.len() {
        return Err(Error::invalid(format!(
            "input rows ({rows}) and label count ({}) differ",
            labels.len()
        )));
    }
    // One stream per example: draw order depends only on the example's own
    // position in its stream, never on batch composition.
    let mut streams: Vec<_> = (0..rows)
        .map(|i| seeded_rng(derive_seed(spec.seed, &[row_offset + i as u64])))
        .collect();
    let mut adv = if spec.random_start {
        let mut data = Vec::with_capacity(rows * cols);
        for (i, rng) in streams.iter_mut().enumerate() {
            for &v in &x.row(i) {
                let noise: f64 = rng.random_range(-spec.epsilon..=spec.epsilon);
                data.push(v + noise);
            }
        }
        project_linf(
            &Tensor::new(vec![rows, cols], data)?,
            x,
            spec.epsilon,
            DOMAIN_LO,
            DOMAIN_HI,
        )?
    } else {
        x.clone()
    };
    let c = spec.spsa_perturbation;
    let batch_margins = |points: &Tensor, iter: usize| -> Result<Vec<f64>> {
        let scores = margin_scores_values(clf, points)?;
        let margins = cw_margins(&scores, labels)?;
        if margins.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("spsa probe loss at iteration {iter}"),
            });
        }
        Ok(margins)
    };
    for iter in 0..spec.iterations {
        let mut estimate = vec![0.0; rows * cols];
        for _ in 0..spec.spsa_samples {
            // Rademacher probe direction per example; Δ⁻¹ = Δ for ±1 entries.
            let mut delta = Vec::with_capacity(rows * cols);
            for rng in streams.iter_mut() {
                for _ in 0..cols {
                    delta.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
                }
            }
            let plus = Tensor::new(
                vec![rows, cols],
                adv.data()
                    .iter()
                    .zip(&delta)
                    .map(|(&a, &d)| a + c * d)
                    .collect(),
            )?;
            let minus = Tensor::new(
                vec![rows, cols],
                adv.data()
                    .iter()
                    .zip(&delta)
                    .map(|(&a, &d)| a - c * d)
                    .collect(),
            )?;
            let loss_plus = batch_margins(&plus, iter)?;
            let loss_minus = batch_margins(&minus, iter)?;
            for i in 0..rows {
                let diff = (loss_plus[i] - loss_minus[i]) / (2.0 * c);
                for j in 0..cols {
                    estimate[i * cols + j] += diff * delta[i * cols + j];
                }
            }
        }
        let scale = 1.0 / spec.spsa_samples as f64;
        let stepped = Tensor::new(
            vec![rows, cols],
            adv.data()
                .iter()
                .zip(&estimate)
                .map(|(&a, &e)| a + spec.spsa_lr * scale * e)
                .collect(),
        )?;
        adv = project_linf(&stepped, x, spec.epsilon, DOMAIN_LO, DOMAIN_HI)?;
    }
    Ok(adv)
}

/// Black-box SPSA attack; only forward passes of the model are used.
pub fn spsa_attack(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
) -> Result<Tensor> {
    if spec.family != AttackFamily::Spsa {
        return Err(Error::invalid("spsa_attack requires an spsa spec"));
    }
    spsa_with_offset(clf, x, labels, spec, 0)
}

fn attack_with_offset(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
    margin: &MarginConfig,
    row_offset: u64,
) -> Result<Tensor> {
    match spec.family {
        AttackFamily::PgdCe => {
            pgd_with_offset(clf, x, labels, spec, margin, PgdLoss::MarginCe, row_offset)
        }
        AttackFamily::PgdCw => {
            pgd_with_offset(clf, x, labels, spec, margin, PgdLoss::Cw, row_offset)
        }
        AttackFamily::Spsa => spsa_with_offset(clf, x, labels, spec, row_offset),
    }
}

/// Dispatch on the attack family.
pub fn run_attack(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
    margin: &MarginConfig,
) -> Result<Tensor> {
    attack_with_offset(clf, x, labels, spec, margin, 0)
}

/// Shard the batch across `workers` threads as an order-preserving parallel
/// map. Per-example random streams make the result identical to the
/// sequential run.
pub fn run_attack_sharded(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &AttackSpec,
    margin: &MarginConfig,
    workers: usize,
) -> Result<Tensor> {
    let (rows, cols) = x.dims2();
    if workers <= 1 || rows <= 1 {
        return run_attack(clf, x, labels, spec, margin);
    }
    let chunk = rows.div_ceil(workers);
    let mut shards: Vec<Result<Tensor>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for start in (0..rows).step_by(chunk) {
            let end = (start + chunk).min(rows);
            let x_shard = Tensor::new(
                vec![end - start, cols],
                x.data()[start * cols..end * cols].to_vec(),
            );
            let labels_shard = &labels[start..end];
            handles.push(scope.spawn(move || {
                attack_with_offset(clf, &x_shard?, labels_shard, spec, margin, start as u64)
            }));
        }
        for h in handles {
            shards.push(h.join().expect("attack worker panicked"));
        }
    });
    let mut data = Vec::with_capacity(rows * cols);
    for shard in shards {
        data.extend_from_slice(shard?.data());
    }
    Tensor::new(vec![rows, cols], data)
}
