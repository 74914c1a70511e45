//! Outer minimization: the angular adversarial-training objective and its
//! baselines, optimized with SGD momentum, weight decay, and a step learning
//! rate schedule.
//!
//! The full objective on a batch is
//! `CE(x') + alpha * wfc(x') + beta * sep` where `x'` comes from the
//! training attack, `wfc` pulls adversarial features toward their class
//! weight, and `sep` pushes class weights apart. The baselines are the same
//! code path with `alpha = beta = 0` (and `m = 0.2` for the margin variant),
//! a plain-head PGD baseline, and natural training without an attack.

use std::str::FromStr;

use crate::attack::{run_attack_sharded, AttackSpec};
use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::eval::MetricsRecord;
use crate::graph::Graph;
use crate::head::{margin_ce_loss, MarginConfig};
use crate::model::{Classifier, HeadKind};
use crate::regularizers::{sep_loss, wfc_loss_from_cosines};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 0.55;
pub const DEFAULT_BETA: f64 = 0.48;
pub const DEFAULT_SCALE: f64 = 15.0;
/// Margin used by the margin-variant baseline (zero for the main objective).
pub const BASELINE_MARGIN: f64 = 0.2;
pub const DEFAULT_LR: f64 = 0.1;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_DECAY_POINTS: [f64; 2] = [0.75, 0.90];

/// Which training objective drives the parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// CE + alpha*wfc + beta*sep on adversarial inputs (hypersphere head).
    AngularAt,
    /// Plain-head cross-entropy on adversarial inputs.
    PgdAtPlain,
    /// Hypersphere margin CE (m = 0.2) on adversarial inputs.
    PgdAtHe,
    /// Cross-entropy on clean inputs.
    Natural,
}

impl Objective {
    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::AngularAt => "angular_at",
            Objective::PgdAtPlain => "pgd_at_plain",
            Objective::PgdAtHe => "pgd_at_he",
            Objective::Natural => "natural",
        }
    }

    /// Head kind this objective trains.
    pub fn head_kind(&self) -> HeadKind {
        match self {
            Objective::PgdAtPlain => HeadKind::PlainLinear,
            _ => HeadKind::Hypersphere,
        }
    }

    pub fn is_adversarial(&self) -> bool {
        !matches!(self, Objective::Natural)
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "angular_at" => Ok(Objective::AngularAt),
            "pgd_at_plain" => Ok(Objective::PgdAtPlain),
            "pgd_at_he" => Ok(Objective::PgdAtHe),
            "natural" => Ok(Objective::Natural),
            other => Err(Error::invalid(format!(
                "unknown objective '{other}' (expected angular_at|pgd_at_plain|pgd_at_he|natural)"
            ))),
        }
    }
}

/// Complete, validated description of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub objective: Objective,
    pub alpha: f64,
    pub beta: f64,
    pub s: f64,
    pub m: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_points: Vec<f64>,
    pub attack: AttackSpec,
    pub seed: u64,
}

impl TrainSpec {
    /// The main objective: alpha = 0.55, beta = 0.48, s = 15, m = 0.
    pub fn angular_at(seed: u64) -> Self {
        TrainSpec {
            objective: Objective::AngularAt,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            s: DEFAULT_SCALE,
            m: 0.0,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            lr_decay_points: DEFAULT_DECAY_POINTS.to_vec(),
            attack: AttackSpec::train_pgd(derive_seed(seed, &[0xA77AC4])),
            seed,
        }
    }

    /// Margin-variant baseline: same path as `angular_at` with
    /// alpha = beta = 0 and m = 0.2.
    pub fn pgd_at_he(seed: u64) -> Self {
        TrainSpec {
            objective: Objective::PgdAtHe,
            alpha: 0.0,
            beta: 0.0,
            m: BASELINE_MARGIN,
            ..Self::angular_at(seed)
        }
    }

    /// Plain-head adversarial training baseline.
    pub fn pgd_at_plain(seed: u64) -> Self {
        TrainSpec {
            objective: Objective::PgdAtPlain,
            alpha: 0.0,
            beta: 0.0,
            ..Self::angular_at(seed)
        }
    }

    /// Clean-data training baseline.
    pub fn natural(seed: u64) -> Self {
        TrainSpec {
            objective: Objective::Natural,
            alpha: 0.0,
            beta: 0.0,
            ..Self::angular_at(seed)
        }
    }

    /// The preset recipe for an objective.
    pub fn for_objective(objective: Objective, seed: u64) -> Self {
        match objective {
            Objective::AngularAt => Self::angular_at(seed),
            Objective::PgdAtPlain => Self::pgd_at_plain(seed),
            Objective::PgdAtHe => Self::pgd_at_he(seed),
            Objective::Natural => Self::natural(seed),
        }
    }

    pub fn margin(&self) -> Result<MarginConfig> {
        MarginConfig::new(self.s, self.m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        for &f in &self.lr_decay_points {
            if !(0.0 < f && f <= 1.0) {
                return Err(Error::invalid(format!(
                    "lr decay points must be fractions in (0, 1], got {f}"
                )));
            }
        }
        self.margin()?;
        if self.objective.is_adversarial() {
            self.attack.validate()?;
        }
        Ok(())
    }
}

/// Loss components of one batch; `total = ce + alpha*wfc + beta*sep` exactly
/// (same floating-point evaluation order inside and outside the graph).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub wfc: f64,
    pub sep: f64,
}

/// Momentum buffers, one per parameter in `Classifier::params_mut` order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(clf: &mut Classifier) -> Self {
        OptimizerState {
            velocity: clf
                .params_mut()
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
        }
    }
}

/// One SGD-momentum update: `v <- momentum*v + (grad + weight_decay*param)`
/// then `param <- param - lr*v`.
pub fn sgd_momentum_step(
    mut params: Vec<&mut Tensor>,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::invalid(format!(
            "optimizer saw {} params, {} grads, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if param.shape() != grad.shape() || param.shape() != vel.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_momentum_step",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite {
                context: "parameter gradient in optimizer step".to_string(),
            });
        }
        for ((p, &g), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(vel.data_mut())
        {
            *v = momentum * *v + (g + weight_decay * *p);
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Learning rate at `epoch`: base lr divided by 10 for every decay boundary
/// (`floor(fraction * epochs)`) at or below the epoch.
pub fn lr_at_epoch(spec: &TrainSpec, epoch: usize) -> f64 {
    let crossed = spec
        .lr_decay_points
        .iter()
        .map(|f| (f * spec.epochs as f64).floor() as usize)
        .filter(|&boundary| epoch >= boundary)
        .count();
    spec.lr * 10f64.powi(-(crossed as i32))
}

fn check_head(clf: &Classifier, spec: &TrainSpec) -> Result<()> {
    let want = spec.objective.head_kind();
    if clf.head_kind() != want {
        return Err(Error::invalid(format!(
            "objective {} requires a {:?} head, model has {:?}",
            spec.objective.as_str(),
            want,
            clf.head_kind()
        )));
    }
    Ok(())
}

/// Evaluate the training objective on a prepared batch (already attacked if
/// the objective is adversarial) and return the loss breakdown plus the
/// parameter gradients in `Classifier::params_mut` order.
pub fn batch_objective(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &TrainSpec,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut g = Graph::new();
    let pv = clf.leaf_params(&mut g)?;
    let xv = g.leaf(x.clone())?;
    let scores = clf.scores_graph(&mut g, xv, &pv)?;
    let breakdown;
    let total_var;
    match clf.head_kind() {
        HeadKind::Hypersphere => {
            let ce = margin_ce_loss(&mut g, scores, labels, &spec.margin()?)?;
            // Single graph: wfc reuses the cosine node the CE consumed.
            let wfc = wfc_loss_from_cosines(&mut g, scores, labels)?;
            let sep = sep_loss(&mut g, pv.head_w)?;
            let wfc_scaled = g.scale(wfc, spec.alpha)?;
            let sep_scaled = g.scale(sep, spec.beta)?;
            let partial = g.add(ce, wfc_scaled)?;
            let total = g.add(partial, sep_scaled)?;
            breakdown = LossBreakdown {
                total: g.value(total).item(),
                ce: g.value(ce).item(),
                wfc: g.value(wfc).item(),
                sep: g.value(sep).item(),
            };
            total_var = total;
        }
        HeadKind::PlainLinear => {
            let cfg = MarginConfig::new(1.0, 0.0)?;
            let ce = margin_ce_loss(&mut g, scores, labels, &cfg)?;
            breakdown = LossBreakdown {
                total: g.value(ce).item(),
                ce: g.value(ce).item(),
                wfc: 0.0,
                sep: 0.0,
            };
            total_var = ce;
        }
    }
    g.backward(total_var)?;
    let grads = pv.all().iter().map(|&v| g.grad(v).clone()).collect();
    Ok((breakdown, grads))
}

/// Craft the batch the objective trains on: the attacked inputs for
/// adversarial objectives, the clean inputs for natural training.
fn training_inputs(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &TrainSpec,
    attack_seed: u64,
    workers: usize,
) -> Result<Tensor> {
    if !spec.objective.is_adversarial() {
        return Ok(x.clone());
    }
    let attack = AttackSpec {
        seed: attack_seed,
        ..spec.attack.clone()
    };
    run_attack_sharded(clf, x, labels, &attack, &spec.margin()?, workers)
}

/// Full training objective on one clean batch: craft `x'`, then evaluate.
/// With `epsilon = 0` the attack is the identity and this is the clean
/// objective.
pub fn angular_at_loss(
    clf: &Classifier,
    x: &Tensor,
    labels: &[usize],
    spec: &TrainSpec,
) -> Result<LossBreakdown> {
    spec.validate()?;
    check_head(clf, spec)?;
    let x_used = training_inputs(clf, x, labels, spec, spec.attack.seed, 1)?;
    let (breakdown, _) = batch_objective(clf, &x_used, labels, spec)?;
    Ok(breakdown)
}

fn with_batch_context(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("epoch {epoch}, batch {batch}: {context}"),
        },
        other => other,
    }
}

/// Train `clf` on `dataset` according to `spec`, returning the trained model
/// and one metrics record per epoch. Deterministic for a fixed
/// (spec, dataset, initial parameters) triple.
pub fn fit(
    mut clf: Classifier,
    dataset: &Dataset,
    spec: &TrainSpec,
    workers: usize,
) -> Result<(Classifier, Vec<MetricsRecord>)> {
    spec.validate()?;
    check_head(&clf, spec)?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if dataset.classes() != clf.classes() {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model expects {}",
            dataset.classes(),
            clf.classes()
        )));
    }
    if dataset.input_dim() != clf.input_dim() {
        return Err(Error::invalid(format!(
            "dataset feature dim {} does not match model input dim {}",
            dataset.input_dim(),
            clf.input_dim()
        )));
    }
    let mut state = OptimizerState::new(&mut clf);
    let mut records = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let lr = lr_at_epoch(spec, epoch);
        let shuffle_seed = derive_seed(spec.seed, &[epoch as u64]);
        let batches = batch_indices(dataset.len(), spec.batch_size, Some(shuffle_seed))?;
        let mut sums = LossBreakdown {
            total: 0.0,
            ce: 0.0,
            wfc: 0.0,
            sep: 0.0,
        };
        for (b, idx) in batches.iter().enumerate() {
            let (x, y) = dataset.gather(idx)?;
            let attack_seed = derive_seed(spec.attack.seed, &[epoch as u64, b as u64]);
            let x_used = training_inputs(&clf, &x, &y, spec, attack_seed, workers)
                .map_err(|e| with_batch_context(e, epoch, b))?;
            let (breakdown, grads) = batch_objective(&clf, &x_used, &y, spec)
                .map_err(|e| with_batch_context(e, epoch, b))?;
            sgd_momentum_step(
                clf.params_mut(),
                &grads,
                &mut state,
                lr,
                spec.momentum,
                spec.weight_decay,
            )
            .map_err(|e| with_batch_context(e, epoch, b))?;
            sums.total += breakdown.total;
            sums.ce += breakdown.ce;
            sums.wfc += breakdown.wfc;
            sums.sep += breakdown.sep;
        }
        let nb = batches.len() as f64;
        let train_acc = crate::eval::natural_accuracy(&clf, dataset)?;
        let mut record = MetricsRecord::new(
            "train_epoch",
            &format!("{}-seed{}", spec.objective.as_str(), spec.seed),
            spec.seed,
        );
        record.epoch = Some(epoch);
        record.lr = Some(lr);
        record.natural_accuracy = Some(train_acc);
        record.ce = Some(sums.ce / nb);
        record.wfc = Some(sums.wfc / nb);
        record.sep = Some(sums.sep / nb);
        record.total = Some(sums.total / nb);
        records.push(record);
    }
    Ok((clf, records))
}
