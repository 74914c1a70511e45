//! Robust-accuracy measurement, the four-row objective ablation, and the
//! clean-vs-adversarial angle statistic.
//!
//! Metrics are line-delimited `key=value` records; a run prepends the
//! timestamp only when rendering, so record contents stay bit-reproducible.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::attack::{run_attack_sharded, AttackSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::head::MarginConfig;
use crate::model::{Classifier, HeadKind, ModelSpec};
use crate::regularizers::angles_to_true_class;
use crate::rng::derive_seed;
use crate::storage::Fnv64;
use crate::train::{fit, TrainSpec};

/// One structured metrics record. Rendered as
/// `ts=<iso8601> run=<id> key=value ...` with a caller-supplied timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub tag: String,
    pub run_id: String,
    pub seed: u64,
    pub epoch: Option<usize>,
    pub lr: Option<f64>,
    pub natural_accuracy: Option<f64>,
    /// Robust accuracy per attack name.
    pub robust: BTreeMap<String, f64>,
    pub ce: Option<f64>,
    pub wfc: Option<f64>,
    pub sep: Option<f64>,
    pub total: Option<f64>,
    pub extra: BTreeMap<String, String>,
}

fn sanitize(token: &str) -> String {
    token
        .chars()
        .map(|c| {
            if c.is_whitespace() || c == '=' {
                '_'
            } else {
                c
            }
        })
        .collect()
}

impl MetricsRecord {
    pub fn new(tag: &str, run_id: &str, seed: u64) -> Self {
        MetricsRecord {
            tag: sanitize(tag),
            run_id: sanitize(run_id),
            seed,
            epoch: None,
            lr: None,
            natural_accuracy: None,
            robust: BTreeMap::new(),
            ce: None,
            wfc: None,
            sep: None,
            total: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut accs: Vec<(&str, f64)> = Vec::new();
        if let Some(a) = self.natural_accuracy {
            accs.push(("natural_accuracy", a));
        }
        for (k, &v) in &self.robust {
            accs.push((k, v));
        }
        for (name, a) in accs {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!(
                    "accuracy {name} = {a} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Render one line with the given timestamp; key order is fixed.
    pub fn to_line(&self, ts: &str) -> String {
        let mut line = format!(
            "ts={ts} run={} tag={} seed={}",
            self.run_id, self.tag, self.seed
        );
        if let Some(e) = self.epoch {
            let _ = write!(line, " epoch={e}");
        }
        if let Some(v) = self.lr {
            let _ = write!(line, " lr={v}");
        }
        if let Some(v) = self.natural_accuracy {
            let _ = write!(line, " natural_accuracy={v}");
        }
        for (k, v) in &self.robust {
            let _ = write!(line, " robust_{}={v}", sanitize(k));
        }
        for (k, v) in [
            ("ce", self.ce),
            ("wfc", self.wfc),
            ("sep", self.sep),
            ("total", self.total),
        ] {
            if let Some(v) = v {
                let _ = write!(line, " {k}={v}");
            }
        }
        for (k, v) in &self.extra {
            let _ = write!(line, " {}={}", sanitize(k), sanitize(v));
        }
        line
    }
}

/// Margin configuration evaluation attacks ascend: the model's own scale
/// with no additive margin.
pub fn eval_margin(clf: &Classifier) -> Result<MarginConfig> {
    MarginConfig::new(clf.scale().unwrap_or(1.0), 0.0)
}

/// Fraction of examples whose prediction matches the label
/// (argmax, lowest index wins ties).
pub fn natural_accuracy(clf: &Classifier, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let pred = clf.predict(ds.features())?;
    let hits = pred.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Fraction of examples still classified correctly after the attack.
/// A zero-radius attack leaves inputs untouched, so this reduces to
/// `natural_accuracy` exactly.
pub fn robust_accuracy(
    clf: &Classifier,
    ds: &Dataset,
    attack: &AttackSpec,
    workers: usize,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let margin = eval_margin(clf)?;
    let adv = run_attack_sharded(clf, ds.features(), ds.labels(), attack, &margin, workers)?;
    let pred = clf.predict(&adv)?;
    let hits = pred.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Mean true-class angles (radians) on clean and attacked inputs.
pub fn angle_statistics(
    clf: &Classifier,
    ds: &Dataset,
    attack: &AttackSpec,
    workers: usize,
) -> Result<(f64, f64)> {
    if clf.head_kind() != HeadKind::Hypersphere {
        return Err(Error::invalid(
            "angle statistics require a hypersphere head",
        ));
    }
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let mean_angle = |x: &crate::tensor::Tensor| -> Result<f64> {
        let cos = clf.scores_values(x)?;
        let angles = angles_to_true_class(&cos, ds.labels())?;
        Ok(angles.iter().sum::<f64>() / angles.len() as f64)
    };
    let clean = mean_angle(ds.features())?;
    let margin = eval_margin(clf)?;
    let adv_x = run_attack_sharded(clf, ds.features(), ds.labels(), attack, &margin, workers)?;
    let adversarial = mean_angle(&adv_x)?;
    Ok((clean, adversarial))
}

/// FNV-1a checksum over a dataset's exact feature bytes and labels.
pub fn dataset_checksum(ds: &Dataset) -> u64 {
    let mut h = Fnv64::new();
    for v in ds.features().data() {
        h.write(&v.to_le_bytes());
    }
    for &y in ds.labels() {
        h.write(&(y as u64).to_le_bytes());
    }
    h.finish()
}

/// The four objective configurations of the ablation, in report order.
pub fn ablation_rows(base: &TrainSpec) -> [(String, TrainSpec); 4] {
    let row = |tag: &str, alpha: f64, beta: f64| {
        (
            tag.to_string(),
            TrainSpec {
                alpha,
                beta,
                ..base.clone()
            },
        )
    };
    [
        row("ce", 0.0, 0.0),
        row("ce+wfc", base.alpha, 0.0),
        row("ce+sep", 0.0, base.beta),
        row("ce+wfc+sep", base.alpha, base.beta),
    ]
}

/// Train the four ablation configurations on identical data with the same
/// seed and evaluate each against PGD-20; returns one record per row.
pub fn run_ablation(
    arch: &ModelSpec,
    train_ds: &Dataset,
    test_ds: &Dataset,
    base: &TrainSpec,
    workers: usize,
) -> Result<Vec<MetricsRecord>> {
    base.validate()?;
    let eval_attack = AttackSpec::eval_pgd(20, derive_seed(base.seed, &[0xE7A1]));
    let test_checksum = dataset_checksum(test_ds);
    let mut records = Vec::with_capacity(4);
    for (tag, spec) in ablation_rows(base) {
        let clf = crate::model::init_parameters(arch, base.seed)?;
        let (trained, _) = fit(clf, train_ds, &spec, workers)?;
        let mut rec = MetricsRecord::new(
            &format!("ablation:{tag}"),
            &format!("ablation-seed{}", base.seed),
            base.seed,
        );
        rec.natural_accuracy = Some(natural_accuracy(&trained, test_ds)?);
        rec.robust.insert(
            "pgd20".to_string(),
            robust_accuracy(&trained, test_ds, &eval_attack, workers)?,
        );
        rec.extra
            .insert("alpha".to_string(), format!("{}", spec.alpha));
        rec.extra
            .insert("beta".to_string(), format!("{}", spec.beta));
        rec.extra
            .insert("test_checksum".to_string(), format!("{test_checksum:016x}"));
        rec.extra.insert(
            "param_checksum".to_string(),
            format!("{:016x}", trained.param_checksum()),
        );
        rec.validate()?;
        records.push(rec);
    }
    Ok(records)
}

/// Aligned plain-text table of records: tag, natural accuracy, then one
/// column per attack name.
pub fn summary_table(records: &[MetricsRecord]) -> String {
    let mut attack_names: Vec<String> = Vec::new();
    for r in records {
        for k in r.robust.keys() {
            if !attack_names.contains(k) {
                attack_names.push(k.clone());
            }
        }
    }
    attack_names.sort();
    let mut header = vec!["tag".to_string(), "natural".to_string()];
    header.extend(attack_names.iter().cloned());
    let mut rows: Vec<Vec<String>> = vec![header];
    for r in records {
        let mut row = vec![r.tag.clone()];
        row.push(
            r.natural_accuracy
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".to_string()),
        );
        for name in &attack_names {
            row.push(
                r.robust
                    .get(name)
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".to_string()),
            );
        }
        rows.push(row);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
