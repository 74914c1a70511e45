//! Built-in verification suite: every loss gradient against central finite
//! differences, plus in-memory format round-trip checks.
//!
//! The report is line-delimited `key=value` records. A gradient failure maps
//! to the numeric exit code, a format failure to the integrity exit code.
//! A deliberate sign fault can be injected into the wfc gradient to prove
//! the suite actually detects broken backward passes.

use rand::Rng;

use crate::error::FormatErrorKind;
use crate::gradcheck::{analytic_gradients, compare_gradients, fd_gradients, named};
use crate::graph::Graph;
use crate::head::{cosine_logits, margin_ce_loss, MarginConfig};
use crate::model::{init_parameters, HeadKind, ModelSpec};
use crate::regularizers::{sep_loss, wfc_loss};
use crate::rng::seeded_rng;
use crate::storage;
use crate::tensor::Tensor;

/// Relative-error budget every analytic gradient must meet.
pub const GRAD_TOLERANCE: f64 = 1e-6;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Deliberate defects the suite must be able to catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Negate the analytic wfc gradient before comparing.
    WfcGradientSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Gradient,
    Format,
}

#[derive(Debug, Clone)]
pub struct CheckRecord {
    pub name: String,
    pub kind: CheckKind,
    pub passed: bool,
    pub detail: String,
}

impl CheckRecord {
    pub fn to_line(&self) -> String {
        let status = if self.passed { "pass" } else { "fail" };
        let kind = match self.kind {
            CheckKind::Gradient => "gradient",
            CheckKind::Format => "format",
        };
        let mut line = format!("check={} kind={kind} status={status}", self.name);
        if !self.detail.is_empty() {
            line.push(' ');
            line.push_str(&self.detail);
        }
        line
    }
}

#[derive(Debug, Clone)]
pub struct SelfcheckReport {
    pub records: Vec<CheckRecord>,
}

impl SelfcheckReport {
    pub fn all_passed(&self) -> bool {
        self.records.iter().all(|r| r.passed)
    }

    /// 0 when clean, the numeric code for gradient failures, the integrity
    /// code for format failures.
    pub fn exit_code(&self) -> i32 {
        if self
            .records
            .iter()
            .any(|r| !r.passed && r.kind == CheckKind::Gradient)
        {
            4
        } else if self.records.iter().any(|r| !r.passed) {
            5
        } else {
            0
        }
    }
}

fn random_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-0.9..0.9)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn gradient_record(
    name: &str,
    report: crate::error::Result<crate::gradcheck::GradReport>,
) -> CheckRecord {
    match report {
        Ok(rep) => CheckRecord {
            name: name.to_string(),
            kind: CheckKind::Gradient,
            passed: rep.max_rel_error < GRAD_TOLERANCE,
            detail: format!("max_rel_error={:e}", rep.max_rel_error),
        },
        Err(e) => CheckRecord {
            name: name.to_string(),
            kind: CheckKind::Gradient,
            passed: false,
            detail: format!("error={}", sanitize(&e.to_string())),
        },
    }
}

fn sanitize(msg: &str) -> String {
    msg.chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

fn gradient_checks(fault: Fault, out: &mut Vec<CheckRecord>) {
    let mut rng = seeded_rng(0x5E1F);
    let labels = [0usize, 2, 1, 0, 2];
    let w = random_tensor(vec![4, 3], &mut rng);
    let z = random_tensor(vec![5, 4], &mut rng);
    let params = [named("w", w.clone()), named("z", z.clone())];

    let ce_m0 = |g: &mut Graph, vars: &[crate::graph::Var]| {
        let cos = cosine_logits(g, vars[1], vars[0])?;
        margin_ce_loss(g, cos, &labels, &MarginConfig::new(15.0, 0.0)?)
    };
    out.push(gradient_record(
        "margin_ce_m0",
        crate::gradcheck::finite_diff_check(ce_m0, &params, FD_STEP),
    ));

    let ce_margin = |g: &mut Graph, vars: &[crate::graph::Var]| {
        let cos = cosine_logits(g, vars[1], vars[0])?;
        margin_ce_loss(g, cos, &labels, &MarginConfig::new(15.0, 0.2)?)
    };
    out.push(gradient_record(
        "margin_ce_m02",
        crate::gradcheck::finite_diff_check(ce_margin, &params, FD_STEP),
    ));

    // wfc with optional fault injection on the analytic side.
    let wfc_build =
        |g: &mut Graph, vars: &[crate::graph::Var]| wfc_loss(g, vars[1], vars[0], &labels);
    let wfc_report = (|| {
        let (_, mut analytic) = analytic_gradients(&wfc_build, &params)?;
        if fault == Fault::WfcGradientSign {
            for t in &mut analytic {
                for v in t.data_mut() {
                    *v = -*v;
                }
            }
        }
        let fd = fd_gradients(&wfc_build, &params, FD_STEP)?;
        let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
        compare_gradients(&names, &analytic, &fd)
    })();
    out.push(gradient_record("wfc", wfc_report));

    let sep_params = [named("w", random_tensor(vec![6, 4], &mut rng))];
    let sep_build = |g: &mut Graph, vars: &[crate::graph::Var]| sep_loss(g, vars[0]);
    out.push(gradient_record(
        "sep",
        crate::gradcheck::finite_diff_check(sep_build, &sep_params, FD_STEP),
    ));

    let combined = |g: &mut Graph, vars: &[crate::graph::Var]| {
        let cos = cosine_logits(g, vars[1], vars[0])?;
        let ce = margin_ce_loss(g, cos, &labels, &MarginConfig::new(15.0, 0.0)?)?;
        let wfc = crate::regularizers::wfc_loss_from_cosines(g, cos, &labels)?;
        let sep = sep_loss(g, vars[0])?;
        let aw = g.scale(wfc, 0.55)?;
        let bs = g.scale(sep, 0.48)?;
        let partial = g.add(ce, aw)?;
        g.add(partial, bs)
    };
    out.push(gradient_record(
        "combined_objective",
        crate::gradcheck::finite_diff_check(combined, &params, FD_STEP),
    ));

    // End-to-end: gradients through a relu backbone into the angular loss.
    let x = random_tensor(vec![4, 3], &mut rng);
    let x = Tensor::new(
        x.shape().to_vec(),
        x.data().iter().map(|v| (v + 1.0) / 2.0).collect(),
    )
    .expect("same shape");
    let pipe_labels = [0usize, 1, 1, 0];
    let pipe_params = [
        named("w0", random_tensor(vec![3, 5], &mut rng)),
        named("b0", random_tensor(vec![5], &mut rng)),
        named("head_w", random_tensor(vec![5, 2], &mut rng)),
    ];
    let pipeline = move |g: &mut Graph, vars: &[crate::graph::Var]| {
        let xv = g.leaf(x.clone())?;
        let lin = g.matmul(xv, vars[0])?;
        let shifted = g.add_row(lin, vars[1])?;
        let h = g.relu(shifted)?;
        let cos = cosine_logits(g, h, vars[2])?;
        margin_ce_loss(g, cos, &pipe_labels, &MarginConfig::new(15.0, 0.0)?)
    };
    out.push(gradient_record(
        "backbone_pipeline",
        crate::gradcheck::finite_diff_check(pipeline, &pipe_params, FD_STEP),
    ));
}

fn format_record(name: &str, outcome: Result<(), String>) -> CheckRecord {
    match outcome {
        Ok(()) => CheckRecord {
            name: name.to_string(),
            kind: CheckKind::Format,
            passed: true,
            detail: String::new(),
        },
        Err(detail) => CheckRecord {
            name: name.to_string(),
            kind: CheckKind::Format,
            passed: false,
            detail: format!("error={}", sanitize(&detail)),
        },
    }
}

fn format_checks(out: &mut Vec<CheckRecord>) {
    out.push(format_record("tensor_roundtrip_bitwise", {
        let t = Tensor::new(
            vec![2, 4],
            vec![
                0.0,
                -0.0,
                f64::NAN,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::MIN_POSITIVE / 2.0,
                1.5,
                -13.25,
            ],
        )
        .expect("shape matches");
        match storage::tensor_from_bytes(&storage::tensor_to_bytes(&t)) {
            Err(e) => Err(e.to_string()),
            Ok((back, _)) => {
                let same = back.shape() == t.shape()
                    && back
                        .data()
                        .iter()
                        .zip(t.data())
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                same.then_some(()).ok_or_else(|| "bit mismatch".to_string())
            }
        }
    }));

    out.push(format_record("tensor_empty_is_16_bytes", {
        let t = Tensor::new(vec![0], vec![]).expect("empty");
        let bytes = storage::tensor_to_bytes(&t);
        if bytes.len() != 16 {
            Err(format!("expected 16 bytes, got {}", bytes.len()))
        } else {
            storage::tensor_from_bytes(&bytes)
                .map(|_| ())
                .map_err(|e| e.to_string())
        }
    }));

    out.push(format_record("tensor_bad_magic_detected", {
        let mut bytes = storage::tensor_to_bytes(&Tensor::vector(vec![1.0]));
        bytes[0] ^= 0xFF;
        match storage::tensor_from_bytes(&bytes) {
            Err(crate::error::Error::Format {
                kind: FormatErrorKind::BadMagic { .. },
                ..
            }) => Ok(()),
            other => Err(format!("expected bad-magic error, got {other:?}")),
        }
    }));

    out.push(format_record("tensor_truncation_detected", {
        let bytes = storage::tensor_to_bytes(&Tensor::vector(vec![1.0, 2.0]));
        let mut bad = None;
        for cut in 0..bytes.len() {
            if let Ok((_, consumed)) = storage::tensor_from_bytes(&bytes[..cut]) {
                bad = Some(format!("prefix of {cut} bytes parsed, consumed {consumed}"));
            }
        }
        bad.map_or(Ok(()), Err)
    }));

    let clf = init_parameters(
        &ModelSpec {
            layer_dims: vec![3, 5, 4],
            classes: 3,
            head: HeadKind::Hypersphere,
            scale: 15.0,
        },
        0xC0FFEE,
    )
    .expect("valid spec");

    out.push(format_record("checkpoint_roundtrip_bitwise", {
        let bytes = storage::checkpoint_to_bytes(&clf);
        match storage::checkpoint_from_bytes(&bytes) {
            Err(e) => Err(e.to_string()),
            Ok(back) => {
                if storage::checkpoint_to_bytes(&back) == bytes {
                    Ok(())
                } else {
                    Err("re-serialization differs".to_string())
                }
            }
        }
    }));

    out.push(format_record("checkpoint_flip_detected", {
        let mut bytes = storage::checkpoint_to_bytes(&clf);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        match storage::checkpoint_from_bytes(&bytes) {
            Err(crate::error::Error::Format {
                kind: FormatErrorKind::ChecksumMismatch { .. },
                ..
            }) => Ok(()),
            other => Err(format!("expected checksum mismatch, got {other:?}")),
        }
    }));

    out.push(format_record("checkpoint_missing_entry_detected", {
        let mut entries = storage::classifier_entries(&clf);
        entries.remove("head.weight");
        match storage::classifier_from_entries(&entries) {
            Err(crate::error::Error::Format {
                kind: FormatErrorKind::MissingEntries { missing, .. },
                ..
            }) if missing.contains(&"head.weight".to_string()) => Ok(()),
            other => Err(format!("expected missing-entry error, got {other:?}")),
        }
    }));
}

/// Run the whole suite, optionally with an injected fault.
pub fn run_selfcheck(fault: Fault) -> SelfcheckReport {
    let mut records = Vec::new();
    gradient_checks(fault, &mut records);
    format_checks(&mut records);
    SelfcheckReport { records }
}
