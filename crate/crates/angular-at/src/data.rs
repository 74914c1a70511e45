//! Dataset construction, batching, and dataset persistence.
//!
//! The synthetic benchmark data is Gaussian blobs whose class means sit on a
//! circle of radius 0.35 centered at the 0.5-vector (first two coordinates;
//! remaining coordinates at 0.5), clamped to the `[0, 1]` input domain.
//! Generation is class-major and fully determined by the seed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, FormatErrorKind, Result};
use crate::rng::seeded_rng;
use crate::storage::{load_tensor, save_tensor};
use crate::tensor::Tensor;

pub const BLOB_RADIUS: f64 = 0.35;
pub const DOMAIN_CENTER: f64 = 0.5;

/// Which side of the train/test split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "unknown split '{other}' (expected train|test)"
            ))),
        }
    }
}

/// Labeled examples with features in `[0, 1]` and labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::invalid(format!(
                "dataset features must be a matrix, got rank {}",
                features.rank()
            )));
        }
        let (rows, _) = features.dims2();
        if rows != labels.len() {
            return Err(Error::invalid(format!(
                "feature rows ({rows}) and label count ({}) differ",
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(Error::invalid("class count must be >= 1"));
        }
        for &y in &labels {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
        }
        if !features.all_finite() {
            return Err(Error::NonFinite {
                context: "dataset features".to_string(),
            });
        }
        if features.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("dataset features must lie in [0, 1]"));
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            split,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.dims2().1
    }

    /// Gather the rows at `indices` into a dense batch.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let (rows, cols) = self.features.dims2();
        let mut data = Vec::with_capacity(indices.len() * cols);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= rows {
                return Err(Error::invalid(format!(
                    "batch index {i} out of range for {rows} rows"
                )));
            }
            data.extend_from_slice(&self.features.row(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![indices.len(), cols], data)?, labels))
    }
}

/// Deterministic balanced Gaussian blobs in class-major order.
pub fn gen_blobs(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::invalid("gen_blobs requires at least 2 classes"));
    }
    if dim < 2 {
        return Err(Error::invalid(
            "gen_blobs requires at least 2 feature dimensions",
        ));
    }
    if n_per_class == 0 {
        return Err(Error::invalid("gen_blobs requires n_per_class >= 1"));
    }
    if spread <= 0.0 || !spread.is_finite() {
        return Err(Error::invalid(format!(
            "gen_blobs spread must be positive and finite, got {spread}"
        )));
    }
    let noise = Normal::new(0.0, spread)
        .map_err(|e| Error::invalid(format!("invalid noise distribution: {e}")))?;
    let mut rng = seeded_rng(seed);
    let total = classes
        .checked_mul(n_per_class)
        .ok_or_else(|| Error::invalid("dataset size overflows"))?;
    let mut data = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    for k in 0..classes {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
        let mut mean = vec![DOMAIN_CENTER; dim];
        mean[0] += BLOB_RADIUS * angle.cos();
        mean[1] += BLOB_RADIUS * angle.sin();
        for _ in 0..n_per_class {
            for &m in &mean {
                let v: f64 = noise.sample(&mut rng);
                data.push((m + v).clamp(0.0, 1.0));
            }
            labels.push(k);
        }
    }
    Dataset::new(
        Tensor::new(vec![total, dim], data)?,
        labels,
        classes,
        Split::Train,
    )
}

/// Partition `0..n` into batches of `batch_size` (last may be short),
/// optionally shuffled by a deterministic seed.
pub fn batch_indices(
    n: usize,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut seeded_rng(seed));
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Append `suffix` to the stem verbatim. `Path::with_extension` would
/// clobber anything after a dot in the stem itself (e.g. `blobs_0.06`).
fn suffixed(stem: &Path, suffix: &str) -> PathBuf {
    let mut name = stem.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn manifest_path(stem: &Path) -> PathBuf {
    suffixed(stem, ".manifest")
}

fn features_path(stem: &Path) -> PathBuf {
    suffixed(stem, ".features.aat")
}

fn labels_path(stem: &Path) -> PathBuf {
    suffixed(stem, ".labels.aat")
}

/// Write `<stem>.features.aat`, `<stem>.labels.aat`, and `<stem>.manifest`.
pub fn save_dataset(stem: &Path, ds: &Dataset) -> Result<()> {
    save_tensor(&features_path(stem), ds.features())?;
    save_tensor(
        &labels_path(stem),
        &Tensor::vector(ds.labels().iter().map(|&y| y as f64).collect()),
    )?;
    let manifest = format!(
        "classes={}\ncount={}\ndim={}\nsplit={}\n",
        ds.classes(),
        ds.len(),
        ds.input_dim(),
        ds.split()
    );
    std::fs::write(manifest_path(stem), manifest).map_err(|source| Error::Io {
        path: manifest_path(stem),
        source,
    })
}

pub fn load_dataset(stem: &Path) -> Result<Dataset> {
    let manifest_file = manifest_path(stem);
    let text = std::fs::read_to_string(&manifest_file).map_err(|source| Error::Io {
        path: manifest_file.clone(),
        source,
    })?;
    let mut classes = None;
    let mut count = None;
    let mut dim = None;
    let mut split = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(FormatErrorKind::InvalidValue {
                what: format!("manifest line {} is not key=value", lineno + 1),
            })
            .with_path(&manifest_file)
        })?;
        let parse_usize = |v: &str| {
            v.parse::<usize>().map_err(|_| {
                Error::format(FormatErrorKind::InvalidValue {
                    what: format!("manifest key {key} has non-integer value '{v}'"),
                })
                .with_path(&manifest_file)
            })
        };
        match key {
            "classes" => classes = Some(parse_usize(value)?),
            "count" => count = Some(parse_usize(value)?),
            "dim" => dim = Some(parse_usize(value)?),
            "split" => split = Some(value.parse::<Split>()?),
            other => {
                return Err(Error::format(FormatErrorKind::InvalidValue {
                    what: format!("unknown manifest key '{other}'"),
                })
                .with_path(&manifest_file))
            }
        }
    }
    let missing = |k: &str| {
        Error::format(FormatErrorKind::InvalidValue {
            what: format!("manifest is missing key '{k}'"),
        })
        .with_path(&manifest_file)
    };
    let classes = classes.ok_or_else(|| missing("classes"))?;
    let count = count.ok_or_else(|| missing("count"))?;
    let dim = dim.ok_or_else(|| missing("dim"))?;
    let split = split.ok_or_else(|| missing("split"))?;

    let features = load_tensor(&features_path(stem))?;
    let label_tensor = load_tensor(&labels_path(stem))?;
    if features.shape() != [count, dim] {
        return Err(Error::format(FormatErrorKind::InvalidValue {
            what: format!(
                "feature shape {:?} does not match manifest ({count}, {dim})",
                features.shape()
            ),
        })
        .with_path(&features_path(stem)));
    }
    if label_tensor.shape() != [count] {
        return Err(Error::format(FormatErrorKind::InvalidValue {
            what: format!(
                "label shape {:?} does not match manifest ({count},)",
                label_tensor.shape()
            ),
        })
        .with_path(&labels_path(stem)));
    }
    let labels: Vec<usize> = label_tensor
        .data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && v >= 0.0 && v < classes as f64 {
                Ok(v as usize)
            } else {
                Err(Error::format(FormatErrorKind::InvalidValue {
                    what: format!("label value {v} is not an integer in [0, {classes})"),
                })
                .with_path(&labels_path(stem)))
            }
        })
        .collect::<Result<_>>()?;
    Dataset::new(features, labels, classes, split)
}

/// Load an IDX image/label pair as a dataset with `classes` classes.
pub fn load_idx_dataset(
    images: &Path,
    labels: &Path,
    classes: usize,
    split: Split,
) -> Result<Dataset> {
    let features = crate::storage::load_idx_images(images)?;
    let labels = crate::storage::load_idx_labels(labels)?;
    Dataset::new(features, labels, classes, split)
}
