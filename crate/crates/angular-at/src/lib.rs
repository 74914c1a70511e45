//! Desk-scale adversarial training on the hypersphere.
//!
//! The toolkit trains small MLP classifiers whose final layer compares
//! L2-normalized features against L2-normalized class weights (cosine
//! logits), and hardens them with PGD adversarial training plus two angular
//! regularizers: a weight-feature compactness term that pulls adversarial
//! features toward their true-class weight vector, and a separation term
//! that pushes class weights apart. Everything runs on an exact-arithmetic
//! f64 reverse-mode autodiff core that is verified against central finite
//! differences, and every artifact format round-trips bit-exactly.
//!
//! Module map:
//! - [`tensor`], [`graph`]: dense f64 tensors and the reverse-mode tape.
//! - [`gradcheck`]: finite-difference verification harness.
//! - [`head`], [`regularizers`]: cosine logits, margin CE, wfc and sep terms.
//! - [`model`]: MLP backbone + hypersphere or plain linear head.
//! - [`attack`]: PGD (CE / CW) and SPSA within an L∞ ball.
//! - [`train`]: the combined objective, baselines, SGD momentum, LR schedule.
//! - [`data`], [`storage`]: blob generation, batching, bit-exact formats.
//! - [`eval`]: natural/robust accuracy, angle statistics, the ablation grid.
//! - [`config`], [`selfcheck`]: flat key=value run config and the built-in
//!   verification suite.

pub mod attack;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod model;
pub mod regularizers;
pub mod rng;
pub mod selfcheck;
pub mod storage;
pub mod tensor;
pub mod train;

pub use attack::{AttackFamily, AttackSpec};
pub use config::Config;
pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use eval::MetricsRecord;
pub use graph::{Graph, Var};
pub use head::MarginConfig;
pub use model::{Classifier, HeadKind, ModelSpec};
pub use tensor::Tensor;
pub use train::{Objective, TrainSpec};
