//! Desk-scale MLP backbone and classification heads.
//!
//! The backbone is a plain MLP over flattened inputs: linear layers with
//! relu between them and no activation after the last, producing penultimate
//! features `z`. A classifier composes the backbone with either the
//! hypersphere head (bias-free cosine logits) or a plain linear head with
//! bias for baselines.
//!
//! Both a graph forward (for gradients) and a value forward (for prediction
//! and black-box attacks) are provided; they call the same kernels in the
//! same order, so their outputs are bit-identical.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::head;
use crate::rng::seeded_rng;
use crate::storage::Fnv64;
use crate::tensor::{self, Reduce, Tensor};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Hypersphere,
    PlainLinear,
}

/// Architecture description used by [`init_parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// `[input_dim, hidden..., feature_dim]`; a single entry means the
    /// backbone is the identity.
    pub layer_dims: Vec<usize>,
    pub classes: usize,
    pub head: HeadKind,
    /// Cosine-logit scale for the hypersphere head; ignored by the plain head.
    pub scale: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(Error::invalid(
                "layer_dims must name at least the input dimension",
            ));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::invalid(format!(
                "layer_dims entries must be >= 1, got {:?}",
                self.layer_dims
            )));
        }
        if self.classes == 0 {
            return Err(Error::invalid("classes must be >= 1"));
        }
        if self.head == HeadKind::Hypersphere && !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!(
                "hypersphere scale {} must be a positive finite number",
                self.scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub layer_dims: Vec<usize>,
    /// Layer `i` maps `layer_dims[i] -> layer_dims[i+1]`; weight shape
    /// `(in, out)`, bias shape `(out,)`.
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Bias-free weight matrix `(feature_dim, K)` plus the logit scale.
    Hypersphere {
        w: Tensor,
        scale: f64,
    },
    PlainLinear {
        w: Tensor,
        b: Tensor,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub backbone: Backbone,
    pub head: Head,
}

/// Graph handles for every parameter of a classifier, in structural order.
pub struct ParamVars {
    pub layer_weights: Vec<Var>,
    pub layer_biases: Vec<Var>,
    pub head_w: Var,
    pub head_b: Option<Var>,
}

impl ParamVars {
    /// Flat list in the same order as [`Classifier::params`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for (&w, &b) in self.layer_weights.iter().zip(&self.layer_biases) {
            out.push(w);
            out.push(b);
        }
        out.push(self.head_w);
        if let Some(b) = self.head_b {
            out.push(b);
        }
        out
    }
}

fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Deterministically initialize a classifier: weights uniform in
/// `[-sqrt(6/(fan_in+fan_out)), +...]`, biases zero, head columns re-drawn
/// until every column norm is strictly positive.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> Result<Classifier> {
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let dims = &spec.layer_dims;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for i in 0..dims.len() - 1 {
        let (fi, fo) = (dims[i], dims[i + 1]);
        let limit = xavier_limit(fi, fo);
        let data: Vec<f64> = (0..fi * fo)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        weights.push(Tensor::new(vec![fi, fo], data)?);
        biases.push(Tensor::zeros(vec![fo]));
    }
    let feature_dim = *dims.last().expect("validated nonempty");
    let limit = xavier_limit(feature_dim, spec.classes);
    let mut head_w = Tensor::new(
        vec![feature_dim, spec.classes],
        (0..feature_dim * spec.classes)
            .map(|_| rng.random_range(-limit..=limit))
            .collect(),
    )?;
    for k in 0..spec.classes {
        // Zero columns have probability zero but the init contract
        // guarantees strictly positive norms, so re-draw if it happens.
        loop {
            let norm: f64 = (0..feature_dim)
                .map(|d| head_w.get2(d, k).powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                break;
            }
            for d in 0..feature_dim {
                head_w.set2(d, k, rng.random_range(-limit..=limit));
            }
        }
    }
    let head = match spec.head {
        HeadKind::Hypersphere => Head::Hypersphere {
            w: head_w,
            scale: spec.scale,
        },
        HeadKind::PlainLinear => Head::PlainLinear {
            w: head_w,
            b: Tensor::zeros(vec![spec.classes]),
        },
    };
    Ok(Classifier {
        backbone: Backbone {
            layer_dims: dims.clone(),
            weights,
            biases,
        },
        head,
    })
}

impl Classifier {
    pub fn input_dim(&self) -> usize {
        self.backbone.layer_dims[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.backbone.layer_dims.last().expect("nonempty dims")
    }

    pub fn classes(&self) -> usize {
        match &self.head {
            Head::Hypersphere { w, .. } | Head::PlainLinear { w, .. } => w.dims2().1,
        }
    }

    pub fn head_kind(&self) -> HeadKind {
        match &self.head {
            Head::Hypersphere { .. } => HeadKind::Hypersphere,
            Head::PlainLinear { .. } => HeadKind::PlainLinear,
        }
    }

    /// Cosine-logit scale of the hypersphere head.
    pub fn scale(&self) -> Option<f64> {
        match &self.head {
            Head::Hypersphere { scale, .. } => Some(*scale),
            Head::PlainLinear { .. } => None,
        }
    }

    /// Named parameters in structural order (layers, then head).
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self
            .backbone
            .weights
            .iter()
            .zip(&self.backbone.biases)
            .enumerate()
        {
            out.push((format!("layer{i}.weight"), w));
            out.push((format!("layer{i}.bias"), b));
        }
        match &self.head {
            Head::Hypersphere { w, .. } => out.push(("head.weight".to_string(), w)),
            Head::PlainLinear { w, b } => {
                out.push(("head.weight".to_string(), w));
                out.push(("head.bias".to_string(), b));
            }
        }
        out
    }

    /// Mutable parameters in the same order as [`Classifier::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self
            .backbone
            .weights
            .iter_mut()
            .zip(self.backbone.biases.iter_mut())
        {
            out.push(w);
            out.push(b);
        }
        match &mut self.head {
            Head::Hypersphere { w, .. } => out.push(w),
            Head::PlainLinear { w, b } => {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    /// Insert leaves for every parameter into `g`.
    pub fn leaf_params(&self, g: &mut Graph) -> Result<ParamVars> {
        let mut layer_weights = Vec::new();
        let mut layer_biases = Vec::new();
        for (w, b) in self.backbone.weights.iter().zip(&self.backbone.biases) {
            layer_weights.push(g.leaf(w.clone())?);
            layer_biases.push(g.leaf(b.clone())?);
        }
        let (head_w, head_b) = match &self.head {
            Head::Hypersphere { w, .. } => (g.leaf(w.clone())?, None),
            Head::PlainLinear { w, b } => (g.leaf(w.clone())?, Some(g.leaf(b.clone())?)),
        };
        Ok(ParamVars {
            layer_weights,
            layer_biases,
            head_w,
            head_b,
        })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward_features",
                lhs: shape.to_vec(),
                rhs: vec![0, self.input_dim()],
            });
        }
        Ok(())
    }

    /// Backbone forward on the graph: `x` is a `(batch, input_dim)` node.
    pub fn features_graph(&self, g: &mut Graph, x: Var, pv: &ParamVars) -> Result<Var> {
        self.check_input(g.value(x).shape())?;
        let mut h = x;
        let layers = pv.layer_weights.len();
        for i in 0..layers {
            let lin = g.matmul(h, pv.layer_weights[i])?;
            h = g.add_row(lin, pv.layer_biases[i])?;
            if i + 1 < layers {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Head scores on the graph: cosines `(batch, K)` for the hypersphere
    /// head, raw logits for the plain head.
    pub fn scores_graph(&self, g: &mut Graph, x: Var, pv: &ParamVars) -> Result<Var> {
        let z = self.features_graph(g, x, pv)?;
        match &self.head {
            Head::Hypersphere { .. } => head::cosine_logits(g, z, pv.head_w),
            Head::PlainLinear { .. } => {
                let lin = g.matmul(z, pv.head_w)?;
                g.add_row(lin, pv.head_b.expect("plain head has bias"))
            }
        }
    }

    /// Value-level backbone forward; bit-identical to the graph forward.
    pub fn forward_features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let mut h = x.clone();
        let layers = self.backbone.weights.len();
        for i in 0..layers {
            let lin = tensor::matmul(&h, &self.backbone.weights[i])?;
            h = tensor::add_row(&lin, &self.backbone.biases[i])?;
            if i + 1 < layers {
                h = tensor::relu(&h);
            }
        }
        tensor::ensure_finite(&h, "backbone forward")?;
        Ok(h)
    }

    /// Value-level head scores (cosines or logits).
    pub fn scores_values(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.forward_features(x)?;
        match &self.head {
            Head::Hypersphere { w, .. } => {
                let zn = normalize_rows_values(&z)?;
                let wn = normalize_cols_values(w)?;
                tensor::matmul(&zn, &wn)
            }
            Head::PlainLinear { w, b } => {
                let lin = tensor::matmul(&z, w)?;
                tensor::add_row(&lin, b)
            }
        }
    }

    /// Row softmax over the head scores: probabilities summing to 1 per row.
    /// The hypersphere head applies softmax to raw cosines (angles only).
    pub fn forward_probabilities(&self, x: &Tensor) -> Result<Tensor> {
        Ok(head::softmax_rows(&self.scores_values(x)?))
    }

    /// Predicted labels: row argmax of the scores, lowest index on ties.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(tensor::argmax_rows(&self.scores_values(x)?))
    }

    /// FNV-1a over all parameter names, shapes, and little-endian values;
    /// used by determinism and no-mutation contracts.
    pub fn param_checksum(&self) -> u64 {
        let mut h = Fnv64::new();
        for (name, t) in self.params() {
            h.write(name.as_bytes());
            for &d in t.shape() {
                h.write(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.write(&v.to_le_bytes());
            }
        }
        h.finish()
    }
}

/// Value-level row normalization with the same zero-norm contract as the
/// graph version.
pub fn normalize_rows_values(z: &Tensor) -> Result<Tensor> {
    let norms = tensor::norm_axis(z, Reduce::PerRow);
    if let Some(idx) = norms.data().iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNormRow { index: idx });
    }
    tensor::div_bcast(z, &norms, Reduce::PerRow)
}

/// Value-level column normalization with the same zero-norm contract as the
/// graph version.
pub fn normalize_cols_values(w: &Tensor) -> Result<Tensor> {
    let norms = tensor::norm_axis(w, Reduce::PerCol);
    if let Some(idx) = norms.data().iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNormColumn { index: idx });
    }
    tensor::div_bcast(w, &norms, Reduce::PerCol)
}
