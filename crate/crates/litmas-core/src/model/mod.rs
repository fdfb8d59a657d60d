//! Encoder, per-modality projection experts, classifier, and checkpoints.
//!
//! Parameters live in a [`ModelBundle`] as plain tensors. For training, the
//! bundle is registered on a [`Tape`] (one registration per step), giving
//! [`TapedParams`] whose forward methods build the autodiff graph; the same
//! methods run evaluation over constants, so there is exactly one
//! implementation of the math.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataio::{ModalityId, ModalityTable};
use crate::derive_seed;
use crate::losses::CenterBank;
use crate::numgrad::{NumgradError, Tape, Tensor, Value};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: corrupt checkpoint: {msg}")]
    Corrupt { path: String, msg: String },
    #[error("{path}: unsupported checkpoint version {found}, this build reads version {supported}")]
    Version {
        path: String,
        found: u32,
        supported: u32,
    },
    #[error("model mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Autodiff(#[from] NumgradError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which pipeline step produced a bundle. Step 1 bundles carry only the
/// encoder (plus centers); Step 2 bundles add projection and classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepTag {
    Step1,
    Step2,
}

impl StepTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StepTag::Step1 => "step1",
            StepTag::Step2 => "step2",
        }
    }
}

/// Layer widths of the stack: `input_dim -> hidden... -> d` for the
/// encoder, `d -> k` per projection head, `k -> 2` for the classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub d: usize,
    pub k: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.d == 0 || self.k == 0 || self.hidden.contains(&0) {
            return Err(ModelError::Dimension(format!(
                "all layer widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Encoder layer shapes as (fan_in, fan_out) pairs.
    fn encoder_layers(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.hidden);
        widths.push(self.d);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine map, stored as `fan_in x fan_out` weight plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    /// Kaiming-style init: weights uniform on `[-sqrt(6/fan_in), +...)`
    /// (standard deviation `sqrt(2/fan_in)`), biases zero.
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut data = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            data.push(rng.random_range(-bound..bound));
        }
        LinearParams {
            weight: Tensor::matrix(fan_in, fan_out, data).expect("consistent dims"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<LinearParams>,
}

/// One projection head per modality, all `d -> k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MoPEParams {
    pub heads: Vec<LinearParams>,
}

/// The projection stage: routed per-modality experts, or the single shared
/// head used by the no-expert arm.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionParams {
    MoPE(MoPEParams),
    Shared(LinearParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub linear: LinearParams,
}

/// All state of one model: parameters, dims, modality table, step tag, and
/// (after Step 1) the per-modality bonafide centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub step: StepTag,
    pub dims: Dims,
    pub modalities: ModalityTable,
    pub encoder: EncoderParams,
    pub projection: Option<ProjectionParams>,
    pub classifier: Option<ClassifierParams>,
    pub centers: Option<CenterBank>,
}

impl ModelBundle {
    /// Encoder-only bundle for Step 1. The encoder stream is derived from
    /// the seed the same way as in [`ModelBundle::init_step2`], so a
    /// 0-epoch Step 1 followed by Step 2 equals Step 2 from scratch.
    pub fn init_step1(dims: Dims, modalities: ModalityTable, seed: u64) -> Result<Self> {
        dims.validate()?;
        Ok(ModelBundle {
            step: StepTag::Step1,
            dims: dims.clone(),
            modalities,
            encoder: init_encoder(&dims, seed),
            projection: None,
            classifier: None,
            centers: None,
        })
    }

    /// Full bundle for Step 2. Every projection head (and the shared head
    /// of the no-expert arm) draws from the same derived stream, so all
    /// heads start identical and the four ablation arms coincide before
    /// any training.
    pub fn init_step2(
        dims: Dims,
        modalities: ModalityTable,
        seed: u64,
        use_mope: bool,
    ) -> Result<Self> {
        dims.validate()?;
        let head = |_m: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "projection-head"));
            LinearParams::init(dims.d, dims.k, &mut rng)
        };
        let projection = if use_mope {
            ProjectionParams::MoPE(MoPEParams {
                heads: (0..modalities.len()).map(head).collect(),
            })
        } else {
            ProjectionParams::Shared(head(0))
        };
        let mut cls_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "classifier"));
        Ok(ModelBundle {
            step: StepTag::Step2,
            dims: dims.clone(),
            modalities,
            encoder: init_encoder(&dims, seed),
            projection: Some(projection),
            classifier: Some(ClassifierParams {
                linear: LinearParams::init(dims.k, 2, &mut cls_rng),
            }),
            centers: None,
        })
    }

    /// Flat parameter registry in declaration order: encoder layers
    /// (weight, bias), projection heads, classifier. Centers are excluded;
    /// they are statistics, not trained parameters.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.encoder.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        match &self.projection {
            Some(ProjectionParams::MoPE(m)) => {
                for h in &m.heads {
                    out.push(&h.weight);
                    out.push(&h.bias);
                }
            }
            Some(ProjectionParams::Shared(h)) => {
                out.push(&h.weight);
                out.push(&h.bias);
            }
            None => {}
        }
        if let Some(c) = &self.classifier {
            out.push(&c.linear.weight);
            out.push(&c.linear.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.encoder.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        match &mut self.projection {
            Some(ProjectionParams::MoPE(m)) => {
                for h in &mut m.heads {
                    out.push(&mut h.weight);
                    out.push(&mut h.bias);
                }
            }
            Some(ProjectionParams::Shared(h)) => {
                out.push(&mut h.weight);
                out.push(&mut h.bias);
            }
            None => {}
        }
        if let Some(c) = &mut self.classifier {
            out.push(&mut c.linear.weight);
            out.push(&mut c.linear.bias);
        }
        out
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Registers every parameter on `tape`. With `trainable`, parameters
    /// become differentiable leaves; otherwise constants (evaluation).
    pub fn register<'t>(&self, tape: &'t Tape, trainable: bool) -> TapedParams<'t> {
        let reg = |t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let lin = |l: &LinearParams| TapedLinear {
            weight: reg(&l.weight),
            bias: reg(&l.bias),
        };
        TapedParams {
            input_dim: self.dims.input_dim,
            encoder: self.encoder.layers.iter().map(lin).collect(),
            projection: self.projection.as_ref().map(|p| match p {
                ProjectionParams::MoPE(m) => {
                    TapedProjection::MoPE(m.heads.iter().map(lin).collect())
                }
                ProjectionParams::Shared(h) => TapedProjection::Shared(lin(h)),
            }),
            classifier: self.classifier.as_ref().map(|c| lin(&c.linear)),
        }
    }

    /// Backbone embeddings for a feature matrix, no graph kept.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let tp = self.register(&tape, false);
        let xv = tape.constant(x.clone());
        Ok(tp.encode(xv)?.tensor())
    }

    /// Projected features for a feature matrix, no graph kept.
    pub fn project_tensor(&self, x: &Tensor, mods: &[ModalityId]) -> Result<Tensor> {
        let tape = Tape::new();
        let tp = self.register(&tape, false);
        let xv = tape.constant(x.clone());
        let z = tp.encode(xv)?;
        Ok(tp.project(z, mods)?.tensor())
    }

    /// Classifier logits for a feature matrix, no graph kept.
    pub fn logits_tensor(&self, x: &Tensor, mods: &[ModalityId]) -> Result<Tensor> {
        let tape = Tape::new();
        let tp = self.register(&tape, false);
        let xv = tape.constant(x.clone());
        let z = tp.encode(xv)?;
        let h = tp.project(z, mods)?;
        Ok(tp.classify(h)?.tensor())
    }

    /// Liveness scores (one per row) for a feature matrix.
    pub fn scores(&self, x: &Tensor, mods: &[ModalityId]) -> Result<Vec<f64>> {
        let logits = self.logits_tensor(x, mods)?;
        let n = logits.shape()[0];
        Ok((0..n)
            .map(|i| liveness_score(logits.get2(i, 0), logits.get2(i, 1)))
            .collect())
    }
}

fn init_encoder(dims: &Dims, seed: u64) -> EncoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "encoder"));
    EncoderParams {
        layers: dims
            .encoder_layers()
            .into_iter()
            .map(|(fan_in, fan_out)| LinearParams::init(fan_in, fan_out, &mut rng))
            .collect(),
    }
}

/// Full-model init for Step 2 with experts enabled; see
/// [`ModelBundle::init_step2`] for the ablation arms.
pub fn init_model(dims: Dims, modalities: ModalityTable, seed: u64) -> Result<ModelBundle> {
    ModelBundle::init_step2(dims, modalities, seed, true)
}

/// Scalar detection score from a two-logit row: bonafide logit minus spoof
/// logit. Higher means more live; invariant to shifting both logits.
pub fn liveness_score(logit_bonafide: f64, logit_spoof: f64) -> f64 {
    logit_bonafide - logit_spoof
}

pub struct TapedLinear<'t> {
    pub weight: Value<'t>,
    pub bias: Value<'t>,
}

pub enum TapedProjection<'t> {
    MoPE(Vec<TapedLinear<'t>>),
    Shared(TapedLinear<'t>),
}

/// A bundle's parameters registered on one tape, plus the forward methods
/// that build the graph.
pub struct TapedParams<'t> {
    input_dim: usize,
    pub encoder: Vec<TapedLinear<'t>>,
    pub projection: Option<TapedProjection<'t>>,
    pub classifier: Option<TapedLinear<'t>>,
}

impl<'t> TapedParams<'t> {
    /// Parameter handles in the same order as [`ModelBundle::params`].
    pub fn param_values(&self) -> Vec<Value<'t>> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.push(l.weight);
            out.push(l.bias);
        }
        match &self.projection {
            Some(TapedProjection::MoPE(heads)) => {
                for h in heads {
                    out.push(h.weight);
                    out.push(h.bias);
                }
            }
            Some(TapedProjection::Shared(h)) => {
                out.push(h.weight);
                out.push(h.bias);
            }
            None => {}
        }
        if let Some(c) = &self.classifier {
            out.push(c.weight);
            out.push(c.bias);
        }
        out
    }

    /// Gradients in registry order; call after `backward`.
    pub fn param_grads(&self) -> Vec<Tensor> {
        self.param_values().iter().map(|v| v.grad()).collect()
    }

    /// MLP forward: affine layers with relu between them, none after the
    /// last. `x` is `n x input_dim`.
    pub fn encode(&self, x: Value<'t>) -> Result<Value<'t>> {
        let got = x.shape();
        if got.len() != 2 || got[1] != self.input_dim {
            return Err(ModelError::Dimension(format!(
                "encoder expects n x {} input, got {:?}",
                self.input_dim, got
            )));
        }
        let mut h = x;
        let last = self.encoder.len() - 1;
        for (i, layer) in self.encoder.iter().enumerate() {
            h = h.matmul(layer.weight)?.add_row(layer.bias)?;
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Projection stage. With experts, row `i` goes through the head of
    /// `mods[i]` only: rows are gathered per modality, mapped, and
    /// scattered back, so heads of other modalities cannot influence the
    /// row numerically or in the gradient.
    pub fn project(&self, z: Value<'t>, mods: &[ModalityId]) -> Result<Value<'t>> {
        let proj = self
            .projection
            .as_ref()
            .ok_or_else(|| ModelError::Mismatch("projection stage not present".to_string()))?;
        let n = z.shape()[0];
        if mods.len() != n {
            return Err(ModelError::Dimension(format!(
                "{} modality ids for {} rows",
                mods.len(),
                n
            )));
        }
        match proj {
            TapedProjection::Shared(h) => Ok(z.matmul(h.weight)?.add_row(h.bias)?),
            TapedProjection::MoPE(heads) => {
                for m in mods {
                    if m.0 >= heads.len() {
                        return Err(ModelError::Mismatch(format!(
                            "modality index {} has no projection head",
                            m.0
                        )));
                    }
                }
                let mut acc: Option<Value<'t>> = None;
                for (mi, head) in heads.iter().enumerate() {
                    let rows: Vec<usize> =
                        (0..n).filter(|&i| mods[i] == ModalityId(mi)).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let group = z.gather_rows(&rows)?;
                    let mapped = group.matmul(head.weight)?.add_row(head.bias)?;
                    let placed = mapped.scatter_rows(n, &rows)?;
                    acc = Some(match acc {
                        None => placed,
                        Some(a) => a.add(placed)?,
                    });
                }
                acc.ok_or_else(|| {
                    ModelError::Dimension("projection over an empty batch".to_string())
                })
            }
        }
    }

    /// Classifier logits, `n x 2`.
    pub fn classify(&self, h: Value<'t>) -> Result<Value<'t>> {
        let cls = self
            .classifier
            .as_ref()
            .ok_or_else(|| ModelError::Mismatch("classifier not present".to_string()))?;
        Ok(h.matmul(cls.weight)?.add_row(cls.bias)?)
    }
}
