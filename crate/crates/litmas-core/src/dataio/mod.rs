//! Dataset model, feature-file I/O, synthetic data generation, and the
//! balanced batch sampler.
//!
//! A [`DatasetView`] is an ordered list of samples plus per-modality
//! bonafide/spoof index sets; the index sets partition the sample list.
//! Views are immutable after construction.

mod format;
mod sampler;
mod synth;

pub use format::{format_f64, load_feature_file, write_feature_file};
pub use sampler::make_balanced_batches;
pub use synth::{gen_synthetic, SynthConfig};

use thiserror::Error;

use crate::numgrad::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Dense index of a modality within a [`ModalityTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModalityId(pub usize);

/// The ordered set of modality names for one dataset. Indices are dense
/// `0..len`, names unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityTable {
    names: Vec<String>,
}

impl ModalityTable {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(DataError::Config("modality table is empty".to_string()));
        }
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(DataError::Config("empty modality name".to_string()));
            }
            if names[..i].contains(n) {
                return Err(DataError::Config(format!("duplicate modality name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ModalityId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<ModalityId> {
        self.names.iter().position(|n| n == name).map(ModalityId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ModalityId> {
        (0..self.names.len()).map(ModalityId)
    }
}

/// Class label. Bonafide (live) is 0, spoof is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Bonafide),
            1 => Some(Label::Spoof),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Bonafide => 0,
            Label::Spoof => 1,
        }
    }

    pub fn is_bonafide(self) -> bool {
        matches!(self, Label::Bonafide)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub modality: ModalityId,
    pub label: Label,
    pub dataset_tag: String,
    pub features: Vec<f64>,
}

/// Immutable dataset: samples in a fixed order plus per-modality
/// bonafide/spoof index sets that partition `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetView {
    modalities: ModalityTable,
    input_dim: usize,
    samples: Vec<Sample>,
    bona_by_mod: Vec<Vec<usize>>,
    spoof_by_mod: Vec<Vec<usize>>,
}

impl DatasetView {
    pub fn new(
        modalities: ModalityTable,
        input_dim: usize,
        samples: Vec<Sample>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(DataError::Config("input_dim must be positive".to_string()));
        }
        let mut bona_by_mod = vec![Vec::new(); modalities.len()];
        let mut spoof_by_mod = vec![Vec::new(); modalities.len()];
        for (i, s) in samples.iter().enumerate() {
            if s.modality.0 >= modalities.len() {
                return Err(DataError::Config(format!(
                    "sample {:?} has modality index {} outside the table",
                    s.id, s.modality.0
                )));
            }
            if s.features.len() != input_dim {
                return Err(DataError::Config(format!(
                    "sample {:?} has {} features, expected {}",
                    s.id,
                    s.features.len(),
                    input_dim
                )));
            }
            match s.label {
                Label::Bonafide => bona_by_mod[s.modality.0].push(i),
                Label::Spoof => spoof_by_mod[s.modality.0].push(i),
            }
        }
        Ok(Self {
            modalities,
            input_dim,
            samples,
            bona_by_mod,
            spoof_by_mod,
        })
    }

    pub fn modalities(&self) -> &ModalityTable {
        &self.modalities
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn bonafide_of(&self, m: ModalityId) -> &[usize] {
        &self.bona_by_mod[m.0]
    }

    pub fn spoof_of(&self, m: ModalityId) -> &[usize] {
        &self.spoof_by_mod[m.0]
    }

    /// All spoof sample indices in dataset order.
    pub fn spoof_indices(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| !self.samples[i].label.is_bonafide())
            .collect()
    }

    /// Stacks the features of the listed samples into an `n x input_dim`
    /// matrix, row order matching `idx`.
    pub fn features_matrix(&self, idx: &[usize]) -> Tensor {
        let d = self.input_dim;
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.samples[i].features);
        }
        Tensor::matrix(idx.len(), d, data).expect("index list and input_dim are consistent")
    }

    /// Per-modality (bonafide, spoof) counts in table order.
    pub fn class_counts(&self) -> Vec<(String, usize, usize)> {
        self.modalities
            .ids()
            .map(|m| {
                (
                    self.modalities.name(m).to_string(),
                    self.bona_by_mod[m.0].len(),
                    self.spoof_by_mod[m.0].len(),
                )
            })
            .collect()
    }
}
