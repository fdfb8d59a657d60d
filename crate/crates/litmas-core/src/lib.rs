//! Core library for `litmas`: a desk-scale multi-modal anti-spoofing stack.
//!
//! The pieces, bottom to top:
//!
//! * [`numgrad`]: dense `f64` tensors with reverse-mode automatic
//!   differentiation on a dynamic tape.
//! * [`dataio`]: the multi-modal dataset model, a self-describing feature
//!   file format, a seeded synthetic data generator, and the balanced batch
//!   sampler.
//! * [`model`]: MLP encoder, per-modality projection experts, classifier,
//!   and checkpoint serialization.
//! * [`losses`]: the modality-aligned concentration loss with its
//!   per-modality center bank, plus cross-entropy for fine-tuning.
//! * [`trainer`]: AdamW and the two-step training pipeline with a
//!   four-configuration ablation harness.
//! * [`padmetrics`]: presentation-attack-detection evaluation: ROC, AUC,
//!   EER, APCER/BPCER, BPCER@APCER, min t-DCF, and grouped report tables.
//!
//! Everything is deterministic given a seed; all training state lives in
//! plain structs that serialize to versioned checkpoint files.

pub mod config;
pub mod dataio;
pub mod losses;
pub mod model;
pub mod numgrad;
pub mod padmetrics;
pub mod trainer;

/// Derives a child seed from a master seed and a purpose tag, so the
/// independent random streams of a run (data splits, parameter init,
/// per-epoch shuffles) never collide. FNV-1a over the master bytes and the
/// tag, then a splitmix64 finalizer to spread low-entropy tags.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in master.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    let mut z = h.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
