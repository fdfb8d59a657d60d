//! Balanced batch construction: a fixed bonafide quota per modality in
//! every batch, spoofs spread over the epoch without replacement.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, DatasetView, ModalityId, Result};

/// Emits one epoch of batches over `view`.
///
/// Every batch carries `⌊batch_size / (2·|M|)⌋` bonafide samples from each
/// modality present in the view (modalities cycle through reshuffled pools,
/// so scarce bonafide classes repeat across batches). The remaining slots
/// are filled by a seeded shuffle of all spoof samples without replacement;
/// the last batch keeps the remainder and may be short. Identical
/// `(view, batch_size, seed)` give an identical batch sequence.
pub fn make_balanced_batches(
    view: &DatasetView,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let present: Vec<ModalityId> = view
        .modalities()
        .ids()
        .filter(|&m| !view.bonafide_of(m).is_empty() || !view.spoof_of(m).is_empty())
        .collect();
    if present.is_empty() {
        return Err(DataError::Config(
            "cannot sample batches from an empty view".to_string(),
        ));
    }
    let quota = batch_size / (2 * present.len());
    if quota == 0 {
        return Err(DataError::Config(format!(
            "batch_size {} is too small for {} modalities; need at least {}",
            batch_size,
            present.len(),
            2 * present.len()
        )));
    }
    for &m in &present {
        if view.bonafide_of(m).is_empty() {
            return Err(DataError::Config(format!(
                "modality {:?} has no bonafide samples",
                view.modalities().name(m)
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<usize>> = present
        .iter()
        .map(|&m| {
            let mut p = view.bonafide_of(m).to_vec();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let mut cursors = vec![0usize; present.len()];

    let mut spoofs = view.spoof_indices();
    spoofs.shuffle(&mut rng);

    let spoof_slots = batch_size - quota * present.len();
    let n_batches = if spoofs.is_empty() {
        1
    } else {
        spoofs.len().div_ceil(spoof_slots)
    };

    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for (pi, pool) in pools.iter_mut().enumerate() {
            for _ in 0..quota {
                if cursors[pi] == pool.len() {
                    pool.shuffle(&mut rng);
                    cursors[pi] = 0;
                }
                batch.push(pool[cursors[pi]]);
                cursors[pi] += 1;
            }
        }
        let lo = b * spoof_slots;
        let hi = ((b + 1) * spoof_slots).min(spoofs.len());
        batch.extend_from_slice(&spoofs[lo..hi]);
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{gen_synthetic, Label, ModalityTable, Sample, SynthConfig};

    fn small_view(bona: usize, spoof: usize) -> DatasetView {
        let table = ModalityTable::new(&["only"]).unwrap();
        let mut samples = Vec::new();
        for i in 0..bona {
            samples.push(Sample {
                id: format!("b{i}"),
                modality: ModalityId(0),
                label: Label::Bonafide,
                dataset_tag: "t".to_string(),
                features: vec![0.0],
            });
        }
        for i in 0..spoof {
            samples.push(Sample {
                id: format!("s{i}"),
                modality: ModalityId(0),
                label: Label::Spoof,
                dataset_tag: "t".to_string(),
                features: vec![1.0],
            });
        }
        DatasetView::new(table, 1, samples).unwrap()
    }

    #[test]
    fn four_modalities_batch_64_meets_quota() {
        let view = gen_synthetic(&SynthConfig::benchmark(3, "t")).unwrap();
        let batches = make_balanced_batches(&view, 64, 11).unwrap();
        assert!(!batches.is_empty());
        for batch in &batches {
            for m in view.modalities().ids() {
                let bona_m = batch
                    .iter()
                    .filter(|&&i| {
                        let s = view.sample(i);
                        s.modality == m && s.label.is_bonafide()
                    })
                    .count();
                assert!(bona_m >= 8, "batch has only {bona_m} bonafide of {m:?}");
            }
        }
    }

    #[test]
    fn spoofs_appear_at_most_once_per_epoch() {
        let view = gen_synthetic(&SynthConfig::benchmark(3, "t")).unwrap();
        let batches = make_balanced_batches(&view, 64, 11).unwrap();
        let mut seen = std::collections::HashMap::new();
        for batch in &batches {
            for &i in batch {
                if !view.sample(i).label.is_bonafide() {
                    *seen.entry(i).or_insert(0usize) += 1;
                }
            }
        }
        assert!(seen.values().all(|&c| c == 1));
        assert_eq!(seen.len(), view.spoof_indices().len());
    }

    #[test]
    fn minimal_single_modality_batch_contains_both_samples() {
        let view = small_view(1, 1);
        let batches = make_balanced_batches(&view, 2, 5).unwrap();
        assert_eq!(batches.len(), 1);
        let mut b = batches[0].clone();
        b.sort_unstable();
        assert_eq!(b, vec![0, 1]);
    }

    #[test]
    fn zero_quota_is_config_error() {
        let view = gen_synthetic(&SynthConfig::benchmark(3, "t")).unwrap();
        assert!(matches!(
            make_balanced_batches(&view, 4, 0),
            Err(DataError::Config(_))
        ));
    }

    #[test]
    fn missing_bonafide_is_config_error() {
        let view = small_view(0, 3);
        assert!(matches!(
            make_balanced_batches(&view, 2, 0),
            Err(DataError::Config(_))
        ));
    }

    #[test]
    fn batches_are_deterministic_per_seed() {
        let view = gen_synthetic(&SynthConfig::benchmark(3, "t")).unwrap();
        let a = make_balanced_batches(&view, 64, 42).unwrap();
        let b = make_balanced_batches(&view, 64, 42).unwrap();
        assert_eq!(a, b);
        let c = make_balanced_batches(&view, 64, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_spoof_view_still_yields_one_batch() {
        let view = small_view(3, 0);
        let batches = make_balanced_batches(&view, 2, 0).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 1);
    }
}
