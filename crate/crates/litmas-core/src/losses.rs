//! Concentration loss, its modality-averaged form, the per-modality
//! bonafide center bank, and cross-entropy for the fine-tuning step.
//!
//! For a modality m, the active set N_m holds the batch's bonafide samples
//! of m together with the spoof samples of every modality. Cosine
//! similarities to the modality center are softmax-normalized over N_m and
//! scored against a target that puts mass 1/B on each of the B bonafide
//! members and 0 on spoof, so the loss pulls bonafide toward the center
//! while pushing all spoof away. Centers are constants within an epoch.

use thiserror::Error;

use crate::dataio::{DatasetView, Label, ModalityId};
use crate::model::{ModelBundle, ModelError};
use crate::numgrad::{NumgradError, Tape, Tensor, Value, NORM_EPSILON};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("no modality has a bonafide sample in this batch")]
    NoEligibleModality,
    #[error("misaligned batch: {0}")]
    Misaligned(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("center of modality {name:?} is degenerate (norm {norm:.3e}); the encoder output has collapsed")]
    DegenerateCenter { name: String, norm: f64 },
    #[error(transparent)]
    Autodiff(#[from] NumgradError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Per-modality bonafide centers (one row per modality, dim d) plus the
/// epoch stamp of the update that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterBank {
    pub centers: Tensor,
    pub epoch: u64,
}

impl CenterBank {
    pub fn center_row(&self, m: ModalityId) -> Tensor {
        Tensor::vector(self.centers.row(m.0).to_vec())
    }

    /// Frobenius norm of the center movement since `prev`; the per-epoch
    /// drift reported in run logs.
    pub fn drift_from(&self, prev: &CenterBank) -> f64 {
        self.centers
            .data()
            .iter()
            .zip(prev.centers.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// One training batch as seen by the losses: embeddings on a tape plus the
/// aligned labels and modality ids.
pub struct MacBatch<'t> {
    pub z: Value<'t>,
    pub labels: Vec<Label>,
    pub mods: Vec<ModalityId>,
}

impl<'t> MacBatch<'t> {
    fn check(&self) -> Result<()> {
        let n = self.z.shape()[0];
        if self.labels.len() != n || self.mods.len() != n {
            return Err(LossError::Misaligned(format!(
                "{} embeddings, {} labels, {} modality ids",
                n,
                self.labels.len(),
                self.mods.len()
            )));
        }
        Ok(())
    }
}

/// Indices of the active set N_m: bonafide of modality `m` plus spoof of
/// any modality, ascending.
pub fn select_nm(labels: &[Label], mods: &[ModalityId], m: ModalityId) -> Vec<usize> {
    (0..labels.len())
        .filter(|&i| !labels[i].is_bonafide() || mods[i] == m)
        .collect()
}

/// Concentration loss of one modality against its center (a tape constant).
/// Returns `None` when the batch has no bonafide of `m`: the modality is
/// skipped, not an error, so the caller can average over eligible ones.
pub fn concentration_loss<'t>(
    batch: &MacBatch<'t>,
    m: ModalityId,
    center: Value<'t>,
) -> Result<Option<Value<'t>>> {
    batch.check()?;
    let nm = select_nm(&batch.labels, &batch.mods, m);
    let bona_count = nm
        .iter()
        .filter(|&&i| batch.labels[i].is_bonafide())
        .count();
    if bona_count == 0 {
        return Ok(None);
    }
    let members = batch.z.gather_rows(&nm)?;
    let sims = members.cosine_rows(center)?;
    let log_p = sims.log_softmax()?;
    // CE against the 1/B-on-bonafide target: -(1/B) * sum of bonafide log p
    let mut w = Tensor::zeros(vec![nm.len()]);
    for (j, &i) in nm.iter().enumerate() {
        if batch.labels[i].is_bonafide() {
            w.data_mut()[j] = -1.0 / bona_count as f64;
        }
    }
    Ok(Some(log_p.weighted_sum(&w)?))
}

/// Mean concentration loss over the modalities with at least one bonafide
/// sample in the batch. Centers enter the graph as constants, so backward
/// assigns them no gradient.
pub fn mac_loss<'t>(tape: &'t Tape, batch: &MacBatch<'t>, bank: &CenterBank) -> Result<Value<'t>> {
    batch.check()?;
    let n_mods = bank.centers.shape()[0];
    let mut terms: Option<Value<'t>> = None;
    let mut eligible = 0usize;
    for mi in 0..n_mods {
        let m = ModalityId(mi);
        let center = tape.constant(bank.center_row(m));
        if let Some(term) = concentration_loss(batch, m, center)? {
            eligible += 1;
            terms = Some(match terms {
                None => term,
                Some(acc) => acc.add(term)?,
            });
        }
    }
    match terms {
        Some(sum) if eligible > 0 => Ok(sum.scale(1.0 / eligible as f64)),
        _ => Err(LossError::NoEligibleModality),
    }
}

/// Recomputes every modality's center as the mean bonafide embedding under
/// the bundle's current encoder. The per-dimension reduction is pairwise,
/// so any dataset ordering gives the same center to well below 1e-12.
/// Stamped `prev.epoch + 1`, or 0 for the initial bank.
pub fn update_centers(
    bundle: &ModelBundle,
    view: &DatasetView,
    prev: Option<&CenterBank>,
) -> Result<CenterBank> {
    let d = bundle.dims.d;
    let n_mods = view.modalities().len();
    let mut centers = Tensor::zeros(vec![n_mods, d]);
    for m in view.modalities().ids() {
        let bona = view.bonafide_of(m);
        if bona.is_empty() {
            return Err(LossError::Config(format!(
                "modality {:?} has no bonafide samples to form a center",
                view.modalities().name(m)
            )));
        }
        let z = bundle.encode_tensor(&view.features_matrix(bona))?;
        let n = bona.len();
        let mut col = vec![0.0; n];
        for j in 0..d {
            for (r, slot) in col.iter_mut().enumerate() {
                *slot = z.get2(r, j);
            }
            centers.data_mut()[m.0 * d + j] = pairwise_sum(&col) / n as f64;
        }
        let norm: f64 = centers.row(m.0).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= NORM_EPSILON {
            return Err(LossError::DegenerateCenter {
                name: view.modalities().name(m).to_string(),
                norm,
            });
        }
    }
    Ok(CenterBank {
        centers,
        epoch: prev.map_or(0, |b| b.epoch + 1),
    })
}

/// Mean negative log-likelihood of two-way logits under the labels.
pub fn cross_entropy<'t>(logits: Value<'t>, labels: &[Label]) -> Result<Value<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[1] != 2 {
        return Err(LossError::Misaligned(format!(
            "expected n x 2 logits, got {shape:?}"
        )));
    }
    if shape[0] != labels.len() {
        return Err(LossError::Misaligned(format!(
            "{} logit rows, {} labels",
            shape[0],
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(LossError::Misaligned("empty batch".to_string()));
    }
    let cols: Vec<usize> = labels.iter().map(|l| l.as_u8() as usize).collect();
    let picked = logits.log_softmax()?.pick(&cols)?;
    Ok(picked.mean()?.scale(-1.0))
}

/// Pairwise (cascade) summation: error grows like log n instead of n, so
/// reorderings of the inputs agree far below the 1e-12 contract.
fn pairwise_sum(vals: &[f64]) -> f64 {
    if vals.len() <= 8 {
        return vals.iter().sum();
    }
    let mid = vals.len() / 2;
    pairwise_sum(&vals[..mid]) + pairwise_sum(&vals[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{ModalityTable, Sample};
    use crate::model::Dims;

    const B: Label = Label::Bonafide;
    const S: Label = Label::Spoof;

    fn mk_batch<'t>(
        tape: &'t Tape,
        rows: Vec<Vec<f64>>,
        labels: Vec<Label>,
        mods: Vec<usize>,
    ) -> MacBatch<'t> {
        let d = rows[0].len();
        let n = rows.len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        MacBatch {
            z: tape.var(Tensor::matrix(n, d, data).unwrap()),
            labels,
            mods: mods.into_iter().map(ModalityId).collect(),
        }
    }

    fn bank(rows: Vec<Vec<f64>>) -> CenterBank {
        let m = rows.len();
        let d = rows[0].len();
        CenterBank {
            centers: Tensor::matrix(m, d, rows.into_iter().flatten().collect()).unwrap(),
            epoch: 0,
        }
    }

    #[test]
    fn select_nm_keeps_own_bonafide_and_all_spoof() {
        let labels = [B, B, S, S];
        let mods: Vec<ModalityId> = [0, 1, 0, 1].iter().map(|&m| ModalityId(m)).collect();
        assert_eq!(select_nm(&labels, &mods, ModalityId(0)), vec![0, 2, 3]);
        assert_eq!(select_nm(&labels, &mods, ModalityId(1)), vec![1, 2, 3]);

        let no_spoof = [B, B];
        let mods2: Vec<ModalityId> = [0, 1].iter().map(|&m| ModalityId(m)).collect();
        assert_eq!(select_nm(&no_spoof, &mods2, ModalityId(0)), vec![0]);

        let no_bona = [S, S];
        assert_eq!(select_nm(&no_bona, &mods2, ModalityId(0)), vec![0, 1]);
    }

    #[test]
    fn singleton_bonafide_is_exactly_zero() {
        let tape = Tape::new();
        let batch = mk_batch(&tape, vec![vec![0.3, 0.4]], vec![B], vec![0]);
        let center = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let loss = concentration_loss(&batch, ModalityId(0), center)
            .unwrap()
            .unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn equal_similarity_pair_is_ln_two() {
        let tape = Tape::new();
        let batch = mk_batch(
            &tape,
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![B, S],
            vec![0, 0],
        );
        let center = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let loss = concentration_loss(&batch, ModalityId(0), center)
            .unwrap()
            .unwrap();
        assert!((loss.item() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_spoof_fixture() {
        let tape = Tape::new();
        let batch = mk_batch(
            &tape,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![B, S],
            vec![0, 0],
        );
        let center = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let loss = concentration_loss(&batch, ModalityId(0), center)
            .unwrap()
            .unwrap();
        let e = std::f64::consts::E;
        assert!((loss.item() - (-(e / (e + 1.0)).ln())).abs() < 1e-12);
    }

    #[test]
    fn skip_signal_when_no_bonafide_of_modality() {
        let tape = Tape::new();
        let batch = mk_batch(&tape, vec![vec![1.0, 0.0]], vec![S], vec![0]);
        let center = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(concentration_loss(&batch, ModalityId(0), center)
            .unwrap()
            .is_none());
    }

    #[test]
    fn single_modality_mac_equals_concentration() {
        fn mk(tape: &Tape) -> MacBatch<'_> {
            mk_batch(
                tape,
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![B, S],
                vec![0, 0],
            )
        }
        let t1 = Tape::new();
        let b1 = mk(&t1);
        let mac = mac_loss(&t1, &b1, &bank(vec![vec![1.0, 0.0]])).unwrap();
        let t2 = Tape::new();
        let b2 = mk(&t2);
        let c = t2.constant(Tensor::vector(vec![1.0, 0.0]));
        let conc = concentration_loss(&b2, ModalityId(0), c).unwrap().unwrap();
        assert_eq!(mac.item(), conc.item());
    }

    #[test]
    fn two_ln_two_modalities_average_to_ln_two() {
        let tape = Tape::new();
        let batch = mk_batch(
            &tape,
            vec![
                vec![1.0, 1.0],
                vec![1.0, 1.0],
                vec![1.0, 1.0],
                vec![1.0, 1.0],
            ],
            vec![B, B, S, S],
            vec![0, 1, 0, 1],
        );
        // both centers see their bonafide plus both spoof at identical
        // similarity; each term is -log(1/3)? no: equal sims give p=1/3
        // over 3 members, so CE = ln 3 per modality, mean = ln 3
        let bank = bank(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let loss = mac_loss(&tape, &batch, &bank).unwrap();
        assert!((loss.item() - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn modality_without_bonafide_is_excluded_from_the_mean() {
        let tape = Tape::new();
        // modality 1 contributes spoof only; mean is over modality 0 alone
        let batch = mk_batch(
            &tape,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![B, S],
            vec![0, 1],
        );
        let bank2 = bank(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let loss = mac_loss(&tape, &batch, &bank2).unwrap();
        let e = std::f64::consts::E;
        assert!((loss.item() - (-(e / (e + 1.0)).ln())).abs() < 1e-12);
    }

    #[test]
    fn all_spoof_batch_is_an_error() {
        let tape = Tape::new();
        let batch = mk_batch(&tape, vec![vec![1.0, 0.0]], vec![S], vec![0]);
        assert!(matches!(
            mac_loss(&tape, &batch, &bank(vec![vec![1.0, 0.0]])),
            Err(LossError::NoEligibleModality)
        ));
    }

    #[test]
    fn loss_is_at_least_ln_bonafide_count() {
        // CE against a uniform 1/B target is bounded below by ln B
        let tape = Tape::new();
        let batch = mk_batch(
            &tape,
            vec![
                vec![0.9, 0.1],
                vec![0.7, 0.6],
                vec![1.0, 0.2],
                vec![-0.3, 0.8],
            ],
            vec![B, B, B, S],
            vec![0, 0, 0, 0],
        );
        let center = tape.constant(Tensor::vector(vec![1.0, 0.05]));
        let loss = concentration_loss(&batch, ModalityId(0), center)
            .unwrap()
            .unwrap();
        assert!(loss.item() >= 3.0f64.ln() - 1e-12);
    }

    #[test]
    fn pulling_spoof_toward_center_increases_loss() {
        let eval = |spoof: Vec<f64>| -> f64 {
            let tape = Tape::new();
            let batch = mk_batch(&tape, vec![vec![1.0, 0.0], spoof], vec![B, S], vec![0, 0]);
            let center = tape.constant(Tensor::vector(vec![1.0, 0.0]));
            concentration_loss(&batch, ModalityId(0), center)
                .unwrap()
                .unwrap()
                .item()
        };
        let far = eval(vec![-1.0, 0.2]);
        let near = eval(vec![1.0, 0.2]);
        assert!(near > far);
    }

    #[test]
    fn positive_row_scaling_leaves_loss_unchanged() {
        let eval = |scale: f64| -> f64 {
            let tape = Tape::new();
            let batch = mk_batch(
                &tape,
                vec![vec![0.6 * scale, 0.3 * scale], vec![-0.2, 0.9]],
                vec![B, S],
                vec![0, 0],
            );
            let center = tape.constant(Tensor::vector(vec![1.0, 0.4]));
            concentration_loss(&batch, ModalityId(0), center)
                .unwrap()
                .unwrap()
                .item()
        };
        assert!((eval(1.0) - eval(37.5)).abs() < 1e-12);
    }

    #[test]
    fn centers_receive_zero_gradient() {
        let tape = Tape::new();
        let batch = mk_batch(
            &tape,
            vec![vec![1.0, 0.2], vec![0.1, 0.9]],
            vec![B, S],
            vec![0, 0],
        );
        let bank1 = bank(vec![vec![0.8, 0.3]]);
        let loss = mac_loss(&tape, &batch, &bank1).unwrap();
        loss.backward().unwrap();
        // the constant created for the center is the node right after the
        // batch embeddings; embeddings themselves must have a gradient
        let zg = batch.z.grad();
        assert!(zg.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn cross_entropy_fixtures() {
        let tape = Tape::new();
        let logits = tape.var(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let loss = cross_entropy(logits, &[B]).unwrap();
        assert!((loss.item() - 2.0f64.ln()).abs() < 1e-15);

        let tape = Tape::new();
        let logits = tape.var(Tensor::matrix(1, 2, vec![10.0, -10.0]).unwrap());
        let loss = cross_entropy(logits, &[B]).unwrap();
        let want = (1.0 + (-20.0f64).exp()).ln();
        assert!((loss.item() - want).abs() < 1e-15);
        assert!((loss.item() - 2.061_153_6e-9).abs() < 1e-13);

        let tape = Tape::new();
        let logits = tape.var(Tensor::matrix(2, 2, vec![3.0, 1.0, 1.0, 3.0]).unwrap());
        let loss = cross_entropy(logits, &[B, S]).unwrap();
        let per = (1.0 + (-2.0f64).exp()).ln();
        assert!((loss.item() - per).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_grad_is_softmax_minus_onehot_over_n() {
        let tape = Tape::new();
        let logits = tape.var(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.5, 0.5]).unwrap());
        let loss = cross_entropy(logits, &[B, S]).unwrap();
        loss.backward().unwrap();
        let g = logits.grad();
        let e = std::f64::consts::E;
        let p0 = e / (e + 1.0);
        assert!((g.get2(0, 0) - (p0 - 1.0) / 2.0).abs() < 1e-12);
        assert!((g.get2(0, 1) - (1.0 - p0) / 2.0).abs() < 1e-12);
        assert!((g.get2(1, 0) - 0.5 / 2.0).abs() < 1e-12);
        assert!((g.get2(1, 1) - (0.5 - 1.0) / 2.0).abs() < 1e-12);
    }

    fn identity_bundle() -> ModelBundle {
        let dims = Dims {
            input_dim: 2,
            hidden: vec![],
            d: 2,
            k: 2,
        };
        let table = ModalityTable::new(&["a", "b"]).unwrap();
        let mut b = ModelBundle::init_step1(dims, table, 0).unwrap();
        b.encoder.layers[0].weight = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        b.encoder.layers[0].bias = Tensor::zeros(vec![2]);
        b
    }

    fn view_of(rows: Vec<(Vec<f64>, Label, usize)>) -> DatasetView {
        let table = ModalityTable::new(&["a", "b"]).unwrap();
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(i, (features, label, m))| Sample {
                id: format!("s{i}"),
                modality: ModalityId(m),
                label,
                dataset_tag: "t".to_string(),
                features,
            })
            .collect();
        DatasetView::new(table, 2, samples).unwrap()
    }

    #[test]
    fn centers_are_bonafide_means_under_the_encoder() {
        let bundle = identity_bundle();
        let view = view_of(vec![
            (vec![1.0, 0.0], B, 0),
            (vec![0.0, 1.0], B, 0),
            (vec![3.0, 4.0], B, 1),
            (vec![9.0, 9.0], S, 0),
            (vec![8.0, 8.0], S, 1),
        ]);
        let bank = update_centers(&bundle, &view, None).unwrap();
        assert_eq!(bank.epoch, 0);
        assert_eq!(bank.center_row(ModalityId(0)).data(), &[0.5, 0.5]);
        assert_eq!(bank.center_row(ModalityId(1)).data(), &[3.0, 4.0]);

        let next = update_centers(&bundle, &view, Some(&bank)).unwrap();
        assert_eq!(next.epoch, 1);
        assert_eq!(next.drift_from(&bank), 0.0);
    }

    #[test]
    fn center_update_requires_bonafide_everywhere() {
        let bundle = identity_bundle();
        let view = view_of(vec![(vec![1.0, 0.0], B, 0), (vec![9.0, 9.0], S, 1)]);
        assert!(matches!(
            update_centers(&bundle, &view, None),
            Err(LossError::Config(_))
        ));
    }

    #[test]
    fn degenerate_center_is_reported() {
        let mut bundle = identity_bundle();
        bundle.encoder.layers[0].weight = Tensor::zeros(vec![2, 2]);
        let view = view_of(vec![(vec![1.0, 0.0], B, 0), (vec![0.0, 1.0], B, 1)]);
        assert!(matches!(
            update_centers(&bundle, &view, None),
            Err(LossError::DegenerateCenter { .. })
        ));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_inputs() {
        let vals: Vec<f64> = (0..100).map(|i| (i as f64) * 0.1).collect();
        let naive: f64 = vals.iter().sum();
        assert!((pairwise_sum(&vals) - naive).abs() < 1e-9);
    }
}
