//! Cross-validated training and landmark prediction.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::folds::FoldPlan;
use crate::landmark::LandmarkSet;
use crate::netspec::{parse_netspec, NetworkSpec};
use crate::nn::model::{batch_from_samples, volume_to_sample};
use crate::nn::{msle_loss, AdamConfig, AdamState, Checkpoint, Model, NnError, Tensor};
use crate::volume::{canonicalize, Case, CaseTransform, Laterality, RoiSpec, VolumeError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("fold {fold}: loss became non-finite at epoch {epoch}")]
    Diverged { fold: usize, epoch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no checkpoint for fold {0}")]
    MissingCheckpoint(usize),
    #[error("case {case}: {source}")]
    Case { case: String, source: VolumeError },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Network description; `None` selects the reference architecture for `input_dims`.
    pub spec: Option<String>,
    /// ROI extents fed to the network, in voxels.
    pub input_dims: [usize; 3],
    pub folds: usize,
    pub grouped_by_patient: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3500,
            batch_size: 5,
            learning_rate: 0.0005,
            dropout_rate: 0.2,
            seed: 0,
            spec: None,
            input_dims: [200, 200, 100],
            folds: 5,
            grouped_by_patient: true,
        }
    }
}

impl TrainConfig {
    /// CPU-sized variant: 32×32×16 inputs, 300 epochs.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 300,
            input_dims: [32, 32, 16],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} is not a finite non-negative number", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(TrainError::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        self.network().map(|_| ())
    }

    pub fn network(&self) -> Result<NetworkSpec, TrainError> {
        let [w, h, d] = self.input_dims;
        let spec = match &self.spec {
            Some(text) => parse_netspec(text).map_err(|e| TrainError::Config(format!("network description: {e}")))?,
            None => NetworkSpec::reference_with_dropout(w, h, d, self.dropout_rate),
        };
        let i = spec.input;
        if [i.w, i.h, i.d, i.channels] != [w, h, d, 1] {
            return Err(TrainError::Config(format!(
                "network input {}x{}x{}x{} does not match ROI {w}x{h}x{d}x1",
                i.w, i.h, i.d, i.channels
            )));
        }
        Ok(spec)
    }
}

/// A case in the network's frame: flipped to right, cropped, normalized.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub id: String,
    pub sample: Vec<f64>,
    pub target: [f64; 21],
    pub transform: CaseTransform,
}

/// The ROI used for a case, in its original grid. Without a stored corner the
/// box is centred in the right-ear frame, so a left ear and its mirrored twin
/// see the same voxels.
pub fn case_roi(case: &Case, size: [usize; 3]) -> RoiSpec {
    if let Some(corner) = case.roi_corner {
        return RoiSpec::new(corner, size);
    }
    let dims = case.volume.dims();
    let mut roi = RoiSpec::centered(dims, size);
    if case.volume.laterality == Laterality::Left {
        roi.corner[0] = dims[0].saturating_sub(roi.corner[0] + size[0]);
    }
    roi
}

pub fn prepare_case(case: &Case, input_dims: [usize; 3]) -> Result<Prepared, TrainError> {
    let roi = case_roi(case, input_dims);
    let (v, lm, transform) = canonicalize(&case.volume, &case.landmarks, &roi).map_err(|source| TrainError::Case {
        case: case.volume.id.clone(),
        source,
    })?;
    Ok(Prepared {
        id: case.volume.id.clone(),
        sample: volume_to_sample(&v.normalized(), input_dims),
        target: lm.to_flat(),
        transform,
    })
}

pub fn prepare_all(cases: &[Case], input_dims: [usize; 3]) -> Result<Vec<Prepared>, TrainError> {
    cases.iter().map(|c| prepare_case(c, input_dims)).collect()
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub checkpoint: Checkpoint,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

/// SplitMix64 finalizer, used to derive independent per-fold seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn batch(data: &[Prepared], idx: &[usize], dims: [usize; 3]) -> Result<(Tensor, Tensor), NnError> {
    let samples: Vec<&[f64]> = idx.iter().map(|&i| data[i].sample.as_slice()).collect();
    let x = batch_from_samples(&samples, [dims[0], dims[1], dims[2], 1])?;
    let t = idx.iter().flat_map(|&i| data[i].target).collect();
    Ok((x, Tensor::new(vec![idx.len(), 21], t)?))
}

/// Trains one model on `train_idx`; `on_epoch(epoch, loss)` sees each epoch's mean loss.
pub fn train_fold(
    data: &[Prepared],
    train_idx: &[usize],
    cfg: &TrainConfig,
    fold: usize,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<FoldOutcome, TrainError> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(TrainError::Config(format!("fold {fold} has no training cases")));
    }
    let spec = cfg.network()?;
    let fold_seed = derive_seed(cfg.seed, fold as u64);
    let mut model = Model::new(spec, fold_seed)?;
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(fold_seed, u64::MAX));
    let mut order = train_idx.to_vec();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, t) = batch(data, chunk, cfg.input_dims)?;
            let trace = model.forward(&x, true, rng.random())?;
            let (loss, grad) = msle_loss(&trace.output, &t)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { fold, epoch });
            }
            let grads = model.backward(&trace, &grad);
            adam.step(&mut model.params, &grads);
            total += loss * chunk.len() as f64;
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() || model.params.iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
            return Err(TrainError::Diverged { fold, epoch });
        }
        on_epoch(epoch, mean);
        losses.push(mean);
    }
    let meta = serde_json::json!({
        "fold": fold,
        "epochs": cfg.epochs,
        "train_cases": train_idx.iter().map(|&i| data[i].id.as_str()).collect::<Vec<_>>(),
    });
    Ok(FoldOutcome {
        fold,
        checkpoint: Checkpoint {
            model,
            adam: Some(adam),
            meta,
        },
        losses,
    })
}

/// Trains every fold of `plan`. With `threads > 1`, folds run concurrently;
/// each fold's result does not depend on the thread count.
pub fn train_cv(
    data: &[Prepared],
    plan: &FoldPlan,
    cfg: &TrainConfig,
    threads: usize,
    on_epoch: &(dyn Fn(usize, usize, f64) + Sync),
) -> Result<Vec<FoldOutcome>, TrainError> {
    let run = |fold: usize| train_fold(data, &plan.train_indices(fold), cfg, fold, |e, l| on_epoch(fold, e, l));
    if threads <= 1 {
        return (0..plan.k).map(run).collect();
    }
    let mut results: Vec<Option<Result<FoldOutcome, TrainError>>> = (0..plan.k).map(|_| None).collect();
    for wave in (0..plan.k).collect::<Vec<_>>().chunks(threads) {
        let done: Vec<(usize, Result<FoldOutcome, TrainError>)> = std::thread::scope(|s| {
            let handles: Vec<_> = wave.iter().map(|&f| (f, s.spawn(move || run(f)))).collect();
            handles
                .into_iter()
                .map(|(f, h)| (f, h.join().expect("training thread panicked")))
                .collect()
        });
        for (f, r) in done {
            results[f] = Some(r);
        }
    }
    results.into_iter().map(|r| r.expect("every fold scheduled")).collect()
}

/// Predicted landmarks for one case, in the case's original grid.
pub fn predict_case(model: &Model, p: &Prepared, input_dims: [usize; 3]) -> Result<LandmarkSet, TrainError> {
    let (x, _) = batch(std::slice::from_ref(p), &[0], input_dims)?;
    let y = model.predict(&x)?;
    Ok(p.transform.landmarks_to_original(&LandmarkSet::from_flat(y.data())))
}

/// Writes `contents` to `dir/name`, creating `dir` first.
pub fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, TrainError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io(&path))?;
    Ok(path)
}

/// Loss log: one `epoch loss` line per epoch.
pub fn format_loss_log(losses: &[f64]) -> String {
    losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{} {l}\n", i + 1))
        .collect()
}

pub fn fold_dir(run_dir: &Path, fold: usize) -> PathBuf {
    run_dir.join(format!("fold_{fold}"))
}

/// Persists a fold's checkpoint and loss log under `run_dir/fold_<k>/`.
pub fn save_fold(run_dir: &Path, outcome: &FoldOutcome) -> Result<(), TrainError> {
    let dir = fold_dir(run_dir, outcome.fold);
    write_file(&dir, "model.ckpt", &outcome.checkpoint.to_bytes())?;
    write_file(&dir, "loss.log", format_loss_log(&outcome.losses).as_bytes())?;
    Ok(())
}

pub fn load_fold_models(run_dir: &Path, k: usize) -> Result<Vec<Model>, TrainError> {
    (0..k)
        .map(|f| {
            let path = fold_dir(run_dir, f).join("model.ckpt");
            if !path.exists() {
                return Err(TrainError::MissingCheckpoint(f));
            }
            Ok(Checkpoint::load(&path)?.model)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_generate;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            input_dims: [16, 16, 16],
            spec: Some("I(16,16,16,1) C(2) P(4) FC(8) O(21)".into()),
            ..TrainConfig::desk_scale()
        }
    }

    #[test]
    fn defaults_follow_training_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.learning_rate, c.dropout_rate), (3500, 5, 0.0005, 0.2));
        let d = TrainConfig::desk_scale();
        assert_eq!((d.epochs, d.input_dims), (300, [32, 32, 16]));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cases = synth_generate(4, [16, 16, 16], [0.3, 0.3, 0.3], 2).unwrap();
        let data = prepare_all(&cases, [16, 16, 16]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            dropout_rate: 0.0,
            ..tiny_cfg()
        };
        let out = train_fold(&data, &[0, 1, 2, 3], &cfg, 0, |_, _| {}).unwrap();
        let fresh = Model::new(cfg.network().unwrap(), derive_seed(cfg.seed, 0)).unwrap();
        assert_eq!(out.checkpoint.model.params, fresh.params);
        // full-batch order changes summation order only
        let l0 = out.losses[0];
        assert!(out.losses.iter().all(|l| (l - l0).abs() <= 1e-12 * l0));
    }

    #[test]
    fn training_is_deterministic() {
        let cases = synth_generate(4, [16, 16, 16], [0.3, 0.3, 0.3], 2).unwrap();
        let data = prepare_all(&cases, [16, 16, 16]).unwrap();
        let a = train_fold(&data, &[0, 1, 2], &tiny_cfg(), 1, |_, _| {}).unwrap();
        let b = train_fold(&data, &[0, 1, 2], &tiny_cfg(), 1, |_, _| {}).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn left_roi_mirrors_the_centered_box() {
        let mut cases = synth_generate(2, [19, 16, 16], [0.3, 0.3, 0.3], 4).unwrap();
        cases[0].volume.laterality = Laterality::Left;
        let roi = case_roi(&cases[0], [16, 16, 16]);
        assert_eq!(roi.corner, [2, 0, 0]);
        cases[0].volume.laterality = Laterality::Right;
        assert_eq!(case_roi(&cases[0], [16, 16, 16]).corner, [1, 0, 0]);
    }

    #[test]
    fn loss_log_lines() {
        assert_eq!(format_loss_log(&[2.5, 0.125]), "1 2.5\n2 0.125\n");
    }

    #[test]
    fn spec_must_match_roi() {
        let cfg = TrainConfig {
            spec: Some("I(8,8,8,1) FC(4) O(21)".into()),
            ..TrainConfig::desk_scale()
        };
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
    }
}
