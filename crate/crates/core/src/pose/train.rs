//! Training and evaluation of landmark regressors.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{batch_tensors, Dataset, PatchSample};
use super::render::{crop, PatchSpec, SceneSample};
use super::{derive_seed, pose_error, reconstruct_pose, LandmarkSet, PatchFrame, Pose, PoseError};
use crate::net::{MacroConfig, NetError, NetworkSpec, SnapNet};
use crate::scalar::Scalar;
use crate::snap::SnapSequence;
use crate::tensor::{Graph, Optimizer, OptimizerKind, Tensor, TensorError};

pub const REGMSE_FLOOR: f64 = 1e-12;
/// Value assigned to candidates whose training diverged.
pub const FAILED_VALUE: f64 = -12.0;

const TAG_INIT: u64 = 10;
const TAG_SHUFFLE: u64 = 11;
const TAG_REPEAT: u64 = 12;
const EVAL_BATCH: usize = 128;

/// `-log10(regMSE)`, with regMSE floored at [`REGMSE_FLOOR`].
pub fn value_from_regmse(regmse: f64) -> f64 {
    -regmse.max(REGMSE_FLOOR).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Independent trainings averaged per candidate.
    pub repeats: usize,
}

impl TrainConfig {
    /// Candidate training during search: Adam.
    pub fn candidate(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 32,
            optimizer: OptimizerKind::adam(3e-3),
            seed,
            repeats: 1,
        }
    }

    /// Final retraining: RMSProp.
    pub fn full(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 32,
            optimizer: OptimizerKind::rmsprop(1e-3),
            seed,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch training on landmark MSE. Batches of a single sample are
/// skipped (batch statistics would be degenerate). A non-finite loss or
/// gradient aborts training.
pub fn train_network<T: Scalar>(
    net: &mut SnapNet<T>,
    data: &[PatchSample],
    patch_size: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TensorError> {
    let mut opt = Optimizer::new(cfg.optimizer, &net.params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_SHUFFLE, epoch as u64)));
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size.max(2)) {
            if chunk.len() < 2 {
                continue;
            }
            let samples: Vec<&PatchSample> = chunk.iter().map(|i| &data[*i]).collect();
            let (x, y) = batch_tensors::<T>(&samples, patch_size);
            let mut g = Graph::new();
            let vars = net.params.bind(&mut g);
            let xv = g.input(x);
            let pred = net.forward(&mut g, &vars, xv, true)?;
            let loss = g.mse(pred, &y)?;
            let lv = g.value(loss).data()[0].as_f64();
            if !lv.is_finite() {
                return Err(TensorError::NonFiniteGradient(usize::MAX));
            }
            g.backward(loss)?;
            let grads = net.params.grads(&g, &vars);
            opt.step(&mut net.params, &grads)?;
            total += lv;
            batches += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }
    Ok(TrainOutcome { epoch_losses })
}

/// Mean squared landmark error over `data` in inference mode.
pub fn regmse<T: Scalar>(net: &mut SnapNet<T>, data: &[PatchSample], patch_size: usize) -> Result<f64, TensorError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for chunk in data.chunks(EVAL_BATCH) {
        let samples: Vec<&PatchSample> = chunk.iter().collect();
        let (x, y) = batch_tensors::<T>(&samples, patch_size);
        let pred = net.predict(&x)?;
        for (p, t) in pred.data().iter().zip(y.data()) {
            let d = p.as_f64() - t.as_f64();
            sum += d * d;
        }
        n += y.len();
    }
    Ok(sum / n.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub snap: String,
    pub regmse: f64,
    pub value: f64,
    pub failed: bool,
    pub train_seed: u64,
    pub epochs: usize,
    pub wall_time_s: f64,
}

/// Trains the search-scale network for `snap` on the training split and
/// scores it on the online-validation split. Divergence yields a failed
/// result with [`FAILED_VALUE`] rather than an error.
pub fn evaluate_candidate<T: Scalar>(
    snap: &SnapSequence,
    data: &Dataset,
    macro_cfg: &MacroConfig,
    train: &TrainConfig,
) -> Result<CandidateResult, NetError> {
    let start = Instant::now();
    let size = data.cfg.patch.size;
    let spec = NetworkSpec::from_snap(snap, &macro_cfg.with_input_size(size))?;
    let mut total = 0.0;
    let mut failed = false;
    for r in 0..train.repeats.max(1) {
        let seed = derive_seed(train.seed, TAG_REPEAT, r as u64);
        let mut net = SnapNet::<T>::instantiate(&spec, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_INIT, 0)));
        let cfg = TrainConfig { seed, ..*train };
        let outcome = train_network(&mut net, &data.train, size, &cfg).and_then(|_| regmse(&mut net, &data.val, size));
        match outcome {
            Ok(m) if m.is_finite() => total += m,
            Ok(_) | Err(TensorError::NonFiniteGradient(_)) => {
                failed = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let regmse = if failed {
        1.0 / REGMSE_FLOOR
    } else {
        total / train.repeats.max(1) as f64
    };
    Ok(CandidateResult {
        snap: snap.render(),
        regmse,
        value: if failed { FAILED_VALUE } else { value_from_regmse(regmse) },
        failed,
        train_seed: train.seed,
        epochs: train.epochs,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs the crop → predict → reconstruct loop on many scenes at once.
/// `predict` maps a batch of patches to landmark sets in the same order.
pub fn iterate_scenes<F>(
    scenes: &[SceneSample],
    patch: PatchSpec,
    iterations: usize,
    mut predict: F,
) -> Result<Vec<Pose>, PoseError>
where
    F: FnMut(&[Vec<f64>]) -> Vec<LandmarkSet>,
{
    let mut estimates: Vec<Pose> = scenes.iter().map(|s| s.estimate).collect();
    for _ in 0..iterations {
        let patches: Vec<Vec<f64>> = scenes
            .iter()
            .zip(&estimates)
            .map(|(s, e)| crop(&s.image, e, patch))
            .collect();
        let lms = predict(&patches);
        for (e, lm) in estimates.iter_mut().zip(&lms) {
            *e = reconstruct_pose(lm, &PatchFrame::at(e))?.clamped();
        }
    }
    Ok(estimates)
}

/// Iterative pose refinement of one scene starting from its initial estimate.
pub fn iterative_predict<F>(
    predict: F,
    scene: &SceneSample,
    patch: PatchSpec,
    iterations: usize,
) -> Result<Pose, PoseError>
where
    F: FnMut(&[Vec<f64>]) -> Vec<LandmarkSet>,
{
    Ok(iterate_scenes(std::slice::from_ref(scene), patch, iterations, predict)?[0])
}

fn network_predictor<T: Scalar>(net: &mut SnapNet<T>, size: usize) -> impl FnMut(&[Vec<f64>]) -> Vec<LandmarkSet> + '_ {
    move |patches: &[Vec<f64>]| {
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(EVAL_BATCH) {
            let data: Vec<T> = chunk.iter().flatten().map(|v| T::from_f64_lossy(*v)).collect();
            let x = Tensor::new(vec![chunk.len(), 1, size, size], data).expect("patch size");
            let y = net.predict(&x).expect("network shapes are fixed at assembly");
            for row in y.data().chunks(12) {
                let v: Vec<f64> = row.iter().map(|t| t.as_f64()).collect();
                out.push(LandmarkSet::from_flat(&v));
            }
        }
        out
    }
}

/// Mean ± std and median of position (mm) and angle (degree) errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    pub iterations: usize,
    pub n: usize,
    pub position_mm_mean: f64,
    pub position_mm_std: f64,
    pub position_mm_median: f64,
    pub angle_deg_mean: f64,
    pub angle_deg_std: f64,
    pub angle_deg_median: f64,
}

fn mean_std_median(v: &mut [f64]) -> (f64, f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    v.sort_by(f64::total_cmp);
    let median = if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 1 {
        v[v.len() / 2]
    } else {
        0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
    };
    (mean, std, median)
}

impl PoseMetrics {
    pub fn from_errors(iterations: usize, errors: &[(f64, f64)]) -> Self {
        let mut pos: Vec<f64> = errors.iter().map(|e| e.0).collect();
        let mut ang: Vec<f64> = errors.iter().map(|e| e.1).collect();
        let (pm, ps, pmed) = mean_std_median(&mut pos);
        let (am, asd, amed) = mean_std_median(&mut ang);
        Self {
            iterations,
            n: errors.len(),
            position_mm_mean: pm,
            position_mm_std: ps,
            position_mm_median: pmed,
            angle_deg_mean: am,
            angle_deg_std: asd,
            angle_deg_median: amed,
        }
    }
}

/// Pose errors of a trained network on test scenes after `iterations` rounds.
pub fn evaluate_pose<T: Scalar>(
    net: &mut SnapNet<T>,
    scenes: &[SceneSample],
    patch: PatchSpec,
    iterations: usize,
) -> Result<PoseMetrics, PoseError> {
    let poses = iterate_scenes(scenes, patch, iterations, network_predictor(net, patch.size))?;
    let errors: Vec<(f64, f64)> = poses.iter().zip(scenes).map(|(p, s)| pose_error(p, &s.truth)).collect();
    Ok(PoseMetrics::from_errors(iterations, &errors))
}
