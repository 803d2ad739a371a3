//! Seeded surrogate datasets with base-pose-level splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{crop, render_scene, PatchSpec, SceneSample};
use super::{derive_seed, virtual_landmarks, PatchFrame, Pose, PoseError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Screw centers are drawn uniformly from this square (scene pixels).
pub const POSITION_RANGE: (f64, f64) = (20.0, 44.0);

const TAG_BASE: u64 = 1;
const TAG_RENDER: u64 = 2;
const TAG_SPLIT: u64 = 3;
const TAG_TEST: u64 = 4;
const TAG_TEST_RENDER: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Base poses split 70/10/20 into train / online validation / selection.
    pub n_train: usize,
    /// Separate test scenes for pose evaluation.
    pub n_eval: usize,
    /// Rendered copies per base pose (fresh noise and initial estimate each).
    pub augment_fold: usize,
    pub seed: u64,
    pub patch: PatchSpec,
}

impl EnvConfig {
    pub fn paper() -> Self {
        Self {
            n_train: 10_000,
            n_eval: 500,
            augment_fold: 20,
            seed: 0,
            patch: PatchSpec::full(),
        }
    }

    pub fn desk() -> Self {
        Self {
            n_train: 2_000,
            n_eval: 500,
            augment_fold: 4,
            seed: 0,
            patch: PatchSpec::full(),
        }
    }

    /// Single-core search environment: no static augmentation, 16x16 patches.
    pub fn micro() -> Self {
        Self {
            n_train: 2_000,
            n_eval: 200,
            augment_fold: 1,
            seed: 0,
            patch: PatchSpec::half(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// (train, validation, selection) base counts.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let train = self.n_train * 7 / 10;
        let val = self.n_train / 10;
        (train, val, self.n_train - train - val)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub patch: Vec<f64>,
    pub target: [f64; 12],
    pub base: usize,
    pub truth: Pose,
    pub estimate: Pose,
}

pub type TestScene = SceneSample;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cfg: EnvConfig,
    pub train: Vec<PatchSample>,
    pub val: Vec<PatchSample>,
    pub select: Vec<PatchSample>,
    pub test: Vec<TestScene>,
}

fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let (lo, hi) = POSITION_RANGE;
    Pose::new(
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
        rng.random_range(0.0..360.0),
    )
}

fn base_pose(seed: u64, tag: u64, index: usize) -> Pose {
    random_pose(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index as u64)))
}

/// Crop around the scene's initial estimate plus the landmark target in
/// that crop's frame.
pub fn patch_sample(scene: &SceneSample, patch: PatchSpec, base: usize) -> PatchSample {
    PatchSample {
        patch: crop(&scene.image, &scene.estimate, patch),
        target: virtual_landmarks(&scene.truth, &PatchFrame::at(&scene.estimate)).flatten(),
        base,
        truth: scene.truth,
        estimate: scene.estimate,
    }
}

pub fn build_dataset(cfg: &EnvConfig) -> Result<Dataset, PoseError> {
    if cfg.n_train < 10 || cfg.augment_fold == 0 || cfg.patch.size == 0 || cfg.patch.supersample == 0 {
        return Err(PoseError::Config(format!(
            "need n_train >= 10 and positive augment_fold / patch size, got {cfg:?}"
        )));
    }
    let mut order: Vec<usize> = (0..cfg.n_train).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_SPLIT, 0)));
    let (n_tr, n_val, _) = cfg.split_sizes();
    let render = |bases: &[usize]| -> Result<Vec<PatchSample>, PoseError> {
        let mut out = Vec::with_capacity(bases.len() * cfg.augment_fold);
        for &b in bases {
            let pose = base_pose(cfg.seed, TAG_BASE, b);
            for k in 0..cfg.augment_fold {
                let seed = derive_seed(cfg.seed, TAG_RENDER, (b * cfg.augment_fold + k) as u64);
                out.push(patch_sample(&render_scene(&pose, seed)?, cfg.patch, b));
            }
        }
        Ok(out)
    };
    let train = render(&order[..n_tr])?;
    let val = render(&order[n_tr..n_tr + n_val])?;
    let select = render(&order[n_tr + n_val..])?;
    let test = (0..cfg.n_eval)
        .map(|i| {
            render_scene(
                &base_pose(cfg.seed, TAG_TEST, i),
                derive_seed(cfg.seed, TAG_TEST_RENDER, i as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        cfg: *cfg,
        train,
        val,
        select,
        test,
    })
}

/// Stacks patches into `[B, 1, S, S]` and targets into `[B, 12]`.
pub fn batch_tensors<T: Scalar>(samples: &[&PatchSample], size: usize) -> (Tensor<T>, Tensor<T>) {
    let b = samples.len();
    let mut x = Vec::with_capacity(b * size * size);
    let mut y = Vec::with_capacity(b * 12);
    for s in samples {
        x.extend(s.patch.iter().map(|v| T::from_f64_lossy(*v)));
        y.extend(s.target.iter().map(|v| T::from_f64_lossy(*v)));
    }
    (
        Tensor::new(vec![b, 1, size, size], x).expect("patch size"),
        Tensor::new(vec![b, 12], y).expect("target size"),
    )
}
