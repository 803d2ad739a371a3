//! Surrogate pose-estimation environment: a procedural screw renderer,
//! six virtual landmarks, crop/reconstruct geometry and candidate training.

mod dataset;
mod render;
mod train;

pub use dataset::{build_dataset, Dataset, EnvConfig, PatchSample, TestScene, POSITION_RANGE};
pub use render::{crop, render_scene, to_pgm, PatchSpec, SceneSample};
pub use train::{
    evaluate_candidate, evaluate_pose, iterative_predict, regmse, train_network, value_from_regmse, CandidateResult,
    PoseMetrics, TrainConfig, TrainOutcome, FAILED_VALUE, REGMSE_FLOOR,
};

use serde::{Deserialize, Serialize};

/// Scene side length in pixels.
pub const SCENE_SIZE: usize = 64;
pub const MM_PER_PX: f64 = 0.25;
pub const SCREW_LENGTH: f64 = 20.0;
pub const SCREW_WIDTH: f64 = 2.0;
pub const HEAD_RADIUS: f64 = 3.0;
/// Offset of the two side landmarks from the axis.
pub const SIDE_OFFSET: f64 = 4.0;
/// Closest a screw center may come to the scene border.
pub const MARGIN: f64 = SCREW_LENGTH / 2.0 + HEAD_RADIUS;
/// Crop window side in scene pixels; landmarks are normalized by half of it.
pub const WINDOW: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    #[error("pose ({0:.2}, {1:.2}) outside the renderable area")]
    OutOfBounds(f64, f64),
    #[error("landmarks are degenerate; no axis can be fitted")]
    DegenerateLandmarks,
    #[error("bad environment config: {0}")]
    Config(String),
}

/// Position in scene pixels (x right, y down) and forward angle in degrees,
/// measured from the x-axis towards +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub angle_deg: f64,
}

pub fn normalize_angle(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, angle_deg: f64) -> Self {
        Self {
            x,
            y,
            angle_deg: normalize_angle(angle_deg),
        }
    }

    pub fn axis(&self) -> (f64, f64) {
        let t = self.angle_deg.to_radians();
        (t.cos(), t.sin())
    }

    pub fn tip(&self) -> (f64, f64) {
        let (ux, uy) = self.axis();
        (self.x + SCREW_LENGTH / 2.0 * ux, self.y + SCREW_LENGTH / 2.0 * uy)
    }

    pub fn head(&self) -> (f64, f64) {
        let (ux, uy) = self.axis();
        (self.x - SCREW_LENGTH / 2.0 * ux, self.y - SCREW_LENGTH / 2.0 * uy)
    }

    /// Position clamped into the scene.
    pub fn clamped(self) -> Self {
        let hi = SCENE_SIZE as f64;
        Self {
            x: self.x.clamp(0.0, hi),
            y: self.y.clamp(0.0, hi),
            angle_deg: self.angle_deg,
        }
    }
}

/// Maps scene pixels into a crop's normalized coordinates: the crop center
/// becomes the origin and the window edges become ±1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchFrame {
    pub cx: f64,
    pub cy: f64,
}

impl PatchFrame {
    pub const HALF: f64 = WINDOW / 2.0;

    pub fn at(pose: &Pose) -> Self {
        Self { cx: pose.x, cy: pose.y }
    }

    pub fn to_patch(&self, p: (f64, f64)) -> [f64; 2] {
        [(p.0 - self.cx) / Self::HALF, (p.1 - self.cy) / Self::HALF]
    }

    pub fn to_scene(&self, p: [f64; 2]) -> (f64, f64) {
        (self.cx + p[0] * Self::HALF, self.cy + p[1] * Self::HALF)
    }
}

/// Six points in patch-normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: [[f64; 2]; 6],
}

impl LandmarkSet {
    pub const TIP: usize = 0;
    pub const HEAD: usize = 1;
    pub const CENTER: usize = 2;
    pub const QUARTER: usize = 3;
    pub const SIDE_POS: usize = 4;
    pub const SIDE_NEG: usize = 5;
    pub const NAMES: [&'static str; 6] = ["tip", "head", "center", "quarter", "side_pos", "side_neg"];

    /// Row-major `[x0, y0, x1, y1, ...]`, the network's regression target.
    pub fn flatten(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p[0];
            out[2 * i + 1] = p[1];
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let mut points = [[0.0; 2]; 6];
        for (i, p) in points.iter_mut().enumerate() {
            *p = [v[2 * i], v[2 * i + 1]];
        }
        Self { points }
    }
}

/// Landmarks of `pose` expressed in `frame`.
pub fn virtual_landmarks(pose: &Pose, frame: &PatchFrame) -> LandmarkSet {
    let (ux, uy) = pose.axis();
    let (nx, ny) = (-uy, ux);
    let half = SCREW_LENGTH / 2.0;
    let at = |a: f64, b: f64| frame.to_patch((pose.x + a * ux + b * nx, pose.y + a * uy + b * ny));
    LandmarkSet {
        points: [
            at(half, 0.0),
            at(-half, 0.0),
            at(0.0, 0.0),
            at(half / 2.0, 0.0),
            at(0.0, SIDE_OFFSET),
            at(0.0, -SIDE_OFFSET),
        ],
    }
}

/// Fits the screw axis through tip, quarter, center and head (principal
/// direction of the point cloud), orients it from head to tip and places the
/// pose at the center landmark.
pub fn reconstruct_pose(lm: &LandmarkSet, frame: &PatchFrame) -> Result<Pose, PoseError> {
    let pts: Vec<(f64, f64)> = [LandmarkSet::TIP, LandmarkSet::QUARTER, LandmarkSet::CENTER, LandmarkSet::HEAD]
        .iter()
        .map(|i| frame.to_scene(lm.points[*i]))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx + syy < 1e-18 {
        return Err(PoseError::DegenerateLandmarks);
    }
    let phi = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (mut dx, mut dy) = (phi.cos(), phi.sin());
    let tip = pts[0];
    let head = pts[3];
    if (tip.0 - head.0) * dx + (tip.1 - head.1) * dy < 0.0 {
        dx = -dx;
        dy = -dy;
    }
    let (cx, cy) = frame.to_scene(lm.points[LandmarkSet::CENTER]);
    Ok(Pose::new(cx, cy, dy.atan2(dx).to_degrees()))
}

/// Position error in millimetres and absolute circular angle error in degrees.
pub fn pose_error(pred: &Pose, truth: &Pose) -> (f64, f64) {
    let d = ((pred.x - truth.x).powi(2) + (pred.y - truth.y).powi(2)).sqrt();
    let a = (pred.angle_deg - truth.angle_deg).rem_euclid(360.0);
    (d * MM_PER_PX, a.min(360.0 - a))
}

/// Mixes a base seed with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
