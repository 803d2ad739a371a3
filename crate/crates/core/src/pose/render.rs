//! Procedural scene renderer and patch extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Pose, PoseError, HEAD_RADIUS, MARGIN, SCENE_SIZE, SCREW_WIDTH, WINDOW};

pub const PIXEL_NOISE: f64 = 0.03;
pub const BRIGHTNESS_JITTER: f64 = 0.1;
pub const SCREW_LEVEL: f64 = 0.85;
pub const BACKGROUND_RANGE: (f64, f64) = (0.15, 0.45);
/// Maximum offset of the initial estimate from the truth, per axis.
pub const ESTIMATE_SHIFT: f64 = 3.0;
pub const ESTIMATE_ROTATION: f64 = 15.0;

const NOISE_CELL: usize = 16;
const COVERAGE_SAMPLES: usize = 4;

/// A rendered scene with its ground truth and a perturbed initial estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    /// Row-major `SCENE_SIZE x SCENE_SIZE` intensities in `[0, 1]`.
    pub image: Vec<f64>,
    pub truth: Pose,
    pub estimate: Pose,
    pub seed: u64,
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated random lattice, values in `BACKGROUND_RANGE`.
fn value_noise<R: Rng>(rng: &mut R) -> Vec<f64> {
    let cells = SCENE_SIZE / NOISE_CELL + 1;
    let (lo, hi) = BACKGROUND_RANGE;
    let lattice: Vec<f64> = (0..cells * cells).map(|_| rng.random_range(lo..hi)).collect();
    let mut out = vec![0.0; SCENE_SIZE * SCENE_SIZE];
    for y in 0..SCENE_SIZE {
        let gy = y / NOISE_CELL;
        let ty = smooth((y % NOISE_CELL) as f64 / NOISE_CELL as f64);
        for x in 0..SCENE_SIZE {
            let gx = x / NOISE_CELL;
            let tx = smooth((x % NOISE_CELL) as f64 / NOISE_CELL as f64);
            let l = |i: usize, j: usize| lattice[i * cells + j];
            let top = l(gy, gx) * (1.0 - tx) + l(gy, gx + 1) * tx;
            let bottom = l(gy + 1, gx) * (1.0 - tx) + l(gy + 1, gx + 1) * tx;
            out[y * SCENE_SIZE + x] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / (abx * abx + aby * aby)).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + t * abx, a.1 + t * aby);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Fraction of each pixel covered by the screw shaft or head disc,
/// estimated on a regular sub-pixel grid.
pub fn screw_coverage(pose: &Pose) -> Vec<f64> {
    let tip = pose.tip();
    let head = pose.head();
    let mut cov = vec![0.0; SCENE_SIZE * SCENE_SIZE];
    let reach = super::SCREW_LENGTH / 2.0 + HEAD_RADIUS + 1.0;
    let lo_x = ((pose.x - reach).floor().max(0.0)) as usize;
    let hi_x = ((pose.x + reach).ceil().min(SCENE_SIZE as f64)) as usize;
    let lo_y = ((pose.y - reach).floor().max(0.0)) as usize;
    let hi_y = ((pose.y + reach).ceil().min(SCENE_SIZE as f64)) as usize;
    let n = COVERAGE_SAMPLES;
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let mut hits = 0;
            for sy in 0..n {
                for sx in 0..n {
                    let p = (x as f64 + (sx as f64 + 0.5) / n as f64, y as f64 + (sy as f64 + 0.5) / n as f64);
                    let shaft = segment_distance(p, head, tip) <= SCREW_WIDTH / 2.0;
                    let disc = ((p.0 - head.0).powi(2) + (p.1 - head.1).powi(2)).sqrt() <= HEAD_RADIUS;
                    if shaft || disc {
                        hits += 1;
                    }
                }
            }
            cov[y * SCENE_SIZE + x] = hits as f64 / (n * n) as f64;
        }
    }
    cov
}

/// Renders `pose` over a value-noise background with brightness jitter and
/// Gaussian pixel noise, and draws a perturbed initial estimate.
pub fn render_scene(pose: &Pose, seed: u64) -> Result<SceneSample, PoseError> {
    let hi = SCENE_SIZE as f64 - MARGIN;
    if !(MARGIN..=hi).contains(&pose.x) || !(MARGIN..=hi).contains(&pose.y) {
        return Err(PoseError::OutOfBounds(pose.x, pose.y));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = value_noise(&mut rng);
    let coverage = screw_coverage(pose);
    let gain = 1.0 + rng.random_range(-BRIGHTNESS_JITTER..=BRIGHTNESS_JITTER);
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("positive sigma");
    let image = background
        .iter()
        .zip(&coverage)
        .map(|(b, c)| ((b * (1.0 - c) + SCREW_LEVEL * c) * gain + noise.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    let estimate = Pose::new(
        pose.x + rng.random_range(-ESTIMATE_SHIFT..=ESTIMATE_SHIFT),
        pose.y + rng.random_range(-ESTIMATE_SHIFT..=ESTIMATE_SHIFT),
        pose.angle_deg + rng.random_range(-ESTIMATE_ROTATION..=ESTIMATE_ROTATION),
    );
    Ok(SceneSample {
        image,
        truth: *pose,
        estimate,
        seed,
    })
}

/// Resolution of extracted patches. The window always spans `WINDOW` scene
/// pixels; each of the `size x size` outputs averages `supersample²`
/// bilinear samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    pub supersample: usize,
}

impl PatchSpec {
    /// Full-resolution 32x32 patches.
    pub fn full() -> Self {
        Self {
            size: 32,
            supersample: 1,
        }
    }

    /// 16x16 patches, each output pixel the mean of a 2x2 pixel block.
    pub fn half() -> Self {
        Self {
            size: 16,
            supersample: 2,
        }
    }
}

/// Bilinear sample at continuous scene coordinates (pixel `(i, j)` has its
/// center at `(j + 0.5, i + 0.5)`); pixels outside the scene read as zero.
pub fn bilinear(image: &[f64], x: f64, y: f64) -> f64 {
    let u = x - 0.5;
    let v = y - 0.5;
    let j0 = u.floor();
    let i0 = v.floor();
    let (fu, fv) = (u - j0, v - i0);
    let px = |i: f64, j: f64| -> f64 {
        if i < 0.0 || j < 0.0 || i >= SCENE_SIZE as f64 || j >= SCENE_SIZE as f64 {
            0.0
        } else {
            image[i as usize * SCENE_SIZE + j as usize]
        }
    };
    let top = px(i0, j0) * (1.0 - fu) + px(i0, j0 + 1.0) * fu;
    let bottom = px(i0 + 1.0, j0) * (1.0 - fu) + px(i0 + 1.0, j0 + 1.0) * fu;
    top * (1.0 - fv) + bottom * fv
}

/// Axis-aligned window of `WINDOW` pixels centered on the estimate's position.
pub fn crop(image: &[f64], estimate: &Pose, spec: PatchSpec) -> Vec<f64> {
    let cell = WINDOW / spec.size as f64;
    let s = spec.supersample;
    let x0 = estimate.x - WINDOW / 2.0;
    let y0 = estimate.y - WINDOW / 2.0;
    let mut out = vec![0.0; spec.size * spec.size];
    for r in 0..spec.size {
        for c in 0..spec.size {
            let mut acc = 0.0;
            for sy in 0..s {
                for sx in 0..s {
                    let x = x0 + (c as f64 + (sx as f64 + 0.5) / s as f64) * cell;
                    let y = y0 + (r as f64 + (sy as f64 + 0.5) / s as f64) * cell;
                    acc += bilinear(image, x, y);
                }
            }
            out[r * spec.size + c] = acc / (s * s) as f64;
        }
    }
    out
}

/// Binary 8-bit PGM of a row-major image in `[0, 1]`.
pub fn to_pgm(image: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(image.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_image() {
        let p = Pose::new(32.0, 30.0, 40.0);
        assert_eq!(render_scene(&p, 9).unwrap(), render_scene(&p, 9).unwrap());
        assert_ne!(render_scene(&p, 9).unwrap().image, render_scene(&p, 10).unwrap().image);
    }

    #[test]
    fn out_of_bounds_pose_is_rejected() {
        assert!(matches!(
            render_scene(&Pose::new(2.0, 32.0, 0.0), 0),
            Err(PoseError::OutOfBounds(..))
        ));
    }

    #[test]
    fn estimate_stays_near_truth() {
        for seed in 0..200 {
            let s = render_scene(&Pose::new(30.0, 34.0, 350.0), seed).unwrap();
            assert!((s.estimate.x - 30.0).abs() <= 3.0 && (s.estimate.y - 34.0).abs() <= 3.0);
            let (_, da) = super::super::pose_error(&s.estimate, &s.truth);
            assert!(da <= 15.0 + 1e-9);
        }
    }

    #[test]
    fn central_crop_is_central_window() {
        let s = render_scene(&Pose::new(32.0, 32.0, 10.0), 1).unwrap();
        let patch = crop(&s.image, &Pose::new(32.0, 32.0, 0.0), PatchSpec::full());
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(patch[r * 32 + c], s.image[(r + 16) * SCENE_SIZE + c + 16]);
            }
        }
    }

    #[test]
    fn corner_crop_is_zero_padded() {
        let image = vec![1.0; SCENE_SIZE * SCENE_SIZE];
        let patch = crop(&image, &Pose::new(0.0, 0.0, 0.0), PatchSpec::full());
        for r in 0..32 {
            for c in 0..32 {
                let expect = if r >= 16 && c >= 16 { 1.0 } else { 0.0 };
                assert_eq!(patch[r * 32 + c], expect, "({r}, {c})");
            }
        }
    }

    #[test]
    fn half_resolution_crop_averages_pixel_blocks() {
        let s = render_scene(&Pose::new(32.0, 32.0, 10.0), 2).unwrap();
        let patch = crop(&s.image, &Pose::new(32.0, 32.0, 0.0), PatchSpec::half());
        let px = |r: usize, c: usize| s.image[(r + 16) * SCENE_SIZE + c + 16];
        let expect = (px(0, 0) + px(0, 1) + px(1, 0) + px(1, 1)) / 4.0;
        assert!((patch[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn pgm_header() {
        let pgm = to_pgm(&[0.0, 1.0], 2, 1);
        assert_eq!(&pgm[..11], b"P5\n2 1\n255\n");
        assert_eq!(&pgm[11..], &[0, 255]);
    }
}
