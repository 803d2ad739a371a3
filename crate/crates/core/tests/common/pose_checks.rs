use autosnap::pose::{pose_error, reconstruct_pose, virtual_landmarks, LandmarkSet, PatchFrame, Pose, SCENE_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_pose_and_frame(rng: &mut impl Rng) -> (Pose, PatchFrame) {
    let s = SCENE_SIZE as f64;
    let pose = Pose::new(rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(0.0..360.0));
    // crop centred near, but not on, the pose
    let frame = PatchFrame {
        cx: pose.x + rng.random_range(-6.0..6.0),
        cy: pose.y + rng.random_range(-6.0..6.0),
    };
    (pose, frame)
}

/// Worst position (px) and angle (deg) error of the noise-free round trip.
pub fn round_trip_max_error(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut ang) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let (pose, frame) = random_pose_and_frame(&mut rng);
        let back = reconstruct_pose(&virtual_landmarks(&pose, &frame), &frame).unwrap();
        let (mm, deg) = pose_error(&back, &pose);
        pos = pos.max(mm / autosnap::pose::MM_PER_PX);
        ang = ang.max(deg);
    }
    (pos, ang)
}

/// Median angle error (deg) with Gaussian noise of `sigma_px` scene pixels
/// added to every landmark coordinate.
pub fn noisy_median_angle_error(n: usize, sigma_px: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma_px / PatchFrame::HALF).unwrap();
    let mut errs: Vec<f64> = (0..n)
        .map(|_| {
            let (pose, frame) = random_pose_and_frame(&mut rng);
            let mut lm: LandmarkSet = virtual_landmarks(&pose, &frame);
            for p in lm.points.iter_mut() {
                p[0] += noise.sample(&mut rng);
                p[1] += noise.sample(&mut rng);
            }
            pose_error(&reconstruct_pose(&lm, &frame).unwrap(), &pose).1
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    errs[n / 2]
}
