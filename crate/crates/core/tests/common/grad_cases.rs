//! Randomized finite-difference cases covering every differentiable op.

use autosnap::nn::{dense, recurrent_step, Activation};
use autosnap::tensor::{grad_check, BnMode, ConvMode, GradCheckReport, Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
pub const TOL_BATCH_STATS: f64 = 1e-3;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks are not straddled by the
/// finite-difference stencil.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contract an arbitrary node to a scalar with fixed random weights.
fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(x).to_vec();
    let w = g.input(rand_t(&mut rng, &shape));
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

pub struct GradCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

pub fn gradient_cases() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = Vec::new();
    let mut push = |name, report: Result<GradCheckReport, TensorError>| {
        cases.push(GradCase { name, report: report.expect(name) });
    };

    // dense + tanh + mse
    let x = rand_t(&mut rng, &[3, 4]);
    let w = rand_t(&mut rng, &[5, 4]);
    let b = rand_t(&mut rng, &[5]);
    let target = rand_t(&mut rng, &[3, 5]);
    push(
        "dense_tanh_mse",
        grad_check(&[x, w, b], |g, v| {
            let y = dense(g, v[0], v[1], v[2], Activation::Tanh)?;
            g.mse(y, &target)
        }, TOL),
    );

    // sigmoid, relu, sub, scale, mean
    let a = rand_away_from_zero(&mut rng, &[2, 6]);
    let c = rand_t(&mut rng, &[2, 6]);
    push(
        "elementwise",
        grad_check(&[a, c], |g, v| {
            let s = g.sigmoid(v[0]);
            let r = g.relu(v[0]);
            let d = g.sub(s, v[1])?;
            let e = g.mul(d, r)?;
            let f = g.scale(e, 1.7);
            let m = g.mean(f);
            let t = g.tanh(v[1]);
            let tt = weighted_sum(g, t, 5)?;
            g.add(m, tt)
        }, TOL),
    );

    // softmax + probability cross-entropy
    let logits = rand_t(&mut rng, &[4, 10]);
    let mut onehot = vec![0.0; 40];
    for r in 0..4 {
        onehot[r * 10 + (r * 3) % 10] = 1.0;
    }
    let onehot = Tensor::from_f64(&[4, 10], &onehot).unwrap();
    push(
        "softmax_cross_entropy",
        grad_check(&[logits.clone()], |g, v| {
            let p = g.softmax(v[0]);
            g.cross_entropy(p, &onehot)
        }, TOL),
    );

    push(
        "masked_softmax_ce",
        grad_check(&[logits], |g, v| {
            g.masked_softmax_ce(v[0], &[1, 8, 3, 0], &[true, true, false, true], &[9])
        }, TOL),
    );

    // concat / narrow / stack / reshape
    let p = rand_t(&mut rng, &[2, 3, 2]);
    let q = rand_t(&mut rng, &[2, 1, 2]);
    push(
        "concat_narrow_stack",
        grad_check(&[p, q], |g, v| {
            let c = g.concat(&[v[0], v[1]], 1)?;
            let n = g.narrow(c, 1, 1, 3)?;
            let s = g.stack(&[n, n], 0)?;
            let r = g.reshape(s, &[24])?;
            weighted_sum(g, r, 7)
        }, TOL),
    );

    // randomized conv2d + relu + dense + mse
    let img = rand_t(&mut rng, &[2, 3, 5, 5]);
    let k3 = rand_t(&mut rng, &[4, 3, 3, 3]);
    let kb = rand_t(&mut rng, &[4]);
    let dw = rand_t(&mut rng, &[4, 4]);
    let db = rand_t(&mut rng, &[4]);
    let tgt = rand_t(&mut rng, &[2, 4]);
    push(
        "conv3_relu_dense_mse",
        grad_check(&[img.clone(), k3, kb, dw, db], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), ConvMode::Standard)?;
            let y = g.relu(y);
            let y = g.global_avg_pool(y)?;
            let y = dense(g, y, v[3], v[4], Activation::None)?;
            g.mse(y, &tgt)
        }, TOL),
    );

    let k1 = rand_t(&mut rng, &[2, 3, 1, 1]);
    push(
        "conv1",
        grad_check(&[img.clone(), k1], |g, v| {
            let y = g.conv2d(v[0], v[1], None, ConvMode::Standard)?;
            weighted_sum(g, y, 11)
        }, TOL),
    );

    let kd = rand_t(&mut rng, &[3, 1, 3, 3]);
    let kdb = rand_t(&mut rng, &[3]);
    push(
        "depthwise",
        grad_check(&[img.clone(), kd.clone(), kdb], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), ConvMode::Depthwise)?;
            weighted_sum(g, y, 13)
        }, TOL),
    );

    let kp = rand_t(&mut rng, &[4, 3, 1, 1]);
    push(
        "depthwise_separable",
        grad_check(&[img.clone(), kd, kp], |g, v| {
            let y = g.conv2d_separable(v[0], v[1], v[2], None)?;
            weighted_sum(g, y, 17)
        }, TOL),
    );

    for stride in [1usize, 2] {
        push(
            if stride == 1 { "maxpool3_stride1" } else { "maxpool3_stride2" },
            grad_check(&[img.clone()], move |g, v| {
                let y = g.maxpool3(v[0], stride)?;
                weighted_sum(g, y, 19)
            }, TOL),
        );
    }

    let gamma = rand_t(&mut rng, &[3]);
    let beta = rand_t(&mut rng, &[3]);
    push(
        "batchnorm_relu_train",
        grad_check(&[img.clone(), gamma.clone(), beta.clone()], |g, v| {
            let bn = g.batchnorm(v[0], v[1], v[2], BnMode::Train)?;
            let y = g.relu(bn.out);
            weighted_sum(g, y, 23)
        }, TOL_BATCH_STATS),
    );

    let rm = [0.1, -0.2, 0.05];
    let rv = [0.9, 1.3, 0.7];
    push(
        "batchnorm_eval",
        grad_check(&[img, gamma, beta], |g, v| {
            let bn = g.batchnorm(v[0], v[1], v[2], BnMode::Eval { mean: &rm, var: &rv })?;
            weighted_sum(g, bn.out, 29)
        }, TOL),
    );

    // one recurrent step, every parameter and both state inputs
    let (d, u) = (3, 4);
    let xr = rand_t(&mut rng, &[2, d]);
    let h = rand_t(&mut rng, &[2, u]);
    let c = rand_t(&mut rng, &[2, u]);
    let wx = rand_t(&mut rng, &[4 * u, d]);
    let wh = rand_t(&mut rng, &[4 * u, u]);
    let bb = rand_t(&mut rng, &[4 * u]);
    push(
        "recurrent_step",
        grad_check(&[xr, h, c, wx, wh, bb], |g, v| {
            let (h2, c2) = recurrent_step(g, v[0], v[1], v[2], v[3], v[4], v[5])?;
            let a = weighted_sum(g, h2, 31)?;
            let b = weighted_sum(g, c2, 37)?;
            g.add(a, b)
        }, TOL),
    );

    cases
}
