//! Layer building blocks composed from graph ops.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::{BnMode, Graph, ParamId, ParamSet, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Tanh,
    Relu,
    Softmax,
}

/// Affine transform `x W^T + b` followed by `act`.
pub fn dense<T: Scalar>(g: &mut Graph<T>, x: Var, weights: Var, bias: Var, act: Activation) -> Result<Var, TensorError> {
    let y = g.linear(x, weights, bias)?;
    Ok(match act {
        Activation::None => y,
        Activation::Tanh => g.tanh(y),
        Activation::Relu => g.relu(y),
        Activation::Softmax => g.softmax(y),
    })
}

/// He-uniform initializer: U(−sqrt(6/fan_in), +sqrt(6/fan_in)).
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Parameters of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseParams {
    pub weights: ParamId,
    pub bias: ParamId,
}

impl DenseParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let weights = params.add(format!("{name}.w"), he_uniform(rng, &[outputs, inputs], inputs));
        let bias = params.add(format!("{name}.b"), Tensor::zeros(&[outputs]));
        Self { weights, bias }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var, act: Activation) -> Result<Var, TensorError> {
        dense(g, x, vars[self.weights.0], vars[self.bias.0], act)
    }
}

/// Parameters of one LSTM direction: input weights `[4U, D]`, recurrent
/// weights `[4U, U]`, bias `[4U]`; gate order (input, forget, candidate, output).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub units: usize,
}

impl LstmParams {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        inputs: usize,
        units: usize,
    ) -> Self {
        let bound = 1.0 / (units as f64).sqrt();
        let input_weights = params.add(format!("{name}.wx"), uniform(rng, &[4 * units, inputs], bound));
        let recurrent_weights = params.add(format!("{name}.wh"), uniform(rng, &[4 * units, units], bound));
        // forget-gate bias starts at 1 so early gradients survive the unroll
        let mut b = vec![0.0; 4 * units];
        b[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
        let bias = params.add(format!("{name}.b"), Tensor::from_f64(&[4 * units], &b).expect("shape"));
        Self {
            input_weights,
            recurrent_weights,
            bias,
            inputs,
            units,
        }
    }
}

/// One gated recurrent update on a batch: `x [B, D]`, `h, c [B, U]`.
pub fn recurrent_step<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    h: Var,
    c: Var,
    input_weights: Var,
    recurrent_weights: Var,
    bias: Var,
) -> Result<(Var, Var), TensorError> {
    let xi = g.linear(x, input_weights, bias)?;
    let hh = g.matmul(h, recurrent_weights, true)?;
    let gates = g.add(xi, hh)?;
    let c2 = g.lstm_cell(gates, c)?;
    let h2 = g.lstm_hidden(gates, c2)?;
    Ok((h2, c2))
}

/// Runs an LSTM over `xs [B, T, D]` and returns hidden states `[B, T, U]`
/// (in input time order) plus the final `(h, c)`. The input projection for
/// all time steps is computed in a single matrix product.
pub fn lstm_sequence<T: Scalar>(
    g: &mut Graph<T>,
    vars: &[Var],
    p: &LstmParams,
    xs: Var,
    init: Option<(Var, Var)>,
    reverse: bool,
) -> Result<(Var, Var, Var), TensorError> {
    let s = g.shape(xs).to_vec();
    if s.len() != 3 || s[2] != p.inputs {
        return Err(crate::tensor::TensorError::Shape(format!(
            "lstm expects [B, T, {}], got {s:?}",
            p.inputs
        )));
    }
    let (b, t, d) = (s[0], s[1], s[2]);
    let u = p.units;
    let flat = g.reshape(xs, &[b * t, d])?;
    let proj = g.linear(flat, vars[p.input_weights.0], vars[p.bias.0])?;
    let proj = g.reshape(proj, &[b, t, 4 * u])?;
    let (mut h, mut c) = match init {
        Some(hc) => hc,
        None => (g.input(Tensor::zeros(&[b, u])), g.input(Tensor::zeros(&[b, u]))),
    };
    let mut outputs = vec![h; t];
    let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
    for step in order {
        let xi = g.narrow(proj, 1, step, 1)?;
        let xi = g.reshape(xi, &[b, 4 * u])?;
        let hh = g.matmul(h, vars[p.recurrent_weights.0], true)?;
        let gates = g.add(xi, hh)?;
        c = g.lstm_cell(gates, c)?;
        h = g.lstm_hidden(gates, c)?;
        outputs[step] = h;
    }
    let hs = g.stack(&outputs, 1)?;
    Ok((hs, h, c))
}

/// Bidirectional LSTM: forward and backward passes with independent
/// parameters, outputs concatenated to `[B, T, 2U]`. Also returns the final
/// forward state and the final (time-0) backward state.
pub fn bilstm<T: Scalar>(
    g: &mut Graph<T>,
    vars: &[Var],
    fwd: &LstmParams,
    bwd: &LstmParams,
    xs: Var,
) -> Result<(Var, Var, Var), TensorError> {
    let (hf, last_f, _) = lstm_sequence(g, vars, fwd, xs, None, false)?;
    let (hb, last_b, _) = lstm_sequence(g, vars, bwd, xs, None, true)?;
    let out = g.concat(&[hf, hb], 2)?;
    Ok((out, last_f, last_b))
}

/// Running statistics plus trainable affine parameters of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

pub const BN_MOMENTUM: f64 = 0.9;

impl<T: Scalar> BatchNormState<T> {
    pub fn new(params: &mut ParamSet<T>, name: &str, channels: usize) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()));
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        Self {
            gamma,
            beta,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    /// Exponential moving average: `new = momentum·old + (1 − momentum)·batch`.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], momentum: f64) {
        let m = T::from_f64_lossy(momentum);
        let one_m = T::one() - m;
        for (r, b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = m * *r + one_m * *b;
        }
        for (r, b) in self.running_var.iter_mut().zip(batch_var) {
            *r = m * *r + one_m * *b;
        }
    }

    /// Batch norm followed by ReLU. In training mode the running statistics
    /// are updated from the batch.
    pub fn apply_relu(&mut self, g: &mut Graph<T>, vars: &[Var], x: Var, train: bool) -> Result<Var, TensorError> {
        let mode = if train {
            BnMode::Train
        } else {
            BnMode::Eval {
                mean: &self.running_mean,
                var: &self.running_var,
            }
        };
        let out = g.batchnorm(x, vars[self.gamma.0], vars[self.beta.0], mode)?;
        if train {
            self.update(&out.batch_mean, &out.batch_var, BN_MOMENTUM);
        }
        Ok(g.relu(out.out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ema_update_formula() {
        let mut p = ParamSet::<f64>::new();
        let mut bn = BatchNormState::new(&mut p, "bn", 1);
        bn.running_mean = vec![0.0];
        bn.update(&[1.0], &[1.0], 0.9);
        assert!((bn.running_mean[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn dense_zero_weights_tanh_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[1, 3], &[1.0, -2.0, 0.5]).unwrap());
        let w = g.param(Tensor::zeros(&[4, 3]));
        let b = g.param(Tensor::zeros(&[4]));
        let y = dense(&mut g, x, w, b, Activation::Tanh).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn sequence_runner_matches_stepwise_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::<f64>::new();
        let lp = LstmParams::new(&mut params, &mut rng, "l", 3, 4);
        let xs = uniform::<f64, _>(&mut rng, &[2, 5, 3], 1.0);
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let x = g.input(xs.clone());
        let (hs, _, _) = lstm_sequence(&mut g, &vars, &lp, x, None, false).unwrap();
        let mut h = g.input(Tensor::zeros(&[2, 4]));
        let mut c = g.input(Tensor::zeros(&[2, 4]));
        for t in 0..5 {
            let xt = g.narrow(x, 1, t, 1).unwrap();
            let xt = g.reshape(xt, &[2, 3]).unwrap();
            let (h2, c2) = recurrent_step(
                &mut g,
                xt,
                h,
                c,
                vars[lp.input_weights.0],
                vars[lp.recurrent_weights.0],
                vars[lp.bias.0],
            )
            .unwrap();
            h = h2;
            c = c2;
        }
        let last = g.narrow(hs, 1, 4, 1).unwrap();
        for (a, b) in g.value(last).data().iter().zip(g.value(h).data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn bidirectional_output_is_twice_the_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::<f64>::new();
        let f = LstmParams::new(&mut params, &mut rng, "f", 2, 3);
        let b = LstmParams::new(&mut params, &mut rng, "b", 2, 3);
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let x = g.input(Tensor::zeros(&[1, 1, 2]));
        let (out, _, _) = bilstm(&mut g, &vars, &f, &b, x).unwrap();
        assert_eq!(g.shape(out), &[1, 1, 6]);
    }
}
