//! Sequence autoencoder over SNAP programs with a linear value head.
//!
//! The encoder reads `(max_len + 1) x 10` probability rows through two
//! bidirectional LSTM layers and two dense layers into a tanh-bounded latent
//! vector. The decoder maps a latent vector to initial states of a two-layer
//! LSTM that is fed the latent vector and the previous symbol row at every
//! step and emits one softmax row per step. Training minimizes reconstruction cross-entropy, value
//! regression error and the latent cycle error `|E(D(z)) - z|²` jointly.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::nn::{bilstm, recurrent_step, uniform, Activation, DenseParams, LstmParams};
use crate::scalar::Scalar;
use crate::snap::{self, token_indices, validate, SnapSequence, SnapSymbol, ValidationResult, EOS, PAD, VOCAB};
use crate::tensor::{Graph, Optimizer, OptimizerKind, ParamSet, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    /// LSTM units per direction.
    pub hidden: usize,
    pub dense: usize,
    pub latent: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            dense: 128,
            latent: 16,
            max_len: snap::MAX_LEN,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

impl AeConfig {
    pub fn rows(&self) -> usize {
        self.max_len + 1
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Snap(#[from] snap::SnapError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("no training data")]
    Empty,
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLosses {
    pub ce: f64,
    pub value_mse: f64,
    pub cycle_mse: f64,
}

/// Result of reading out a latent vector as a program.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Valid(SnapSequence),
    Invalid(ValidationResult),
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    enc: [LstmParams; 4],
    enc_dense: [DenseParams; 2],
    dec_dense: DenseParams,
    dec_init: DenseParams,
    dec: [LstmParams; 2],
    dec_out: DenseParams,
    value: DenseParams,
}

#[derive(Debug, Clone)]
pub struct Autoencoder<T: Scalar> {
    pub cfg: AeConfig,
    pub params: ParamSet<T>,
    layout: Layout,
}

impl<T: Scalar> Autoencoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: AeConfig, rng: &mut R) -> Self {
        let mut p = ParamSet::new();
        let (u, d, l) = (cfg.hidden, cfg.dense, cfg.latent);
        let enc = [
            LstmParams::new(&mut p, rng, "enc.l1f", VOCAB, u),
            LstmParams::new(&mut p, rng, "enc.l1b", VOCAB, u),
            LstmParams::new(&mut p, rng, "enc.l2f", 2 * u, u),
            LstmParams::new(&mut p, rng, "enc.l2b", 2 * u, u),
        ];
        let enc_dense = [
            DenseParams::new(&mut p, rng, "enc.d1", 2 * u, d),
            DenseParams::new(&mut p, rng, "enc.d2", d, l),
        ];
        let dec_dense = DenseParams::new(&mut p, rng, "dec.d1", l, d);
        let dec_init = DenseParams::new(&mut p, rng, "dec.init", d, 4 * u);
        let dec = [
            LstmParams::new(&mut p, rng, "dec.l1", l + VOCAB, u),
            LstmParams::new(&mut p, rng, "dec.l2", u, u),
        ];
        let dec_out = DenseParams::new(&mut p, rng, "dec.out", u, VOCAB);
        let value = DenseParams::new(&mut p, rng, "value", l, 1);
        Self {
            cfg,
            params: p,
            layout: Layout {
                enc,
                enc_dense,
                dec_dense,
                dec_init,
                dec,
                dec_out,
                value,
            },
        }
    }

    /// Sets every parameter to zero.
    pub fn zero_params(&mut self) {
        for t in self.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// `x [B, rows, 10]` → latent `[B, latent]`.
    pub fn encode_graph(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var, TensorError> {
        let l = &self.layout;
        let (h1, _, _) = bilstm(g, vars, &l.enc[0], &l.enc[1], x)?;
        let (_, last_f, last_b) = bilstm(g, vars, &l.enc[2], &l.enc[3], h1)?;
        let h = g.concat(&[last_f, last_b], 1)?;
        let h = l.enc_dense[0].apply(g, vars, h, Activation::Tanh)?;
        l.enc_dense[1].apply(g, vars, h, Activation::Tanh)
    }

    /// Latent `[B, latent]` → logits `[B·rows, 10]` (row `b·rows + t`) and,
    /// when free-running, the probability rows `[B, rows, 10]` fed back.
    ///
    /// Each step sees the latent vector and the previous symbol as a one-hot
    /// row (zeros at the first step). With `teacher` (`[B, rows, 10]` targets)
    /// that is the true symbol; otherwise it is the argmax of the previous
    /// output row (greedy decoding). The emitted probabilities stay
    /// differentiable either way.
    pub fn decode_logits(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        z: Var,
        teacher: Option<Var>,
    ) -> Result<(Var, Option<Var>), TensorError> {
        let l = &self.layout;
        let (u, lat) = (self.cfg.hidden, self.cfg.latent);
        let b = g.shape(z)[0];
        let rows = self.cfg.rows();
        let d = l.dec_dense.apply(g, vars, z, Activation::Tanh)?;
        let init = l.dec_init.apply(g, vars, d, Activation::Tanh)?;
        let mut h1 = g.narrow(init, 1, 0, u)?;
        let mut c1 = g.narrow(init, 1, u, u)?;
        let mut h2 = g.narrow(init, 1, 2 * u, u)?;
        let mut c2 = g.narrow(init, 1, 3 * u, u)?;
        let wx = vars[l.dec[0].input_weights.0];
        let wz = g.narrow(wx, 1, 0, lat)?;
        let wt = g.narrow(wx, 1, lat, VOCAB)?;
        // the latent part of the step input is constant, so it is projected once
        let zproj = g.linear(z, wz, vars[l.dec[0].bias.0])?;
        let tproj = match teacher {
            Some(x) => {
                let flat = g.reshape(x, &[b * rows, VOCAB])?;
                let p = g.matmul(flat, wt, true)?;
                Some(g.reshape(p, &[b, rows, 4 * u])?)
            }
            None => None,
        };
        let mut prev: Option<Var> = None;
        let mut hs = Vec::with_capacity(rows);
        let mut logits = Vec::with_capacity(rows);
        let mut probs = Vec::with_capacity(rows);
        for t in 0..rows {
            let hh = g.matmul(h1, vars[l.dec[0].recurrent_weights.0], true)?;
            let mut gates = g.add(zproj, hh)?;
            if let Some(p) = prev {
                gates = g.add(gates, p)?;
            }
            c1 = g.lstm_cell(gates, c1)?;
            h1 = g.lstm_hidden(gates, c1)?;
            let p = &l.dec[1];
            (h2, c2) = recurrent_step(
                g,
                h1,
                h2,
                c2,
                vars[p.input_weights.0],
                vars[p.recurrent_weights.0],
                vars[p.bias.0],
            )?;
            match tproj {
                Some(tp) => {
                    hs.push(h2);
                    if t + 1 < rows {
                        let x = g.narrow(tp, 1, t, 1)?;
                        prev = Some(g.reshape(x, &[b, 4 * u])?);
                    }
                }
                None => {
                    let lg = l.dec_out.apply(g, vars, h2, Activation::None)?;
                    let pr = g.softmax(lg);
                    logits.push(lg);
                    probs.push(pr);
                    if t + 1 < rows {
                        // greedy feedback: the chosen symbol enters as a constant
                        let mut hot = Tensor::zeros(&[b, VOCAB]);
                        for (row, out) in g.value(pr).data().chunks(VOCAB).zip(hot.data_mut().chunks_mut(VOCAB)) {
                            out[argmax(row)] = T::one();
                        }
                        let hot = g.input(hot);
                        prev = Some(g.matmul(hot, wt, true)?);
                    }
                }
            }
        }
        if tproj.is_some() {
            let hs = g.stack(&hs, 1)?;
            let flat = g.reshape(hs, &[b * rows, u])?;
            return Ok((l.dec_out.apply(g, vars, flat, Activation::None)?, None));
        }
        let lg = g.stack(&logits, 1)?;
        let lg = g.reshape(lg, &[b * rows, VOCAB])?;
        Ok((lg, Some(g.stack(&probs, 1)?)))
    }

    /// Latent → row-stochastic `[B, rows, 10]`, free-running.
    pub fn decode_graph(&self, g: &mut Graph<T>, vars: &[Var], z: Var) -> Result<Var, TensorError> {
        let (_, probs) = self.decode_logits(g, vars, z, None)?;
        Ok(probs.expect("free-running decode returns probabilities"))
    }

    pub fn value_graph(&self, g: &mut Graph<T>, vars: &[Var], z: Var) -> Result<Var, TensorError> {
        self.layout.value.apply(g, vars, z, Activation::None)
    }

    fn frozen(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.tensors().iter().map(|t| g.input(t.clone())).collect()
    }

    fn one_hot_batch(&self, seqs: &[&SnapSequence]) -> Result<Tensor<T>, AeError> {
        let rows = self.cfg.rows();
        let mut data = vec![T::zero(); seqs.len() * rows * VOCAB];
        for (b, s) in seqs.iter().enumerate() {
            for (r, i) in token_indices(s, self.cfg.max_len)?.iter().enumerate() {
                data[(b * rows + r) * VOCAB + i] = T::one();
            }
        }
        Ok(Tensor::new(vec![seqs.len(), rows, VOCAB], data)?)
    }

    fn latent_batch(&self, zs: &[Vec<f64>]) -> Result<Tensor<T>, AeError> {
        let l = self.cfg.latent;
        let mut data = Vec::with_capacity(zs.len() * l);
        for z in zs {
            if z.len() != l {
                return Err(TensorError::Shape(format!("latent of length {} (expected {l})", z.len())).into());
            }
            data.extend(z.iter().map(|v| T::from_f64_lossy(v.clamp(-1.0, 1.0))));
        }
        Ok(Tensor::new(vec![zs.len(), l], data)?)
    }

    /// Latent vectors of programs, one per input.
    pub fn encode(&self, seqs: &[SnapSequence]) -> Result<Vec<Vec<f64>>, AeError> {
        let refs: Vec<&SnapSequence> = seqs.iter().collect();
        let x = self.one_hot_batch(&refs)?;
        self.encode_rows(&x)
    }

    /// Encodes arbitrary probability rows `[B, rows, 10]`.
    pub fn encode_rows(&self, x: &Tensor<T>) -> Result<Vec<Vec<f64>>, AeError> {
        let mut g = Graph::new();
        let vars = self.frozen(&mut g);
        let xv = g.input(x.clone());
        let z = self.encode_graph(&mut g, &vars, xv)?;
        Ok(g.value(z).data().chunks(self.cfg.latent).map(|c| c.iter().map(|v| v.as_f64()).collect()).collect())
    }

    /// Symbol probabilities `[rows, 10]` per latent vector (clamped to the box).
    pub fn decode(&self, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AeError> {
        let z = self.latent_batch(zs)?;
        let mut g = Graph::new();
        let vars = self.frozen(&mut g);
        let zv = g.input(z);
        let p = self.decode_graph(&mut g, &vars, zv)?;
        let per = self.cfg.rows() * VOCAB;
        Ok(g.value(p).data().chunks(per).map(|c| c.iter().map(|v| v.as_f64()).collect()).collect())
    }

    /// Mean squared error of `E(D(z))` against `z` (the cycle term alone).
    pub fn cycle_error(&self, zs: &[Vec<f64>]) -> Result<f64, AeError> {
        let z = self.latent_batch(zs)?;
        let mut g = Graph::new();
        let vars = self.frozen(&mut g);
        let zv = g.input(z.clone());
        let p = self.decode_graph(&mut g, &vars, zv)?;
        let back = self.encode_graph(&mut g, &vars, p)?;
        let m = g.mse(back, &z)?;
        Ok(g.value(m).data()[0].as_f64())
    }

    /// Per-row argmax up to the first EOS or PAD, then validated.
    pub fn hard_decode(&self, zs: &[Vec<f64>]) -> Result<Vec<Decoded>, AeError> {
        Ok(self.decode(zs)?.iter().map(|rows| readout(rows)).collect())
    }

    pub fn estimate_value(&self, zs: &[Vec<f64>]) -> Result<Vec<f64>, AeError> {
        let z = self.latent_batch(zs)?;
        let mut g = Graph::new();
        let vars = self.frozen(&mut g);
        let zv = g.input(z);
        let v = self.value_graph(&mut g, &vars, zv)?;
        Ok(g.value(v).data().iter().map(|v| v.as_f64()).collect())
    }

    /// Gradient of the value estimate with respect to the latent vector,
    /// which for a linear head is its weight row.
    pub fn value_gradient(&self) -> Vec<f64> {
        self.params.get(self.layout.value.weights).to_f64_vec()
    }

    pub fn value_bias(&self) -> f64 {
        self.params.get(self.layout.value.bias).data()[0].as_f64()
    }

    /// Builds the summed objective for one minibatch and returns
    /// `(total, ce, value_mse, cycle_mse)`; absent streams contribute nothing.
    pub fn loss_graph(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        recon: &[&SnapSequence],
        known: &[(&SnapSequence, f64)],
        cycle: &[Vec<f64>],
    ) -> Result<(Var, Option<Var>, Option<Var>, Option<Var>), AeError> {
        let rows = self.cfg.rows();
        let mut terms = Vec::new();
        let ce = if recon.is_empty() {
            None
        } else {
            let x = self.one_hot_batch(recon)?;
            let mut targets = Vec::with_capacity(recon.len() * rows);
            let mut mask = Vec::with_capacity(recon.len() * rows);
            for s in recon {
                for (r, i) in token_indices(s, self.cfg.max_len)?.iter().enumerate() {
                    targets.push(if *i == PAD { 0 } else { *i });
                    mask.push(r <= s.len());
                }
            }
            let xv = g.input(x);
            let z = self.encode_graph(g, vars, xv)?;
            let (logits, _) = self.decode_logits(g, vars, z, Some(xv))?;
            let ce = g.masked_softmax_ce(logits, &targets, &mask, &[PAD])?;
            terms.push(ce);
            Some(ce)
        };
        let value = if known.is_empty() {
            None
        } else {
            let seqs: Vec<&SnapSequence> = known.iter().map(|k| k.0).collect();
            let x = self.one_hot_batch(&seqs)?;
            let y = Tensor::new(
                vec![known.len(), 1],
                known.iter().map(|k| T::from_f64_lossy(k.1)).collect(),
            )?;
            let xv = g.input(x);
            let z = self.encode_graph(g, vars, xv)?;
            let pred = self.value_graph(g, vars, z)?;
            let m = g.mse(pred, &y)?;
            terms.push(m);
            Some(m)
        };
        let cyc = if cycle.is_empty() {
            None
        } else {
            let zt = self.latent_batch(cycle)?;
            let zv = g.input(zt.clone());
            let probs = self.decode_graph(g, vars, zv)?;
            let z2 = self.encode_graph(g, vars, probs)?;
            let m = g.mse(z2, &zt)?;
            terms.push(m);
            Some(m)
        };
        let mut total = *terms.first().ok_or(AeError::Empty)?;
        for t in &terms[1..] {
            total = g.add(total, *t)?;
        }
        Ok((total, ce, value, cyc))
    }

    /// One pass over `recon` in minibatches. Each step pairs a reconstruction
    /// batch with a batch of `known` (program, value) pairs, cycling through
    /// them, and a batch of uniform latent samples. When `recon` is empty the
    /// epoch length follows `known`. On a non-finite gradient the parameters
    /// are restored to their state at the start of the epoch.
    pub fn train_epoch<R: Rng + ?Sized>(
        &mut self,
        opt: &mut Optimizer<T>,
        recon: &[SnapSequence],
        known: &[(SnapSequence, f64)],
        rng: &mut R,
    ) -> Result<EpochLosses, AeError> {
        if recon.is_empty() && known.is_empty() {
            return Err(AeError::Empty);
        }
        let bs = self.cfg.batch_size.max(1);
        let mut r_order: Vec<usize> = (0..recon.len()).collect();
        r_order.shuffle(rng);
        let mut k_order: Vec<usize> = (0..known.len()).collect();
        k_order.shuffle(rng);
        let steps = recon.len().max(known.len()).div_ceil(bs);
        let snapshot = self.params.clone();
        let mut sums = EpochLosses::default();
        let mut counts = [0usize; 3];
        for step in 0..steps {
            let rb: Vec<&SnapSequence> = r_order.iter().skip(step * bs).take(bs).map(|i| &recon[*i]).collect();
            let kb: Vec<(&SnapSequence, f64)> = if known.is_empty() {
                Vec::new()
            } else {
                (0..bs.min(known.len()))
                    .map(|j| {
                        let (s, v) = &known[k_order[(step * bs + j) % known.len()]];
                        (s, *v)
                    })
                    .collect()
            };
            let cycle: Vec<Vec<f64>> = (0..bs)
                .map(|_| (0..self.cfg.latent).map(|_| rng.random_range(-1.0..=1.0)).collect())
                .collect();
            let mut g = Graph::new();
            let vars = self.params.bind(&mut g);
            let (total, ce, vm, cm) = self.loss_graph(&mut g, &vars, &rb, &kb, &cycle)?;
            let outcome = g.backward(total).and_then(|_| {
                let grads = self.params.grads(&g, &vars);
                opt.step(&mut self.params, &grads)
            });
            if let Err(e) = outcome {
                self.params = snapshot;
                return Err(e.into());
            }
            for (i, (term, acc)) in [(ce, &mut sums.ce), (vm, &mut sums.value_mse), (cm, &mut sums.cycle_mse)]
                .into_iter()
                .enumerate()
            {
                if let Some(t) = term {
                    *acc += g.value(t).data()[0].as_f64();
                    counts[i] += 1;
                }
            }
        }
        let avg = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
        Ok(EpochLosses {
            ce: avg(sums.ce, counts[0]),
            value_mse: avg(sums.value_mse, counts[1]),
            cycle_mse: avg(sums.cycle_mse, counts[2]),
        })
    }

    pub fn optimizer(&self) -> Optimizer<T> {
        Optimizer::new(OptimizerKind::adam(self.cfg.lr), &self.params)
    }

    /// Warm-started training on the known programs: each epoch draws as many
    /// fresh random programs as there are known ones for the reconstruction
    /// term. A fresh optimizer is used for every call.
    pub fn retrain<R: Rng + ?Sized>(
        &mut self,
        known: &[(SnapSequence, f64)],
        epochs: usize,
        rng: &mut R,
    ) -> Result<Vec<EpochLosses>, AeError> {
        if known.is_empty() {
            return Err(AeError::Empty);
        }
        let mut opt = self.optimizer();
        let mut out = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let recon = random_corpus(rng, known.len(), self.cfg.max_len);
            out.push(self.train_epoch(&mut opt, &recon, known, rng)?);
        }
        Ok(out)
    }

    /// Reconstruction-only training, drawing `corpus` fresh random sequences
    /// per epoch. The learning rate follows a cosine from `cfg.lr` down to
    /// `cfg.lr / 100`. `on_epoch` sees the 0-based epoch and its losses.
    pub fn pretrain<R: Rng + ?Sized>(
        &mut self,
        corpus: usize,
        epochs: usize,
        rng: &mut R,
        mut on_epoch: impl FnMut(usize, &EpochLosses),
    ) -> Result<Vec<EpochLosses>, AeError> {
        if corpus == 0 {
            return Err(AeError::Empty);
        }
        let mut opt = self.optimizer();
        let mut out = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            opt.set_lr(cosine_lr(self.cfg.lr, epoch, epochs));
            let recon = random_corpus(rng, corpus, self.cfg.max_len);
            let l = self.train_epoch(&mut opt, &recon, &[], rng)?;
            on_epoch(epoch, &l);
            out.push(l);
        }
        Ok(out)
    }

    /// Token accuracy over scored rows (symbols and EOS) and exact-match
    /// rate of the hard readout.
    pub fn reconstruction_accuracy(&self, seqs: &[SnapSequence]) -> Result<(f64, f64), AeError> {
        let (mut tok_ok, mut tok_n, mut seq_ok) = (0usize, 0usize, 0usize);
        for chunk in seqs.chunks(256) {
            let zs = self.encode(chunk)?;
            let probs = self.decode(&zs)?;
            for (s, rows) in chunk.iter().zip(&probs) {
                let idx = token_indices(s, self.cfg.max_len)?;
                for (r, want) in idx.iter().enumerate().take(s.len() + 1) {
                    tok_ok += (argmax(&rows[r * VOCAB..(r + 1) * VOCAB]) == *want) as usize;
                    tok_n += 1;
                }
                if readout(rows) == Decoded::Valid(s.clone()) {
                    seq_ok += 1;
                }
            }
        }
        Ok((tok_ok as f64 / tok_n.max(1) as f64, seq_ok as f64 / seqs.len().max(1) as f64))
    }

    /// Writes `<stem>.bin`, `<stem>.json` (parameters) and `<stem>.config.json`.
    pub fn save(&self, stem: &Path) -> Result<(), AeError> {
        self.params.save(stem).map_err(|e| AeError::Checkpoint(e.to_string()))?;
        let cfg = serde_json::to_string_pretty(&self.cfg).expect("config serializes");
        std::fs::write(stem.with_extension("config.json"), cfg).map_err(|e| AeError::Checkpoint(e.to_string()))
    }

    pub fn load(stem: &Path) -> Result<Self, AeError> {
        let text =
            std::fs::read_to_string(stem.with_extension("config.json")).map_err(|e| AeError::Checkpoint(e.to_string()))?;
        let cfg: AeConfig = serde_json::from_str(&text).map_err(|e| AeError::Checkpoint(e.to_string()))?;
        let mut ae = Self::new(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        let params = ParamSet::load(stem)?;
        if params.len() != ae.params.len()
            || params.tensors().iter().zip(ae.params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(AeError::Checkpoint("parameter layout does not match config".into()));
        }
        ae.params = params;
        Ok(ae)
    }
}

fn argmax<S: PartialOrd>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Cosine decay from `lr` at epoch 0 towards `lr / 100` at the last epoch.
pub fn cosine_lr(lr: f64, epoch: usize, epochs: usize) -> f64 {
    let floor = lr / 100.0;
    let t = epoch as f64 / epochs.saturating_sub(1).max(1) as f64;
    floor + 0.5 * (lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Discrete readout of `[rows x 10]` probabilities.
pub fn readout(rows: &[f64]) -> Decoded {
    let mut symbols = Vec::new();
    for row in rows.chunks(VOCAB) {
        let i = argmax(row);
        if i == EOS || i == PAD {
            break;
        }
        symbols.push(SnapSymbol::from_index(i).expect("symbol index"));
    }
    let seq = SnapSequence::new(symbols);
    let v = validate(&seq);
    if v.valid {
        Decoded::Valid(seq)
    } else {
        Decoded::Invalid(v)
    }
}

/// Random valid programs with the usual length range capped at `max_len`.
pub fn random_corpus<R: Rng + ?Sized>(rng: &mut R, n: usize, max_len: usize) -> Vec<SnapSequence> {
    let lens = (snap::RANDOM_LEN.0.min(max_len), snap::RANDOM_LEN.1.min(max_len));
    (0..n)
        .map(|_| snap::random_snap(rng, lens).expect("random programs are well-formed"))
        .collect()
}

/// Uniform latent sample in the box.
pub fn random_latent<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    uniform::<f64, R>(rng, &[dim], 1.0).into_data()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snap::FailureReason;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> AeConfig {
        AeConfig {
            hidden: 4,
            dense: 6,
            latent: 3,
            max_len: 4,
            batch_size: 4,
            lr: 1e-2,
        }
    }

    fn one_hot_rows(idx: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; 13 * VOCAB];
        for (r, i) in idx.iter().enumerate() {
            v[r * VOCAB + i] = 1.0;
        }
        v
    }

    #[test]
    fn readout_rules() {
        use SnapSymbol::*;
        let mut rows = vec![Conv3.index(), EOS];
        rows.resize(13, PAD);
        assert_eq!(readout(&one_hot_rows(&rows)), Decoded::Valid(SnapSequence::new(vec![Conv3])));
        let mut rows = vec![Merge.index(), Merge.index(), EOS];
        rows.resize(13, PAD);
        match readout(&one_hot_rows(&rows)) {
            Decoded::Invalid(v) => {
                assert_eq!(v.failure_reason, Some(FailureReason::UnderflowMerge));
                assert_eq!(v.failure_index, Some(1));
            }
            other => panic!("{other:?}"),
        }
        match readout(&one_hot_rows(&[EOS; 13])) {
            Decoded::Invalid(v) => assert_eq!(v.failure_reason, Some(FailureReason::Empty)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_parameters_give_zero_latent_and_uniform_rows() {
        let mut ae = Autoencoder::<f64>::new(AeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        ae.zero_params();
        let z = ae.encode(&[SnapSequence::parse("B C3 M").unwrap()]).unwrap();
        assert!(z[0].iter().all(|v| *v == 0.0));
        let p = ae.decode(&[vec![0.3; 16]]).unwrap();
        assert_eq!(p[0].len(), 130);
        assert!(p[0].iter().all(|v| (v - 0.1).abs() < 1e-15));
        assert_eq!(ae.estimate_value(&[vec![0.5; 16]]).unwrap(), vec![0.0]);
    }

    #[test]
    fn untrained_decoder_cross_entropy_is_ln9() {
        let mut ae = Autoencoder::<f64>::new(AeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        ae.zero_params();
        let seqs = [SnapSequence::parse("C3").unwrap(), SnapSequence::parse("B C1 X M").unwrap()];
        let refs: Vec<&SnapSequence> = seqs.iter().collect();
        let mut g = Graph::new();
        let vars = ae.params.bind(&mut g);
        let (_, ce, _, _) = ae.loss_graph(&mut g, &vars, &refs, &[], &[]).unwrap();
        assert!((g.value(ce.unwrap()).data()[0] - 9f64.ln()).abs() < 1e-12);
        let known = [(&seqs[0], 2.0), (&seqs[1], -1.0)];
        let mut g = Graph::new();
        let vars = ae.params.bind(&mut g);
        let (_, _, vm, _) = ae.loss_graph(&mut g, &vars, &[], &known, &[]).unwrap();
        assert!((g.value(vm.unwrap()).data()[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn outputs_are_bounded_and_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ae = Autoencoder::<f64>::new(AeConfig::default(), &mut rng);
        let seqs: Vec<SnapSequence> = (0..8).map(|_| snap::random_snap(&mut rng, snap::RANDOM_LEN).unwrap()).collect();
        for z in ae.encode(&seqs).unwrap() {
            assert!(z.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let zs: Vec<Vec<f64>> = (0..4).map(|_| random_latent(&mut rng, 16)).collect();
        for rows in ae.decode(&zs).unwrap() {
            for r in rows.chunks(VOCAB) {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(ae.encode(&seqs).unwrap(), ae.encode(&seqs).unwrap());
    }

    #[test]
    fn value_head_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ae = Autoencoder::<f64>::new(AeConfig::default(), &mut rng);
        let b = ae.layout.value.bias;
        ae.params.get_mut(b).data_mut()[0] = 0.0;
        let z = random_latent(&mut rng, 16);
        let v = ae.estimate_value(&[z.clone()]).unwrap()[0];
        let half: Vec<f64> = z.iter().map(|x| 0.5 * x).collect();
        assert!((ae.estimate_value(&[half]).unwrap()[0] - 0.5 * v).abs() < 1e-12);
        let w = ae.value_gradient();
        let dot: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
        assert!((dot - v).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_all_three_terms_on_a_small_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ae = Autoencoder::<f64>::new(tiny(), &mut rng);
        let corpus: Vec<SnapSequence> = (0..16).map(|_| snap::random_snap(&mut rng, (1, 4)).unwrap()).collect();
        let known: Vec<(SnapSequence, f64)> = corpus.iter().take(8).map(|s| (s.clone(), s.len() as f64 / 4.0)).collect();
        let mut opt = ae.optimizer();
        let first = ae.train_epoch(&mut opt, &corpus, &known, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..60 {
            last = ae.train_epoch(&mut opt, &corpus, &known, &mut rng).unwrap();
        }
        assert!(last.ce < first.ce, "{first:?} -> {last:?}");
        assert!(last.value_mse < first.value_mse, "{first:?} -> {last:?}");
        assert!(last.cycle_mse <= first.cycle_mse, "{first:?} -> {last:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ae");
        let ae = Autoencoder::<f64>::new(tiny(), &mut ChaCha8Rng::seed_from_u64(6));
        ae.save(&stem).unwrap();
        let back = Autoencoder::<f64>::load(&stem).unwrap();
        assert_eq!(back.params, ae.params);
        assert_eq!(back.cfg, ae.cfg);
    }
}
