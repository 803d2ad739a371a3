//! Latent-space architecture search and the random-search baseline.
//!
//! Every random stream is derived from `SearchConfig::seed`, a stream tag and
//! the iteration index, so a run resumed from a checkpoint after iteration
//! `k` continues exactly as the uninterrupted run would.

mod pool;
mod store;
mod trace;

pub use pool::{evaluate_all, snap_hash, CachedEvaluator, Evaluated, Evaluator, PoseEvaluator};
pub use store::{CandidateRecord, CandidateStore, Source, StoreError};
pub use trace::{read_trace, store_from_rows, write_trace, TraceError, TraceRow, TRACE_HEADER};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{random_latent, AeError, Autoencoder, Decoded, EpochLosses};
use crate::pose::derive_seed;
use crate::snap::{random_snap, SnapSequence, RANDOM_LEN};

const TAG_PROPOSALS: u64 = 11;
const TAG_RETRAIN: u64 = 12;
const TAG_ASCENT: u64 = 13;

/// Attempts allowed per requested proposal, for ascent decodes and for
/// rejection sampling of distinct random sequences alike.
pub const ATTEMPTS_PER_PROPOSAL: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_initial: usize,
    pub n_per_iteration: usize,
    pub budget_total: usize,
    pub ascent_step: f64,
    pub ascent_limit: usize,
    pub elite_batch: usize,
    pub retrain_epochs: usize,
    pub seed: u64,
    pub worker_count: usize,
    /// Off by default so that traces are byte-identical across runs.
    pub record_wall_time: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_initial: 100,
            n_per_iteration: 100,
            budget_total: 1500,
            ascent_step: 0.05,
            ascent_limit: 50,
            elite_batch: 16,
            retrain_epochs: 50,
            seed: 0,
            worker_count: 1,
            record_wall_time: false,
        }
    }
}

impl SearchConfig {
    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.into()));
        if self.n_initial == 0 || self.n_initial > self.budget_total {
            return bad("need 1 <= n_initial <= budget_total");
        }
        if self.n_per_iteration == 0 || self.elite_batch == 0 {
            return bad("n_per_iteration and elite_batch must be positive");
        }
        if self.ascent_limit == 0 {
            return bad("ascent_limit must be at least 1");
        }
        if !(self.ascent_step > 0.0 && self.ascent_step.is_finite()) {
            return bad("ascent_step must be a positive number");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("bad search config: {0}")]
    Config(String),
    #[error(transparent)]
    Autoencoder(#[from] AeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("checkpoint hook: {0}")]
    Hook(String),
}

fn stream(seed: u64, tag: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index as u64))
}

/// Distinct random valid sequences not in `store`, drawn from a fixed stream.
/// Returns fewer than `n` only if the attempt cap is reached.
pub fn random_proposals(seed: u64, n: usize, store: &CandidateStore) -> Vec<SnapSequence> {
    let mut rng = stream(seed, TAG_PROPOSALS, 0);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    let cap = ATTEMPTS_PER_PROPOSAL * n.max(1) * 200;
    for _ in 0..cap {
        if out.len() == n {
            break;
        }
        let s = random_snap(&mut rng, RANDOM_LEN).expect("random sequences are well-formed");
        if !store.contains(&s) && seen.insert(s.render()) {
            out.push(s);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum AscentOutcome {
    NewSnap { seq: SnapSequence, steps: usize },
    Exhausted,
    /// The shared attempt budget ran out mid-ascent.
    CapReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ascent {
    pub outcome: AscentOutcome,
    /// Latent points decoded, starting point first.
    pub visited: Vec<Vec<f64>>,
}

/// Gradient ascent on the value estimate from `z0`. Each visited point,
/// starting with `z0` itself, is decoded; the first valid decode for which
/// `known` is false ends the ascent. Invalid decodes are skipped. Every
/// decode spends one unit of `attempts`.
pub fn ascend(
    z0: &[f64],
    ae: &Autoencoder<f32>,
    known: &dyn Fn(&SnapSequence) -> bool,
    cfg: &SearchConfig,
    attempts: &mut usize,
) -> Result<Ascent, SearchError> {
    let w = ae.value_gradient();
    let mut z: Vec<f64> = z0.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let mut visited = Vec::new();
    for step in 0..=cfg.ascent_limit {
        if step > 0 {
            for (zi, wi) in z.iter_mut().zip(&w) {
                *zi = (*zi + cfg.ascent_step * wi).clamp(-1.0, 1.0);
            }
        }
        if *attempts == 0 {
            return Ok(Ascent {
                outcome: AscentOutcome::CapReached,
                visited,
            });
        }
        *attempts -= 1;
        visited.push(z.clone());
        let decoded = ae.hard_decode(std::slice::from_ref(&z))?.pop().expect("one decode");
        if let Decoded::Valid(seq) = decoded {
            if !known(&seq) {
                return Ok(Ascent {
                    outcome: AscentOutcome::NewSnap { seq, steps: step },
                    visited,
                });
            }
        }
    }
    Ok(Ascent {
        outcome: AscentOutcome::Exhausted,
        visited,
    })
}

/// What one iteration did, for logs and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub retrain_last: Option<EpochLosses>,
    pub value_mse_before: f64,
    pub value_mse_after: f64,
    pub from_elite: usize,
    pub from_resample: usize,
    pub decodes: usize,
    pub cap_reached: bool,
    pub evaluated: usize,
    pub best_value: f64,
}

/// Coordinator state: the store, the autoencoder and the iteration counter.
pub struct SearchState {
    pub cfg: SearchConfig,
    pub store: CandidateStore,
    pub ae: Autoencoder<f32>,
    pub iteration: usize,
    pub log: Vec<IterationLog>,
}

impl SearchState {
    pub fn new(cfg: SearchConfig, ae: Autoencoder<f32>) -> Self {
        Self {
            cfg,
            store: CandidateStore::new(),
            ae,
            iteration: 0,
            log: Vec::new(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.cfg.budget_total.saturating_sub(self.store.len())
    }
}

fn insert_all(
    store: &mut CandidateStore,
    jobs: Vec<(SnapSequence, Source)>,
    results: Vec<Evaluated>,
    record_wall_time: bool,
) -> Result<(), SearchError> {
    for ((snap, source), ev) in jobs.into_iter().zip(results) {
        let wall = if record_wall_time { ev.wall_time_s } else { 0.0 };
        store.insert(snap, &ev.result, source, wall)?;
    }
    Ok(())
}

fn dispatch<E: Evaluator + ?Sized>(
    state: &mut SearchState,
    eval: &E,
    jobs: Vec<(SnapSequence, Source)>,
) -> Result<usize, SearchError> {
    let seqs: Vec<SnapSequence> = jobs.iter().map(|j| j.0.clone()).collect();
    let results = evaluate_all(eval, &seqs, state.cfg.worker_count);
    let n = results.len();
    insert_all(&mut state.store, jobs, results, state.cfg.record_wall_time)?;
    Ok(n)
}

/// Evaluates `n_initial` distinct random sequences into an empty store.
pub fn init_population<E: Evaluator + ?Sized>(state: &mut SearchState, eval: &E) -> Result<(), SearchError> {
    if !state.store.is_empty() {
        return Err(SearchError::Config("initial population needs an empty store".into()));
    }
    let seqs = random_proposals(state.cfg.seed, state.cfg.n_initial, &state.store);
    let jobs = seqs.into_iter().map(|s| (s, Source::Initial)).collect();
    dispatch(state, eval, jobs)?;
    Ok(())
}

/// Generates up to `n` novel sequences by ascent from the elite and from
/// random restarts. Nothing is evaluated here.
pub fn propose(state: &SearchState, n: usize) -> Result<(Vec<(SnapSequence, Source)>, IterationLog), SearchError> {
    let cfg = &state.cfg;
    let mut rng = stream(cfg.seed, TAG_ASCENT, state.iteration);
    let mut attempts = ATTEMPTS_PER_PROPOSAL * n;
    let mut out: Vec<(SnapSequence, Source)> = Vec::with_capacity(n);
    let mut fresh = std::collections::HashSet::new();
    let mut log = IterationLog {
        iteration: state.iteration,
        retrain_last: None,
        value_mse_before: f64::NAN,
        value_mse_after: f64::NAN,
        from_elite: 0,
        from_resample: 0,
        decodes: 0,
        cap_reached: false,
        evaluated: 0,
        best_value: f64::NAN,
    };
    let elite: Vec<SnapSequence> = state.store.best_k(cfg.elite_batch).iter().map(|r| r.snap.clone()).collect();
    let starts = state.ae.encode(&elite)?;
    let mut starts = starts.into_iter();
    while out.len() < n {
        let (z0, source) = match starts.next() {
            Some(z) => (z, Source::Ascent),
            None => (random_latent(&mut rng, state.ae.cfg.latent), Source::Resample),
        };
        let known = |s: &SnapSequence| state.store.contains(s) || fresh.contains(&s.render());
        let before = attempts;
        let a = ascend(&z0, &state.ae, &known, cfg, &mut attempts)?;
        log.decodes += before - attempts;
        match a.outcome {
            AscentOutcome::NewSnap { seq, .. } => {
                fresh.insert(seq.render());
                match source {
                    Source::Ascent => log.from_elite += 1,
                    _ => log.from_resample += 1,
                }
                out.push((seq, source));
            }
            AscentOutcome::Exhausted => {}
            AscentOutcome::CapReached => {
                log.cap_reached = true;
                log::warn!(
                    "iteration {}: attempt cap reached with {} of {n} proposals",
                    state.iteration,
                    out.len()
                );
                break;
            }
        }
    }
    Ok((out, log))
}

/// Mean squared error of the value estimate over the store.
pub fn value_mse(ae: &Autoencoder<f32>, store: &CandidateStore) -> Result<f64, SearchError> {
    let known = store.known();
    if known.is_empty() {
        return Ok(0.0);
    }
    let seqs: Vec<SnapSequence> = known.iter().map(|k| k.0.clone()).collect();
    let est = ae.estimate_value(&ae.encode(&seqs)?)?;
    Ok(est.iter().zip(&known).map(|(e, k)| (e - k.1).powi(2)).sum::<f64>() / known.len() as f64)
}

/// Retrain, propose, evaluate. Proposals are truncated to the remaining budget.
pub fn search_iteration<E: Evaluator + ?Sized>(
    state: &mut SearchState,
    eval: &E,
) -> Result<IterationLog, SearchError> {
    if state.store.is_empty() {
        return Err(SearchError::Config("search iteration needs a non-empty store".into()));
    }
    let before = value_mse(&state.ae, &state.store)?;
    let mut rng = stream(state.cfg.seed, TAG_RETRAIN, state.iteration);
    let losses = state.ae.retrain(&state.store.known(), state.cfg.retrain_epochs, &mut rng)?;
    let after = value_mse(&state.ae, &state.store)?;
    let n = state.cfg.n_per_iteration.min(state.remaining());
    let (jobs, mut log) = propose(state, n)?;
    log.retrain_last = losses.last().copied();
    log.value_mse_before = before;
    log.value_mse_after = after;
    log.evaluated = dispatch(state, eval, jobs)?;
    log.best_value = state.store.best().map_or(f64::NAN, |r| r.value);
    log::info!(
        "iteration {}: {} evaluated ({} elite, {} resample), best {:.4}, value mse {:.4} -> {:.4}",
        log.iteration,
        log.evaluated,
        log.from_elite,
        log.from_resample,
        log.best_value,
        before,
        after
    );
    state.iteration += 1;
    state.log.push(log.clone());
    Ok(log)
}

/// Runs (or continues) a search until the budget is spent. `checkpoint` is
/// called after the initial population and after every iteration.
pub fn run_search<E: Evaluator + ?Sized>(
    state: &mut SearchState,
    eval: &E,
    checkpoint: &mut dyn FnMut(&SearchState) -> Result<(), String>,
) -> Result<(), SearchError> {
    state.cfg.check()?;
    if state.store.is_empty() {
        init_population(state, eval)?;
        log::info!("initial population: {} evaluated", state.store.len());
        checkpoint(state).map_err(SearchError::Hook)?;
    }
    while state.remaining() > 0 {
        let log = search_iteration(state, eval)?;
        checkpoint(state).map_err(SearchError::Hook)?;
        if log.evaluated == 0 {
            log::warn!("no novel proposals; stopping with {} of {}", state.store.len(), state.cfg.budget_total);
            break;
        }
    }
    Ok(())
}

/// Evaluates `budget_total` distinct random sequences, `n_per_iteration` at a
/// time. The proposal stream is the one `init_population` draws from, so a
/// paired search and baseline with the same seed share their first
/// `n_initial` candidates.
pub fn random_search<E: Evaluator + ?Sized>(
    cfg: &SearchConfig,
    store: &mut CandidateStore,
    eval: &E,
    checkpoint: &mut dyn FnMut(&CandidateStore) -> Result<(), String>,
) -> Result<(), SearchError> {
    cfg.check()?;
    let all = random_proposals(cfg.seed, cfg.budget_total, &CandidateStore::new());
    for (done, rec) in store.records().iter().enumerate() {
        if all.get(done) != Some(&rec.snap) {
            return Err(SearchError::Config(format!(
                "stored candidate {} does not match the proposal stream",
                rec.id
            )));
        }
    }
    let mut next = store.len();
    while next < all.len() {
        let end = (next + cfg.n_per_iteration).min(all.len());
        let jobs = all[next..end].to_vec();
        let results = evaluate_all(eval, &jobs, cfg.worker_count);
        insert_all(
            store,
            jobs.into_iter().map(|s| (s, Source::RandomBaseline)).collect(),
            results,
            cfg.record_wall_time,
        )?;
        next = end;
        log::info!("random search: {next} of {} evaluated", cfg.budget_total);
        checkpoint(store).map_err(SearchError::Hook)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
