//! Candidate evaluation: the evaluator seam, a memoizing wrapper and a
//! thread pool that returns results in dispatch order.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Instant;

use crate::net::MacroConfig;
use crate::pose::{derive_seed, evaluate_candidate, CandidateResult, Dataset, TrainConfig, FAILED_VALUE, REGMSE_FLOOR};
use crate::snap::SnapSequence;

const TAG_CANDIDATE: u64 = 0x5eed;

/// Scores one candidate. Implementations must be pure functions of the
/// sequence so that results do not depend on dispatch order.
pub trait Evaluator: Sync {
    fn evaluate(&self, snap: &SnapSequence) -> Result<CandidateResult, String>;
}

impl<F> Evaluator for F
where
    F: Fn(&SnapSequence) -> Result<CandidateResult, String> + Sync,
{
    fn evaluate(&self, snap: &SnapSequence) -> Result<CandidateResult, String> {
        self(snap)
    }
}

/// FNV-1a over the canonical text; stable across platforms and runs.
pub fn snap_hash(snap: &SnapSequence) -> u64 {
    snap.render().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Trains the search-scale network on the pose environment. The training
/// seed is derived from the base seed and the sequence text, so a sequence
/// gets the same value whichever search proposes it.
pub struct PoseEvaluator {
    pub data: Arc<Dataset>,
    pub macro_cfg: MacroConfig,
    pub train: TrainConfig,
}

impl PoseEvaluator {
    pub fn seed_for(&self, snap: &SnapSequence) -> u64 {
        derive_seed(self.train.seed, TAG_CANDIDATE, snap_hash(snap))
    }
}

impl Evaluator for PoseEvaluator {
    fn evaluate(&self, snap: &SnapSequence) -> Result<CandidateResult, String> {
        let train = TrainConfig {
            seed: self.seed_for(snap),
            ..self.train
        };
        evaluate_candidate::<f32>(snap, &self.data, &self.macro_cfg, &train).map_err(|e| e.to_string())
    }
}

/// Memoizes another evaluator by sequence text. Exact because evaluators
/// are pure; lets paired runs share work on common proposals.
pub struct CachedEvaluator<E> {
    inner: E,
    cache: Mutex<HashMap<String, CandidateResult>>,
    hits: AtomicUsize,
}

impl<E: Evaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
            hits: AtomicUsize::new(0),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn evaluate(&self, snap: &SnapSequence) -> Result<CandidateResult, String> {
        let key = snap.render();
        if let Some(r) = self.cache.lock().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(r.clone());
        }
        let r = self.inner.evaluate(snap)?;
        self.cache.lock().expect("cache lock").insert(key, r.clone());
        Ok(r)
    }
}

/// Evaluation of one dispatched job.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub result: CandidateResult,
    /// Set when the evaluator errored or panicked; the result is then a
    /// failed placeholder.
    pub error: Option<String>,
    pub wall_time_s: f64,
}

fn failed(snap: &SnapSequence, error: String) -> CandidateResult {
    log::warn!("candidate {snap} failed: {error}");
    CandidateResult {
        snap: snap.render(),
        regmse: 1.0 / REGMSE_FLOOR,
        value: FAILED_VALUE,
        failed: true,
        train_seed: 0,
        epochs: 0,
        wall_time_s: 0.0,
    }
}

fn run_one<E: Evaluator + ?Sized>(eval: &E, snap: &SnapSequence) -> Evaluated {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| eval.evaluate(snap)))
        .unwrap_or_else(|p| Err(p.downcast_ref::<&str>().map(|s| s.to_string()).unwrap_or_else(|| "panic".into())));
    let wall_time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok(result) => Evaluated {
            result,
            error: None,
            wall_time_s,
        },
        Err(e) => Evaluated {
            result: failed(snap, e.clone()),
            error: Some(e),
            wall_time_s,
        },
    }
}

/// Evaluates `jobs` on `workers` threads. Output order equals input order
/// regardless of completion order; errors become failed results.
pub fn evaluate_all<E: Evaluator + ?Sized>(eval: &E, jobs: &[SnapSequence], workers: usize) -> Vec<Evaluated> {
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(|s| run_one(eval, s)).collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                if tx.send((i, run_one(eval, &jobs[i]))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut done: Vec<(usize, Evaluated)> = rx.into_iter().collect();
    done.sort_by_key(|(i, _)| *i);
    done.into_iter().map(|(_, e)| e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(s: &SnapSequence) -> Result<CandidateResult, String> {
        if s.len() == 3 {
            panic!("boom");
        }
        if s.len() == 2 {
            return Err("bad".into());
        }
        let value = s.len() as f64;
        Ok(CandidateResult {
            snap: s.render(),
            regmse: 10f64.powf(-value),
            value,
            failed: false,
            train_seed: 0,
            epochs: 0,
            wall_time_s: 0.0,
        })
    }

    fn jobs() -> Vec<SnapSequence> {
        ["C3", "C3 C1", "C3 C1 P3", "C1 C1 C1 C1", "B C3 M", "D3"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }

    #[test]
    fn results_follow_dispatch_order_and_failures_are_contained() {
        let one = evaluate_all(&toy, &jobs(), 1);
        let four = evaluate_all(&toy, &jobs(), 4);
        let strip = |v: &[Evaluated]| v.iter().map(|e| (e.result.clone(), e.error.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&one), strip(&four));
        assert_eq!(one[0].result.value, 1.0);
        assert_eq!(one[1].result.value, FAILED_VALUE);
        assert_eq!(one[1].error.as_deref(), Some("bad"));
        assert!(one[2].result.failed && one[2].error.as_deref() == Some("boom"));
        assert_eq!(one[3].result.value, 4.0);
    }

    #[test]
    fn cache_memoizes_by_text() {
        let cached = CachedEvaluator::new(toy);
        let s: SnapSequence = "C1 C1 C1 C1".parse().unwrap();
        let a = cached.evaluate(&s).unwrap();
        let b = cached.evaluate(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!((cached.hits(), cached.len()), (1, 1));
    }

    #[test]
    fn hash_is_stable() {
        let s: SnapSequence = "B C3 M".parse().unwrap();
        assert_eq!(snap_hash(&s), snap_hash(&"branch conv3 merge".parse().unwrap()));
        assert_ne!(snap_hash(&s), snap_hash(&"B C1 M".parse().unwrap()));
    }
}
