use super::*;
use crate::autoencoder::AeConfig;
use crate::pose::CandidateResult;
use crate::snap::SnapSymbol;

fn small_ae(seed: u64) -> Autoencoder<f32> {
    let cfg = AeConfig {
        hidden: 8,
        dense: 16,
        latent: 4,
        batch_size: 16,
        ..AeConfig::default()
    };
    Autoencoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn small_cfg() -> SearchConfig {
    SearchConfig {
        n_initial: 12,
        n_per_iteration: 10,
        budget_total: 37,
        elite_batch: 4,
        retrain_epochs: 2,
        seed: 9,
        ..SearchConfig::default()
    }
}

/// Rewards dense 3x3 convolutions and penalizes length.
fn toy(s: &SnapSequence) -> Result<CandidateResult, String> {
    let conv = s.symbols().iter().filter(|x| **x == SnapSymbol::Conv3).count() as f64;
    let value = conv - 0.1 * s.len() as f64;
    Ok(CandidateResult {
        snap: s.render(),
        regmse: 10f64.powf(-value),
        value,
        failed: false,
        train_seed: snap_hash(s),
        epochs: 0,
        wall_time_s: 0.0,
    })
}

fn trace_bytes(store: &CandidateStore) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace(store, &mut buf).unwrap();
    buf
}

fn run(cfg: SearchConfig) -> SearchState {
    let mut state = SearchState::new(cfg, small_ae(1));
    run_search(&mut state, &toy, &mut |_| Ok(())).unwrap();
    state
}

#[test]
fn budget_is_spent_exactly_without_duplicates() {
    let state = run(small_cfg());
    assert_eq!(state.store.len(), 37);
    let texts: std::collections::HashSet<String> = state.store.records().iter().map(|r| r.snap.render()).collect();
    assert_eq!(texts.len(), 37);
    assert!(state.store.best_so_far().windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(state.log.iter().map(|l| l.evaluated).sum::<usize>(), 25);
    // a short iteration either hit the attempt cap or was cut to the remaining budget
    let (last, rest) = state.log.split_last().unwrap();
    assert!(rest.iter().all(|l| l.evaluated == 10 || l.cap_reached));
    assert!(last.evaluated <= 10);
    assert!(state.store.records()[..12].iter().all(|r| r.source == Source::Initial));
    assert!(state.store.records()[12..].iter().all(|r| r.source != Source::Initial));
}

#[test]
fn single_worker_runs_are_byte_identical() {
    assert_eq!(trace_bytes(&run(small_cfg()).store), trace_bytes(&run(small_cfg()).store));
}

#[test]
fn worker_count_does_not_change_candidates_or_values() {
    let one = run(small_cfg());
    let four = run(SearchConfig {
        worker_count: 4,
        ..small_cfg()
    });
    assert_eq!(trace_bytes(&one.store), trace_bytes(&four.store));
}

#[test]
fn resume_matches_the_uninterrupted_run() {
    let full = run(small_cfg());
    let mut snapshot = None;
    let mut state = SearchState::new(small_cfg(), small_ae(1));
    let _ = run_search(&mut state, &toy, &mut |s| {
        if s.iteration == 1 {
            snapshot = Some((s.store.records().to_vec(), s.ae.params.clone(), s.iteration));
            return Err("stop".into());
        }
        Ok(())
    });
    let (records, params, iteration) = snapshot.expect("checkpoint after first iteration");
    let mut resumed = SearchState::new(small_cfg(), small_ae(99));
    resumed.ae.params = params;
    resumed.store = CandidateStore::from_records(records).unwrap();
    resumed.iteration = iteration;
    run_search(&mut resumed, &toy, &mut |_| Ok(())).unwrap();
    assert_eq!(trace_bytes(&resumed.store), trace_bytes(&full.store));
}

#[test]
fn random_search_shares_the_initial_population() {
    let cfg = small_cfg();
    let search = run(cfg);
    let mut store = CandidateStore::new();
    random_search(&cfg, &mut store, &toy, &mut |_| Ok(())).unwrap();
    assert_eq!(store.len(), cfg.budget_total);
    for (a, b) in store.records().iter().zip(search.store.records()).take(cfg.n_initial) {
        assert_eq!((&a.snap, a.value), (&b.snap, b.value));
    }
    assert!(store.records().iter().all(|r| r.source == Source::RandomBaseline));
    // continuing a partial baseline lands on the same store
    let mut partial = CandidateStore::from_records(store.records()[..15].to_vec()).unwrap();
    random_search(&cfg, &mut partial, &toy, &mut |_| Ok(())).unwrap();
    assert_eq!(partial, store);
}

#[test]
fn one_ascent_step_follows_the_value_weights() {
    let ae = small_ae(3);
    let w = ae.value_gradient();
    let cfg = SearchConfig {
        ascent_limit: 3,
        ..small_cfg()
    };
    let z0 = vec![0.2, -0.99, 0.5, 1.0];
    let mut attempts = 100;
    let a = ascend(&z0, &ae, &|_| true, &cfg, &mut attempts).unwrap();
    assert_eq!(a.outcome, AscentOutcome::Exhausted);
    assert_eq!(a.visited.len(), 4);
    assert_eq!(attempts, 96);
    for i in 0..4 {
        let expect = (z0[i] + 0.05 * w[i]).clamp(-1.0, 1.0);
        assert!((a.visited[1][i] - expect).abs() < 1e-12);
    }
}

#[test]
fn ascent_stops_at_the_first_novel_decode() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ae = small_ae(4);
    let known: Vec<(SnapSequence, f64)> = (0..32)
        .map(|i| (random_snap(&mut rng, RANDOM_LEN).unwrap(), i as f64 / 32.0))
        .collect();
    ae.retrain(&known, 5, &mut rng).unwrap();
    let cfg = small_cfg();
    for _ in 0..20 {
        let z0 = random_latent(&mut rng, 4);
        let start = ae.hard_decode(std::slice::from_ref(&z0)).unwrap().pop().unwrap();
        let mut attempts = 1000;
        let a = ascend(&z0, &ae, &|_| false, &cfg, &mut attempts).unwrap();
        match start {
            Decoded::Valid(seq) => assert_eq!(a.outcome, AscentOutcome::NewSnap { seq, steps: 0 }),
            Decoded::Invalid(_) => assert!(!matches!(a.outcome, AscentOutcome::NewSnap { steps: 0, .. })),
        }
        assert!(a.visited.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn attempt_cap_is_reported() {
    let ae = small_ae(5);
    let mut attempts = 2;
    let a = ascend(&[0.0; 4], &ae, &|_| true, &small_cfg(), &mut attempts).unwrap();
    assert_eq!(a.outcome, AscentOutcome::CapReached);
    assert_eq!((a.visited.len(), attempts), (2, 0));
}

#[test]
fn config_checks() {
    assert!(small_cfg().check().is_ok());
    for bad in [
        SearchConfig {
            n_initial: 50,
            budget_total: 40,
            ..small_cfg()
        },
        SearchConfig {
            ascent_limit: 0,
            ..small_cfg()
        },
        SearchConfig {
            ascent_step: -0.1,
            ..small_cfg()
        },
    ] {
        assert!(bad.check().is_err());
    }
}
