//! Search, baseline and full-training pipelines with their on-disk artifacts.
//!
//! A run directory holds `trace.csv`, `state.json`, the autoencoder
//! checkpoint (`ae.*`), `manifest.json` and `best_architecture.json`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use autosnap::autoencoder::{Autoencoder, EpochLosses};
use autosnap::net::{ArchitectureJson, MacroConfig, NetworkSpec, SnapNet};
use autosnap::pose::{build_dataset, evaluate_pose, regmse, train_network, Dataset, PoseMetrics};
use autosnap::search::{
    random_search, read_trace, run_search, store_from_rows, write_trace, CandidateStore, IterationLog, PoseEvaluator,
    SearchState,
};
use autosnap::snap::SnapSequence;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Search,
    Baseline,
}

/// Resumable progress next to the trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState {
    pub mode: Mode,
    pub config_hash: String,
    pub iteration: usize,
    pub log: Vec<IterationLog>,
    pub complete: bool,
}

pub const TRACE_FILE: &str = "trace.csv";
pub const STATE_FILE: &str = "state.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BEST_FILE: &str = "best_architecture.json";
pub const AE_STEM: &str = "ae";

fn io<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    // write-then-rename keeps checkpoints whole if the process dies mid-write
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    RunConfig::parse(&text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

pub fn build_env(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let t = Instant::now();
    let data = build_dataset(&cfg.env).map_err(|e| CliError::Domain(e.to_string()))?;
    log::info!(
        "environment: {} train / {} val / {} select patches, {} test scenes in {:.1?}",
        data.train.len(),
        data.val.len(),
        data.select.len(),
        data.test.len(),
        t.elapsed()
    );
    Ok(data)
}

pub fn evaluator(cfg: &RunConfig, data: Arc<Dataset>) -> PoseEvaluator {
    PoseEvaluator {
        data,
        macro_cfg: cfg.macro_cfg,
        train: cfg.candidate_train(),
    }
}

/// Training curve rows `epoch,ce,value_mse,cycle_mse`.
pub fn curve_csv(losses: &[EpochLosses]) -> String {
    let mut out = String::from("epoch,ce,value_mse,cycle_mse\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", i + 1, l.ce, l.value_mse, l.cycle_mse));
    }
    out
}

/// Pretrains a fresh autoencoder on a fixed random corpus.
pub fn pretrain_autoencoder(cfg: &RunConfig) -> Result<(Autoencoder<f32>, Vec<EpochLosses>), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ae_seed);
    let mut ae = Autoencoder::<f32>::new(cfg.ae, &mut rng);
    let curve = ae
        .pretrain(cfg.ae_pretrain_corpus, cfg.ae_pretrain_epochs, &mut rng, |epoch, l| {
            if epoch % 10 == 9 {
                log::info!("autoencoder epoch {}: ce {:.4} cycle {:.5}", epoch + 1, l.ce, l.cycle_mse);
            }
        })
        .map_err(|e| CliError::Domain(format!("autoencoder pretraining: {e}")))?;
    Ok((ae, curve))
}

/// Loads `ae_checkpoint` if it exists, otherwise pretrains and saves there
/// (or into the run directory when no checkpoint path is configured).
pub fn initial_autoencoder(cfg: &RunConfig) -> Result<Autoencoder<f32>, CliError> {
    if let Some(path) = &cfg.ae_checkpoint {
        if path.with_extension("config.json").exists() {
            let ae = Autoencoder::<f32>::load(path).map_err(|e| CliError::Domain(e.to_string()))?;
            if ae.cfg != cfg.ae {
                return Err(CliError::Domain(format!(
                    "{} was trained with {:?}, config asks for {:?}",
                    path.display(),
                    ae.cfg,
                    cfg.ae
                )));
            }
            log::info!("loaded autoencoder from {}", path.display());
            return Ok(ae);
        }
    }
    let (ae, curve) = pretrain_autoencoder(cfg)?;
    let stem = cfg.ae_checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("ae_pretrained"));
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    ae.save(&stem).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&stem.with_extension("curve.csv"), curve_csv(&curve).as_bytes())?;
    Ok(ae)
}

fn save_trace(dir: &Path, store: &CandidateStore) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_trace(store, &mut buf).map_err(|e| CliError::Domain(e.to_string()))?;
    write_file(&dir.join(TRACE_FILE), &buf)
}

pub fn load_trace(path: &Path) -> Result<CandidateStore, CliError> {
    let file = fs::File::open(path).map_err(io(path))?;
    let rows = read_trace(file).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    store_from_rows(&rows).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn read_state(dir: &Path) -> Result<RunState, CliError> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

/// Summary of a finished (or resumed-to-completion) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub store: CandidateStore,
    pub dir: PathBuf,
}

fn write_outputs(
    cfg: &RunConfig,
    mode: Mode,
    store: &CandidateStore,
    log: &[IterationLog],
    started: u64,
    elapsed_s: f64,
) -> Result<(), CliError> {
    let dir = &cfg.out_dir;
    let best = store.best().ok_or_else(|| CliError::Domain("no candidates were evaluated".into()))?;
    let arch = ArchitectureJson {
        snap: best.snap.render(),
        blocks_total: cfg.macro_cfg.blocks_total,
        width_pre: cfg.macro_cfg.width_pre,
        width_post: cfg.macro_cfg.width_post,
    };
    write_json(&dir.join(BEST_FILE), &arch)?;
    let mut artifacts = vec![TRACE_FILE, STATE_FILE, BEST_FILE, MANIFEST_FILE];
    if mode == Mode::Search {
        artifacts.extend(["ae.bin", "ae.json", "ae.config.json"]);
    }
    let config: serde_json::Map<String, serde_json::Value> = cfg
        .to_text()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    let manifest = json!({
        "mode": mode,
        "config": config,
        "config_sha256": cfg.content_hash(),
        "seeds": {
            "search": cfg.search.seed,
            "env": cfg.env.seed,
            "train": cfg.train_seed,
            "autoencoder": cfg.ae_seed,
        },
        "evaluations": store.len(),
        "failed": store.records().iter().filter(|r| r.failed).count(),
        "best": {
            "id": best.id,
            "snap": best.snap.render(),
            "value": best.value,
            "regmse": best.regmse,
        },
        "iterations": log,
        "artifacts": artifacts,
        "started_unix": started,
        "finished_unix": unix_now(),
        "elapsed_s": elapsed_s,
    });
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// `search run` and `search resume` for the latent-space search.
pub fn search(cfg: &RunConfig, resume: bool) -> Result<RunOutcome, CliError> {
    let started = unix_now();
    let t = Instant::now();
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let hash = cfg.content_hash();
    let mut state = if resume {
        let saved = read_state(&dir)?;
        check_resume(&saved, Mode::Search, &hash)?;
        let ae = Autoencoder::<f32>::load(&dir.join(AE_STEM)).map_err(|e| CliError::Domain(e.to_string()))?;
        let mut s = SearchState::new(cfg.search, ae);
        s.store = load_trace(&dir.join(TRACE_FILE))?;
        s.iteration = saved.iteration;
        s.log = saved.log;
        log::info!("resuming at iteration {} with {} evaluations", s.iteration, s.store.len());
        s
    } else {
        SearchState::new(cfg.search, initial_autoencoder(cfg)?)
    };
    let data = Arc::new(build_env(cfg)?);
    let eval = evaluator(cfg, data);
    let mut checkpoint = |s: &SearchState| -> Result<(), String> {
        let save = || -> Result<(), CliError> {
            save_trace(&dir, &s.store)?;
            s.ae.save(&dir.join(AE_STEM)).map_err(|e| CliError::Io(e.to_string()))?;
            write_json(
                &dir.join(STATE_FILE),
                &RunState {
                    mode: Mode::Search,
                    config_hash: hash.clone(),
                    iteration: s.iteration,
                    log: s.log.clone(),
                    complete: s.remaining() == 0,
                },
            )
        };
        save().map_err(|e| e.to_string())
    };
    run_search(&mut state, &eval, &mut checkpoint).map_err(|e| CliError::Domain(e.to_string()))?;
    checkpoint(&state).map_err(CliError::Io)?;
    write_outputs(cfg, Mode::Search, &state.store, &state.log, started, t.elapsed().as_secs_f64())?;
    Ok(RunOutcome { store: state.store, dir })
}

fn check_resume(saved: &RunState, mode: Mode, hash: &str) -> Result<(), CliError> {
    if saved.mode != mode {
        return Err(CliError::Domain(format!("checkpoint is a {:?} run", saved.mode)));
    }
    if saved.config_hash != hash {
        return Err(CliError::Domain("config differs from the one the checkpoint was written with".into()));
    }
    Ok(())
}

/// `search baseline` (and its resume): random search under the same protocol.
pub fn baseline(cfg: &RunConfig, resume: bool) -> Result<RunOutcome, CliError> {
    let started = unix_now();
    let t = Instant::now();
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let hash = cfg.content_hash();
    let mut store = if resume {
        check_resume(&read_state(&dir)?, Mode::Baseline, &hash)?;
        load_trace(&dir.join(TRACE_FILE))?
    } else {
        CandidateStore::new()
    };
    let data = Arc::new(build_env(cfg)?);
    let eval = evaluator(cfg, data);
    let budget = cfg.search.budget_total;
    let mut checkpoint = |s: &CandidateStore| -> Result<(), String> {
        let save = || -> Result<(), CliError> {
            save_trace(&dir, s)?;
            write_json(
                &dir.join(STATE_FILE),
                &RunState {
                    mode: Mode::Baseline,
                    config_hash: hash.clone(),
                    iteration: 0,
                    log: Vec::new(),
                    complete: s.len() >= budget,
                },
            )
        };
        save().map_err(|e| e.to_string())
    };
    random_search(&cfg.search, &mut store, &eval, &mut checkpoint).map_err(|e| CliError::Domain(e.to_string()))?;
    checkpoint(&store).map_err(CliError::Io)?;
    write_outputs(cfg, Mode::Baseline, &store, &[], started, t.elapsed().as_secs_f64())?;
    Ok(RunOutcome { store, dir })
}

/// `search resume`: continues whichever kind of run the directory holds.
pub fn resume(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    match read_state(&cfg.out_dir)?.mode {
        Mode::Search => search(cfg, true),
        Mode::Baseline => baseline(cfg, true),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// 8 blocks, 24/48 features.
    A,
    /// 8 blocks, 56/112 features.
    B,
}

impl Variant {
    pub fn macro_cfg(self) -> MacroConfig {
        match self {
            Variant::A => MacroConfig::snapnet_a(),
            Variant::B => MacroConfig::snapnet_b(),
        }
    }
}

/// Mean ± std cell as printed in result tables.
fn cell(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FullResult {
    pub snap: String,
    pub variant: String,
    pub param_count: usize,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub val_regmse: f64,
    pub one_iteration: PoseMetrics,
    pub three_iterations: PoseMetrics,
}

/// `train-full`: trains the 8-block network for an architecture and scores
/// pose estimation after one and three crop/predict/reconstruct rounds.
pub fn train_full(cfg: &RunConfig, arch: &ArchitectureJson, variant: Variant, out: &Path) -> Result<FullResult, CliError> {
    let seq = SnapSequence::parse(&arch.snap).map_err(|e| CliError::Domain(format!("architecture: {e}")))?;
    let size = cfg.env.patch.size;
    let macro_cfg = variant.macro_cfg().with_input_size(size);
    let spec = NetworkSpec::from_snap(&seq, &macro_cfg).map_err(|e| CliError::Domain(e.to_string()))?;
    let data = build_env(cfg)?;
    let train = cfg.full_train();
    let mut net = SnapNet::<f32>::instantiate(&spec, &mut ChaCha8Rng::seed_from_u64(cfg.full_seed));
    log::info!("training {} ({:?}, {} parameters) for {} epochs", arch.snap, variant, net.param_count(), train.epochs);
    let outcome = train_network(&mut net, &data.train, size, &train).map_err(|e| CliError::Domain(e.to_string()))?;
    let val = regmse(&mut net, &data.val, size).map_err(|e| CliError::Domain(e.to_string()))?;
    let pose = |net: &mut SnapNet<f32>, k| {
        evaluate_pose(net, &data.test, cfg.env.patch, k).map_err(|e| CliError::Domain(e.to_string()))
    };
    let one = pose(&mut net, 1)?;
    let three = pose(&mut net, 3)?;
    let result = FullResult {
        snap: arch.snap.clone(),
        variant: format!("{variant:?}"),
        param_count: net.param_count(),
        epochs: train.epochs,
        final_train_loss: outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
        val_regmse: val,
        one_iteration: one,
        three_iterations: three,
    };
    fs::create_dir_all(out).map_err(io(out))?;
    net.params
        .save(&out.join("model"))
        .map_err(|e| CliError::Io(e.to_string()))?;
    let bn: Vec<(Vec<f32>, Vec<f32>)> = net.bn_stats();
    write_json(&out.join("model.bn.json"), &bn)?;
    write_json(&out.join("architecture.json"), arch)?;
    let table = json!({
        "1": {
            "position_mm": cell(result.one_iteration.position_mm_mean, result.one_iteration.position_mm_std),
            "angle_deg": cell(result.one_iteration.angle_deg_mean, result.one_iteration.angle_deg_std),
        },
        "3": {
            "position_mm": cell(result.three_iterations.position_mm_mean, result.three_iterations.position_mm_std),
            "angle_deg": cell(result.three_iterations.angle_deg_mean, result.three_iterations.angle_deg_std),
        },
    });
    write_json(
        &out.join("metrics.json"),
        &json!({ "table": table, "detail": &result, "config_sha256": cfg.content_hash() }),
    )?;
    Ok(result)
}

/// A missing or unreadable architecture is a domain error (exit 1).
pub fn read_architecture(path: &Path) -> Result<ArchitectureJson, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Domain(format!("architecture {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    use std::io::Write;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let f = fs::File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(f);
    w.write_all(text.as_bytes()).map_err(io(path))?;
    w.flush().map_err(io(path))
}
