use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use autosnap::pose::{crop, render_scene, to_pgm, PatchSpec, Pose, POSITION_RANGE, SCENE_SIZE};
use autosnap::search::Evaluator;
use autosnap::snap::{build_block_graph, export_dot, random_snap, SnapSequence, RANDOM_LEN};
use autosnap_cli::config::RunConfig;
use autosnap_cli::report::{render_svg, summary, Series};
use autosnap_cli::run::{self, Variant};
use autosnap_cli::CliError;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "autosnap", version, about = "Stack-machine architecture search for pose regression")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Work with block programs.
    #[command(subcommand)]
    Snap(SnapCmd),
    /// Render scenes or score one architecture on the pose environment.
    #[command(subcommand)]
    Env(EnvCmd),
    /// Latent-space search, random baseline and resume.
    #[command(subcommand)]
    Search(SearchCmd),
    /// Train an 8-block network for a found architecture and score poses.
    TrainFull {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long, value_enum, default_value = "a")]
        variant: VariantArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value = "full")]
        out: PathBuf,
    },
    /// Plot best-so-far curves and summarize one or more traces.
    Report {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(short, long, default_value = "report.svg")]
        out: PathBuf,
        /// Also write the summary here (it is always printed).
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
}

#[derive(Subcommand)]
enum SnapCmd {
    /// Prints VALID or INVALID with the failure reason and position.
    Validate { text: String },
    /// Prints the block graph's nodes.
    Compile { text: String },
    /// Writes the block graph in DOT format.
    Dot {
        text: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Samples random valid programs, one per line.
    Random {
        #[arg(short, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EnvCmd {
    /// Renders a scene (and the crop around its initial estimate) as PGM.
    Render {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `x,y,angle` in scene pixels and degrees; random if omitted.
        #[arg(long)]
        pose: Option<String>,
        #[arg(short, long, default_value = "scene.pgm")]
        out: PathBuf,
        #[arg(long)]
        patch: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        patch_size: usize,
    },
    /// Trains and scores one architecture as the search would.
    Eval {
        text: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SearchCmd {
    Run { config: PathBuf },
    Baseline { config: PathBuf },
    Resume { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    A,
    B,
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn config_or_default(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => run::load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => run::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn snap(cmd: SnapCmd) -> Result<(), CliError> {
    match cmd {
        SnapCmd::Validate { text } => {
            let seq = SnapSequence::parse(&text).map_err(|e| {
                println!("INVALID {e}");
                CliError::Domain(format!("{text:?} does not parse"))
            })?;
            let v = seq.validate();
            if v.valid {
                println!("VALID");
                Ok(())
            } else {
                println!("INVALID {v}");
                Err(CliError::Domain(format!("{text:?} is not a valid program")))
            }
        }
        SnapCmd::Compile { text } => {
            let seq = SnapSequence::parse(&text).map_err(domain)?;
            let g = build_block_graph(&seq).map_err(domain)?;
            for n in &g.nodes {
                let preds: Vec<String> = n.predecessors.iter().map(|p| format!("n{p}")).collect();
                if preds.is_empty() {
                    println!("n{} {}", n.id, n.kind.name());
                } else {
                    println!("n{} {} <- {}", n.id, n.kind.name(), preds.join(", "));
                }
            }
            println!("output n{}", g.output_id);
            Ok(())
        }
        SnapCmd::Dot { text, out } => {
            let seq = SnapSequence::parse(&text).map_err(domain)?;
            let g = build_block_graph(&seq).map_err(domain)?;
            emit(&out, &export_dot(&g))
        }
        SnapCmd::Random { n, seed, out } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut text = String::new();
            for _ in 0..n {
                text.push_str(&random_snap(&mut rng, RANDOM_LEN).map_err(domain)?.render());
                text.push('\n');
            }
            emit(&out, &text)
        }
    }
}

fn parse_pose(text: &str) -> Result<Pose, CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Domain(format!("pose must be x,y,angle, got {text:?}")))?;
    match parts[..] {
        [x, y, a] => Ok(Pose::new(x, y, a)),
        _ => Err(CliError::Domain(format!("pose must be x,y,angle, got {text:?}"))),
    }
}

fn env(cmd: EnvCmd) -> Result<(), CliError> {
    match cmd {
        EnvCmd::Render {
            seed,
            pose,
            out,
            patch,
            patch_size,
        } => {
            let pose = match pose {
                Some(p) => parse_pose(&p)?,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let (lo, hi) = POSITION_RANGE;
                    Pose::new(
                        rng.random_range(lo..=hi),
                        rng.random_range(lo..=hi),
                        rng.random_range(0.0..360.0),
                    )
                }
            };
            let scene = render_scene(&pose, seed).map_err(domain)?;
            run::write_file(&out, &to_pgm(&scene.image, SCENE_SIZE, SCENE_SIZE))?;
            if let Some(p) = patch {
                let spec = match patch_size {
                    32 => PatchSpec::full(),
                    16 => PatchSpec::half(),
                    other => return Err(CliError::Domain(format!("patch size must be 16 or 32, got {other}"))),
                };
                let img = crop(&scene.image, &scene.estimate, spec);
                run::write_file(&p, &to_pgm(&img, spec.size, spec.size))?;
            }
            let info = serde_json::json!({ "seed": seed, "truth": scene.truth, "estimate": scene.estimate });
            println!("{}", serde_json::to_string_pretty(&info).expect("json"));
            Ok(())
        }
        EnvCmd::Eval { text, config } => {
            let cfg = config_or_default(&config)?;
            let seq = SnapSequence::parse(&text).map_err(domain)?;
            let v = seq.validate();
            if !v.valid {
                return Err(CliError::Domain(format!("{text:?} is not a valid program ({v})")));
            }
            let data = std::sync::Arc::new(run::build_env(&cfg)?);
            let result = run::evaluator(&cfg, data).evaluate(&seq).map_err(CliError::Domain)?;
            println!("{}", serde_json::to_string_pretty(&result).expect("json"));
            Ok(())
        }
    }
}

fn search(cmd: SearchCmd) -> Result<(), CliError> {
    let (path, outcome) = match cmd {
        SearchCmd::Run { config } => {
            let cfg = run::load_config(&config)?;
            (config, run::search(&cfg, false)?)
        }
        SearchCmd::Baseline { config } => {
            let cfg = run::load_config(&config)?;
            (config, run::baseline(&cfg, false)?)
        }
        SearchCmd::Resume { config } => {
            let cfg = run::load_config(&config)?;
            (config, run::resume(&cfg)?)
        }
    };
    let best = outcome.store.best().expect("finished runs have candidates");
    println!(
        "{}: {} evaluations, best {:.4} ({}), outputs in {}",
        path.display(),
        outcome.store.len(),
        best.value,
        best.snap,
        outcome.dir.display()
    );
    Ok(())
}

fn label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    match path.parent().and_then(|p| p.file_name()) {
        Some(dir) if stem == "trace" => dir.to_string_lossy().to_string(),
        _ => stem,
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Snap(cmd) => snap(cmd),
        Command::Env(cmd) => env(cmd),
        Command::Search(cmd) => search(cmd),
        Command::TrainFull {
            arch,
            variant,
            config,
            out,
        } => {
            let cfg = config_or_default(&config)?;
            let arch = run::read_architecture(&arch)?;
            let variant = match variant {
                VariantArg::A => Variant::A,
                VariantArg::B => Variant::B,
            };
            let r = run::train_full(&cfg, &arch, variant, &out)?;
            println!(
                "{} ({:?}, {} parameters): 1 iteration {:.3} mm / {:.3} deg, 3 iterations {:.3} mm / {:.3} deg",
                r.snap,
                variant,
                r.param_count,
                r.one_iteration.position_mm_mean,
                r.one_iteration.angle_deg_mean,
                r.three_iterations.position_mm_mean,
                r.three_iterations.angle_deg_mean
            );
            Ok(())
        }
        Command::Report {
            traces,
            out,
            summary: summary_path,
            top_k,
        } => {
            let series = traces
                .iter()
                .map(|p| {
                    Ok(Series {
                        label: label(p),
                        store: run::load_trace(p)?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            run::write_text(&out, &render_svg(&series))?;
            let text = summary(&series, top_k);
            print!("{text}");
            if let Some(p) = summary_path {
                run::write_text(&p, &text)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
