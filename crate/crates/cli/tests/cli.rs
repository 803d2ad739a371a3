use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn autosnap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autosnap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
n_initial = 3
n_per_iteration = 3
budget_total = 7
elite_batch = 2
ascent_limit = 10
retrain_epochs = 1
n_train = 20
n_eval = 3
blocks_total = 2
width_pre = 2
width_post = 4
candidate_epochs = 1
ae_hidden = 4
ae_dense = 8
ae_latent = 4
ae_pretrain_epochs = 1
ae_pretrain_corpus = 20
full_epochs = 1
";

fn tiny_config(dir: &Path, name: &str, extra: &str) -> String {
    let path = dir.join(format!("{name}.cfg"));
    let text = format!("{TINY}out_dir = {}\n{extra}", dir.join(name).display());
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn snap_validate_reports_and_sets_exit_code() {
    let ok = autosnap(&["snap", "validate", "B C3 M"]);
    assert_eq!(stdout(&ok).trim(), "VALID");
    assert_eq!(ok.status.code(), Some(0));
    let bad = autosnap(&["snap", "validate", "M M"]);
    assert_eq!(stdout(&bad).trim(), "INVALID UnderflowMerge@1");
    assert_eq!(bad.status.code(), Some(1));
    let lexical = autosnap(&["snap", "validate", "C3 Q"]);
    assert!(stdout(&lexical).starts_with("INVALID"));
    assert_eq!(lexical.status.code(), Some(1));
}

#[test]
fn snap_random_is_seeded() {
    let a = autosnap(&["snap", "random", "-n", "5", "--seed", "7"]);
    let b = autosnap(&["snap", "random", "-n", "5", "--seed", "7"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 5);
    for line in stdout(&a).lines() {
        assert_eq!(stdout(&autosnap(&["snap", "validate", line])).trim(), "VALID");
    }
}

#[test]
fn snap_compile_and_dot() {
    let c = autosnap(&["snap", "compile", "B C3 M"]);
    assert_eq!(c.status.code(), Some(0));
    let text = stdout(&c);
    assert!(text.contains("bn_relu_conv3"), "{text}");
    assert!(text.trim_end().lines().last().unwrap().starts_with("output n"));
    let dir = tempfile::tempdir().unwrap();
    let dot = dir.path().join("b.dot");
    let d = autosnap(&["snap", "dot", "B C3 M", "-o", dot.to_str().unwrap()]);
    assert_eq!(d.status.code(), Some(0));
    assert!(fs::read_to_string(&dot).unwrap().starts_with("digraph"));
    assert_eq!(autosnap(&["snap", "compile", "M M"]).status.code(), Some(1));
}

#[test]
fn env_render_writes_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.pgm");
    let patch = dir.path().join("p.pgm");
    let o = autosnap(&[
        "env",
        "render",
        "--seed",
        "3",
        "-o",
        scene.to_str().unwrap(),
        "--patch",
        patch.to_str().unwrap(),
        "--patch-size",
        "16",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(fs::read(&scene).unwrap().starts_with(b"P5\n64 64\n255\n"));
    assert!(fs::read(&patch).unwrap().starts_with(b"P5\n16 16\n255\n"));
    assert!(stdout(&o).contains("estimate"));
    let off = autosnap(&["env", "render", "--pose", "1,1,0", "-o", scene.to_str().unwrap()]);
    assert_eq!(off.status.code(), Some(1));
}

#[test]
fn config_errors_exit_1_with_line_and_missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\nwidth = 3\n").unwrap();
    let o = autosnap(&["search", "run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
    let missing = autosnap(&["search", "run", dir.path().join("nope.cfg").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn report_rejects_malformed_rows_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,snap,value,regmse,source,wall_time_s\n0,C3,1,0.1,initial,0\n1,C1,1,0.1,sideways,0\n").unwrap();
    let o = autosnap(&["report", bad.to_str().unwrap(), "-o", dir.path().join("r.svg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}

#[test]
fn search_baseline_report_and_resume_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run_cfg = tiny_config(d, "search", "");
    let o = autosnap(&["search", "run", &run_cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = fs::read_to_string(d.join("search/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 8);
    assert!(trace.starts_with("id,snap,value,regmse,source,wall_time_s\n"));
    for f in ["manifest.json", "best_architecture.json", "state.json", "ae.bin", "ae_pretrained.curve.csv"] {
        assert!(d.join("search").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("search/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["evaluations"], 7);

    // same config again gives the same bytes
    let again_cfg = tiny_config(d, "again", "");
    assert_eq!(autosnap(&["search", "run", &again_cfg]).status.code(), Some(0));
    assert_eq!(fs::read(d.join("again/trace.csv")).unwrap(), trace.as_bytes());

    // rewind the second run to its post-initial checkpoint and resume
    let again = d.join("again");
    let head: Vec<&str> = trace.lines().take(4).collect();
    fs::write(again.join("trace.csv"), head.join("\n") + "\n").unwrap();
    for ext in ["bin", "json", "config.json"] {
        fs::copy(again.join(format!("ae_pretrained.{ext}")), again.join(format!("ae.{ext}"))).unwrap();
    }
    let mut state: serde_json::Value = serde_json::from_str(&fs::read_to_string(again.join("state.json")).unwrap()).unwrap();
    state["iteration"] = 0.into();
    state["log"] = serde_json::json!([]);
    state["complete"] = false.into();
    fs::write(again.join("state.json"), state.to_string()).unwrap();
    let r = autosnap(&["search", "resume", &again_cfg]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    assert_eq!(fs::read_to_string(again.join("trace.csv")).unwrap(), trace);

    let base_cfg = tiny_config(d, "random", "");
    let b = autosnap(&["search", "baseline", &base_cfg]);
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let base = fs::read_to_string(d.join("random/trace.csv")).unwrap();
    assert_eq!(base.lines().count(), 8);
    assert!(base.lines().skip(1).all(|l| l.contains(",random_baseline,")));
    // shared initial population
    let strip = |l: &str| l.split(',').take(4).collect::<Vec<_>>().join(",");
    for (a, b) in trace.lines().zip(base.lines()).skip(1).take(3) {
        assert_eq!(strip(a), strip(b));
    }

    let svg = d.join("report.svg");
    let rep = autosnap(&[
        "report",
        d.join("search/trace.csv").to_str().unwrap(),
        d.join("random/trace.csv").to_str().unwrap(),
        "-o",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(rep.status.code(), Some(0), "{}", stderr(&rep));
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<polyline").count(), 2);
    assert!(stdout(&rep).contains("would rank #"));

    // a config change is refused on resume
    let changed = tiny_config(d, "again", "seed = 5\n");
    assert_eq!(autosnap(&["search", "resume", &changed]).status.code(), Some(1));

    let full = d.join("full");
    let t = autosnap(&[
        "train-full",
        "--arch",
        d.join("search/best_architecture.json").to_str().unwrap(),
        "--config",
        &run_cfg,
        "-o",
        full.to_str().unwrap(),
    ]);
    assert_eq!(t.status.code(), Some(0), "{}", stderr(&t));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(full.join("metrics.json")).unwrap()).unwrap();
    for k in ["1", "3"] {
        for m in ["position_mm", "angle_deg"] {
            assert!(metrics["table"][k][m].as_str().unwrap().contains(" ± "));
        }
    }
    let missing = autosnap(&["train-full", "--arch", d.join("none.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}
