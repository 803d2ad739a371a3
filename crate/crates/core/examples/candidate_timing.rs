//! Times candidate evaluation for a few blocks.
//!
//! `cargo run --release --example candidate_timing -- [width_pre] [width_post] [epochs] [n_train]`

use std::time::Instant;

use autosnap::net::MacroConfig;
use autosnap::pose::{build_dataset, evaluate_candidate, EnvConfig, TrainConfig};
use autosnap::snap::SnapSequence;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let arg = |i: usize, d: usize| args.get(i).copied().unwrap_or(d);
    let (wp, wq, epochs, n_train) = (arg(0, 8), arg(1, 16), arg(2, 5), arg(3, 2000));
    let env = EnvConfig {
        n_train,
        ..EnvConfig::micro()
    };
    let t = Instant::now();
    let data = build_dataset(&env).expect("dataset");
    println!("dataset: {} train samples in {:.2?}", data.train.len(), t.elapsed());
    let macro_cfg = MacroConfig::new(4, wp, wq);
    for snap in ["C3", "B C3 M", "S3 B D3 C1 M", "B B C3 X S3 M P3 M", "P3", "C1 C1"] {
        let seq = SnapSequence::parse(snap).unwrap();
        let r = evaluate_candidate::<f32>(&seq, &data, &macro_cfg, &TrainConfig::candidate(epochs, 1)).unwrap();
        println!(
            "{snap:>22}: regmse {:.5} value {:.3} in {:.2}s",
            r.regmse, r.value, r.wall_time_s
        );
    }
}
