//! Trains on the planted synthetic benchmark and compares the model with
//! BM25 and the uniform-attention ablation on the test split.
//!
//! cargo run --release -p tracedr --example planted [seed]

use tracedr::experiment::{planted_data, run};
use tracedr_benchgen::{planted_gen_config, SynthConfig};
use tracedr_core::gnn::{Preset, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let kg = SynthConfig {
        seed,
        ..SynthConfig::planted()
    };
    let data = planted_data(&kg, &planted_gen_config(seed))?;
    let config = TrainConfig {
        seed,
        ..TrainConfig::preset(Preset::Desk)
    };
    let (report, _) = run(&data, &config)?;
    println!("{:<8}{:>8}{:>8}{:>8}{:>8}", "", "f1", "jaccard", "ddi", "ap");
    for (name, m) in [("model", report.model), ("uniform", report.uniform), ("bm25", report.bm25)] {
        println!("{name:<8}{:>8.4}{:>8.4}{:>8.4}{:>8.4}", m.f1, m.jaccard, m.ddi, m.average_precision);
    }
    println!("{:.0}s", report.seconds);
    Ok(())
}
