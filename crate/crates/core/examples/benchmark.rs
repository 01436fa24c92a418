//! Reruns the phantom benchmark grid (GP and bidirectional flags over three
//! seeds) and writes the results as JSON.
//!
//! cargo run --release --example benchmark -- reference/phantom_benchmark.json [EPOCHS]

use gptrack::benchmark::{Benchmark, BenchmarkResult};
use gptrack::trainer::TrainConfig;
use rayon::prelude::*;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "phantom_benchmark.json".into());
    let epochs: Option<usize> = std::env::args().nth(2).map(|e| e.parse()).transpose()?;
    let bench = Benchmark::default();
    let mut configs = Vec::new();
    for seed in 0..3 {
        for (gp, bidirectional) in [(true, true), (true, false), (false, true), (false, false)] {
            configs.push(TrainConfig {
                seed,
                gp,
                bidirectional,
                epochs: epochs.unwrap_or(TrainConfig::default().epochs),
                ..TrainConfig::default()
            });
        }
    }
    let results: Vec<BenchmarkResult> = configs
        .par_iter()
        .map(|c| {
            let r = bench.run(c)?;
            eprintln!(
                "seed {} gp {:5} bi {:5}: dice {:.4} folded {:.5} endpoint {:.3} loss {:.2} -> {:.2} ({:.0}s)",
                r.seed, r.gp, r.bidirectional, r.mean_dice, r.frac_nonpos, r.endpoint_error, r.initial_loss, r.final_loss, r.seconds
            );
            Ok(r)
        })
        .collect::<anyhow::Result<_>>()?;
    let doc = serde_json::json!({
        "benchmark": bench,
        "endpoint_bound": bench.endpoint_bound(),
        "config": TrainConfig::default(),
        "runs": results,
    });
    std::fs::write(&out, serde_json::to_string_pretty(&doc)?)?;
    println!("wrote {out}");
    Ok(())
}
