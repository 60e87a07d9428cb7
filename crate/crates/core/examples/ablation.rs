//! Quality × cost predictor ablation on a synthetic pool.
//!
//! Usage: `cargo run --release --example ablation -- [seed] [n] [r1|r2]`

use std::time::Instant;

use costroute::experiment::{run_ablation, ExperimentConfig, ABLATION_ARCHS};
use costroute::{RewardFamily, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(Ok(0), |s| s.parse())?;
    let n: usize = args.get(1).map_or(Ok(2000), |s| s.parse())?;
    let reward: RewardFamily = args.get(2).map_or(Ok(RewardFamily::Exponential), |s| s.parse())?;

    let cfg = ExperimentConfig {
        seed,
        reward,
        synth: Some(SynthSpec { n, ..SynthSpec::default() }),
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let grid = run_ablation(&cfg, &ABLATION_ARCHS)?;
    print!("{}", grid.to_text());
    println!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
