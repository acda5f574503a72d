//! Runs the synthetic open-set comparison and prints one line per seed.

use std::time::Instant;

use pointcam_cli::experiment::{self, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::default();
    let seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let seeds = if seeds.is_empty() { vec![0, 1, 2] } else { seeds };
    for seed in seeds {
        let t = Instant::now();
        let o = experiment::run(&cfg, seed)?;
        println!(
            "seed {seed}: baseline msp auroc {:.4} acc {:.4} | upe auroc {:.4} msp auroc {:.4} acc {:.4} ({:.1}s)",
            o.baseline_msp_auroc,
            o.baseline_accuracy,
            o.upe_auroc,
            o.pointcam_msp_auroc,
            o.pointcam_accuracy,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
