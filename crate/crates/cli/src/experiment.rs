//! Desk-scale open-set comparison on synthetic shapes.
//!
//! A plain classifier scored by MSP is compared with the same backbone
//! trained with sample mixing and the unknown-score estimator.

use pointcam::data::{apply_split, synth_shapes, SplitConfig, SynthSpec};
use pointcam::network::{BackboneConfig, ModelConfig, Task, UpeConfig};
use pointcam::train::{self, OptimConfig, ScoreFn, TrainConfig};
use pointcam::ups::UpsParams;
use pointcam::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthSpec,
    pub split: SplitConfig,
    pub level_widths: Vec<usize>,
    pub level_fractions: Vec<f64>,
    pub head_hidden: usize,
    pub upe_hidden: usize,
    pub alpha: f64,
    pub ups: UpsParams,
    pub optim: OptimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            split: SplitConfig::synthetic_default(),
            level_widths: vec![32, 64, 128],
            level_fractions: vec![1.0, 0.5, 0.25],
            head_hidden: 64,
            upe_hidden: 32,
            alpha: 1.0,
            ups: UpsParams::classification_default(),
            optim: OptimConfig {
                lr: 1e-3,
                epochs: 30,
                batch_size: 2,
            },
        }
    }
}

impl ExperimentConfig {
    fn train_config(&self, with_upe: bool, seed: u64) -> TrainConfig {
        let mut backbone = BackboneConfig::new(self.split.known.len(), Task::Classification);
        backbone.level_widths = self.level_widths.clone();
        backbone.level_fractions = self.level_fractions.clone();
        backbone.head_hidden = self.head_hidden;
        backbone.unknown_logit = with_upe;
        TrainConfig {
            model: ModelConfig {
                backbone,
                upe: with_upe.then(|| UpeConfig {
                    hidden: self.upe_hidden,
                    ..UpeConfig::new(self.alpha)
                }),
            },
            ups: with_upe.then(|| self.ups.clone()),
            optim: self.optim.clone(),
            points_per_sample: self.synth.points_per_sample,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub baseline_msp_auroc: f64,
    pub baseline_accuracy: f64,
    pub upe_auroc: f64,
    pub pointcam_msp_auroc: f64,
    pub pointcam_accuracy: f64,
}

/// Trains both models for one seed and scores the held-out split.
pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentOutcome> {
    let ds = synth_shapes(&cfg.synth, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let split = apply_split(&ds, &cfg.split)?;
    let n_c = split.num_known();

    let (baseline, _) = train::fit(&split, &cfg.train_config(false, seed))?;
    let base = train::evaluate(&baseline, &split.eval, n_c, ScoreFn::Msp)?;

    let (pointcam, _) = train::fit(&split, &cfg.train_config(true, seed))?;
    let upe = train::evaluate(&pointcam, &split.eval, n_c, ScoreFn::Upe)?;
    let msp = train::evaluate(&pointcam, &split.eval, n_c, ScoreFn::Msp)?;

    let get = |v: Option<f64>| v.unwrap_or(f64::NAN);
    Ok(ExperimentOutcome {
        seed,
        baseline_msp_auroc: get(base.report.auroc),
        baseline_accuracy: get(base.report.accuracy_sample),
        upe_auroc: get(upe.report.auroc),
        pointcam_msp_auroc: get(msp.report.auroc),
        pointcam_accuracy: get(upe.report.accuracy_sample),
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
