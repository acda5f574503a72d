//! Command-line harness: synthesize data, simulate unknowns, train, evaluate, score.

pub mod commands;
pub mod experiment;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use pointcam::train::ScoreFn;
use pointcam::ups::Generator;

#[derive(Debug, Parser)]
#[command(name = "pointcam", version, about = "Open-set point cloud training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic shape dataset and a matching split file.
    Synth {
        /// Synthesis settings (JSON); defaults to four shapes, 50 samples of 512 points.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Simulate unknown points in one labeled-points file.
    Augment {
        /// Input cloud, `x y z [r g b] [label]` rows.
        #[arg(long)]
        input: PathBuf,
        /// Simulator parameters (JSON); defaults to the segmentation setting.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        generator: Option<GeneratorArg>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train a model; writes a checkpoint and a per-epoch log.
    Train {
        /// Run configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        generator: Option<GeneratorArg>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score the evaluation split with a trained model.
    Eval {
        /// Output directory of a `train` run.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "upe")]
        score_fn: ScoreFnArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Recompute the open-set metrics of a scores CSV.
    Metrics {
        #[arg(long)]
        scores: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Cutmix,
    Rotation,
    Translation,
    Scaling,
    Noise,
}

impl GeneratorArg {
    pub fn generator(self) -> Generator {
        match self {
            GeneratorArg::Cutmix => Generator::default(),
            GeneratorArg::Rotation => Generator::rotation_default(),
            GeneratorArg::Translation => Generator::translation_default(),
            GeneratorArg::Scaling => Generator::scaling_default(),
            GeneratorArg::Noise => Generator::noise_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreFnArg {
    Msp,
    Maxlogit,
    Upe,
}

impl From<ScoreFnArg> for ScoreFn {
    fn from(s: ScoreFnArg) -> Self {
        match s {
            ScoreFnArg::Msp => ScoreFn::Msp,
            ScoreFnArg::Maxlogit => ScoreFn::MaxLogit,
            ScoreFnArg::Upe => ScoreFn::Upe,
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { config, seed, out, force } => commands::synth(config.as_deref(), seed, &out, force),
        Command::Augment {
            input,
            config,
            generator,
            seed,
            out,
            force,
        } => commands::augment(&input, config.as_deref(), generator.map(GeneratorArg::generator), seed, &out, force),
        Command::Train {
            config,
            seed,
            generator,
            out,
            force,
        } => commands::train(&config, seed, generator.map(GeneratorArg::generator), &out, force),
        Command::Eval {
            run,
            score_fn,
            out,
            force,
        } => commands::eval(&run, score_fn.into(), &out, force),
        Command::Metrics { scores, out } => commands::metrics(&scores, out.as_deref()),
    }
}
