//! Command implementations. Every command writes into its own output
//! directory; wall-clock data goes only to `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use pointcam::data::{self, Jitter, SplitConfig, SynthSpec};
use pointcam::metrics::{MetricsReport, ScoreDump};
use pointcam::network::{BackboneConfig, Model, ModelConfig, Task, UpeConfig};
use pointcam::plot;
use pointcam::train::{self, OptimConfig, ScoreFn, TrainConfig};
use pointcam::ups::{self, Generator, UpsParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const RUN_CONFIG: &str = "run.json";
pub const SPLIT_FILE: &str = "split.json";
pub const SCORES: &str = "scores.csv";
pub const METRICS: &str = "metrics.json";
pub const HISTOGRAM: &str = "histogram.svg";
pub const META: &str = "meta.json";

/// Creates `out`, refusing a non-empty directory unless `force` is set.
fn prepare_out(out: &Path, force: bool) -> anyhow::Result<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!("output directory {} is not empty; pass --force to overwrite", out.display());
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_meta(out: &Path, command: &str) -> anyhow::Result<()> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let meta = serde_json::json!({
        "command": command,
        "created_unix_secs": secs,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write(&out.join(META), serde_json::to_string_pretty(&meta)? + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub task: Task,
    pub classes: Vec<String>,
    /// Classes held out as unknown; defaults to the last listed class.
    pub unknown: Option<Vec<String>>,
    pub points_per_sample: usize,
    /// Samples per class (classification).
    pub samples_per_class: usize,
    /// Scene count and shapes per scene (segmentation).
    pub scenes: usize,
    pub shapes_per_scene: usize,
    pub jitter: Jitter,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let spec = SynthSpec::default();
        Self {
            task: Task::Classification,
            classes: spec.classes,
            unknown: None,
            points_per_sample: spec.points_per_sample,
            samples_per_class: spec.samples_per_class,
            scenes: 40,
            shapes_per_scene: 3,
            jitter: spec.jitter,
        }
    }
}

/// Training run description. Paths are relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub split: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub ups: Option<UpsParams>,
    #[serde(default)]
    pub optim: OptimConfig,
    pub points_per_sample: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Default configuration for a synthetic dataset written by `synth`.
    pub fn for_synth(cfg: &SynthConfig, split: &SplitConfig) -> Self {
        let mut backbone = BackboneConfig::new(split.known.len(), cfg.task);
        backbone.level_widths = vec![32, 64, 128];
        backbone.head_hidden = 64;
        let ups = match cfg.task {
            Task::Classification => UpsParams::classification_default(),
            Task::Segmentation => UpsParams::segmentation_default(),
        };
        Self {
            data: PathBuf::from("."),
            split: PathBuf::from(SPLIT_FILE),
            model: ModelConfig {
                backbone,
                upe: Some(UpeConfig {
                    hidden: 32,
                    ..UpeConfig::new(1.0)
                }),
            },
            ups: Some(ups),
            optim: OptimConfig {
                batch_size: 2,
                ..OptimConfig::default()
            },
            points_per_sample: cfg.points_per_sample,
            seed: Some(0),
        }
    }

    fn resolve(mut self, base: &Path) -> Self {
        for p in [&mut self.data, &mut self.split] {
            let joined = base.join(&*p);
            *p = fs::canonicalize(&joined).unwrap_or(joined);
        }
        self
    }

    fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let seed = self.seed.context("a seed is required: set \"seed\" in the config or pass --seed")?;
        let cfg = TrainConfig {
            model: self.model.clone(),
            ups: self.ups.clone(),
            optim: self.optim.clone(),
            points_per_sample: self.points_per_sample,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_run_config(path: &Path) -> anyhow::Result<RunConfig> {
    let cfg: RunConfig = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = cfg.resolve(base);
    for p in [&cfg.data, &cfg.split] {
        if !p.exists() {
            bail!("{} referenced by {} does not exist", p.display(), path.display());
        }
    }
    Ok(cfg)
}

pub fn synth(config: Option<&Path>, seed: u64, out: &Path, force: bool) -> anyhow::Result<()> {
    let cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if cfg.classes.len() < 2 {
        bail!("synthesis needs at least two classes");
    }
    let spec = SynthSpec {
        classes: cfg.classes.clone(),
        points_per_sample: cfg.points_per_sample,
        samples_per_class: cfg.samples_per_class,
        jitter: cfg.jitter,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = match cfg.task {
        Task::Classification => data::synth_shapes(&spec, &mut rng)?,
        Task::Segmentation => data::synth_scenes(&spec, cfg.scenes, cfg.shapes_per_scene, &mut rng)?,
    };
    let unknown = cfg
        .unknown
        .clone()
        .unwrap_or_else(|| vec![cfg.classes.last().expect("checked length").clone()]);
    let split = SplitConfig {
        dataset: ds.name.clone(),
        task: cfg.task,
        known: cfg.classes.iter().filter(|c| !unknown.contains(c)).cloned().collect(),
        unknown,
        eval_fraction: 0.2,
    };
    split.validate()?;
    prepare_out(out, force)?;
    data::save_dataset(&ds, out)?;
    write(&out.join(SPLIT_FILE), to_json(&split)?)?;
    write(&out.join(RUN_CONFIG), to_json(&RunConfig::for_synth(&cfg, &split))?)?;
    eprintln!("wrote {} samples to {}", ds.samples.len(), out.display());
    Ok(())
}

pub fn augment(
    input: &Path,
    config: Option<&Path>,
    generator: Option<Generator>,
    seed: u64,
    out: &Path,
    force: bool,
) -> anyhow::Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let cloud = data::parse_labeled_points(&text, false).with_context(|| format!("parsing {}", input.display()))?;
    let mut params: UpsParams = match config {
        Some(p) => read_json(p)?,
        None => UpsParams::segmentation_default(),
    };
    if let Some(g) = generator {
        params.generator = g;
    }
    params.validate()?;
    let labeled = cloud.labels.is_some();
    let mut work = cloud.clone();
    let labels = work.labels.get_or_insert_with(|| vec![0; cloud.len()]);
    let unknown_class = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aug = match params.generator {
        Generator::CutAndMix { .. } => ups::ups_segmentation(&work, &params, unknown_class, &mut rng)?,
        _ => ups::generate_variant(&work, &params, unknown_class, &mut rng)?,
    };
    let mut result = aug.to_cloud(cloud.id.clone());
    if !labeled {
        result.labels = None;
    }
    prepare_out(out, force)?;
    write(&out.join("augmented.txt"), data::write_labeled_points(&result))?;
    let mask: String = aug.selected.iter().map(|i| format!("{i}\n")).collect();
    write(&out.join("mask.txt"), mask)?;
    eprintln!("moved {} of {} points", aug.selected.len(), aug.len());
    Ok(())
}

pub fn train(config: &Path, seed: Option<u64>, generator: Option<Generator>, out: &Path, force: bool) -> anyhow::Result<()> {
    let mut run = load_run_config(config)?;
    if seed.is_some() {
        run.seed = seed;
    }
    if let (Some(g), Some(u)) = (generator, run.ups.as_mut()) {
        u.generator = g;
    }
    let cfg = run.train_config()?;
    let ds = data::load_dataset(&run.data)?;
    let split = data::load_split_config(&run.split)?;
    let split_data = data::apply_split(&ds, &split)?;
    prepare_out(out, force)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(cfg.model.clone(), &mut rng)?;
    let logs = train::train_with(&mut model, &split_data.train, split_data.num_known(), &cfg, |l| {
        eprintln!(
            "epoch {:>3}  task {:.4}  upe {:.4}  acc {:.4}",
            l.epoch, l.task_loss, l.upe_loss, l.train_accuracy
        );
    })?;
    write(&out.join(TRAIN_LOG), train::format_log(&logs))?;
    write(&out.join(CHECKPOINT), model.save_checkpoint())?;
    write(&out.join(RUN_CONFIG), to_json(&run)?)?;
    write_meta(out, "train")?;
    Ok(())
}

/// Model and evaluation split restored from a `train` output directory.
pub fn load_run(run_dir: &Path) -> anyhow::Result<(Model, data::SplitData)> {
    let run = load_run_config(&run_dir.join(RUN_CONFIG))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(run.model.clone(), &mut rng)?;
    let bytes = fs::read(run_dir.join(CHECKPOINT)).with_context(|| format!("reading checkpoint in {}", run_dir.display()))?;
    model.load_checkpoint(&bytes).context("checkpoint does not match the run configuration")?;
    let ds = data::load_dataset(&run.data)?;
    let split = data::apply_split(&ds, &data::load_split_config(&run.split)?)?;
    Ok((model, split))
}

pub fn eval(run_dir: &Path, score_fn: ScoreFn, out: &Path, force: bool) -> anyhow::Result<()> {
    let (model, split) = load_run(run_dir)?;
    let ev = train::evaluate(&model, &split.eval, split.num_known(), score_fn)?;
    if !ev.open_set {
        eprintln!("warning: evaluation set lacks known or unknown units; open-set metrics omitted");
    }
    prepare_out(out, force)?;
    let mut csv = Vec::new();
    ev.dump.write_csv(&mut csv)?;
    write(&out.join(SCORES), csv)?;
    write(&out.join(METRICS), ev.report.to_json()? + "\n")?;
    let (unknown, known): (Vec<_>, Vec<_>) = ev.dump.records.iter().partition(|r| r.is_unknown);
    let known: Vec<f64> = known.iter().map(|r| r.score).collect();
    let unknown: Vec<f64> = unknown.iter().map(|r| r.score).collect();
    let title = format!("{score_fn:?} unknown-class score");
    write(&out.join(HISTOGRAM), plot::score_histogram_svg(&known, &unknown, 40, &title))?;
    write_meta(out, "eval")?;
    print!("{}", ev.report.to_json()? + "\n");
    Ok(())
}

pub fn metrics(scores: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let file = fs::File::open(scores).with_context(|| format!("reading {}", scores.display()))?;
    let dump = ScoreDump::read_csv(file).with_context(|| format!("parsing {}", scores.display()))?;
    let report = MetricsReport::default().with_open_set(&dump)?;
    let json = report.to_json()? + "\n";
    match out {
        Some(p) => write(p, json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}
