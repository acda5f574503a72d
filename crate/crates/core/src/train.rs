//! Training and evaluation loops.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Graph};
use crate::data::{self, Sample, SplitData};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics::{self, AccuracyMode, MetricsReport, ScoreDump};
use crate::network::{self, Model, ModelConfig, Task};
use crate::ups::{self, Generator, UpsParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 30,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// `None` disables unknown simulation.
    pub ups: Option<UpsParams>,
    pub optim: OptimConfig,
    /// Segmentation scenes are cropped or resampled to this many points.
    pub points_per_sample: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.backbone.validate()?;
        if let Some(u) = &self.ups {
            u.validate()?;
        }
        if self.optim.batch_size == 0 || self.optim.epochs == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.optim.lr)));
        }
        if self.points_per_sample == 0 {
            return Err(Error::Config("points per sample must be positive".into()));
        }
        if let Some(upe) = &self.model.upe {
            if !(upe.alpha >= 0.0 && upe.alpha.is_finite()) {
                return Err(Error::Config(format!("alpha must be non-negative, got {}", upe.alpha)));
            }
        }
        Ok(())
    }
}

/// Mean losses and closed-set accuracy over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub task_loss: f64,
    pub upe_loss: f64,
    pub train_accuracy: f64,
}

pub const LOG_HEADER: &str = "epoch,task_loss,upe_loss,train_accuracy";

pub fn format_log(logs: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for l in logs {
        let _ = writeln!(s, "{},{},{},{}", l.epoch, l.task_loss, l.upe_loss, l.train_accuracy);
    }
    s
}

/// Seed for one epoch, derived from the master seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng.next_u64()
}

/// Training input for one step: coordinates with labels and reference scores.
struct Prepared {
    coords: Vec<[f64; 3]>,
    labels: Vec<usize>,
    ref_scores: Vec<f64>,
    /// Units counted in the closed-set accuracy (labels below `N_c`).
    known_units: bool,
}

fn normalized(cloud: &PointCloud) -> PointCloud {
    let mut c = cloud.clone();
    c.normalize();
    c
}

fn prepare<R: Rng + ?Sized>(
    sample: &Sample,
    train: &[Sample],
    by_class: &[Vec<usize>],
    cfg: &TrainConfig,
    num_known: usize,
    rng: &mut R,
) -> Result<Prepared> {
    let task = cfg.model.backbone.head;
    let ups = cfg.ups.as_ref().filter(|u| rng.random::<f64>() < u.aug_ratio);
    match task {
        Task::Segmentation => {
            let mut cloud = data::crop_points(&sample.cloud, cfg.points_per_sample, rng)?;
            cloud.normalize();
            let labels = cloud.labels.clone().ok_or_else(|| Error::invalid("segmentation sample without labels"))?;
            match ups {
                Some(params) => {
                    let aug = match params.generator {
                        Generator::CutAndMix { .. } => ups::ups_segmentation(&cloud, params, num_known, rng)?,
                        _ => ups::generate_variant(&cloud, params, num_known, rng)?,
                    };
                    Ok(Prepared {
                        coords: aug.coords,
                        labels: aug.task_labels,
                        ref_scores: aug.ref_scores,
                        known_units: true,
                    })
                }
                None => Ok(Prepared {
                    ref_scores: vec![0.0; cloud.len()],
                    coords: cloud.coords,
                    labels,
                    known_units: true,
                }),
            }
        }
        Task::Classification => {
            let class = sample.class.ok_or_else(|| Error::invalid("classification sample without a class"))?;
            let host = normalized(&sample.cloud);
            let donors: Vec<usize> = by_class
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != class)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            match ups {
                Some(params) if !donors.is_empty() => {
                    let d = donors[rng.random_range(0..donors.len())];
                    let donor = normalized(&train[d].cloud);
                    let donor_class = train[d].class.expect("checked by caller");
                    let aug = ups::uss_classification(&host, class, &donor, donor_class, params, num_known, rng)?;
                    Ok(Prepared {
                        coords: aug.coords,
                        labels: vec![num_known],
                        ref_scores: aug.ref_scores,
                        known_units: false,
                    })
                }
                _ => Ok(Prepared {
                    ref_scores: vec![0.0; host.len()],
                    coords: host.coords,
                    labels: vec![class],
                    known_units: true,
                }),
            }
        }
    }
}

/// Trains `model` in place and returns one log row per epoch.
///
/// Each epoch shuffles the training set and draws fresh augmentations from
/// a seed derived from `cfg.seed`, so identical inputs give identical runs.
pub fn train(model: &mut Model, train: &[Sample], num_known: usize, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    train_with(model, train, num_known, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &mut Model,
    train: &[Sample],
    num_known: usize,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if model.config.backbone.num_known != num_known {
        return Err(Error::Config(format!(
            "model has {} known classes, data has {num_known}",
            model.config.backbone.num_known
        )));
    }
    let task = cfg.model.backbone.head;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_known];
    if task == Task::Classification {
        for (i, s) in train.iter().enumerate() {
            match s.class {
                Some(c) if c < num_known => by_class[c].push(i),
                other => {
                    return Err(Error::invalid(format!(
                        "training sample {} has class {other:?}, expected a known class",
                        s.cloud.id
                    )))
                }
            }
        }
    }
    let alpha = model.upe().map_or(0.0, |u| u.config.alpha);
    let mut adam = Adam::new(cfg.optim.lr);
    let mut logs = Vec::with_capacity(cfg.optim.epochs);
    for epoch in 0..cfg.optim.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut task_sum, mut upe_sum) = (0.0, 0.0);
        let (mut correct, mut counted) = (0usize, 0usize);
        for (batch_no, batch) in order.chunks(cfg.optim.batch_size).enumerate() {
            model.params.zero_grad();
            for &i in batch {
                let mut sample_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
                let p = prepare(&train[i], train, &by_class, cfg, num_known, &mut sample_rng)?;
                let mut g = Graph::new();
                let out = model.forward(&mut g, &p.coords)?;
                let terms = if alpha > 0.0 {
                    model.total_loss(&mut g, &out, &p.labels, &p.ref_scores)?
                } else {
                    network::total_loss(&mut g, &network::ForwardOutput { upe: None, ..out.clone() }, &p.labels, &p.ref_scores, 0.0)?
                };
                let task_loss = g.value(terms.task).item();
                let upe_loss = terms.upe.map_or(0.0, |u| g.value(u).item());
                if !(task_loss.is_finite() && upe_loss.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "loss at epoch {epoch}, batch {batch_no}: task {task_loss}, estimator {upe_loss}"
                    )));
                }
                task_sum += task_loss;
                upe_sum += upe_loss;
                if p.known_units {
                    let logits = g.value(out.logits);
                    let pred = network::predict_known(logits, num_known);
                    for (pr, &l) in pred.iter().zip(&p.labels) {
                        if l < num_known {
                            counted += 1;
                            correct += usize::from(*pr == l);
                        }
                    }
                }
                g.backward_scaled(terms.total, 1.0 / batch.len() as f64, &mut model.params)?;
            }
            if let Some(bad) = model
                .params
                .iter()
                .find(|p| p.grad.as_ref().is_some_and(|g| g.data().iter().any(|v| !v.is_finite())))
            {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at epoch {epoch}, batch {batch_no}",
                    bad.name
                )));
            }
            adam.step(&mut model.params)?;
        }
        let n = train.len() as f64;
        let log = EpochLog {
            epoch,
            task_loss: task_sum / n,
            upe_loss: upe_sum / n,
            train_accuracy: if counted > 0 { correct as f64 / counted as f64 } else { 0.0 },
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFn {
    Msp,
    MaxLogit,
    Upe,
}

impl std::str::FromStr for ScoreFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(ScoreFn::Msp),
            "maxlogit" => Ok(ScoreFn::MaxLogit),
            "upe" => Ok(ScoreFn::Upe),
            _ => Err(Error::invalid(format!("unknown score function {s:?}; expected msp, maxlogit or upe"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub dump: ScoreDump,
    pub report: MetricsReport,
    /// False when the evaluation set lacks one of the two classes.
    pub open_set: bool,
}

/// Scores every evaluation unit and computes the metrics report.
pub fn evaluate(model: &Model, eval: &[Sample], num_known: usize, score_fn: ScoreFn) -> Result<Evaluation> {
    if score_fn == ScoreFn::Upe && model.upe().is_none() {
        return Err(Error::Config("the model has no unknown-score estimator; use msp or maxlogit".into()));
    }
    let mut dump = ScoreDump::new();
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for s in eval {
        let cloud = normalized(&s.cloud);
        let inf = model.infer(&cloud.coords)?;
        let point_scores = match score_fn {
            ScoreFn::Msp => network::msp_score(&inf.logits),
            ScoreFn::MaxLogit => network::maxlogit_score(&inf.logits),
            ScoreFn::Upe => inf.scores.expect("estimator present"),
        };
        let p = network::predict_known(&inf.logits, num_known);
        match model.config.backbone.head {
            Task::Classification => {
                let class = s.class.ok_or_else(|| Error::invalid("classification sample without a class"))?;
                let score = match score_fn {
                    ScoreFn::Upe => network::sample_unknown_score(&point_scores)?,
                    _ => point_scores[0],
                };
                dump.push(s.cloud.id.clone(), score, class >= num_known);
                if class < num_known {
                    pred.push(p[0]);
                    gt.push(class);
                }
            }
            Task::Segmentation => {
                let labels = s.cloud.labels.as_ref().ok_or_else(|| Error::invalid("segmentation sample without labels"))?;
                for (j, (&score, &l)) in point_scores.iter().zip(labels).enumerate() {
                    dump.push(format!("{}:{j}", s.cloud.id), score, l >= num_known);
                }
                pred.extend_from_slice(&p);
                gt.extend_from_slice(labels);
            }
        }
    }
    let mut report = MetricsReport::default();
    match model.config.backbone.head {
        Task::Classification => {
            if !gt.is_empty() {
                report.accuracy_sample = Some(metrics::accuracy(&pred, &gt, AccuracyMode::PerSample)?);
                report.accuracy_class = Some(metrics::accuracy(&pred, &gt, AccuracyMode::PerClassMean)?);
            }
        }
        Task::Segmentation => {
            if gt.iter().any(|&l| l < num_known) {
                report.miou = Some(metrics::miou(&pred, &gt, num_known)?);
            }
        }
    }
    let open_set = dump.has_both_classes();
    if open_set {
        report = report.with_open_set(&dump)?;
    }
    Ok(Evaluation { dump, report, open_set })
}

/// Builds a model, trains it on the split and returns it with its log.
pub fn fit(split: &SplitData, cfg: &TrainConfig) -> Result<(Model, Vec<EpochLog>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(cfg.model.clone(), &mut rng)?;
    let logs = train(&mut model, &split.train, split.num_known(), cfg)?;
    Ok((model, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_split, synth_shapes, SplitConfig, SynthSpec};
    use crate::network::{BackboneConfig, UpeConfig};

    fn tiny_split() -> SplitData {
        let spec = SynthSpec {
            samples_per_class: 6,
            points_per_sample: 48,
            ..SynthSpec::default()
        };
        let ds = synth_shapes(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        apply_split(&ds, &SplitConfig::synthetic_default()).unwrap()
    }

    fn tiny_config(upe: bool) -> TrainConfig {
        let mut bb = BackboneConfig::new(3, Task::Classification);
        bb.level_widths = vec![8, 16];
        bb.level_fractions = vec![1.0, 0.5];
        bb.head_hidden = 16;
        bb.unknown_logit = upe;
        TrainConfig {
            model: ModelConfig {
                backbone: bb,
                upe: upe.then(|| UpeConfig {
                    hidden: 8,
                    ..UpeConfig::new(1.0)
                }),
            },
            ups: upe.then(|| UpsParams {
                aug_ratio: 0.5,
                ..UpsParams::classification_default()
            }),
            optim: OptimConfig {
                lr: 3e-3,
                epochs: 4,
                batch_size: 4,
            },
            points_per_sample: 48,
            seed: 7,
        }
    }

    #[test]
    fn training_is_deterministic() {
        let split = tiny_split();
        let cfg = tiny_config(true);
        let (m1, l1) = fit(&split, &cfg).unwrap();
        let (m2, l2) = fit(&split, &cfg).unwrap();
        assert_eq!(format_log(&l1), format_log(&l2));
        assert_eq!(m1.save_checkpoint(), m2.save_checkpoint());
        let mut other = cfg.clone();
        other.seed = 8;
        let (_, l3) = fit(&split, &other).unwrap();
        assert_ne!(format_log(&l1), format_log(&l3));
    }

    #[test]
    fn plain_training_logs_zero_estimator_loss() {
        let split = tiny_split();
        let mut cfg = tiny_config(true);
        cfg.ups = None;
        cfg.model.upe.as_mut().unwrap().alpha = 0.0;
        let (_, logs) = fit(&split, &cfg).unwrap();
        assert!(logs.iter().all(|l| l.upe_loss == 0.0));
    }

    #[test]
    fn loss_decreases() {
        let split = tiny_split();
        let mut cfg = tiny_config(false);
        cfg.optim.epochs = 20;
        let (_, logs) = fit(&split, &cfg).unwrap();
        assert!(logs.last().unwrap().task_loss < logs[0].task_loss);
    }

    #[test]
    fn evaluation_reports() {
        let split = tiny_split();
        let cfg = tiny_config(true);
        let (model, _) = fit(&split, &cfg).unwrap();
        for f in [ScoreFn::Msp, ScoreFn::MaxLogit, ScoreFn::Upe] {
            let ev = evaluate(&model, &split.eval, 3, f).unwrap();
            assert_eq!(ev.dump.len(), split.eval.len());
            assert!(ev.open_set);
            assert_eq!(ev.report.auroc.unwrap(), metrics::auroc(&ev.dump).unwrap());
            assert!(ev.report.accuracy_sample.is_some());
        }
        let known_only: Vec<Sample> = split.eval.iter().filter(|s| s.class.unwrap() < 3).cloned().collect();
        let ev = evaluate(&model, &known_only, 3, ScoreFn::Msp).unwrap();
        assert!(!ev.open_set);
        assert!(ev.report.auroc.is_none());

        let (plain, _) = fit(&split, &tiny_config(false)).unwrap();
        assert!(matches!(evaluate(&plain, &split.eval, 3, ScoreFn::Upe), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config(true);
        cfg.optim.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(true);
        cfg.model.upe.as_mut().unwrap().alpha = -1.0;
        assert!(cfg.validate().is_err());
    }
}
