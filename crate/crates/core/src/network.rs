//! Point network with multi-level unknown-score fusion.
//!
//! The backbone is a PointNet-style stack of shared per-point layers. Level
//! `j` subsamples level `j−1` by farthest-point sampling and applies a shared
//! linear layer (optionally plus a broadcast projection of the previous
//! level's global max-pool) followed by ReLU. Each level map `H_j` is brought
//! back to full resolution by nearest-neighbor upsampling.
//!
//! The unknown-point estimator regresses a score per level with a small MLP
//! `Φ_j` ending in a sigmoid, and fuses the level scores with per-point
//! weights `softmax(Ψ(Q))` computed from the raw coordinates `Q`:
//!
//! ```text
//! A_j = sigmoid(Φ_j(F_j))      W = softmax(Ψ(Q))      X = Σ_j W[:, j] ⊙ A_j
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segmentation,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Channel width `C_j` of each level.
    pub level_widths: Vec<usize>,
    /// Resolution of each level as a fraction of the input size.
    pub level_fractions: Vec<f64>,
    /// Known-class count `N_c`.
    pub num_known: usize,
    pub head: Task,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    /// Add a projection of the previous level's global max-pool to every point.
    #[serde(default = "default_true")]
    pub global_context: bool,
    /// Emit `N_c + 1` logits, the last one for the simulated unknown class.
    #[serde(default = "default_true")]
    pub unknown_logit: bool,
}

fn default_head_hidden() -> usize {
    128
}

fn default_true() -> bool {
    true
}

impl BackboneConfig {
    pub fn new(num_known: usize, head: Task) -> Self {
        Self {
            level_widths: vec![64, 128, 256],
            level_fractions: vec![1.0, 0.5, 0.25],
            num_known,
            head,
            head_hidden: default_head_hidden(),
            global_context: true,
            unknown_logit: true,
        }
    }

    pub fn levels(&self) -> usize {
        self.level_widths.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.num_known + usize::from(self.unknown_logit)
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_widths.is_empty() || self.level_widths.len() != self.level_fractions.len() {
            return Err(Error::Config(format!(
                "need at least one level and one fraction per width, got {} widths and {} fractions",
                self.level_widths.len(),
                self.level_fractions.len()
            )));
        }
        if self.level_widths.contains(&0) {
            return Err(Error::Config("level widths must be positive".into()));
        }
        let mut prev = 1.0;
        for &f in &self.level_fractions {
            if !(f > 0.0 && f <= prev) {
                return Err(Error::Config(format!(
                    "level fractions must lie in (0, 1] and be non-increasing, got {:?}",
                    self.level_fractions
                )));
            }
            prev = f;
        }
        if self.num_known == 0 {
            return Err(Error::Config("at least one known class is required".into()));
        }
        Ok(())
    }

    /// Point counts `N_j` for an input of `n` points.
    pub fn level_sizes(&self, n: usize) -> Result<Vec<usize>> {
        let sizes: Vec<usize> = self
            .level_fractions
            .iter()
            .map(|f| (n as f64 * f).round() as usize)
            .collect();
        if sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "{n} points is too few for level fractions {:?}",
                self.level_fractions
            )));
        }
        Ok(sizes)
    }
}

/// What the fusion-weight MLP `Ψ` sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInput {
    #[default]
    Coordinates,
    /// Coordinates concatenated with the first upsampled feature map.
    CoordinatesAndFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpeConfig {
    #[serde(default = "default_upe_hidden")]
    pub hidden: usize,
    /// Weight of the score regression loss.
    pub alpha: f64,
    /// When false the level scores are averaged with constant weights `1/M`.
    #[serde(default = "default_true")]
    pub point_guided: bool,
    #[serde(default)]
    pub weight_input: WeightInput,
}

fn default_upe_hidden() -> usize {
    64
}

impl UpeConfig {
    pub fn new(alpha: f64) -> Self {
        Self {
            hidden: default_upe_hidden(),
            alpha,
            point_guided: true,
            weight_input: WeightInput::Coordinates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// `None` trains and evaluates the plain backbone.
    pub upe: Option<UpeConfig>,
}

/// Fully connected layer `x·W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::glorot_uniform(in_dim, out_dim, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let z = g.matmul(x, w)?;
        g.add_row(z, b)
    }
}

/// One hidden ReLU layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    hidden: Linear,
    out: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: [usize; 3], rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), dims[0], dims[1], rng),
            out: Linear::new(store, &format!("{name}.out"), dims[1], dims[2], rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.out.forward(g, store, h)
    }
}

#[derive(Debug, Clone)]
struct Level {
    lin: Linear,
    global: Option<Linear>,
}

/// The estimator's trainable parts: one `Φ_j` per level and the weight MLP `Ψ`.
#[derive(Debug, Clone)]
pub struct UpeModule {
    pub config: UpeConfig,
    phi: Vec<Mlp>,
    psi: Mlp,
}

impl UpeModule {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: UpeConfig, level_widths: &[usize], rng: &mut R) -> Self {
        let phi = level_widths
            .iter()
            .enumerate()
            .map(|(j, &c)| Mlp::new(store, &format!("upe.phi{j}"), [c, config.hidden, 1], rng))
            .collect();
        let psi_in = match config.weight_input {
            WeightInput::Coordinates => 3,
            WeightInput::CoordinatesAndFeatures => 3 + level_widths[0],
        };
        let psi = Mlp::new(store, "upe.psi", [psi_in, config.hidden, level_widths.len()], rng);
        Self { config, phi, psi }
    }

    pub fn levels(&self) -> usize {
        self.phi.len()
    }

    /// `sigmoid(Φ_j(x))`, one column.
    pub fn level_score(&self, g: &mut Graph, store: &ParamStore, j: usize, x: Var) -> Result<Var> {
        let a = self.phi[j].forward(g, store, x)?;
        g.sigmoid(a)
    }

    /// Fusion weights `W` (`N×M`).
    pub fn weights(&self, g: &mut Graph, store: &ParamStore, q: Var, first_level: Option<Var>) -> Result<Var> {
        let n = g.value(q).rows();
        let m = self.levels();
        if !self.config.point_guided {
            return Ok(g.constant(Tensor::full(n, m, 1.0 / m as f64)));
        }
        let input = match (self.config.weight_input, first_level) {
            (WeightInput::Coordinates, _) => q,
            (WeightInput::CoordinatesAndFeatures, Some(f)) => g.concat_cols(&[q, f])?,
            (WeightInput::CoordinatesAndFeatures, None) => {
                return Err(Error::invalid("weight MLP needs the first feature map"));
            }
        };
        let logits = self.psi.forward(g, store, input)?;
        g.row_softmax(logits)
    }
}

/// Result of [`upe_forward`].
#[derive(Debug, Clone)]
pub struct UpeOutput {
    /// Fused scores `X`, `N×1`.
    pub scores: Var,
    /// Fusion weights `W`, `N×M`.
    pub weights: Var,
    /// Level scores `A_j`, each `N×1`.
    pub level_scores: Vec<Var>,
}

fn fuse(g: &mut Graph, weights: Var, level_scores: Vec<Var>) -> Result<UpeOutput> {
    let stacked = g.concat_cols(&level_scores)?;
    let weighted = g.mul(weights, stacked)?;
    let scores = g.sum_cols(weighted)?;
    Ok(UpeOutput {
        scores,
        weights,
        level_scores,
    })
}

/// Fused unknown scores from full-resolution feature maps `F_1..F_M`.
pub fn upe_forward(g: &mut Graph, store: &ParamStore, q: Var, features: &[Var], upe: &UpeModule) -> Result<UpeOutput> {
    if features.len() != upe.levels() {
        return Err(Error::invalid(format!(
            "estimator has {} levels but got {} feature maps",
            upe.levels(),
            features.len()
        )));
    }
    let n = g.value(q).rows();
    if let Some(f) = features.iter().find(|&&f| g.value(f).rows() != n) {
        return Err(Error::invalid(format!(
            "feature map with {} rows, expected {n}",
            g.value(*f).rows()
        )));
    }
    let level_scores = features
        .iter()
        .enumerate()
        .map(|(j, &f)| upe.level_score(g, store, j, f))
        .collect::<Result<Vec<_>>>()?;
    let weights = upe.weights(g, store, q, features.first().copied())?;
    fuse(g, weights, level_scores)
}

/// Nearest retained point for every full-resolution point (ties go to the lower index).
pub fn nearest_indices(retained: &[Point3], full: &[Point3]) -> Result<Vec<usize>> {
    if retained.is_empty() {
        return Err(Error::invalid("cannot upsample from an empty level"));
    }
    Ok(full
        .iter()
        .map(|&p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, &r) in retained.iter().enumerate() {
                let d = geometry::dist2(p, r);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Nearest-neighbor upsampling of a level map `H_j` to the full point set.
pub fn upsample_features(g: &mut Graph, h: Var, coords_level: &[Point3], coords_full: &[Point3]) -> Result<Var> {
    if g.value(h).rows() == 0 {
        return Err(Error::invalid("cannot upsample an empty feature map"));
    }
    if g.value(h).rows() != coords_level.len() {
        return Err(Error::invalid(format!(
            "feature map has {} rows but {} coordinates",
            g.value(h).rows(),
            coords_level.len()
        )));
    }
    let idx = nearest_indices(coords_level, coords_full)?;
    g.gather_rows(h, &idx)
}

/// Encoder output: one map per level with the coordinates of its rows.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub features: Vec<Var>,
    pub coords: Vec<Vec<Point3>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `N×(N_c+1)` for segmentation, `1×(N_c+1)` for classification.
    pub logits: Var,
    pub upe: Option<UpeOutput>,
}

/// Graph nodes of the loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub task: Var,
    pub upe: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    levels: Vec<Level>,
    head: Mlp,
    upe: Option<UpeModule>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.backbone.validate()?;
        let bb = &config.backbone;
        let mut params = ParamStore::new();
        let mut levels = Vec::with_capacity(bb.levels());
        let mut in_dim = 3;
        for (j, &c) in bb.level_widths.iter().enumerate() {
            let lin = Linear::new(&mut params, &format!("level{j}"), in_dim, c, rng);
            let global = (j > 0 && bb.global_context)
                .then(|| Linear::new(&mut params, &format!("level{j}.global"), in_dim, c, rng));
            levels.push(Level { lin, global });
            in_dim = c;
        }
        let head_in = match bb.head {
            Task::Classification => *bb.level_widths.last().expect("validated non-empty"),
            Task::Segmentation => bb.level_widths.iter().sum::<usize>() + bb.level_widths.last().expect("validated"),
        };
        let head = Mlp::new(&mut params, "head", [head_in, bb.head_hidden, bb.num_outputs()], rng);
        let upe = config
            .upe
            .clone()
            .map(|u| UpeModule::new(&mut params, u, &bb.level_widths, rng));
        Ok(Self {
            config,
            params,
            levels,
            head,
            upe,
        })
    }

    pub fn upe(&self) -> Option<&UpeModule> {
        self.upe.as_ref()
    }

    pub fn num_outputs(&self) -> usize {
        self.config.backbone.num_outputs()
    }

    /// Feature maps `H_1..H_M` with their coordinates.
    pub fn encode(&self, g: &mut Graph, coords: &[Point3]) -> Result<Encoded> {
        let bb = &self.config.backbone;
        let n = coords.len();
        let sizes = bb.level_sizes(n)?;
        let mut prev = g.constant(Tensor::from_points(coords));
        let mut prev_coords = coords.to_vec();
        let mut features = Vec::with_capacity(sizes.len());
        let mut level_coords = Vec::with_capacity(sizes.len());
        for (j, (level, &m)) in self.levels.iter().zip(&sizes).enumerate() {
            let (input, cur_coords) = if m < prev_coords.len() {
                let idx = geometry::farthest_point_sample_points(&prev_coords, m, 0)?;
                let cur: Vec<Point3> = idx.iter().map(|&i| prev_coords[i]).collect();
                (g.gather_rows(prev, &idx)?, cur)
            } else {
                (prev, prev_coords.clone())
            };
            let mut pre = level.lin.forward(g, &self.params, input)?;
            if let Some(global) = &level.global {
                let pooled = g.max_over_rows(prev)?;
                let proj = global.forward(g, &self.params, pooled)?;
                let proj = g.broadcast_rows(proj, m)?;
                pre = g.add(pre, proj)?;
            }
            let h = g.relu(pre)?;
            debug_assert!(j < sizes.len());
            features.push(h);
            level_coords.push(cur_coords.clone());
            prev = h;
            prev_coords = cur_coords;
        }
        Ok(Encoded {
            features,
            coords: level_coords,
        })
    }

    pub fn forward(&self, g: &mut Graph, coords: &[Point3]) -> Result<ForwardOutput> {
        let enc = self.encode(g, coords)?;
        let n = coords.len();
        let last = *enc.features.last().expect("at least one level");
        let needs_full = self.upe.is_some() || self.config.backbone.head == Task::Segmentation;
        let full: Vec<Var> = if needs_full {
            enc.features
                .iter()
                .zip(&enc.coords)
                .map(|(&h, c)| {
                    if c.len() == n {
                        Ok(h)
                    } else {
                        upsample_features(g, h, c, coords)
                    }
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let logits = match self.config.backbone.head {
            Task::Classification => {
                let pooled = g.max_over_rows(last)?;
                self.head.forward(g, &self.params, pooled)?
            }
            Task::Segmentation => {
                let pooled = g.max_over_rows(last)?;
                let global = g.broadcast_rows(pooled, n)?;
                let mut parts = full.clone();
                parts.push(global);
                let cat = g.concat_cols(&parts)?;
                self.head.forward(g, &self.params, cat)?
            }
        };
        let upe = match &self.upe {
            Some(upe) => {
                let q = g.constant(Tensor::from_points(coords));
                Some(upe_forward(g, &self.params, q, &full, upe)?)
            }
            None => None,
        };
        Ok(ForwardOutput { logits, upe })
    }

    /// Task cross-entropy plus `α` times the score regression error.
    ///
    /// `task_labels` holds one label per point for segmentation and a single
    /// sample label for classification.
    pub fn total_loss(&self, g: &mut Graph, out: &ForwardOutput, task_labels: &[usize], ref_scores: &[f64]) -> Result<LossTerms> {
        let alpha = self.upe.as_ref().map_or(0.0, |u| u.config.alpha);
        total_loss(g, out, task_labels, ref_scores, alpha)
    }

    pub fn save_checkpoint(&self) -> Vec<u8> {
        checkpoint::to_bytes(&self.params)
    }

    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<()> {
        let values = checkpoint::read(bytes)?;
        self.params.load_values(values)
    }

    /// Logits and fused scores as plain values, no gradient bookkeeping kept.
    pub fn infer(&self, coords: &[Point3]) -> Result<Inference> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, coords)?;
        Ok(Inference {
            logits: g.value(out.logits).clone(),
            scores: out.upe.as_ref().map(|u| g.value(u.scores).data().to_vec()),
            weights: out.upe.as_ref().map(|u| g.value(u.weights).clone()),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub logits: Tensor,
    pub scores: Option<Vec<f64>>,
    pub weights: Option<Tensor>,
}

pub fn total_loss(g: &mut Graph, out: &ForwardOutput, task_labels: &[usize], ref_scores: &[f64], alpha: f64) -> Result<LossTerms> {
    let classes = g.value(out.logits).cols();
    if let Some(&bad) = task_labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside [0, {}]", classes - 1)));
    }
    let task = g.cross_entropy(out.logits, task_labels)?;
    let Some(upe) = &out.upe else {
        return Ok(LossTerms {
            total: task,
            task,
            upe: None,
        });
    };
    let target = Tensor::column(ref_scores.to_vec());
    let upe_loss = g.mse(upe.scores, &target)?;
    let scaled = g.scale(upe_loss, alpha)?;
    let total = g.add(task, scaled)?;
    Ok(LossTerms {
        total,
        task,
        upe: Some(upe_loss),
    })
}

/// `1 − max softmax` per row; higher means more likely unknown.
pub fn msp_score(logits: &Tensor) -> Vec<f64> {
    (0..logits.rows())
        .map(|r| {
            let mut row = logits.row(r).to_vec();
            crate::autodiff::softmax_in_place(&mut row);
            1.0 - row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// `−max logit` per row.
pub fn maxlogit_score(logits: &Tensor) -> Vec<f64> {
    (0..logits.rows())
        .map(|r| -logits.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Mean of the per-point scores of one sample.
pub fn sample_unknown_score(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("no scores to average"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Arg-max over the first `num_known` logits of each row.
pub fn predict_known(logits: &Tensor, num_known: usize) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = &logits.row(r)[..num_known.min(logits.cols())];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
