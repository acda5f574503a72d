//! Browser bindings for the demo page. Every export returns a JSON string
//! that the page parses; the plain functions below are what the bindings
//! wrap, so they can be tested natively.

use pointcam::data::{self, Jitter, Shape, SynthSpec};
use pointcam::geometry::{self, Point3};
use pointcam::metrics::{MetricsReport, ScoreDump};
use pointcam::plot;
use pointcam::ups::{self, Generator, UpsParams};
use pointcam::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const SCENE_SHAPES: [&str; 4] = ["sphere", "cube", "cylinder", "cone"];

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub points: Vec<Point3>,
    /// Per-point class, with the simulated unknowns set to `unknown_class`.
    pub labels: Vec<usize>,
    pub unknown_class: usize,
    pub selected: Vec<usize>,
}

pub fn generator_by_name(name: &str) -> Result<Generator> {
    Ok(match name {
        "cutmix" => Generator::default(),
        "rotation" => Generator::rotation_default(),
        "translation" => Generator::translation_default(),
        "scaling" => Generator::scaling_default(),
        "noise" => Generator::noise_default(),
        other => return Err(pointcam::Error::InvalidArgument(format!("unknown generator {other:?}"))),
    })
}

/// A three-shape scene with a fraction `beta` of its points replaced by a
/// moved neighborhood.
pub fn simulate(points: usize, beta: f64, generator: &str, seed: u64) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = SynthSpec {
        classes: SCENE_SHAPES.map(String::from).to_vec(),
        points_per_sample: points,
        samples_per_class: 1,
        jitter: Jitter::default(),
    };
    let scene = data::synth_scenes(&spec, 1, 3, &mut rng)?.samples.remove(0).cloud;
    let params = UpsParams::segmentation_default()
        .with_beta(beta, beta)
        .with_generator(generator_by_name(generator)?);
    let unknown_class = SCENE_SHAPES.len();
    let aug = if generator == "cutmix" {
        ups::ups_segmentation(&scene, &params, unknown_class, &mut rng)?
    } else {
        ups::generate_variant(&scene, &params, unknown_class, &mut rng)?
    };
    Ok(Simulation {
        points: aug.coords,
        labels: aug.task_labels,
        unknown_class,
        selected: aug.selected,
    })
}

#[derive(Debug, Serialize)]
pub struct Explorer {
    pub report: MetricsReport,
    pub histogram_svg: String,
}

/// Open-set metrics for two Gaussian score populations.
pub fn explore_metrics(known_mean: f64, unknown_mean: f64, spread: f64, per_class: usize, seed: u64) -> Result<Explorer> {
    if !(spread > 0.0) || per_class == 0 {
        return Err(pointcam::Error::InvalidArgument(format!(
            "need a positive spread and at least one score per class, got {spread} and {per_class}"
        )));
    }
    let dist = |mean: f64| Normal::new(mean, spread).map_err(|e| pointcam::Error::InvalidArgument(e.to_string()));
    let (known_dist, unknown_dist) = (dist(known_mean)?, dist(unknown_mean)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let known: Vec<f64> = (0..per_class).map(|_| known_dist.sample(&mut rng)).collect();
    let unknown: Vec<f64> = (0..per_class).map(|_| unknown_dist.sample(&mut rng)).collect();
    let scores: Vec<f64> = known.iter().chain(&unknown).copied().collect();
    let flags: Vec<bool> = (0..scores.len()).map(|i| i >= per_class).collect();
    let dump = ScoreDump::from_parts(&scores, &flags)?;
    Ok(Explorer {
        report: MetricsReport::default().with_open_set(&dump)?,
        histogram_svg: plot::score_histogram_svg(&known, &unknown, 30, "score distributions"),
    })
}

#[derive(Debug, Serialize)]
pub struct Levels {
    pub points: Vec<Point3>,
    /// Row indices kept at each encoder level, coarsest last.
    pub levels: Vec<Vec<usize>>,
}

/// Farthest-point subsets at halving resolutions, as the encoder levels see them.
pub fn fps_levels(shape: &str, points: usize, levels: usize, seed: u64) -> Result<Levels> {
    let shape: Shape = shape.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = data::synth_sample(shape, points, &Jitter::default(), &mut rng);
    let mut out = Vec::with_capacity(levels);
    for j in 0..levels {
        let m = (points >> j).max(1);
        out.push(geometry::farthest_point_sample_points(&pts, m, 0)?);
    }
    Ok(Levels { points: pts, levels: out })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = simulateUnknowns)]
pub fn simulate_unknowns_js(points: usize, beta: f64, generator: &str, seed: u64) -> std::result::Result<String, JsError> {
    to_js(simulate(points, beta, generator, seed))
}

#[wasm_bindgen(js_name = exploreMetrics)]
pub fn explore_metrics_js(
    known_mean: f64,
    unknown_mean: f64,
    spread: f64,
    per_class: usize,
    seed: u64,
) -> std::result::Result<String, JsError> {
    to_js(explore_metrics(known_mean, unknown_mean, spread, per_class, seed))
}

#[wasm_bindgen(js_name = fpsLevels)]
pub fn fps_levels_js(shape: &str, points: usize, levels: usize, seed: u64) -> std::result::Result<String, JsError> {
    to_js(fps_levels(shape, points, levels, seed))
}
