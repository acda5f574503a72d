//! Dataset ingestion, known/unknown splits, mesh sampling and synthetic shapes.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point3, PointCloud};
use crate::network::Task;

/// Vertices and triangles; every face index is below the vertex count.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some((i, f)) = faces.iter().enumerate().find(|(_, f)| f.iter().any(|&v| v >= vertices.len())) {
            return Err(Error::invalid(format!(
                "face {i} references vertex {:?} but the mesh has {} vertices",
                f,
                vertices.len()
            )));
        }
        Ok(Self { vertices, faces })
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let u = geometry::sub(b, a);
        let v = geometry::sub(c, a);
        0.5 * geometry::norm(cross(u, v))
    }

    /// Drops zero-area faces.
    pub fn clean(&mut self) {
        let keep: Vec<bool> = (0..self.faces.len()).map(|f| self.face_area(f) > 0.0).collect();
        let mut k = keep.iter();
        self.faces.retain(|_| *k.next().expect("one flag per face"));
    }
}

fn cross(u: Point3, v: Point3) -> Point3 {
    [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_num<T: FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("expected {what}, found {tok:?}")))
}

/// Parses an ASCII OFF mesh. Counts glued to the keyword (`OFF490 518 0`)
/// are accepted; polygons are fan-triangulated.
pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut lines = content_lines(text);
    let (first_no, first) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    let rest = first
        .strip_prefix("OFF")
        .ok_or_else(|| Error::parse(first_no, format!("expected OFF header, found {first:?}")))?
        .trim();
    let (counts_no, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| Error::parse(first_no + 1, "missing vertex/face counts"))?
    } else {
        (first_no, rest)
    };
    let toks: Vec<&str> = counts.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(Error::parse(counts_no, format!("expected vertex and face counts, found {counts:?}")));
    }
    let nv: usize = parse_num(toks[0], counts_no, "vertex count")?;
    let nf: usize = parse_num(toks[1], counts_no, "face count")?;

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let (no, l) = lines
            .next()
            .ok_or_else(|| Error::parse(counts_no, format!("file ends after {i} of {nv} vertices")))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 3 {
            return Err(Error::parse(no, format!("vertex needs 3 coordinates, found {}", t.len())));
        }
        let mut p: Point3 = [0.0; 3];
        for a in 0..3 {
            p[a] = parse_num(t[a], no, "coordinate")?;
            if !p[a].is_finite() {
                return Err(Error::parse(no, "non-finite coordinate"));
            }
        }
        vertices.push(p);
    }

    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let (no, l) = lines
            .next()
            .ok_or_else(|| Error::parse(counts_no, format!("file ends after {i} of {nf} faces")))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        let n: usize = parse_num(t[0], no, "polygon size")?;
        if n < 3 || t.len() < n + 1 {
            return Err(Error::parse(no, format!("polygon of size {n} with {} indices", t.len() - 1)));
        }
        let idx = t[1..=n]
            .iter()
            .map(|s| {
                let v: usize = parse_num(s, no, "vertex index")?;
                if v >= nv {
                    return Err(Error::parse(no, format!("vertex index {v} out of range (vertex count {nv})")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<usize>>>()?;
        for j in 1..n - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn write_off(mesh: &TriangleMesh) -> String {
    let mut s = format!("OFF\n{} {} 0\n", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

fn parse_label(tok: &str, line: usize) -> Result<usize> {
    if let Ok(v) = tok.parse::<usize>() {
        return Ok(v);
    }
    match tok.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 => Ok(v as usize),
        _ => Err(Error::parse(line, format!("expected a non-negative integer label, found {tok:?}"))),
    }
}

/// Parses `x y z [r g b] [label]` rows. All rows must have the same column
/// count; colors are dropped.
pub fn parse_labeled_points(text: &str, labels_required: bool) -> Result<PointCloud> {
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (no, l) in content_lines(text) {
        let t: Vec<&str> = l.split_whitespace().collect();
        let w = *width.get_or_insert(t.len());
        if t.len() != w {
            return Err(Error::parse(no, format!("row has {} columns, earlier rows have {w}", t.len())));
        }
        let has_label = match w {
            4 | 7 => true,
            3 | 6 => false,
            _ => return Err(Error::parse(no, format!("expected 3, 4, 6 or 7 columns, found {w}"))),
        };
        if labels_required && !has_label {
            return Err(Error::parse(no, format!("row has {w} columns and no label column")));
        }
        let mut p: Point3 = [0.0; 3];
        for a in 0..3 {
            p[a] = parse_num(t[a], no, "coordinate")?;
            if !p[a].is_finite() {
                return Err(Error::parse(no, "non-finite coordinate"));
            }
        }
        for c in &t[3..if has_label { w - 1 } else { w }] {
            parse_num::<f64>(c, no, "color value")?;
        }
        coords.push(p);
        if has_label {
            labels.push(parse_label(t[w - 1], no)?);
        }
    }
    if coords.is_empty() {
        return Err(Error::parse(1, "no points"));
    }
    let labels = (!labels.is_empty()).then_some(labels);
    PointCloud::new(coords, labels, "")
}

/// Writes `x y z label` rows (or `x y z` for unlabeled clouds); values round-trip exactly.
pub fn write_labeled_points(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 48);
    for (i, p) in cloud.coords.iter().enumerate() {
        let _ = match &cloud.labels {
            Some(l) => writeln!(s, "{} {} {} {}", p[0], p[1], p[2], l[i]),
            None => writeln!(s, "{} {} {}", p[0], p[1], p[2]),
        };
    }
    s
}

/// `n` points uniform on the mesh surface: faces drawn by area, points by barycentric sampling.
pub fn sample_mesh_surface<R: Rng + ?Sized>(mesh: &TriangleMesh, n: usize, rng: &mut R) -> Result<Vec<Point3>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    let dist = WeightedIndex::new(&areas).map_err(|_| Error::invalid("mesh has zero total surface area"))?;
    Ok((0..n)
        .map(|_| {
            let [a, b, c] = mesh.faces[dist.sample(rng)].map(|i| mesh.vertices[i]);
            let s = rng.random::<f64>().sqrt();
            let r2 = rng.random::<f64>();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    Cone,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Sphere, Shape::Cube, Shape::Cylinder, Shape::Torus, Shape::Cone];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Cylinder => "cylinder",
            Shape::Torus => "torus",
            Shape::Cone => "cone",
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape {s:?}; expected one of sphere, cube, cylinder, torus, cone")))
    }
}

/// Torus radii (center circle, tube).
const TORUS_R: f64 = 0.35;
const TORUS_TUBE: f64 = 0.15;

/// One point uniform on the canonical surface: unit sphere, unit cube centered
/// at the origin, cylinder and cone of radius 0.5 and height 1, torus in the xy-plane.
pub fn sample_shape_point<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Point3 {
    match shape {
        Shape::Sphere => geometry::random_unit_vector(rng),
        Shape::Cube => {
            let face = rng.random_range(0..6);
            let (u, v) = (rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5));
            let side = if face % 2 == 0 { 0.5 } else { -0.5 };
            match face / 2 {
                0 => [side, u, v],
                1 => [u, side, v],
                _ => [u, v, side],
            }
        }
        Shape::Cylinder => {
            let r = 0.5;
            // Lateral area π, caps π/4 each.
            let pick = rng.random_range(0.0..1.5 * PI);
            let t = rng.random_range(0.0..2.0 * PI);
            if pick < PI {
                [r * t.cos(), r * t.sin(), rng.random_range(-0.5..=0.5)]
            } else {
                let rho = r * rng.random::<f64>().sqrt();
                let z = if pick < 1.25 * PI { 0.5 } else { -0.5 };
                [rho * t.cos(), rho * t.sin(), z]
            }
        }
        Shape::Cone => {
            let r: f64 = 0.5;
            let h = 1.0;
            let slant = (r * r + h * h).sqrt();
            let lateral = PI * r * slant;
            let base = PI * r * r;
            let t = rng.random_range(0.0..2.0 * PI);
            if rng.random::<f64>() * (lateral + base) < lateral {
                // Radius grows linearly from the apex; area density grows with it.
                let s = rng.random::<f64>().sqrt();
                [s * r * t.cos(), s * r * t.sin(), 0.5 - s * h]
            } else {
                let rho = r * rng.random::<f64>().sqrt();
                [rho * t.cos(), rho * t.sin(), -0.5]
            }
        }
        Shape::Torus => loop {
            let u = rng.random_range(0.0..2.0 * PI);
            let v = rng.random_range(0.0..2.0 * PI);
            let w = TORUS_R + TORUS_TUBE * v.cos();
            if rng.random::<f64>() * (TORUS_R + TORUS_TUBE) <= w {
                break [w * u.cos(), w * u.sin(), TORUS_TUBE * v.sin()];
            }
        },
    }
}

/// Per-sample perturbation of the synthetic shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub scale_min: f64,
    pub scale_max: f64,
    /// Largest rotation angle; `π` or more gives uniform orientations.
    pub max_angle: f64,
    /// Gaussian noise on each coordinate, in canonical-shape units.
    pub noise: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            scale_min: 0.8,
            scale_max: 1.2,
            max_angle: PI / 4.0,
            noise: 0.01,
        }
    }
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        scale_min: 1.0,
        scale_max: 1.0,
        max_angle: 0.0,
        noise: 0.0,
    };
}

/// One labeled unit: a whole sample (classification) or a scene (segmentation).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    /// Sample class for classification; per-point labels live in `cloud.labels`.
    pub class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<String>,
    pub points_per_sample: usize,
    pub samples_per_class: usize,
    #[serde(default)]
    pub jitter: Jitter,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: ["sphere", "cube", "cylinder", "torus"].map(String::from).to_vec(),
            points_per_sample: 512,
            samples_per_class: 50,
            jitter: Jitter::default(),
        }
    }
}

/// `n` points on a jittered instance of `shape`.
pub fn synth_sample<R: Rng + ?Sized>(shape: Shape, n: usize, jitter: &Jitter, rng: &mut R) -> Vec<Point3> {
    let scale = rng.random_range(jitter.scale_min..=jitter.scale_max);
    let rot = geometry::random_rotation(rng, jitter.max_angle);
    (0..n)
        .map(|_| {
            let p = sample_shape_point(shape, rng);
            let mut q = rot.apply(p.map(|c| c * scale));
            if jitter.noise > 0.0 {
                for c in &mut q {
                    *c += jitter.noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
            q
        })
        .collect()
}

/// Classification dataset of analytic shapes, classes in the given order.
pub fn synth_shapes<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<Dataset> {
    if spec.points_per_sample < 8 {
        return Err(Error::invalid(format!(
            "points per sample must be at least 8, got {}",
            spec.points_per_sample
        )));
    }
    let shapes = spec
        .classes
        .iter()
        .map(|c| c.parse::<Shape>())
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(shapes.len() * spec.samples_per_class);
    for (class, &shape) in shapes.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            let coords = synth_sample(shape, spec.points_per_sample, &spec.jitter, rng);
            let cloud = PointCloud::new(coords, None, format!("{}_{i:03}", shape.name()))?;
            samples.push(Sample {
                cloud,
                class: Some(class),
            });
        }
    }
    Ok(Dataset {
        name: "synthetic_shapes".into(),
        task: Task::Classification,
        class_names: spec.classes.clone(),
        samples,
    })
}

/// Segmentation scenes: each holds `shapes_per_scene` jittered shapes laid
/// out along the x-axis, every point labeled with its shape's class.
pub fn synth_scenes<R: Rng + ?Sized>(spec: &SynthSpec, scenes: usize, shapes_per_scene: usize, rng: &mut R) -> Result<Dataset> {
    let shapes = spec
        .classes
        .iter()
        .map(|c| c.parse::<Shape>())
        .collect::<Result<Vec<_>>>()?;
    if shapes.is_empty() || shapes_per_scene == 0 || spec.points_per_sample < shapes_per_scene * 8 {
        return Err(Error::invalid("scenes need at least one class and 8 points per placed shape"));
    }
    let mut samples = Vec::with_capacity(scenes);
    for s in 0..scenes {
        let mut coords = Vec::with_capacity(spec.points_per_sample);
        let mut labels = Vec::with_capacity(spec.points_per_sample);
        for j in 0..shapes_per_scene {
            let class = rng.random_range(0..shapes.len());
            let n = spec.points_per_sample / shapes_per_scene
                + usize::from(j < spec.points_per_sample % shapes_per_scene);
            let offset = [2.5 * j as f64, rng.random_range(-0.5..0.5), 0.0];
            for p in synth_sample(shapes[class], n, &spec.jitter, rng) {
                coords.push([p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]]);
                labels.push(class);
            }
        }
        samples.push(Sample {
            cloud: PointCloud::new(coords, Some(labels), format!("scene_{s:03}"))?,
            class: None,
        });
    }
    Ok(Dataset {
        name: "synthetic_scenes".into(),
        task: Task::Segmentation,
        class_names: spec.classes.clone(),
        samples,
    })
}

/// `n` points of a cloud: a kNN crop around a random seed when the cloud is
/// larger, a with-replacement resample when it is smaller.
pub fn crop_points<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("crop size must be positive"));
    }
    let idx: Vec<usize> = if cloud.len() >= n {
        let seed = rng.random_range(0..cloud.len());
        let mut idx = geometry::knn_points(&cloud.coords, seed, n)?;
        idx.sort_unstable();
        idx
    } else {
        let mut idx: Vec<usize> = (0..cloud.len()).collect();
        idx.extend((cloud.len()..n).map(|_| rng.random_range(0..cloud.len())));
        idx
    };
    let coords = idx.iter().map(|&i| cloud.coords[i]).collect();
    let labels = cloud.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
    PointCloud::new(coords, labels, cloud.id.clone())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    name: String,
    task: Task,
    class_names: Vec<String>,
    samples: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Writes `manifest.json` plus one labeled-points file per sample.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("samples"))?;
    let mut entries = Vec::with_capacity(ds.samples.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let file = format!("samples/{i:05}.txt");
        std::fs::write(dir.join(&file), write_labeled_points(&s.cloud))?;
        entries.push(ManifestEntry { file, class: s.class });
    }
    let manifest = Manifest {
        name: ds.name.clone(),
        task: ds.task,
        class_names: ds.class_names.clone(),
        samples: entries,
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let text = std::fs::read_to_string(dir.join(&e.file))?;
        let labels_required = manifest.task == Task::Segmentation;
        let mut cloud = parse_labeled_points(&text, labels_required).map_err(|err| match err {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", e.file),
            },
            other => other,
        })?;
        cloud.id = e.file.clone();
        samples.push(Sample { cloud, class: e.class });
    }
    Ok(Dataset {
        name: manifest.name,
        task: manifest.task,
        class_names: manifest.class_names,
        samples,
    })
}

fn default_eval_fraction() -> f64 {
    0.2
}

/// Known/unknown class assignment. Known classes get ids `0..N_c` in list
/// order; every unknown class maps to `N_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub dataset: String,
    pub task: Task,
    pub known: Vec<String>,
    pub unknown: Vec<String>,
    /// Share of each known class's samples held out for evaluation.
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
}

pub const S3DIS_CLASSES: [&str; 13] = [
    "ceiling", "floor", "wall", "beam", "column", "window", "door", "table", "chair", "sofa", "bookcase", "board", "clutter",
];

pub const MODELNET40_CLASSES: [&str; 40] = [
    "airplane", "bathtub", "bed", "bench", "bookshelf", "bottle", "bowl", "car", "chair", "cone", "cup", "curtain", "desk",
    "door", "dresser", "flower_pot", "glass_box", "guitar", "keyboard", "lamp", "laptop", "mantel", "monitor",
    "night_stand", "person", "piano", "plant", "radio", "range_hood", "sink", "sofa", "stairs", "stool", "table", "tent",
    "toilet", "tv_stand", "vase", "wardrobe", "xbox",
];

impl SplitConfig {
    pub fn num_known(&self) -> usize {
        self.known.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.known.is_empty() || self.unknown.is_empty() {
            return Err(Error::Config("split needs at least one known and one unknown class".into()));
        }
        let mut seen = HashSet::new();
        for c in self.known.iter().chain(&self.unknown) {
            if !seen.insert(c.as_str()) {
                return Err(Error::Config(format!("class {c:?} listed more than once")));
            }
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::Config(format!("eval fraction {} outside [0, 1)", self.eval_fraction)));
        }
        Ok(())
    }

    fn preset(dataset: &str, task: Task, unknown: &[&str], all: &[&str]) -> Self {
        Self {
            dataset: dataset.into(),
            task,
            known: all.iter().filter(|c| !unknown.contains(c)).map(|c| c.to_string()).collect(),
            unknown: unknown.iter().map(|c| c.to_string()).collect(),
            eval_fraction: default_eval_fraction(),
        }
    }

    /// Table, chair and sofa unknown; ten known classes.
    pub fn s3dis_manual_10_3() -> Self {
        Self::preset("s3dis", Task::Segmentation, &["table", "chair", "sofa"], &S3DIS_CLASSES)
    }

    /// Sofa unknown; twelve known classes.
    pub fn s3dis_manual_12_1() -> Self {
        Self::preset("s3dis", Task::Segmentation, &["sofa"], &S3DIS_CLASSES)
    }

    /// First half of the sorted class names known, second half unknown.
    /// A placeholder split, to be replaced with a curated one when available.
    pub fn alphabetical_halves(dataset: &str, task: Task, classes: &[&str]) -> Self {
        let mut sorted = classes.to_vec();
        sorted.sort_unstable();
        let unknown = &sorted[sorted.len() / 2..];
        Self::preset(dataset, task, unknown, &sorted)
    }

    /// Sphere, cube and cylinder known; torus unknown.
    pub fn synthetic_default() -> Self {
        Self {
            dataset: "synthetic_shapes".into(),
            task: Task::Classification,
            known: ["sphere", "cube", "cylinder"].map(String::from).to_vec(),
            unknown: vec!["torus".into()],
            eval_fraction: default_eval_fraction(),
        }
    }
}

pub fn load_split_config(path: &Path) -> Result<SplitConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: SplitConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Training and evaluation sets after relabeling to known ids plus the unknown id.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub task: Task,
    pub known_names: Vec<String>,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl SplitData {
    pub fn num_known(&self) -> usize {
        self.known_names.len()
    }

    pub fn unknown_id(&self) -> usize {
        self.known_names.len()
    }
}

/// Splits a dataset by class.
///
/// Classification: the last `eval_fraction` of each known class (dataset
/// order) and every unknown sample go to evaluation. Segmentation: the last
/// `eval_fraction` of scenes go to evaluation and unknown points are removed
/// from training scenes. Classes outside the config are dropped.
pub fn apply_split(ds: &Dataset, cfg: &SplitConfig) -> Result<SplitData> {
    cfg.validate()?;
    if ds.task != cfg.task {
        return Err(Error::Config(format!("split is for {:?} but the dataset is {:?}", cfg.task, ds.task)));
    }
    let index: BTreeMap<&str, usize> = ds.class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let n_known = cfg.known.len();
    let mut remap: Vec<Option<usize>> = vec![None; ds.class_names.len()];
    for (new, name) in cfg.known.iter().enumerate() {
        let &old = index
            .get(name.as_str())
            .ok_or_else(|| Error::Config(format!("known class {name:?} not in dataset {}", ds.name)))?;
        remap[old] = Some(new);
    }
    for name in &cfg.unknown {
        let &old = index
            .get(name.as_str())
            .ok_or_else(|| Error::Config(format!("unknown class {name:?} not in dataset {}", ds.name)))?;
        remap[old] = Some(n_known);
    }
    let map = |c: usize| -> Result<Option<usize>> {
        remap
            .get(c)
            .copied()
            .ok_or_else(|| Error::Config(format!("label {c} outside the {} dataset classes", remap.len())))
    };

    let mut train = Vec::new();
    let mut eval = Vec::new();
    match cfg.task {
        Task::Classification => {
            let mut by_class: Vec<Vec<Sample>> = vec![Vec::new(); n_known + 1];
            for s in &ds.samples {
                let c = s
                    .class
                    .ok_or_else(|| Error::Config(format!("sample {} has no class", s.cloud.id)))?;
                if let Some(new) = map(c)? {
                    by_class[new].push(Sample {
                        cloud: s.cloud.clone(),
                        class: Some(new),
                    });
                }
            }
            let unknown = by_class.pop().expect("unknown bucket");
            for bucket in by_class {
                let n_eval = (bucket.len() as f64 * cfg.eval_fraction).round() as usize;
                let cut = bucket.len() - n_eval;
                let mut it = bucket.into_iter();
                train.extend(it.by_ref().take(cut));
                eval.extend(it);
            }
            eval.extend(unknown);
        }
        Task::Segmentation => {
            let n_eval = (ds.samples.len() as f64 * cfg.eval_fraction).round() as usize;
            let cut = ds.samples.len() - n_eval;
            for (i, s) in ds.samples.iter().enumerate() {
                let labels = s
                    .cloud
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("scene {} has no point labels", s.cloud.id)))?;
                let mut coords = Vec::with_capacity(labels.len());
                let mut new_labels = Vec::with_capacity(labels.len());
                for (p, &l) in s.cloud.coords.iter().zip(labels) {
                    match map(l)? {
                        Some(new) if i >= cut || new < n_known => {
                            coords.push(*p);
                            new_labels.push(new);
                        }
                        _ => {}
                    }
                }
                if coords.is_empty() {
                    continue;
                }
                let sample = Sample {
                    cloud: PointCloud::new(coords, Some(new_labels), s.cloud.id.clone())?,
                    class: None,
                };
                if i >= cut {
                    eval.push(sample);
                } else {
                    train.push(sample);
                }
            }
        }
    }
    Ok(SplitData {
        task: cfg.task,
        known_names: cfg.known.clone(),
        train,
        eval,
    })
}
