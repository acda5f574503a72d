//! Unknown-point simulation.
//!
//! A seed point and its `k = round(β·N)` nearest neighbors are cut out of a
//! known cloud, moved by a random rotation and translation, and written back
//! into the same rows. The moved rows become the unknown class and get a
//! reference score of 1; every other row is left bit-identical.
//!
//! For classification the moved neighborhood comes from a second sample of a
//! different class and replaces `k` uniformly evicted rows of the host, so the
//! sample size stays `N` and the whole sample is labeled unknown.
//!
//! The ablation generators (rotation only, translation only, scaling,
//! Gaussian noise) reuse the same selection and differ only in how the
//! selected rows are moved.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Aabb, Point3, PointCloud, RigidTransform};

/// How the selected subset is altered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Random rotation plus a translation that drops the subset centroid
    /// uniformly inside the host bounding box. `max_angle >= π` means
    /// uniform over SO(3).
    CutAndMix { max_angle: f64 },
    /// Rotation about the origin, no translation.
    RotationOnly { max_angle: f64 },
    /// Pure translation to a target uniform in a box of `range_fraction`
    /// times the cloud extent, centered on the subset centroid.
    TranslationOnly { range_fraction: f64 },
    /// Isotropic scaling about the subset centroid, factor uniform in `[min, max]`.
    Scaling { min: f64, max: f64 },
    /// Additive noise with σ = `sigma_fraction` × bounding-box diagonal.
    GaussianNoise { sigma_fraction: f64 },
}

impl Default for Generator {
    fn default() -> Self {
        Generator::CutAndMix { max_angle: PI }
    }
}

impl Generator {
    pub fn rotation_default() -> Self {
        Generator::RotationOnly { max_angle: PI }
    }

    pub fn translation_default() -> Self {
        Generator::TranslationOnly { range_fraction: 1.0 }
    }

    pub fn scaling_default() -> Self {
        Generator::Scaling { min: 0.5, max: 1.5 }
    }

    pub fn noise_default() -> Self {
        Generator::GaussianNoise { sigma_fraction: 0.05 }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Generator::CutAndMix { max_angle } | Generator::RotationOnly { max_angle } => max_angle >= 0.0,
            Generator::TranslationOnly { range_fraction } => range_fraction >= 0.0,
            Generator::Scaling { min, max } => min > 0.0 && min <= max,
            Generator::GaussianNoise { sigma_fraction } => sigma_fraction >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid generator parameters {self:?}")))
        }
    }
}

/// Which donor rows a classification mix takes from the second sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DonorSelection {
    #[default]
    SeedKnn,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsParams {
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(default)]
    pub generator: Generator,
    /// Probability that a classification sample is mixed.
    #[serde(default = "default_aug_ratio")]
    pub aug_ratio: f64,
    #[serde(default)]
    pub donor_selection: DonorSelection,
}

fn default_aug_ratio() -> f64 {
    0.1
}

impl UpsParams {
    /// β ∈ [0.0, 0.6].
    pub fn segmentation_default() -> Self {
        Self {
            beta_min: 0.0,
            beta_max: 0.6,
            generator: Generator::default(),
            aug_ratio: 1.0,
            donor_selection: DonorSelection::SeedKnn,
        }
    }

    /// β ∈ [0.4, 0.6], augmentation ratio 0.1.
    pub fn classification_default() -> Self {
        Self {
            beta_min: 0.4,
            beta_max: 0.6,
            generator: Generator::default(),
            aug_ratio: 0.1,
            donor_selection: DonorSelection::SeedKnn,
        }
    }

    pub fn with_beta(mut self, beta_min: f64, beta_max: f64) -> Self {
        self.beta_min = beta_min;
        self.beta_max = beta_max;
        self
    }

    pub fn with_generator(mut self, generator: Generator) -> Self {
        self.generator = generator;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.beta_min && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return Err(Error::invalid(format!(
                "selection ratio range [{}, {}] must satisfy 0 <= min <= max < 1",
                self.beta_min, self.beta_max
            )));
        }
        if !(0.0..=1.0).contains(&self.aug_ratio) {
            return Err(Error::invalid(format!("aug_ratio {} outside [0, 1]", self.aug_ratio)));
        }
        self.generator.validate()
    }

    pub fn draw_beta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(self.beta_min..=self.beta_max)
    }
}

/// `round(β·N)`.
pub fn selection_count(beta: f64, n: usize) -> usize {
    ((beta * n as f64).round() as usize).min(n)
}

/// A cloud after unknown-point simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedCloud {
    pub coords: Vec<Point3>,
    /// Per-point task labels; the unknown class id is the known-class count.
    pub task_labels: Vec<usize>,
    /// 1 for simulated unknown points, 0 otherwise.
    pub ref_scores: Vec<f64>,
    /// Rows holding altered points, ascending.
    pub selected: Vec<usize>,
    /// For each entry of `selected`, the source row it was computed from
    /// (in the input cloud, or in the donor sample for classification mixes).
    pub source_rows: Vec<usize>,
    /// The rigid transform applied, for the rigid generators.
    pub transform: Option<RigidTransform>,
    /// Sample-level label for classification mixes.
    pub sample_label: Option<usize>,
}

impl AugmentedCloud {
    /// The input passed through untouched.
    pub fn unchanged(coords: Vec<Point3>, task_labels: Vec<usize>) -> Self {
        let n = coords.len();
        Self {
            coords,
            task_labels,
            ref_scores: vec![0.0; n],
            selected: Vec::new(),
            source_rows: Vec::new(),
            transform: None,
            sample_label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn to_cloud(&self, id: impl Into<String>) -> PointCloud {
        PointCloud {
            coords: self.coords.clone(),
            labels: Some(self.task_labels.clone()),
            id: id.into(),
        }
    }
}

/// Uniform seed point plus its `k` nearest neighbors, in distance order.
pub fn select_neighborhood<R: Rng + ?Sized>(points: &[Point3], k: usize, rng: &mut R) -> Result<Vec<usize>> {
    let seed = rng.random_range(0..points.len());
    geometry::knn_points(points, seed, k)
}

enum SubsetMove {
    Rigid(RigidTransform),
    Scale { center: Point3, factor: f64 },
    Noise { sigma: f64 },
}

/// Draws the motion applied to `subset`. `bounds` is the box the subset is
/// moved into (the host cloud).
fn draw_move<R: Rng + ?Sized>(generator: &Generator, subset: &[Point3], bounds: &Aabb, rng: &mut R) -> Result<SubsetMove> {
    Ok(match *generator {
        Generator::CutAndMix { max_angle } => {
            let rotation = geometry::random_rotation(rng, max_angle);
            let rotated: Vec<Point3> = subset.iter().map(|&p| rotation.apply(p)).collect();
            let target = bounds.sample(rng);
            let translation = geometry::sub(target, geometry::centroid(&rotated));
            SubsetMove::Rigid(RigidTransform { rotation, translation })
        }
        Generator::RotationOnly { max_angle } => SubsetMove::Rigid(RigidTransform {
            rotation: geometry::random_rotation(rng, max_angle),
            translation: [0.0; 3],
        }),
        Generator::TranslationOnly { range_fraction } => {
            // target - centroid, with target uniform in the box centered on the centroid
            let ext = bounds.extent();
            let mut translation = [0.0; 3];
            for a in 0..3 {
                let t: f64 = rng.random();
                translation[a] = (t - 0.5) * range_fraction * ext[a];
            }
            SubsetMove::Rigid(RigidTransform {
                rotation: geometry::Rotation::IDENTITY,
                translation,
            })
        }
        Generator::Scaling { min, max } => SubsetMove::Scale {
            center: geometry::centroid(subset),
            factor: rng.random_range(min..=max),
        },
        Generator::GaussianNoise { sigma_fraction } => SubsetMove::Noise {
            sigma: sigma_fraction * bounds.diagonal(),
        },
    })
}

fn apply_move<R: Rng + ?Sized>(mv: &SubsetMove, subset: &[Point3], rng: &mut R) -> Result<Vec<Point3>> {
    Ok(match mv {
        SubsetMove::Rigid(xf) => geometry::apply_rigid(subset, xf),
        SubsetMove::Scale { center, factor } => subset
            .iter()
            .map(|p| {
                [
                    center[0] + factor * (p[0] - center[0]),
                    center[1] + factor * (p[1] - center[1]),
                    center[2] + factor * (p[2] - center[2]),
                ]
            })
            .collect(),
        SubsetMove::Noise { sigma } => {
            if *sigma == 0.0 {
                return Ok(subset.to_vec());
            }
            let normal = Normal::new(0.0, *sigma).map_err(|e| Error::invalid(e.to_string()))?;
            subset
                .iter()
                .map(|p| [p[0] + normal.sample(rng), p[1] + normal.sample(rng), p[2] + normal.sample(rng)])
                .collect()
        }
    })
}

fn require_labels(cloud: &PointCloud) -> Result<&[usize]> {
    cloud
        .labels
        .as_deref()
        .ok_or_else(|| Error::invalid(format!("cloud '{}' has no per-point labels", cloud.id)))
}

/// Overwrites the `selected` rows with `xf` applied to them and marks them unknown.
///
/// Exposed so callers can pin the transform (for instance the identity).
pub fn cut_and_mix(cloud: &PointCloud, selected: &[usize], xf: &RigidTransform, unknown_class: usize) -> Result<AugmentedCloud> {
    let labels = require_labels(cloud)?;
    let mut sel = selected.to_vec();
    sel.sort_unstable();
    if let Some(&bad) = sel.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::invalid(format!("selected row {bad} out of range")));
    }
    let mut out = AugmentedCloud::unchanged(cloud.coords.clone(), labels.to_vec());
    for &i in &sel {
        out.coords[i] = xf.apply(cloud.coords[i]);
        out.task_labels[i] = unknown_class;
        out.ref_scores[i] = 1.0;
    }
    out.source_rows = sel.clone();
    out.selected = sel;
    out.transform = Some(*xf);
    Ok(out)
}

fn simulate<R: Rng + ?Sized>(cloud: &PointCloud, params: &UpsParams, unknown_class: usize, rng: &mut R) -> Result<AugmentedCloud> {
    params.validate()?;
    let labels = require_labels(cloud)?;
    let n = cloud.len();
    let beta = params.draw_beta(rng);
    let k = selection_count(beta, n);
    if k == 0 {
        return Ok(AugmentedCloud::unchanged(cloud.coords.clone(), labels.to_vec()));
    }
    let mut sel = select_neighborhood(&cloud.coords, k, rng)?;
    sel.sort_unstable();
    let subset: Vec<Point3> = sel.iter().map(|&i| cloud.coords[i]).collect();
    let bounds = geometry::aabb(cloud);
    let mv = draw_move(&params.generator, &subset, &bounds, rng)?;
    let moved = apply_move(&mv, &subset, rng)?;

    let mut out = AugmentedCloud::unchanged(cloud.coords.clone(), labels.to_vec());
    for (&row, p) in sel.iter().zip(moved) {
        out.coords[row] = p;
        out.task_labels[row] = unknown_class;
        out.ref_scores[row] = 1.0;
    }
    out.source_rows = sel.clone();
    out.selected = sel;
    if let SubsetMove::Rigid(xf) = mv {
        out.transform = Some(xf);
    }
    Ok(out)
}

/// Segmentation simulator. `unknown_class` is the id assigned to the moved
/// points (the known-class count when known ids are `0..N_c`).
///
/// A draw with `k = 0` returns the input unchanged. Non cut-and-mix
/// generators are routed through [`generate_variant`] semantics.
pub fn ups_segmentation<R: Rng + ?Sized>(cloud: &PointCloud, params: &UpsParams, unknown_class: usize, rng: &mut R) -> Result<AugmentedCloud> {
    simulate(cloud, params, unknown_class, rng)
}

/// Ablation generators: same selection as [`ups_segmentation`], different motion.
pub fn generate_variant<R: Rng + ?Sized>(cloud: &PointCloud, params: &UpsParams, unknown_class: usize, rng: &mut R) -> Result<AugmentedCloud> {
    if matches!(params.generator, Generator::CutAndMix { .. }) {
        return Err(Error::invalid("generate_variant expects an ablation generator, got cut_and_mix"));
    }
    simulate(cloud, params, unknown_class, rng)
}

/// Classification simulator: donor rows from `donor` are moved into `host`,
/// replacing `k` uniformly chosen host rows. The result is labeled unknown.
pub fn uss_classification<R: Rng + ?Sized>(
    host: &PointCloud,
    host_class: usize,
    donor: &PointCloud,
    donor_class: usize,
    params: &UpsParams,
    unknown_class: usize,
    rng: &mut R,
) -> Result<AugmentedCloud> {
    params.validate()?;
    if host_class == donor_class {
        return Err(Error::invalid(format!("mixed samples must come from different classes, both are {host_class}")));
    }
    let n = host.len();
    if donor.len() != n {
        return Err(Error::invalid(format!("sample sizes differ: {} vs {}", n, donor.len())));
    }
    let beta = params.draw_beta(rng);
    let k = selection_count(beta, n);
    if k == 0 {
        return Err(Error::invalid(format!("selection ratio {beta} gives k = 0; classification mixing needs k > 0")));
    }
    let donor_rows = match params.donor_selection {
        DonorSelection::SeedKnn => select_neighborhood(&donor.coords, k, rng)?,
        DonorSelection::Uniform => {
            let mut v = index::sample(rng, n, k).into_vec();
            v.sort_unstable();
            v
        }
    };
    let subset: Vec<Point3> = donor_rows.iter().map(|&i| donor.coords[i]).collect();
    let bounds = geometry::aabb(host);
    let mv = draw_move(&params.generator, &subset, &bounds, rng)?;
    let moved = apply_move(&mv, &subset, rng)?;

    let mut slots = index::sample(rng, n, k).into_vec();
    slots.sort_unstable();

    let mut coords = host.coords.clone();
    let mut ref_scores = vec![0.0; n];
    for (&slot, p) in slots.iter().zip(moved) {
        coords[slot] = p;
        ref_scores[slot] = 1.0;
    }
    Ok(AugmentedCloud {
        coords,
        task_labels: vec![unknown_class; n],
        ref_scores,
        selected: slots,
        source_rows: donor_rows,
        transform: match mv {
            SubsetMove::Rigid(xf) => Some(xf),
            _ => None,
        },
        sample_label: Some(unknown_class),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labeled_cloud(rng: &mut ChaCha8Rng, n: usize, label: usize) -> PointCloud {
        let coords = (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        PointCloud::new(coords, Some(vec![label; n]), "t").unwrap()
    }

    #[test]
    fn zero_beta_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = labeled_cloud(&mut rng, 100, 2);
        let params = UpsParams::segmentation_default().with_beta(0.0, 0.0);
        let out = ups_segmentation(&cloud, &params, 5, &mut rng).unwrap();
        assert_eq!(out.coords, cloud.coords);
        assert!(out.selected.is_empty());
        assert!(out.ref_scores.iter().all(|&s| s == 0.0));
        assert_eq!(out.task_labels, vec![2; 100]);
    }

    #[test]
    fn identity_transform_hook() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = labeled_cloud(&mut rng, 50, 0);
        let sel = select_neighborhood(&cloud.coords, 20, &mut rng).unwrap();
        let out = cut_and_mix(&cloud, &sel, &RigidTransform::IDENTITY, 3).unwrap();
        assert_eq!(out.coords, cloud.coords);
        assert_eq!(out.selected.len(), 20);
        assert_eq!(out.ref_scores.iter().sum::<f64>(), 20.0);
        for &i in &out.selected {
            assert_eq!(out.task_labels[i], 3);
        }
    }

    #[test]
    fn k_arithmetic_and_untouched_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = labeled_cloud(&mut rng, 4096, 1);
        let params = UpsParams::segmentation_default().with_beta(0.6, 0.6);
        let out = ups_segmentation(&cloud, &params, 4, &mut rng).unwrap();
        assert_eq!(selection_count(0.6, 4096), 2458);
        assert_eq!(out.selected.len(), 2458);
        // Set-difference oracle: rows outside the mask must match exactly.
        let mask: std::collections::HashSet<usize> = out.selected.iter().copied().collect();
        let untouched: Vec<usize> = (0..4096).filter(|i| !mask.contains(i)).collect();
        assert_eq!(untouched.len(), 1638);
        for i in untouched {
            assert_eq!(out.coords[i], cloud.coords[i]);
            assert_eq!(out.task_labels[i], 1);
        }
        let moved: Vec<Point3> = out.selected.iter().map(|&i| out.coords[i]).collect();
        assert!(geometry::aabb(&cloud).contains(geometry::centroid(&moved), 1e-9));
    }

    #[test]
    fn missing_labels_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = PointCloud::from_coords(vec![[0.0; 3]; 4]).unwrap();
        assert!(ups_segmentation(&cloud, &UpsParams::segmentation_default(), 1, &mut rng).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(UpsParams::segmentation_default().with_beta(0.5, 0.4).validate().is_err());
        assert!(UpsParams::segmentation_default().with_beta(0.0, 1.0).validate().is_err());
        let mut p = UpsParams::classification_default();
        p.aug_ratio = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn uss_counts_and_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = labeled_cloud(&mut rng, 1024, 0);
        let b = labeled_cloud(&mut rng, 1024, 1);
        let params = UpsParams::classification_default().with_beta(0.5, 0.5);
        let out = uss_classification(&a, 0, &b, 1, &params, 3, &mut rng).unwrap();
        assert_eq!(out.len(), 1024);
        assert_eq!(out.ref_scores.iter().filter(|&&s| s == 1.0).count(), 512);
        assert_eq!(out.sample_label, Some(3));
    }

    #[test]
    fn uss_rows_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = labeled_cloud(&mut rng, 300, 0);
        let b = labeled_cloud(&mut rng, 300, 2);
        let params = UpsParams::classification_default();
        let out = uss_classification(&a, 0, &b, 2, &params, 3, &mut rng).unwrap();
        let xf = out.transform.unwrap();
        let mask: std::collections::HashSet<usize> = out.selected.iter().copied().collect();
        for i in 0..300 {
            if !mask.contains(&i) {
                assert_eq!(out.coords[i], a.coords[i]);
                assert_eq!(out.ref_scores[i], 0.0);
            }
        }
        for (slot, src) in out.selected.iter().zip(&out.source_rows) {
            let p = b.coords[*src];
            let r = xf.rotation.0;
            let expect: Vec<f64> = (0..3)
                .map(|row| r[row][0] * p[0] + r[row][1] * p[1] + r[row][2] * p[2] + xf.translation[row])
                .collect();
            assert_eq!(out.coords[*slot].to_vec(), expect);
        }
    }

    #[test]
    fn uss_uniform_donor() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = labeled_cloud(&mut rng, 200, 0);
        let b = labeled_cloud(&mut rng, 200, 1);
        let mut params = UpsParams::classification_default();
        params.donor_selection = DonorSelection::Uniform;
        let out = uss_classification(&a, 0, &b, 1, &params, 2, &mut rng).unwrap();
        assert_eq!(out.selected.len(), out.source_rows.len());
    }

    #[test]
    fn uss_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = labeled_cloud(&mut rng, 100, 0);
        let b = labeled_cloud(&mut rng, 100, 0);
        let params = UpsParams::classification_default();
        assert!(uss_classification(&a, 0, &b, 0, &params, 2, &mut rng).is_err());
        let zero = UpsParams::classification_default().with_beta(0.0, 0.0);
        assert!(uss_classification(&a, 0, &b, 1, &zero, 2, &mut rng).is_err());
        let c = labeled_cloud(&mut rng, 90, 1);
        assert!(uss_classification(&a, 0, &c, 1, &params, 2, &mut rng).is_err());
    }

    #[test]
    fn variant_noop_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = labeled_cloud(&mut rng, 200, 0);
        for g in [Generator::RotationOnly { max_angle: 0.0 }, Generator::Scaling { min: 1.0, max: 1.0 }] {
            let params = UpsParams::segmentation_default().with_beta(0.3, 0.5).with_generator(g);
            let out = generate_variant(&cloud, &params, 1, &mut rng).unwrap();
            for (a, b) in out.coords.iter().zip(&cloud.coords) {
                assert!(geometry::dist2(*a, *b) < 1e-24);
            }
            assert!(!out.selected.is_empty());
        }
        let params = UpsParams::segmentation_default();
        assert!(generate_variant(&cloud, &params, 1, &mut rng).is_err());
    }

    #[test]
    fn translation_variant_stays_rigid() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cloud = labeled_cloud(&mut rng, 300, 0);
        let params = UpsParams::segmentation_default()
            .with_beta(0.3, 0.3)
            .with_generator(Generator::translation_default());
        let out = generate_variant(&cloud, &params, 1, &mut rng).unwrap();
        let xf = out.transform.unwrap();
        assert_eq!(xf.rotation, geometry::Rotation::IDENTITY);
        let ext = geometry::aabb(&cloud).extent();
        for a in 0..3 {
            assert!(xf.translation[a].abs() <= 0.5 * ext[a]);
        }
    }

    #[test]
    fn noise_variant_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Unit-diagonal box: side 1/sqrt(3).
        let side = 1.0 / 3f64.sqrt();
        let n = 10_100;
        let mut coords: Vec<Point3> = (0..n)
            .map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side), rng.random_range(0.0..side)])
            .collect();
        coords[0] = [0.0; 3];
        coords[1] = [side; 3];
        let cloud = PointCloud::new(coords, Some(vec![0; n]), "noise").unwrap();
        let params = UpsParams::segmentation_default()
            .with_beta(0.99, 0.99)
            .with_generator(Generator::GaussianNoise { sigma_fraction: 0.05 });
        let out = generate_variant(&cloud, &params, 1, &mut rng).unwrap();
        let deltas: Vec<f64> = out
            .selected
            .iter()
            .flat_map(|&i| (0..3).map(move |a| (i, a)))
            .map(|(i, a)| out.coords[i][a] - cloud.coords[i][a])
            .collect();
        let m = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / m;
        let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let sd = var.sqrt();
        let sigma = 0.05 * geometry::aabb(&cloud).diagonal();
        // Standard error of a sample sd is about σ/sqrt(2m).
        let se = sigma / (2.0 * m).sqrt();
        assert!((sd - sigma).abs() < 3.0 * se, "sd {sd} vs {sigma}");
    }

    #[test]
    fn beta_distribution_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = UpsParams::segmentation_default().with_beta(0.2, 0.6);
        let n = 100_000;
        let mean = (0..n).map(|_| params.draw_beta(&mut rng)).sum::<f64>() / n as f64;
        let sd = (0.4f64).powi(2) / 12.0;
        let se = (sd / n as f64).sqrt();
        assert!((mean - 0.4).abs() < 3.0 * se);
    }

    #[test]
    fn seed_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = labeled_cloud(&mut rng, 500, 0);
        let params = UpsParams::segmentation_default();
        let a = ups_segmentation(&cloud, &params, 1, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = ups_segmentation(&cloud, &params, 1, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }
}
