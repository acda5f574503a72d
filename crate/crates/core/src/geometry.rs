//! Point-cloud primitives: neighborhoods, sampling, bounds and rigid motions.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// A set of 3D points with optional per-point integer labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub coords: Vec<Point3>,
    pub labels: Option<Vec<usize>>,
    pub id: String,
}

impl PointCloud {
    pub fn new(coords: Vec<Point3>, labels: Option<Vec<usize>>, id: impl Into<String>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = coords.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(l) = &labels {
            if l.len() != coords.len() {
                return Err(Error::invalid(format!(
                    "label count {} does not match point count {}",
                    l.len(),
                    coords.len()
                )));
            }
        }
        Ok(Self {
            coords,
            labels,
            id: id.into(),
        })
    }

    /// Unlabeled cloud.
    pub fn from_coords(coords: Vec<Point3>) -> Result<Self> {
        Self::new(coords, None, "")
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Translate to zero centroid and scale so the farthest point sits at radius 1.
    pub fn normalize(&mut self) {
        let c = centroid(&self.coords);
        let mut radius: f64 = 0.0;
        for p in &mut self.coords {
            for a in 0..3 {
                p[a] -= c[a];
            }
            radius = radius.max(norm(*p));
        }
        if radius > 0.0 {
            for p in &mut self.coords {
                for v in p.iter_mut() {
                    *v /= radius;
                }
            }
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn contains(&self, p: Point3, slack: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - slack && p[a] <= self.max[a] + slack)
    }

    pub fn extent(&self) -> Point3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        norm(self.extent())
    }

    /// Uniform point inside the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3 {
        let mut out = [0.0; 3];
        for a in 0..3 {
            let t: f64 = rng.random();
            out[a] = self.min[a] + t * (self.max[a] - self.min[a]);
        }
        out
    }
}

/// A 3×3 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation(pub [[f64; 3]; 3]);

impl Rotation {
    pub const IDENTITY: Rotation = Rotation([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn apply(&self, p: Point3) -> Point3 {
        let m = &self.0;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    /// Rotation by `angle` about the unit vector `axis` (Rodrigues).
    pub fn from_axis_angle(axis: Point3, angle: f64) -> Self {
        let [x, y, z] = axis;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Rotation([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    /// Rotation from a quaternion `(w, x, y, z)`; the input is normalized first.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        Rotation([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthogonality_error(&self) -> f64 {
        let m = &self.0;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let c = ((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// `p ↦ R·p + T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Point3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Rotation::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn apply(&self, p: Point3) -> Point3 {
        let r = self.rotation.apply(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }
}

pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(p: Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let n = points.len().max(1) as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Indices of the `k` points closest to `points[seed]` (seed included),
/// ordered by distance with ties broken by the lower index.
pub fn knn_points(points: &[Point3], seed: usize, k: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if seed >= n {
        return Err(Error::invalid(format!("seed index {seed} out of range for {n} points")));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in [1, {n}]")));
    }
    let s = points[seed];
    // The seed always ranks first, even when duplicated at a lower index.
    let mut keyed: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| (if i == seed { -1.0 } else { dist2(p, s) }, i))
        .collect();
    if k < n {
        keyed.select_nth_unstable_by(k - 1, by_distance_then_index);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(by_distance_then_index);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

pub fn knn(seed: usize, cloud: &PointCloud, k: usize) -> Result<Vec<usize>> {
    knn_points(&cloud.coords, seed, k)
}

/// Greedy max-min subset of size `m` starting at `start`. Ties go to the lower index.
pub fn farthest_point_sample_points(points: &[Point3], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("sample size {m} must lie in [1, {n}]")));
    }
    if start >= n {
        return Err(Error::invalid(format!("start index {start} out of range for {n} points")));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = start;
    chosen.push(current);
    taken[current] = true;
    while chosen.len() < m {
        let c = points[current];
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(*p, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            // Duplicate coordinates must not re-select a taken index.
            if !taken[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
        chosen.push(current);
        taken[current] = true;
    }
    Ok(chosen)
}

pub fn farthest_point_sample(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    farthest_point_sample_points(&cloud.coords, m, start)
}

pub fn aabb_points(points: &[Point3]) -> Aabb {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    Aabb { min, max }
}

pub fn aabb(cloud: &PointCloud) -> Aabb {
    aabb_points(&cloud.coords)
}

/// Uniform direction on the unit sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Point3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Random rotation.
///
/// `max_angle >= π` samples uniformly over SO(3) from a uniform unit
/// quaternion. Smaller values pick a uniform axis and an angle uniform in
/// `[0, max_angle]`; zero yields the identity.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Rotation {
    if max_angle >= PI {
        // Shoemake's subgroup algorithm.
        let u1: f64 = rng.random();
        let u2: f64 = rng.random_range(0.0..2.0 * PI);
        let u3: f64 = rng.random_range(0.0..2.0 * PI);
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        return Rotation::from_quaternion([a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos()]);
    }
    if max_angle <= 0.0 {
        return Rotation::IDENTITY;
    }
    let axis = random_unit_vector(rng);
    let angle = rng.random_range(0.0..=max_angle);
    Rotation::from_axis_angle(axis, angle)
}

pub fn apply_rigid(points: &[Point3], xf: &RigidTransform) -> Vec<Point3> {
    points.iter().map(|&p| xf.apply(p)).collect()
}
