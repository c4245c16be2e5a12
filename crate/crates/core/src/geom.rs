//! Geometric kernels over point clouds: normalization, farthest-point
//! sampling, nearest neighbors and the L2 Chamfer distance.
//!
//! Points are stored as `f32`; every reduction accumulates in `f64`.
//! All kernels are brute force, which is adequate for clouds of a few
//! thousand points.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f32; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("all points coincide, normalization scale would be zero")]
    DegenerateCloud,
    #[error("requested {requested} points out of a cloud of {available}")]
    BadCount { requested: usize, available: usize },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
}

/// An ordered list of 3D points with finite coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self, GeomError> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeomError::NonFinite(i));
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Picks the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Appends `other` after `self`.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = Vec::with_capacity(self.len() + other.len());
        points.extend_from_slice(&self.points);
        points.extend_from_slice(&other.points);
        PointCloud { points }
    }

    /// Repeats the cloud cyclically until it holds exactly `n` points.
    pub fn pad_cyclic(&self, n: usize) -> Result<PointCloud, GeomError> {
        if self.is_empty() {
            return Err(GeomError::EmptyCloud);
        }
        Ok(PointCloud {
            points: (0..n).map(|i| self.points[i % self.len()]).collect(),
        })
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut acc = [0f64; 3];
        for p in &self.points {
            for (a, &c) in acc.iter_mut().zip(p) {
                *a += c as f64;
            }
        }
        let n = self.points.len().max(1) as f64;
        acc.map(|a| a / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| norm_f64(p)).fold(0.0, f64::max)
    }

    /// Flat `x y z x y z ...` view used to feed the network.
    pub fn flat(&self) -> Vec<f32> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn from_flat(data: &[f32]) -> Result<PointCloud, GeomError> {
        PointCloud::new(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointCloud {
            points: iter.into_iter().collect(),
        }
    }
}

fn norm_f64(p: &Point) -> f64 {
    p.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

/// Centroid offset and max-radius scale of a partial cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub offset: [f64; 3],
    pub scale: f64,
}

impl NormParams {
    pub fn identity() -> Self {
        Self {
            offset: [0.0; 3],
            scale: 1.0,
        }
    }
}

pub fn compute_norm_params(pp: &PointCloud) -> Result<NormParams, GeomError> {
    if pp.is_empty() {
        return Err(GeomError::EmptyCloud);
    }
    let offset = pp.centroid();
    let scale = pp
        .points
        .iter()
        .map(|p| {
            (0..3)
                .map(|k| {
                    let d = p[k] as f64 - offset[k];
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(GeomError::DegenerateCloud);
    }
    Ok(NormParams { offset, scale })
}

pub fn normalize(pc: &PointCloud, np: &NormParams) -> PointCloud {
    debug_assert!(np.scale > 0.0);
    pc.points
        .iter()
        .map(|p| std::array::from_fn(|k| ((p[k] as f64 - np.offset[k]) / np.scale) as f32))
        .collect()
}

pub fn denormalize(pc: &PointCloud, np: &NormParams) -> PointCloud {
    debug_assert!(np.scale > 0.0);
    pc.points
        .iter()
        .map(|p| std::array::from_fn(|k| (p[k] as f64 * np.scale + np.offset[k]) as f32))
        .collect()
}

fn check_count(k: usize, available: usize) -> Result<(), GeomError> {
    if k == 0 || k > available {
        return Err(GeomError::BadCount {
            requested: k,
            available,
        });
    }
    Ok(())
}

/// Lexicographic comparison on (x, y, z).
fn lex_cmp(a: &Point, b: &Point) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// `true` when candidate `(d, i)` beats the incumbent `(best_d, best)`:
/// larger distance first, then lexicographically smaller point, then lower index.
fn fps_better(pts: &[Point], d: f64, i: usize, best_d: f64, best: usize) -> bool {
    match d.total_cmp(&best_d) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match lex_cmp(&pts[i], &pts[best]) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => i < best,
        },
    }
}

/// Greedy farthest-point sampling.
///
/// The seed is the point farthest from the centroid; every later pick
/// maximizes the distance to the already chosen set. Ties go to the
/// lexicographically smallest point, then to the lowest index, so the
/// selected coordinates do not depend on storage order. Indices are
/// returned in pick order.
pub fn fps(pc: &PointCloud, k: usize) -> Result<Vec<usize>, GeomError> {
    check_count(k, pc.len())?;
    let pts = &pc.points;
    let c = pc.centroid();
    let centroid_dist = |p: &Point| -> f64 { (0..3).map(|j| (p[j] as f64 - c[j]).powi(2)).sum() };

    let mut seed = 0;
    let mut seed_d = centroid_dist(&pts[0]);
    for i in 1..pts.len() {
        let d = centroid_dist(&pts[i]);
        if fps_better(pts, d, i, seed_d, seed) {
            seed = i;
            seed_d = d;
        }
    }

    let mut picked = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; pts.len()];
    let mut taken = vec![false; pts.len()];
    let mut current = seed;
    for _ in 0..k {
        picked.push(current);
        taken[current] = true;
        let anchor = pts[current];
        let mut next: Option<(usize, f64)> = None;
        for i in 0..pts.len() {
            if taken[i] {
                continue;
            }
            let d = dist2(&pts[i], &anchor);
            if d < min_d[i] {
                min_d[i] = d;
            }
            let better = match next {
                None => true,
                Some((b, bd)) => fps_better(pts, min_d[i], i, bd, b),
            };
            if better {
                next = Some((i, min_d[i]));
            }
        }
        match next {
            Some((i, _)) => current = i,
            None => break,
        }
    }
    Ok(picked)
}

/// Indices of the `k` nearest points to `query`, nearest first; equal
/// distances are ordered by index.
pub fn knn(pc: &PointCloud, query: &Point, k: usize) -> Result<Vec<usize>, GeomError> {
    check_count(k, pc.len())?;
    let mut order: Vec<(f64, usize)> = pc
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(p, query), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    Ok(order.into_iter().map(|(_, i)| i).collect())
}

/// Mean squared distance from each point of `from` to its nearest neighbor in `to`.
pub fn directed_mean_sq(from: &[Point], to: &[Point]) -> f64 {
    let mut acc = 0f64;
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let d = dist2(p, q);
            if d < best {
                best = d;
            }
        }
        acc += best;
    }
    acc / from.len() as f64
}

/// Symmetric L2 Chamfer distance: squared nearest-neighbor distance,
/// averaged per side, summed over both directions.
pub fn chamfer_l2(a: &PointCloud, b: &PointCloud) -> Result<f64, GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptyCloud);
    }
    let ab = directed_mean_sq(&a.points, &b.points);
    let ba = directed_mean_sq(&b.points, &a.points);
    Ok(ab + ba)
}
