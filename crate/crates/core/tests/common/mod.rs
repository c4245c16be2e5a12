//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::path::Path;

use oa_complete::data::{generate, DataConfig, GenerateOptions, NormMode};
use oa_complete::{Point, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<Point> {
    (0..n)
        .map(|_| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)])
        .collect()
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(random_points(rng, n, -1.0, 1.0)).unwrap()
}

pub fn sq(a: &Point, b: &Point) -> f64 {
    (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum()
}

fn lex(a: &Point, b: &Point) -> Ordering {
    (0..3)
        .map(|k| a[k].total_cmp(&b[k]))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Largest distance first, then the lexicographically smaller point, then the lower index.
fn beats(pts: &[Point], (d, i): (f64, usize), (bd, b): (f64, usize)) -> bool {
    match d.total_cmp(&bd) {
        Ordering::Equal => match lex(&pts[i], &pts[b]) {
            Ordering::Equal => i < b,
            o => o == Ordering::Less,
        },
        o => o == Ordering::Greater,
    }
}

/// Greedy farthest-point sampling, recomputing every candidate's distance
/// to the whole chosen set at every step.
pub fn fps_oracle(pts: &[Point], k: usize) -> Vec<usize> {
    let n = pts.len() as f64;
    let mut c = [0f64; 3];
    for p in pts {
        for j in 0..3 {
            c[j] += p[j] as f64;
        }
    }
    let c = [c[0] / n, c[1] / n, c[2] / n];
    let from_c = |p: &Point| (0..3).map(|j| (p[j] as f64 - c[j]).powi(2)).sum::<f64>();
    let mut best = (from_c(&pts[0]), 0);
    for i in 1..pts.len() {
        let cand = (from_c(&pts[i]), i);
        if beats(pts, cand, best) {
            best = cand;
        }
    }
    let mut chosen = vec![best.1];
    while chosen.len() < k {
        let mut next: Option<(f64, usize)> = None;
        for i in 0..pts.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&j| sq(&pts[i], &pts[j])).fold(f64::INFINITY, f64::min);
            if next.is_none_or(|b| beats(pts, (d, i), b)) {
                next = Some((d, i));
            }
        }
        chosen.push(next.unwrap().1);
    }
    chosen
}

/// Full stable sort by distance; equal distances keep index order.
pub fn knn_oracle(pts: &[Point], q: &Point, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| sq(&pts[a], q).total_cmp(&sq(&pts[b], q)));
    idx.truncate(k);
    idx
}

/// The double-loop symmetric L2 Chamfer distance.
pub fn chamfer_oracle(a: &[Point], b: &[Point]) -> f64 {
    let side = |x: &[Point], y: &[Point]| {
        let mut total = 0.0;
        for p in x {
            let mut m = f64::INFINITY;
            for q in y {
                m = m.min(sq(p, q));
            }
            total += m;
        }
        total / x.len() as f64
    };
    side(a, b) + side(b, a)
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// A small desk-style dataset with every split populated.
pub fn tiny_dataset(dir: &Path, shapes: usize, seed: u64, mode: NormMode) {
    let opts = GenerateOptions {
        shapes,
        views: 2,
        seed,
        norm_mode: mode,
        config: DataConfig::desk(),
    };
    generate(dir, &opts).unwrap();
}

/// Every point of `a` appears in `b` and vice versa, within `tol` per coordinate.
pub fn same_point_set(a: &[Point], b: &[Point], tol: f32) -> bool {
    let near = |p: &Point, set: &[Point]| set.iter().any(|q| (0..3).all(|k| (p[k] - q[k]).abs() <= tol));
    a.len() == b.len() && a.iter().all(|p| near(p, b)) && b.iter().all(|p| near(p, a))
}
