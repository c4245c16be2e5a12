//! Procedural shapes and area-uniform surface sampling.

use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geom::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// `[size_x, size_y, size_z]`, full edge lengths.
    Box,
    /// `[radius]`.
    Sphere,
    /// `[radius, height]`, axis along local z.
    Cylinder,
    /// `[radius, height]` where height is the straight section between the caps.
    Capsule,
    /// Mug: `[radius, height, handle_reach, handle_thickness, handle_height]`.
    /// A cylinder body with a box handle sticking out along local +x.
    Composite,
}

impl ShapeKind {
    pub fn dim_count(self) -> usize {
        match self {
            ShapeKind::Box => 3,
            ShapeKind::Sphere => 1,
            ShapeKind::Cylinder | ShapeKind::Capsule => 2,
            ShapeKind::Composite => 5,
        }
    }
}

/// A posed primitive. Dimensions are in meters; `rotation` is a unit
/// quaternion stored as `[w, x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub dims: Vec<f64>,
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, dims: Vec<f64>) -> Self {
        Self {
            kind,
            dims,
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
        }
    }

    pub fn posed(mut self, rotation: [f64; 4], translation: [f64; 3]) -> Self {
        self.rotation = rotation;
        self.translation = translation;
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::BadSpec(m));
        if self.dims.len() != self.kind.dim_count() {
            return bad(format!(
                "{:?} takes {} dimensions, got {}",
                self.kind,
                self.kind.dim_count(),
                self.dims.len()
            ));
        }
        if let Some(d) = self.dims.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return bad(format!("dimension {d} is not positive"));
        }
        let norm = self.rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= 1e-6) {
            return bad(format!("rotation quaternion has norm {norm}"));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return bad("translation is not finite".into());
        }
        if self.kind == ShapeKind::Composite {
            let [r, h, _, t, hh] = [self.dims[0], self.dims[1], self.dims[2], self.dims[3], self.dims[4]];
            if t >= 2.0 * r || hh >= h {
                return bad("mug handle must be thinner than the body and shorter than it".into());
            }
        }
        Ok(())
    }

    fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }
}

/// A piece of a primitive's surface in the local frame.
#[derive(Debug, Clone, Copy)]
enum Patch {
    /// `origin + a * u + b * v` for `a, b` in `[0, 1]`.
    Rect { origin: [f64; 3], u: [f64; 3], v: [f64; 3] },
    /// Disk of radius `r` at height `z`, normal along z.
    Disk { r: f64, z: f64, center: [f64; 2] },
    /// Side of a z-aligned cylinder.
    Tube { r: f64, z0: f64, z1: f64 },
    /// Sphere band between heights `lo` and `hi` (relative to the center).
    Zone { r: f64, center: [f64; 3], lo: f64, hi: f64 },
}

impl Patch {
    fn area(&self) -> f64 {
        match *self {
            Patch::Rect { u, v, .. } => {
                let c = Vector3::from(u).cross(&Vector3::from(v));
                c.norm()
            }
            Patch::Disk { r, .. } => PI * r * r,
            Patch::Tube { r, z0, z1 } => 2.0 * PI * r * (z1 - z0),
            Patch::Zone { r, lo, hi, .. } => 2.0 * PI * r * (hi - lo),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match *self {
            Patch::Rect { origin, u, v } => {
                let (a, b): (f64, f64) = (rng.random(), rng.random());
                std::array::from_fn(|k| origin[k] + a * u[k] + b * v[k])
            }
            Patch::Disk { r, z, center } => {
                let rho = r * rng.random::<f64>().sqrt();
                let phi = 2.0 * PI * rng.random::<f64>();
                [center[0] + rho * phi.cos(), center[1] + rho * phi.sin(), z]
            }
            Patch::Tube { r, z0, z1 } => {
                let phi = 2.0 * PI * rng.random::<f64>();
                [r * phi.cos(), r * phi.sin(), z0 + (z1 - z0) * rng.random::<f64>()]
            }
            Patch::Zone { r, center, lo, hi } => {
                // Archimedes: height is uniform on a sphere zone.
                let z = lo + (hi - lo) * rng.random::<f64>();
                let rho = (r * r - z * z).max(0.0).sqrt();
                let phi = 2.0 * PI * rng.random::<f64>();
                [center[0] + rho * phi.cos(), center[1] + rho * phi.sin(), center[2] + z]
            }
        }
    }
}

fn box_patches(size: [f64; 3], center: [f64; 3]) -> Vec<Patch> {
    let h: [f64; 3] = std::array::from_fn(|k| size[k] / 2.0);
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [-1.0, 1.0] {
            let mut origin = center;
            origin[axis] += sign * h[axis];
            origin[a] -= h[a];
            origin[b] -= h[b];
            let mut u = [0.0; 3];
            let mut v = [0.0; 3];
            u[a] = size[a];
            v[b] = size[b];
            out.push(Patch::Rect { origin, u, v });
        }
    }
    out
}

fn cylinder_patches(r: f64, h: f64) -> Vec<Patch> {
    vec![
        Patch::Tube { r, z0: -h / 2.0, z1: h / 2.0 },
        Patch::Disk { r, z: -h / 2.0, center: [0.0; 2] },
        Patch::Disk { r, z: h / 2.0, center: [0.0; 2] },
    ]
}

/// Solids making up a shape, in the local frame, used to reject surface
/// samples buried inside another part of a union.
#[derive(Debug, Clone, Copy)]
enum Solid {
    Cylinder { r: f64, h: f64 },
    Box { size: [f64; 3], center: [f64; 3] },
}

impl Solid {
    fn strictly_contains(&self, p: &[f64; 3]) -> bool {
        const EPS: f64 = 1e-9;
        match *self {
            Solid::Cylinder { r, h } => p[0] * p[0] + p[1] * p[1] < (r - EPS).powi(2) && p[2].abs() < h / 2.0 - EPS,
            Solid::Box { size, center } => (0..3).all(|k| (p[k] - center[k]).abs() < size[k] / 2.0 - EPS),
        }
    }
}

/// Surface patches, each tagged with the solid it belongs to, plus the solids.
fn decompose(spec: &ShapeSpec) -> (Vec<(Patch, usize)>, Vec<Solid>) {
    let d = &spec.dims;
    match spec.kind {
        ShapeKind::Box => (box_patches([d[0], d[1], d[2]], [0.0; 3]).into_iter().map(|p| (p, 0)).collect(), vec![]),
        ShapeKind::Sphere => (
            vec![(Patch::Zone { r: d[0], center: [0.0; 3], lo: -d[0], hi: d[0] }, 0)],
            vec![],
        ),
        ShapeKind::Cylinder => (cylinder_patches(d[0], d[1]).into_iter().map(|p| (p, 0)).collect(), vec![]),
        ShapeKind::Capsule => {
            let (r, h) = (d[0], d[1]);
            (
                vec![
                    (Patch::Tube { r, z0: -h / 2.0, z1: h / 2.0 }, 0),
                    (Patch::Zone { r, center: [0.0, 0.0, h / 2.0], lo: 0.0, hi: r }, 0),
                    (Patch::Zone { r, center: [0.0, 0.0, -h / 2.0], lo: -r, hi: 0.0 }, 0),
                ],
                vec![],
            )
        }
        ShapeKind::Composite => {
            let (r, h, reach, thick, hh) = (d[0], d[1], d[2], d[3], d[4]);
            // The handle starts inside the body so the union is watertight.
            let inner = r * 0.5;
            let size = [r + reach - inner, thick, hh];
            let center = [(inner + r + reach) / 2.0, 0.0, 0.0];
            let body = Solid::Cylinder { r, h };
            let handle = Solid::Box { size, center };
            let mut patches: Vec<(Patch, usize)> = cylinder_patches(r, h).into_iter().map(|p| (p, 0)).collect();
            patches.extend(box_patches(size, center).into_iter().map(|p| (p, 1)));
            (patches, vec![body, handle])
        }
    }
}

/// `n` points drawn area-uniformly from the posed surface of `spec`.
/// The result depends only on `(spec, n, seed)`.
pub fn sample_surface(spec: &ShapeSpec, n: usize, seed: u64) -> Result<PointCloud, DataError> {
    spec.validate()?;
    if n == 0 {
        return Err(DataError::BadSpec("sample count must be at least 1".into()));
    }
    let (patches, solids) = decompose(spec);
    let total: f64 = patches.iter().map(|(p, _)| p.area()).sum();
    let mut cumulative = Vec::with_capacity(patches.len());
    let mut acc = 0.0;
    for (p, _) in &patches {
        acc += p.area() / total;
        cumulative.push(acc);
    }
    let rot = spec.rotation();
    let t = Vector3::from(spec.translation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u: f64 = rng.random();
        let i = cumulative.partition_point(|&c| c <= u).min(patches.len() - 1);
        let (patch, owner) = patches[i];
        let local = patch.sample(&mut rng);
        let buried = solids
            .iter()
            .enumerate()
            .any(|(j, s)| j != owner && s.strictly_contains(&local));
        if buried {
            continue;
        }
        let world = rot * Vector3::from(local) + t;
        out.push([world.x as f32, world.y as f32, world.z as f32]);
    }
    Ok(PointCloud::new(out)?)
}

/// A uniformly random rotation (Shoemake's method).
pub fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t2, t3) = (2.0 * PI * u2, 2.0 * PI * u3);
    let q = [b * t3.cos(), a * t2.sin(), a * t2.cos(), b * t3.sin()];
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    q.map(|c| c / n)
}

/// A randomly sized and posed shape of the given kind, with tabletop-object
/// proportions (a few centimeters to a couple of decimeters).
pub fn random_spec(kind: ShapeKind, rng: &mut ChaCha8Rng) -> ShapeSpec {
    let mut range = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let dims = match kind {
        ShapeKind::Box => vec![range(0.04, 0.2), range(0.04, 0.2), range(0.04, 0.2)],
        ShapeKind::Sphere => vec![range(0.03, 0.1)],
        ShapeKind::Cylinder => vec![range(0.02, 0.08), range(0.05, 0.2)],
        ShapeKind::Capsule => vec![range(0.02, 0.06), range(0.04, 0.15)],
        ShapeKind::Composite => {
            let r = range(0.03, 0.06);
            let h = range(0.07, 0.14);
            vec![r, h, range(0.02, 0.04), range(0.01, 0.02), h * range(0.4, 0.7)]
        }
    };
    let translation = [range(-0.3, 0.3), range(-0.3, 0.3), range(0.0, 0.3)];
    ShapeSpec::new(kind, dims).posed(random_rotation(rng), translation)
}
