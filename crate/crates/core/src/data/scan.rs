//! Single-view partial scans by z-buffer culling.

use nalgebra::Vector3;

use super::DataError;
use crate::geom::PointCloud;

/// Pixels per side of the virtual depth image unless configured otherwise.
pub const DEFAULT_RESOLUTION: usize = 64;

/// A point also occludes the pixels within `ceil(resolution / SPLAT_DIVISOR)`
/// of its own, so the splat covers the same angle at every resolution.
pub const SPLAT_DIVISOR: usize = 32;

/// Depth slack of the splat test, in splat radii at the point's distance.
/// Lets a sloped surface keep its own points while hiding the far side.
pub const SPLAT_DEPTH_MARGIN: f64 = 4.0;

fn to_vec(p: &[f32; 3]) -> Vector3<f64> {
    Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
}

/// Indices (ascending) of the points a pinhole camera at `camera` sees.
///
/// The camera looks at the centroid of `full` with a square field of view
/// fitted to the cloud's bounding sphere. Each point is projected onto a
/// `resolution x resolution` grid and only the point nearest the camera
/// survives in each pixel; ties go to the lower index. A survivor is also
/// dropped when a point splatted from a nearby pixel is clearly in front of it.
pub fn virtual_scan_indices(full: &PointCloud, camera: [f64; 3], resolution: usize) -> Result<Vec<usize>, DataError> {
    if full.is_empty() || resolution == 0 {
        return Err(DataError::EmptyScan);
    }
    let c = Vector3::from(full.centroid());
    let radius = full.points().iter().map(|p| (to_vec(p) - c).norm()).fold(0.0, f64::max);
    let cam = Vector3::from(camera);
    let distance = (c - cam).norm();
    if !(distance > radius) {
        return Err(DataError::CameraInside { distance, radius });
    }
    let forward = (c - cam) / distance;
    let helper = if forward.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let right = forward.cross(&helper).normalize();
    let up = right.cross(&forward);
    // tangent of the half-angle under which the bounding sphere appears
    let half = if radius > 0.0 {
        radius / (distance * distance - radius * radius).sqrt()
    } else {
        1.0
    };

    let cell = |t: f64| (((t + half) / (2.0 * half)) * resolution as f64).floor().clamp(0.0, (resolution - 1) as f64) as usize;
    let mut best: Vec<Option<(f64, usize)>> = vec![None; resolution * resolution];
    for (i, p) in full.points().iter().enumerate() {
        let rel = to_vec(p) - cam;
        let depth = rel.dot(&forward);
        if depth <= 0.0 {
            continue;
        }
        let (u, v) = (rel.dot(&right) / depth, rel.dot(&up) / depth);
        let pixel = cell(v) * resolution + cell(u);
        let d = rel.norm();
        let slot = &mut best[pixel];
        if slot.is_none_or(|(bd, _)| d < bd) {
            *slot = Some((d, i));
        }
    }
    // Points are splatted over a neighborhood so that a pixel left empty
    // by sparse sampling does not expose the surface behind it.
    let r = resolution.div_ceil(SPLAT_DIVISOR) as isize;
    let res = resolution as isize;
    let mut front = vec![f64::INFINITY; resolution * resolution];
    for (pixel, slot) in best.iter().enumerate() {
        let Some((d, _)) = slot else { continue };
        let (py, px) = ((pixel / resolution) as isize, (pixel % resolution) as isize);
        for y in (py - r).max(0)..=(py + r).min(res - 1) {
            for x in (px - r).max(0)..=(px + r).min(res - 1) {
                let f = &mut front[(y * res + x) as usize];
                *f = f.min(*d);
            }
        }
    }
    let splat_angle = r as f64 * 2.0 * half / resolution as f64;
    let mut keep: Vec<usize> = best
        .iter()
        .enumerate()
        .filter_map(|(pixel, slot)| {
            let (d, i) = (*slot)?;
            let margin = SPLAT_DEPTH_MARGIN * splat_angle * d;
            (d <= front[pixel] + margin).then_some(i)
        })
        .collect();
    if keep.is_empty() {
        return Err(DataError::EmptyScan);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// The visible subset of `full`, in input order.
pub fn virtual_scan(full: &PointCloud, camera: [f64; 3], resolution: usize) -> Result<PointCloud, DataError> {
    Ok(full.select(&virtual_scan_indices(full, camera, resolution)?))
}
