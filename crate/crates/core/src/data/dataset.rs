//! Samples, splits and on-disk datasets.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{read_cloud, write_cloud};
use super::scan::{virtual_scan_indices, DEFAULT_RESOLUTION};
use super::shape::{random_spec, sample_surface, ShapeKind, ShapeSpec};
use super::DataError;
use crate::geom::{self, NormParams, PointCloud};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: u32 = 1;

/// Sizes and scanner settings for sample construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Points kept in each partial cloud.
    pub n_partial: usize,
    /// Points kept in each ground-truth cloud.
    pub n_gt: usize,
    /// Oversampled surface points before scanning and subsampling.
    pub surface_points: usize,
    /// Pixels per side of the virtual depth image.
    pub resolution: usize,
    /// Camera distance from the centroid, in bounding-sphere radii.
    pub camera_distance: f64,
    /// Fresh viewpoints tried before a view is given up.
    pub camera_attempts: usize,
}

impl Default for DataConfig {
    /// Full-scale sample sizes. 2048 visible points need a finer depth
    /// image than the 64 pixel default.
    fn default() -> Self {
        Self {
            n_partial: 2048,
            n_gt: 8192,
            surface_points: 20000,
            resolution: 128,
            camera_distance: 2.5,
            camera_attempts: 16,
        }
    }
}

impl DataConfig {
    /// Sizes matching [`crate::ModelConfig::desk`].
    pub fn desk() -> Self {
        Self {
            n_partial: 128,
            n_gt: 256,
            resolution: DEFAULT_RESOLUTION,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_partial == 0 || self.n_gt == 0 || self.resolution == 0 || self.camera_attempts == 0 {
            return Err(DataError::BadSpec("data config counts must be positive".into()));
        }
        if self.n_gt > self.surface_points {
            return Err(DataError::BadSpec(format!(
                "cannot keep {} ground-truth points out of {} surface samples",
                self.n_gt, self.surface_points
            )));
        }
        if !(self.camera_distance > 1.0) {
            return Err(DataError::BadSpec("camera must sit outside the bounding sphere".into()));
        }
        Ok(())
    }
}

/// Which parameters normalize the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Ground truth shares the partial cloud's offset and scale.
    Ours,
    /// Ground truth is normalized with its own centroid and radius.
    Baseline,
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Ours => "ours",
            NormMode::Baseline => "baseline",
        })
    }
}

impl FromStr for NormMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ours" => Ok(NormMode::Ours),
            "baseline" => Ok(NormMode::Baseline),
            other => Err(format!("unknown norm mode {other:?}, expected ours or baseline")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    HoldoutViews,
    HoldoutModels,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::HoldoutViews, Split::HoldoutModels];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::HoldoutViews => "holdout-views",
            Split::HoldoutModels => "holdout-models",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| format!("unknown split {s:?}, expected train, val, holdout-views or holdout-models"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub shape_id: usize,
    pub view: usize,
    pub camera: [f64; 3],
}

/// A normalized training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub partial: PointCloud,
    pub gt: PointCloud,
    /// Parameters computed from the raw partial cloud.
    pub norm: NormParams,
    /// Parameters applied to the ground truth; equal to `norm` in [`NormMode::Ours`].
    pub gt_norm: NormParams,
    pub meta: SampleMeta,
}

/// Intermediate clouds of [`build_sample`], kept for inspection.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub sample: Sample,
    pub surface: PointCloud,
    /// Indices into `surface` of the scanned partial cloud.
    pub visible: Vec<usize>,
}

/// Scans an already sampled surface and normalizes the pair.
pub fn build_from_surface(
    surface: &PointCloud,
    camera: [f64; 3],
    cfg: &DataConfig,
    mode: NormMode,
    meta: SampleMeta,
) -> Result<SampleTrace, DataError> {
    let visible = virtual_scan_indices(surface, camera, cfg.resolution)?;
    if visible.len() < cfg.n_partial {
        return Err(DataError::InsufficientPoints {
            got: visible.len(),
            need: cfg.n_partial,
        });
    }
    let partial_raw = surface.select(&visible);
    let norm = geom::compute_norm_params(&partial_raw)?;
    let partial_n = geom::normalize(&partial_raw, &norm);
    let partial = partial_n.select(&geom::fps(&partial_n, cfg.n_partial)?);
    let gt_norm = match mode {
        NormMode::Ours => norm,
        NormMode::Baseline => geom::compute_norm_params(surface)?,
    };
    let gt_n = geom::normalize(surface, &gt_norm);
    let gt = gt_n.select(&geom::fps(&gt_n, cfg.n_gt)?);
    Ok(SampleTrace {
        sample: Sample {
            partial,
            gt,
            norm,
            gt_norm,
            meta,
        },
        surface: surface.clone(),
        visible,
    })
}

/// Samples the surface of `spec` with `seed`, scans it from `camera` and
/// normalizes both clouds.
pub fn build_sample(
    spec: &ShapeSpec,
    camera: [f64; 3],
    seed: u64,
    cfg: &DataConfig,
    mode: NormMode,
) -> Result<Sample, DataError> {
    cfg.validate()?;
    let surface = sample_surface(spec, cfg.surface_points, seed)?;
    let meta = SampleMeta {
        shape_id: 0,
        view: 0,
        camera,
    };
    Ok(build_from_surface(&surface, camera, cfg, mode, meta)?.sample)
}

/// A camera on a uniformly random direction around the cloud's centroid.
pub fn random_camera(surface: &PointCloud, distance: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let c = Vector3::from(surface.centroid());
    let radius = surface
        .points()
        .iter()
        .map(|p| (Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) - c).norm())
        .fold(0.0, f64::max);
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let rho = (1.0 - z * z).sqrt();
    let dir = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
    let cam = c + dir * (distance * radius.max(1e-9));
    [cam.x, cam.y, cam.z]
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub shape_id: usize,
    pub view: usize,
    pub spec: ShapeSpec,
    pub camera: [f64; 3],
    /// Seed of the surface sampling.
    pub seed: u64,
    pub norm: NormParams,
    pub gt_norm: NormParams,
    pub partial: String,
    pub gt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub shapes: usize,
    pub views: usize,
    pub norm_mode: NormMode,
    pub config: DataConfig,
    pub samples: Vec<SampleRecord>,
}

/// What to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub shapes: usize,
    pub views: usize,
    pub seed: u64,
    pub norm_mode: NormMode,
    pub config: DataConfig,
}

/// Kinds cycled through by the training shapes; capsules are reserved
/// for the holdout-models split.
pub const TRAIN_KINDS: [ShapeKind; 4] = [ShapeKind::Box, ShapeKind::Sphere, ShapeKind::Cylinder, ShapeKind::Composite];
pub const HOLDOUT_KIND: ShapeKind = ShapeKind::Capsule;

/// A view assignment: which shape, which view index, which split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewSlot {
    pub shape_id: usize,
    pub view: usize,
    pub split: Split,
}

/// The split plan for `shapes` training shapes with `views` views each.
///
/// Views `0..views-1` of each shape are training views and the last one is
/// held out. Every fifth shape gets one extra view for validation. Another
/// `ceil(shapes / 10)` shapes of an unseen kind form the holdout-models split.
pub fn plan_views(shapes: usize, views: usize) -> Vec<ViewSlot> {
    let mut slots = Vec::new();
    for s in 0..shapes {
        for v in 0..views {
            let split = if v + 1 == views { Split::HoldoutViews } else { Split::Train };
            slots.push(ViewSlot { shape_id: s, view: v, split });
        }
        if s % 5 == 0 {
            slots.push(ViewSlot {
                shape_id: s,
                view: views,
                split: Split::Val,
            });
        }
    }
    for k in 0..shapes.div_ceil(10) {
        slots.push(ViewSlot {
            shape_id: shapes + k,
            view: 0,
            split: Split::HoldoutModels,
        });
    }
    slots
}

const SHAPE_STREAM: u64 = 0xffff;

fn shape_rng(seed: u64, shape_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((shape_id as u64) << 16) | SHAPE_STREAM);
    rng
}

fn view_rng(seed: u64, shape_id: usize, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((shape_id as u64) << 16) | (view as u64 & 0x7fff));
    rng
}

/// Generates and writes a dataset under `out`. Everything is a pure
/// function of `opts`, so regenerating gives identical files.
pub fn generate(out: &Path, opts: &GenerateOptions) -> Result<Manifest, DataError> {
    opts.config.validate()?;
    if opts.shapes == 0 || opts.views < 2 {
        return Err(DataError::BadSpec("need at least one shape and two views per shape".into()));
    }
    let sample_dir = out.join("samples");
    fs::create_dir_all(&sample_dir)?;
    let mut records = Vec::new();
    let mut current: Option<(usize, ShapeSpec, u64, PointCloud)> = None;
    for slot in plan_views(opts.shapes, opts.views) {
        if current.as_ref().is_none_or(|(id, ..)| *id != slot.shape_id) {
            let mut rng = shape_rng(opts.seed, slot.shape_id);
            let kind = if slot.split == Split::HoldoutModels {
                HOLDOUT_KIND
            } else {
                TRAIN_KINDS[slot.shape_id % TRAIN_KINDS.len()]
            };
            let spec = random_spec(kind, &mut rng);
            let seed = rng.random::<u64>();
            let surface = sample_surface(&spec, opts.config.surface_points, seed)?;
            current = Some((slot.shape_id, spec, seed, surface));
        }
        let (_, spec, seed, surface) = current.as_ref().expect("shape prepared above");
        let mut rng = view_rng(opts.seed, slot.shape_id, slot.view);
        let mut last_err = None;
        let mut built = None;
        for _ in 0..opts.config.camera_attempts {
            let camera = random_camera(surface, opts.config.camera_distance, &mut rng);
            let meta = SampleMeta {
                shape_id: slot.shape_id,
                view: slot.view,
                camera,
            };
            match build_from_surface(surface, camera, &opts.config, opts.norm_mode, meta) {
                Ok(t) => {
                    built = Some(t.sample);
                    break;
                }
                Err(e @ (DataError::InsufficientPoints { .. } | DataError::EmptyScan)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        let sample = match built {
            Some(s) => s,
            None => return Err(last_err.unwrap_or(DataError::EmptyScan)),
        };
        let id = format!("{}-{:05}-{:02}", slot.split, slot.shape_id, slot.view);
        let partial = format!("samples/{id}.partial.pcdc");
        let gt = format!("samples/{id}.gt.pcdc");
        write_cloud(&out.join(&partial), &sample.partial)?;
        write_cloud(&out.join(&gt), &sample.gt)?;
        records.push(SampleRecord {
            id,
            split: slot.split,
            shape_id: slot.shape_id,
            view: slot.view,
            spec: spec.clone(),
            camera: sample.meta.camera,
            seed: *seed,
            norm: sample.norm,
            gt_norm: sample.gt_norm,
            partial,
            gt,
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        seed: opts.seed,
        shapes: opts.shapes,
        views: opts.views,
        norm_mode: opts.norm_mode,
        config: opts.config.clone(),
        samples: records,
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A dataset directory with its manifest loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DataError> {
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(DataError::DatasetMissing(root.to_path_buf()));
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(DataError::BadSpec(format!("unsupported manifest format {}", manifest.format)));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.manifest.samples.iter().filter(move |r| r.split == split)
    }

    pub fn load(&self, record: &SampleRecord) -> Result<Sample, DataError> {
        Ok(Sample {
            partial: read_cloud(&self.root.join(&record.partial))?,
            gt: read_cloud(&self.root.join(&record.gt))?,
            norm: record.norm,
            gt_norm: record.gt_norm,
            meta: SampleMeta {
                shape_id: record.shape_id,
                view: record.view,
                camera: record.camera,
            },
        })
    }

    /// All samples of a split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>, DataError> {
        self.records(split).map(|r| self.load(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataConfig {
        DataConfig {
            surface_points: 4000,
            ..DataConfig::desk()
        }
    }

    #[test]
    fn split_plan_counts() {
        let slots = plan_views(10, 3);
        let count = |s: Split| slots.iter().filter(|v| v.split == s).count();
        assert_eq!(count(Split::Train), 20);
        assert_eq!(count(Split::HoldoutViews), 10);
        assert_eq!(count(Split::Val), 2);
        assert_eq!(count(Split::HoldoutModels), 1);
        assert_eq!(plan_views(200, 2).iter().filter(|v| v.split == Split::HoldoutModels).count(), 20);
    }

    #[test]
    fn sample_contract_holds() {
        let cfg = small();
        let spec = ShapeSpec::new(ShapeKind::Box, vec![0.1, 0.2, 0.05]);
        let s = build_sample(&spec, [0.3, 0.2, 0.25], 1, &cfg, NormMode::Ours).unwrap();
        assert_eq!(s.partial.len(), cfg.n_partial);
        assert_eq!(s.gt.len(), cfg.n_gt);
        assert_eq!(s.norm, s.gt_norm);
        assert!((s.partial.max_norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn partial_points_are_normalized_surface_points() {
        let cfg = small();
        let spec = ShapeSpec::new(ShapeKind::Cylinder, vec![0.05, 0.15]);
        let surface = sample_surface(&spec, cfg.surface_points, 3).unwrap();
        let meta = SampleMeta {
            shape_id: 0,
            view: 0,
            camera: [0.0, 0.4, 0.1],
        };
        let t = build_from_surface(&surface, [0.0, 0.4, 0.1], &cfg, NormMode::Ours, meta).unwrap();
        let all = geom::normalize(&t.surface, &t.sample.norm);
        let visible = all.select(&t.visible);
        for p in t.sample.partial.points() {
            assert!(visible.points().contains(p));
        }
    }

    #[test]
    fn baseline_mode_shifts_ground_truth() {
        let cfg = small();
        let spec = ShapeSpec::new(ShapeKind::Box, vec![0.2, 0.05, 0.05]);
        let ours = build_sample(&spec, [0.5, 0.0, 0.0], 2, &cfg, NormMode::Ours).unwrap();
        let base = build_sample(&spec, [0.5, 0.0, 0.0], 2, &cfg, NormMode::Baseline).unwrap();
        assert_eq!(ours.partial, base.partial);
        let (a, b) = (ours.gt.centroid(), base.gt.centroid());
        let shift: f64 = (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt();
        assert!(shift > 0.1, "{shift}");
    }

    #[test]
    fn too_few_visible_points() {
        let cfg = DataConfig {
            n_partial: 3000,
            ..small()
        };
        let spec = ShapeSpec::new(ShapeKind::Sphere, vec![0.05]);
        assert!(matches!(
            build_sample(&spec, [0.0, 0.0, 0.2], 0, &cfg, NormMode::Ours),
            Err(DataError::InsufficientPoints { need: 3000, .. })
        ));
    }

    #[test]
    fn generate_is_reproducible_and_loadable() {
        let opts = GenerateOptions {
            shapes: 3,
            views: 2,
            seed: 5,
            norm_mode: NormMode::Ours,
            config: small(),
        };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m1 = generate(d1.path(), &opts).unwrap();
        let m2 = generate(d2.path(), &opts).unwrap();
        assert_eq!(m1, m2);
        for r in &m1.samples {
            let a = fs::read(d1.path().join(&r.partial)).unwrap();
            let b = fs::read(d2.path().join(&r.partial)).unwrap();
            assert_eq!(a, b);
        }
        let ds = Dataset::open(d1.path()).unwrap();
        let train = ds.load_split(Split::Train).unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(ds.load_split(Split::HoldoutModels).unwrap().len(), 1);
        assert!(ds.records(Split::HoldoutModels).all(|r| r.spec.kind == HOLDOUT_KIND));
        assert!(matches!(Dataset::open(&d1.path().join("nope")), Err(DataError::DatasetMissing(_))));
    }

    #[test]
    fn split_names_round_trip() {
        for s in Split::ALL {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
    }
}
