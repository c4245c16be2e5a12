//! Architecture and normalization ablations with per-seed medians.
//!
//! Expects `<data>/ours` and `<data>/baseline`, two datasets generated
//! with the same shapes and seed but different ground-truth normalization.
//! Variants A to D are trained on `ours`; variant D is also trained on
//! `baseline`. Every model is scored on the holdout splits of `ours`,
//! whose ground truth lives in the partial cloud's frame, the only frame
//! available at test time.

use std::fs;
use std::path::{Path, PathBuf};

use super::eval::evaluate_model;
use super::train::{train, TrainConfig, TrainSettings};
use super::{fmt_f64, load_checkpoint, HarnessError};
use crate::config::Variant;
use crate::data::{Dataset, NormMode, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct AblateOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seeds: usize,
    pub epochs: usize,
    pub settings: TrainSettings,
}

impl AblateOptions {
    pub fn new(data: impl Into<PathBuf>, out: impl Into<PathBuf>, seeds: usize) -> Self {
        Self {
            data: data.into(),
            out: out.into(),
            seeds,
            epochs: 30,
            settings: TrainSettings::default(),
        }
    }
}

/// One trained model and its scores (Chamfer values x1000).
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub variant: Variant,
    pub norm_mode: NormMode,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub first_epoch_loss: f64,
    pub final_train_loss: f64,
    pub best_epoch: usize,
    pub holdout_views_cd: f64,
    pub holdout_models_cd: f64,
    /// Padded-partial score on holdout views, for reference.
    pub holdout_views_partial_cd: f64,
}

/// Median scores of one (variant, normalization) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMedian {
    pub variant: Variant,
    pub norm_mode: NormMode,
    pub holdout_views_cd: f64,
    pub holdout_models_cd: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub runs: Vec<RunSummary>,
    /// Variants A to D with our normalization.
    pub architecture: Vec<CellMedian>,
    /// `(baseline, ours)` for variant D.
    pub normalization: (CellMedian, CellMedian),
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn cell(runs: &[RunSummary], variant: Variant, norm_mode: NormMode) -> CellMedian {
    let pick = |f: fn(&RunSummary) -> f64| -> f64 {
        let v: Vec<f64> = runs
            .iter()
            .filter(|r| r.variant == variant && r.norm_mode == norm_mode)
            .map(f)
            .collect();
        median(&v)
    };
    CellMedian {
        variant,
        norm_mode,
        holdout_views_cd: pick(|r| r.holdout_views_cd),
        holdout_models_cd: pick(|r| r.holdout_models_cd),
        final_train_loss: pick(|r| r.final_train_loss),
    }
}

fn check(v: bool) -> &'static str {
    if v {
        "yes"
    } else {
        ""
    }
}

impl AblationResult {
    pub fn from_runs(runs: Vec<RunSummary>) -> Self {
        let architecture = Variant::ALL.iter().map(|&v| cell(&runs, v, NormMode::Ours)).collect();
        let normalization = (
            cell(&runs, Variant::D, NormMode::Baseline),
            cell(&runs, Variant::D, NormMode::Ours),
        );
        Self {
            runs,
            architecture,
            normalization,
        }
    }

    /// Every run, one row each.
    pub fn runs_csv(&self) -> String {
        let mut s = String::from(
            "variant,norm_mode,seed,first_epoch_loss,final_train_loss,best_epoch,holdout_views_cd_x1000,holdout_models_cd_x1000,holdout_views_partial_cd_x1000\n",
        );
        for r in &self.runs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.variant,
                r.norm_mode,
                r.seed,
                fmt_f64(r.first_epoch_loss),
                fmt_f64(r.final_train_loss),
                r.best_epoch,
                fmt_f64(r.holdout_views_cd),
                fmt_f64(r.holdout_models_cd),
                fmt_f64(r.holdout_views_partial_cd)
            ));
        }
        s
    }

    /// Architecture table: one row per model with its two switches.
    pub fn architecture_csv(&self) -> String {
        let mut s = String::from("model,skip_connection,offset_attention,holdout_views_cd_x1000,holdout_models_cd_x1000\n");
        for c in &self.architecture {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.variant,
                check(c.variant.skip()),
                check(c.variant.attention() == crate::config::AttentionKind::Offset),
                fmt_f64(c.holdout_views_cd),
                fmt_f64(c.holdout_models_cd)
            ));
        }
        s
    }

    /// Normalization table: baseline versus ours for model D.
    pub fn normalization_csv(&self) -> String {
        let (b, o) = &self.normalization;
        format!(
            "method,split,baseline_norm_cd_x1000,our_norm_cd_x1000\nD,holdout-views,{},{}\nD,holdout-models,{},{}\n",
            fmt_f64(b.holdout_views_cd),
            fmt_f64(o.holdout_views_cd),
            fmt_f64(b.holdout_models_cd),
            fmt_f64(o.holdout_models_cd)
        )
    }

    /// Both tables as aligned text.
    pub fn render(&self) -> String {
        let mut s = String::from("Model  Skip  Offset  holdout-views  holdout-models  (median L2 CD x1000)\n");
        for c in &self.architecture {
            s.push_str(&format!(
                "{:<6} {:<5} {:<7} {:>13.4} {:>15.4}\n",
                c.variant.to_string(),
                if c.variant.skip() { "x" } else { "" },
                if c.variant.attention() == crate::config::AttentionKind::Offset { "x" } else { "" },
                c.holdout_views_cd,
                c.holdout_models_cd
            ));
        }
        let (b, o) = &self.normalization;
        s.push_str("\nMethod  Baseline norm.  Our norm.  (model D, holdout-views)\n");
        s.push_str(&format!("Ours    {:>14.4} {:>10.4}\n", b.holdout_views_cd, o.holdout_views_cd));
        s
    }

    pub fn write(&self, out: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(out)?;
        fs::write(out.join("runs.csv"), self.runs_csv())?;
        fs::write(out.join("architecture.csv"), self.architecture_csv())?;
        fs::write(out.join("normalization.csv"), self.normalization_csv())?;
        fs::write(out.join("tables.txt"), self.render())?;
        Ok(())
    }
}

/// Trains and scores one model.
pub fn run_one(
    train_data: &Path,
    eval_ds: &Dataset,
    out: &Path,
    variant: Variant,
    seed: u64,
    epochs: usize,
    settings: &TrainSettings,
) -> Result<RunSummary, HarnessError> {
    let cfg = TrainConfig::with_settings(train_data, out, variant, epochs, seed, settings.clone());
    let outcome = train(&cfg)?;
    let best = load_checkpoint(&outcome.best_checkpoint)?;
    let views = evaluate_model(&best.net, &best.params, eval_ds, Split::HoldoutViews, seed)?;
    let models = evaluate_model(&best.net, &best.params, eval_ds, Split::HoldoutModels, seed)?;
    views.write_csv(&outcome.run_dir.join("holdout-views.csv"))?;
    models.write_csv(&outcome.run_dir.join("holdout-models.csv"))?;
    let first = outcome.curve.first().map_or(f64::NAN, |e| e.train_loss);
    let last = outcome.curve.last().map_or(f64::NAN, |e| e.train_loss);
    Ok(RunSummary {
        variant,
        norm_mode: best.meta.norm_mode,
        seed,
        run_dir: outcome.run_dir,
        first_epoch_loss: first,
        final_train_loss: last,
        best_epoch: outcome.best_epoch,
        holdout_views_cd: views.mean_pc,
        holdout_models_cd: models.mean_pc,
        holdout_views_partial_cd: views.mean_partial,
    })
}

/// Runs the full grid sequentially and writes the tables under `opts.out`.
/// `progress` is called once per finished run.
pub fn ablate(opts: &AblateOptions, mut progress: impl FnMut(&RunSummary)) -> Result<AblationResult, HarnessError> {
    if opts.seeds == 0 {
        return Err(HarnessError::InvalidArgs("need at least one seed".into()));
    }
    let ours_dir = opts.data.join("ours");
    let base_dir = opts.data.join("baseline");
    let ours = Dataset::open(&ours_dir)?;
    let base = Dataset::open(&base_dir)?;
    if ours.manifest.norm_mode != NormMode::Ours || base.manifest.norm_mode != NormMode::Baseline {
        return Err(HarnessError::ConfigMismatch(
            "expected data/ours normalized with ours and data/baseline with baseline".into(),
        ));
    }
    let mut plan: Vec<(Variant, &Path)> = Variant::ALL.iter().map(|&v| (v, ours_dir.as_path())).collect();
    plan.push((Variant::D, base_dir.as_path()));
    let mut runs = Vec::new();
    for (variant, data) in plan {
        let mode = if data == base_dir { "baseline" } else { "ours" };
        let out = opts.out.join("runs").join(mode);
        for seed in 0..opts.seeds as u64 {
            let r = run_one(data, &ours, &out, variant, seed, opts.epochs, &opts.settings)?;
            progress(&r);
            runs.push(r);
        }
    }
    let result = AblationResult::from_runs(runs);
    result.write(&opts.out)?;
    Ok(result)
}
