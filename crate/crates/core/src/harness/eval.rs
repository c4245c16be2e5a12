//! Chamfer evaluation of a trained model on a dataset split.

use std::fs;
use std::path::Path;
use std::time::Instant;

use super::{fmt_f64, load_checkpoint, HarnessError};
use crate::autodiff::ParamStore;
use crate::config::ModelConfig;
use crate::data::{DataConfig, Dataset, Sample, Split};
use crate::geom::chamfer_l2;
use crate::model::CompletionNet;

/// Chamfer values of one sample, each multiplied by 1000.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    /// `CD(PC, PGT)`.
    pub cd_pc: f64,
    /// `CD(PS, PGT)`.
    pub cd_ps: f64,
    /// `CD(PP padded to |PC|, PGT)`: the score of not completing at all.
    pub cd_partial: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
    pub mean_pc: f64,
    pub mean_ps: f64,
    pub mean_partial: f64,
    /// Wall-clock seconds; kept out of the CSV so reports are reproducible.
    pub runtime_s: f64,
}

pub const CSV_HEADER: &str = "id,cd_pc_x1000,cd_ps_x1000,cd_partial_x1000";

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    /// Builds a report whose means are computed from `rows`.
    pub fn from_rows(split: impl Into<String>, seed: u64, rows: Vec<EvalRow>, runtime_s: f64) -> Self {
        Self {
            split: split.into(),
            seed,
            mean_pc: mean(rows.iter().map(|r| r.cd_pc)),
            mean_ps: mean(rows.iter().map(|r| r.cd_ps)),
            mean_partial: mean(rows.iter().map(|r| r.cd_partial)),
            rows,
            runtime_s,
        }
    }

    /// Per-sample rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.id,
                fmt_f64(r.cd_pc),
                fmt_f64(r.cd_ps),
                fmt_f64(r.cd_partial)
            ));
        }
        out.push_str(&format!(
            "mean,{},{},{}\n",
            fmt_f64(self.mean_pc),
            fmt_f64(self.mean_ps),
            fmt_f64(self.mean_partial)
        ));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the rows of [`EvalReport::to_csv`] output; the `mean` row is
    /// returned separately so it can be checked against a recomputation.
    pub fn parse_csv(text: &str) -> Result<(Vec<EvalRow>, Option<[f64; 3]>), HarnessError> {
        let mut rows = Vec::new();
        let mut means = None;
        let bad = |line: usize, msg: &str| HarnessError::Format(crate::binio::FormatError::ParseError { line, msg: msg.into() });
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != CSV_HEADER {
                    return Err(bad(1, "unexpected header"));
                }
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i + 1, "expected 4 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, &e.to_string()));
            let vals = [num(f[1])?, num(f[2])?, num(f[3])?];
            if f[0] == "mean" {
                means = Some(vals);
            } else {
                rows.push(EvalRow {
                    id: f[0].to_string(),
                    cd_pc: vals[0],
                    cd_ps: vals[1],
                    cd_partial: vals[2],
                });
            }
        }
        Ok((rows, means))
    }
}

/// Fails unless the dataset's sample sizes are what the network expects.
pub fn check_compat(model: &ModelConfig, data: &DataConfig) -> Result<(), HarnessError> {
    if model.n_input != data.n_partial || model.n_gt != data.n_gt {
        return Err(HarnessError::ConfigMismatch(format!(
            "model takes {} partial / {} ground-truth points, dataset has {} / {}",
            model.n_input, model.n_gt, data.n_partial, data.n_gt
        )));
    }
    Ok(())
}

/// `(CD(PC,PGT), CD(PS,PGT), CD(padded PP,PGT))`, all x1000.
pub fn score_sample(net: &CompletionNet, params: &ParamStore<f32>, s: &Sample) -> Result<(f64, f64, f64), HarnessError> {
    let pred = net.predict(params, &s.partial)?;
    let cd_pc = chamfer_l2(&pred.completed, &s.gt)?;
    let cd_ps = chamfer_l2(&pred.sparse, &s.gt)?;
    let padded = s.partial.pad_cyclic(net.cfg.completed_count())?;
    let cd_partial = chamfer_l2(&padded, &s.gt)?;
    Ok((cd_pc * 1000.0, cd_ps * 1000.0, cd_partial * 1000.0))
}

/// Scores every sample of `split` on all available cores. Rows come back
/// in manifest order, so the means do not depend on the thread count.
pub fn evaluate_model(
    net: &CompletionNet,
    params: &ParamStore<f32>,
    ds: &Dataset,
    split: Split,
    seed: u64,
) -> Result<EvalReport, HarnessError> {
    check_compat(&net.cfg, &ds.manifest.config)?;
    let start = Instant::now();
    let records: Vec<_> = ds.records(split).collect();
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(records.len())
        .max(1);
    let score = |i: usize| -> Result<EvalRow, HarnessError> {
        let rec = records[i];
        let (cd_pc, cd_ps, cd_partial) = score_sample(net, params, &ds.load(rec)?)?;
        Ok(EvalRow {
            id: rec.id.clone(),
            cd_pc,
            cd_ps,
            cd_partial,
        })
    };
    let mut slots: Vec<Option<Result<EvalRow, HarnessError>>> = (0..records.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let score = &score;
                let n = records.len();
                scope.spawn(move || (w..n).step_by(workers).map(|i| (i, score(i))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let rows = slots
        .into_iter()
        .map(|r| r.expect("every sample scored"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_rows(split.name(), seed, rows, start.elapsed().as_secs_f64()))
}

/// Loads a checkpoint and evaluates it on one split of the dataset at `data`.
pub fn evaluate(ckpt: &Path, data: &Path, split: Split) -> Result<EvalReport, HarnessError> {
    let ds = Dataset::open(data)?;
    let m = load_checkpoint(ckpt)?;
    evaluate_model(&m.net, &m.params, &ds, split, m.meta.seed)
}
