//! Completion of a single raw cloud in its own coordinate frame.

use std::path::Path;

use super::{load_checkpoint, HarnessError};
use crate::autodiff::ParamStore;
use crate::data::{read_cloud, write_cloud};
use crate::geom::{self, PointCloud};
use crate::model::CompletionNet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompleteOptions {
    /// Inputs with fewer points are rejected.
    pub min_points: usize,
}

impl Default for CompleteOptions {
    fn default() -> Self {
        Self { min_points: 256 }
    }
}

/// Completes `input` (any frame, any size above the minimum).
///
/// The input is normalized with its own parameters and brought to the
/// network's input size by farthest-point sampling, or by cyclic repetition
/// when it is smaller. The result is the network's completed cloud mapped
/// back to the input frame: the selected input points, copied unchanged,
/// followed by the predicted missing points.
pub fn complete_cloud(
    net: &CompletionNet,
    params: &ParamStore<f32>,
    input: &PointCloud,
    opts: &CompleteOptions,
) -> Result<PointCloud, HarnessError> {
    if input.len() < opts.min_points.max(1) {
        return Err(HarnessError::TooFewPoints {
            got: input.len(),
            min: opts.min_points.max(1),
        });
    }
    let n = net.cfg.n_input;
    let norm = geom::compute_norm_params(input)?;
    let normalized = geom::normalize(input, &norm);
    let picked: Vec<usize> = if input.len() >= n {
        geom::fps(&normalized, n)?
    } else {
        (0..n).map(|i| i % input.len()).collect()
    };
    let pred = net.predict(params, &normalized.select(&picked))?;
    let missing = geom::denormalize(&pred.missing, &norm);
    Ok(input.select(&picked).concat(&missing))
}

/// Reads `input`, completes it with the checkpoint and writes `output`.
/// Returns the number of points written.
pub fn complete(ckpt: &Path, input: &Path, output: &Path, opts: &CompleteOptions) -> Result<usize, HarnessError> {
    let m = load_checkpoint(ckpt)?;
    let cloud = read_cloud(input)?;
    let done = complete_cloud(&m.net, &m.params, &cloud, opts)?;
    write_cloud(output, &done)?;
    Ok(done.len())
}
