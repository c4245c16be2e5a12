//! Minibatch Adam training with best-validation checkpointing.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::eval::{check_compat, score_sample};
use super::{fmt_f64, hex, HarnessError};
use crate::autodiff::{adam_step, AdamConfig, AdamState, DiffError, ParamStore, Tensor};
use crate::config::{ModelConfig, ModelError, Variant};
use crate::data::{Dataset, NormMode, Sample, Split, MANIFEST_FILE};
use crate::geom::PointCloud;
use crate::model::CompletionNet;
use crate::nn::{apply_bn_updates, Ctx, BN_MOMENTUM};

/// Settings that may come from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            batch_size: 8,
            learning_rate: 1e-3,
        }
    }
}

impl TrainSettings {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data: PathBuf,
    /// Parent of the run directory.
    pub out: PathBuf,
    pub variant: Variant,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Architecture; the attention and skip switches are overridden by `variant`.
    pub model: ModelConfig,
    /// When set, the dataset must have been normalized this way.
    pub norm_mode: Option<NormMode>,
}

impl TrainConfig {
    pub fn new(data: impl Into<PathBuf>, out: impl Into<PathBuf>, variant: Variant, epochs: usize, seed: u64) -> Self {
        Self::with_settings(data, out, variant, epochs, seed, TrainSettings::default())
    }

    pub fn with_settings(
        data: impl Into<PathBuf>,
        out: impl Into<PathBuf>,
        variant: Variant,
        epochs: usize,
        seed: u64,
        settings: TrainSettings,
    ) -> Self {
        Self {
            data: data.into(),
            out: out.into(),
            variant,
            epochs,
            seed,
            batch_size: settings.batch_size,
            learning_rate: settings.learning_rate,
            model: settings.model,
            norm_mode: None,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.clone().with_variant(self.variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct HashedConfig<'a> {
    model: &'a ModelConfig,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    dataset: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub train_loss: f64,
    /// Mean validation `CD(PC, PGT) x 1000`, if there is a validation split.
    pub val_cd: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_epoch: usize,
    pub curve: Vec<EpochStats>,
    pub net: CompletionNet,
    /// Parameters after the last epoch.
    pub params: ParamStore<f32>,
}

fn diverged(epoch: usize, step: usize, detail: impl Into<String>) -> HarnessError {
    HarnessError::DivergedLoss {
        epoch,
        step,
        detail: detail.into(),
    }
}

/// Runs one minibatch through a single graph, so batchnorm statistics
/// span all of its samples, takes an Adam step on the mean loss and folds
/// the batch statistics into the running buffers. Returns the summed
/// per-sample loss.
fn train_step(
    net: &CompletionNet,
    params: &mut ParamStore<f32>,
    adam: &mut AdamState<f32>,
    cfg: &AdamConfig,
    batch: &[&Sample],
    at: (usize, usize),
) -> Result<f64, HarnessError> {
    let wrap = |e: ModelError| match e {
        ModelError::Diff(DiffError::NonFinite(op)) => diverged(at.0, at.1, format!("non-finite value in {op}")),
        other => HarnessError::Model(other),
    };
    let clouds: Vec<PointCloud> = batch.iter().map(|s| s.partial.clone()).collect();
    let gts: Vec<&PointCloud> = batch.iter().map(|s| &s.gt).collect();
    let mut ctx = Ctx::new(params, true);
    let out = net.forward_batch(&mut ctx, &clouds).map_err(wrap)?;
    let loss = net.batch_loss(&mut ctx, &out, &gts).map_err(wrap)?;
    let mean = ctx.graph.value(loss).item() as f64;
    if !mean.is_finite() {
        return Err(diverged(at.0, at.1, format!("loss is {mean}")));
    }
    let mut grads = ctx.graph.backward(loss).map_err(|e| wrap(e.into()))?;
    let param_grads: Vec<Option<Tensor<f32>>> = ctx.param_grads(&mut grads);
    let updates = ctx.take_bn_updates();
    drop(ctx);
    adam_step(params, &param_grads, adam, cfg)?;
    apply_bn_updates(params, &updates, BN_MOMENTUM)?;
    Ok(mean * batch.len() as f64)
}

fn validate(net: &CompletionNet, params: &ParamStore<f32>, val: &[Sample]) -> Result<Option<f64>, HarnessError> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for s in val {
        sum += score_sample(net, params, s)?.0;
    }
    Ok(Some(sum / val.len() as f64))
}

/// Trains a model on the train split of `cfg.data`.
///
/// Everything derives from `cfg.seed`: initialization first, then one
/// shuffle per epoch, from a single generator. Artifacts go to
/// `<out>/<variant>-<config hash>-s<seed>/`: `config.json`, `curve.csv`,
/// `best.ckpt` (lowest validation CD; the training loss decides when the
/// dataset has no validation split) and `last.ckpt`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, HarnessError> {
    if cfg.batch_size == 0 {
        return Err(HarnessError::InvalidArgs("batch size must be positive".into()));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(HarnessError::InvalidArgs(format!("learning rate {}", cfg.learning_rate)));
    }
    let ds = Dataset::open(&cfg.data)?;
    let norm_mode = ds.manifest.norm_mode;
    if let Some(expected) = cfg.norm_mode {
        if expected != norm_mode {
            return Err(HarnessError::ConfigMismatch(format!(
                "expected a {expected}-normalized dataset, {} is {norm_mode}",
                cfg.data.display()
            )));
        }
    }
    let model_cfg = cfg.model_config();
    check_compat(&model_cfg, &ds.manifest.config)?;
    let net = CompletionNet::new(model_cfg.clone())?;
    let train_set = ds.load_split(Split::Train)?;
    if train_set.is_empty() {
        return Err(HarnessError::InvalidArgs(format!("{} has no training samples", cfg.data.display())));
    }
    let val_set = ds.load_split(Split::Val)?;

    let manifest_hash = hex(&Sha256::digest(fs::read(cfg.data.join(MANIFEST_FILE))?));
    let hashed = HashedConfig {
        model: &model_cfg,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        dataset: &manifest_hash,
    };
    let config_json = serde_json::to_string_pretty(&hashed)?;
    let config_hash = hex(&Sha256::digest(config_json.as_bytes()))[..16].to_string();
    let run_dir = cfg.out.join(format!("{}-{}-s{}", cfg.variant, config_hash, cfg.seed));
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.json"), &config_json)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = net.init_params(&mut rng);
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let meta = |epoch: usize, train_loss: Option<f64>, val_cd: Option<f64>| CheckpointMeta {
        model: model_cfg.clone(),
        variant: cfg.variant,
        norm_mode,
        seed: cfg.seed,
        epoch,
        config_hash: config_hash.clone(),
        train_loss,
        val_cd,
    };

    let best_path = run_dir.join("best.ckpt");
    let last_path = run_dir.join("last.ckpt");
    let mut best: Option<(f64, usize)> = None;
    if cfg.epochs == 0 {
        save_checkpoint(&best_path, &meta(0, None, None), &params)?;
        best = Some((f64::INFINITY, 0));
    }
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            loss_sum += train_step(&net, &mut params, &mut adam, &adam_cfg, &batch, (epoch, step))?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_cd = validate(&net, &params, &val_set)?;
        if let Some(v) = val_cd {
            if !v.is_finite() {
                return Err(diverged(epoch, step, format!("validation CD is {v}")));
            }
        }
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_cd,
        });
        let score = val_cd.unwrap_or(train_loss);
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, epoch));
            save_checkpoint(&best_path, &meta(epoch, Some(train_loss), val_cd), &params)?;
        }
    }
    let last = curve.last().copied();
    save_checkpoint(
        &last_path,
        &meta(cfg.epochs, last.map(|e| e.train_loss), last.and_then(|e| e.val_cd)),
        &params,
    )?;

    let mut csv = String::from("epoch,train_loss,val_cd_x1000\n");
    for e in &curve {
        csv.push_str(&format!(
            "{},{},{}\n",
            e.epoch,
            fmt_f64(e.train_loss),
            e.val_cd.map(fmt_f64).unwrap_or_default()
        ));
    }
    fs::write(run_dir.join("curve.csv"), csv)?;

    Ok(TrainOutcome {
        run_dir,
        config_hash,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        best_epoch: best.map_or(0, |(_, e)| e),
        curve,
        net,
        params,
    })
}
