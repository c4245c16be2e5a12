//! Finite-difference checks of every differentiable operation, the
//! network's layers and the end-to-end loss at toy width.
//!
//! Each trial draws fresh random inputs in `f64`. A trial of a single
//! operation that lands next to a kink (a ReLU at zero, a max-pool or
//! Chamfer tie) is thrown away and redrawn. Layer and network trials
//! contain too many kinks to avoid entirely; they accept a trial when at
//! least [`MIN_CHECKED_FRACTION`] of the coordinates could be compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check, GradCheckReport, Tolerance};
use crate::autodiff::{BnMode, DiffError, Graph, NodeId, ParamStore, Tensor};
use crate::config::{AttentionKind, ModelConfig, ModelError};
use crate::embed::Embedder;
use crate::fold::Folding;
use crate::geom::{self, PointCloud};
use crate::model::CompletionNet;
use crate::nn::{Ctx, Initializer};
use crate::transformer::AttentionLayer;

/// Redraws allowed per trial before the operation is declared failed.
pub const MAX_REDRAWS: usize = 50;

/// Share of coordinates a layer or network trial must compare.
pub const MIN_CHECKED_FRACTION: f64 = 0.9;

type LossFn = Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId, DiffError>>;

struct Case {
    inputs: Vec<Tensor<f64>>,
    loss: LossFn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// A single graph operation; kink-adjacent draws are redrawn.
    Op,
    /// A layer or the whole network; some skipped coordinates are fine.
    Composite,
}

struct Entry {
    name: &'static str,
    kind: Kind,
    build: fn(&mut ChaCha8Rng) -> Case,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub name: String,
    pub trials: usize,
    pub redraws: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_abs_err: f64,
    /// Largest error of the failing trials, recomputed with a ten times
    /// smaller step. Central differences carry an `O(h^2)` truncation
    /// error, so a hundredfold drop means the analytic gradient is right
    /// and the function is merely curved at scale `h`.
    pub refined_max_abs_err: Option<f64>,
    /// Human-readable reasons, empty when the check passed.
    pub failures: Vec<String>,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn line(&self) -> String {
        let line = format!(
            "{:<18} trials {:>3}  redraws {:>3}  checked {:>6}  skipped {:>4}  max_abs_err {:.3e}  {}",
            self.name,
            self.trials,
            self.redraws,
            self.checked,
            self.skipped,
            self.max_abs_err,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        match self.refined_max_abs_err {
            Some(e) => format!("{line}  (failing trials at h/10: max_abs_err {e:.3e})"),
            None => line,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Contracts `out` with fixed random weights so every output coordinate
/// reaches the scalar loss with its own coefficient.
fn probe(g: &mut Graph<f64>, out: NodeId, weights: &Tensor<f64>) -> Result<NodeId, DiffError> {
    let n = weights.len();
    let flat = g.reshape(out, &[1, n])?;
    let w = g.constant(weights.clone().reshaped(&[n, 1])?)?;
    let b = g.constant(Tensor::zeros(&[1]))?;
    let y = g.linear(flat, w, b)?;
    g.sum(y)
}

/// A case for a single operation producing `out_len` values.
fn op_case(
    rng: &mut ChaCha8Rng,
    inputs: Vec<Tensor<f64>>,
    out_len: usize,
    f: impl Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId, DiffError> + 'static,
) -> Case {
    let weights = uniform(rng, &[out_len]);
    Case {
        inputs,
        loss: Box::new(move |g, ids| {
            let out = f(g, ids)?;
            probe(g, out, &weights)
        }),
    }
}

fn model_err(e: ModelError) -> DiffError {
    match e {
        ModelError::Diff(d) => d,
        other => DiffError::ShapeMismatch(other.to_string()),
    }
}

/// A case whose inputs are `extra` followed by every trainable parameter
/// of `store`; `body` sees the extra input nodes and a context with the
/// parameters bound to the remaining ones.
fn layer_case(
    store: ParamStore<f32>,
    extra: Vec<Tensor<f64>>,
    body: impl Fn(&mut Ctx<'_, f64>, &[NodeId]) -> Result<NodeId, DiffError> + 'static,
) -> Case {
    let store: ParamStore<f64> = store.cast();
    let trainable: Vec<usize> = (0..store.len()).filter(|&i| store.at(i).1.trainable).collect();
    let mut inputs = extra;
    let n_extra = inputs.len();
    inputs.extend(trainable.iter().map(|&i| store.at(i).1.tensor.clone()));
    Case {
        inputs,
        loss: Box::new(move |g, ids| {
            let graph = std::mem::take(g);
            let mut ctx = Ctx::with_graph(graph, &store, true);
            for (k, &i) in trainable.iter().enumerate() {
                ctx.bind(i, ids[n_extra + k]);
            }
            let result = body(&mut ctx, &ids[..n_extra]);
            *g = ctx.graph;
            result
        }),
    }
}

fn init_with(rng: &mut ChaCha8Rng, f: impl FnOnce(&mut Initializer<'_>)) -> ParamStore<f32> {
    let mut init = Initializer::new(rng);
    f(&mut init);
    init.store
}

fn toy_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let raw: PointCloud = (0..n)
        .map(|_| [rng.random_range(-1.0f32..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)])
        .collect();
    geom::normalize(&raw, &geom::compute_norm_params(&raw).expect("random cloud is not degenerate"))
}

/// Two stacked samples of 5 tokens (and 4 context tokens), so the
/// batchnorm statistics couple the samples.
fn attention_case(rng: &mut ChaCha8Rng, kind: AttentionKind, cross: bool) -> Case {
    let layer = AttentionLayer::new("att", 8, 2, kind);
    let store = init_with(rng, |i| layer.init(i));
    let f = uniform(rng, &[10, 8]);
    let mut extra = vec![f];
    if cross {
        extra.push(uniform(rng, &[8, 8]));
    }
    let weights = uniform(rng, &[80]);
    layer_case(store, extra, move |ctx, ids| {
        let out = layer.forward(ctx, ids[0], ids.get(1).copied(), 2)?;
        probe(&mut ctx.graph, out, &weights)
    })
}

fn catalogue() -> Vec<Entry> {
    vec![
        Entry {
            name: "linear",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[4, 3]), uniform(r, &[3, 5]), uniform(r, &[5])];
                op_case(r, inputs, 20, |g, x| g.linear(x[0], x[1], x[2]))
            },
        },
        Entry {
            name: "matmul",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 4]), uniform(r, &[4, 2])];
                op_case(r, inputs, 6, |g, x| g.matmul(x[0], x[1]))
            },
        },
        Entry {
            name: "matmul_nt",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 4]), uniform(r, &[5, 4])];
                op_case(r, inputs, 15, |g, x| g.matmul_nt(x[0], x[1]))
            },
        },
        Entry {
            name: "add",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])];
                op_case(r, inputs, 12, |g, x| g.add(x[0], x[1]))
            },
        },
        Entry {
            name: "sub",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])];
                op_case(r, inputs, 12, |g, x| g.sub(x[0], x[1]))
            },
        },
        Entry {
            name: "scale",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 4])];
                op_case(r, inputs, 12, |g, x| g.scale(x[0], -1.7))
            },
        },
        Entry {
            name: "relu",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[4, 5])];
                op_case(r, inputs, 20, |g, x| g.relu(x[0]))
            },
        },
        Entry {
            name: "softmax",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 5])];
                op_case(r, inputs, 15, |g, x| g.softmax(x[0]))
            },
        },
        Entry {
            name: "batchnorm_train",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[6, 3]), uniform(r, &[3]), uniform(r, &[3])];
                op_case(r, inputs, 18, |g, x| Ok(g.batchnorm(x[0], x[1], x[2], BnMode::Train)?.0))
            },
        },
        Entry {
            name: "batchnorm_eval",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[6, 3]), uniform(r, &[3]), uniform(r, &[3])];
                let mean: Vec<f64> = (0..3).map(|_| r.random_range(-0.5..0.5)).collect();
                let var: Vec<f64> = (0..3).map(|_| r.random_range(0.2..2.0)).collect();
                op_case(r, inputs, 18, move |g, x| {
                    Ok(g.batchnorm(x[0], x[1], x[2], BnMode::Eval { mean: &mean, var: &var })?.0)
                })
            },
        },
        Entry {
            name: "max_groups",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[8, 3])];
                op_case(r, inputs, 6, |g, x| g.max_groups(x[0], 4))
            },
        },
        Entry {
            name: "maxpool_tokens",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[5, 4])];
                op_case(r, inputs, 4, |g, x| g.maxpool_tokens(x[0]))
            },
        },
        Entry {
            name: "concat_cols",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 2]), uniform(r, &[3, 4])];
                op_case(r, inputs, 18, |g, x| g.concat_cols(x[0], x[1]))
            },
        },
        Entry {
            name: "concat_rows",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[2, 3]), uniform(r, &[4, 3])];
                op_case(r, inputs, 18, |g, x| g.concat_rows(x[0], x[1]))
            },
        },
        Entry {
            name: "gather_rows",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[4, 3])];
                op_case(r, inputs, 15, |g, x| g.gather_rows(x[0], vec![3, 0, 3, 1, 2]))
            },
        },
        Entry {
            name: "slice_cols",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 6])];
                op_case(r, inputs, 9, |g, x| g.slice_cols(x[0], 2, 3))
            },
        },
        Entry {
            name: "reshape",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 4])];
                op_case(r, inputs, 12, |g, x| g.reshape(x[0], &[2, 6]))
            },
        },
        Entry {
            name: "sum",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[3, 4])];
                op_case(r, inputs, 1, |g, x| g.sum(x[0]))
            },
        },
        Entry {
            name: "chamfer",
            kind: Kind::Op,
            build: |r| {
                let inputs = vec![uniform(r, &[6, 3]), uniform(r, &[7, 3])];
                op_case(r, inputs, 1, |g, x| g.chamfer(x[0], x[1]))
            },
        },
        Entry {
            name: "offset_attention",
            kind: Kind::Composite,
            build: |r| attention_case(r, AttentionKind::Offset, false),
        },
        Entry {
            name: "self_attention",
            kind: Kind::Composite,
            build: |r| attention_case(r, AttentionKind::SelfAttention, false),
        },
        Entry {
            name: "cross_attention",
            kind: Kind::Composite,
            build: |r| attention_case(r, AttentionKind::Offset, true),
        },
        Entry {
            name: "embedding",
            kind: Kind::Composite,
            build: |r| {
                let cfg = ModelConfig::toy();
                let embed = Embedder::new(&cfg);
                let store = init_with(r, |i| embed.init(i));
                let cloud = toy_cloud(r, cfg.n_input);
                let weights = uniform(r, &[cfg.regions * cfg.token_width()]);
                layer_case(store, vec![], move |ctx, _| {
                    let e = embed.forward(ctx, &cloud).map_err(model_err)?;
                    probe(&mut ctx.graph, e.tokens, &weights)
                })
            },
        },
        Entry {
            name: "folding",
            kind: Kind::Composite,
            build: |r| {
                let cfg = ModelConfig::toy();
                let fold = Folding::new(&cfg);
                let store = init_with(r, |i| fold.init(i));
                let extra = vec![uniform(r, &[cfg.sparse_count, cfg.decoder_width]), uniform(r, &[cfg.sparse_count, 3])];
                let weights = uniform(r, &[cfg.sparse_count * cfg.fold_points * 3]);
                layer_case(store, extra, move |ctx, x| {
                    let out = fold.forward(ctx, x[0], x[1])?;
                    probe(&mut ctx.graph, out, &weights)
                })
            },
        },
        Entry {
            name: "network",
            kind: Kind::Composite,
            build: |r| {
                let cfg = ModelConfig::toy();
                let net = CompletionNet::new(cfg.clone()).expect("toy config is valid");
                let store = net.init_params(r);
                let pp = [toy_cloud(r, cfg.n_input), toy_cloud(r, cfg.n_input)];
                let gt = [toy_cloud(r, cfg.n_gt), toy_cloud(r, cfg.n_gt)];
                layer_case(store, vec![], move |ctx, _| {
                    let out = net.forward_batch(ctx, &pp).map_err(model_err)?;
                    net.batch_loss(ctx, &out, &[&gt[0], &gt[1]]).map_err(model_err)
                })
            },
        },
    ]
}

/// Names accepted by [`run`].
pub fn op_names() -> Vec<&'static str> {
    catalogue().into_iter().map(|e| e.name).collect()
}

fn acceptable(kind: Kind, r: &GradCheckReport) -> bool {
    match kind {
        Kind::Op => r.skipped == 0,
        Kind::Composite => {
            let total = (r.checked + r.skipped) as f64;
            r.checked as f64 >= MIN_CHECKED_FRACTION * total
        }
    }
}

fn run_entry(entry: &Entry, trials: usize, seed: u64, tol: Tolerance) -> Result<OpReport, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OpReport {
        name: entry.name.to_string(),
        trials: 0,
        redraws: 0,
        checked: 0,
        skipped: 0,
        max_abs_err: 0.0,
        refined_max_abs_err: None,
        failures: Vec::new(),
    };
    for trial in 0..trials {
        let mut accepted = None;
        for _ in 0..=MAX_REDRAWS {
            let case = (entry.build)(&mut rng);
            let report = check(&case.inputs, tol, |g, ids| (case.loss)(g, ids))?;
            if acceptable(entry.kind, &report) {
                if !report.mismatches.is_empty() {
                    let fine = Tolerance {
                        step: tol.step / 10.0,
                        ..tol
                    };
                    let refined = check(&case.inputs, fine, |g, ids| (case.loss)(g, ids))?;
                    out.refined_max_abs_err = Some(out.refined_max_abs_err.unwrap_or(0.0).max(refined.max_abs_err));
                }
                accepted = Some(report);
                break;
            }
            out.redraws += 1;
        }
        out.trials += 1;
        let Some(report) = accepted else {
            out.failures.push(format!("trial {trial}: no usable draw in {MAX_REDRAWS} redraws"));
            continue;
        };
        out.checked += report.checked;
        out.skipped += report.skipped;
        out.max_abs_err = out.max_abs_err.max(report.max_abs_err);
        for m in report.mismatches.iter().take(3) {
            out.failures.push(format!(
                "trial {trial}: input {} coord {}: analytic {:.6e} numeric {:.6e}",
                m.input, m.coord, m.analytic, m.numeric
            ));
        }
    }
    Ok(out)
}

/// Runs `trials` trials of one named check, or of all of them.
pub fn run(op: Option<&str>, trials: usize, seed: u64) -> Result<Vec<OpReport>, super::HarnessError> {
    run_with(op, trials, seed, Tolerance::default())
}

pub fn run_with(
    op: Option<&str>,
    trials: usize,
    seed: u64,
    tol: Tolerance,
) -> Result<Vec<OpReport>, super::HarnessError> {
    let entries = catalogue();
    let selected: Vec<&Entry> = match op {
        None => entries.iter().collect(),
        Some(name) => {
            let e = entries.iter().find(|e| e.name == name).ok_or_else(|| {
                super::HarnessError::InvalidArgs(format!("unknown op {name:?}; known: {}", op_names().join(", ")))
            })?;
            vec![e]
        }
    };
    let mut out = Vec::with_capacity(selected.len());
    for (i, e) in selected.into_iter().enumerate() {
        let stream_seed = seed.wrapping_add(i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        out.push(run_entry(e, trials, stream_seed, tol)?);
    }
    Ok(out)
}
