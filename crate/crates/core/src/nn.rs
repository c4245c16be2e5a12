//! Layer primitives bound to a [`ParamStore`] through a forward context.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchStats, BnMode, DiffError, Gradients, Graph, NodeId, ParamStore, Scalar, Tensor};

/// Momentum of the running batchnorm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics produced by one training-mode forward pass, to be
/// folded into the running averages once the step is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate<T> {
    pub layer: String,
    pub stats: BatchStats<T>,
}

/// One forward pass: a fresh graph plus lazily bound parameters.
pub struct Ctx<'p, T: Scalar> {
    pub graph: Graph<T>,
    params: &'p ParamStore<T>,
    bound: Vec<Option<NodeId>>,
    train: bool,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<'p, T: Scalar> Ctx<'p, T> {
    pub fn new(params: &'p ParamStore<T>, train: bool) -> Self {
        Self::with_graph(Graph::new(), params, train)
    }

    pub fn with_graph(graph: Graph<T>, params: &'p ParamStore<T>, train: bool) -> Self {
        Self {
            graph,
            params,
            bound: vec![None; params.len()],
            train,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Node holding parameter `name`, created on first use.
    pub fn param(&mut self, name: &str) -> Result<NodeId, DiffError> {
        let i = self.params.index_of(name)?;
        if let Some(id) = self.bound[i] {
            return Ok(id);
        }
        let (_, p) = self.params.at(i);
        let id = if p.trainable {
            self.graph.param(p.tensor.clone())?
        } else {
            self.graph.constant(p.tensor.clone())?
        };
        self.bound[i] = Some(id);
        Ok(id)
    }

    /// Makes store parameter `index` resolve to an existing node.
    pub fn bind(&mut self, index: usize, id: NodeId) {
        self.bound[index] = Some(id);
    }

    pub fn bn_updates(&self) -> &[BnUpdate<T>] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradients of the bound parameters, indexed like the store.
    /// Parameters the pass never touched get `None`.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|id| grads.take(id)))
            .collect()
    }
}

/// Folds recorded batch statistics into the running buffers, in order.
pub fn apply_bn_updates<T: Scalar>(
    params: &mut ParamStore<T>,
    updates: &[BnUpdate<T>],
    momentum: f64,
) -> Result<(), DiffError> {
    let m = T::of(momentum);
    let keep = T::one() - m;
    for u in updates {
        for (suffix, values) in [("running_mean", &u.stats.mean), ("running_var", &u.stats.var)] {
            let p = params.get_mut(&format!("{}.{suffix}", u.layer))?;
            for (r, &v) in p.tensor.data_mut().iter_mut().zip(values) {
                *r = keep * *r + m * v;
            }
        }
    }
    Ok(())
}

/// Registers parameters with deterministic initial values.
pub struct Initializer<'r> {
    pub store: ParamStore<f32>,
    rng: &'r mut ChaCha8Rng,
}

impl<'r> Initializer<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        Self {
            store: ParamStore::new(),
            rng,
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: String, shape: &[usize], bound: f64) {
        let t = Tensor::from_fn(shape, |_| self.rng.random_range(-bound..=bound) as f32);
        self.store.insert(name, t, true);
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f32, trainable: bool) {
        self.store.insert(name, Tensor::full(shape, value), trainable);
    }
}

/// Fully connected layer, `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, inp: usize, out: usize) -> Self {
        Self {
            name: name.into(),
            inp,
            out,
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        let bound = 1.0 / (self.inp as f64).sqrt();
        init.uniform(format!("{}.w", self.name), &[self.inp, self.out], bound);
        init.uniform(format!("{}.b", self.name), &[self.out], bound);
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: NodeId) -> Result<NodeId, DiffError> {
        let w = ctx.param(&format!("{}.w", self.name))?;
        let b = ctx.param(&format!("{}.b", self.name))?;
        ctx.graph.linear(x, w, b)
    }
}

/// Batch normalization over rows with learned scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub width: usize,
}

impl BatchNorm {
    pub fn init(&self, init: &mut Initializer<'_>) {
        init.constant(format!("{}.gamma", self.name), &[self.width], 1.0, true);
        init.constant(format!("{}.beta", self.name), &[self.width], 0.0, true);
        init.constant(format!("{}.running_mean", self.name), &[self.width], 0.0, false);
        init.constant(format!("{}.running_var", self.name), &[self.width], 1.0, false);
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: NodeId) -> Result<NodeId, DiffError> {
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        if ctx.train {
            let (y, stats) = ctx.graph.batchnorm(x, gamma, beta, BnMode::Train)?;
            if let Some(stats) = stats {
                ctx.bn_updates.push(BnUpdate {
                    layer: self.name.clone(),
                    stats,
                });
            }
            Ok(y)
        } else {
            let params = ctx.params;
            let mean = params.get(&format!("{}.running_mean", self.name))?;
            let var = params.get(&format!("{}.running_var", self.name))?;
            let (y, _) = ctx.graph.batchnorm(
                x,
                gamma,
                beta,
                BnMode::Eval {
                    mean: mean.tensor.data(),
                    var: var.tensor.data(),
                },
            )?;
            Ok(y)
        }
    }
}

/// Linear, batchnorm, ReLU.
#[derive(Debug, Clone)]
pub struct Lbr {
    pub linear: Linear,
    pub bn: BatchNorm,
}

impl Lbr {
    pub fn new(name: &str, inp: usize, out: usize) -> Self {
        Self {
            linear: Linear::new(format!("{name}.lin"), inp, out),
            bn: BatchNorm {
                name: format!("{name}.bn"),
                width: out,
            },
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        self.linear.init(init);
        self.bn.init(init);
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: NodeId) -> Result<NodeId, DiffError> {
        let y = self.linear.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        ctx.graph.relu(y)
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(name: &str, widths: &[usize]) -> Self {
        Self {
            layers: widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::new(format!("{name}.{i}"), w[0], w[1]))
                .collect(),
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        self.layers.iter().for_each(|l| l.init(init));
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, mut x: NodeId) -> Result<NodeId, DiffError> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(ctx, x)?;
            if i + 1 < self.layers.len() {
                x = ctx.graph.relu(x)?;
            }
        }
        Ok(x)
    }
}
