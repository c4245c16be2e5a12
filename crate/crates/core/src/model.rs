//! The completion network end to end: embedding, encoder, query head,
//! decoder and folding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamStore, Scalar, Tensor};
use crate::config::{ModelConfig, ModelError};
use crate::embed::{cloud_tensor, Embedded, Embedder};
use crate::fold::{assemble, Folding};
use crate::geom::PointCloud;
use crate::nn::{Ctx, Initializer};
use crate::transformer::{rows, stack_rows, Decoder, Encoder, EncoderOutput, QueryHead};

#[derive(Debug, Clone)]
pub struct CompletionNet {
    pub cfg: ModelConfig,
    pub embed: Embedder,
    pub encoder: Encoder,
    pub query: QueryHead,
    pub decoder: Decoder,
    pub folding: Folding,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub embedded: Embedded,
    pub encoder: EncoderOutput,
    pub queries: NodeId,
    pub sparse: NodeId,
    pub decoded: NodeId,
    pub folded: NodeId,
    pub missing: NodeId,
    pub completed: NodeId,
}

/// Per-sample output nodes of a batched pass.
#[derive(Debug, Clone, Copy)]
pub struct SampleNodes {
    pub sparse: NodeId,
    pub missing: NodeId,
    pub completed: NodeId,
}

/// Graph nodes of a batched forward pass; stacked nodes hold the
/// samples' rows in batch order.
#[derive(Debug, Clone)]
pub struct BatchNodes {
    pub embedded: Vec<Embedded>,
    pub tokens: NodeId,
    pub encoder: EncoderOutput,
    pub queries: NodeId,
    pub sparse: NodeId,
    pub decoded: NodeId,
    pub folded: NodeId,
    pub samples: Vec<SampleNodes>,
}

/// Materialized network outputs in the normalized frame.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub sparse: PointCloud,
    pub missing: PointCloud,
    pub completed: PointCloud,
    pub global: Vec<f32>,
    pub tokens: Tensor<f32>,
    pub decoded: Tensor<f32>,
}

impl CompletionNet {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Self {
            embed: Embedder::new(&cfg),
            encoder: Encoder::new(&cfg),
            query: QueryHead::new(&cfg),
            decoder: Decoder::new(&cfg),
            folding: Folding::new(&cfg),
            cfg,
        })
    }

    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamStore<f32> {
        let mut init = Initializer::new(rng);
        self.embed.init(&mut init);
        self.encoder.init(&mut init);
        self.query.init(&mut init);
        self.decoder.init(&mut init);
        self.folding.init(&mut init);
        init.store
    }

    /// Fresh parameters from a seed.
    pub fn init_seeded(&self, seed: u64) -> ParamStore<f32> {
        self.init_params(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// One sample through the network; see [`CompletionNet::forward_batch`].
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, pp_n: &PointCloud) -> Result<ForwardNodes, ModelError> {
        let mut b = self.forward_batch(ctx, std::slice::from_ref(pp_n))?;
        let global = ctx.graph.reshape(b.encoder.global, &[self.cfg.global_width])?;
        let sample = b.samples[0];
        Ok(ForwardNodes {
            embedded: b.embedded.swap_remove(0),
            encoder: EncoderOutput {
                memory: b.encoder.memory,
                global,
            },
            queries: b.queries,
            sparse: sample.sparse,
            decoded: b.decoded,
            folded: b.folded,
            missing: sample.missing,
            completed: sample.completed,
        })
    }

    /// Runs several clouds through one graph. Tokens, queries and folded
    /// points of all samples are stacked by rows, so training-mode
    /// batchnorm normalizes over the whole batch; everything else stays
    /// within a sample.
    pub fn forward_batch<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        clouds: &[PointCloud],
    ) -> Result<BatchNodes, ModelError> {
        if clouds.is_empty() {
            return Err(ModelError::CountMismatch("empty batch".into()));
        }
        if let Some(bad) = clouds.iter().find(|c| c.len() != self.cfg.n_input) {
            return Err(ModelError::CountMismatch(format!(
                "network takes {} points, got {}",
                self.cfg.n_input,
                bad.len()
            )));
        }
        let batch = clouds.len();
        let embedded = clouds
            .iter()
            .map(|c| self.embed.forward(ctx, c))
            .collect::<Result<Vec<_>, _>>()?;
        let token_sets: Vec<NodeId> = embedded.iter().map(|e| e.tokens).collect();
        let tokens = stack_rows(ctx, &token_sets)?;
        let encoder = self.encoder.forward(ctx, tokens, batch)?;
        let (queries, sparse) = self.query.forward(ctx, encoder.global)?;
        let decoded = self.decoder.forward(ctx, queries, &encoder, batch)?;
        let folded = self.folding.forward(ctx, decoded, sparse)?;
        let (s, f) = (self.cfg.sparse_count, self.cfg.n_queries * self.cfg.fold_points);
        let mut samples = Vec::with_capacity(batch);
        for (b, pp) in clouds.iter().enumerate() {
            let ps_b = rows(ctx, sparse, b * s, s)?;
            let folded_b = rows(ctx, folded, b * f, f)?;
            let assembled = assemble(ctx, &self.cfg, folded_b, ps_b, pp)?;
            samples.push(SampleNodes {
                sparse: ps_b,
                missing: assembled.missing,
                completed: assembled.completed,
            });
        }
        Ok(BatchNodes {
            embedded,
            tokens,
            encoder,
            queries,
            sparse,
            decoded,
            folded,
            samples,
        })
    }

    /// Mean of the per-sample losses of a batch.
    pub fn batch_loss<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        out: &BatchNodes,
        gts: &[&PointCloud],
    ) -> Result<NodeId, ModelError> {
        if gts.len() != out.samples.len() {
            return Err(ModelError::CountMismatch(format!(
                "{} ground truths for {} samples",
                gts.len(),
                out.samples.len()
            )));
        }
        let mut total: Option<NodeId> = None;
        for (s, gt) in out.samples.iter().zip(gts) {
            let l = completion_loss(ctx, s.sparse, s.completed, gt)?;
            total = Some(match total {
                None => l,
                Some(t) => ctx.graph.add(t, l)?,
            });
        }
        let total = total.expect("non-empty batch");
        if gts.len() == 1 {
            return Ok(total);
        }
        Ok(ctx.graph.scale(total, 1.0 / gts.len() as f64)?)
    }

    /// `CD(PS, PGT) + CD(PC, PGT)`.
    pub fn loss<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        out: &ForwardNodes,
        gt: &PointCloud,
    ) -> Result<NodeId, ModelError> {
        completion_loss(ctx, out.sparse, out.completed, gt)
    }

    /// Inference with running batchnorm statistics.
    pub fn predict(&self, params: &ParamStore<f32>, pp_n: &PointCloud) -> Result<Prediction, ModelError> {
        let mut ctx = Ctx::new(params, false);
        let out = self.forward(&mut ctx, pp_n)?;
        let g = &ctx.graph;
        let cloud = |id: NodeId| PointCloud::from_flat(g.value(id).data());
        Ok(Prediction {
            sparse: cloud(out.sparse)?,
            missing: cloud(out.missing)?,
            completed: cloud(out.completed)?,
            global: g.value(out.encoder.global).data().to_vec(),
            tokens: g.value(out.embedded.tokens).clone(),
            decoded: g.value(out.decoded).clone(),
        })
    }
}

/// Sum of the sparse and completed Chamfer terms against the ground truth.
pub fn completion_loss<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    sparse: NodeId,
    completed: NodeId,
    gt: &PointCloud,
) -> Result<NodeId, ModelError> {
    if gt.is_empty() {
        return Err(crate::geom::GeomError::EmptyCloud.into());
    }
    let gt = ctx.graph.constant(cloud_tensor(gt)?)?;
    let a = ctx.graph.chamfer(sparse, gt)?;
    let b = ctx.graph.chamfer(completed, gt)?;
    Ok(ctx.graph.add(a, b)?)
}
