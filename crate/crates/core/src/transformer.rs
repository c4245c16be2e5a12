//! Offset-attention encoder/decoder, global feature, query and sparse
//! point heads.

use crate::autodiff::{DiffError, NodeId, Scalar};
use crate::config::{AttentionKind, ModelConfig, ModelError};
use crate::embed::PositionalEmbedding;
use crate::nn::{Ctx, Initializer, Lbr, Linear};

/// Multi-head scaled dot-product attention followed by an LBR update.
///
/// In offset mode the block computes `F + LBR(F - SA)`; in self-attention
/// mode `F + LBR(SA)`. Both carry the same parameters.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub kind: AttentionKind,
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub lbr: Lbr,
}

impl AttentionLayer {
    pub fn new(name: &str, d: usize, heads: usize, kind: AttentionKind) -> Self {
        Self {
            kind,
            heads,
            q: Linear::new(format!("{name}.q"), d, d),
            k: Linear::new(format!("{name}.k"), d, d),
            v: Linear::new(format!("{name}.v"), d, d),
            lbr: Lbr::new(&format!("{name}.lbr"), d, d),
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        self.q.init(init);
        self.k.init(init);
        self.v.init(init);
        self.lbr.init(init);
    }

    /// `context = None` attends over `f` itself. `f` (and `context`) hold
    /// `batch` samples stacked by rows; attention stays within a sample
    /// while the batchnorm statistics span the whole batch.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        f: NodeId,
        context: Option<NodeId>,
        batch: usize,
    ) -> Result<NodeId, DiffError> {
        let d = self.q.inp;
        if ctx.graph.shape(f).get(1) != Some(&d) {
            return Err(DiffError::ShapeMismatch(format!(
                "attention expects width {d}, got {:?}",
                ctx.graph.shape(f)
            )));
        }
        let kv_src = context.unwrap_or(f);
        let q = self.q.forward(ctx, f)?;
        let k = self.k.forward(ctx, kv_src)?;
        let v = self.v.forward(ctx, kv_src)?;
        let sa = batched_multi_head(ctx, q, k, v, self.heads, batch)?;
        let inner = match self.kind {
            AttentionKind::Offset => ctx.graph.sub(f, sa)?,
            AttentionKind::SelfAttention => sa,
        };
        let update = self.lbr.forward(ctx, inner)?;
        ctx.graph.add(update, f)
    }
}

/// Rows `[start, start + len)` of `x`.
pub fn rows<T: Scalar>(ctx: &mut Ctx<'_, T>, x: NodeId, start: usize, len: usize) -> Result<NodeId, DiffError> {
    if start == 0 && len == ctx.graph.shape(x)[0] {
        return Ok(x);
    }
    ctx.graph.gather_rows(x, (start..start + len).collect())
}

/// Rows of `parts` stacked in order.
pub fn stack_rows<T: Scalar>(ctx: &mut Ctx<'_, T>, parts: &[NodeId]) -> Result<NodeId, DiffError> {
    let mut out = parts[0];
    for &p in &parts[1..] {
        out = ctx.graph.concat_rows(out, p)?;
    }
    Ok(out)
}

/// Rows per sample when `x` stacks `batch` equally sized samples.
pub fn rows_per_sample<T: Scalar>(ctx: &Ctx<'_, T>, x: NodeId, batch: usize) -> Result<usize, DiffError> {
    let n = ctx.graph.shape(x)[0];
    if batch == 0 || n % batch != 0 {
        return Err(DiffError::ShapeMismatch(format!("{n} rows do not split into {batch} samples")));
    }
    Ok(n / batch)
}

/// [`multi_head`] applied to each of `batch` stacked samples.
pub fn batched_multi_head<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
    batch: usize,
) -> Result<NodeId, DiffError> {
    let nq = rows_per_sample(ctx, q, batch)?;
    let nk = rows_per_sample(ctx, k, batch)?;
    let mut outs = Vec::with_capacity(batch);
    for b in 0..batch {
        let qb = rows(ctx, q, b * nq, nq)?;
        let kb = rows(ctx, k, b * nk, nk)?;
        let vb = rows(ctx, v, b * nk, nk)?;
        outs.push(multi_head(ctx, qb, kb, vb, heads)?);
    }
    stack_rows(ctx, &outs)
}

/// Softmax attention per head over column slices, heads concatenated.
pub fn multi_head<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
) -> Result<NodeId, DiffError> {
    let d = ctx.graph.shape(q)[1];
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out: Option<NodeId> = None;
    for h in 0..heads {
        let qh = ctx.graph.slice_cols(q, h * dh, dh)?;
        let kh = ctx.graph.slice_cols(k, h * dh, dh)?;
        let vh = ctx.graph.slice_cols(v, h * dh, dh)?;
        let scores = ctx.graph.matmul_nt(qh, kh)?;
        let scores = ctx.graph.scale(scores, scale)?;
        let attn = ctx.graph.softmax(scores)?;
        let head = ctx.graph.matmul(attn, vh)?;
        out = Some(match out {
            None => head,
            Some(prev) => ctx.graph.concat_cols(prev, head)?,
        });
    }
    Ok(out.expect("at least one head"))
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Output of every encoder layer, `[batch * tokens, d_model]` each.
    pub memory: Vec<NodeId>,
    /// Global features `[batch, global_width]`.
    pub global: NodeId,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub input_proj: Option<Linear>,
    pub layers: Vec<AttentionLayer>,
    pub global: Linear,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        let input_proj = (cfg.token_width() != cfg.d_model)
            .then(|| Linear::new("enc.in", cfg.token_width(), cfg.d_model));
        Self {
            input_proj,
            layers: (0..cfg.n_enc_layers)
                .map(|i| AttentionLayer::new(&format!("enc.{i}"), cfg.d_model, cfg.n_heads, cfg.attention))
                .collect(),
            global: Linear::new("enc.global", cfg.d_model, cfg.global_width),
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        if let Some(p) = &self.input_proj {
            p.init(init);
        }
        self.layers.iter().for_each(|l| l.init(init));
        self.global.init(init);
    }

    /// `tokens` stacks the token sets of `batch` samples by rows.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        tokens: NodeId,
        batch: usize,
    ) -> Result<EncoderOutput, DiffError> {
        let per_sample = rows_per_sample(ctx, tokens, batch)?;
        let mut x = match &self.input_proj {
            Some(p) => p.forward(ctx, tokens)?,
            None => tokens,
        };
        let mut memory = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = layer.forward(ctx, x, None, batch)?;
            memory.push(x);
        }
        let pooled = ctx.graph.max_groups(x, per_sample)?;
        let global = self.global.forward(ctx, pooled)?;
        Ok(EncoderOutput { memory, global })
    }
}

/// Query tokens and the sparse point cloud predicted from the global feature.
#[derive(Debug, Clone)]
pub struct QueryHead {
    pub n_queries: usize,
    pub d_model: usize,
    pub sparse: Linear,
    pub queries: Linear,
    pub pe: PositionalEmbedding,
}

impl QueryHead {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            n_queries: cfg.n_queries,
            d_model: cfg.d_model,
            sparse: Linear::new("query.sparse", cfg.global_width, cfg.sparse_count * 3),
            queries: Linear::new("query.tokens", cfg.global_width, cfg.n_queries * cfg.d_model),
            pe: PositionalEmbedding::new("query.pe", cfg.pe_hidden, cfg.d_model),
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        self.sparse.init(init);
        self.queries.init(init);
        self.pe.init(init);
    }

    /// Maps global features `[B, global_width]` to stacked query tokens
    /// `[B * X, d_model]` and sparse points `[B * S, 3]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, global: NodeId) -> Result<(NodeId, NodeId), DiffError> {
        let b = ctx.graph.shape(global)[0];
        let ps = self.sparse.forward(ctx, global)?;
        let ps = ctx.graph.reshape(ps, &[b * self.sparse.out / 3, 3])?;
        let q = self.queries.forward(ctx, global)?;
        let q = ctx.graph.reshape(q, &[b * self.n_queries, self.d_model])?;
        let q_pe = self.pe.forward(ctx, ps)?;
        let q = ctx.graph.add(q, q_pe)?;
        Ok((q, ps))
    }
}

#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub self_attn: AttentionLayer,
    pub cross_attn: AttentionLayer,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub blocks: Vec<DecoderBlock>,
    pub skip: bool,
    pub out: Linear,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            blocks: (0..cfg.n_dec_layers)
                .map(|i| DecoderBlock {
                    self_attn: AttentionLayer::new(&format!("dec.{i}.self"), cfg.d_model, cfg.n_heads, cfg.attention),
                    cross_attn: AttentionLayer::new(&format!("dec.{i}.cross"), cfg.d_model, cfg.n_heads, cfg.attention),
                })
                .collect(),
            skip: cfg.skip,
            out: Linear::new("dec.out", cfg.d_model, cfg.decoder_width),
        }
    }

    pub fn init(&self, init: &mut Initializer<'_>) {
        for b in &self.blocks {
            b.self_attn.init(init);
            b.cross_attn.init(init);
        }
        self.out.init(init);
    }

    /// Block `i` cross-attends to encoder memory `i` summed with the last
    /// encoder layer when skips are on, and to the last layer alone otherwise.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<'_, T>,
        queries: NodeId,
        enc: &EncoderOutput,
        batch: usize,
    ) -> Result<NodeId, ModelError> {
        if self.blocks.len() > enc.memory.len() {
            return Err(ModelError::LayerCountMismatch {
                enc: enc.memory.len(),
                dec: self.blocks.len(),
            });
        }
        let last = *enc.memory.last().expect("encoder has layers");
        let mut x = queries;
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.self_attn.forward(ctx, x, None, batch)?;
            let memory = if self.skip {
                ctx.graph.add(enc.memory[i], last)?
            } else {
                last
            };
            x = block.cross_attn.forward(ctx, x, Some(memory), batch)?;
        }
        Ok(self.out.forward(ctx, x)?)
    }
}
