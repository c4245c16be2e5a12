//! Architecture hyperparameters and the ablation variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::DiffError;
use crate::geom::GeomError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("decoder has {dec} layers but the encoder only {enc}")]
    LayerCountMismatch { enc: usize, dec: usize },
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// How an attention block turns the attention output into its residual update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// `F + LBR(F - SA)`.
    Offset,
    /// `F + LBR(SA)`.
    SelfAttention,
}

/// The four architecture rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Self-attention, no skip connections.
    A,
    /// Self-attention with skip connections.
    B,
    /// Offset-attention, no skip connections.
    C,
    /// Offset-attention with skip connections.
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];

    pub fn attention(self) -> AttentionKind {
        match self {
            Variant::A | Variant::B => AttentionKind::SelfAttention,
            Variant::C | Variant::D => AttentionKind::Offset,
        }
    }

    pub fn skip(self) -> bool {
        matches!(self, Variant::B | Variant::D)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Variant::A),
            "B" | "b" => Ok(Variant::B),
            "C" | "c" => Ok(Variant::C),
            "D" | "d" => Ok(Variant::D),
            other => Err(format!("unknown variant {other:?}, expected A, B, C or D")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Points in the network input.
    pub n_input: usize,
    /// Points sampled from the ground-truth surface.
    pub n_gt: usize,
    /// Local regions (= input tokens).
    pub regions: usize,
    /// Points gathered around each region center.
    pub k_group: usize,
    /// Neighbors per point inside a group for EdgeConv.
    pub k_edge: usize,
    /// Output width of each EdgeConv layer; the last one is the feature width.
    pub edge_widths: Vec<usize>,
    pub pe_hidden: usize,
    pub pe_width: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    /// Width of the global feature.
    pub global_width: usize,
    /// Query tokens.
    pub n_queries: usize,
    /// Sparse points, one per query.
    pub sparse_count: usize,
    /// Per-token width of the decoder output.
    pub decoder_width: usize,
    /// Points folded around each sparse point.
    pub fold_points: usize,
    pub mix_width: usize,
    pub fold_hidden: usize,
    pub attention: AttentionKind,
    pub skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_input: 2048,
            n_gt: 8192,
            regions: 128,
            k_group: 32,
            k_edge: 8,
            edge_widths: vec![64, 128],
            pe_hidden: 64,
            pe_width: 128,
            d_model: 256,
            n_heads: 4,
            n_enc_layers: 4,
            n_dec_layers: 4,
            global_width: 1024,
            n_queries: 192,
            sparse_count: 192,
            decoder_width: 512,
            fold_points: 31,
            mix_width: 128,
            fold_hidden: 128,
            attention: AttentionKind::Offset,
            skip: true,
        }
    }
}

impl ModelConfig {
    /// A configuration small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            n_input: 128,
            n_gt: 256,
            regions: 16,
            k_group: 16,
            k_edge: 4,
            edge_widths: vec![16, 32],
            pe_hidden: 16,
            pe_width: 32,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            global_width: 128,
            n_queries: 32,
            sparse_count: 32,
            decoder_width: 64,
            fold_points: 3,
            mix_width: 64,
            fold_hidden: 32,
            attention: AttentionKind::Offset,
            skip: true,
        }
    }

    /// Tiny widths for finite-difference checks of the whole network.
    pub fn toy() -> Self {
        Self {
            n_input: 16,
            n_gt: 24,
            regions: 4,
            k_group: 4,
            k_edge: 2,
            edge_widths: vec![4, 4],
            pe_hidden: 4,
            pe_width: 4,
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 2,
            n_dec_layers: 2,
            global_width: 8,
            n_queries: 4,
            sparse_count: 4,
            decoder_width: 6,
            fold_points: 2,
            mix_width: 6,
            fold_hidden: 5,
            attention: AttentionKind::Offset,
            skip: true,
        }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.attention = v.attention();
        self.skip = v.skip();
        self
    }

    pub fn variant(&self) -> Variant {
        match (self.attention, self.skip) {
            (AttentionKind::SelfAttention, false) => Variant::A,
            (AttentionKind::SelfAttention, true) => Variant::B,
            (AttentionKind::Offset, false) => Variant::C,
            (AttentionKind::Offset, true) => Variant::D,
        }
    }

    pub fn feature_width(&self) -> usize {
        *self.edge_widths.last().unwrap_or(&0)
    }

    /// Width of the concatenated input tokens.
    pub fn token_width(&self) -> usize {
        self.feature_width() + self.pe_width
    }

    /// Size of the predicted missing cloud: folded points plus sparse points.
    pub fn missing_count(&self) -> usize {
        self.n_queries * self.fold_points + self.sparse_count
    }

    /// Size of the completed cloud: input plus missing.
    pub fn completed_count(&self) -> usize {
        self.n_input + self.missing_count()
    }

    /// Effective EdgeConv neighbor count inside a group (self excluded).
    pub fn edge_neighbors(&self) -> usize {
        self.k_edge.min(self.k_group.saturating_sub(1)).max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        let positive = [
            ("n_input", self.n_input),
            ("n_gt", self.n_gt),
            ("regions", self.regions),
            ("k_group", self.k_group),
            ("k_edge", self.k_edge),
            ("pe_hidden", self.pe_hidden),
            ("pe_width", self.pe_width),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("global_width", self.global_width),
            ("n_queries", self.n_queries),
            ("decoder_width", self.decoder_width),
            ("fold_points", self.fold_points),
            ("mix_width", self.mix_width),
            ("fold_hidden", self.fold_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.edge_widths.is_empty() || self.edge_widths.contains(&0) {
            return bad("edge_widths must be non-empty and positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.sparse_count != self.n_queries {
            return bad(format!(
                "sparse_count {} must equal n_queries {}",
                self.sparse_count, self.n_queries
            ));
        }
        if self.regions > self.n_input || self.k_group > self.n_input {
            return bad(format!(
                "{} regions of {} points need at least that many input points, got {}",
                self.regions, self.k_group, self.n_input
            ));
        }
        if self.n_dec_layers > self.n_enc_layers {
            return Err(ModelError::LayerCountMismatch {
                enc: self.n_enc_layers,
                dec: self.n_dec_layers,
            });
        }
        Ok(())
    }
}
