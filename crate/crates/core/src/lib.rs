//! Point cloud completion with an offset-attention transformer.
//!
//! The crate carries its own reverse-mode autodiff engine, the network
//! (local embedding, encoder, query head, decoder, folding), a synthetic
//! data generator built on virtual depth scans, and the training and
//! evaluation harness behind the `oa-complete` binary.

pub mod autodiff;
pub mod binio;
pub mod config;
pub mod data;
pub mod embed;
pub mod fold;
pub mod geom;
pub mod harness;
pub mod model;
pub mod nn;
pub mod transformer;

pub use config::{AttentionKind, ModelConfig, ModelError, Variant};
pub use geom::{GeomError, Point, PointCloud};
pub use model::CompletionNet;
