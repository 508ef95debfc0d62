//! Composable explicit feature-interaction models for CTR prediction.
//!
//! Any model in this crate is a triplet of three components:
//!
//! * an **interaction function** (Naive / Weighted / Diagonal / Projected)
//!   mapping two embeddings to an interaction term,
//! * a **layer pooling** (Field or Global, optionally residual) that stacks
//!   higher-order interaction layers on top of the embeddings,
//! * a **layer aggregator** (Direct / Layer / Term / Element weights)
//!   combining all layers into the representation fed to the classifier.
//!
//! Three-letter codes name the triplet: `PFL` is Projected product with
//! Field pooling and Layer aggregation; `WGT` (CIN-style), `PF'D`
//! (CrossNet-style), `NFD` (FM) and friends follow the same scheme. Named
//! presets reconstruct the classic second-order models exactly.
//!
//! Training runs mini-batch Adam with hand-derived gradients end to end,
//! early stopping, and a per-epoch history that tracks layer-aggregator
//! weights and interaction-weight norms. The `collapse` module measures
//! embedding dimensional collapse through sample-weighted singular spectra.
//!
//! With the default `parallel` feature, batch gradients, dataset generation
//! and analysis fan out over rayon; results are bit-identical to the
//! sequential fallback (`--no-default-features`).

pub mod aggregate;
pub mod collapse;
pub mod data;
pub mod error;
pub mod interaction;
pub mod layers;
pub mod linalg;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
