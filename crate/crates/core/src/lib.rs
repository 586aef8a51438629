//! Antivirus scan report embeddings.
//!
//! Scan reports are laid out as fixed-width token sequences, encoded by a
//! Transformer pre-trained on masked-token and masked-label objectives,
//! fine-tuned as a Siamese network with Multiple Negatives Ranking loss,
//! and searched with a Dynamic Continuous Indexing k-NN index.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type.

pub mod dci;
mod error;
pub mod eval;
pub mod nn;
pub mod report;
mod scalar;
pub mod synth;
pub mod train;
pub mod vocab;

pub use error::{Error, ErrorCategory};
pub use scalar::Scalar;

pub type ParamStore32 = nn::ParamStore<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type Model32 = nn::Model<f32>;
pub type Model64 = nn::Model<f64>;
pub type AdamW32 = nn::AdamW<f32>;
pub type AdamW64 = nn::AdamW<f64>;
pub type DciIndex32 = dci::DciIndex<f32>;
pub type DciIndex64 = dci::DciIndex<f64>;
