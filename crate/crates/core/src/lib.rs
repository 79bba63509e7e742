//! Table-reasoning agents trained with rank-aware policy optimization.
//!
//! - [`reward`]: format, accuracy and tool-use rewards.
//! - [`rapo`]: group advantages, rank weights and the clipped surrogate, with a GRPO mode.
//! - [`lab`]: synthetic tasks and a toy policy trained end to end.
//! - [`agent`]: prompting, parsing, model backends and the multi-turn episode loop.
//! - [`exec`]: the executor interface, an in-process interpreter and the sandbox client.
//! - [`eval`]: answer normalization, metrics and run reports.
//!
//! The optimizer and the toy policy are generic over [`Scalar`]; the aliases
//! below fix the common precisions.

pub mod agent;
pub mod config;
pub mod eval;
pub mod exec;
pub mod jsonl;
pub mod lab;
pub mod model;
pub mod rapo;
pub mod reward;
pub mod scalar;

pub use scalar::Scalar;

pub type RapoConfig64 = rapo::RapoConfig<f64>;
pub type RapoConfig32 = rapo::RapoConfig<f32>;
pub type LossReport64 = rapo::LossReport<f64>;
pub type LossReport32 = rapo::LossReport<f32>;
pub type AdvantageRecord64 = rapo::AdvantageRecord<f64>;
pub type ToyPolicy64 = lab::ToyPolicy<f64>;
pub type ToyPolicy32 = lab::ToyPolicy<f32>;
