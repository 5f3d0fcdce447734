//! Cell-free O-RAN digital twin.
//!
//! Operator intents are translated into precoding objectives and minimum-rate
//! constraints, then enforced by cooperating control agents that tune WMMSE
//! priority weights and drive O-RU activation with a multi-agent PPO policy.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` / `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the agent
//! layer and the runtime use; [`single`] carries the `f32` variants.

pub mod agents;
pub mod error;
pub mod mappo;
pub mod memory;
pub mod net_model;
pub mod precoder;
pub mod qlora;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LargeScaleFading = net_model::LargeScaleFading<f64>;
pub type ChannelSet = net_model::ChannelSet<f64>;
pub type UtilitySpec = precoder::UtilitySpec<f64>;
pub type PrecodingState = precoder::PrecodingState<f64>;
pub type Mappo = mappo::Mappo<f64>;
pub type NetworkEnv = mappo::NetworkEnv<f64>;

/// Single-precision aliases.
pub mod single {
    pub type LargeScaleFading = crate::net_model::LargeScaleFading<f32>;
    pub type ChannelSet = crate::net_model::ChannelSet<f32>;
    pub type UtilitySpec = crate::precoder::UtilitySpec<f32>;
    pub type PrecodingState = crate::precoder::PrecodingState<f32>;
    pub type Mappo = crate::mappo::Mappo<f32>;
    pub type NetworkEnv = crate::mappo::NetworkEnv<f32>;
}
