//! Hierarchical deep reinforcement learning for multi-RAT assignment and
//! downlink power allocation.
//!
//! An edge-server DQN agent assigns every edge device (ED) to a non-empty
//! subset of radio access technologies (RATs); one DDPG agent per RAT then
//! splits that RAT's power budget across its EDs. Everything numerical is
//! generic over [`scalar::Scalar`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`.

pub mod baselines;
pub mod channel;
pub mod ddpg;
pub mod dqn;
pub mod env;
pub mod matrix;
pub mod nn;
pub mod orchestrator;
pub mod presets;
pub mod scalar;

pub use scalar::Scalar;

pub type Channel = channel::Channel<f64>;
pub type RatRadioProfile = channel::RatRadioProfile<f64>;
pub type Environment = env::Environment<f64>;
pub type EdQosProfile = env::EdQosProfile<f64>;
pub type NetworkSnapshot = env::NetworkSnapshot<f64>;
pub type PowerAlloc = env::PowerAlloc<f64>;
pub type DenseNet = nn::DenseNet<f64>;
pub type DqnAgent = dqn::DqnAgent<f64>;
pub type DdpgAgent = ddpg::DdpgAgent<f64>;
pub type TrainConfig = orchestrator::TrainConfig<f64>;
pub type Trainer = orchestrator::Trainer<f64>;
