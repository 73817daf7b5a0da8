//! Group-relative policy optimisation with self-generated memory tips,
//! hybrid on/off-policy updates and pseudo-count exploration bonuses, on
//! small text-adventure environments.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the `f64` instantiation used by the CLI.

pub mod envsim;
pub mod hashing;
pub mod memory;
pub mod optimizer;
pub mod policy;
pub mod rollout;
pub mod scalar;
pub mod trainer;

pub type Params = policy::PolicyParams<f64>;
pub type Grad = policy::Gradient<f64>;
pub type Context = policy::ContextFeatures<f64>;
pub type TipF64 = memory::Tip<f64>;
pub type Memory = memory::TipMemory<f64>;
pub type Novelty = memory::NoveltyStore<f64>;
pub type Traj = rollout::Trajectory<f64>;
pub type Step = rollout::StepRecord<f64>;
pub type Batch = optimizer::GroupBatch<f64>;
pub type Update = optimizer::UpdateConfig<f64>;
pub type Config = trainer::TrainConfig<f64>;
pub type Runner = trainer::Trainer<f64>;
