//! Learned improvement heuristics for climate sensor placement.
//!
//! A problem instance is a pool of `n + m` locations of which `n` hold
//! sensors. Readings at the placed sensors are interpolated with inverse
//! distance weighting onto `q` held-out evaluation points and the mean
//! absolute error scores the network. A transformer policy proposes pairwise
//! swaps in the placement sequence and is trained with an n-step actor-critic
//! loop; two classic search heuristics serve as baselines.
//!
//! Modules:
//! - [`spatial`]: IDW, MAE, polygons, instance generation and file formats
//! - [`env`]: the swap MDP, best-so-far rewards and rollouts
//! - [`policy`]: the transformer actor, the critic and their exact gradients
//! - [`train`]: the n-step actor-critic trainer
//! - [`baselines`]: stochastic search and context distance search
//! - [`evaluation`]: per-instance evaluation, subset aggregates and tables

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod par;
pub mod policy;
pub mod seed;
pub mod spatial;
pub mod train;

pub use env::{EnvConfig, EpisodeTrace, MoveAction, PlacementState, StepRecord};
pub use error::{Error, Result};
pub use policy::{CriticParameters, NetConfig, PolicyParameters, TransformerPolicy, Variant};
pub use spatial::{FieldModel, Location, Polygon, ProblemInstance, SensorReading};
pub use train::{TrainConfig, TrainReport};
