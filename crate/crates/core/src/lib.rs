//! Discrete-time mechanical system identification with Tustin-integrated
//! neural networks, plus a grey-box Euler-Lagrange baseline for the rotary
//! (Furuta) pendulum.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`, which is what the tooling uses.

pub mod batch;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod euler_lagrange;
pub mod evaluate;
pub mod identify;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Net = nn::FeedforwardNet<f64>;
pub type Gradients = nn::GradientBundle<f64>;
pub type Model = model::TustinModel<f64>;
pub type State = model::StateVector<f64>;
pub type Trajectory = model::Trajectory<f64>;
pub type Experiment = data::ExperimentSequence<f64>;
pub type Dataset = data::SubsequenceDataset<f64>;
pub type Params = euler_lagrange::ELParameters<f64>;
