//! Adaptive tracking control of a two-link manipulator with deep neural
//! network model estimates and a skew-symmetry observer.

pub mod adaptation;
pub mod checks;
pub mod config;
pub mod controller;
pub mod dnn;
pub mod error;
pub mod export;
pub mod metrics;
pub mod plant;
pub mod report;
pub mod simulator;
pub mod skew_observer;
pub mod tensor_ops;

pub use config::{Mode, SimConfig};
pub use error::{Error, Result};
