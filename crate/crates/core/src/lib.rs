//! Continuously monitored Gaussian systems: conditional moment dynamics,
//! general-dyne measurement and the entropy/information bookkeeping that
//! follows from them.

pub mod dynamics;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod measurement;
pub mod model;
pub mod rng;
pub mod scenario;
pub mod thermo;
pub mod validation;

pub use error::{Error, Result};
pub use gaussian::{GaussianState, SymplecticForm};
pub use linalg::{Mat, Vector};
pub use measurement::{BathSpec, GeneralDyne, MonitoringMatrices};
pub use scenario::{parse_scenario, Scenario};
pub use model::{build_opo_model, build_quench_model, OpenModel, QuadraticHamiltonian};
