//! Boosting with pathway kernel base learners for regression, binary
//! classification and Cox survival outcomes.

pub mod boost;
pub mod clinical;
pub mod data;
pub mod error;
pub mod hessian;
pub mod increment;
pub mod io;
pub mod kernel;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod sim;

pub use boost::{fit, tune, tune_and_fit, BoostConfig, CvResult, PreparedData, TuneGrid, TuneReport};
pub use data::{Covariates, ExpressionDataset, Outcome, OutcomeType, Pathway, PathwayCollection};
pub use error::{ErrorClass, PkbError, Result};
pub use increment::{Penalty, PenaltyKind};
pub use kernel::{KernelKind, KernelSpec};
pub use metrics::{c_index, mse, ConcordanceResult};
pub use model::FittedModel;
pub use sim::{simulate, SimDesign, SimModel};
