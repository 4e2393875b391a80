//! Statevector laboratory for variational singular value decomposition with
//! matrix amplitude encoding.
//!
//! The pipeline: [`matrix`] canonicalizes the input, [`circuit`] runs the
//! encoding circuit on the [`sim`] engine and reads out (K, B)
//! probabilities, [`estimator`] turns those into the objective and its
//! shift-rule derivatives, and [`driver`] maximizes the objective and
//! extracts the factors. [`oracle`] is an independent Jacobi SVD used for
//! validation.

pub mod ansatz;
pub mod circuit;
pub mod cli;
pub mod driver;
pub mod error;
pub mod estimator;
pub mod io;
pub mod matrix;
pub mod oracle;
pub mod report;
pub mod sim;

pub use ansatz::{AnsatzParams, AnsatzShape, TieMode};
pub use circuit::{ProbeResult, Sampling};
pub use driver::{OptimizerConfig, SvdResult};
pub use error::{Error, Result};
pub use estimator::{EvalMode, ObjectiveSample};
pub use matrix::{PreparedMatrix, WeightScheme, WeightVector};
pub use sim::{RegisterLayout, Statevector};
