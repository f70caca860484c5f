//! Fitting the volume to supervision views.

pub mod backward;
pub mod gradcheck;
pub mod loss;
pub mod optimizer;

pub use backward::{backward, GradientBuffer};
pub use gradcheck::{gradcheck, gradcheck_with, GradcheckConfig, GradcheckProblem, GradcheckReport};
pub use loss::{mpi_loss, LossMode};
pub use optimizer::{optimize, trace_to_csv, OptimizeConfig, OptimizeResult, TraceRow};
