//! Reference oracles, gradient checks and the verification suites.

pub mod fragments;
pub mod gradcheck;
pub mod oracle;
pub mod reparam;
pub mod report;
pub mod suite;

pub use gradcheck::{finite_diff_check, Fragment, GradCheckOptions};
pub use reparam::{reparam_equivalence_check, ReparamOptions};
pub use report::{CheckReport, Status};
pub use suite::{run_suite, SuiteReport, SUITES};
