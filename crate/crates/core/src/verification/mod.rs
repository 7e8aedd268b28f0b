//! Independent checks of the solver: dense dual system, literal BAL step,
//! single-user oracle and KKT residuals.

pub mod dense;
pub mod kkt;
pub mod oracle;
pub mod suite;

pub use dense::{dense_dual_inverse_check, reference_bal_step, DenseSystem};
pub use kkt::{kkt_residuals, perturbed_feasible, KktResiduals};
pub use oracle::{scalar_oracle_k1, ScalarOptimum};
pub use suite::{run_suite, CheckResult, Level};
