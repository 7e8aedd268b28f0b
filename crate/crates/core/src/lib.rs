pub mod error;
pub mod experiment;
pub mod export;
pub mod feasibility;
pub mod numerics;
pub mod pipeline;
pub mod rbal;
pub mod recovery;
pub mod reduction;
pub mod scenario;
pub mod verification;

pub use error::{Error, Result};
pub use experiment::{ResultRow, RunConfig};
pub use feasibility::{compute_p_low, FeasibilityReport};
pub use numerics::{ComplexMatrix, ComplexVector, HermitianMatrix, C64};
pub use pipeline::{run_pipeline, PipelineOptions, PipelineOutcome, SolutionPath};
pub use rbal::{SolveReport, SolveStatus, SolverConfig};
pub use recovery::{BeamformingSolution, SolutionDiagnostics};
pub use reduction::{DegeneracyVerdict, ReducedInstance};
pub use scenario::{ChannelMatrix, Scenario};
