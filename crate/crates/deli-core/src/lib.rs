//! Low CP-rank tensor completion from few entries.
//!
//! The pipeline densely samples a handful of mode-(1,2) slices, completes them
//! with a matrix-completion solver, recovers the first two factor matrices by
//! simultaneous diagonalization of random slice combinations, and then solves
//! censored least-squares systems on sparsely sampled fibers to recover the
//! remaining modes. Both adaptive and nonadaptive sampling strategies are
//! provided, along with a masked-ALS refinement stage and deterministic,
//! sample-counting entry oracles for experiments.

pub mod als;
pub mod cls;
pub mod cp;
pub mod error;
pub mod jennrich;
pub mod linalg;
pub mod mc;
pub mod oracle;
pub mod pipeline;
pub mod sampling;
pub mod synth;
pub mod tensor;

pub use cp::CpDecomposition;
pub use error::DeliError;
pub use oracle::{EntryOracle, NoiseSpec, SampleLedger, SamplePhase};
pub use pipeline::{CompletionReport, DeliConfig, SamplingVariant};
pub use tensor::{DenseTensor, IndexTuple};

pub type Result<T> = std::result::Result<T, DeliError>;
