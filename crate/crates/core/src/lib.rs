//! Learning a one-hidden-layer sigmoid network from Gaussian-mixture inputs.
//!
//! The crate covers the input model ([`gmm`]), the teacher/student network
//! ([`network`]), moment-based initialization ([`tensor_init`]) followed by
//! full-batch gradient descent ([`training`]), permutation-invariant
//! recovery metrics ([`evaluation`]) and the seeded experiment harness
//! ([`experiments`]) that reproduces the sample-complexity and convergence
//! studies.

pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod gmm;
pub mod network;
pub mod tensor;
pub mod tensor_init;
pub mod training;

pub use error::{Error, Result};
pub use evaluation::{column_match, ensemble_agreement, is_success, perm_distance, MatchResult};
pub use experiments::{ExperimentConfig, ExperimentKind, Scale, TrialRecord};
pub use gmm::GmmParams;
pub use network::{Dataset, Weights};
pub use tensor::{SymTensor3, Tensor3};
pub use tensor_init::{initialize, InitConfig, InitReport};
pub use training::{gradient_descent, step_size, GdConfig, TrainTrace};
