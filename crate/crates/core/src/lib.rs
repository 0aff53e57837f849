//! Measured-feedback two-leg ladder: exact single-particle Liouvillian,
//! perturbative spectra from the effective Hamiltonian, Gaussian quantum
//! trajectories and a small many-body reference solver.

pub mod error;
pub mod fit;
pub mod linalg;
pub mod liouville;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod perturb;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{build_h0, build_heff, build_jump_channels, JumpChannel, LadderConfig, Leg, SiteIndex};
