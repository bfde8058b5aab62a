//! Galerkin-truncated affine diffusions on the canonical cone `H_I^+ (+) H_J`.
//!
//! The crate validates affine parameter sets, integrates the generalized
//! Riccati system behind the exponential-affine characteristic function,
//! builds the nilpotent shear `Lambda = Id + D` that block-diagonalizes the
//! volatility, simulates cone-preserving paths, and checks the resulting laws
//! by Monte Carlo.
//!
//! `no_std` with `alloc`. File formats, the CLI and the thread-pool runner
//! live in the companion `affine-hilbert-cli` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod families;
pub mod hilbert;
pub mod params;
pub mod riccati;
pub mod simulate;
pub mod tail;
pub mod transform;
pub mod verify;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
pub use families::{make_cir, make_heston, make_ou, FamilyConstants, FamilySpec};
pub use hilbert::{CVec, IndexPartition, RMat, RVec};
pub use params::{AdmissibilityReport, AffineParams, Finding, Status};
pub use riccati::{solve_riccati, RiccatiSolution, SolverOpts};
pub use simulate::{simulate_paths, PathEnsemble, PathRunner, Scheme, Serial, SimConfig, Store};
pub use tail::{SeqRule, TailDecay};
pub use transform::TransformPack;
pub use verify::VerificationReport;
