//! Direction-of-arrival estimation for multiple speakers with a partially
//! calibrated microphone array: a binaural hearing-aid pair with known
//! prototype transfer functions plus one external microphone at an unknown
//! position.
//!
//! The pipeline runs STFT analysis, recursive covariance tracking,
//! pre-whitening and eigen-decomposition, then scores candidate directions
//! with MUSIC or RTF-vector matching. Prototype sets that only cover the
//! hearing-aid microphones are completed with an external-microphone element
//! by a least-squares fit to the noise-subspace orthogonality relation
//! ([`completion`]).

pub mod completion;
pub mod covariance;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod numerics;
pub mod prototypes;
pub mod sim;
pub mod spectra;
pub mod stft;
pub mod subspace;
pub mod wav;

pub use error::{Error, Result};
pub use numerics::{CMatrix, CVector, C64};
