//! Critical edges of deformed non-Hermitian random matrices.
//!
//! A normal deformation `A` is stored as a [`DeformationSpectrum`]. The
//! [`criticality`] module evaluates the functionals that characterize a
//! critical edge of `A + X` at the origin (shape parameter, scaling, offset).
//! [`dyson`] solves the Dyson equation of the Hermitization on the imaginary
//! axis. [`flow`] builds criticality-preserving paths of diagonal matrices and
//! [`spectra`] runs the Monte Carlo side: sampling, Girko's formula, log-det
//! statistics and local correlation estimates.

pub mod criticality;
pub mod dyson;
pub mod error;
pub mod flow;
pub mod generate;
pub mod spectra;
pub mod spectrum;

pub use error::{Error, Result};
pub use spectrum::{DeformationSpectrum, C64};
