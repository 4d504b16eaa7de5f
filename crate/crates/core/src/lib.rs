//! Finite-truncation numerics for glued Dirac-type operators on the mirror
//! quantum two-sphere, together with the commutative d-bar construction on
//! two glued unit disks.
//!
//! The quantum side works mode by mode: an element of the disk Hilbert space
//! is a family of coefficient sequences `f_n^+(k)`, `f_n^-(k)`, and the Dirac
//! operator acts on each mode through one-step (Jacobi) difference operators.
//! Everything here is a finite section of those infinite objects; infinite
//! tail sums and products are handled through [`TruncationSpec`].

pub mod classical;
pub mod diagnostics;
pub mod dirac;
mod error;
pub mod hilbert;
pub mod jacobi;
pub mod parametrix;
pub mod quadrature;
mod truncation;
pub mod weights;

pub use error::{Error, Result};
pub use hilbert::{FourierElement, GluedElement, Scalar};
pub use truncation::TruncationSpec;
pub use weights::{GeometricFamily, QWeight, WeightFamily};
