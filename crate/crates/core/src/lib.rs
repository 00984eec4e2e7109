//! Blind recovery of latent causal component pairs from multivariate time series.
//!
//! Given `D` observed channels that are unknown linear mixtures of latent
//! sources, this crate searches for pairs of projection vectors `(w, v)` such
//! that the driving component `y(t) = wᵀx(t)` Granger-causes the driven
//! component `z(t) = vᵀx(t)` as strongly as possible. The causal strength of a
//! pair is scored as one minus the ratio of full-model to reduced-model
//! prediction error, evaluated in closed form from lagged covariance matrices.
//! A time-reversed counterpart of the score is added to the objective to break
//! the driver-mixture ambiguity, and pairs beyond the first are found after
//! projecting the previous driving component (and its lags) out of the data.
//!
//! The crate is organized along the processing pipeline:
//!
//! - [`series`]: the `MultiSeries` container for channels-by-samples data
//! - [`covariance`]: lagged covariance estimation, block matrix assembly, and
//!   condition-number regularization
//! - [`causality`]: closed-form causal strength, its time-reversed variant,
//!   and an explicit-regression scorer usable as an independent cross-check
//! - [`gradient`]: closed-form gradient of the score with all four Jacobians,
//!   plus the finite-difference gradient used by default in optimization
//! - [`optimizer`]: grouped coordinate ascent over the two unit spheres, with
//!   deflation between extracted pairs
//! - [`deflation`]: lagged least-squares removal of an extracted component
//! - [`simulator`]: synthetic vector-autoregressive benchmark systems
//! - [`stats`]: phase-randomized surrogate significance testing
//!
//! All numerics are generic over the scalar type through [`Scalar`]; `f64`
//! aliases for the main types are exported at the crate root.

pub mod causality;
pub mod covariance;
pub mod deflation;
pub mod gradient;
pub mod kron;
pub mod optimizer;
pub mod series;
pub mod simulator;
pub mod stats;

mod error;

pub use error::{Error, Result};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar types the numerics run on. Implemented for `f32` and `f64`.
pub trait Scalar: RealField + FromPrimitive + ToPrimitive + Copy {}

impl<T: RealField + FromPrimitive + ToPrimitive + Copy> Scalar for T {}

/// Converts an `f64` constant into the working scalar type.
///
/// Panics if the value is not representable, which cannot happen for the
/// float types this crate is instantiated with.
#[inline]
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant not representable in scalar type")
}

/// Mixes a master seed with an index and salt into an independent stream
/// seed, so parallel workers draw reproducible but uncorrelated randomness.
pub(crate) fn derive_seed(master: u64, index: u64, salt: u64) -> u64 {
    let mut z = master
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ salt.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `MultiSeries` over `f64`.
pub type Series64 = series::MultiSeries<f64>;
/// `LagCovSet` over `f64`.
pub type LagCov64 = covariance::LagCovSet<f64>;
/// `ProjectionPair` over `f64`.
pub type Pair64 = causality::ProjectionPair<f64>;
/// `CausalityStats` over `f64`.
pub type Stats64 = causality::CausalityStats<f64>;
/// `Decomposition` over `f64`.
pub type Decomposition64 = optimizer::Decomposition<f64>;
