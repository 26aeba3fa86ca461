//! Numerical toolkit for g-measures of the doubling map `x ↦ 2x mod 1`.
//!
//! A g-function is a non-negative continuous `g` on the circle with
//! `g(x) + g(x + 1/2) = 1`. Its Riesz-product densities
//! `g_n(x) = 2^n ∏_{k<n} g(2^k x)` converge weakly to the g-measure `μ_g`
//! whenever `g` is *good*. This crate provides:
//!
//! * [`gfunction`]: builtin and user-supplied g-functions, validation,
//!   moduli of continuity and power-law envelopes;
//! * [`transfer`]: the transfer operator on dyadic grids and enclosures
//!   of `μ_g(f)` obtained from the min/max of `φ_g^n f`;
//! * [`measure`]: dyadic masses, the distribution function `F_g`,
//!   Fourier–Stieltjes coefficients and the Thue–Morse autocorrelation;
//! * [`classify`]: goodness conditions, spectral type and atom search;
//! * [`scaling`]: the explicit super-polynomial bounds on `F_g` near 0.

pub mod classify;
pub mod error;
pub mod gfunction;
pub mod measure;
pub mod numeric;
pub mod scaling;
pub mod transfer;

pub use error::{Error, Result};
pub use gfunction::{Builtin, GFunction, ScalingEnvelope, ZeroEntry, ZeroSpec};
pub use transfer::{Enclosure, GridFunction, Repr};
