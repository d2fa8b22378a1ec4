//! Nested-lattice coding over the Gaussian two-way relay channel.
//!
//! Three layers:
//!
//! * [`lattice`] — lattice geometry: quantizers, modulo reduction, second
//!   moments, dithers, nested codebooks.
//! * [`rates`] — closed-form analysis: MMSE coefficients, achievable MAC
//!   rates for both relay strategies, convex-envelope time sharing, the
//!   cut-set outer bound, the lattice-decoding error exponent, and the
//!   gap-to-outer-bound formulas.
//! * [`sim`] — a Monte-Carlo realization of the dithered modulo-lattice
//!   encode/decode chain and the downlink broadcast.
//!
//! The math core is generic over the scalar ([`Real`], implemented for
//! `f32` and `f64`); the simulator works in `f64`. The aliases below pin
//! the common concrete instantiations.

pub mod lattice;
pub mod rates;
pub mod real;
pub mod sim;

pub use real::Real;

/// `f64` lattice.
pub type Lattice64 = lattice::Lattice<f64>;
/// `f32` lattice.
pub type Lattice32 = lattice::Lattice<f32>;
/// `f64` nested pair.
pub type NestedPair64 = lattice::NestedPair<f64>;
/// `f64` nested codebook.
pub type LatticeCodebook64 = lattice::LatticeCodebook<f64>;
/// `f64` dither.
pub type DitherVector64 = lattice::DitherVector<f64>;
/// `f64` channel parameters.
pub type ChannelParams64 = rates::ChannelParams<f64>;
/// `f32` channel parameters.
pub type ChannelParams32 = rates::ChannelParams<f32>;
/// `f64` rate region.
pub type RateRegion64 = rates::RateRegion<f64>;
/// `f64` envelope curve.
pub type UceCurve64 = rates::UceCurve<f64>;
/// `f64` gap summary.
pub type GapReport64 = rates::GapReport<f64>;
