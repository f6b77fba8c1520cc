//! Quantum arrival-time and transit-time distributions for a wave packet
//! crossing a bounded magnetic-field region, the Larmor spin clock built on
//! them, and plane-wave scattering off the spin-dependent well/barrier pair.
//!
//! Module map:
//! - [`config`]: units, packet/rotator specs, numerics, regime checks
//! - [`wavepacket`]: analytic and spectral free evolution, ρ, J and S
//! - [`bohm`]: trajectories, arrival-time inversion, diagnostics
//! - [`timedist`]: Bohmian, current-density and transit-time distributions
//! - [`spinclock`]: spin evolution, Π(φ) and P±(θ)
//! - [`scatter`]: plane-wave scattering and the Larmor limit
//! - [`export`]: CSV tables with JSON sidecars
//! - [`validate`]: the invariant suite behind `bohmclock validate`

pub mod bohm;
pub mod config;
pub mod error;
pub mod export;
pub mod numerics;
pub mod scatter;
pub mod spinclock;
pub mod timedist;
pub mod validate;
pub mod wavepacket;

pub use config::{
    check_regime, derived_parameters, DerivedParams, Numerics, PacketKind, PacketSpec, Placement,
    RegimeReport, RotatorSpec, RunConfig, TailPolicy, UnitMode, UnitSystem,
};
pub use error::{Error, ErrorCategory, Result};
