//! Plane-wave scattering of a spin-1/2 particle off the field region.
//!
//! Inside `[0, d]` the two spin components see opposite constant potentials
//! `±μB`, so each passes a square step with inside wave number
//! `k₁ = √(2m(E-μB))/ħ` (spin up, raised by `+μB`) or `k₂ = √(2m(E+μB))/ħ`
//! (spin down). Only `E > |μB|` is handled.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, UnitSystem};
use crate::error::{Error, Result};
use crate::spinclock::{spin_evolve, SpinState};

type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringInputs {
    pub units: UnitSystem,
    /// Kinetic energy of the incoming plane wave.
    pub energy: f64,
    /// Interaction energy μB (signed).
    pub mu_b: f64,
    pub d: f64,
    /// Incoming amplitude; drops out of the normalized spin state.
    pub amplitude: f64,
}

impl ScatteringInputs {
    pub fn new(units: UnitSystem, energy: f64, mu_b: f64, d: f64) -> Result<Self> {
        let s = Self {
            units,
            energy,
            mu_b,
            d,
            amplitude: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Inputs for the configured rotator at kinetic energy `energy`.
    pub fn from_config(config: &RunConfig, energy: f64) -> Result<Self> {
        Self::new(config.units, energy, config.rotator.mu_b(), config.rotator.d)
    }

    /// Inputs at the packet's carrier energy `ħ²k0²/2m`.
    pub fn at_carrier(config: &RunConfig) -> Result<Self> {
        let k = config.packet.k0;
        let e = config.units.hbar * config.units.hbar * k * k / (2.0 * config.units.mass);
        Self::from_config(config, e)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy.is_finite() && self.mu_b.is_finite() && self.energy > self.mu_b.abs()) {
            return Err(Error::UnsupportedRegime(format!(
                "plane-wave scattering needs E > |muB|, got E = {}, muB = {}",
                self.energy, self.mu_b
            )));
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::Config(format!("region width d = {} must be positive", self.d)));
        }
        Ok(())
    }

    fn wave_number(&self, e: f64) -> f64 {
        (2.0 * self.units.mass * e).sqrt() / self.units.hbar
    }

    pub fn k(&self) -> f64 {
        self.wave_number(self.energy)
    }

    pub fn k1(&self) -> f64 {
        self.wave_number(self.energy - self.mu_b)
    }

    pub fn k2(&self) -> f64 {
        self.wave_number(self.energy + self.mu_b)
    }

    /// `k_in² - k²` for the given sign of the inside potential, without
    /// cancellation.
    fn k_sq_shift(&self, potential_sign: f64) -> f64 {
        -potential_sign * 2.0 * self.units.mass * self.mu_b / (self.units.hbar * self.units.hbar)
    }

    pub fn velocity(&self) -> f64 {
        self.units.hbar * self.k() / self.units.mass
    }

    pub fn omega(&self) -> f64 {
        self.mu_b / self.units.hbar
    }

    pub fn energy_ratio(&self) -> f64 {
        self.energy / self.mu_b.abs()
    }
}

/// Transmission and reflection coefficients of one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchAmplitudes {
    pub k_in: f64,
    pub t: C64,
    pub r: C64,
    /// `|r|²`, evaluated without subtracting from one.
    pub reflectance: f64,
    /// `(k_in - k) d + arg(t e^{-i(k_in-k)d})`, continuous in the parameters.
    pub phase: f64,
}

impl BranchAmplitudes {
    pub fn transmittance(&self) -> f64 {
        self.t.norm_sqr()
    }

    /// `1 - |t|`, accurate even when `|r|²` is below machine precision.
    pub fn modulus_deficit(&self) -> f64 {
        self.reflectance / (1.0 + self.t.norm())
    }
}

/// Square-step transmission `t` and reflection `r` for a region `[0, d]` of
/// inside wave number `k_in`, outside `k`, with the transmitted wave written
/// as `t e^{ikx}`.
pub fn solve_branch(k: f64, k_in: f64, d: f64) -> Result<(C64, C64)> {
    let b = solve_split(k, k_in, (k_in - k) * (k_in + k), d)?;
    Ok((b.t, b.r))
}

fn solve_split(k: f64, k_in: f64, k_sq_shift: f64, d: f64) -> Result<BranchAmplitudes> {
    if !(k > 0.0 && k_in > 0.0 && d > 0.0) {
        return Err(Error::DegenerateInput(format!(
            "wave numbers and width must be positive: k = {k}, k_in = {k_in}, d = {d}"
        )));
    }
    let diff = k_sq_shift / (k_in + k);
    let e2 = C64::from_polar(1.0, 2.0 * k_in * d);
    let den = (k + k_in).powi(2) - diff * diff * e2;
    if !(den.norm() > 0.0) || !den.norm().is_finite() {
        return Err(Error::NumericalDegeneracy(format!(
            "vanishing denominator for k = {k}, k_in = {k_in}, d = {d}"
        )));
    }
    let carrier = C64::from_polar(1.0, diff * d);
    let core = 4.0 * k * k_in / den;
    let t = carrier * core;
    let one_minus = C64::new(1.0, 0.0) - e2;
    let r = -k_sq_shift * one_minus / den;
    // |1 - e^{2iθ}|² = 4 sin²θ
    let s = (k_in * d).sin();
    let reflectance = k_sq_shift * k_sq_shift * 4.0 * s * s / den.norm_sqr();
    Ok(BranchAmplitudes {
        k_in,
        t,
        r,
        reflectance,
        // Re den >= 4 k k_in > 0, so the argument of `core` stays in (-π/2, π/2)
        phase: diff * d + core.arg(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringSolution {
    /// Spin-up branch, inside wave number `k₁`.
    pub minus: BranchAmplitudes,
    /// Spin-down branch, inside wave number `k₂`.
    pub plus: BranchAmplitudes,
    pub c: f64,
    pub d: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// Transmitted spinor, `(C e^{iφ₁}, D e^{iφ₂}) / √(C² + D²)`.
    pub chi_out: SpinState,
    /// Factor `N` with `(N/√2)·A·(C, D)` of unit norm.
    pub norm_factor: f64,
}

/// Transmitted spin state for an incoming `+x` polarized plane wave.
pub fn transmitted_spin_state(inputs: &ScatteringInputs) -> Result<ScatteringSolution> {
    inputs.validate()?;
    let k = inputs.k();
    let minus = solve_split(k, inputs.k1(), inputs.k_sq_shift(1.0), inputs.d)?;
    let plus = solve_split(k, inputs.k2(), inputs.k_sq_shift(-1.0), inputs.d)?;
    let a = inputs.amplitude;
    let up = a * minus.t;
    let down = a * plus.t;
    let chi_out = SpinState::new(up, down)?;
    let c = minus.t.norm();
    let dd = plus.t.norm();
    Ok(ScatteringSolution {
        minus,
        plus,
        c,
        d: dd,
        phi1: minus.phase,
        phi2: plus.phase,
        chi_out,
        norm_factor: (2.0 / (a * a * (c * c + dd * dd))).sqrt(),
    })
}

/// Real and imaginary parts of the transmission coefficient from the
/// expanded trigonometric forms.
pub fn re_im_closed(k: f64, k_in: f64, d: f64) -> (f64, f64) {
    let (sk, ck) = (k * d).sin_cos();
    let (s1, c1) = (k_in * d).sin_cos();
    let p = (k + k_in).powi(2);
    let m = (k - k_in).powi(2);
    let den = p * p + m * m - 2.0 * p * m * (2.0 * k_in * d).cos();
    let a = 8.0 * k * k_in * (k * k + k_in * k_in);
    let b = 16.0 * k * k * k_in * k_in;
    ((a * sk * s1 + b * ck * c1) / den, (a * ck * s1 - b * sk * c1) / den)
}

/// Exact solution set against its `E ≫ |μB|` limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LarmorLimit {
    pub energy_ratio: f64,
    pub applicable: bool,
    pub phi1: f64,
    pub phi2: f64,
    pub c_lim: f64,
    pub d_lim: f64,
    pub phi1_lim: f64,
    pub phi2_lim: f64,
    pub chi_lim: SpinState,
    /// Time of flight `d / v`.
    pub transit: f64,
    pub omega: f64,
    pub c_deviation: f64,
    pub d_deviation: f64,
    pub phi1_deviation: f64,
    pub phi2_deviation: f64,
    /// Relative gap between `φ₂ - φ₁` and `2ωd/v`.
    pub phase_gap: f64,
    /// Fidelity of the exact transmitted spin state with the free
    /// precession state after `d / v`.
    pub fidelity: f64,
}

/// Compares the exact transmitted state with the limit in which both
/// branches are fully transmitted and only pick up the phases `(k₁,₂-k)d`.
/// `threshold` is the energy ratio above which the limit is deemed to apply.
pub fn larmor_limit_prediction(inputs: &ScatteringInputs, threshold: f64) -> Result<LarmorLimit> {
    let exact = transmitted_spin_state(inputs)?;
    let k = inputs.k();
    let phi1_lim = inputs.k_sq_shift(1.0) / (inputs.k1() + k) * inputs.d;
    let phi2_lim = inputs.k_sq_shift(-1.0) / (inputs.k2() + k) * inputs.d;
    let chi_lim = SpinState::new(C64::from_polar(1.0, phi1_lim), C64::from_polar(1.0, phi2_lim))?;
    let transit = inputs.d / inputs.velocity();
    let omega = inputs.omega();
    let free = spin_evolve(transit, omega);
    let target = 2.0 * omega * transit;
    let phase_gap = if target != 0.0 {
        ((exact.phi2 - exact.phi1 - target) / target).abs()
    } else {
        (exact.phi2 - exact.phi1).abs()
    };
    Ok(LarmorLimit {
        energy_ratio: inputs.energy_ratio(),
        applicable: inputs.energy_ratio() >= threshold,
        phi1: exact.phi1,
        phi2: exact.phi2,
        c_lim: 1.0,
        d_lim: 1.0,
        phi1_lim,
        phi2_lim,
        chi_lim,
        transit,
        omega,
        c_deviation: exact.minus.modulus_deficit(),
        d_deviation: exact.plus.modulus_deficit(),
        phi1_deviation: (exact.phi1 - phi1_lim).abs(),
        phi2_deviation: (exact.phi2 - phi2_lim).abs(),
        phase_gap,
        fidelity: exact.chi_out.fidelity(&free),
    })
}

/// One row of a parameter scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub energy: f64,
    pub mu_b: f64,
    pub d: f64,
    pub t_minus: f64,
    pub t_plus: f64,
    pub c: f64,
    pub d_mod: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub fidelity_vs_larmor: f64,
    /// Largest `| |r|² + |t|² - 1 |` of the two branches.
    pub flux_error: f64,
    /// Largest componentwise gap between the expanded real/imaginary forms
    /// and the direct complex evaluation.
    pub closed_form_gap: f64,
}

fn scan_row(inputs: &ScatteringInputs) -> Result<ScanRow> {
    let s = transmitted_spin_state(inputs)?;
    let free = spin_evolve(inputs.d / inputs.velocity(), inputs.omega());
    let k = inputs.k();
    let mut gap: f64 = 0.0;
    let mut flux: f64 = 0.0;
    for b in [&s.minus, &s.plus] {
        let (re, im) = re_im_closed(k, b.k_in, inputs.d);
        gap = gap.max((re - b.t.re).abs()).max((im - b.t.im).abs());
        flux = flux.max((b.r.norm_sqr() + b.t.norm_sqr() - 1.0).abs());
    }
    Ok(ScanRow {
        energy: inputs.energy,
        mu_b: inputs.mu_b,
        d: inputs.d,
        t_minus: s.minus.transmittance(),
        t_plus: s.plus.transmittance(),
        c: s.c,
        d_mod: s.d,
        phi1: s.phi1,
        phi2: s.phi2,
        fidelity_vs_larmor: s.chi_out.fidelity(&free),
        flux_error: flux,
        closed_form_gap: gap,
    })
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Scan over energy ratio and region width around the configured rotator:
/// ratios log-spaced in `[1.05, 10⁴]`, widths in `[d/4, 4d]`, about
/// `points` rows in total.
pub fn flux_scan(config: &RunConfig, points: usize) -> Result<Vec<ScanRow>> {
    let mu_b = config.rotator.mu_b();
    if mu_b == 0.0 {
        return Err(Error::DegenerateMapping(
            "rotator.b or rotator.mu is zero; the scattering scan needs a nonzero muB".into(),
        ));
    }
    let side = (points as f64).sqrt().ceil().max(1.0) as usize;
    let ratios = log_space(1.05, 1e4, side);
    let widths = log_space(config.rotator.d / 4.0, config.rotator.d * 4.0, points.div_ceil(side));
    let cases: Vec<(f64, f64)> = ratios
        .iter()
        .flat_map(|&r| widths.iter().map(move |&w| (r, w)))
        .collect();
    cases
        .par_iter()
        .map(|&(r, w)| scan_row(&ScatteringInputs::new(config.units, r * mu_b.abs(), mu_b, w)?))
        .collect()
}

/// Larmor-limit sweep over log-spaced energy ratios at the configured width.
pub fn larmor_scan(config: &RunConfig) -> Result<Vec<LarmorLimit>> {
    let mu_b = config.rotator.mu_b();
    if mu_b == 0.0 {
        return Err(Error::DegenerateMapping(
            "rotator.b or rotator.mu is zero; the Larmor sweep needs a nonzero muB".into(),
        ));
    }
    let s = &config.scatter;
    log_space(s.ratio_min, s.ratio_max, s.ratio_points)
        .par_iter()
        .map(|&r| {
            let inputs = ScatteringInputs::new(config.units, r * mu_b.abs(), mu_b, config.rotator.d)?;
            larmor_limit_prediction(&inputs, config.numerics.larmor_limit_ratio)
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`, skipping non-positive `y`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Transfer-matrix solution of the same step, as an independent check.
    fn transfer_matrix(k: f64, k_in: f64, d: f64) -> (C64, C64) {
        // continuity of ψ and ψ' at 0 and d; ψ = e^{ikx} + r e^{-ikx} on the left,
        // a e^{ik_in x} + b e^{-ik_in x} inside, t e^{ikx} on the right
        let ep = C64::from_polar(1.0, k_in * d);
        let em = ep.conj();
        let ek = C64::from_polar(1.0, k * d);
        // at x = d: a ep + b em = t ek, k_in (a ep - b em) = k t ek
        let a_t = ek * (1.0 + k / k_in) / (2.0 * ep);
        let b_t = ek * (1.0 - k / k_in) / (2.0 * em);
        // at x = 0: 1 + r = a + b, k (1 - r) = k_in (a - b)
        let sum = a_t + b_t;
        let dif = a_t - b_t;
        let t = 2.0 / (sum + k_in / k * dif);
        let r = sum * t - 1.0;
        (t, r)
    }

    #[test]
    fn no_potential_is_transparent() {
        let (t, r) = solve_branch(1.3, 1.3, 2.0).unwrap();
        assert!((t - 1.0).norm() < 1e-15 && r.norm() < 1e-15);
    }

    #[test]
    fn resonance_is_transparent() {
        let (t, r) = solve_branch(1.2, 1.0, PI).unwrap();
        assert!((t.norm() - 1.0).abs() < 1e-14 && r.norm() < 1e-14);
    }

    #[test]
    fn reference_transmission() {
        let (t, r) = solve_branch(1.0, 0.8, PI).unwrap();
        assert!((t.norm_sqr() - 0.98281).abs() < 5e-6, "{}", t.norm_sqr());
        let (tt, rt) = transfer_matrix(1.0, 0.8, PI);
        assert!((t - tt).norm() < 1e-13 && (r - rt).norm() < 1e-13);
    }

    #[test]
    fn closed_forms_match() {
        for &(k, kin, d) in &[(1.0, 0.8, PI), (2.0, 2.3, 0.7), (1.0, 1.0, 3.0)] {
            let (t, _) = solve_branch(k, kin, d).unwrap();
            let (re, im) = re_im_closed(k, kin, d);
            assert!((re - t.re).abs() < 1e-13 && (im - t.im).abs() < 1e-13);
        }
        let (re, im) = re_im_closed(1.0, 0.7, 1e-9);
        assert!((re - 1.0).abs() < 1e-8 && im.abs() < 1e-8);
    }

    #[test]
    fn zero_field_keeps_polarization() {
        let s = transmitted_spin_state(&ScatteringInputs::new(UnitSystem::natural(), 2.0, 0.0, 3.0).unwrap()).unwrap();
        assert_eq!(s.c, s.d);
        assert_eq!(s.phi1, s.phi2);
        assert!((s.chi_out.fidelity(&SpinState::plus_x()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn amplitude_drops_out() {
        let mut inp = ScatteringInputs::new(UnitSystem::natural(), 2.0, 0.3, 3.0).unwrap();
        let a = transmitted_spin_state(&inp).unwrap();
        inp.amplitude = 2.0;
        let b = transmitted_spin_state(&inp).unwrap();
        assert!((a.chi_out.up - b.chi_out.up).norm() < 1e-15);
        assert!((a.chi_out.down - b.chi_out.down).norm() < 1e-15);
    }

    #[test]
    fn deficit_matches_direct_where_resolvable() {
        let inp = ScatteringInputs::new(UnitSystem::natural(), 2.0, 0.5, 3.0).unwrap();
        let s = transmitted_spin_state(&inp).unwrap();
        assert!((s.minus.modulus_deficit() - (1.0 - s.c)).abs() < 1e-14);
    }

    #[test]
    fn larmor_limit_at_high_ratio() {
        let inp = ScatteringInputs::new(UnitSystem::natural(), 1e9 * 0.1, 0.1, 50.0).unwrap();
        let l = larmor_limit_prediction(&inp, 1e6).unwrap();
        assert!(l.applicable);
        assert!(l.fidelity > 1.0 - 1e-12, "{}", l.fidelity);
        assert!(l.phase_gap < 1e-5);
    }

    #[test]
    fn sub_threshold_energy_rejected() {
        assert!(matches!(
            ScatteringInputs::new(UnitSystem::natural(), 0.1, 0.2, 1.0),
            Err(Error::UnsupportedRegime(_))
        ));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y = [2.0, 0.02, 0.0002];
        assert!((log_log_slope(&x, &y).unwrap() + 2.0).abs() < 1e-12);
    }
}
