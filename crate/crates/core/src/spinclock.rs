//! Larmor clock: spin precession inside the field region, the map from
//! time spent there to rotation angle, and the Stern-Gerlach projection
//! probabilities `P±(θ)` averaged over the angle distribution.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use crate::config::TailPolicy;
use crate::error::{Error, Result};
use crate::timedist::{DistKind, TimeDistribution};

type C64 = Complex64;

/// Spin-1/2 state in the z basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinState {
    pub up: C64,
    pub down: C64,
}

impl SpinState {
    /// Normalizes `(up, down)`; fails on the zero vector.
    pub fn new(up: C64, down: C64) -> Result<Self> {
        let n = (up.norm_sqr() + down.norm_sqr()).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::DegenerateInput("spin state has zero norm".into()));
        }
        Ok(Self { up: up / n, down: down / n })
    }

    /// Polarized along +x, the state entering the field region.
    pub fn plus_x() -> Self {
        Self {
            up: C64::new(FRAC_1_SQRT_2, 0.0),
            down: C64::new(FRAC_1_SQRT_2, 0.0),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.up.norm_sqr() + self.down.norm_sqr()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &SpinState) -> C64 {
        self.up.conj() * other.up + self.down.conj() * other.down
    }

    pub fn fidelity(&self, other: &SpinState) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// Bloch vector `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)`.
    pub fn bloch(&self) -> [f64; 3] {
        let c = self.up.conj() * self.down;
        [
            2.0 * c.re,
            2.0 * c.im,
            self.up.norm_sqr() - self.down.norm_sqr(),
        ]
    }

    /// Azimuth of the polarization in the x-y plane, in `(-π, π]`.
    pub fn azimuth(&self) -> f64 {
        let b = self.bloch();
        b[1].atan2(b[0])
    }
}

/// State after spending `tau` in the field: `(e^{-iωτ}, e^{iωτ}) / √2`.
pub fn spin_evolve(tau: f64, omega: f64) -> SpinState {
    let a = omega * tau;
    SpinState {
        up: C64::from_polar(FRAC_1_SQRT_2, -a),
        down: C64::from_polar(FRAC_1_SQRT_2, a),
    }
}

/// Rotation angle `2ωτ`, not reduced modulo 2π.
pub fn phi_of_tau(tau: f64, omega: f64) -> f64 {
    2.0 * omega * tau
}

/// `(cos²((θ-φ)/2), sin²((θ-φ)/2))`.
pub fn projection_probs(phi: f64, theta: f64) -> (f64, f64) {
    let h = 0.5 * (theta - phi);
    let (s, c) = h.sin_cos();
    (c * c, s * s)
}

/// Distribution of rotation angles: a continuous part plus an optional
/// point mass at φ = 0 for probability that never interacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinDistribution {
    pub source: DistKind,
    pub omega: f64,
    pub policy: TailPolicy,
    /// Continuous part over φ, normalized to one on its own.
    pub angles: TimeDistribution,
    /// Weight of the continuous part, `1 - atom_at_zero`.
    pub continuous_mass: f64,
    pub atom_at_zero: f64,
    /// Number of full turns needed to cover the support.
    pub turns: u32,
    /// Probability that fell outside the time window upstream.
    pub lost_mass: f64,
}

impl SpinDistribution {
    /// Builds a distribution directly from an angle density.
    pub fn from_angles(angles: TimeDistribution, atom_at_zero: f64, omega: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&atom_at_zero) {
            return Err(Error::DegenerateInput(format!(
                "atom weight {atom_at_zero} must lie in [0, 1)"
            )));
        }
        let span = angles.lower().abs().max(angles.upper().abs());
        Ok(Self {
            source: angles.kind,
            omega,
            policy: if atom_at_zero > 0.0 { TailPolicy::Atom } else { TailPolicy::Drop },
            turns: ((span / TAU).ceil() as u32).max(1),
            lost_mass: angles.truncated_mass,
            continuous_mass: 1.0 - atom_at_zero,
            atom_at_zero,
            angles,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.continuous_mass * self.angles.mass() + self.atom_at_zero
    }

    pub fn density_at(&self, phi: f64) -> f64 {
        self.continuous_mass * self.angles.density_at(phi)
    }

    pub fn support(&self) -> &[f64] {
        &self.angles.support
    }

    pub fn density(&self) -> Vec<f64> {
        self.angles.density.iter().map(|v| v * self.continuous_mass).collect()
    }

    pub fn mean_phi(&self) -> f64 {
        self.continuous_mass * self.angles.moment(1)
    }

    /// `∫ Π(φ) e^{iφ} dφ` over the continuous part.
    pub fn fourier_moment(&self) -> C64 {
        self.continuous_mass * exp_moment(&self.angles)
    }

    /// Density over `[0, 2n′π]` (or `[-2n′π, 0]` for a negative frequency):
    /// a uniform grid with `points_per_turn` intervals per turn, or the
    /// native support when that would exceed [`MAX_VIEW_POINTS`].
    pub fn unwrapped_view(&self, points_per_turn: usize) -> (Vec<f64>, Vec<f64>) {
        let n = points_per_turn.max(1).saturating_mul(self.turns as usize);
        if n > MAX_VIEW_POINTS {
            return (self.support().to_vec(), self.density());
        }
        let span = self.turns as f64 * TAU;
        let (lo, hi) = if self.omega < 0.0 { (-span, 0.0) } else { (0.0, span) };
        let phi = crate::numerics::linspace(lo, hi, n + 1);
        let dens = phi.iter().map(|&p| self.density_at(p)).collect();
        (phi, dens)
    }

    /// Angle density folded into `[0, 2π)` on `bins` equal bins, atom
    /// included in the first bin. For plotting.
    pub fn wrapped_view(&self, bins: usize) -> (Vec<f64>, Vec<f64>) {
        let bins = bins.max(1);
        let w = TAU / bins as f64;
        let lo_turn = (self.angles.lower() / TAU).floor() as i64;
        let hi_turn = (self.angles.upper() / TAU).ceil() as i64;
        let mut mass = vec![0.0; bins];
        let turn_edges: Vec<f64> = (lo_turn..=hi_turn).map(|k| k as f64 * TAU).collect();
        let turn_cdf = self.angles.cdf_many(&turn_edges);
        // resolve turns that matter; spread the far tail evenly
        let mut detailed = Vec::new();
        for (k, pair) in turn_cdf.windows(2).enumerate() {
            let in_turn = self.continuous_mass * (pair[1] - pair[0]);
            if in_turn <= 1e-12 {
                mass.iter_mut().for_each(|m| *m += in_turn / bins as f64);
            } else {
                detailed.push(turn_edges[k]);
            }
        }
        let pts: Vec<f64> = detailed
            .iter()
            .flat_map(|&base| (0..=bins).map(move |j| base + j as f64 * w))
            .collect();
        let cdf = self.angles.cdf_many(&pts);
        for chunk in cdf.chunks(bins + 1) {
            for j in 0..bins {
                mass[j] += self.continuous_mass * (chunk[j + 1] - chunk[j]);
            }
        }
        mass[0] += self.atom_at_zero;
        let centers = (0..bins).map(|j| (j as f64 + 0.5) * w).collect();
        (centers, mass.into_iter().map(|m| m / w).collect())
    }
}

/// Largest uniform grid produced by [`SpinDistribution::unwrapped_view`].
pub const MAX_VIEW_POINTS: usize = 1 << 16;

/// Rejects Larmor rates for which `φ = 2ωτ` carries no information.
pub fn check_omega(omega: f64) -> Result<()> {
    if omega == 0.0 {
        return Err(Error::DegenerateMapping(
            "rotator.b or rotator.mu is zero, so omega = mu*b/hbar = 0 and every time maps to phi = 0"
                .into(),
        ));
    }
    if !omega.is_finite() {
        return Err(Error::DegenerateMapping(format!("omega = {omega} is not finite")));
    }
    Ok(())
}

/// Change of variables `φ = 2ωτ` applied to a time distribution.
///
/// With [`TailPolicy::Atom`] the probability that never interacts
/// (`excluded_mass + non_arriving_mass`) becomes a point mass at φ = 0 and
/// the continuous part is scaled to `1 - atom`; with [`TailPolicy::Drop`]
/// the continuous part carries all the weight.
pub fn pushforward_phi(time_dist: &TimeDistribution, omega: f64, policy: TailPolicy) -> Result<SpinDistribution> {
    if !time_dist.normalized || (time_dist.mass() - 1.0).abs() > 1e-9 {
        return Err(Error::Unnormalized { mass: time_dist.mass() });
    }
    check_omega(omega)?;
    let scale = 2.0 * omega;
    let masses = (
        time_dist.excluded_mass,
        time_dist.non_arriving_mass,
        time_dist.truncated_mass,
    );
    let mut raw: Vec<f64> = time_dist.density_raw.iter().map(|v| v / scale.abs()).collect();
    let angles = match &time_dist.edges {
        None => {
            let mut phi: Vec<f64> = time_dist.support.iter().map(|t| t * scale).collect();
            if scale < 0.0 {
                phi.reverse();
                raw.reverse();
            }
            TimeDistribution::pointwise(time_dist.kind, phi, raw, masses)?
        }
        Some(edges) => {
            let mut e: Vec<f64> = edges.iter().map(|t| t * scale).collect();
            if scale < 0.0 {
                e.reverse();
                raw.reverse();
            }
            TimeDistribution::histogram(time_dist.kind, e, raw, masses)?
        }
    };
    let atom = match policy {
        TailPolicy::Drop => 0.0,
        TailPolicy::Atom => (time_dist.excluded_mass + time_dist.non_arriving_mass).clamp(0.0, 1.0),
    };
    if atom >= 1.0 {
        return Err(Error::DegenerateInput("no probability interacts with the field".into()));
    }
    let mut out = SpinDistribution::from_angles(angles, atom, omega)?;
    out.policy = policy;
    Ok(out)
}

/// `P±(θ)` on a θ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableCurve {
    pub theta: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub source: DistKind,
    pub atom_at_zero: f64,
    pub turns: u32,
}

impl ObservableCurve {
    /// Largest `|P₊ + P₋ - 1|` on the grid.
    pub fn max_sum_error(&self) -> f64 {
        self.p_plus
            .iter()
            .zip(&self.p_minus)
            .map(|(a, b)| (a + b - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max P₊ - min P₊` on the grid.
    pub fn visibility(&self) -> f64 {
        let hi = self.p_plus.iter().cloned().fold(f64::MIN, f64::max);
        let lo = self.p_plus.iter().cloned().fold(f64::MAX, f64::min);
        hi - lo
    }
}

/// θ grid of `n` points over `[0, 2π)`.
pub fn theta_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| TAU * j as f64 / n as f64).collect()
}

/// Projection probabilities averaged over the angle distribution.
///
/// Since `cos²((θ-φ)/2) = (1 + cos θ cos φ + sin θ sin φ)/2`, the whole
/// curve follows from the mass and the moments `∫Π cos φ`, `∫Π sin φ`,
/// which are integrated exactly against the piecewise-quadratic (pointwise
/// input) or piecewise-constant (histogram input) density.
pub fn observable_curve(spin: &SpinDistribution, theta: &[f64], dist_tol: f64) -> Result<ObservableCurve> {
    let total = spin.total_mass();
    if (total - 1.0).abs() > dist_tol {
        return Err(Error::Unnormalized { mass: total });
    }
    if spin.lost_mass > dist_tol {
        return Err(Error::Coverage { lost: spin.lost_mass });
    }
    let m = spin.continuous_mass * spin.angles.mass();
    let z = spin.fourier_moment();
    let atom = spin.atom_at_zero;
    let (p_plus, p_minus): (Vec<f64>, Vec<f64>) = theta
        .par_iter()
        .map(|&th| {
            let (s, c) = th.sin_cos();
            let (ap, am) = projection_probs(0.0, th);
            let k = z.re * c + z.im * s;
            (0.5 * (m + k) + atom * ap, 0.5 * (m - k) + atom * am)
        })
        .unzip();
    Ok(ObservableCurve {
        theta: theta.to_vec(),
        p_plus,
        p_minus,
        source: spin.source,
        atom_at_zero: atom,
        turns: spin.turns,
    })
}

/// Direct ensemble average of `cos²((θ-φᵢ)/2)` with weights `wᵢ`
/// (normalized internally).
pub fn ensemble_p_plus(phis: &[f64], weights: &[f64], theta: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    phis.iter()
        .zip(weights)
        .map(|(&p, &w)| w * projection_probs(p, theta).0)
        .sum::<f64>()
        / total
}

/// `∫ f(φ) e^{iφ} dφ` for a normalized distribution.
fn exp_moment(d: &TimeDistribution) -> C64 {
    match &d.edges {
        Some(e) => e
            .windows(2)
            .zip(&d.density)
            .map(|(w, v)| {
                let (a, b) = (w[0], w[1]);
                let mid = 0.5 * (a + b);
                C64::from_polar(2.0 * (0.5 * (b - a)).sin() * v, mid)
            })
            .sum(),
        None => filon_pointwise(&d.support, &d.density),
    }
}

/// Filon-type rule: quadratic interpolation on panel pairs (and on the last
/// three points for an odd final interval) integrated exactly against
/// `e^{iφ}`. With the oscillation removed it reduces to the same Simpson
/// rule used to normalize pointwise densities.
fn filon_pointwise(x: &[f64], f: &[f64]) -> C64 {
    let n = x.len();
    if n < 2 {
        return C64::new(0.0, 0.0);
    }
    if n == 2 {
        let (s0, s1) = (x[0] - x[1], 0.0);
        let c1 = (f[1] - f[0]) / (x[1] - x[0]);
        return C64::from_polar(1.0, x[1]) * quad_moment(f[1], c1, 0.0, s0, s1);
    }
    let mut acc = C64::new(0.0, 0.0);
    let intervals = n - 1;
    for p in 0..intervals / 2 {
        let i = 2 * p;
        acc += panel(x, f, i, x[i], x[i + 2]);
    }
    if intervals % 2 == 1 {
        acc += panel(x, f, n - 3, x[n - 2], x[n - 1]);
    }
    acc
}

/// Quadratic through points `i, i+1, i+2`, integrated against `e^{iφ}` over
/// `[a, b]`.
fn panel(x: &[f64], f: &[f64], i: usize, a: f64, b: f64) -> C64 {
    let m = x[i + 1];
    let s0 = x[i] - m;
    let s2 = x[i + 2] - m;
    let d0 = (f[i] - f[i + 1]) / s0;
    let d2 = (f[i + 2] - f[i + 1]) / s2;
    let c2 = (d2 - d0) / (s2 - s0);
    let c1 = d2 - c2 * s2;
    C64::from_polar(1.0, m) * quad_moment(f[i + 1], c1, c2, a - m, b - m)
}

/// `∫_a^b (c0 + c1 s + c2 s²) e^{is} ds`.
fn quad_moment(c0: f64, c1: f64, c2: f64, a: f64, b: f64) -> C64 {
    if a.abs().max(b.abs()) < 0.5 {
        return c0 * taylor_moment(0, a, b) + c1 * taylor_moment(1, a, b) + c2 * taylor_moment(2, a, b);
    }
    let i = C64::i();
    let anti = |s: f64| {
        let e = C64::from_polar(1.0, s);
        let k0 = -i * e;
        let k1 = (1.0 - i * s) * e;
        let k2 = (-i * s * s + 2.0 * s + 2.0 * i) * e;
        c0 * k0 + c1 * k1 + c2 * k2
    };
    anti(b) - anti(a)
}

/// `∫_a^b s^k e^{is} ds` by the power series of the exponential; used on
/// short panels where the closed-form antiderivatives cancel badly.
fn taylor_moment(k: i32, a: f64, b: f64) -> C64 {
    let r = a.abs().max(b.abs());
    let mut acc = C64::new(0.0, 0.0);
    let mut coef = C64::new(1.0, 0.0);
    for n in 0..40 {
        let p = k + n + 1;
        acc += coef * ((b.powi(p) - a.powi(p)) / p as f64);
        // remaining terms are bounded by the magnitude of the next one
        if coef.norm() * r.powi(p) < 1e-20 {
            break;
        }
        coef *= C64::i() / (n + 1) as f64;
    }
    acc
}

/// Distribution concentrated on a bin of width `width` around `phi`.
pub fn narrow_angle_dist(phi: f64, width: f64) -> Result<TimeDistribution> {
    TimeDistribution::histogram(
        DistKind::Empirical,
        vec![phi - 0.5 * width, phi + 0.5 * width],
        vec![1.0 / width],
        (0.0, 0.0, 0.0),
    )
}

/// Uniform distribution over `[lo, hi]`.
pub fn uniform_angle_dist(lo: f64, hi: f64) -> Result<TimeDistribution> {
    TimeDistribution::histogram(DistKind::Empirical, vec![lo, hi], vec![1.0 / (hi - lo)], (0.0, 0.0, 0.0))
}
