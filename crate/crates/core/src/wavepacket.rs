//! Free wave packets: the analytic Gaussian, the asymmetric non-Gaussian packet
//! built from a sine-modulated Gaussian spectrum, and FFT propagation on a
//! co-moving grid.
//!
//! All evolved fields are written as `exp(i k0 (x - c - u t / 2)) * envelope(x - c - u t, t)`.
//! The carrier is factored out exactly (Galilean boost), so grids only need to
//! resolve the envelope even for large `k0`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::config::{beta_spread, Numerics, PacketKind, PacketSpec, UnitSystem};
use crate::error::{Error, Result};
use crate::numerics::{gradient4, simpson, trapezoid};

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Spatial wave function ψ(x, t) together with its first two x-derivatives.
pub trait WaveField: Sync {
    fn units(&self) -> UnitSystem;

    /// `[ψ, ∂ψ/∂x, ∂²ψ/∂x²]` at `(x, t)`.
    fn derivatives(&self, x: f64, t: f64) -> [C64; 3];

    /// Reference point that moves with the group velocity.
    fn mean_position(&self, t: f64) -> f64;

    /// Length scale of the density at time `t`.
    fn width(&self, t: f64) -> f64;

    fn psi(&self, x: f64, t: f64) -> C64 {
        self.derivatives(x, t)[0]
    }

    fn density(&self, x: f64, t: f64) -> f64 {
        self.psi(x, t).norm_sqr()
    }

    /// `(ρ, J)` with `J = (ħ/m) Im(ψ* ∂ψ/∂x)`.
    fn density_current(&self, x: f64, t: f64) -> (f64, f64) {
        let [p, dp, _] = self.derivatives(x, t);
        let u = self.units();
        (p.norm_sqr(), u.hbar / u.mass * (p.conj() * dp).im)
    }

    /// Bohmian velocity `J/ρ`; `None` at or below the density floor.
    fn velocity(&self, x: f64, t: f64, floor: f64) -> Option<f64> {
        let [p, dp, _] = self.derivatives(x, t);
        if p.norm_sqr() <= floor {
            return None;
        }
        let u = self.units();
        Some(u.hbar / u.mass * (dp / p).im)
    }

    /// `(v, ∂v/∂x)`; `None` at or below the density floor.
    fn velocity_and_gradient(&self, x: f64, t: f64, floor: f64) -> Option<(f64, f64)> {
        let [p, dp, ddp] = self.derivatives(x, t);
        if p.norm_sqr() <= floor {
            return None;
        }
        let u = self.units();
        let l = dp / p;
        let scale = u.hbar / u.mass;
        Some((scale * l.im, scale * (ddp / p - l * l).im))
    }

    /// Phase function S with ψ = R exp(iS/ħ), continuous in x. The default
    /// unwraps the envelope phase from the density maximum toward `x`.
    fn phase(&self, x: f64, t: f64, floor: f64) -> Result<f64> {
        let rho = self.density(x, t);
        if rho <= floor {
            return Err(Error::PhaseUndefined { x, t, rho });
        }
        let hbar = self.units().hbar;
        let reference = self.density_peak(t);
        let carrier = |y: f64| self.carrier_phase(y, t);
        let envelope = |y: f64| self.psi(y, t) * (-I * carrier(y)).exp();
        let mut pos = reference;
        let mut acc = envelope(pos).arg();
        let mut prev = envelope(pos);
        let total = x - pos;
        let mut step = total.signum() * self.width(t) / 64.0;
        if total == 0.0 {
            return Ok(hbar * (acc + carrier(x)));
        }
        while (x - pos) * total.signum() > 0.0 {
            let h = if (x - pos).abs() < step.abs() { x - pos } else { step };
            let next = envelope(pos + h);
            let delta = (next / prev).arg();
            if delta.abs() > 0.5 && h.abs() > 1e-12 * self.width(t) && prev.norm_sqr() > floor {
                step *= 0.5;
                continue;
            }
            acc += delta;
            pos += h;
            prev = next;
            if delta.abs() < 0.05 {
                step *= 1.5;
                step = step.signum() * step.abs().min(self.width(t) / 16.0);
            }
        }
        Ok(hbar * (acc + carrier(x)))
    }

    /// Phase of the plane-wave carrier, `k0 (x - c - u t / 2)`.
    fn carrier_phase(&self, x: f64, t: f64) -> f64;

    /// Location of the density maximum at time `t`.
    fn density_peak(&self, t: f64) -> f64 {
        let c = self.mean_position(t);
        let w = self.width(t);
        let mut best = (c, self.density(c, t));
        for i in 0..=512 {
            let y = c - 4.0 * w + 8.0 * w * i as f64 / 512.0;
            let r = self.density(y, t);
            if r > best.1 {
                best = (y, r);
            }
        }
        best.0
    }
}

// ---------------------------------------------------------------------------
// Gaussian packet
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct GaussianField {
    pub units: UnitSystem,
    pub sigma0: f64,
    pub k0: f64,
    pub u: f64,
    pub center: f64,
    pub beta: f64,
}

impl GaussianField {
    pub fn new(units: UnitSystem, spec: &PacketSpec) -> Self {
        Self {
            units,
            sigma0: spec.sigma0,
            k0: spec.k0,
            u: spec.u,
            center: spec.center,
            beta: beta_spread(&units, spec.sigma0),
        }
    }

    /// Dimensionless spreading parameter ħt/(2mσ₀²).
    fn gamma(&self, t: f64) -> f64 {
        self.units.hbar * t / (2.0 * self.units.mass * self.sigma0 * self.sigma0)
    }

    /// Complex width A_t = σ₀(1 + iħt/2mσ₀²).
    pub fn complex_width(&self, t: f64) -> C64 {
        C64::new(self.sigma0, self.sigma0 * self.gamma(t))
    }

    /// σ_t = σ₀ √(1 + β t²).
    pub fn width_at(&self, t: f64) -> f64 {
        self.sigma0 * (1.0 + self.beta * t * t).sqrt()
    }

    /// Evolved packet ψ(x, t); at t = 0 this is the initial Gaussian.
    pub fn amplitude(&self, x: f64, t: f64) -> C64 {
        self.derivatives(x, t)[0]
    }
}

/// Free evolution of a zero-carrier Gaussian of initial width `sigma`:
/// returns the amplitude and the log-derivative factor `-ξ/(2σA_t)` and
/// `1/(2σA_t)`.
fn envelope_gaussian(xi: f64, a_t: C64, sigma: f64) -> (C64, C64, C64) {
    let inv = 1.0 / (2.0 * sigma * a_t);
    let pref = (2.0 * PI).powf(-0.25) / a_t.sqrt();
    let value = pref * (-(xi * xi) * 0.5 * inv).exp();
    (value, -xi * inv, inv)
}

impl WaveField for GaussianField {
    fn units(&self) -> UnitSystem {
        self.units
    }

    fn derivatives(&self, x: f64, t: f64) -> [C64; 3] {
        let xi = x - self.center - self.u * t;
        let (env, log_d, inv) = envelope_gaussian(xi, self.complex_width(t), self.sigma0);
        let psi = env * (I * self.carrier_phase(x, t)).exp();
        let l = log_d + I * self.k0;
        [psi, l * psi, (l * l - inv) * psi]
    }

    fn mean_position(&self, t: f64) -> f64 {
        self.center + self.u * t
    }

    fn width(&self, t: f64) -> f64 {
        self.width_at(t)
    }

    fn carrier_phase(&self, x: f64, t: f64) -> f64 {
        self.k0 * (x - self.center - 0.5 * self.u * t)
    }

    /// Closed-form current `ρ (u + (x-ut) ħ²t/(4m²σ₀⁴ + ħ²t²))`.
    fn density_current(&self, x: f64, t: f64) -> (f64, f64) {
        let (hbar, m) = (self.units.hbar, self.units.mass);
        let st = self.width_at(t);
        let xi = x - self.center - self.u * t;
        let rho = (-(xi * xi) / (2.0 * st * st)).exp() / (2.0 * PI * st * st).sqrt();
        let s4 = self.sigma0.powi(4);
        let v = self.u + xi * hbar * hbar * t / (4.0 * m * m * s4 + hbar * hbar * t * t);
        (rho, rho * v)
    }

    fn velocity(&self, x: f64, t: f64, floor: f64) -> Option<f64> {
        if self.density(x, t) <= floor {
            return None;
        }
        let xi = x - self.center - self.u * t;
        Some(self.u + xi * self.beta * t / (1.0 + self.beta * t * t))
    }

    fn phase(&self, x: f64, t: f64, floor: f64) -> Result<f64> {
        let rho = self.density(x, t);
        if rho <= floor {
            return Err(Error::PhaseUndefined { x, t, rho });
        }
        let g = self.gamma(t);
        let xi = x - self.center - self.u * t;
        let chirp = xi * xi * g / (4.0 * self.sigma0 * self.sigma0 * (1.0 + g * g));
        Ok(self.units.hbar * (self.carrier_phase(x, t) + chirp - 0.5 * g.atan()))
    }

    fn density_peak(&self, t: f64) -> f64 {
        self.mean_position(t)
    }
}

// ---------------------------------------------------------------------------
// Non-Gaussian packet
// ---------------------------------------------------------------------------

/// Packet with momentum amplitude
/// `N (2πσ_k²)^{-1/4} exp(-(k-k0)²/4σ_k²) (1 + α sin((k-k0)/(β σ_k)))`.
///
/// Writing the sine as two exponentials turns the spectrum into three
/// Gaussians displaced in position by `0, ±a` with `a = 1/(β σ_k)`, so the
/// freely evolved field is an exact superposition of evolved Gaussians.
#[derive(Debug, Clone, Copy)]
pub struct NonGaussianField {
    pub units: UnitSystem,
    pub sigma: f64,
    pub sigma_k: f64,
    pub k0: f64,
    pub u: f64,
    pub alpha: f64,
    pub beta_shape: f64,
    pub center: f64,
    pub norm: f64,
    pub shift: f64,
}

impl NonGaussianField {
    pub fn new(units: UnitSystem, spec: &PacketSpec) -> Self {
        let mut f = Self {
            units,
            sigma: 1.0 / (2.0 * spec.sigma_k),
            sigma_k: spec.sigma_k,
            k0: spec.k0,
            u: spec.u,
            alpha: spec.alpha,
            beta_shape: spec.beta_shape,
            center: spec.center,
            norm: 1.0,
            shift: 1.0 / (spec.beta_shape * spec.sigma_k),
        };
        f.norm = f.numeric_norm();
        f
    }

    fn unnormalized_momentum(&self, k: f64) -> f64 {
        let q = k - self.k0;
        let s = self.sigma_k;
        (2.0 * PI * s * s).powf(-0.25)
            * (-(q * q) / (4.0 * s * s)).exp()
            * (1.0 + self.alpha * (q / (self.beta_shape * s)).sin())
    }

    /// Normalization constant from quadrature of |φ(k)|².
    fn numeric_norm(&self) -> f64 {
        let s = self.sigma_k;
        let range = 16.0 * s;
        let period = 2.0 * PI * self.beta_shape.abs() * s;
        let n = ((64.0 * 2.0 * range / period) as usize).max(8001) | 1;
        let ks: Vec<f64> = (0..n)
            .map(|i| self.k0 - range + 2.0 * range * i as f64 / (n - 1) as f64)
            .collect();
        let vals: Vec<f64> = ks.iter().map(|&k| self.unnormalized_momentum(k).powi(2)).collect();
        1.0 / simpson(&ks, &vals).sqrt()
    }

    /// Momentum-space amplitude φ(k), normalized numerically.
    pub fn momentum_amplitude(&self, k: f64) -> C64 {
        C64::new(self.norm * self.unnormalized_momentum(k), 0.0)
    }

    /// Initial position-space amplitude in the closed form that holds when
    /// `beta_shape = 4/π`.
    pub fn closed_form_initial(&self, x: f64) -> Result<C64> {
        if (self.beta_shape - 4.0 / PI).abs() > 1e-12 {
            return Err(Error::UnsupportedShape(self.beta_shape));
        }
        let y = x - self.center;
        let s = self.sigma;
        let gauss = (2.0 * PI * s * s).powf(-0.25) * (-(y * y) / (4.0 * s * s)).exp();
        let modulation =
            C64::new(1.0, self.alpha * (-PI * PI / 16.0).exp() * (PI * y / (4.0 * s)).sinh());
        Ok(self.norm * gauss * modulation * (I * self.k0 * y).exp())
    }

    /// Co-moving envelope (carrier removed) and its first two derivatives.
    fn envelope(&self, xi: f64, t: f64) -> [C64; 3] {
        let gamma = self.units.hbar * t / (2.0 * self.units.mass * self.sigma * self.sigma);
        let a_t = C64::new(self.sigma, self.sigma * gamma);
        let mut out = [C64::new(0.0, 0.0); 3];
        let side = self.alpha / (2.0 * I);
        for (offset, coeff) in [
            (0.0, C64::new(1.0, 0.0)),
            (self.shift, side),
            (-self.shift, -side),
        ] {
            if coeff == C64::new(0.0, 0.0) {
                continue;
            }
            let (g, l, inv) = envelope_gaussian(xi + offset, a_t, self.sigma);
            out[0] += coeff * g;
            out[1] += coeff * l * g;
            out[2] += coeff * (l * l - inv) * g;
        }
        for v in out.iter_mut() {
            *v *= self.norm;
        }
        out
    }
}

impl WaveField for NonGaussianField {
    fn units(&self) -> UnitSystem {
        self.units
    }

    fn derivatives(&self, x: f64, t: f64) -> [C64; 3] {
        let xi = x - self.center - self.u * t;
        let [b, db, ddb] = self.envelope(xi, t);
        let carrier = (I * self.carrier_phase(x, t)).exp();
        let ik = I * self.k0;
        [
            carrier * b,
            carrier * (ik * b + db),
            carrier * (ik * ik * b + 2.0 * ik * db + ddb),
        ]
    }

    fn mean_position(&self, t: f64) -> f64 {
        self.center + self.u * t
    }

    fn width(&self, t: f64) -> f64 {
        let beta = beta_spread(&self.units, self.sigma);
        self.sigma * (1.0 + beta * t * t).sqrt()
    }

    fn carrier_phase(&self, x: f64, t: f64) -> f64 {
        self.k0 * (x - self.center - 0.5 * self.u * t)
    }
}

// ---------------------------------------------------------------------------
// Dispatch over packet kinds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub enum PacketField {
    Gaussian(GaussianField),
    NonGaussian(NonGaussianField),
}

impl PacketField {
    pub fn new(units: UnitSystem, spec: &PacketSpec) -> Self {
        match spec.kind {
            PacketKind::Gaussian => PacketField::Gaussian(GaussianField::new(units, spec)),
            PacketKind::Nongaussian => PacketField::NonGaussian(NonGaussianField::new(units, spec)),
        }
    }

    pub fn from_config(config: &crate::config::RunConfig) -> Self {
        Self::new(config.units, &config.packet)
    }

    pub fn k0(&self) -> f64 {
        match self {
            PacketField::Gaussian(g) => g.k0,
            PacketField::NonGaussian(n) => n.k0,
        }
    }

    pub fn u(&self) -> f64 {
        match self {
            PacketField::Gaussian(g) => g.u,
            PacketField::NonGaussian(n) => n.u,
        }
    }

    pub fn center(&self) -> f64 {
        match self {
            PacketField::Gaussian(g) => g.center,
            PacketField::NonGaussian(n) => n.center,
        }
    }

    /// Extra half-width beyond the Gaussian core (the ±a side components).
    pub fn extra_extent(&self) -> f64 {
        match self {
            PacketField::Gaussian(_) => 0.0,
            PacketField::NonGaussian(n) => n.shift.abs(),
        }
    }

    /// Initial envelope in co-moving coordinates (carrier removed).
    fn initial_envelope(&self, xi: f64) -> C64 {
        match self {
            PacketField::Gaussian(g) => envelope_gaussian(xi, C64::new(g.sigma0, 0.0), g.sigma0).0,
            PacketField::NonGaussian(n) => n.envelope(xi, 0.0)[0],
        }
    }
}

impl WaveField for PacketField {
    fn units(&self) -> UnitSystem {
        match self {
            PacketField::Gaussian(g) => g.units,
            PacketField::NonGaussian(n) => n.units,
        }
    }
    fn derivatives(&self, x: f64, t: f64) -> [C64; 3] {
        match self {
            PacketField::Gaussian(g) => g.derivatives(x, t),
            PacketField::NonGaussian(n) => n.derivatives(x, t),
        }
    }
    fn mean_position(&self, t: f64) -> f64 {
        match self {
            PacketField::Gaussian(g) => g.mean_position(t),
            PacketField::NonGaussian(n) => n.mean_position(t),
        }
    }
    fn width(&self, t: f64) -> f64 {
        match self {
            PacketField::Gaussian(g) => g.width(t),
            PacketField::NonGaussian(n) => n.width(t),
        }
    }
    fn carrier_phase(&self, x: f64, t: f64) -> f64 {
        match self {
            PacketField::Gaussian(g) => g.carrier_phase(x, t),
            PacketField::NonGaussian(n) => n.carrier_phase(x, t),
        }
    }
    fn density_current(&self, x: f64, t: f64) -> (f64, f64) {
        match self {
            PacketField::Gaussian(g) => g.density_current(x, t),
            PacketField::NonGaussian(n) => n.density_current(x, t),
        }
    }
    fn velocity(&self, x: f64, t: f64, floor: f64) -> Option<f64> {
        match self {
            PacketField::Gaussian(g) => g.velocity(x, t, floor),
            PacketField::NonGaussian(n) => n.velocity(x, t, floor),
        }
    }
    fn phase(&self, x: f64, t: f64, floor: f64) -> Result<f64> {
        match self {
            PacketField::Gaussian(g) => g.phase(x, t, floor),
            PacketField::NonGaussian(n) => n.phase(x, t, floor),
        }
    }
    fn density_peak(&self, t: f64) -> f64 {
        match self {
            PacketField::Gaussian(g) => g.density_peak(t),
            PacketField::NonGaussian(n) => n.density_peak(t),
        }
    }
}

// ---------------------------------------------------------------------------
// Grid states and spectral propagation
// ---------------------------------------------------------------------------

/// Uniform grid in the co-moving coordinate `ξ = x - c - u t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl SpatialGrid {
    pub fn centered(half_width: f64, len: usize) -> Self {
        Self {
            start: -half_width,
            step: 2.0 * half_width / len as f64,
            len,
        }
    }

    /// Grid spanning `±x_extent_sigmas · σ_t` at `t_max` (plus the side
    /// components of a non-Gaussian packet).
    pub fn for_field(field: &PacketField, t_max: f64, numerics: &Numerics) -> Self {
        let half = numerics.x_extent_sigmas * field.width(t_max) + field.extra_extent();
        Self::centered(half, numerics.x_grid_points)
    }

    pub fn coord(&self, j: usize) -> f64 {
        self.start + self.step * j as f64
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.step * self.len as f64
    }

    pub fn shifted(&self, by: f64) -> Self {
        Self {
            start: self.start + by,
            ..*self
        }
    }

    fn wavenumbers(&self) -> Vec<f64> {
        let n = self.len;
        let dk = 2.0 * PI / (n as f64 * self.step);
        (0..n)
            .map(|m| {
                let signed = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
                signed * dk
            })
            .collect()
    }
}

/// Snapshot of a packet on a co-moving grid.
#[derive(Debug, Clone)]
pub struct GridState {
    pub t: f64,
    pub grid: SpatialGrid,
    pub envelope: Vec<C64>,
    pub k0: f64,
    pub u: f64,
    pub center: f64,
    pub units: UnitSystem,
}

impl GridState {
    pub fn x(&self, j: usize) -> f64 {
        self.center + self.u * self.t + self.grid.coord(j)
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.grid.len).map(|j| self.x(j)).collect()
    }

    pub fn amplitude(&self, j: usize) -> C64 {
        let x = self.x(j);
        self.envelope[j] * (I * self.k0 * (x - self.center - 0.5 * self.u * self.t)).exp()
    }

    pub fn amplitudes(&self) -> Vec<C64> {
        (0..self.grid.len).map(|j| self.amplitude(j)).collect()
    }

    pub fn density(&self) -> Vec<f64> {
        self.envelope.iter().map(|e| e.norm_sqr()).collect()
    }

    /// `J = (ħ/m)(k0 ρ + Im(e* ∂e/∂x))` with fourth-order central differences
    /// of the envelope.
    pub fn current(&self) -> Vec<f64> {
        let re: Vec<f64> = self.envelope.iter().map(|e| e.re).collect();
        let im: Vec<f64> = self.envelope.iter().map(|e| e.im).collect();
        let dre = gradient4(&re, self.grid.step);
        let dim = gradient4(&im, self.grid.step);
        let scale = self.units.hbar / self.units.mass;
        self.envelope
            .iter()
            .enumerate()
            .map(|(j, e)| {
                let de = C64::new(dre[j], dim[j]);
                scale * (self.k0 * e.norm_sqr() + (e.conj() * de).im)
            })
            .collect()
    }

    /// Trapezoid norm of |ψ|².
    pub fn norm(&self) -> f64 {
        trapezoid(&self.density(), self.grid.step)
    }

    /// Largest edge density relative to the peak.
    pub fn boundary_ratio(&self) -> f64 {
        let rho = self.density();
        let peak = rho.iter().cloned().fold(0.0, f64::max);
        let n = rho.len();
        let edge = [rho[0], rho[1], rho[n - 2], rho[n - 1]]
            .into_iter()
            .fold(0.0, f64::max);
        if peak > 0.0 {
            edge / peak
        } else {
            f64::INFINITY
        }
    }

    /// Exact free propagation by `dt` (FFT, multiply by e^{-iħq²dt/2m}).
    pub fn propagate(&self, dt: f64) -> GridState {
        let n = self.grid.len;
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut buf = self.envelope.clone();
        fwd.process(&mut buf);
        let factor = self.units.hbar * dt / (2.0 * self.units.mass);
        let scale = 1.0 / n as f64;
        for (b, q) in buf.iter_mut().zip(self.grid.wavenumbers()) {
            *b *= (-I * factor * q * q).exp() * scale;
        }
        inv.process(&mut buf);
        GridState {
            t: self.t + dt,
            envelope: buf,
            ..self.clone()
        }
    }

    /// Phase S = ħ arg ψ, unwrapped outward from the density maximum. Nodes
    /// (density at or below `floor`) are reported as NaN.
    pub fn phase_profile(&self, floor: f64) -> Vec<f64> {
        let rho = self.density();
        let n = rho.len();
        let peak = (0..n)
            .max_by(|&a, &b| rho[a].partial_cmp(&rho[b]).unwrap())
            .unwrap_or(0);
        let mut env_phase = vec![f64::NAN; n];
        env_phase[peak] = self.envelope[peak].arg();
        let mut walk = |range: Box<dyn Iterator<Item = usize>>, step: isize| {
            let mut last_valid = peak;
            for j in range {
                if rho[j] <= floor {
                    continue;
                }
                let prev = self.envelope[last_valid];
                let d = (self.envelope[j] / prev).arg();
                env_phase[j] = env_phase[last_valid] + d;
                last_valid = j;
                let _ = step;
            }
        };
        walk(Box::new(peak + 1..n), 1);
        walk(Box::new((0..peak).rev()), -1);
        let hbar = self.units.hbar;
        (0..n)
            .map(|j| {
                let x = self.x(j);
                hbar * (env_phase[j] + self.k0 * (x - self.center - 0.5 * self.u * self.t))
            })
            .collect()
    }

    /// `(ρ, J)` at an arbitrary lab position by cubic interpolation of the
    /// grid arrays.
    pub fn density_current_at(&self, x: f64) -> Result<(f64, f64)> {
        let lo = self.x(0);
        let hi = self.x(self.grid.len - 1);
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfDomain { x, lo, hi });
        }
        let rho = self.density();
        let cur = self.current();
        let s = (x - lo) / self.grid.step;
        let j = (s.floor() as isize).clamp(1, self.grid.len as isize - 3) as usize;
        let f = s - j as f64;
        let lag = |v: &[f64]| {
            let (a, b, c, d) = (v[j - 1], v[j], v[j + 1], v[j + 2]);
            -f * (f - 1.0) * (f - 2.0) / 6.0 * a + (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0 * b
                - (f + 1.0) * f * (f - 2.0) / 2.0 * c
                + (f + 1.0) * f * (f - 1.0) / 6.0 * d
        };
        Ok((lag(&rho), lag(&cur)))
    }
}

/// Packet evolved to time `t` on `grid` by FFT propagation.
///
/// Gaussian packets are sampled at t = 0 and propagated; non-Gaussian packets
/// are synthesized directly from their momentum amplitude.
pub fn evolve_spectral(field: &PacketField, t: f64, grid: &SpatialGrid) -> Result<GridState> {
    if !(t >= 0.0) {
        return Err(Error::Config(format!("evolution time must be >= 0, got {t}")));
    }
    let units = field.units();
    let base = GridState {
        t: 0.0,
        grid: *grid,
        envelope: Vec::new(),
        k0: field.k0(),
        u: field.u(),
        center: field.center(),
        units,
    };
    let state = match field {
        PacketField::Gaussian(_) => {
            let env = (0..grid.len)
                .map(|j| field.initial_envelope(grid.coord(j)))
                .collect();
            let s0 = GridState { envelope: env, ..base };
            if t == 0.0 {
                s0
            } else {
                s0.propagate(t)
            }
        }
        PacketField::NonGaussian(ng) => {
            let n = grid.len;
            let qs = grid.wavenumbers();
            let dq = 2.0 * PI / (n as f64 * grid.step);
            let factor = units.hbar * t / (2.0 * units.mass);
            let mut buf: Vec<C64> = qs
                .iter()
                .map(|&q| {
                    ng.momentum_amplitude(ng.k0 + q)
                        * (I * (q * grid.start - factor * q * q)).exp()
                        * (dq / (2.0 * PI).sqrt())
                })
                .collect();
            FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut buf);
            GridState {
                t,
                envelope: buf,
                ..base
            }
        }
    };
    let ratio = state.boundary_ratio();
    if ratio > 1e-12 {
        return Err(Error::GridTooSmall {
            ratio,
            suggested_half_width: 12.0 * field.width(t) + field.extra_extent() + grid.half_width() * 0.5,
        });
    }
    Ok(state)
}

/// Residual of ∂ρ/∂t + ∂J/∂x = 0 on the interior of a lab-frame grid at `t`.
/// Time derivatives use a five-point stencil of spectral states with spacing
/// `h`. Returns `(max |residual|, max |∂J/∂x|)`.
pub fn continuity_residual(
    field: &PacketField,
    t: f64,
    grid: &SpatialGrid,
    h: f64,
) -> Result<(f64, f64)> {
    let u = field.u();
    let at = |tt: f64| -> Result<GridState> {
        // keep lab positions fixed while the co-moving frame drifts
        evolve_spectral(field, tt, &grid.shifted(-u * (tt - t)))
    };
    let times = [t - 2.0 * h, t - h, t + h, t + 2.0 * h];
    if times[0] < 0.0 {
        return Err(Error::Config("continuity check needs t >= 2h".into()));
    }
    let states: Vec<GridState> = times.iter().map(|&tt| at(tt)).collect::<Result<_>>()?;
    let centre = at(t)?;
    let rho: Vec<Vec<f64>> = states.iter().map(|s| s.density()).collect();
    let cur = centre.current();
    let djdx = gradient4(&cur, grid.step);
    let n = grid.len;
    let mut max_res: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    for j in 4..n - 4 {
        let drho = (rho[0][j] - 8.0 * rho[1][j] + 8.0 * rho[2][j] - rho[3][j]) / (12.0 * h);
        max_res = max_res.max((drho + djdx[j]).abs());
        max_grad = max_grad.max(djdx[j].abs());
    }
    Ok((max_res, max_grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::UnitSystem;

    fn gauss(sigma0: f64, u: f64) -> GaussianField {
        let units = UnitSystem::natural();
        GaussianField::new(units, &PacketSpec::gaussian(&units, sigma0, u).unwrap())
    }

    fn nongauss(alpha: f64, beta: f64, k0: f64) -> NonGaussianField {
        let units = UnitSystem::natural();
        NonGaussianField::new(units, &PacketSpec::nongaussian(&units, 0.5, k0, alpha, beta).unwrap())
    }

    #[test]
    fn gaussian_peak_and_shape() {
        let g = gauss(1.0, 0.0);
        let p = g.amplitude(0.0, 0.0);
        assert!((p.re - (2.0 * PI).powf(-0.25)).abs() < 1e-15);
        assert!((p.re - 0.63162).abs() < 1e-5);
        let ratio = g.density(1.0, 0.0) / g.density(0.0, 0.0);
        assert!((ratio - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_moments_at_t2() {
        // numeric mean/variance of |ψ(x,2)|² from the complex amplitude
        let g = gauss(1.0, 1.0);
        let xs: Vec<f64> = (0..=20000).map(|i| -30.0 + 60.0 * i as f64 / 20000.0).collect();
        let rho: Vec<f64> = xs.iter().map(|&x| g.amplitude(x, 2.0).norm_sqr()).collect();
        let m0 = simpson(&xs, &rho);
        let m1 = simpson(&xs, &xs.iter().zip(&rho).map(|(x, r)| x * r).collect::<Vec<_>>());
        let m2 = simpson(&xs, &xs.iter().zip(&rho).map(|(x, r)| x * x * r).collect::<Vec<_>>());
        assert!((m0 - 1.0).abs() < 1e-12);
        assert!((m1 - 2.0).abs() < 1e-12);
        assert!((m2 - m1 * m1 - 2.0).abs() < 1e-11);
        assert!((g.width_at(2.0) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn width_grows_linearly_at_late_times() {
        let g = gauss(1.0, 1.0);
        assert_eq!(g.width_at(0.0), 1.0);
        let t = 400.0; // βt² = 4e4
        assert!((g.width_at(2.0 * t) / g.width_at(t) - 2.0).abs() < 0.01);
    }

    #[test]
    fn current_at_packet_center() {
        let g = gauss(1.0, 1.0);
        for t in [0.0, 1.0, 3.0] {
            let (_, j) = g.density_current(g.u * t, t);
            let st = g.width_at(t);
            assert!((j - 1.0 / (2.0 * PI * st * st).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_form_current_matches_finite_difference_current() {
        let g = gauss(1.0, 1.0);
        let (x, t) = (5.0, 3.1390);
        let (_, j_closed) = g.density_current(x, t);
        let h = 1e-4;
        let dpsi = C64::new(
            crate::numerics::derivative4(|y| g.amplitude(y, t).re, x, h),
            crate::numerics::derivative4(|y| g.amplitude(y, t).im, x, h),
        );
        let j_fd = (g.amplitude(x, t).conj() * dpsi).im;
        assert!((j_closed - j_fd).abs() < 1e-10);
        assert!(((j_closed - 0.18486) / 0.18486).abs() < 1e-4, "J = {j_closed}");
    }

    #[test]
    fn plane_wave_limit_current_is_uniform() {
        // very wide packet: J/ρ → ħk/m everywhere near the centre
        let g = gauss(1e4, 2.0);
        for x in [-10.0, 0.0, 25.0] {
            let (rho, j) = g.density_current(x, 0.0);
            assert!((j / rho - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_at_t0_is_kx() {
        let g = gauss(1.0, 1.5);
        for x in [-2.0, 0.0, 0.7, 3.0] {
            assert!((g.phase(x, 0.0, 1e-30).unwrap() - 1.5 * x).abs() < 1e-14);
        }
        let g0 = gauss(1.0, 0.0);
        assert_eq!(g0.phase(1.3, 0.0, 1e-30).unwrap(), 0.0);
    }

    #[test]
    fn phase_gradient_matches_velocity() {
        let g = gauss(1.0, 1.0);
        let t = 2.0;
        let st = g.width_at(t);
        let mut worst: f64 = 0.0;
        for i in 0..=60 {
            let x = g.u * t - 3.0 * st + 6.0 * st * i as f64 / 60.0;
            let ds = crate::numerics::derivative4(|y| g.phase(y, t, 1e-30).unwrap(), x, 1e-3);
            let (rho, j) = g.density_current(x, t);
            worst = worst.max((ds - j / rho).abs() / (j / rho).abs());
        }
        assert!(worst < 1e-6, "worst {worst}");
    }

    #[test]
    fn generic_phase_unwrapping_matches_closed_form() {
        // route the Gaussian through the default marching implementation
        struct Plain(GaussianField);
        impl WaveField for Plain {
            fn units(&self) -> UnitSystem {
                self.0.units
            }
            fn derivatives(&self, x: f64, t: f64) -> [C64; 3] {
                self.0.derivatives(x, t)
            }
            fn mean_position(&self, t: f64) -> f64 {
                self.0.mean_position(t)
            }
            fn width(&self, t: f64) -> f64 {
                self.0.width(t)
            }
            fn carrier_phase(&self, x: f64, t: f64) -> f64 {
                self.0.carrier_phase(x, t)
            }
        }
        let g = gauss(1.0, 4.0);
        let p = Plain(g);
        let t = 3.0;
        let offset = g.phase(g.mean_position(t), t, 1e-30).unwrap()
            - p.phase(g.mean_position(t), t, 1e-30).unwrap();
        for dx in [-6.0, -1.0, 2.5, 7.0] {
            let x = g.mean_position(t) + dx;
            let a = g.phase(x, t, 1e-30).unwrap();
            let b = p.phase(x, t, 1e-30).unwrap() + offset;
            assert!((a - b).abs() < 1e-9, "dx {dx}: {a} vs {b}");
        }
    }

    #[test]
    fn phase_undefined_in_far_tail() {
        let g = gauss(1.0, 1.0);
        assert!(matches!(g.phase(200.0, 0.0, 1e-30), Err(Error::PhaseUndefined { .. })));
    }

    #[test]
    fn nongaussian_reduces_to_gaussian() {
        let ng = nongauss(0.0, 4.0 / PI, 2.0);
        assert!((ng.norm - 1.0).abs() < 1e-12);
        let g = gauss(1.0, 2.0);
        for x in [-3.0, 0.0, 1.0, 4.0] {
            for t in [0.0, 1.5] {
                assert!((ng.psi(x, t) - g.psi(x, t)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn nongaussian_numeric_norm_matches_analytic() {
        // analytic: N^-2 = 1 + α²/2 (1 - exp(-2/β²))
        for (alpha, beta) in [(1.0, 4.0 / PI), (0.5, 1.0), (0.3, 2.5)] {
            let ng = nongauss(alpha, beta, 3.0);
            let analytic = (1.0 + 0.5 * alpha * alpha * (1.0 - (-2.0 / (beta * beta)).exp())).powf(-0.5);
            assert!((ng.norm - analytic).abs() < 1e-12, "{alpha} {beta}");
        }
    }

    #[test]
    fn nongaussian_momentum_first_moment_shifts_with_alpha() {
        for alpha in [-0.7, 0.4, 1.0] {
            let ng = nongauss(alpha, 4.0 / PI, 5.0);
            let ks: Vec<f64> = (0..=8000).map(|i| -5.0 + 20.0 * i as f64 / 8000.0).collect();
            let p: Vec<f64> = ks.iter().map(|&k| ng.momentum_amplitude(k).norm_sqr()).collect();
            let m0 = simpson(&ks, &p);
            let m1 = simpson(&ks, &ks.iter().zip(&p).map(|(k, v)| k * v).collect::<Vec<_>>());
            assert!((m0 - 1.0).abs() < 1e-10);
            assert_eq!((m1 - 5.0).signum(), alpha.signum());
            assert!(ng.momentum_amplitude(5.3).im == 0.0);
        }
    }

    #[test]
    fn closed_form_matches_superposition_at_t0() {
        let ng = nongauss(0.8, 4.0 / PI, 1.0);
        for x in [-3.0, -0.5, 0.0, 2.0, 4.5] {
            let a = ng.closed_form_initial(x).unwrap();
            let b = ng.psi(x, 0.0);
            assert!((a - b).norm() < 1e-14, "x {x}: {a} vs {b}");
        }
        let other = nongauss(0.8, 2.0, 1.0);
        assert!(matches!(other.closed_form_initial(0.0), Err(Error::UnsupportedShape(_))));
    }

    #[test]
    fn closed_form_conjugate_parity_at_zero_carrier() {
        let ng = nongauss(0.6, 4.0 / PI, 0.0);
        for x in [0.3, 1.0, 2.7] {
            let plus = ng.closed_form_initial(x).unwrap();
            let minus = ng.closed_form_initial(-x).unwrap();
            assert!((minus - plus.conj()).norm() < 1e-15);
        }
    }

    #[test]
    fn spectral_identity_at_t0() {
        let f = PacketField::Gaussian(gauss(1.0, 3.0));
        let grid = SpatialGrid::centered(12.0, 1024);
        let s = evolve_spectral(&f, 0.0, &grid).unwrap();
        for j in (0..1024).step_by(37) {
            assert_eq!(s.amplitude(j), {
                let x = s.x(j);
                f.initial_envelope(grid.coord(j)) * (I * 3.0 * x).exp()
            });
        }
    }

    #[test]
    fn spectral_matches_analytic_gaussian() {
        let g = gauss(1.0, 1.0);
        let f = PacketField::Gaussian(g);
        let grid = SpatialGrid::for_field(&f, 2.0, &Numerics::default());
        let s = evolve_spectral(&f, 2.0, &grid).unwrap();
        let worst = (0..grid.len)
            .map(|j| (s.amplitude(j) - g.amplitude(s.x(j), 2.0)).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "worst {worst}");
        assert!((s.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn repeated_propagation_preserves_norm() {
        let f = PacketField::Gaussian(gauss(1.0, 1.0));
        let grid = SpatialGrid::for_field(&f, 10.0, &Numerics::default());
        let mut s = evolve_spectral(&f, 0.0, &grid).unwrap();
        let n0 = s.norm();
        for _ in 0..100 {
            s = s.propagate(0.1);
        }
        assert!((s.norm() - n0).abs() < 1e-10);
        assert!((s.t - 10.0).abs() < 1e-12);
    }

    #[test]
    fn grid_too_small_is_reported() {
        let f = PacketField::Gaussian(gauss(1.0, 1.0));
        let grid = SpatialGrid::centered(3.0, 256);
        let err = evolve_spectral(&f, 0.0, &grid).unwrap_err();
        assert!(matches!(err, Error::GridTooSmall { .. }));
    }

    #[test]
    fn grid_current_matches_closed_form_and_domain_is_enforced() {
        let g = gauss(1.0, 1.0);
        let f = PacketField::Gaussian(g);
        let grid = SpatialGrid::for_field(&f, 3.0, &Numerics::default());
        let s = evolve_spectral(&f, 3.0, &grid).unwrap();
        let (rho, j) = s.density_current_at(5.0).unwrap();
        let (rho_c, j_c) = g.density_current(5.0, 3.0);
        assert!((rho - rho_c).abs() < 1e-9);
        assert!((j - j_c).abs() < 1e-9);
        assert!(matches!(s.density_current_at(1e3), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn grid_phase_profile_consistent_with_velocity() {
        let g = gauss(1.0, 2.0);
        let f = PacketField::Gaussian(g);
        let grid = SpatialGrid::for_field(&f, 1.0, &Numerics::default());
        let s = evolve_spectral(&f, 1.0, &grid).unwrap();
        let phase = s.phase_profile(1e-30);
        let d = gradient4(&phase, grid.step);
        let st = g.width_at(1.0);
        for j in (0..grid.len).step_by(97) {
            let x = s.x(j);
            if (x - g.mean_position(1.0)).abs() < 3.0 * st {
                let v = g.velocity(x, 1.0, 1e-30).unwrap();
                assert!((d[j] - v).abs() / v.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nongaussian_spectral_matches_superposition() {
        let ng = nongauss(0.5, 4.0 / PI, 2.5);
        let f = PacketField::NonGaussian(ng);
        let grid = SpatialGrid::for_field(&f, 2.0, &Numerics::default());
        for t in [0.0, 2.0] {
            let s = evolve_spectral(&f, t, &grid).unwrap();
            let worst = (0..grid.len)
                .map(|j| (s.amplitude(j) - ng.psi(s.x(j), t)).norm())
                .fold(0.0, f64::max);
            assert!(worst < 1e-10, "t {t}: {worst}");
            assert!((s.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn velocity_gradient_matches_finite_difference() {
        let ng = nongauss(0.9, 1.1, 2.0);
        for (x, t) in [(0.3, 0.5), (-1.0, 2.0), (4.0, 1.0)] {
            let (_, dv) = ng.velocity_and_gradient(x, t, 1e-30).unwrap();
            let fd = crate::numerics::derivative4(|y| ng.velocity(y, t, 1e-30).unwrap(), x, 1e-4);
            assert!((dv - fd).abs() < 1e-7 * (1.0 + dv.abs()), "{dv} vs {fd}");
        }
    }
}
