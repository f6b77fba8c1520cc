//! Units, packet and rotator descriptions, numerical settings, and the derived
//! quantities every other module consumes.
//!
//! Computation always happens in natural units (ħ = m = 1 after conversion).
//! A physical-mode configuration is rescaled on ingestion with the packet width
//! as the length unit; [`Scales`] converts results back.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitMode {
    Natural,
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub hbar: f64,
    pub mass: f64,
    pub mode: UnitMode,
}

impl UnitSystem {
    pub fn natural() -> Self {
        Self {
            hbar: 1.0,
            mass: 1.0,
            mode: UnitMode::Natural,
        }
    }

    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        let u = Self {
            hbar,
            mass,
            mode: UnitMode::Natural,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(Error::Config(format!("units.hbar must be > 0, got {}", self.hbar)));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::Config(format!("units.mass must be > 0, got {}", self.mass)));
        }
        Ok(())
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::natural()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketKind {
    Gaussian,
    Nongaussian,
}

/// Initial wave packet. `u = hbar * k0 / mass` is kept consistent by the
/// constructors; for the non-Gaussian packet `sigma0 = 1 / (2 sigma_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketSpec {
    pub kind: PacketKind,
    pub sigma0: f64,
    pub k0: f64,
    pub u: f64,
    pub sigma_k: f64,
    pub alpha: f64,
    pub beta_shape: f64,
    /// Peak position at t = 0.
    pub center: f64,
}

impl PacketSpec {
    pub fn gaussian(units: &UnitSystem, sigma0: f64, k0: f64) -> Result<Self> {
        let spec = Self {
            kind: PacketKind::Gaussian,
            sigma0,
            k0,
            u: units.hbar * k0 / units.mass,
            sigma_k: 1.0 / (2.0 * sigma0),
            alpha: 0.0,
            beta_shape: 4.0 / std::f64::consts::PI,
            center: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn nongaussian(
        units: &UnitSystem,
        sigma_k: f64,
        k0: f64,
        alpha: f64,
        beta_shape: f64,
    ) -> Result<Self> {
        let spec = Self {
            kind: PacketKind::Nongaussian,
            sigma0: 1.0 / (2.0 * sigma_k),
            k0,
            u: units.hbar * k0 / units.mass,
            sigma_k,
            alpha,
            beta_shape,
            center: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_center(mut self, center: f64) -> Self {
        self.center = center;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Config(format!("packet.sigma0 must be > 0, got {}", self.sigma0)));
        }
        if !(self.sigma_k > 0.0 && self.sigma_k.is_finite()) {
            return Err(Error::Config(format!("packet.sigma_k must be > 0, got {}", self.sigma_k)));
        }
        if !self.k0.is_finite() || !self.center.is_finite() || !self.alpha.is_finite() {
            return Err(Error::Config("packet parameters must be finite".into()));
        }
        if self.kind == PacketKind::Nongaussian {
            if !(self.beta_shape.is_finite() && self.beta_shape != 0.0) {
                return Err(Error::Config("packet.beta_shape must be finite and nonzero".into()));
            }
            let expect = 1.0 / (2.0 * self.sigma_k);
            if (self.sigma0 - expect).abs() > 1e-12 * expect {
                return Err(Error::Config(format!(
                    "packet.sigma0 = {} is inconsistent with sigma_k (expected {expect})",
                    self.sigma0
                )));
            }
        }
        Ok(())
    }
}

/// Field region `[0, d]` with uniform field `b` along z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatorSpec {
    pub d: f64,
    pub b: f64,
    pub mu: f64,
}

impl RotatorSpec {
    pub fn new(d: f64, b: f64, mu: f64) -> Result<Self> {
        let r = Self { d, b, mu };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::Config(format!("rotator.d must be > 0, got {}", self.d)));
        }
        if !self.b.is_finite() || !self.mu.is_finite() {
            return Err(Error::Config("rotator.b and rotator.mu must be finite".into()));
        }
        Ok(())
    }

    /// Interaction energy μB.
    pub fn mu_b(&self) -> f64 {
        self.mu * self.b
    }

    /// Larmor rate ω = μB/ħ.
    pub fn omega(&self, units: &UnitSystem) -> f64 {
        self.mu_b() / units.hbar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Quantile,
    Uniform,
    Random,
}

/// What happens to probability that never interacts with the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailPolicy {
    /// Renormalize over interacting particles only.
    Drop,
    /// Keep the non-interacting weight as a point mass at zero rotation.
    Atom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub x_grid_points: usize,
    pub x_extent_sigmas: f64,
    pub time_grid_points: usize,
    pub norm_tol: f64,
    pub ft_tol: f64,
    pub ce_tol: f64,
    pub fd_tol: f64,
    pub phase_floor: f64,
    /// Trajectory tolerance in units of sigma0.
    pub traj_tol: f64,
    /// Integration step; when absent, chosen so that u·dt < sigma0/1000.
    pub dt: Option<f64>,
    pub ensemble_size: usize,
    pub ensemble_tol: f64,
    pub placement: Placement,
    pub dist_tol: f64,
    pub hist_tol: f64,
    pub hist_bins: usize,
    pub quad_tol: f64,
    pub energy_ratio_threshold: f64,
    pub n_sigma: f64,
    pub spin_term_threshold: f64,
    pub larmor_limit_ratio: f64,
    pub tail_policy: TailPolicy,
    /// Trajectories used for non-Gaussian arrival and transit distributions.
    pub nongaussian_trajectories: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            x_grid_points: 1 << 14,
            x_extent_sigmas: 12.0,
            time_grid_points: 1 << 14,
            norm_tol: 1e-9,
            ft_tol: 1e-8,
            ce_tol: 1e-6,
            fd_tol: 1e-6,
            phase_floor: 1e-30,
            traj_tol: 1e-6,
            dt: None,
            ensemble_size: 100_000,
            ensemble_tol: 1e-12,
            placement: Placement::Quantile,
            dist_tol: 1e-6,
            hist_tol: 1e-2,
            hist_bins: 400,
            quad_tol: 1e-8,
            energy_ratio_threshold: 1e-6,
            n_sigma: 5.0,
            spin_term_threshold: 1e-2,
            larmor_limit_ratio: 1e6,
            tail_policy: TailPolicy::Drop,
            nongaussian_trajectories: 2000,
        }
    }
}

impl Numerics {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("x_grid_points", self.x_grid_points),
            ("time_grid_points", self.time_grid_points),
            ("ensemble_size", self.ensemble_size),
            ("hist_bins", self.hist_bins),
            ("nongaussian_trajectories", self.nongaussian_trajectories),
        ];
        for (name, v) in sizes {
            if v < 16 {
                return Err(Error::Config(format!("numerics.{name} must be >= 16, got {v}")));
            }
        }
        let positive = [
            ("x_extent_sigmas", self.x_extent_sigmas),
            ("norm_tol", self.norm_tol),
            ("ft_tol", self.ft_tol),
            ("ce_tol", self.ce_tol),
            ("fd_tol", self.fd_tol),
            ("phase_floor", self.phase_floor),
            ("traj_tol", self.traj_tol),
            ("ensemble_tol", self.ensemble_tol),
            ("dist_tol", self.dist_tol),
            ("hist_tol", self.hist_tol),
            ("quad_tol", self.quad_tol),
            ("energy_ratio_threshold", self.energy_ratio_threshold),
            ("n_sigma", self.n_sigma),
            ("spin_term_threshold", self.spin_term_threshold),
            ("larmor_limit_ratio", self.larmor_limit_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("numerics.{name} must be > 0, got {v}")));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("numerics.dt must be > 0, got {dt}")));
            }
        }
        Ok(())
    }
}

/// Output-only knobs for the command-line stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub packet_times: Vec<f64>,
    pub dump_paths: usize,
    pub theta_points: usize,
    pub phi_points_per_turn: usize,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            packet_times: vec![0.0],
            dump_paths: 11,
            theta_points: 720,
            phi_points_per_turn: 64,
        }
    }
}

/// Plane-wave scan settings. Energies are given as ratios E/|μB|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatterSettings {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub ratio_points: usize,
    pub scan_points: usize,
}

impl Default for ScatterSettings {
    fn default() -> Self {
        Self {
            ratio_min: 1e3,
            ratio_max: 1e9,
            ratio_points: 25,
            scan_points: 1000,
        }
    }
}

/// Conversion factors from natural units back to the configured units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub length: f64,
    pub time: f64,
    pub energy: f64,
    pub action: f64,
}

impl Scales {
    pub fn identity() -> Self {
        Self {
            length: 1.0,
            time: 1.0,
            energy: 1.0,
            action: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub units: UnitSystem,
    pub packet: PacketSpec,
    pub rotator: RotatorSpec,
    pub numerics: Numerics,
    pub output: OutputSettings,
    pub scatter: ScatterSettings,
    pub seed: u64,
    /// Factors mapping internal natural-unit values to the input units.
    pub scales: Scales,
}

impl RunConfig {
    /// Natural-unit configuration with the given packet and rotator and
    /// default numerics.
    pub fn new(packet: PacketSpec, rotator: RotatorSpec) -> Result<Self> {
        let cfg = Self {
            units: UnitSystem::natural(),
            packet,
            rotator,
            numerics: Numerics::default(),
            output: OutputSettings::default(),
            scatter: ScatterSettings::default(),
            seed: 0,
            scales: Scales::identity(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Gaussian packet (σ₀, u) peaked at the origin, natural units, no field.
    pub fn gaussian(sigma0: f64, u: f64, d: f64) -> Result<Self> {
        let units = UnitSystem::natural();
        Self::new(
            PacketSpec::gaussian(&units, sigma0, u)?,
            RotatorSpec::new(d, 0.0, 0.0)?,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.units.validate()?;
        self.packet.validate()?;
        self.rotator.validate()?;
        self.numerics.validate()?;
        let expect_u = self.units.hbar * self.packet.k0 / self.units.mass;
        if (self.packet.u - expect_u).abs() > 1e-12 * (1.0 + expect_u.abs()) {
            return Err(Error::Config(format!(
                "packet.u = {} inconsistent with hbar*k0/mass = {expect_u}",
                self.packet.u
            )));
        }
        if self.output.theta_points < 16 {
            return Err(Error::Config("output.theta_points must be >= 16".into()));
        }
        if self.output.phi_points_per_turn < 64 {
            return Err(Error::Config("output.phi_points_per_turn must be >= 64".into()));
        }
        if self.output.packet_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("output.packet_times must be finite and >= 0".into()));
        }
        let s = &self.scatter;
        if !(s.ratio_min > 1.0 && s.ratio_max >= s.ratio_min && s.ratio_max.is_finite()) {
            return Err(Error::Config(
                "scatter.ratio_min must exceed 1 and not exceed scatter.ratio_max".into(),
            ));
        }
        if s.ratio_points < 2 || s.scan_points < 16 {
            return Err(Error::Config(
                "scatter.ratio_points must be >= 2 and scatter.scan_points >= 16".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        file.into_run_config()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// SHA-256 of the canonical serialization; independent of key order in
    /// the source document.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Integration step used by numeric trajectory integration.
    pub fn trajectory_dt(&self) -> f64 {
        if let Some(dt) = self.numerics.dt {
            return dt;
        }
        let sigma0 = self.packet.sigma0;
        let speed = self
            .packet
            .u
            .abs()
            .max(self.units.hbar / (self.units.mass * sigma0));
        sigma0 / (1.0e3 * speed) * 0.999
    }
}

// ---------------------------------------------------------------------------
// On-disk document
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    units: UnitsSection,
    packet: PacketSection,
    rotator: RotatorSection,
    #[serde(default)]
    numerics: Numerics,
    #[serde(default)]
    output: OutputSettings,
    #[serde(default)]
    scatter: ScatterSettings,
    #[serde(default)]
    run: RunSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitsSection {
    #[serde(default = "natural_mode")]
    mode: UnitMode,
    hbar: Option<f64>,
    mass: Option<f64>,
}

fn natural_mode() -> UnitMode {
    UnitMode::Natural
}

impl Default for UnitsSection {
    fn default() -> Self {
        Self {
            mode: UnitMode::Natural,
            hbar: None,
            mass: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PacketSection {
    kind: Option<PacketKind>,
    sigma0: Option<f64>,
    k0: Option<f64>,
    u: Option<f64>,
    sigma_k: Option<f64>,
    alpha: Option<f64>,
    beta_shape: Option<f64>,
    center: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RotatorSection {
    d: f64,
    #[serde(default)]
    b: f64,
    #[serde(default)]
    mu: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(default)]
    seed: u64,
}

impl ConfigFile {
    fn into_run_config(self) -> Result<RunConfig> {
        let (hbar, mass) = match self.units.mode {
            UnitMode::Natural => {
                for (name, v) in [("hbar", self.units.hbar), ("mass", self.units.mass)] {
                    if let Some(v) = v {
                        if v != 1.0 {
                            return Err(Error::Config(format!(
                                "units.{name} = {v}: natural mode fixes hbar = mass = 1"
                            )));
                        }
                    }
                }
                (1.0, 1.0)
            }
            UnitMode::Physical => {
                let hbar = self.units.hbar.ok_or_else(|| {
                    Error::Config("units.hbar is required in physical mode".into())
                })?;
                let mass = self.units.mass.ok_or_else(|| {
                    Error::Config("units.mass is required in physical mode".into())
                })?;
                (hbar, mass)
            }
        };
        let input_units = UnitSystem {
            hbar,
            mass,
            mode: self.units.mode,
        };
        input_units.validate()?;

        let p = self.packet;
        let kind = p.kind.unwrap_or(PacketKind::Gaussian);
        let k0 = match (p.k0, p.u) {
            (Some(k0), None) => k0,
            (None, Some(u)) => u * mass / hbar,
            (None, None) => 0.0,
            (Some(k0), Some(u)) => {
                let implied = hbar * k0 / mass;
                if (implied - u).abs() > 1e-12 * (1.0 + u.abs()) {
                    return Err(Error::Config(format!(
                        "packet.u = {u} inconsistent with packet.k0 (implies {implied})"
                    )));
                }
                k0
            }
        };
        let (sigma0, sigma_k) = match kind {
            PacketKind::Gaussian => {
                if p.alpha.is_some() || p.beta_shape.is_some() || p.sigma_k.is_some() {
                    return Err(Error::Config(
                        "packet.sigma_k, packet.alpha and packet.beta_shape apply to nongaussian packets only"
                            .into(),
                    ));
                }
                let s0 = p
                    .sigma0
                    .ok_or_else(|| Error::Config("packet.sigma0 is required".into()))?;
                (s0, 1.0 / (2.0 * s0))
            }
            PacketKind::Nongaussian => {
                let sk = p
                    .sigma_k
                    .ok_or_else(|| Error::Config("packet.sigma_k is required".into()))?;
                let s0 = 1.0 / (2.0 * sk);
                if let Some(given) = p.sigma0 {
                    if (given - s0).abs() > 1e-12 * s0 {
                        return Err(Error::Config(format!(
                            "packet.sigma0 = {given} inconsistent with sigma_k (requires {s0})"
                        )));
                    }
                }
                (s0, sk)
            }
        };
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::Config(format!("packet.sigma0 must be > 0, got {sigma0}")));
        }

        // natural units: length unit = sigma0, time unit = m L^2 / hbar
        let scales = match self.units.mode {
            UnitMode::Natural => Scales::identity(),
            UnitMode::Physical => {
                let length = sigma0;
                Scales {
                    length,
                    time: mass * length * length / hbar,
                    energy: hbar * hbar / (mass * length * length),
                    action: hbar,
                }
            }
        };
        let units = UnitSystem {
            hbar: 1.0,
            mass: 1.0,
            mode: self.units.mode,
        };
        let packet = PacketSpec {
            kind,
            sigma0: sigma0 / scales.length,
            k0: k0 * scales.length,
            u: k0 * scales.length,
            sigma_k: sigma_k * scales.length,
            alpha: p.alpha.unwrap_or(0.0),
            beta_shape: p.beta_shape.unwrap_or(4.0 / std::f64::consts::PI),
            center: p.center.unwrap_or(0.0) / scales.length,
        };
        let rotator = RotatorSpec {
            d: self.rotator.d / scales.length,
            b: self.rotator.b,
            mu: self.rotator.mu / scales.energy,
        };
        let mut numerics = self.numerics;
        if let Some(dt) = numerics.dt {
            numerics.dt = Some(dt / scales.time);
        }
        let mut output = self.output;
        for t in output.packet_times.iter_mut() {
            *t /= scales.time;
        }
        let cfg = RunConfig {
            units,
            packet,
            rotator,
            numerics,
            output,
            scatter: self.scatter,
            seed: self.run.seed,
            scales,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Derived parameters and regime diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    /// Spreading rate ħ²/(4m²σ₀⁴).
    pub beta_spread: f64,
    /// Larmor rate μB/ħ.
    pub omega: f64,
    /// |μB| over the kinetic energy ½mu².
    pub energy_ratio: f64,
}

/// ħ²/(4m²σ₀⁴).
pub fn beta_spread(units: &UnitSystem, sigma0: f64) -> f64 {
    let s2 = sigma0 * sigma0;
    units.hbar * units.hbar / (4.0 * units.mass * units.mass * s2 * s2)
}

pub fn derived_parameters(config: &RunConfig) -> Result<DerivedParams> {
    config.units.validate()?;
    config.packet.validate()?;
    let mu_b = config.rotator.mu_b();
    let kinetic = 0.5 * config.units.mass * config.packet.u * config.packet.u;
    let energy_ratio = if mu_b == 0.0 {
        0.0
    } else if kinetic == 0.0 {
        f64::INFINITY
    } else {
        mu_b.abs() / kinetic
    };
    Ok(DerivedParams {
        beta_spread: beta_spread(&config.units, config.packet.sigma0),
        omega: config.rotator.omega(&config.units),
        energy_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub larmor_ok: bool,
    pub no_turning_ok: bool,
    pub spin_term_ok: bool,
    pub energy_ratio: f64,
    /// Smallest u for which no trajectory within ±n_σ σ₀ turns.
    pub turning_bound: f64,
    pub spin_term_max: f64,
}

/// Report-only check of the approximations the pipelines rely on.
pub fn check_regime(config: &RunConfig) -> Result<RegimeReport> {
    let derived = derived_parameters(config)?;
    let n = &config.numerics;
    let turning_bound = n.n_sigma * config.packet.sigma0 * derived.beta_spread.sqrt();
    let spin_term_max = crate::bohm::spin_term_max(config)?;
    Ok(RegimeReport {
        larmor_ok: derived.energy_ratio < n.energy_ratio_threshold,
        no_turning_ok: config.packet.u >= turning_bound,
        spin_term_ok: spin_term_max < n.spin_term_threshold,
        energy_ratio: derived.energy_ratio,
        turning_bound,
        spin_term_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(sigma0: f64, u: f64) -> RunConfig {
        RunConfig::gaussian(sigma0, u, 5.0).unwrap()
    }

    #[test]
    fn beta_spread_values() {
        assert_eq!(derived_parameters(&cfg(1.0, 1.0)).unwrap().beta_spread, 0.25);
        let b2 = derived_parameters(&cfg(2.0, 1.0)).unwrap().beta_spread;
        // independent one-line evaluation of ħ²/4m²σ₀⁴
        let oracle = 1.0f64 / (4.0 * 1.0 * 16.0);
        assert_eq!(b2, oracle);
        assert!((b2 - 0.015625).abs() < 1e-15);
    }

    #[test]
    fn no_field_gives_zero_omega() {
        let d = derived_parameters(&cfg(1.0, 1.0)).unwrap();
        assert_eq!(d.omega, 0.0);
        assert_eq!(d.energy_ratio, 0.0);
        let r = check_regime(&cfg(1.0, 1.0)).unwrap();
        assert!(r.larmor_ok);
    }

    #[test]
    fn turning_regime_flags() {
        assert!(!check_regime(&cfg(1.0, 1.0)).unwrap().no_turning_ok);
        assert!(check_regime(&cfg(1.0, 3.0)).unwrap().no_turning_ok);
    }

    #[test]
    fn rejects_nonpositive_inputs() {
        let units = UnitSystem::natural();
        assert!(PacketSpec::gaussian(&units, 0.0, 1.0).is_err());
        assert!(UnitSystem::new(0.0, 1.0).is_err());
        assert!(UnitSystem::new(1.0, -1.0).is_err());
        assert!(RotatorSpec::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn natural_mode_u_equals_k0() {
        let c = cfg(1.0, 2.5);
        assert_eq!(c.packet.u, c.packet.k0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[packet]\nsigma0 = 1.0\nk0 = 1.0\nsigmo = 2\n[rotator]\nd = 5.0\n";
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let text = "[packet]\nsigma0 = 1.0\n[rotator]\nd = 5.0\n[numerics]\nnorm_tl = 1e-9\n";
        assert!(RunConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn digest_ignores_key_order() {
        let a = "[packet]\nsigma0 = 1.0\nk0 = 3.0\n[rotator]\nd = 5.0\nb = 0.1\nmu = 1.0\n";
        let b = "[rotator]\nmu = 1.0\nb = 0.1\nd = 5.0\n[packet]\nk0 = 3.0\nsigma0 = 1.0\n";
        let ca = RunConfig::from_toml_str(a).unwrap();
        let cb = RunConfig::from_toml_str(b).unwrap();
        assert_eq!(ca.digest(), cb.digest());
    }

    #[test]
    fn physical_mode_rescales_to_natural() {
        let text = "[units]\nmode = \"physical\"\nhbar = 2.0\nmass = 4.0\n\
                    [packet]\nsigma0 = 0.5\nu = 3.0\n[rotator]\nd = 10.0\nb = 1.0\nmu = 0.25\n";
        let c = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(c.units.hbar, 1.0);
        assert!((c.packet.sigma0 - 1.0).abs() < 1e-15);
        assert!((c.rotator.d - 20.0).abs() < 1e-12);
        // u_nat = u * m L / hbar
        assert!((c.packet.u - 3.0 * 4.0 * 0.5 / 2.0).abs() < 1e-12);
        assert!((c.scales.time - 4.0 * 0.25 / 2.0).abs() < 1e-15);
        // the energy ratio is dimensionless and survives the conversion
        let e_ratio = 0.25 / (0.5 * 4.0 * 9.0);
        let d = derived_parameters(&c).unwrap();
        assert!((d.energy_ratio - e_ratio).abs() < 1e-14);
    }

    #[test]
    fn natural_mode_rejects_other_hbar() {
        let text = "[units]\nhbar = 2.0\n[packet]\nsigma0 = 1.0\n[rotator]\nd = 1.0\n";
        assert!(RunConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn small_grids_rejected() {
        let mut c = cfg(1.0, 1.0);
        c.numerics.x_grid_points = 8;
        assert!(c.validate().is_err());
        let mut c = cfg(1.0, 1.0);
        c.numerics.norm_tol = 0.0;
        assert!(c.validate().is_err());
    }
}
