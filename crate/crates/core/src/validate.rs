//! Invariant suite run by `bohmclock validate`.
//!
//! Each check evaluates one property of the configured run and records the
//! measured value next to its tolerance. Checks that do not apply to the
//! configuration (no field, non-Gaussian packet) are skipped and say so.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bohm::{
    arrival_time_closed, integrate_trajectory, trajectory_closed, turning_point_exists, FlowParams,
    IntegrationOptions, TrajectoryEnsemble,
};
use crate::config::{check_regime, Placement, RunConfig, TailPolicy};
use crate::error::{Error, Result};
use crate::numerics::gauss_legendre5;
use crate::scatter::{larmor_limit_prediction, transmitted_spin_state, re_im_closed, ScatteringInputs};
use crate::spinclock::{observable_curve, pushforward_phi, theta_grid};
use crate::timedist::{
    arrival_dist_bohmian, arrival_dist_pcd, dist_distance, empirical_on_edges, normal_upper_tail,
    transit_time_dist, TimeDistribution,
};
use crate::wavepacket::{continuity_residual, evolve_spectral, PacketField, SpatialGrid, WaveField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
    /// Reported for information; never fails the suite.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn measured(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if value <= tolerance { Status::Pass } else { Status::Fail },
            value: Some(value),
            tolerance: Some(tolerance),
            detail: detail.into(),
        }
    }

    fn skip(name: &str, why: &str) -> Self {
        Self {
            name: name.into(),
            status: Status::Skip,
            value: None,
            tolerance: None,
            detail: why.into(),
        }
    }

    fn info(name: &str, value: Option<f64>, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: Status::Info,
            value,
            tolerance: None,
            detail: detail.into(),
        }
    }

    fn error(name: &str, err: &Error) -> Self {
        Self {
            name: name.into(),
            status: Status::Fail,
            value: None,
            tolerance: None,
            detail: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config_digest: String,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }
}

type Check = fn(&Ctx) -> Result<CheckResult>;

struct Ctx<'a> {
    config: &'a RunConfig,
    field: PacketField,
    gaussian: bool,
    /// Representative time: the peak reaches the exit of the field region.
    t_ref: f64,
}

/// Runs every check; errors inside a check become failures, never panics.
pub fn run_validation(config: &RunConfig) -> ValidationReport {
    let field = PacketField::from_config(config);
    let gaussian = matches!(field, PacketField::Gaussian(_));
    let u = config.packet.u;
    let t_ref = if u > 0.0 {
        ((config.rotator.d - config.packet.center) / u).max(0.0)
    } else {
        0.0
    };
    let ctx = Ctx {
        config,
        field,
        gaussian,
        t_ref,
    };
    let checks: Vec<(&str, Check)> = vec![
        ("regime", check_regime_info),
        ("normalization", check_normalization),
        ("spectral_vs_analytic", check_spectral),
        ("continuity", check_continuity),
        ("trajectory_rk4", check_trajectories),
        ("arrival_roundtrip", check_roundtrip),
        ("bohm_pcd_equivalence", check_equivalence),
        ("arrival_mass_bookkeeping", check_arrival_masses),
        ("transit_mass_bookkeeping", check_transit_masses),
        ("equivariance", check_equivariance),
        ("observable_sum", check_observables),
        ("scatter_flux", check_flux),
        ("scatter_closed_forms", check_closed_forms),
        ("larmor_limit", check_larmor),
    ];
    let results = checks
        .into_iter()
        .map(|(name, f)| match f(&ctx) {
            Ok(r) => r,
            Err(e) => CheckResult::error(name, &e),
        })
        .collect();
    ValidationReport {
        config_digest: config.digest(),
        checks: results,
    }
}

fn check_regime_info(ctx: &Ctx) -> Result<CheckResult> {
    let r = check_regime(ctx.config)?;
    Ok(CheckResult::info(
        "regime",
        Some(r.spin_term_max),
        format!(
            "larmor_ok={} (|muB|/E = {:e}), no_turning_ok={} (bound u >= {:e}), spin_term_ok={} (max ratio {:e})",
            r.larmor_ok, r.energy_ratio, r.no_turning_ok, r.turning_bound, r.spin_term_ok, r.spin_term_max
        ),
    ))
}

fn norm_at(field: &PacketField, t: f64) -> f64 {
    let c = field.mean_position(t);
    let half = 20.0 * field.width(t) + field.extra_extent();
    let cells = 4000;
    let h = 2.0 * half / cells as f64;
    (0..cells)
        .map(|i| {
            let a = c - half + i as f64 * h;
            gauss_legendre5(|x| field.density(x, t), a, a + h)
        })
        .sum()
}

fn check_normalization(ctx: &Ctx) -> Result<CheckResult> {
    let worst = [0.0, 0.5 * ctx.t_ref, ctx.t_ref]
        .iter()
        .map(|&t| (norm_at(&ctx.field, t) - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(CheckResult::measured(
        "normalization",
        worst,
        ctx.config.numerics.norm_tol,
        "max |∫|psi|^2 dx - 1| at t = 0, t_ref/2, t_ref",
    ))
}

fn check_spectral(ctx: &Ctx) -> Result<CheckResult> {
    let grid = SpatialGrid::for_field(&ctx.field, ctx.t_ref, &ctx.config.numerics);
    let state = evolve_spectral(&ctx.field, ctx.t_ref, &grid)?;
    let mut gap: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for j in 0..state.grid.len {
        let exact = ctx.field.psi(state.x(j), ctx.t_ref);
        gap = gap.max((state.amplitude(j) - exact).norm());
        peak = peak.max(exact.norm());
    }
    Ok(CheckResult::measured(
        "spectral_vs_analytic",
        gap / peak,
        ctx.config.numerics.ft_tol,
        format!("max |psi_fft - psi_exact| / max|psi| at t = {:e}", ctx.t_ref),
    ))
}

fn check_continuity(ctx: &Ctx) -> Result<CheckResult> {
    let grid = SpatialGrid::for_field(&ctx.field, ctx.t_ref, &ctx.config.numerics);
    let t = ctx.t_ref.max(1e-3 / ctx.config.packet.u.abs().max(1.0));
    let h = 1e-3 * ctx.field.width(t) / ctx.config.packet.u.abs().max(ctx.config.units.hbar / ctx.config.packet.sigma0);
    let (res, grad) = continuity_residual(&ctx.field, t, &grid, h)?;
    Ok(CheckResult::measured(
        "continuity",
        res / grad,
        ctx.config.numerics.ce_tol,
        "max |d rho/dt + dJ/dx| / max |dJ/dx| on interior grid points",
    ))
}

fn check_trajectories(ctx: &Ctx) -> Result<CheckResult> {
    if !ctx.gaussian {
        return Ok(CheckResult::skip("trajectory_rk4", "closed-form trajectories exist for Gaussian packets only"));
    }
    let p = FlowParams::from_config(ctx.config)?;
    let ens = TrajectoryEnsemble::build(&ctx.field, 100, Placement::Quantile, ctx.config.seed)?;
    let t_end = ctx.t_ref.max(ctx.config.packet.sigma0 / ctx.config.packet.u.abs().max(1e-300)).min(1e6);
    let steps = 4000.0;
    let opts = IntegrationOptions::new(t_end / steps, ctx.config.numerics.phase_floor);
    let worst = ens
        .x0
        .par_iter()
        .enumerate()
        .map(|(i, &x0)| {
            let tr = integrate_trajectory(&ctx.field, x0, (0.0, t_end), &opts, i)?;
            let (t, x, _) = tr.endpoint().expect("trajectory has samples");
            Ok((x - trajectory_closed(x0, t, &p)).abs())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(CheckResult::measured(
        "trajectory_rk4",
        worst / ctx.config.packet.sigma0,
        ctx.config.numerics.traj_tol,
        format!("max endpoint error / sigma0 over 100 quantile trajectories, 4000 RK4 steps to t = {t_end:e}"),
    ))
}

fn check_roundtrip(ctx: &Ctx) -> Result<CheckResult> {
    if !ctx.gaussian {
        return Ok(CheckResult::skip("arrival_roundtrip", "closed-form arrival times exist for Gaussian packets only"));
    }
    let p = FlowParams::from_config(ctx.config)?;
    let ens = TrajectoryEnsemble::build(&ctx.field, 100, Placement::Quantile, ctx.config.seed)?;
    let times: Vec<f64> = (1..=100).map(|j| ctx.t_ref.max(1.0) * j as f64 / 25.0).collect();
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    for &x0 in &ens.x0 {
        if turning_point_exists(x0, &p).is_some() {
            continue;
        }
        for &t in &times {
            let x = trajectory_closed(x0, t, &p);
            if x <= x0 {
                continue;
            }
            let back = arrival_time_closed(x0, x, &p)?;
            worst = worst.max((back - t).abs() / t);
            count += 1;
        }
    }
    Ok(CheckResult::measured(
        "arrival_roundtrip",
        worst,
        1e-10,
        format!("max relative error of arrival_time(x0, x(x0, t)) = t over {count} pairs"),
    ))
}

fn arrival_pair(ctx: &Ctx) -> Result<(TimeDistribution, TimeDistribution)> {
    let d = ctx.config.rotator.d;
    Ok((arrival_dist_bohmian(d, ctx.config)?, arrival_dist_pcd(d, ctx.config)?))
}

fn check_equivalence(ctx: &Ctx) -> Result<CheckResult> {
    let (b, p) = arrival_pair(ctx)?;
    if ctx.gaussian {
        let peak = b.peak().1;
        let worst = b
            .density
            .iter()
            .zip(&p.density)
            .filter(|(x, _)| **x > 1e-6 * peak)
            .map(|(x, y)| (x - y).abs() / x)
            .fold(0.0, f64::max);
        Ok(CheckResult::measured(
            "bohm_pcd_equivalence",
            worst,
            ctx.config.numerics.dist_tol,
            "max relative gap between Bohmian and current-density arrival densities at x = d",
        ))
    } else {
        let l1 = dist_distance(&b, &p)?.l1;
        Ok(CheckResult::measured(
            "bohm_pcd_equivalence",
            l1,
            ctx.config.numerics.hist_tol,
            "L1 gap between integrated-trajectory and current-density arrival densities at x = d",
        ))
    }
}

fn check_arrival_masses(ctx: &Ctx) -> Result<CheckResult> {
    let p = arrival_dist_pcd(ctx.config.rotator.d, ctx.config)?;
    let total = p.raw_mass() + p.excluded_mass + p.non_arriving_mass + p.truncated_mass;
    let mut gap = (total - 1.0).abs();
    let mut detail = "|raw + excluded + non_arriving + truncated - 1| for the current-density arrival density".to_string();
    if ctx.gaussian {
        let z = (ctx.config.rotator.d - ctx.config.packet.center) / ctx.config.packet.sigma0;
        let tail_gap = (p.excluded_mass - normal_upper_tail(z)).abs();
        gap = gap.max(tail_gap * ctx.config.numerics.dist_tol / 1e-9);
        detail.push_str("; excluded mass also compared with the Gaussian tail (scaled to 1e-9)");
    }
    Ok(CheckResult::measured("arrival_mass_bookkeeping", gap, ctx.config.numerics.dist_tol, detail))
}

fn check_transit_masses(ctx: &Ctx) -> Result<CheckResult> {
    let t = transit_time_dist(ctx.config)?;
    let total = t.raw_mass() + t.excluded_mass + t.non_arriving_mass + t.truncated_mass;
    Ok(CheckResult::measured(
        "transit_mass_bookkeeping",
        (total - 1.0).abs(),
        ctx.config.numerics.hist_tol,
        "|raw + excluded + non_arriving + truncated - 1| for the transit-time histogram",
    ))
}

fn check_equivariance(ctx: &Ctx) -> Result<CheckResult> {
    if !ctx.gaussian {
        return Ok(CheckResult::skip("equivariance", "uses closed-form trajectories (Gaussian packets only)"));
    }
    let p = FlowParams::from_config(ctx.config)?;
    let n = ctx.config.numerics.ensemble_size;
    let ens = TrajectoryEnsemble::build(&ctx.field, n, Placement::Quantile, ctx.config.seed)?;
    let t = ctx.t_ref;
    let xs: Vec<Option<f64>> = ens.positions_closed(t, &p).into_iter().map(Some).collect();
    let c = ctx.field.mean_position(t);
    let w = ctx.field.width(t);
    let bins = 200;
    let edges = crate::numerics::linspace(c - 6.0 * w, c + 6.0 * w, bins + 1);
    let hist = empirical_on_edges(&xs, &ens.weights, edges.clone())?;
    let l1: f64 = edges
        .windows(2)
        .zip(&hist.density_raw)
        .map(|(e, h)| {
            let exact = gauss_legendre5(|x| ctx.field.density(x, t), e[0], e[1]) / (e[1] - e[0]);
            (h - exact).abs() * (e[1] - e[0])
        })
        .sum::<f64>()
        + hist.truncated_mass;
    Ok(CheckResult::measured(
        "equivariance",
        l1,
        ctx.config.numerics.hist_tol,
        format!("L1 gap between the {n}-trajectory position histogram and |psi|^2 at t = {t:e}"),
    ))
}

fn check_observables(ctx: &Ctx) -> Result<CheckResult> {
    let omega = ctx.config.rotator.omega(&ctx.config.units);
    if omega == 0.0 {
        return Ok(CheckResult::skip("observable_sum", "no field (omega = 0)"));
    }
    let (_, pcd) = arrival_pair(ctx)?;
    let transit = transit_time_dist(ctx.config)?;
    let theta = theta_grid(ctx.config.output.theta_points);
    let mut worst: f64 = 0.0;
    for dist in [&pcd, &transit] {
        for policy in [TailPolicy::Drop, TailPolicy::Atom] {
            let spin = pushforward_phi(dist, omega, policy)?;
            let curve = observable_curve(&spin, &theta, ctx.config.numerics.dist_tol)?;
            worst = worst.max(curve.max_sum_error());
            let outside = curve
                .p_plus
                .iter()
                .chain(&curve.p_minus)
                .map(|v| (-v).max(v - 1.0).max(0.0))
                .fold(0.0, f64::max);
            worst = worst.max(outside);
        }
    }
    Ok(CheckResult::measured(
        "observable_sum",
        worst,
        ctx.config.numerics.quad_tol,
        "max |P+ + P- - 1| and range excess over arrival and transit curves, both tail policies",
    ))
}

/// Scan of 10³ (E, d) points: ratios E/|muB| log-spaced in [1.05, 10⁴],
/// widths spanning 0.1 to 100 wavelengths-over-2π.
fn scan_cases(ctx: &Ctx) -> Vec<ScatteringInputs> {
    let mu_b = ctx.config.rotator.mu_b();
    let mut out = Vec::with_capacity(1000);
    for i in 0..40 {
        let ratio = (1.05f64.ln() + (1e4f64.ln() - 1.05f64.ln()) * i as f64 / 39.0).exp();
        for j in 0..25 {
            let kd = (0.1f64.ln() + (100.0f64.ln() - 0.1f64.ln()) * j as f64 / 24.0).exp();
            let energy = ratio * mu_b.abs();
            let k = (2.0 * ctx.config.units.mass * energy).sqrt() / ctx.config.units.hbar;
            if let Ok(inp) = ScatteringInputs::new(ctx.config.units, energy, mu_b, kd / k) {
                out.push(inp);
            }
        }
    }
    out
}

fn check_flux(ctx: &Ctx) -> Result<CheckResult> {
    if ctx.config.rotator.mu_b() == 0.0 {
        return Ok(CheckResult::skip("scatter_flux", "no field (muB = 0)"));
    }
    let cases = scan_cases(ctx);
    let worst = cases
        .par_iter()
        .map(|inp| {
            let s = transmitted_spin_state(inp)?;
            Ok([s.minus, s.plus]
                .iter()
                .map(|b| (b.r.norm_sqr() + b.t.norm_sqr() - 1.0).abs())
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(CheckResult::measured(
        "scatter_flux",
        worst,
        1e-12,
        format!("max | |r|^2 + |t|^2 - 1 | over {} (E, d) points, both branches", cases.len()),
    ))
}

fn check_closed_forms(ctx: &Ctx) -> Result<CheckResult> {
    if ctx.config.rotator.mu_b() == 0.0 {
        return Ok(CheckResult::skip("scatter_closed_forms", "no field (muB = 0)"));
    }
    let cases = scan_cases(ctx);
    let worst = cases
        .par_iter()
        .map(|inp| {
            let s = transmitted_spin_state(inp)?;
            let k = inp.k();
            Ok([s.minus, s.plus]
                .iter()
                .map(|b| {
                    let (re, im) = re_im_closed(k, b.k_in, inp.d);
                    (re - b.t.re).abs().max((im - b.t.im).abs())
                })
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(CheckResult::measured(
        "scatter_closed_forms",
        worst,
        1e-12,
        "max componentwise gap between expanded Re/Im forms and direct complex evaluation",
    ))
}

fn check_larmor(ctx: &Ctx) -> Result<CheckResult> {
    if ctx.config.rotator.mu_b() == 0.0 {
        return Ok(CheckResult::skip("larmor_limit", "no field (muB = 0)"));
    }
    let inputs = ScatteringInputs::at_carrier(ctx.config)?;
    let lim = larmor_limit_prediction(&inputs, ctx.config.numerics.larmor_limit_ratio)?;
    let detail = format!(
        "1 - fidelity of exact transmitted spin with free precession at E/|muB| = {:e}",
        lim.energy_ratio
    );
    if lim.applicable {
        Ok(CheckResult::measured("larmor_limit", (1.0 - lim.fidelity).max(0.0), 1e-6, detail))
    } else {
        Ok(CheckResult::info(
            "larmor_limit",
            Some(1.0 - lim.fidelity),
            detail + " (below the configured limit ratio; reported only)",
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_fast_gaussian() {
        let mut c = RunConfig::gaussian(1.0, 3.0, 5.0).unwrap();
        c.rotator = crate::config::RotatorSpec::new(5.0, 0.1, 1.0).unwrap();
        c.numerics.ensemble_size = 20_000;
        c.numerics.time_grid_points = 4096;
        c.numerics.x_grid_points = 4096;
        let r = run_validation(&c);
        for f in r.failures() {
            eprintln!("{f:?}");
        }
        assert!(r.passed());
        assert_eq!(r.checks.len(), 14);
    }
}
