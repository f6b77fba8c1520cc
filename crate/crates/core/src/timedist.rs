//! Arrival-time and transit-time distributions.
//!
//! Three constructions are provided: the Bohmian arrival density obtained by
//! changing variables from initial position to crossing time, the
//! current-density arrival density `J(X, t)`, and the transit-time density
//! over the field region `[0, d]`. Probability that never enters a
//! distribution is tracked in three separate buckets:
//!
//! - `excluded_mass`: starts at or beyond the threshold (past `d` for transit)
//! - `non_arriving_mass`: trajectories that turn around and never get there
//! - `truncated_mass`: arrives outside the computed time window

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bohm::{
    arrival_time_closed, turning_point_exists, velocity_closed, FlowParams, IntegrationOptions,
    Stepping, TrajectoryEnsemble,
};
use crate::config::{Numerics, Placement, RunConfig};
use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre5, simpson_weights, sinh_grid};
use crate::wavepacket::{PacketField, WaveField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    ArrivalBohm,
    ArrivalPcd,
    TransitBohm,
    Empirical,
}

impl DistKind {
    pub fn label(&self) -> &'static str {
        match self {
            DistKind::ArrivalBohm => "arrival_bohm",
            DistKind::ArrivalPcd => "arrival_pcd",
            DistKind::TransitBohm => "transit_bohm",
            DistKind::Empirical => "empirical",
        }
    }
}

/// Density over time, either sampled pointwise on a sorted grid or as a
/// histogram (`edges` present, `support` holds bin centres).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDistribution {
    pub kind: DistKind,
    pub support: Vec<f64>,
    pub edges: Option<Vec<f64>>,
    /// Quadrature weights (Simpson) or bin widths.
    pub weights: Vec<f64>,
    pub density_raw: Vec<f64>,
    pub density: Vec<f64>,
    pub excluded_mass: f64,
    pub non_arriving_mass: f64,
    pub truncated_mass: f64,
    pub normalized: bool,
}

impl TimeDistribution {
    fn finish(mut self) -> Result<Self> {
        if self.density_raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NumericalDegeneracy(format!(
                "{} density has negative or non-finite values",
                self.kind.label()
            )));
        }
        let mass = self.raw_mass();
        if !(mass > 0.0) {
            return Err(Error::DegenerateInput(format!(
                "{} distribution carries no mass",
                self.kind.label()
            )));
        }
        self.density = self.density_raw.iter().map(|v| v / mass).collect();
        self.normalized = true;
        Ok(self)
    }

    /// Pointwise density on a sorted grid; normalized by Simpson quadrature.
    pub fn pointwise(
        kind: DistKind,
        support: Vec<f64>,
        density_raw: Vec<f64>,
        masses: (f64, f64, f64),
    ) -> Result<Self> {
        if support.len() != density_raw.len() || support.len() < 2 {
            return Err(Error::DegenerateInput("pointwise density needs >= 2 samples".into()));
        }
        if support.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateInput("support must be strictly increasing".into()));
        }
        let weights = simpson_weights(&support);
        Self {
            kind,
            support,
            edges: None,
            weights,
            density_raw,
            density: Vec::new(),
            excluded_mass: masses.0,
            non_arriving_mass: masses.1,
            truncated_mass: masses.2,
            normalized: false,
        }
        .finish()
    }

    /// Histogram with bin-average densities `values` on `edges`.
    pub fn histogram(
        kind: DistKind,
        edges: Vec<f64>,
        values: Vec<f64>,
        masses: (f64, f64, f64),
    ) -> Result<Self> {
        if edges.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::DegenerateInput("histogram needs len(edges) = len(values) + 1".into()));
        }
        if edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateInput("histogram edges must be strictly increasing".into()));
        }
        let support = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let weights = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Self {
            kind,
            support,
            edges: Some(edges),
            weights,
            density_raw: values,
            density: Vec::new(),
            excluded_mass: masses.0,
            non_arriving_mass: masses.1,
            truncated_mass: masses.2,
            normalized: false,
        }
        .finish()
    }

    pub fn is_histogram(&self) -> bool {
        self.edges.is_some()
    }

    pub fn raw_mass(&self) -> f64 {
        self.weights.iter().zip(&self.density_raw).map(|(w, v)| w * v).sum()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().zip(&self.density).map(|(w, v)| w * v).sum()
    }

    /// Probability that interacts at all: everything not excluded and not
    /// turned back.
    pub fn interacting_mass(&self) -> f64 {
        1.0 - self.excluded_mass - self.non_arriving_mass
    }

    /// `∫ t^k Π(t) dt` of the normalized density. Histogram moments are exact
    /// for piecewise-constant densities.
    pub fn moment(&self, k: i32) -> f64 {
        match &self.edges {
            None => self
                .weights
                .iter()
                .zip(&self.density)
                .zip(&self.support)
                .map(|((w, v), t)| w * v * t.powi(k))
                .sum(),
            Some(e) => e
                .windows(2)
                .zip(&self.density)
                .map(|(w, v)| {
                    let kp = k + 1;
                    v * (w[1].powi(kp) - w[0].powi(kp)) / kp as f64
                })
                .sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1) / self.mass()
    }

    pub fn lower(&self) -> f64 {
        self.edges.as_ref().map_or(self.support[0], |e| e[0])
    }

    pub fn upper(&self) -> f64 {
        self.edges
            .as_ref()
            .map_or(*self.support.last().unwrap(), |e| *e.last().unwrap())
    }

    /// Normalized density at `t` (linear interpolation or bin value); zero
    /// outside the support.
    pub fn density_at(&self, t: f64) -> f64 {
        match &self.edges {
            None => crate::numerics::interp_linear(&self.support, &self.density, t),
            Some(e) => {
                if t < e[0] || t > *e.last().unwrap() {
                    return 0.0;
                }
                let j = e.partition_point(|&v| v <= t).clamp(1, e.len() - 1) - 1;
                self.density[j]
            }
        }
    }

    /// Cumulative probability at every node (support points or right edges).
    fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.density.len() + 1);
        match &self.edges {
            None => {
                let mut acc = 0.0;
                out.push(0.0);
                for i in 1..self.support.len() {
                    let h = self.support[i] - self.support[i - 1];
                    acc += 0.5 * h * (self.density[i] + self.density[i - 1]);
                    out.push(acc);
                }
            }
            Some(e) => {
                let mut acc = 0.0;
                out.push(0.0);
                for (w, v) in e.windows(2).zip(&self.density) {
                    acc += (w[1] - w[0]) * v;
                    out.push(acc);
                }
            }
        }
        let total = *out.last().unwrap();
        if total > 0.0 {
            for v in out.iter_mut() {
                *v /= total;
            }
        }
        out
    }

    /// CDF sampled at the support points.
    pub fn cdf(&self) -> Vec<f64> {
        let c = self.cumulative();
        match &self.edges {
            None => c,
            Some(_) => c.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
        }
    }

    /// CDF at an arbitrary time.
    pub fn cdf_at(&self, t: f64) -> f64 {
        let c = self.cumulative();
        self.cdf_with(&c, t)
    }

    /// CDF at several times, sharing one cumulative sum.
    pub fn cdf_many(&self, ts: &[f64]) -> Vec<f64> {
        let c = self.cumulative();
        ts.iter().map(|&t| self.cdf_with(&c, t)).collect()
    }

    fn cdf_with(&self, c: &[f64], t: f64) -> f64 {
        let nodes: &[f64] = self.edges.as_deref().unwrap_or(&self.support);
        let n = nodes.len();
        if t <= nodes[0] {
            return 0.0;
        }
        if t >= nodes[n - 1] {
            return 1.0;
        }
        let j = nodes.partition_point(|&v| v <= t) - 1;
        let (a, b) = (nodes[j], nodes[j + 1]);
        let f = (t - a) / (b - a);
        match &self.edges {
            Some(_) => c[j] + f * (c[j + 1] - c[j]),
            None => {
                // exact integral of the linear interpolant from a to t
                let (pa, pb) = (self.density[j], self.density[j + 1]);
                let scale = if c[n - 1] > 0.0 {
                    (c[j + 1] - c[j]) / (0.5 * (b - a) * (pa + pb)).max(f64::MIN_POSITIVE)
                } else {
                    0.0
                };
                let part = (t - a) * (pa + 0.5 * f * (pb - pa));
                c[j] + part * if scale.is_finite() { scale } else { 0.0 }
            }
        }
    }

    pub fn peak(&self) -> (f64, f64) {
        let (i, v) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        (self.support[i], v)
    }

    /// Nodes that delimit pieces of the density.
    fn nodes(&self) -> &[f64] {
        self.edges.as_deref().unwrap_or(&self.support)
    }
}

// ---------------------------------------------------------------------------
// Masses and time windows
// ---------------------------------------------------------------------------

/// Upper tail of the standard normal distribution.
pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Probability of `x > threshold` at time `t`, by quadrature of the density.
pub fn mass_beyond(field: &PacketField, threshold: f64, t: f64) -> f64 {
    if let PacketField::Gaussian(g) = field {
        return normal_upper_tail((threshold - g.mean_position(t)) / g.width_at(t));
    }
    let c = field.mean_position(t);
    let half = 20.0 * field.width(t) + field.extra_extent();
    let lo = threshold.max(c - half);
    let hi = c + half;
    if lo >= hi {
        return 0.0;
    }
    let cells = 1600;
    let h = (hi - lo) / cells as f64;
    (0..cells)
        .map(|i| gauss_legendre5(|x| field.density(x, t), lo + i as f64 * h, lo + (i + 1) as f64 * h))
        .sum()
}

/// Initial probability beyond `threshold`, always by numerical quadrature of
/// `|ψ(x, 0)|²` (so that it can be checked against closed-form tails).
pub fn initial_tail(field: &PacketField, threshold: f64) -> f64 {
    let c = field.center();
    let half = 40.0 * field.width(0.0) + field.extra_extent();
    let lo = threshold.max(c - half);
    let hi = c + half;
    if lo >= hi {
        return 0.0;
    }
    let cells = 4000;
    let h = (hi - lo) / cells as f64;
    (0..cells)
        .map(|i| gauss_legendre5(|x| field.density(x, 0.0), lo + i as f64 * h, lo + (i + 1) as f64 * h))
        .sum()
}

/// Probability of positive momentum; under free evolution this is the mass
/// found beyond any fixed point as t → ∞.
pub fn forward_mass(field: &PacketField) -> f64 {
    match field {
        PacketField::Gaussian(g) => normal_upper_tail(-2.0 * g.sigma0 * g.k0),
        PacketField::NonGaussian(n) => {
            let lo = (n.k0 - 20.0 * n.sigma_k).max(0.0);
            let hi = n.k0 + 20.0 * n.sigma_k;
            if lo >= hi {
                return 0.0;
            }
            let cells = 4000;
            let h = (hi - lo) / cells as f64;
            (0..cells)
                .map(|i| {
                    gauss_legendre5(
                        |k| n.momentum_amplitude(k).norm_sqr(),
                        lo + i as f64 * h,
                        lo + (i + 1) as f64 * h,
                    )
                })
                .sum()
        }
    }
}

/// Time window and mass bookkeeping for arrivals at `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalPlan {
    pub threshold: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub grid: Vec<f64>,
    pub excluded_mass: f64,
    pub non_arriving_mass: f64,
    pub truncated_mass: f64,
}

impl ArrivalPlan {
    /// Chooses `[t_lo, t_hi]` so that at most `dist_tol / 10` of the
    /// arriving probability falls outside, using the identity
    /// `arrived(t) = P(x > X, t) - P(x > X, 0)` with `P(x > X, ∞) = P(k > 0)`.
    pub fn new(field: &PacketField, threshold: f64, numerics: &Numerics) -> Result<Self> {
        let u = field.u();
        if !(u > 0.0) {
            return Err(Error::UnsupportedRegime(
                "arrival distributions need a packet moving toward +x (u > 0)".into(),
            ));
        }
        let c = field.center();
        let p0 = initial_tail(field, threshold);
        let p_inf = forward_mass(field);
        let non_arriving = (1.0 - p_inf).max(0.0);
        if threshold <= c && non_arriving > numerics.dist_tol {
            return Err(Error::UnsupportedRegime(format!(
                "threshold {threshold} lies behind the packet centre {c}: trajectories carrying \
                 {non_arriving:e} of the probability turn around and may cross it twice"
            )));
        }
        let arriving = p_inf - mass_beyond(field, threshold, 0.0);
        if !(arriving > numerics.dist_tol) {
            return Err(Error::DegenerateInput(format!(
                "no probability arrives at {threshold}"
            )));
        }
        let side_tol = 0.05 * numerics.dist_tol;
        let arrived = |t: f64| mass_beyond(field, threshold, t) - p0;
        let remaining = |t: f64| p_inf - mass_beyond(field, threshold, t);
        let tc = ((threshold - c) / u).max(0.0);
        let reach = 10.0 * field.width(0.0) + field.extra_extent();
        let t_lo = if threshold - c <= reach || tc == 0.0 {
            0.0
        } else {
            crate::numerics::bisect(|t| arrived(t) - side_tol, 0.0, tc, 1e-12).unwrap_or(0.0)
        };
        let width_t = field.width(tc) / u;
        let mut t_hi = (2.0 * tc).max(tc + 10.0 * width_t);
        let mut guard = 0;
        while remaining(t_hi) > side_tol && guard < 200 {
            t_hi *= 2.0;
            guard += 1;
        }
        let truncated = arrived(t_lo).max(0.0) + remaining(t_hi).max(0.0);
        let center = tc.clamp(t_lo, t_hi);
        let width = width_t.max((t_hi - t_lo) * 1e-9);
        let grid = sinh_grid(t_lo, t_hi, center, width, numerics.time_grid_points);
        Ok(Self {
            threshold,
            t_lo,
            t_hi,
            grid,
            excluded_mass: p0,
            non_arriving_mass: non_arriving,
            truncated_mass: truncated,
        })
    }
}

// ---------------------------------------------------------------------------
// Bohmian arrival
// ---------------------------------------------------------------------------

/// Initial position whose closed-form trajectory reaches `threshold` at `t`.
/// Safeguarded Newton on `arrival_time_closed`, using `dT/dx0 = -√(1+βT²)/v`.
/// `None` when the solution lies below `lo`.
pub fn invert_arrival(t: f64, threshold: f64, p: &FlowParams, lo: f64, guess: f64) -> Result<Option<f64>> {
    if t <= 0.0 {
        return Ok(Some(threshold));
    }
    let t_lo = arrival_time_closed(lo, threshold, p)?;
    if t_lo < t {
        return Ok(None);
    }
    let (mut a, mut b) = (lo, threshold);
    let mut x = if guess > a && guess < b { guess } else { 0.5 * (a + b) };
    for _ in 0..200 {
        let ta = arrival_time_closed(x, threshold, p)?;
        let f = ta - t;
        if f > 0.0 {
            a = x;
        } else {
            b = x;
        }
        let slope = -(1.0 + p.beta * ta * ta).sqrt() / velocity_closed(x, ta, p);
        let newton = x - f / slope;
        if f == 0.0 || (newton - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return Ok(Some(newton.clamp(a, b)));
        }
        x = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if b - a <= 1e-15 * (1.0 + x.abs()) {
            return Ok(Some(x));
        }
    }
    Ok(Some(x))
}

/// Raw Bohmian arrival density at `threshold` and time `t` for a Gaussian
/// packet: `ρ₀(x0) |dx0/dT|` with `x0` obtained by inverting the
/// closed-form arrival time.
pub fn bohmian_arrival_density(t: f64, threshold: f64, config: &RunConfig) -> Result<f64> {
    let field = PacketField::from_config(config);
    let p = FlowParams::from_config(config)?;
    let lo = lowest_arriving_start(&p, config.packet.sigma0);
    match invert_arrival(t, threshold, &p, lo, 0.5 * (lo + threshold))? {
        None => Ok(0.0),
        Some(x0) => Ok(field.density(x0, 0.0) * velocity_closed(x0, t, &p)
            / (1.0 + p.beta * t * t).sqrt()),
    }
}

/// Current-density arrival density `J(X, t)`.
pub fn pcd_arrival_density(t: f64, threshold: f64, config: &RunConfig) -> f64 {
    PacketField::from_config(config).density_current(threshold, t).1
}

/// Lowest initial position whose trajectory still moves forward forever.
pub fn lowest_arriving_start(p: &FlowParams, sigma0: f64) -> f64 {
    let deep = p.center - 40.0 * sigma0;
    if p.beta > 0.0 {
        let boundary = p.center - p.u / p.beta.sqrt();
        deep.max(boundary + 1e-9 * sigma0.max(boundary.abs()))
    } else {
        deep
    }
}

/// Bohmian arrival-time density at `threshold`.
///
/// Gaussian packets use the closed-form flow and invert it on the time grid;
/// non-Gaussian packets integrate a quantile ensemble together with the
/// tangent `∂x/∂x0`, giving `Π = ρ₀(x0) v / (∂x/∂x0)` at each crossing.
pub fn arrival_dist_bohmian(threshold: f64, config: &RunConfig) -> Result<TimeDistribution> {
    let field = PacketField::from_config(config);
    let plan = ArrivalPlan::new(&field, threshold, &config.numerics)?;
    let masses = (plan.excluded_mass, plan.non_arriving_mass, plan.truncated_mass);
    match field {
        PacketField::Gaussian(_) => {
            let p = FlowParams::from_config(config)?;
            let lo = lowest_arriving_start(&p, config.packet.sigma0);
            // chunks keep a warm start for Newton while running in parallel
            let chunk = 256;
            let rows: Vec<Result<Vec<f64>>> = plan
                .grid
                .par_chunks(chunk)
                .map(|ts| {
                    let mut out = Vec::with_capacity(ts.len());
                    let mut guess = 0.5 * (lo + threshold);
                    for &t in ts {
                        match invert_arrival(t, threshold, &p, lo, guess)? {
                            None => out.push(0.0),
                            Some(x0) => {
                                guess = x0;
                                let s = (1.0 + p.beta * t * t).sqrt();
                                out.push(field.density(x0, 0.0) * velocity_closed(x0, t, &p) / s);
                            }
                        }
                    }
                    Ok(out)
                })
                .collect();
            let mut raw = Vec::with_capacity(plan.grid.len());
            for r in rows {
                raw.extend(r?);
            }
            TimeDistribution::pointwise(DistKind::ArrivalBohm, plan.grid, raw, masses)
        }
        PacketField::NonGaussian(_) => {
            let (times, raw) = numeric_arrivals(&field, threshold, &plan, config)?;
            TimeDistribution::pointwise(DistKind::ArrivalBohm, times, raw, masses)
        }
    }
}

/// RK4 options for non-Gaussian packets: log-time stepping from the initial
/// width over the characteristic speed, tangent on, endpoints only.
pub fn numeric_options(config: &RunConfig, field: &PacketField, thresholds: Vec<f64>) -> IntegrationOptions {
    let speed = field
        .u()
        .abs()
        .max(config.units.hbar / (config.units.mass * config.packet.sigma0));
    let mut opts = IntegrationOptions::new(config.trajectory_dt(), config.numerics.phase_floor);
    opts.thresholds = thresholds;
    opts.record_every = 0;
    opts.stop_after_arrivals = true;
    opts.tangent = true;
    opts.stepping = Stepping::Logarithmic {
        scale: field.width(0.0) / speed,
    };
    opts
}

fn numeric_arrivals(
    field: &PacketField,
    threshold: f64,
    plan: &ArrivalPlan,
    config: &RunConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = config.numerics.nongaussian_trajectories;
    let ens = TrajectoryEnsemble::build(field, n, Placement::Quantile, config.seed)?;
    let opts = numeric_options(config, field, vec![threshold]);
    let starts: Vec<(usize, f64)> = ens
        .x0
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, x0)| x0 < threshold)
        .collect();
    let events: Vec<Option<(f64, f64)>> = starts
        .par_iter()
        .map(|&(i, x0)| {
            let tr = crate::bohm::integrate_trajectory(field, x0, (0.0, plan.t_hi), &opts, i)?;
            let a = tr.arrival_record(threshold).copied();
            Ok(a.and_then(|a| match (a.time, a.velocity, a.jacobian) {
                (Some(t), Some(v), Some(g)) if g > 0.0 && t >= plan.t_lo => {
                    Some((t, field.density(x0, 0.0) * v / g))
                }
                _ => None,
            }))
        })
        .collect::<Result<_>>()?;
    let mut pts: Vec<(f64, f64)> = events.into_iter().flatten().collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts.dedup_by(|a, b| a.0 <= b.0);
    if pts.len() < 2 {
        return Err(Error::DegenerateInput("fewer than two trajectories arrived".into()));
    }
    Ok(pts.into_iter().unzip())
}

// ---------------------------------------------------------------------------
// Current-density arrival
// ---------------------------------------------------------------------------

/// Arrival density proportional to the probability current `J(X, t)`.
pub fn arrival_dist_pcd(threshold: f64, config: &RunConfig) -> Result<TimeDistribution> {
    let field = PacketField::from_config(config);
    let plan = ArrivalPlan::new(&field, threshold, &config.numerics)?;
    let raw: Vec<f64> = plan
        .grid
        .par_iter()
        .map(|&t| field.density_current(threshold, t).1)
        .collect();
    let peak = raw.iter().cloned().fold(0.0, f64::max);
    if let Some((i, j)) = raw.iter().enumerate().find(|(_, &j)| j < -1e-12 * peak) {
        return Err(Error::RegimeViolation(format!(
            "current J({threshold}, {}) = {j:e} is negative; the current is not a density",
            plan.grid[i]
        )));
    }
    let raw = raw.into_iter().map(|j| j.max(0.0)).collect();
    TimeDistribution::pointwise(
        DistKind::ArrivalPcd,
        plan.grid,
        raw,
        (plan.excluded_mass, plan.non_arriving_mass, plan.truncated_mass),
    )
}

// ---------------------------------------------------------------------------
// Transit time
// ---------------------------------------------------------------------------

/// Time spent inside `[0, d]` after the field is switched on at t = 0, for
/// the closed-form trajectory from `x0`. `None` when `x0 > d` (never
/// inside while the field is on).
pub fn transit_time_closed(x0: f64, d: f64, p: &FlowParams) -> Result<Option<f64>> {
    if x0 > d {
        return Ok(None);
    }
    if x0 == d {
        return Ok(Some(0.0));
    }
    let exit = arrival_time_closed(x0, d, p)?;
    if x0 < 0.0 {
        Ok(Some(exit - arrival_time_closed(x0, 0.0, p)?))
    } else {
        Ok(Some(exit))
    }
}

/// Transit-time density over the field region.
///
/// Each quantile trajectory supplies `τ(x0)`; the mass between neighbouring
/// quantile points is spread uniformly over the τ interval they span and
/// deposited on equal-mass bins. This handles the non-monotone map (inside
/// starters have τ falling to 0 at x0 = d) without differentiating τ.
pub fn transit_time_dist(config: &RunConfig) -> Result<TimeDistribution> {
    let field = PacketField::from_config(config);
    let d = config.rotator.d;
    let numerics = &config.numerics;
    if !(field.u() > 0.0) {
        return Err(Error::UnsupportedRegime(
            "transit times need a packet moving toward +x (u > 0)".into(),
        ));
    }
    let non_arriving = (1.0 - forward_mass(&field)).max(0.0);
    if field.center() > 0.0 && non_arriving > numerics.dist_tol {
        return Err(Error::UnsupportedRegime(format!(
            "packet centre {} is inside the field region and trajectories carrying {non_arriving:e} \
             of the probability turn around there",
            field.center()
        )));
    }
    let excluded = initial_tail(&field, d);
    let (taus, weight, truncated): (Vec<Option<f64>>, f64, f64) = match field {
        PacketField::Gaussian(_) => {
            let p = FlowParams::from_config(config)?;
            let ens = TrajectoryEnsemble::build(&field, numerics.ensemble_size, Placement::Quantile, config.seed)?;
            let taus = ens
                .x0
                .par_iter()
                .map(|&x0| {
                    if x0 > d || turning_point_exists(x0, &p).is_some() {
                        Ok(None)
                    } else {
                        transit_time_closed(x0, d, &p)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            (taus, 1.0 / ens.len() as f64, 0.0)
        }
        PacketField::NonGaussian(_) => {
            let plan = ArrivalPlan::new(&field, d, numerics)?;
            let n = numerics.nongaussian_trajectories;
            let ens = TrajectoryEnsemble::build(&field, n, Placement::Quantile, config.seed)?;
            let mut opts = numeric_options(config, &field, vec![0.0, d]);
            opts.tangent = false;
            let taus = ens
                .x0
                .par_iter()
                .enumerate()
                .map(|(i, &x0)| {
                    if x0 > d {
                        return Ok(None);
                    }
                    let tr = crate::bohm::integrate_trajectory(&field, x0, (0.0, plan.t_hi), &opts, i)?;
                    let exit = tr.arrival(d);
                    Ok(match (x0 < 0.0, exit) {
                        (_, None) => None,
                        (false, Some(te)) => Some(te),
                        (true, Some(te)) => tr.arrival(0.0).map(|t0| te - t0),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (taus, 1.0 / n as f64, plan.truncated_mass)
        }
    };
    segment_histogram(
        DistKind::TransitBohm,
        &taus,
        weight,
        numerics.hist_bins,
        (excluded, non_arriving, truncated),
    )
}

/// Splits positive bins whose edges differ by more than a factor `ratio`
/// into geometric sub-bins, so a heavy tail is not flattened into one wide
/// equal-mass bin.
fn refine_geometric(edges: &[f64], ratio: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(edges.len());
    out.push(edges[0]);
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a > 0.0 && b > ratio * a {
            let pieces = ((b / a).ln() / ratio.ln()).ceil() as usize;
            let step = (b / a).powf(1.0 / pieces as f64);
            out.extend((1..pieces).map(|i| a * step.powi(i as i32)));
        }
        out.push(b);
    }
    out
}

/// Deposits quantile-ensemble events onto equal-mass bins (tail bins split
/// geometrically): each pair of neighbouring included events carries
/// `weight`, spread uniformly between their values; the two ends of every
/// included run carry `weight / 2`.
fn segment_histogram(
    kind: DistKind,
    events: &[Option<f64>],
    weight: f64,
    bins: usize,
    masses: (f64, f64, f64),
) -> Result<TimeDistribution> {
    let mut sorted: Vec<f64> = events.iter().flatten().copied().collect();
    if sorted.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "{} needs at least two included trajectories",
            kind.label()
        )));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut edges: Vec<f64> = (0..=bins)
        .map(|j| sorted[((j as f64 / bins as f64) * (n - 1) as f64).round() as usize])
        .collect();
    edges.dedup_by(|a, b| *a <= *b);
    edges = refine_geometric(&edges, 1.5);
    if edges.len() < 2 {
        let t = sorted[0];
        let eps = 1e-9 * (1.0 + t.abs());
        edges = vec![t - eps, t + eps];
    }
    let nb = edges.len() - 1;
    let mut mass = vec![0.0; nb];
    let bin_of = |t: f64| edges.partition_point(|&e| e <= t).clamp(1, nb) - 1;
    let deposit_point = |mass: &mut Vec<f64>, t: f64, m: f64| mass[bin_of(t)] += m;
    for i in 0..events.len() {
        if let Some(a) = events[i] {
            let prev = i > 0 && events[i - 1].is_some();
            let next = i + 1 < events.len() && events[i + 1].is_some();
            if !prev {
                deposit_point(&mut mass, a, 0.5 * weight);
            }
            if !next {
                deposit_point(&mut mass, a, 0.5 * weight);
            } else {
                let b = events[i + 1].unwrap();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                if hi - lo <= 0.0 {
                    deposit_point(&mut mass, lo, weight);
                    continue;
                }
                let j0 = bin_of(lo);
                let j1 = bin_of(hi);
                for j in j0..=j1 {
                    let overlap = hi.min(edges[j + 1]) - lo.max(edges[j]);
                    if overlap > 0.0 {
                        mass[j] += weight * overlap / (hi - lo);
                    }
                }
            }
        }
    }
    let values = mass
        .iter()
        .zip(edges.windows(2))
        .map(|(m, w)| m / (w[1] - w[0]))
        .collect();
    TimeDistribution::histogram(kind, edges, values, masses)
}

// ---------------------------------------------------------------------------
// Empirical histograms and distances
// ---------------------------------------------------------------------------

/// Weighted histogram of per-trajectory events on `bins` uniform bins.
/// Trajectories without an event count toward `excluded_mass`; the raw
/// density integrates to `1 - excluded_mass`.
pub fn empirical_dist<E>(ensemble: &TrajectoryEnsemble, extractor: E, bins: usize) -> Result<TimeDistribution>
where
    E: Fn(usize, f64) -> Option<f64>,
{
    let events: Vec<Option<f64>> = ensemble.x0.iter().enumerate().map(|(i, &x0)| extractor(i, x0)).collect();
    let included: Vec<(f64, f64)> = events
        .iter()
        .zip(&ensemble.weights)
        .filter_map(|(e, &w)| e.map(|t| (t, w)))
        .collect();
    if included.is_empty() {
        return Err(Error::DegenerateInput("no trajectory produced an event".into()));
    }
    let lo = included.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = included.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let edges = if hi > lo {
        crate::numerics::linspace(lo, hi, bins.max(1) + 1)
    } else {
        let eps = 1e-9 * (1.0 + lo.abs());
        vec![lo - eps, lo + eps]
    };
    empirical_on_edges(&events, &ensemble.weights, edges)
}

/// Weighted histogram of events on the given bin edges.
pub fn empirical_on_edges(events: &[Option<f64>], weights: &[f64], edges: Vec<f64>) -> Result<TimeDistribution> {
    let nb = edges.len() - 1;
    let mut mass = vec![0.0; nb];
    let mut excluded = 0.0;
    let mut outside = 0.0;
    for (e, &w) in events.iter().zip(weights) {
        match e {
            None => excluded += w,
            Some(t) if *t < edges[0] || *t > edges[nb] => outside += w,
            Some(t) => {
                let j = edges.partition_point(|&v| v <= *t).clamp(1, nb) - 1;
                mass[j] += w;
            }
        }
    }
    let values = mass
        .iter()
        .zip(edges.windows(2))
        .map(|(m, w)| m / (w[1] - w[0]))
        .collect();
    TimeDistribution::histogram(DistKind::Empirical, edges, values, (excluded, 0.0, outside))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub l1: f64,
    pub kolmogorov_smirnov: f64,
    pub mean_gap: f64,
}

/// L1, Kolmogorov-Smirnov and mean distances between two normalized
/// distributions, evaluated on the union of their breakpoints.
pub fn dist_distance(p: &TimeDistribution, q: &TimeDistribution) -> Result<Distance> {
    for d in [p, q] {
        let m = d.mass();
        if !d.normalized || (m - 1.0).abs() > 1e-6 {
            return Err(Error::Unnormalized { mass: m });
        }
    }
    let mut nodes: Vec<f64> = p.nodes().iter().chain(q.nodes()).copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup();
    let cp = p.cumulative();
    let cq = q.cumulative();
    let gap = |t: f64| (p.density_at(t) - q.density_at(t)).abs();
    let mut l1 = 0.0;
    let mut ks: f64 = 0.0;
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        // stay strictly inside each piece so histogram jumps are not sampled
        let inset = 1e-12 * (b - a);
        l1 += gauss_legendre5(gap, a + inset, b - inset);
        for t in [a, 0.5 * (a + b)] {
            ks = ks.max((p.cdf_with(&cp, t) - q.cdf_with(&cq, t)).abs());
        }
    }
    Ok(Distance {
        l1,
        kolmogorov_smirnov: ks,
        mean_gap: (p.mean() - q.mean()).abs(),
    })
}
