//! Bohmian trajectories: the closed-form Gaussian flow, fixed-step RK4
//! integration of v = J/ρ for arbitrary fields, ensembles of initial
//! positions, and the turning-point and spin-term diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{beta_spread, PacketKind, PacketSpec, Placement, RunConfig, UnitSystem};
use crate::error::{Error, Result};
use crate::numerics::QuantileTable;
use crate::wavepacket::{PacketField, WaveField};

/// Parameters of the Gaussian Bohmian flow `x = c + u t + (x0 - c) √(1 + β t²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub u: f64,
    pub beta: f64,
    pub center: f64,
}

impl FlowParams {
    pub fn new(u: f64, beta: f64) -> Self {
        Self { u, beta, center: 0.0 }
    }

    pub fn from_spec(units: &UnitSystem, spec: &PacketSpec) -> Result<Self> {
        if spec.kind != PacketKind::Gaussian {
            return Err(Error::UnsupportedRegime(
                "closed-form trajectories need a Gaussian packet".into(),
            ));
        }
        Ok(Self {
            u: spec.u,
            beta: beta_spread(units, spec.sigma0),
            center: spec.center,
        })
    }

    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Self::from_spec(&config.units, &config.packet)
    }
}

pub fn trajectory_closed(x0: f64, t: f64, p: &FlowParams) -> f64 {
    p.center + p.u * t + (x0 - p.center) * (1.0 + p.beta * t * t).sqrt()
}

pub fn velocity_closed(x0: f64, t: f64, p: &FlowParams) -> f64 {
    p.u + (x0 - p.center) * p.beta * t / (1.0 + p.beta * t * t).sqrt()
}

/// Instant t′ at which the velocity vanishes, if the trajectory turns.
/// A trajectory turns iff it starts behind the centre and `u < |ξ0| √β`.
pub fn turning_point_exists(x0: f64, p: &FlowParams) -> Option<f64> {
    let xi = x0 - p.center;
    let sb = p.beta.sqrt();
    if xi < 0.0 && p.u < -xi * sb {
        let u = p.u.max(0.0);
        Some(u / (sb * (xi * xi * p.beta - u * u).sqrt()))
    } else {
        None
    }
}

/// First time the trajectory from `x0` reaches `threshold`.
///
/// Solves `(u² - ξ²β)T² - 2X′uT + (X′² - ξ²) = 0` (ξ = x0 - c, X′ = X - c),
/// keeps the root on the physical branch `sign(X′ - uT) = sign(ξ)`, and
/// polishes it with Newton steps on the trajectory itself.
pub fn arrival_time_closed(x0: f64, threshold: f64, p: &FlowParams) -> Result<f64> {
    if x0 >= threshold {
        return Err(Error::AlreadyPast { x0, threshold });
    }
    if turning_point_exists(x0, p).is_some() {
        return Err(Error::UnsupportedRegime(format!(
            "trajectory from x0 = {x0} has a turning point (u = {} < |x0 - c| sqrt(beta))",
            p.u
        )));
    }
    let xi = x0 - p.center;
    let xp = threshold - p.center;
    let u = p.u;
    if xi == 0.0 {
        return if u > 0.0 {
            Ok(xp / u)
        } else {
            Err(Error::NeverArrives { x0, threshold })
        };
    }
    let a = u * u - xi * xi * p.beta;
    let c = xp * xp - xi * xi;
    let q2 = u * u + p.beta * c;
    if q2 < 0.0 {
        return Err(Error::NeverArrives { x0, threshold });
    }
    let q = q2.sqrt();
    let bu = xp * u;
    let s = bu + if bu >= 0.0 { 1.0 } else { -1.0 } * xi.abs() * q;
    let mut candidates = Vec::with_capacity(2);
    if s != 0.0 {
        candidates.push(c / s);
        if a != 0.0 {
            candidates.push(s / a);
        }
    } else if a != 0.0 {
        candidates.push((c / a).abs().sqrt());
    }
    let scale = 1.0 + threshold.abs() + xi.abs();
    let mut best: Option<f64> = None;
    for t in candidates {
        if !(t.is_finite() && t > 0.0) {
            continue;
        }
        let on_branch = (xp - u * t) * xi.signum() >= 0.0
            || (trajectory_closed(x0, t, p) - threshold).abs() <= 1e-8 * scale;
        if on_branch && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    let mut t = best.ok_or(Error::NeverArrives { x0, threshold })?;
    for _ in 0..4 {
        let f = trajectory_closed(x0, t, p) - threshold;
        let v = velocity_closed(x0, t, p);
        if v <= 0.0 {
            break;
        }
        let next = t - f / v;
        if (next - t).abs() <= 1e-16 * t {
            t = next;
            break;
        }
        t = next;
    }
    let residual = (trajectory_closed(x0, t, p) - threshold).abs();
    if residual > 1e-9 * scale {
        return Err(Error::NumericalDegeneracy(format!(
            "arrival root from x0 = {x0} misses X = {threshold} by {residual:e}"
        )));
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Numeric integration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub threshold: f64,
    pub time: Option<f64>,
    /// Velocity at the crossing.
    pub velocity: Option<f64>,
    /// ∂x/∂x0 at the crossing (only when the tangent is integrated).
    pub jacobian: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub index: usize,
    pub x0: f64,
    /// `(t, x, v)` triples.
    pub samples: Vec<(f64, f64, f64)>,
    pub arrivals: Vec<Arrival>,
}

impl Trajectory {
    /// First crossing time of `threshold`, if it was tracked and crossed.
    pub fn arrival(&self, threshold: f64) -> Option<f64> {
        self.arrival_record(threshold).and_then(|a| a.time)
    }

    pub fn arrival_record(&self, threshold: f64) -> Option<&Arrival> {
        self.arrivals.iter().find(|a| a.threshold == threshold)
    }

    pub fn endpoint(&self) -> Option<(f64, f64, f64)> {
        self.samples.last().copied()
    }
}

/// Independent variable of the fixed-step scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepping {
    /// Steps of `dt` in t.
    Uniform,
    /// Steps of `dt / scale` in `s = ln(1 + (t - t0)/scale)`: the time step
    /// is `dt` at the start and grows in proportion to the elapsed time,
    /// which keeps late arrivals in heavy tails affordable.
    Logarithmic { scale: f64 },
}

/// Options for [`integrate_trajectory`].
#[derive(Debug, Clone)]
pub struct IntegrationOptions {
    pub dt: f64,
    pub floor: f64,
    /// Positions whose first upward crossing is recorded.
    pub thresholds: Vec<f64>,
    /// Store every n-th step (the final state is always stored); 0 stores
    /// only the endpoints.
    pub record_every: usize,
    /// Stop once every threshold has been crossed.
    pub stop_after_arrivals: bool,
    /// Also integrate ∂x/∂x0 along the path.
    pub tangent: bool,
    pub stepping: Stepping,
}

impl IntegrationOptions {
    pub fn new(dt: f64, floor: f64) -> Self {
        Self {
            dt,
            floor,
            thresholds: Vec::new(),
            record_every: 1,
            stop_after_arrivals: false,
            tangent: false,
            stepping: Stepping::Uniform,
        }
    }
}

/// Fixed-step RK4 integration of `dx/dt = J/ρ` from `(t_span.0, x0)` to
/// `t_span.1`. Threshold crossings are located by cubic Hermite
/// interpolation inside the step.
pub fn integrate_trajectory<F: WaveField + ?Sized>(
    field: &F,
    x0: f64,
    t_span: (f64, f64),
    opts: &IntegrationOptions,
    index: usize,
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(opts.dt > 0.0) || !(t1 >= t0) {
        return Err(Error::Config("integration needs dt > 0 and t1 >= t0".into()));
    }
    let (s_end, ds, scale) = match opts.stepping {
        Stepping::Uniform => (t1 - t0, opts.dt, 0.0),
        Stepping::Logarithmic { scale } => {
            if !(scale > 0.0) {
                return Err(Error::Config("logarithmic stepping needs scale > 0".into()));
            }
            ((1.0 + (t1 - t0) / scale).ln(), opts.dt / scale, scale)
        }
    };
    let time_of = |s: f64| match opts.stepping {
        Stepping::Uniform => t0 + s,
        Stepping::Logarithmic { .. } => t0 + scale * s.exp_m1(),
    };
    let rate = |s: f64| match opts.stepping {
        Stepping::Uniform => 1.0,
        Stepping::Logarithmic { .. } => scale * s.exp(),
    };
    // right-hand side in s: (dx/ds, dg/ds, v)
    let rhs = |s: f64, x: f64, g: f64| -> Result<(f64, f64, f64)> {
        let t = time_of(s);
        let r = rate(s);
        if opts.tangent {
            let (v, dv) = field
                .velocity_and_gradient(x, t, opts.floor)
                .ok_or(Error::NodeCrossing { index, t, x })?;
            Ok((v * r, dv * g * r, v))
        } else {
            let v = field
                .velocity(x, t, opts.floor)
                .ok_or(Error::NodeCrossing { index, t, x })?;
            Ok((v * r, 0.0, v))
        }
    };
    let steps = (s_end / ds).ceil().max(1.0) as usize;
    let h = s_end / steps as f64;
    let mut s = 0.0;
    let mut x = x0;
    let mut g = 1.0;
    let (mut dx, mut dg, mut v) = rhs(s, x, g)?;
    let mut samples = vec![(t0, x, v)];
    let mut arrivals: Vec<Arrival> = opts
        .thresholds
        .iter()
        .map(|&threshold| {
            let hit = x0 == threshold;
            Arrival {
                threshold,
                time: hit.then_some(t0),
                velocity: hit.then_some(v),
                jacobian: (hit && opts.tangent).then_some(1.0),
            }
        })
        .collect();
    let mut t = t0;
    if t1 > t0 {
        for n in 1..=steps {
            let (a1, b1) = (dx, dg);
            let (a2, b2, _) = rhs(s + 0.5 * h, x + 0.5 * h * a1, g + 0.5 * h * b1)?;
            let (a3, b3, _) = rhs(s + 0.5 * h, x + 0.5 * h * a2, g + 0.5 * h * b2)?;
            let (a4, b4, _) = rhs(s + h, x + h * a3, g + h * b3)?;
            let x_new = x + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            let g_new = g + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            let s_new = n as f64 * h;
            let (dx_new, dg_new, v_new) = rhs(s_new, x_new, g_new)?;
            for a in arrivals.iter_mut().filter(|a| a.time.is_none()) {
                if x < a.threshold && x_new >= a.threshold {
                    let sc = hermite_crossing(s, h, x, x_new, dx, dx_new, a.threshold);
                    let tc = time_of(sc);
                    let frac = (sc - s) / h;
                    a.time = Some(tc);
                    a.velocity = field.velocity(a.threshold, tc, opts.floor);
                    if opts.tangent {
                        a.jacobian = Some(g + frac * (g_new - g));
                    }
                }
            }
            x = x_new;
            g = g_new;
            dx = dx_new;
            dg = dg_new;
            v = v_new;
            s = s_new;
            t = if n == steps { t1 } else { time_of(s) };
            if opts.record_every > 0 && (n % opts.record_every == 0 || n == steps) {
                samples.push((t, x, v));
            }
            if opts.stop_after_arrivals && arrivals.iter().all(|a| a.time.is_some()) {
                break;
            }
        }
    }
    if samples.last().map(|p| p.0) != Some(t) {
        samples.push((t, x, v));
    }
    Ok(Trajectory {
        index,
        x0,
        samples,
        arrivals,
    })
}

/// Parameter inside `[s, s + h]` where the cubic Hermite interpolant through
/// `(x0, d0)`, `(x1, d1)` equals `level`.
fn hermite_crossing(s: f64, h: f64, x0: f64, x1: f64, d0: f64, d1: f64, level: f64) -> f64 {
    let p = |r: f64| {
        let r2 = r * r;
        let r3 = r2 * r;
        (2.0 * r3 - 3.0 * r2 + 1.0) * x0
            + (r3 - 2.0 * r2 + r) * h * d0
            + (-2.0 * r3 + 3.0 * r2) * x1
            + (r3 - r2) * h * d1
            - level
    };
    let r = crate::numerics::bisect(p, 0.0, 1.0, 1e-15).unwrap_or_else(|| {
        // monotone data guarantee a bracket; fall back to linear interpolation
        ((level - x0) / (x1 - x0)).clamp(0.0, 1.0)
    });
    s + r * h
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub x0: Vec<f64>,
    pub weights: Vec<f64>,
    pub placement: Placement,
}

impl TrajectoryEnsemble {
    /// `n` initial positions for the packet's initial density.
    ///
    /// `Quantile` places points at the probability midpoints `(i + ½)/n`
    /// with equal weights; `Uniform` uses cell midpoints on ±(extent) with
    /// weights `ρ₀ Δx`; `Random` draws seeded uniform probabilities and maps
    /// them through the quantile function.
    pub fn build(field: &PacketField, n: usize, placement: Placement, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::DegenerateInput("ensemble size must be positive".into()));
        }
        let (lo, hi) = initial_support(field);
        let rho0 = |x: f64| field.density(x, 0.0);
        let (x0, weights) = match placement {
            Placement::Quantile => {
                let table = QuantileTable::new(rho0, lo, hi, 8192);
                let total = table.total();
                let xs: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|i| table.quantile((i as f64 + 0.5) / n as f64))
                    .collect();
                (xs, vec![total / n as f64; n])
            }
            Placement::Uniform => {
                let dx = (hi - lo) / n as f64;
                let xs: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * dx).collect();
                let ws = xs.iter().map(|&x| rho0(x) * dx).collect();
                (xs, ws)
            }
            Placement::Random => {
                let table = QuantileTable::new(rho0, lo, hi, 8192);
                let total = table.total();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut ps: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let xs = ps.par_iter().map(|&p| table.quantile(p)).collect();
                (xs, vec![total / n as f64; n])
            }
        };
        let ens = Self {
            x0,
            weights,
            placement,
        };
        if ens.x0.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::NumericalDegeneracy(
                "ensemble initial positions are not strictly increasing".into(),
            ));
        }
        Ok(ens)
    }

    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let field = PacketField::from_config(config);
        Self::build(
            &field,
            config.numerics.ensemble_size,
            config.numerics.placement,
            config.seed,
        )
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Positions at time `t` under the closed-form Gaussian flow.
    pub fn positions_closed(&self, t: f64, p: &FlowParams) -> Vec<f64> {
        self.x0.iter().map(|&x0| trajectory_closed(x0, t, p)).collect()
    }

    /// Integrates every member in parallel; output order follows the index.
    pub fn integrate<F: WaveField + ?Sized>(
        &self,
        field: &F,
        t_span: (f64, f64),
        opts: &IntegrationOptions,
    ) -> Result<Vec<Trajectory>> {
        self.x0
            .par_iter()
            .enumerate()
            .map(|(i, &x0)| integrate_trajectory(field, x0, t_span, opts, i))
            .collect()
    }
}

/// Interval carrying all but a negligible fraction of the initial density.
pub fn initial_support(field: &PacketField) -> (f64, f64) {
    let c = field.center();
    let half = 14.0 * field.width(0.0) + field.extra_extent();
    (c - half, c + half)
}

// ---------------------------------------------------------------------------
// Spin-term diagnostic
// ---------------------------------------------------------------------------

/// Size of the spin-dependent correction to the guidance equation relative
/// to the ordinary velocity term: `(ħ/2)|∂x log ρ| |s| / |∂x S|`.
///
/// In one dimension the cross product with the spin vector can only shrink
/// the correction, so `|s|` (1 for a pure spin-½ state) gives an upper bound.
/// Returns `+∞` when `∂x S` vanishes.
pub fn spin_term_ratio<F: WaveField + ?Sized>(
    x: f64,
    t: f64,
    field: &F,
    spin_vector: [f64; 3],
    floor: f64,
) -> Result<f64> {
    let [psi, dpsi, _] = field.derivatives(x, t);
    let rho = psi.norm_sqr();
    if rho <= floor {
        return Err(Error::PhaseUndefined { x, t, rho });
    }
    let l = dpsi / psi;
    let s = spin_vector.iter().map(|c| c * c).sum::<f64>().sqrt();
    let num = l.re.abs() * s;
    if num == 0.0 {
        return Ok(0.0);
    }
    if l.im == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(num / l.im.abs())
}

/// Largest spin-term ratio over `|x - c - ut| ≤ 3σ_t` and times from 0 to
/// the passage of the packet through the rotator.
pub fn spin_term_max(config: &RunConfig) -> Result<f64> {
    let field = PacketField::from_config(config);
    let u = config.packet.u;
    if u <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let floor = config.numerics.phase_floor;
    let t_end = 1.5 * (config.rotator.d + 3.0 * field.width(0.0) - config.packet.center).max(0.0) / u;
    let nt = 48;
    let nx = 61;
    let mut worst: f64 = 0.0;
    for i in 0..=nt {
        let t = t_end * i as f64 / nt as f64;
        let w = field.width(t);
        for j in 0..nx {
            let x = field.mean_position(t) - 3.0 * w + 6.0 * w * j as f64 / (nx - 1) as f64;
            match spin_term_ratio(x, t, &field, [1.0, 0.0, 0.0], floor) {
                Ok(r) => worst = worst.max(r),
                Err(Error::PhaseUndefined { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(worst)
}
