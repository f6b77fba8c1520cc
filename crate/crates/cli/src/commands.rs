use std::path::Path;

use serde_json::json;

use bohmclock::bohm::{arrival_time_closed, trajectory_closed, FlowParams, TrajectoryEnsemble};
use bohmclock::export::{
    larmor_table, observable_table, scan_table, spin_tables, time_dist_table, Table,
};
use bohmclock::scatter::{flux_scan, larmor_scan, log_log_slope, transmitted_spin_state, ScatteringInputs};
use bohmclock::spinclock::{check_omega, observable_curve, pushforward_phi, theta_grid, SpinDistribution};
use bohmclock::timedist::{
    arrival_dist_bohmian, arrival_dist_pcd, dist_distance, numeric_options, transit_time_dist, ArrivalPlan,
    TimeDistribution,
};
use bohmclock::validate::{run_validation, CheckResult, Status};
use bohmclock::wavepacket::{evolve_spectral, PacketField, SpatialGrid, WaveField};
use bohmclock::{check_regime, Error, PacketKind, Placement, Result, RunConfig, TailPolicy};

use crate::emit::{read_manifest, verify_manifest, Emitter};
use crate::plot::{bulk_range, line_chart, Series};

pub fn run(command: &str, config: &RunConfig, out: &Path, plots: bool) -> Result<u8> {
    let mut em = Emitter::new(out, config, plots, command)?;
    match command {
        "packet" => packet(&mut em)?,
        "trajectories" => trajectories(&mut em)?,
        "arrival" => arrival(&mut em)?,
        "transit" => transit(&mut em)?,
        "spin" => spin(&mut em)?,
        "scatter" => scatter(&mut em)?,
        other => return Err(Error::Config(format!("unknown command {other}"))),
    }
    let files = em.finish()?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(0)
}

fn column(t: &Table, i: usize) -> Vec<f64> {
    t.rows.iter().map(|r| r[i]).collect()
}

/// Chart of selected columns of one table against its first column; `clip`
/// trims the abscissa to the bulk of the first selected column.
fn chart(t: &Table, title: &str, y_label: &str, cols: &[usize], clip: bool) -> String {
    let x = column(t, 0);
    let ys: Vec<Vec<f64>> = cols.iter().map(|&c| column(t, c)).collect();
    let series: Vec<Series> = cols
        .iter()
        .zip(&ys)
        .map(|(&c, y)| Series {
            label: &t.columns[c],
            x: &x,
            y,
        })
        .collect();
    let range = if clip { bulk_range(&x, &ys[0], 0.999) } else { None };
    line_chart(title, &t.columns[0], y_label, &series, range)
}

fn packet(em: &mut Emitter) -> Result<()> {
    let config = em.config;
    let field = PacketField::from_config(config);
    let times = &config.output.packet_times;
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let grid = SpatialGrid::for_field(&field, t_max, &config.numerics);
    let (ls, ts) = (config.scales.length, config.scales.time);
    for (i, &t) in times.iter().enumerate() {
        let state = evolve_spectral(&field, t, &grid)?;
        let boundary = state.boundary_ratio();
        if boundary > config.numerics.norm_tol {
            return Err(Error::GridTooSmall {
                ratio: boundary,
                suggested_half_width: 2.0 * grid.half_width() * ls,
            });
        }
        let x = state.positions();
        let rho = state.density();
        let j = state.current();
        let s = state.phase_profile(config.numerics.phase_floor);
        let mut table = Table::new(&format!("packet_t{i}"), &["x", "rho", "J", "S"]).with_metadata(json!({
            "t": t * ts,
            "norm": state.norm(),
            "boundary_ratio": boundary,
            "mean_position": field.mean_position(t) * ls,
            "width": field.width(t) * ls,
        }));
        for k in 0..x.len() {
            table.push(vec![x[k] * ls, rho[k] / ls, j[k] / ts, s[k]]);
        }
        em.table(&table)?;
        let svg = chart(&table, &format!("packet at t = {}", t * ts), "density", &[1], false);
        em.svg(&table.name, svg)?;
    }
    Ok(())
}

/// Latest time of interest: arrival window at the exit if defined, else a
/// few spreading times.
fn horizon(config: &RunConfig, field: &PacketField) -> f64 {
    match ArrivalPlan::new(field, config.rotator.d, &config.numerics) {
        Ok(plan) => plan.t_hi,
        Err(_) => 10.0 * config.units.mass * config.packet.sigma0.powi(2) / config.units.hbar,
    }
}

fn entry_exit_gaussian(x0: f64, d: f64, p: &FlowParams) -> (f64, f64) {
    let cross = |x: f64| arrival_time_closed(x0, x, p).unwrap_or(f64::NAN);
    let entry = if x0 >= 0.0 {
        if x0 <= d { 0.0 } else { f64::NAN }
    } else {
        cross(0.0)
    };
    let exit = if x0 > d { f64::NAN } else { cross(d) };
    (entry, exit)
}

fn trajectories(em: &mut Emitter) -> Result<()> {
    let config = em.config;
    let field = PacketField::from_config(config);
    let d = config.rotator.d;
    let (ls, ts) = (config.scales.length, config.scales.time);
    let t_end = horizon(config, &field);
    let gaussian = config.packet.kind == PacketKind::Gaussian;

    // sample paths at evenly spaced probability levels
    let n_paths = config.output.dump_paths.max(1);
    let paths = TrajectoryEnsemble::build(&field, n_paths, Placement::Quantile, config.seed)?;
    let mut opts = numeric_options(config, &field, vec![0.0, d]);
    opts.tangent = false;
    opts.stop_after_arrivals = false;
    opts.record_every = 10;
    let integrated = paths.integrate(&field, (0.0, t_end), &opts)?;
    let flow = if gaussian { Some(FlowParams::from_config(config)?) } else { None };
    let mut table = Table::new("paths", &["index", "x0", "t", "x", "v", "x_closed"]).with_metadata(json!({
        "stepping": "rk4, logarithmic in time",
        "t_end": t_end * ts,
    }));
    for tr in &integrated {
        for &(t, x, v) in &tr.samples {
            let closed = flow.map_or(f64::NAN, |p| trajectory_closed(tr.x0, t, &p));
            table.push(vec![tr.index as f64, tr.x0 * ls, t * ts, x * ls, v * ls / ts, closed * ls]);
        }
    }
    em.table(&table)?;

    // entry and exit times over the whole ensemble
    let mut events = Table::new("entry_exit", &["index", "x0", "weight", "t_entry", "t_exit", "transit"]);
    let push = |events: &mut Table, i: usize, x0: f64, w: f64, entry: f64, exit: f64| {
        events.push(vec![i as f64, x0 * ls, w, entry * ts, exit * ts, (exit - entry) * ts]);
    };
    if let Some(p) = flow {
        let ens = TrajectoryEnsemble::from_config(config)?;
        for (i, (&x0, &w)) in ens.x0.iter().zip(&ens.weights).enumerate() {
            let (entry, exit) = entry_exit_gaussian(x0, d, &p);
            push(&mut events, i, x0, w, entry, exit);
        }
        events.metadata = json!({ "method": "closed form", "members": ens.len() });
    } else {
        let ens = TrajectoryEnsemble::build(
            &field,
            config.numerics.nongaussian_trajectories,
            config.numerics.placement,
            config.seed,
        )?;
        let mut opts = numeric_options(config, &field, vec![0.0, d]);
        opts.tangent = false;
        let runs = ens.integrate(&field, (0.0, t_end), &opts)?;
        for (tr, &w) in runs.iter().zip(&ens.weights) {
            let entry = if tr.x0 >= 0.0 && tr.x0 <= d { 0.0 } else { tr.arrival(0.0).unwrap_or(f64::NAN) };
            let exit = if tr.x0 > d { f64::NAN } else { tr.arrival(d).unwrap_or(f64::NAN) };
            push(&mut events, tr.index, tr.x0, w, entry, exit);
        }
        events.metadata = json!({ "method": "rk4", "members": ens.len() });
    }
    em.table(&events)?;

    if em.plots {
        let groups: Vec<(Vec<f64>, Vec<f64>)> = integrated
            .iter()
            .map(|tr| tr.samples.iter().map(|s| (s.0 * ts, s.1 * ls)).unzip())
            .collect();
        let labels: Vec<String> = integrated.iter().map(|tr| format!("x0 = {:.3}", tr.x0 * ls)).collect();
        let series: Vec<Series> = groups
            .iter()
            .zip(&labels)
            .map(|((x, y), l)| Series { label: l, x, y })
            .collect();
        let u = config.packet.u;
        let range = (u > 0.0).then(|| (0.0, 2.0 * (d - config.packet.center).max(d) / u * ts));
        em.svg("paths", line_chart("Bohmian paths", "t", "x", &series, range))?;
    }
    Ok(())
}

fn arrival(em: &mut Emitter) -> Result<()> {
    let config = em.config;
    let d = config.rotator.d;
    let ts = config.scales.time;
    let bohm = arrival_dist_bohmian(d, config)?;
    let pcd = arrival_dist_pcd(d, config)?;
    let a = time_dist_table("arrival_bohm", &bohm, ts);
    let b = time_dist_table("arrival_pcd", &pcd, ts);
    em.table(&a)?;
    em.table(&b)?;
    let gap = dist_distance(&bohm, &pcd)?;
    em.json(
        "arrival_report",
        &json!({
            "threshold": d * config.scales.length,
            "bohm_vs_pcd": gap,
            "bohm_mean": bohm.mean() * ts,
            "pcd_mean": pcd.mean() * ts,
            "excluded_mass": bohm.excluded_mass,
            "non_arriving_mass": bohm.non_arriving_mass,
            "truncated_mass": bohm.truncated_mass,
            "regime": check_regime(config)?,
        }),
    )?;
    if em.plots {
        let (xa, ya) = (column(&a, 0), column(&a, 2));
        let (xb, yb) = (column(&b, 0), column(&b, 2));
        let series = [
            Series { label: "Bohmian", x: &xa, y: &ya },
            Series { label: "current", x: &xb, y: &yb },
        ];
        let range = bulk_range(&xa, &ya, 0.999);
        em.svg("arrival", line_chart("arrival at x = d", "t", "density", &series, range))?;
    }
    Ok(())
}

fn transit(em: &mut Emitter) -> Result<()> {
    let config = em.config;
    let ts = config.scales.time;
    let tr = transit_time_dist(config)?;
    let table = time_dist_table("transit", &tr, ts);
    em.table(&table)?;
    let atom = tr.excluded_mass + tr.non_arriving_mass;
    let mut with_atom = Table::new("transit_with_atom", &["t", "density"]).with_metadata(json!({
        "policy": "atom",
        "atom_mass": atom,
        "continuous_mass": 1.0 - atom,
    }));
    for row in &table.rows {
        with_atom.push(vec![row[0], row[2] * (1.0 - atom)]);
    }
    em.table(&with_atom)?;
    let arrival_gap = arrival_dist_bohmian(config.rotator.d, config)
        .and_then(|a| dist_distance(&a, &tr))
        .map(|g| json!(g))
        .unwrap_or_else(|e| json!({ "unavailable": e.to_string() }));
    em.json(
        "transit_report",
        &json!({
            "mean": tr.mean() * ts,
            "peak_time": tr.peak().0 * ts,
            "raw_mass": tr.raw_mass(),
            "excluded_mass": tr.excluded_mass,
            "non_arriving_mass": tr.non_arriving_mass,
            "truncated_mass": tr.truncated_mass,
            "vs_arrival_at_exit": arrival_gap,
        }),
    )?;
    em.svg("transit", chart(&table, "transit time", "density", &[2], true))?;
    Ok(())
}

fn spin_outputs(em: &mut Emitter, name: &str, spin: &SpinDistribution, theta: &[f64]) -> Result<()> {
    let config = em.config;
    let (unwrapped, wrapped) = spin_tables(name, spin, config.output.phi_points_per_turn);
    em.table(&unwrapped)?;
    em.table(&wrapped)?;
    let curve = observable_curve(spin, theta, config.numerics.dist_tol)?;
    let obs = observable_table(&format!("{name}_observable"), &curve);
    em.table(&obs)?;
    em.svg(name, chart(&unwrapped, "rotation angle", "density", &[1], true))?;
    em.svg(&obs.name, chart(&obs, "projection probabilities", "probability", &[1, 2], false))?;
    Ok(())
}

fn spin(em: &mut Emitter) -> Result<()> {
    let config = em.config;
    let omega = config.rotator.omega(&config.units);
    check_omega(omega)?;
    let d = config.rotator.d;
    let theta = theta_grid(config.output.theta_points);
    let sources: Vec<(&str, TimeDistribution)> = vec![
        ("transit", transit_time_dist(config)?),
        ("arrival_bohm", arrival_dist_bohmian(d, config)?),
        ("arrival_pcd", arrival_dist_pcd(d, config)?),
    ];
    let mut summary = Vec::new();
    for (src, dist) in &sources {
        for (policy, tag) in [(TailPolicy::Drop, "drop"), (TailPolicy::Atom, "atom")] {
            let spin = pushforward_phi(dist, omega, policy)?;
            let name = format!("spin_{src}_{tag}");
            spin_outputs(em, &name, &spin, &theta)?;
            summary.push(json!({
                "name": name,
                "turns": spin.turns,
                "atom_at_zero": spin.atom_at_zero,
                "mean_phi": spin.mean_phi(),
                "fourier_moment": [spin.fourier_moment().re, spin.fourier_moment().im],
            }));
        }
    }
    em.json("spin_report", &json!({ "omega": omega / config.scales.time, "distributions": summary }))?;
    Ok(())
}

fn scatter(em: &mut Emitter) -> Result<()> {
    let config = em.config;
    let (es, ls) = (config.scales.energy, config.scales.length);
    let mut scan = scan_table("scatter_scan", &flux_scan(config, config.scatter.scan_points)?);
    for row in &mut scan.rows {
        row[0] *= es;
        row[1] *= es;
        row[2] *= ls;
    }
    em.table(&scan)?;
    let limit = larmor_scan(config)?;
    em.table(&larmor_table("larmor_limit", &limit))?;
    let ratio: Vec<f64> = limit.iter().map(|r| r.energy_ratio).collect();
    let slope = |f: fn(&bohmclock::scatter::LarmorLimit) -> f64| {
        let y: Vec<f64> = limit.iter().map(f).collect();
        log_log_slope(&ratio, &y)
    };
    let carrier = ScatteringInputs::at_carrier(config).and_then(|i| transmitted_spin_state(&i).map(|s| (i, s)));
    let carrier = match carrier {
        Ok((i, s)) => json!({
            "energy": i.energy * es,
            "energy_ratio": i.energy_ratio(),
            "C": s.c,
            "D": s.d,
            "phi1": s.phi1,
            "phi2": s.phi2,
        }),
        Err(e) => json!({ "unavailable": e.to_string() }),
    };
    em.json(
        "scatter_report",
        &json!({
            "carrier": carrier,
            "C_deviation_slope": slope(|r| r.c_deviation),
            "D_deviation_slope": slope(|r| r.d_deviation),
            "phase_gap_slope": slope(|r| r.phase_gap),
            "max_flux_error": scan.rows.iter().map(|r| r[10]).fold(0.0, f64::max),
        }),
    )?;
    if em.plots {
        let lx: Vec<f64> = ratio.iter().map(|r| r.log10()).collect();
        let lc: Vec<f64> = limit.iter().map(|r| r.c_deviation.max(1e-300).log10()).collect();
        let ld: Vec<f64> = limit.iter().map(|r| r.d_deviation.max(1e-300).log10()).collect();
        let series = [
            Series { label: "C deviation", x: &lx, y: &lc },
            Series { label: "D deviation", x: &lx, y: &ld },
        ];
        em.svg(
            "larmor_limit",
            line_chart("approach to the Larmor limit", "log10 E/|muB|", "log10 deviation", &series, None),
        )?;
    }
    Ok(())
}

pub fn validate(config: &RunConfig, out: &Path) -> Result<u8> {
    let mut report = run_validation(config);
    if let Some(manifest) = read_manifest(out)? {
        let bad = verify_manifest(out, &manifest);
        report.checks.push(CheckResult {
            name: "manifest".into(),
            status: if bad.is_empty() { Status::Pass } else { Status::Fail },
            value: Some(bad.len() as f64),
            tolerance: Some(0.0),
            detail: if bad.is_empty() {
                format!("{} files verified in {}", manifest.files.len(), out.display())
            } else {
                bad.join("; ")
            },
        });
    }
    for c in &report.checks {
        let status = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
            Status::Info => "INFO",
        };
        let value = c.value.map_or("-".to_string(), |v| format!("{v:.3e}"));
        let tol = c.tolerance.map_or("-".to_string(), |v| format!("{v:.1e}"));
        println!("{status} {:<26} value={value} tol={tol} {}", c.name, c.detail);
    }
    let text = serde_json::to_string_pretty(&report)? + "\n";
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("validation.json"), text)?;
    if report.passed() {
        Ok(0)
    } else {
        eprintln!("validation failed: {} check(s)", report.failures().count());
        Ok(4)
    }
}
