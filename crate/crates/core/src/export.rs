//! CSV tables with a single header row, each paired with a JSON sidecar
//! carrying the config digest, unit mode, tolerances and table metadata.
//!
//! Numbers are written with Rust's shortest round-trip `{:e}` formatting, so
//! identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::scatter::{LarmorLimit, ScanRow};
use crate::spinclock::{ObservableCurve, SpinDistribution};
use crate::timedist::TimeDistribution;

/// Numeric table ready to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub metadata: Value,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            metadata: Value::Object(Default::default()),
        }
    }

    pub fn with_metadata(mut self, metadata: Value) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:e}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    table: &'a str,
    file: String,
    columns: &'a [String],
    rows: usize,
    config_digest: String,
    units_mode: &'a crate::config::UnitMode,
    tolerances: Value,
    metadata: &'a Value,
}

fn tolerances(config: &RunConfig) -> Value {
    let n = &config.numerics;
    json!({
        "norm_tol": n.norm_tol,
        "ft_tol": n.ft_tol,
        "ce_tol": n.ce_tol,
        "fd_tol": n.fd_tol,
        "traj_tol": n.traj_tol,
        "dist_tol": n.dist_tol,
        "hist_tol": n.hist_tol,
        "quad_tol": n.quad_tol,
    })
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`; returns both paths.
pub fn write_table(dir: &Path, table: &Table, config: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", table.name));
    let json_path = dir.join(format!("{}.json", table.name));
    fs::write(&csv_path, table.to_csv())?;
    let sidecar = Sidecar {
        table: &table.name,
        file: format!("{}.csv", table.name),
        columns: &table.columns,
        rows: table.rows.len(),
        config_digest: config.digest(),
        units_mode: &config.units.mode,
        tolerances: tolerances(config),
        metadata: &table.metadata,
    };
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Serialization(e.to_string()))?;
    fs::write(&json_path, text + "\n")?;
    Ok(vec![csv_path, json_path])
}

/// `(t, density_raw, density_norm, cdf)`; histograms use bin centres.
pub fn time_dist_table(name: &str, dist: &TimeDistribution, time_scale: f64) -> Table {
    let mut t = Table::new(name, &["t", "density_raw", "density_norm", "cdf"]).with_metadata(json!({
        "kind": dist.kind.label(),
        "histogram": dist.is_histogram(),
        "excluded_mass": dist.excluded_mass,
        "non_arriving_mass": dist.non_arriving_mass,
        "truncated_mass": dist.truncated_mass,
        "raw_mass": dist.raw_mass(),
        "mean": dist.mean() * time_scale,
        "time_scale": time_scale,
    }));
    let cdf = dist.cdf();
    for i in 0..dist.support.len() {
        t.push(vec![
            dist.support[i] * time_scale,
            dist.density_raw[i] / time_scale,
            dist.density[i] / time_scale,
            cdf[i],
        ]);
    }
    t
}

/// `(phi, density)` unwrapped plus the view folded into one turn.
pub fn spin_tables(name: &str, spin: &SpinDistribution, points_per_turn: usize) -> (Table, Table) {
    let meta = json!({
        "source": spin.source.label(),
        "turns": spin.turns,
        "atom_at_zero": spin.atom_at_zero,
        "policy": spin.policy,
        "omega": spin.omega,
        "mean_phi": spin.mean_phi(),
    });
    let mut unwrapped = Table::new(name, &["phi", "density"]).with_metadata(meta.clone());
    let (phi, dens) = spin.unwrapped_view(points_per_turn);
    for (p, d) in phi.into_iter().zip(dens) {
        unwrapped.push(vec![p, d]);
    }
    let mut wrapped = Table::new(&format!("{name}_wrapped"), &["phi", "density"]).with_metadata(meta);
    let (phi, dens) = spin.wrapped_view(points_per_turn);
    for (p, d) in phi.into_iter().zip(dens) {
        wrapped.push(vec![p, d]);
    }
    (unwrapped, wrapped)
}

pub fn observable_table(name: &str, curve: &ObservableCurve) -> Table {
    let mut t = Table::new(name, &["theta", "P_plus", "P_minus"]).with_metadata(json!({
        "source": curve.source.label(),
        "turns": curve.turns,
        "atom_at_zero": curve.atom_at_zero,
        "visibility": curve.visibility(),
        "max_sum_error": curve.max_sum_error(),
    }));
    for i in 0..curve.theta.len() {
        t.push(vec![curve.theta[i], curve.p_plus[i], curve.p_minus[i]]);
    }
    t
}

pub fn scan_table(name: &str, rows: &[ScanRow]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "E", "muB", "d", "T_minus", "T_plus", "C", "D", "phi1", "phi2", "fidelity_vs_larmor",
            "flux_error", "closed_form_gap",
        ],
    );
    for r in rows {
        t.push(vec![
            r.energy,
            r.mu_b,
            r.d,
            r.t_minus,
            r.t_plus,
            r.c,
            r.d_mod,
            r.phi1,
            r.phi2,
            r.fidelity_vs_larmor,
            r.flux_error,
            r.closed_form_gap,
        ]);
    }
    t
}

pub fn larmor_table(name: &str, rows: &[LarmorLimit]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "energy_ratio", "C_deviation", "D_deviation", "phi1", "phi1_lim", "phi2", "phi2_lim",
            "phase_gap", "fidelity", "applicable",
        ],
    );
    for r in rows {
        t.push(vec![
            r.energy_ratio,
            r.c_deviation,
            r.d_deviation,
            r.phi1,
            r.phi1_lim,
            r.phi2,
            r.phi2_lim,
            r.phase_gap,
            r.fidelity,
            if r.applicable { 1.0 } else { 0.0 },
        ]);
    }
    t
}
