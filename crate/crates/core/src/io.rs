//! File formats: the CSV schemas exchanged between subcommands, the value-
//! function file and the JSON run manifest.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! written file parses back to bit-identical values and reruns produce
//! byte-identical output.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::physics::{Uncertainty, WeatherTrace};
use crate::problem::CostParams;
use crate::scenarios::{ScenarioRole, ScenarioSet};
use crate::sddp::TrainingRecord;
use crate::sim::{BenchmarkReport, Histogram, SimulationResult};
use crate::value_fn::{self, PolyhedralFunction};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad format at line {line}: {detail}")]
    Format { path: PathBuf, line: usize, detail: String },
    #[error(transparent)]
    ValueFn(#[from] value_fn::ValueFnError),
    #[error("{path}: {detail}")]
    Manifest { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

pub fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64, IoError> {
    field.trim().parse().map_err(|_| IoError::Format {
        path: path.to_path_buf(),
        line,
        detail: format!("expected a number, got '{field}'"),
    })
}

/// `scenario_id,step,d_el_net,d_th`
pub fn write_scenarios_csv(path: &Path, set: &ScenarioSet) -> Result<(), IoError> {
    let mut out = String::from("scenario_id,step,d_el_net,d_th\n");
    for (id, s) in set.scenarios.iter().enumerate() {
        for (t, w) in s.iter().enumerate() {
            out.push_str(&format!("{id},{t},{},{}\n", w.d_el_net, w.d_th));
        }
    }
    write_text(path, &out)
}

pub fn read_scenarios_csv(path: &Path, role: ScenarioRole) -> Result<ScenarioSet, IoError> {
    let text = read_text(path)?;
    let mut scenarios: Vec<Vec<Uncertainty>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let id: usize = fields[0].trim().parse().map_err(|_| IoError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            detail: "bad scenario id".into(),
        })?;
        if id == scenarios.len() {
            scenarios.push(Vec::new());
        }
        if id >= scenarios.len() {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                detail: "scenario ids must be contiguous".into(),
            });
        }
        let d_el = parse_f64(path, i + 1, fields[2])?;
        let d_th = parse_f64(path, i + 1, fields[3])?;
        scenarios[id].push(Uncertainty::new(d_el, d_th));
    }
    Ok(ScenarioSet { scenarios, role })
}

/// `step,theta_e,phi_int,phi_ext`
pub fn write_weather_csv(path: &Path, w: &WeatherTrace) -> Result<(), IoError> {
    let mut out = String::from("step,theta_e,phi_int,phi_ext\n");
    for t in 0..w.theta_e.len() {
        out.push_str(&format!("{t},{},{},{}\n", w.theta_e[t], w.phi_int[t], w.phi_ext[t]));
    }
    write_text(path, &out)
}

pub fn read_weather_csv(path: &Path) -> Result<WeatherTrace, IoError> {
    let text = read_text(path)?;
    let mut w = WeatherTrace { theta_e: vec![], phi_int: vec![], phi_ext: vec![] };
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("expected 4 fields, got {}", f.len()),
            });
        }
        w.theta_e.push(parse_f64(path, i + 1, f[1])?);
        w.phi_int.push(parse_f64(path, i + 1, f[2])?);
        w.phi_ext.push(parse_f64(path, i + 1, f[3])?);
    }
    Ok(w)
}

/// `step,price_elec,price_discomfort,temp_setpoint`
pub fn write_tariffs_csv(path: &Path, costs: &CostParams) -> Result<(), IoError> {
    let mut out = String::from("step,price_elec,price_discomfort,temp_setpoint\n");
    for t in 0..costs.price_elec.len() {
        out.push_str(&format!(
            "{t},{},{},{}\n",
            costs.price_elec[t], costs.price_discomfort[t], costs.temp_setpoint[t]
        ));
    }
    write_text(path, &out)
}

/// Reads a tariff table; `kappa` is not part of the CSV and is supplied by
/// the caller.
pub fn read_tariffs_csv(path: &Path, kappa: f64) -> Result<CostParams, IoError> {
    let text = read_text(path)?;
    let mut costs = CostParams {
        price_elec: vec![],
        price_discomfort: vec![],
        temp_setpoint: vec![],
        kappa,
    };
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("expected 4 fields, got {}", f.len()),
            });
        }
        costs.price_elec.push(parse_f64(path, i + 1, f[1])?);
        costs.price_discomfort.push(parse_f64(path, i + 1, f[2])?);
        costs.temp_setpoint.push(parse_f64(path, i + 1, f[3])?);
    }
    Ok(costs)
}

/// `step,mu_kw`
pub fn write_solar_mu_csv(path: &Path, mu: &[f64]) -> Result<(), IoError> {
    let mut out = String::from("step,mu_kw\n");
    for (t, v) in mu.iter().enumerate() {
        out.push_str(&format!("{t},{v}\n"));
    }
    write_text(path, &out)
}

/// `iteration,lb,ub,gap` (ub and gap empty on iterations without a bound
/// check).
pub fn write_training_log_csv(path: &Path, log: &[TrainingRecord]) -> Result<(), IoError> {
    let mut out = String::from("iteration,lb,ub,gap\n");
    for r in log {
        let ub = r.ub.map(|v| v.to_string()).unwrap_or_default();
        let gap = r.gap.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{ub},{gap}\n", r.iteration, r.lb));
    }
    write_text(path, &out)
}

pub fn write_value_functions_file(
    path: &Path,
    functions: &[PolyhedralFunction],
) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    value_fn::write_value_functions(&mut out, functions)?;
    out.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_value_functions_file(path: &Path) -> Result<Vec<PolyhedralFunction>, IoError> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    Ok(value_fn::read_value_functions(&mut file)?)
}

/// `policy,n,mean_cost,std_dev,ci95_half`
pub fn write_report_csv(path: &Path, report: &BenchmarkReport) -> Result<(), IoError> {
    let mut out = String::from("policy,n,mean_cost,std_dev,ci95_half\n");
    for s in &report.stats {
        out.push_str(&format!("{},{},{},{},{}\n", s.name, s.n, s.mean, s.std_dev, s.ci_half));
    }
    write_text(path, &out)
}

/// `policy_a,policy_b,mean_diff,beat_fraction_a`
pub fn write_pairwise_csv(path: &Path, report: &BenchmarkReport) -> Result<(), IoError> {
    let mut out = String::from("policy_a,policy_b,mean_diff,beat_fraction_a\n");
    for p in &report.pairwise {
        out.push_str(&format!("{},{},{},{}\n", p.a, p.b, p.mean_diff, p.beat_fraction_a));
    }
    write_text(path, &out)
}

/// `policy,scenario_id,step,b,h,theta_w,theta_i,f_b,f_w,f_h,f_ne,cost`
pub fn write_trajectories_csv(path: &Path, runs: &[SimulationResult]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "policy,scenario_id,step,b,h,theta_w,theta_i,f_b,f_w,f_h,f_ne,cost")
        .map_err(io_err(path))?;
    for r in runs {
        for t in 0..r.controls.len() {
            let x = &r.states[t];
            let u = &r.controls[t];
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.policy,
                r.scenario_id,
                t,
                x.b,
                x.h,
                x.theta_w,
                x.theta_i,
                u.f_b,
                u.f_w,
                u.f_h,
                r.net_imports[t],
                r.stage_costs[t]
            )
            .map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}

/// `bin_lo,bin_hi,count`
pub fn write_histogram_csv(path: &Path, h: &Histogram) -> Result<(), IoError> {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{c}\n", h.edges[k], h.edges[k + 1]));
    }
    write_text(path, &out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_final: f64,
    pub policy: String,
    pub mean_cost: f64,
    pub ci95_half: f64,
}

/// `sigma_t,policy,mean_cost,ci95_half`
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), IoError> {
    let mut out = String::from("sigma_t,policy,mean_cost,ci95_half\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.sigma_final, r.policy, r.mean_cost, r.ci95_half));
    }
    write_text(path, &out)
}

/// Everything needed to replay a run bit-for-bit: the full config text, the
/// seeds derived from it and the command that produced the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub git_revision: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config_toml: String,
    pub derived_seeds: BTreeMap<String, u64>,
    pub policies: Vec<String>,
    pub sddp_online_model: String,
    pub mpc_tail_mode: String,
    pub outputs: Vec<String>,
}

pub fn config_sha256(config_toml: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_toml.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| IoError::Manifest {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    write_text(path, &text)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Manifest {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
