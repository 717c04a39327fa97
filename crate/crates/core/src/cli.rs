//! Subcommand implementations behind the `emsbench` binary: generate,
//! train, assess, sweep and validate-config.
//!
//! Each run writes a `manifest-<command>.json` holding the full config text
//! and every derived seed; re-running a command from its manifest
//! reproduces the CSV outputs byte for byte. Wall-clock timings go to
//! `timings.json`, which is deliberately outside that guarantee.
//!
//! Exit codes: 0 success, 2 config error, 3 solver non-convergence,
//! 4 runtime abort.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::config::{derive_seed, ExperimentConfig};
use crate::io::{self, RunManifest};
use crate::pipeline::{self, build_offline, run_assessment, run_sweep, PipelineError};
use crate::problem::Problem;
use crate::scenarios::ScenarioRole;
use crate::sddp::TrainStatus;
use crate::sim::cost_difference_histogram;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NON_CONVERGENCE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Environment variable that re-roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "EMSBENCH_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training stopped at the iteration limit with relative gap {gap:.6}")]
    NonConvergence { gap: f64 },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::NonConvergence { .. } => EXIT_NON_CONVERGENCE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => CliError::Config(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Load a config from a TOML file or from a previous run's manifest.
pub fn load_config(
    config_path: Option<&Path>,
    manifest_path: Option<&Path>,
) -> Result<ExperimentConfig, CliError> {
    let text = match (config_path, manifest_path) {
        (_, Some(m)) => io::read_manifest(m).map_err(|e| CliError::Config(e.to_string()))?.config_toml,
        (Some(c), None) => std::fs::read_to_string(c)
            .map_err(|e| CliError::Config(format!("{}: {e}", c.display())))?,
        (None, None) => return Err(CliError::Config("pass --config or --manifest".into())),
    };
    ExperimentConfig::from_toml_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

/// Output directory after the environment root override.
pub fn output_dir(config: &ExperimentConfig) -> PathBuf {
    let dir = PathBuf::from(&config.output_dir);
    match std::env::var(OUTPUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() && dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

fn manifest_for(
    config: &ExperimentConfig,
    command: &str,
    derived_seeds: BTreeMap<String, u64>,
    policies: Vec<String>,
    outputs: Vec<String>,
) -> RunManifest {
    let config_toml = config.to_toml_string();
    RunManifest {
        tool: "emsbench".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        git_revision: io::git_revision(),
        command: command.into(),
        seed: config.seed,
        config_sha256: io::config_sha256(&config_toml),
        config_toml,
        derived_seeds,
        policies,
        sddp_online_model: config.sddp.online_model.clone(),
        mpc_tail_mode: config.mpc.tail_mode.clone(),
        outputs,
    }
}

/// Write demand scenarios, weather, tariffs and the solar profile.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<(), CliError> {
    let dir = output_dir(config);
    io::ensure_dir(&dir)?;
    let (problem, opt, assess, seeds) = pipeline::prepare_scenarios(config)?;
    io::write_scenarios_csv(&dir.join("scenarios_optimization.csv"), &opt)?;
    io::write_scenarios_csv(&dir.join("scenarios_assessment.csv"), &assess)?;
    io::write_weather_csv(&dir.join("weather.csv"), &problem.weather)?;
    io::write_tariffs_csv(&dir.join("tariffs.csv"), &problem.costs)?;
    io::write_solar_mu_csv(&dir.join("solar_mu.csv"), &config.build_solar_mu())?;
    let outputs = vec![
        "scenarios_optimization.csv".into(),
        "scenarios_assessment.csv".into(),
        "weather.csv".into(),
        "tariffs.csv".into(),
        "solar_mu.csv".into(),
    ];
    io::write_manifest(
        &dir.join("manifest-generate.json"),
        &manifest_for(config, "generate", seeds, vec![], outputs),
    )?;
    Ok(())
}

/// Rebuild the problem reading weather and tariffs from the run directory,
/// honoring any edits made to those files after `generate`.
fn problem_from_dir(config: &ExperimentConfig, dir: &Path) -> Result<Arc<Problem>, CliError> {
    let weather = io::read_weather_csv(&dir.join("weather.csv"))?;
    let costs = io::read_tariffs_csv(&dir.join("tariffs.csv"), config.costs.kappa)?;
    let problem = Problem {
        grid: config.build_grid(),
        params: config.build_params(),
        costs,
        weather,
        x0: config.build_initial_state(),
    };
    problem.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Arc::new(problem))
}

fn artifacts_from_dir(
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<(pipeline::OfflineArtifacts, BTreeMap<String, u64>), CliError> {
    let problem = problem_from_dir(config, dir)?;
    let opt = io::read_scenarios_csv(
        &dir.join("scenarios_optimization.csv"),
        ScenarioRole::Optimization,
    )
    .map_err(|e| CliError::Runtime(format!("run `generate` first: {e}")))?;
    let assess =
        io::read_scenarios_csv(&dir.join("scenarios_assessment.csv"), ScenarioRole::Assessment)
            .map_err(|e| CliError::Runtime(format!("run `generate` first: {e}")))?;
    let mut seeds = BTreeMap::new();
    seeds.insert("scenarios".to_string(), derive_seed(config.seed, "scenarios"));
    let artifacts = build_offline(config, problem, opt, assess, seeds)?;
    let derived = artifacts.derived_seeds.clone();
    Ok((artifacts, derived))
}

/// Train value functions and write them with the bound log.
pub fn cmd_train(config: &ExperimentConfig) -> Result<(), CliError> {
    let dir = output_dir(config);
    io::ensure_dir(&dir)?;
    let (artifacts, seeds) = artifacts_from_dir(config, &dir)?;
    io::write_value_functions_file(&dir.join("value_functions.bin"), &artifacts.trained.functions)?;
    io::write_training_log_csv(&dir.join("training_log.csv"), &artifacts.trained.log)?;
    let outputs = vec!["value_functions.bin".into(), "training_log.csv".into()];
    io::write_manifest(
        &dir.join("manifest-train.json"),
        &manifest_for(config, "train", seeds, vec![], outputs),
    )?;
    if let TrainStatus::IterationLimit { gap } = artifacts.trained.status {
        return Err(CliError::NonConvergence { gap });
    }
    Ok(())
}

/// Assess the selected policies out of sample and write all report files.
pub fn cmd_assess(config: &ExperimentConfig, policies: &[String]) -> Result<(), CliError> {
    let names: Vec<String> = if policies.is_empty() {
        vec!["sddp".into(), "mpc".into(), "rule".into()]
    } else {
        policies.to_vec()
    };
    for n in &names {
        if !matches!(n.as_str(), "sddp" | "mpc" | "rule") {
            return Err(CliError::Config(format!("unknown policy '{n}'")));
        }
    }
    let dir = output_dir(config);
    io::ensure_dir(&dir)?;
    if !dir.join("value_functions.bin").exists() {
        return Err(CliError::Runtime(format!(
            "{} is missing; run `train` first",
            dir.join("value_functions.bin").display()
        )));
    }
    let (artifacts, seeds) = artifacts_from_dir(config, &dir)?;
    // The serialized functions are authoritative for the policy; reloading
    // also exercises the file interface.
    let mut artifacts = artifacts;
    artifacts.trained.functions =
        io::read_value_functions_file(&dir.join("value_functions.bin"))?;
    let out = run_assessment(config, artifacts, &names)?;

    io::write_report_csv(&dir.join("report.csv"), &out.report)?;
    io::write_pairwise_csv(&dir.join("pairwise.csv"), &out.report)?;
    io::write_trajectories_csv(&dir.join("trajectories.csv"), &out.trajectories)?;
    let mut outputs: Vec<String> =
        vec!["report.csv".into(), "pairwise.csv".into(), "trajectories.csv".into()];
    let pair = &config.report.histogram_pair;
    if pair.len() == 2 && names.contains(&pair[0]) && names.contains(&pair[1]) {
        let h = cost_difference_histogram(
            &out.report,
            &pair[0],
            &pair[1],
            config.report.histogram_bins,
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        io::write_histogram_csv(&dir.join("histogram.csv"), &h)?;
        outputs.push("histogram.csv".into());
    }

    let timings: BTreeMap<String, serde_json::Value> = out
        .report
        .stats
        .iter()
        .map(|s| {
            (
                s.name.clone(),
                serde_json::json!({
                    "offline_seconds": s.offline_seconds,
                    "online_ms_per_decision": s.online_ms_per_decision,
                }),
            )
        })
        .collect();
    std::fs::write(
        dir.join("timings.json"),
        serde_json::to_string_pretty(&timings).expect("timings serialize"),
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    io::write_manifest(
        &dir.join("manifest-assess.json"),
        &manifest_for(config, "assess", seeds, names, outputs),
    )?;
    Ok(())
}

/// Solar-noise sensitivity sweep.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<(), CliError> {
    let dir = output_dir(config);
    io::ensure_dir(&dir)?;
    let out = run_sweep(config)?;
    io::write_sweep_csv(&dir.join("sweep.csv"), &out.rows)?;
    io::write_manifest(
        &dir.join("manifest-sweep.json"),
        &manifest_for(
            config,
            "sweep",
            out.per_level_seeds,
            config.sweep.policies.clone(),
            vec!["sweep.csv".into()],
        ),
    )?;
    if let Some((sigma, gap)) = out.non_converged.first() {
        eprintln!("sweep level sigma={sigma} stopped at its iteration limit");
        return Err(CliError::NonConvergence { gap: *gap });
    }
    Ok(())
}

/// Parse, validate and describe a config.
pub fn cmd_validate_config(config: &ExperimentConfig) -> Result<String, CliError> {
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(format!(
        "config ok: day={}, horizon={} steps of {} h, tank capacity {:.3} kWh, output '{}'",
        config.day.label(),
        config.grid.horizon_steps,
        config.grid.delta_hours,
        config.tank_capacity_kwh(),
        output_dir(config).display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.horizon_steps = 12;
        cfg.scenarios.n_optimization = 30;
        cfg.scenarios.n_assessment = 8;
        cfg.quantization.atoms = 3;
        cfg.sddp.max_iterations = 20;
        cfg.sddp.ub_eval_scenarios = 16;
        cfg.sddp.ub_check_period = 5;
        cfg.sddp.gap_tolerance = 0.05;
        cfg.mpc.tail_iterations = 30;
        cfg.report.max_trajectories = 3;
        cfg.output_dir = dir.to_string_lossy().into_owned();
        cfg
    }

    #[test]
    fn generate_is_idempotent_and_assess_replays_from_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&tmp.path().join("run"));
        cmd_generate(&cfg).unwrap();
        let dir = output_dir(&cfg);
        let bytes = std::fs::read(dir.join("scenarios_optimization.csv")).unwrap();
        cmd_generate(&cfg).unwrap();
        assert_eq!(bytes, std::fs::read(dir.join("scenarios_optimization.csv")).unwrap());

        cmd_train(&cfg).unwrap();
        cmd_assess(&cfg, &[]).unwrap();
        let report1 = std::fs::read(dir.join("report.csv")).unwrap();
        let traj1 = std::fs::read(dir.join("trajectories.csv")).unwrap();

        // Replay from the manifest alone.
        let replayed =
            load_config(None, Some(&dir.join("manifest-assess.json"))).unwrap();
        assert_eq!(replayed, cfg);
        cmd_assess(&replayed, &[]).unwrap();
        assert_eq!(report1, std::fs::read(dir.join("report.csv")).unwrap());
        assert_eq!(traj1, std::fs::read(dir.join("trajectories.csv")).unwrap());
    }

    #[test]
    fn assess_without_training_fails_cleanly() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&tmp.path().join("run"));
        cmd_generate(&cfg).unwrap();
        let err = cmd_assess(&cfg, &[]).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_RUNTIME);
        assert!(err.to_string().contains("train"));
    }

    #[test]
    fn policy_subset_is_honored() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&tmp.path().join("run"));
        cmd_generate(&cfg).unwrap();
        cmd_train(&cfg).unwrap();
        cmd_assess(&cfg, &["rule".into(), "sddp".into()]).unwrap();
        let report =
            std::fs::read_to_string(output_dir(&cfg).join("report.csv")).unwrap();
        assert!(report.contains("rule"));
        assert!(report.contains("sddp"));
        assert!(!report.contains("mpc"));
    }

    #[test]
    fn bad_policy_name_is_a_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&tmp.path().join("run"));
        let err = cmd_assess(&cfg, &["dance".into()]).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        assert!(err.to_string().contains("dance"));
    }
}
