//! End-to-end orchestration: build offline artifacts from a config, roll the
//! policies through the assessment scenarios, and run the solar-noise sweep.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::config::{derive_seed, ConfigError, ExperimentConfig};
use crate::physics::Uncertainty;
use crate::policy::{
    quantize_ar_residuals, train_mpc_tail_with_forecaster, ForecastSource, MpcPolicy,
    OnlineModel, Policy, RuleBasedPolicy, SddpPolicy, TailMode,
};
use crate::problem::Problem;
use crate::scenarios::{
    fit_ar1, generate_split, net_scenarios_from_solar, quantize_scenarios, sample_solar,
    Ar1Model, DiscreteDistribution, ScenarioError, ScenarioRole, ScenarioSet,
};
use crate::sddp::{train, SddpError, TrainStatus, TrainedValueFunctions};
use crate::sim::{benchmark, simulate, BenchmarkReport, SimError, SimulationResult};
use crate::io::SweepRow;
use crate::value_fn::PolyhedralFunction;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sddp(#[from] SddpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Other(String),
}

/// How many optimization scenarios diversify the deterministic-tail cuts.
const TAIL_POOL: usize = 48;

/// Everything the online policies need, trained from one config.
pub struct OfflineArtifacts {
    pub problem: Arc<Problem>,
    pub opt_scenarios: ScenarioSet,
    pub assess_scenarios: ScenarioSet,
    pub dists: Arc<Vec<DiscreteDistribution>>,
    pub ar: Ar1Model,
    pub col_means: Vec<Uncertainty>,
    pub trained: TrainedValueFunctions,
    pub tail_cuts: Option<Arc<Vec<PolyhedralFunction>>>,
    pub sddp_offline_seconds: f64,
    pub mpc_offline_seconds: f64,
    pub derived_seeds: BTreeMap<String, u64>,
}

/// Generate the optimization/assessment split for the config's day.
pub fn prepare_scenarios(
    config: &ExperimentConfig,
) -> Result<(Arc<Problem>, ScenarioSet, ScenarioSet, BTreeMap<String, u64>), PipelineError> {
    config.validate()?;
    let problem = Arc::new(config.build_problem()?);
    let profile = config.build_demand_profile();
    let seed = derive_seed(config.seed, "scenarios");
    let (opt, assess) = generate_split(
        &profile,
        &problem.grid,
        config.scenarios.n_optimization,
        config.scenarios.n_assessment,
        seed,
    )?;
    let mut seeds = BTreeMap::new();
    seeds.insert("scenarios".to_string(), seed);
    Ok((problem, opt, assess, seeds))
}

/// Fit distributions and train all offline artifacts on the given split.
pub fn build_offline(
    config: &ExperimentConfig,
    problem: Arc<Problem>,
    opt: ScenarioSet,
    assess: ScenarioSet,
    mut seeds: BTreeMap<String, u64>,
) -> Result<OfflineArtifacts, PipelineError> {
    let quant_seed = derive_seed(config.seed, "quantization");
    seeds.insert("quantization".to_string(), quant_seed);
    let dists = Arc::new(quantize_scenarios(&opt, config.quantization.atoms, quant_seed)?);

    let sddp_cfg = config.build_sddp_config();
    seeds.insert("sddp".to_string(), sddp_cfg.rng_seed);
    let started = Instant::now();
    let trained = train(&problem, &dists, &sddp_cfg)?;
    let sddp_offline_seconds = started.elapsed().as_secs_f64();

    let ar = fit_ar1(&opt)?;
    let col_means = opt.column_means();
    let started = Instant::now();
    let tail_cuts = if config.mpc.tail_mode == "cuts" {
        let pool: Vec<Vec<Uncertainty>> =
            opt.scenarios.iter().take(TAIL_POOL).cloned().collect();
        Some(Arc::new(train_mpc_tail_with_forecaster(
            &problem,
            &col_means,
            &pool,
            Some(&ar),
            config.mpc.tail_iterations,
        )?))
    } else {
        None
    };
    let mpc_offline_seconds = started.elapsed().as_secs_f64();

    Ok(OfflineArtifacts {
        problem,
        opt_scenarios: opt,
        assess_scenarios: assess,
        dists,
        ar,
        col_means,
        trained,
        tail_cuts,
        sddp_offline_seconds,
        mpc_offline_seconds,
        derived_seeds: seeds,
    })
}

/// Convenience: scenarios plus offline artifacts in one go.
pub fn build_all(config: &ExperimentConfig) -> Result<OfflineArtifacts, PipelineError> {
    let (problem, opt, assess, seeds) = prepare_scenarios(config)?;
    build_offline(config, problem, opt, assess, seeds)
}

pub fn make_policy(
    config: &ExperimentConfig,
    artifacts: &OfflineArtifacts,
    name: &str,
) -> Result<Box<dyn Policy>, PipelineError> {
    let problem = artifacts.problem.clone();
    match name {
        "sddp" => {
            let online = match config.sddp.online_model.as_str() {
                "ar_conditional" => OnlineModel::ArConditional {
                    ar: artifacts.ar.clone(),
                    residual_dists: quantize_ar_residuals(
                        &artifacts.opt_scenarios,
                        &artifacts.ar,
                        config.quantization.atoms,
                        derive_seed(config.seed, "online-residuals"),
                    )?,
                },
                _ => OnlineModel::Offline,
            };
            Ok(Box::new(SddpPolicy::new(
                problem,
                Arc::new(artifacts.trained.functions.clone()),
                artifacts.dists.clone(),
                online,
            )?))
        }
        "mpc" => {
            let forecaster = ForecastSource::ArMeans {
                ar: artifacts.ar.clone(),
                col_means: artifacts.col_means.clone(),
            };
            let tail = match &artifacts.tail_cuts {
                Some(cuts) => TailMode::Cuts(cuts.clone()),
                None => TailMode::Exact,
            };
            Ok(Box::new(MpcPolicy::new(problem, forecaster, tail)))
        }
        "rule" => Ok(Box::new(RuleBasedPolicy::new(
            problem,
            config.rule_h_target(),
            config.rule.margin_c,
        ))),
        other => Err(PipelineError::Other(format!("unknown policy '{other}'"))),
    }
}

pub struct AssessOutput {
    pub report: BenchmarkReport,
    pub trajectories: Vec<SimulationResult>,
    pub artifacts: OfflineArtifacts,
}

/// Benchmark the named policies on the assessment scenarios, collecting the
/// first `max_trajectories` rollouts per policy for inspection.
pub fn run_assessment(
    config: &ExperimentConfig,
    artifacts: OfflineArtifacts,
    policy_names: &[String],
) -> Result<AssessOutput, PipelineError> {
    let policies: Vec<Box<dyn Policy>> = policy_names
        .iter()
        .map(|n| make_policy(config, &artifacts, n))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&dyn Policy> = policies.iter().map(|p| p.as_ref()).collect();
    let mut report = benchmark(&refs, &artifacts.assess_scenarios, &artifacts.problem)?;
    for s in report.stats.iter_mut() {
        s.offline_seconds = match s.name.as_str() {
            "sddp" => artifacts.sddp_offline_seconds,
            "mpc" => artifacts.mpc_offline_seconds,
            _ => 0.0,
        };
    }

    let keep = config.report.max_trajectories.min(artifacts.assess_scenarios.len());
    let mut trajectories = Vec::with_capacity(keep * refs.len());
    for policy in &refs {
        for (id, scenario) in artifacts.assess_scenarios.scenarios[..keep].iter().enumerate() {
            trajectories.push(simulate(*policy, scenario, &artifacts.problem, id)?);
        }
    }
    Ok(AssessOutput { report, trajectories, artifacts })
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub per_level_seeds: BTreeMap<String, u64>,
    /// (sigma, policy) relative gap reports for levels whose training hit
    /// the iteration cap.
    pub non_converged: Vec<(f64, f64)>,
}

/// Solar-noise sensitivity sweep: for each noise level, rebuild scenarios
/// (deterministic demand means, noisy solar), retrain the offline artifacts
/// and benchmark the selected policies on fresh assessment scenarios.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutput, PipelineError> {
    config.validate()?;
    let problem = Arc::new(config.build_problem()?);
    let profile = config.build_demand_profile();
    let t_len = problem.horizon();
    let mean_el: Vec<f64> = profile.mean_el.clone();
    let mean_th: Vec<f64> = (0..t_len).map(|t| profile.mean_th(t)).collect();

    let mut rows = Vec::new();
    let mut per_level_seeds = BTreeMap::new();
    let mut non_converged = Vec::new();
    for (level, &sigma) in config.sweep.sigma_values.iter().enumerate() {
        let solar = config.build_solar_model(sigma);
        let opt_seed = derive_seed(config.seed, &format!("sweep-opt-{level}"));
        let assess_seed = derive_seed(config.seed, &format!("sweep-assess-{level}"));
        per_level_seeds.insert(format!("sweep-opt-{level}"), opt_seed);
        per_level_seeds.insert(format!("sweep-assess-{level}"), assess_seed);

        let opt_solar = sample_solar(&solar, config.sweep.n_optimization, opt_seed)?;
        let assess_solar = sample_solar(&solar, config.sweep.n_assessment, assess_seed)?;
        let opt = net_scenarios_from_solar(
            &mean_el,
            &mean_th,
            &opt_solar.scenarios,
            ScenarioRole::Optimization,
        );
        let assess = net_scenarios_from_solar(
            &mean_el,
            &mean_th,
            &assess_solar.scenarios,
            ScenarioRole::Assessment,
        );

        let mut level_config = config.clone();
        level_config.seed = derive_seed(config.seed, &format!("sweep-level-{level}"));
        let artifacts =
            build_offline(&level_config, problem.clone(), opt, assess, BTreeMap::new())?;
        if let TrainStatus::IterationLimit { gap } = artifacts.trained.status {
            non_converged.push((sigma, gap));
        }

        let policies: Vec<Box<dyn Policy>> = config
            .sweep
            .policies
            .iter()
            .map(|n| make_policy(&level_config, &artifacts, n))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&dyn Policy> = policies.iter().map(|p| p.as_ref()).collect();
        let report = benchmark(&refs, &artifacts.assess_scenarios, &artifacts.problem)?;
        for s in &report.stats {
            rows.push(SweepRow {
                sigma_final: sigma,
                policy: s.name.clone(),
                mean_cost: s.mean,
                ci95_half: s.ci_half,
            });
        }
    }
    Ok(SweepOutput { rows, per_level_seeds, non_converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A small config that keeps pipeline tests quick.
    pub(crate) fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.horizon_steps = 16;
        cfg.grid.delta_hours = 0.25;
        cfg.scenarios.n_optimization = 40;
        cfg.scenarios.n_assessment = 12;
        cfg.quantization.atoms = 3;
        cfg.sddp.max_iterations = 25;
        cfg.sddp.ub_eval_scenarios = 20;
        cfg.sddp.ub_check_period = 5;
        cfg.sddp.gap_tolerance = 0.02;
        cfg.mpc.tail_iterations = 40;
        cfg.report.max_trajectories = 4;
        cfg
    }

    #[test]
    fn full_pipeline_runs_and_is_deterministic() {
        let cfg = tiny_config();
        let names = vec!["sddp".to_string(), "mpc".to_string(), "rule".to_string()];
        let out1 = run_assessment(&cfg, build_all(&cfg).unwrap(), &names).unwrap();
        let out2 = run_assessment(&cfg, build_all(&cfg).unwrap(), &names).unwrap();
        assert_eq!(out1.report.stats.len(), 3);
        for (a, b) in out1.report.stats.iter().zip(&out2.report.stats) {
            assert_eq!(a.mean.to_bits(), b.mean.to_bits(), "{} mean must reproduce", a.name);
            assert_eq!(a.ci_half.to_bits(), b.ci_half.to_bits());
        }
        assert_eq!(out1.trajectories.len(), 3 * 4);
    }

    #[test]
    fn sweep_emits_one_row_per_level_and_policy() {
        let mut cfg = tiny_config();
        cfg.sweep.sigma_values = vec![0.0, 0.1];
        cfg.sweep.n_optimization = 30;
        cfg.sweep.n_assessment = 10;
        let out = run_sweep(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2 * 2);
        for &sigma in &[0.0, 0.1] {
            for name in ["sddp", "mpc"] {
                assert!(
                    out.rows.iter().any(|r| r.sigma_final == sigma && r.policy == name),
                    "missing row ({sigma}, {name})"
                );
            }
        }
        assert!(out.per_level_seeds.len() == 4);
    }
}
