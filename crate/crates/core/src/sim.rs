//! Out-of-sample assessment: closed-loop rollouts, paired policy
//! benchmarks, cost-difference histograms and the supporting statistics.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{dynamics, Control, State, Uncertainty};
use crate::policy::{Policy, PolicyContext};
use crate::problem::{admissible_box, final_cost, net_import, stage_cost, Problem};
use crate::scenarios::ScenarioSet;
use crate::sddp::SddpError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("policy '{policy}' failed at step {t} of scenario {scenario}: {source}")]
    PolicyFailure {
        policy: String,
        scenario: usize,
        t: usize,
        #[source]
        source: SddpError,
    },
    #[error("policy '{policy}' returned an inadmissible control at step {t} of scenario {scenario}: {detail}")]
    Inadmissible { policy: String, scenario: usize, t: usize, detail: String },
    #[error("bad benchmark input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UnservedEvent {
    pub t: usize,
    pub kwh: f64,
}

/// One closed-loop rollout of a policy along a scenario.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub policy: String,
    pub scenario_id: usize,
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub net_imports: Vec<f64>,
    pub stage_costs: Vec<f64>,
    pub final_cost: f64,
    pub total_cost: f64,
    pub unserved_hw: Vec<UnservedEvent>,
    pub decide_nanos: u64,
}

const ADMISSIBLE_TOL: f64 = 1e-6;

/// Roll a policy through one scenario. The policy sees only the past: the
/// context hands it the current state and the history up to `t`, never the
/// scenario tail.
pub fn simulate(
    policy: &dyn Policy,
    scenario: &[Uncertainty],
    problem: &Problem,
    scenario_id: usize,
) -> Result<SimulationResult, SimError> {
    let t_len = problem.horizon();
    if scenario.len() != t_len {
        return Err(SimError::BadInput(format!(
            "scenario {scenario_id} has {} steps, horizon is {t_len}",
            scenario.len()
        )));
    }
    let p = &problem.params;
    let mut states = Vec::with_capacity(t_len + 1);
    let mut controls: Vec<Control> = Vec::with_capacity(t_len);
    let mut net_imports = Vec::with_capacity(t_len);
    let mut stage_costs = Vec::with_capacity(t_len);
    let mut unserved_hw = Vec::new();
    let mut decide_nanos = 0u64;
    let mut x = problem.x0;
    states.push(x);

    for t in 0..t_len {
        let ctx = PolicyContext {
            t,
            state: x,
            history: &scenario[..t],
            prev_control: controls.last().copied(),
        };
        let started = Instant::now();
        let u = policy.decide(&ctx).map_err(|source| SimError::PolicyFailure {
            policy: policy.name().to_string(),
            scenario: scenario_id,
            t,
            source,
        })?;
        decide_nanos += started.elapsed().as_nanos() as u64;

        let bx = admissible_box(&x, p, &problem.grid).map_err(|e| SimError::PolicyFailure {
            policy: policy.name().to_string(),
            scenario: scenario_id,
            t,
            source: e.into(),
        })?;
        if !bx.contains(&u, ADMISSIBLE_TOL) {
            return Err(SimError::Inadmissible {
                policy: policy.name().to_string(),
                scenario: scenario_id,
                t,
                detail: format!("{u:?} outside {bx:?}"),
            });
        }

        let w = scenario[t];
        stage_costs.push(stage_cost(&x, &u, &w, t, &problem.costs, &problem.grid));
        net_imports.push(net_import(&u, &w));
        let mut x1 = dynamics(&x, &u, &w, &problem.weather.at(t), p, &problem.grid);
        x1.b = x1.b.clamp(p.b_min, p.b_max);
        if x1.h < 0.0 {
            unserved_hw.push(UnservedEvent { t, kwh: -x1.h });
            x1.h = 0.0;
        }
        x1.h = x1.h.min(p.h_max);
        controls.push(u);
        x = x1;
        states.push(x);
    }

    let final_cost = final_cost(&x, &problem.x0, problem.costs.kappa);
    let total_cost = stage_costs.iter().sum::<f64>() + final_cost;
    Ok(SimulationResult {
        policy: policy.name().to_string(),
        scenario_id,
        states,
        controls,
        net_imports,
        stage_costs,
        final_cost,
        total_cost,
        unserved_hw,
        decide_nanos,
    })
}

/// Streaming mean/variance accumulator (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation (n - 1 denominator).
    pub fn std_dev(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// Half-width of the 95% confidence interval: 1.96·σ/√n.
pub fn ci_half_width(std_dev: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        1.96 * std_dev / (n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyStats {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub ci_half: f64,
    pub online_ms_per_decision: f64,
    /// Offline preparation time; filled in by the caller that trained the
    /// policy's artifacts.
    pub offline_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseStats {
    pub a: String,
    pub b: String,
    pub mean_diff: f64,
    /// Fraction of scenarios where `a` costs strictly less, ties split.
    pub beat_fraction_a: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub stats: Vec<PolicyStats>,
    pub pairwise: Vec<PairwiseStats>,
    /// `cost_matrix[p][s]`: total cost of policy `p` on scenario `s`.
    pub cost_matrix: Vec<Vec<f64>>,
    pub unserved_events: Vec<usize>,
}

impl BenchmarkReport {
    pub fn policy_index(&self, name: &str) -> Option<usize> {
        self.stats.iter().position(|s| s.name == name)
    }
}

/// Paired out-of-sample comparison: every policy is rolled through the same
/// assessment scenarios.
pub fn benchmark(
    policies: &[&dyn Policy],
    set: &ScenarioSet,
    problem: &Problem,
) -> Result<BenchmarkReport, SimError> {
    if set.len() < 2 {
        return Err(SimError::BadInput(format!("need >= 2 scenarios, got {}", set.len())));
    }
    if policies.is_empty() {
        return Err(SimError::BadInput("no policies".into()));
    }
    let mut cost_matrix = Vec::with_capacity(policies.len());
    let mut stats = Vec::with_capacity(policies.len());
    let mut unserved_events = Vec::with_capacity(policies.len());
    for policy in policies {
        let results: Result<Vec<(f64, u64, usize)>, SimError> = set
            .scenarios
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                simulate(*policy, s, problem, i)
                    .map(|r| (r.total_cost, r.decide_nanos, r.unserved_hw.len()))
            })
            .collect();
        let results = results?;
        let costs: Vec<f64> = results.iter().map(|r| r.0).collect();
        let nanos: u64 = results.iter().map(|r| r.1).sum();
        let unserved: usize = results.iter().map(|r| r.2).sum();
        let mut acc = RunningStats::default();
        for &c in &costs {
            acc.push(c);
        }
        let decisions = (set.len() * problem.horizon()) as f64;
        stats.push(PolicyStats {
            name: policy.name().to_string(),
            n: acc.count(),
            mean: acc.mean(),
            std_dev: acc.std_dev(),
            ci_half: ci_half_width(acc.std_dev(), acc.count()),
            online_ms_per_decision: nanos as f64 / 1e6 / decisions,
            offline_seconds: 0.0,
        });
        cost_matrix.push(costs);
        unserved_events.push(unserved);
    }

    let mut pairwise = Vec::new();
    for a in 0..policies.len() {
        for b in a + 1..policies.len() {
            pairwise.push(pair_stats(
                &stats[a].name,
                &stats[b].name,
                &cost_matrix[a],
                &cost_matrix[b],
            ));
        }
    }
    Ok(BenchmarkReport { stats, pairwise, cost_matrix, unserved_events })
}

fn pair_stats(a: &str, b: &str, costs_a: &[f64], costs_b: &[f64]) -> PairwiseStats {
    let n = costs_a.len() as f64;
    let mean_diff = costs_a.iter().zip(costs_b).map(|(x, y)| x - y).sum::<f64>() / n;
    let mut wins = 0.0;
    for (x, y) in costs_a.iter().zip(costs_b) {
        if x < y {
            wins += 1.0;
        } else if x == y {
            wins += 0.5;
        }
    }
    PairwiseStats { a: a.to_string(), b: b.to_string(), mean_diff, beat_fraction_a: wins / n }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub beat_fraction_a: f64,
}

/// Histogram of per-scenario cost differences `a - b`.
pub fn cost_difference_histogram(
    report: &BenchmarkReport,
    a: &str,
    b: &str,
    bins: usize,
) -> Result<Histogram, SimError> {
    let ia = report
        .policy_index(a)
        .ok_or_else(|| SimError::BadInput(format!("unknown policy '{a}'")))?;
    let ib = report
        .policy_index(b)
        .ok_or_else(|| SimError::BadInput(format!("unknown policy '{b}'")))?;
    if bins == 0 {
        return Err(SimError::BadInput("need at least one bin".into()));
    }
    let diffs: Vec<f64> = report.cost_matrix[ia]
        .iter()
        .zip(&report.cost_matrix[ib])
        .map(|(x, y)| x - y)
        .collect();
    let beat = pair_stats(a, b, &report.cost_matrix[ia], &report.cost_matrix[ib]).beat_fraction_a;
    let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        // Degenerate spread: one spike.
        return Ok(Histogram { edges: vec![lo - 0.5, lo + 0.5], counts: vec![diffs.len()], beat_fraction_a: beat });
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0usize; bins];
    for d in &diffs {
        let k = (((d - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts, beat_fraction_a: beat })
}
