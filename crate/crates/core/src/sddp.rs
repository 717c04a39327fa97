//! Cut-based stochastic dynamic programming: one-stage subproblems as LPs,
//! forward sampling and backward cut passes, and the training loop with the
//! upper/lower-bound stopping rule.
//!
//! The current state enters every stage LP only through right-hand sides, so
//! row duals compose into a subgradient of the stage value with respect to
//! the state. Cut constraints are activated lazily: each atom starts with
//! the cut that supports its predicted next state and violated cuts are
//! pulled in until none remain, which keeps the LPs a fraction of their
//! nominal size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LinearProgram, LpError, LpStatus, Sense};
use crate::physics::{dynamics, thermal_affine, Control, State, Uncertainty};
use crate::problem::{admissible_box, final_cost, stage_cost, Problem, ProblemError};
use crate::scenarios::DiscreteDistribution;
use crate::value_fn::{final_cost_polyhedron, PolyhedralFunction, ValueFnError};

/// Penalty that breaks charge/discharge ties in favor of not cycling the
/// battery; small enough to be invisible at reporting tolerances.
pub const DISCHARGE_TIE_PENALTY: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SddpError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    ValueFn(#[from] ValueFnError),
    #[error("stage {t} subproblem reported {status:?}; this indicates a modeling bug")]
    BadStage { t: usize, status: LpStatus },
    #[error("invalid training input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SddpConfig {
    pub max_iterations: usize,
    /// Relative upper/lower bound gap that stops training.
    pub gap_tolerance: f64,
    /// Scenarios in the frozen upper-bound evaluation set.
    pub ub_eval_scenarios: usize,
    /// Upper bound is evaluated every this many iterations.
    pub ub_check_period: usize,
    pub rng_seed: u64,
    pub forward_passes_per_iteration: usize,
}

impl Default for SddpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            gap_tolerance: 1e-3,
            ub_eval_scenarios: 500,
            ub_check_period: 10,
            rng_seed: 0,
            forward_passes_per_iteration: 1,
        }
    }
}

impl SddpConfig {
    pub fn validate(&self) -> Result<(), SddpError> {
        if !(self.gap_tolerance > 0.0) {
            return Err(SddpError::BadInput(format!("gap_tolerance = {}", self.gap_tolerance)));
        }
        for (name, v) in [
            ("max_iterations", self.max_iterations),
            ("ub_eval_scenarios", self.ub_eval_scenarios),
            ("ub_check_period", self.ub_check_period),
            ("forward_passes_per_iteration", self.forward_passes_per_iteration),
        ] {
            if v < 1 {
                return Err(SddpError::BadInput(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub iteration: usize,
    pub lb: f64,
    pub ub: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrainStatus {
    Converged { iterations: usize, gap: f64 },
    IterationLimit { gap: f64 },
}

/// Value functions produced by training, plus the bound log.
#[derive(Debug, Clone)]
pub struct TrainedValueFunctions {
    /// One function per step, index 0..=T; the last is the final cost.
    pub functions: Vec<PolyhedralFunction>,
    pub log: Vec<TrainingRecord>,
    pub status: TrainStatus,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

/// A stage LP plus the right-hand-side gradients needed to assemble the
/// state subgradient from row duals.
pub struct StageLp {
    pub lp: LinearProgram,
    rhs_grads: Vec<[f64; 4]>,
    num_atoms: usize,
    crash_basis: Vec<usize>,
}

impl StageLp {
    /// Subgradient of the optimal value with respect to the entering state.
    pub fn subgradient(&self, duals: &[f64]) -> [f64; 4] {
        let mut g = [0.0; 4];
        for (y, grad) in duals.iter().zip(&self.rhs_grads) {
            if *y != 0.0 {
                for k in 0..4 {
                    g[k] += y * grad[k];
                }
            }
        }
        g
    }

    fn control_from(&self, primal: &[f64]) -> Control {
        Control::new(primal[0] - primal[1], primal[2], primal[3])
    }

    fn rho_values<'a>(&self, primal: &'a [f64]) -> &'a [f64] {
        &primal[5 + self.num_atoms..5 + 2 * self.num_atoms]
    }
}

/// Build the one-stage LP at `(t, x)` against `v_next`, including only the
/// cut indices listed per atom in `active`. Pass all indices to get the
/// complete subproblem.
fn build_stage_lp(
    t: usize,
    x: &State,
    dist: &DiscreteDistribution,
    v_next: &PolyhedralFunction,
    active: &[Vec<usize>],
    problem: &Problem,
) -> Result<StageLp, SddpError> {
    if dist.is_empty() {
        return Err(SddpError::BadInput("empty distribution".into()));
    }
    if v_next.is_empty() {
        return Err(SddpError::ValueFn(ValueFnError::EmptyCuts));
    }
    let p = &problem.params;
    let grid = &problem.grid;
    let costs = &problem.costs;
    let dt = grid.delta_hours;
    let th = thermal_affine(p, &problem.weather.at(t), grid);
    let s = dist.len();

    let mut lp = LinearProgram::new();
    let fbp = lp.add_var(0.0, 0.0, p.fb_max);
    let fbn = lp.add_var(DISCHARGE_TIE_PENALTY, 0.0, p.fb_max);
    let fw = lp.add_var(0.0, 0.0, p.fw_max);
    let fh = lp.add_var(0.0, 0.0, p.fh_max);
    let dcf = lp.add_var(costs.price_discomfort[t], 0.0, f64::INFINITY);
    let fne: Vec<usize> = dist
        .weights
        .iter()
        .map(|pw| lp.add_var(pw * costs.price_elec[t] * dt, 0.0, f64::INFINITY))
        .collect();
    let rho: Vec<usize> = dist
        .weights
        .iter()
        .map(|pw| lp.add_var(*pw, f64::NEG_INFINITY, f64::INFINITY))
        .collect();

    let mut rhs_grads: Vec<[f64; 4]> = Vec::new();
    let mut crash_basis: Vec<usize> = Vec::new();

    // Battery next-stock bounds (state-dependent box).
    let batt = [(fbp, dt * p.rho_c), (fbn, -dt / p.rho_d)];
    lp.add_row(Sense::Le, p.b_max - x.b, &batt);
    rhs_grads.push([-1.0, 0.0, 0.0, 0.0]);
    crash_basis.push(lp.slack_index(0));
    lp.add_row(Sense::Ge, p.b_min - x.b, &batt);
    rhs_grads.push([-1.0, 0.0, 0.0, 0.0]);
    crash_basis.push(lp.slack_index(1));

    // Tank headroom at zero demand.
    lp.add_row(Sense::Le, p.h_max - x.h, &[(fw, dt * p.beta_h)]);
    rhs_grads.push([0.0, -1.0, 0.0, 0.0]);
    crash_basis.push(lp.slack_index(2));

    // Discomfort epigraph on the current indoor temperature.
    let dis_rhs = costs.temp_setpoint[t] - x.theta_i;
    lp.add_row(Sense::Ge, dis_rhs, &[(dcf, 1.0)]);
    rhs_grads.push([0.0, 0.0, 0.0, -1.0]);
    crash_basis.push(if dis_rhs > 0.0 { dcf } else { lp.slack_index(3) });

    // Load balance epigraph per atom.
    for (i, w) in dist.atoms.iter().enumerate() {
        lp.add_row(
            Sense::Ge,
            w.d_el_net,
            &[(fne[i], 1.0), (fbp, -1.0), (fbn, 1.0), (fw, -1.0), (fh, -1.0)],
        );
        rhs_grads.push([0.0; 4]);
        let r = lp.num_rows() - 1;
        crash_basis.push(if w.d_el_net > 0.0 { fne[i] } else { lp.slack_index(r) });
    }

    // Cut epigraphs. The next state is substituted into each cut, splitting
    // into control coefficients (left) and state-dependent constants (right).
    let cuts = v_next.cuts();
    for (i, w) in dist.atoms.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        let base = lp.num_rows();
        for (slot, &j) in active[i].iter().enumerate() {
            let c = &cuts[j];
            let lam = c.lambda;
            let rhs = c.beta
                + lam[0] * x.b
                + lam[1] * (x.h - dt * w.d_th)
                + lam[2] * (th.a_ww * x.theta_w + th.a_wi * x.theta_i + th.r_w)
                + lam[3] * (th.a_iw * x.theta_w + th.a_ii * x.theta_i + th.r_i);
            lp.add_row(
                Sense::Ge,
                rhs,
                &[
                    (rho[i], 1.0),
                    (fbp, -lam[0] * dt * p.rho_c),
                    (fbn, lam[0] * dt / p.rho_d),
                    (fw, -lam[1] * dt * p.beta_h),
                    (fh, -(lam[2] * th.b_w + lam[3] * th.b_i)),
                ],
            );
            rhs_grads.push([
                lam[0],
                lam[1],
                lam[2] * th.a_ww + lam[3] * th.a_iw,
                lam[2] * th.a_wi + lam[3] * th.a_ii,
            ]);
            if best.map_or(true, |(_, b)| rhs > b) {
                best = Some((slot, rhs));
            }
        }
        // rho carries the tightest cut at rest; other cut rows keep slacks.
        let (best_slot, _) = best.expect("each atom needs at least one active cut");
        for slot in 0..active[i].len() {
            crash_basis.push(if slot == best_slot { rho[i] } else { lp.slack_index(base + slot) });
        }
    }

    Ok(StageLp { lp, rhs_grads, num_atoms: s, crash_basis })
}

/// The complete one-stage subproblem (all cuts of `v_next` included).
pub fn stage_subproblem(
    t: usize,
    x: &State,
    dist: &DiscreteDistribution,
    v_next: &PolyhedralFunction,
    problem: &Problem,
) -> Result<StageLp, SddpError> {
    let all: Vec<Vec<usize>> = vec![(0..v_next.len()).collect(); dist.len()];
    build_stage_lp(t, x, dist, v_next, &all, problem)
}

/// Solution of one stage subproblem.
#[derive(Debug, Clone, Copy)]
pub struct StageSolution {
    pub control: Control,
    /// Expected stage cost plus expected approximate cost-to-go.
    pub objective: f64,
    /// Subgradient of `objective` with respect to the entering state.
    pub subgradient: [f64; 4],
}

/// Solve the stage subproblem by lazy cut activation.
pub fn solve_stage(
    t: usize,
    x: &State,
    dist: &DiscreteDistribution,
    v_next: &PolyhedralFunction,
    problem: &Problem,
) -> Result<StageSolution, SddpError> {
    let box_ = admissible_box(x, &problem.params, &problem.grid)?;
    let grid = &problem.grid;
    let params = &problem.params;
    let exo = problem.weather.at(t);

    // Seed each atom with the cut supporting its zero-control prediction.
    let mut active: Vec<Vec<usize>> = dist
        .atoms
        .iter()
        .map(|w| {
            let x1 = dynamics(x, &Control::ZERO, w, &exo, params, grid);
            let (j, _) = v_next.argmax(&x1.as_array()).expect("nonempty cuts");
            vec![j]
        })
        .collect();

    let total_cuts = v_next.len();
    let max_rounds = total_cuts * dist.len() + 2;
    for _ in 0..max_rounds {
        let stage = build_stage_lp(t, x, dist, v_next, &active, problem)?;
        let sol = lp::solve_with_basis(&stage.lp, &stage.crash_basis)?;
        if sol.status != LpStatus::Optimal {
            return Err(SddpError::BadStage { t, status: sol.status });
        }
        let u = box_.clamp(&stage.control_from(&sol.primal));
        let rho = stage.rho_values(&sol.primal);
        let mut added = false;
        for (i, w) in dist.atoms.iter().enumerate() {
            let x1 = dynamics(x, &u, w, &exo, params, grid).as_array();
            let (j, v) = v_next.argmax(&x1).expect("nonempty cuts");
            if v > rho[i] + 1e-9 * rho[i].abs().max(1.0) && !active[i].contains(&j) {
                active[i].push(j);
                added = true;
            }
        }
        if !added {
            return Ok(StageSolution {
                control: u,
                objective: sol.objective,
                subgradient: stage.subgradient(&sol.duals),
            });
        }
    }
    Err(SddpError::BadInput("cut activation failed to settle".into()))
}

/// One closed-loop trajectory: states visited, controls applied and realized
/// costs along a scenario.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub stage_costs: Vec<f64>,
    pub final_cost: f64,
    pub total_cost: f64,
}

/// Advance the plant one step, absorbing numerical drift at the stock
/// bounds and clamping an emptied tank at zero (unserved demand).
pub fn advance_state(
    x: &State,
    u: &Control,
    w: &Uncertainty,
    t: usize,
    problem: &Problem,
) -> State {
    let p = &problem.params;
    let mut x1 = dynamics(x, u, w, &problem.weather.at(t), p, &problem.grid);
    x1.b = x1.b.clamp(p.b_min, p.b_max);
    if x1.h < 0.0 {
        x1.h = 0.0;
    }
    if x1.h > p.h_max {
        x1.h = p.h_max;
    }
    x1
}

/// Forward pass: greedy decisions against the current value functions along
/// one scenario.
pub fn forward_pass(
    vfs: &[PolyhedralFunction],
    dists: &[DiscreteDistribution],
    scenario: &[Uncertainty],
    problem: &Problem,
) -> Result<Trajectory, SddpError> {
    let t_len = problem.horizon();
    debug_assert_eq!(scenario.len(), t_len);
    let mut states = Vec::with_capacity(t_len + 1);
    let mut controls = Vec::with_capacity(t_len);
    let mut stage_costs = Vec::with_capacity(t_len);
    let mut x = problem.x0;
    states.push(x);
    for t in 0..t_len {
        let sol = solve_stage(t, &x, &dists[t], &vfs[t + 1], problem)?;
        let w = scenario[t];
        stage_costs.push(stage_cost(&x, &sol.control, &w, t, &problem.costs, &problem.grid));
        controls.push(sol.control);
        x = advance_state(&x, &sol.control, &w, t, problem);
        states.push(x);
    }
    let final_cost = final_cost(&x, &problem.x0, problem.costs.kappa);
    let total_cost = stage_costs.iter().sum::<f64>() + final_cost;
    Ok(Trajectory { states, controls, stage_costs, final_cost, total_cost })
}

/// Backward pass: re-solve along the visited states with the updated next-
/// step functions and append one cut per step. New cuts are tight at the
/// visited state.
pub fn backward_pass(
    vfs: &mut [PolyhedralFunction],
    dists: &[DiscreteDistribution],
    trajectory: &Trajectory,
    problem: &Problem,
) -> Result<(), SddpError> {
    let t_len = problem.horizon();
    for t in (0..t_len).rev() {
        let x = &trajectory.states[t];
        let sol = solve_stage(t, x, &dists[t], &vfs[t + 1], problem)?;
        let lam = sol.subgradient;
        let beta = sol.objective
            - (lam[0] * x.b + lam[1] * x.h + lam[2] * x.theta_w + lam[3] * x.theta_i);
        vfs[t].add_cut(lam, beta)?;
        debug_assert!(
            (vfs[t].evaluate(&x.as_array()).unwrap() - sol.objective).abs()
                <= 1e-7 * sol.objective.abs().max(1.0),
            "new cut must be tight at the visited state"
        );
    }
    Ok(())
}

/// Draw a stagewise-independent scenario from the per-step distributions.
pub fn sample_scenario(dists: &[DiscreteDistribution], rng: &mut ChaCha8Rng) -> Vec<Uncertainty> {
    dists.iter().map(|d| d.sample(rng)).collect()
}

/// Train value functions: forward/backward iterations with the relative
/// gap stopping rule evaluated on a frozen scenario set.
pub fn train(
    problem: &Problem,
    dists: &[DiscreteDistribution],
    config: &SddpConfig,
) -> Result<TrainedValueFunctions, SddpError> {
    config.validate()?;
    problem.validate()?;
    let t_len = problem.horizon();
    if dists.len() != t_len {
        return Err(SddpError::BadInput(format!(
            "{} distributions for horizon {t_len}",
            dists.len()
        )));
    }

    // Stage costs are nonnegative, so zero is a valid initial lower bound;
    // the last function is the exact final-cost polyhedron.
    let mut vfs: Vec<PolyhedralFunction> =
        (0..t_len).map(|_| PolyhedralFunction::constant(0.0)).collect();
    vfs.push(final_cost_polyhedron(problem.x0.b, problem.x0.h, problem.costs.kappa));

    let mut rng_fwd = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut rng_ub = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x9E37_79B9_7F4A_7C15);
    let ub_scenarios: Vec<Vec<Uncertainty>> =
        (0..config.ub_eval_scenarios).map(|_| sample_scenario(dists, &mut rng_ub)).collect();

    let x0 = problem.x0.as_array();
    let mut log = Vec::new();
    let mut lb = f64::NEG_INFINITY;
    let mut last_ub = f64::INFINITY;
    let mut status = None;

    for iteration in 1..=config.max_iterations {
        for _ in 0..config.forward_passes_per_iteration {
            let scenario = sample_scenario(dists, &mut rng_fwd);
            let trajectory = forward_pass(&vfs, dists, &scenario, problem)?;
            backward_pass(&mut vfs, dists, &trajectory, problem)?;
        }
        let new_lb = vfs[0].evaluate(&x0)?;
        debug_assert!(new_lb >= lb - 1e-9 * lb.abs().max(1.0), "lower bound decreased");
        lb = new_lb;

        let check = iteration % config.ub_check_period == 0 || iteration == config.max_iterations;
        if check {
            let costs: Result<Vec<f64>, SddpError> = ub_scenarios
                .par_iter()
                .map(|s| forward_pass(&vfs, dists, s, problem).map(|tr| tr.total_cost))
                .collect();
            let costs = costs?;
            let ub = costs.iter().sum::<f64>() / costs.len() as f64;
            last_ub = ub;
            // The upper bound is only known through its Monte Carlo
            // estimate, so the stopping test compares the lower bound
            // against the lower edge of the estimate's 95% interval.
            let gap = statistical_gap(lb, &costs);
            log.push(TrainingRecord { iteration, lb, ub: Some(ub), gap: Some(gap) });
            if gap < config.gap_tolerance {
                status = Some(TrainStatus::Converged { iterations: iteration, gap });
                break;
            }
        } else {
            log.push(TrainingRecord { iteration, lb, ub: None, gap: None });
        }
    }

    let gap = log.iter().rev().find_map(|r| r.gap).unwrap_or(f64::INFINITY);
    Ok(TrainedValueFunctions {
        functions: vfs,
        log,
        status: status.unwrap_or(TrainStatus::IterationLimit { gap }),
        lower_bound: lb,
        upper_bound: last_ub,
    })
}

pub fn relative_gap(lb: f64, ub: f64) -> f64 {
    if ub.abs() < 1e-12 {
        if (ub - lb).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ub - lb) / ub.abs()
    }
}

/// Relative gap between the lower bound and the lower edge of the 95%
/// interval around the simulated upper bound.
pub fn statistical_gap(lb: f64, costs: &[f64]) -> f64 {
    let n = costs.len() as f64;
    let ub = costs.iter().sum::<f64>() / n;
    let half = if costs.len() > 1 {
        let var = costs.iter().map(|c| (c - ub).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    relative_gap(lb, ub - half)
}
