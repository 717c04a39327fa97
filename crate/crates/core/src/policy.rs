//! The three online policies behind one interface: cut-based state feedback,
//! receding-horizon deterministic optimization, and a thermostat-style rule.
//!
//! A policy is a pure function of the decision time, the current state and
//! the observed noise history (plus its own frozen offline artifacts), which
//! is what makes the out-of-sample comparison fair: future scenario values
//! are structurally out of reach.

use std::sync::Arc;

use crate::deterministic::solve_horizon;
use crate::physics::{Control, State, Uncertainty};
use crate::problem::{admissible_box, Problem};
use crate::scenarios::{forecast_with_means, Ar1Model, DiscreteDistribution};
use crate::sddp::{forward_pass, solve_stage, SddpError};
use crate::value_fn::{final_cost_polyhedron, PolyhedralFunction};

/// Everything a policy may look at when deciding.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub t: usize,
    pub state: State,
    /// Observed noise, `history[k]` realized over `[k, k+1)`; length == t.
    pub history: &'a [Uncertainty],
    /// Previous decision, if any (itself a function of the history).
    pub prev_control: Option<Control>,
}

pub trait Policy: Sync + Send {
    fn name(&self) -> &str;
    fn decide(&self, ctx: &PolicyContext) -> Result<Control, SddpError>;
}

/// How the cut-based policy models the next step's noise online.
#[derive(Debug, Clone)]
pub enum OnlineModel {
    /// Reuse the offline per-step distributions.
    Offline,
    /// Recenter quantized AR residuals on the one-step prediction from the
    /// latest observation.
    ArConditional { ar: Ar1Model, residual_dists: Vec<DiscreteDistribution> },
}

impl OnlineModel {
    pub fn label(&self) -> &'static str {
        match self {
            OnlineModel::Offline => "offline",
            OnlineModel::ArConditional { .. } => "ar_conditional",
        }
    }
}

pub struct SddpPolicy {
    problem: Arc<Problem>,
    functions: Arc<Vec<PolyhedralFunction>>,
    offline_dists: Arc<Vec<DiscreteDistribution>>,
    online: OnlineModel,
}

impl SddpPolicy {
    pub fn new(
        problem: Arc<Problem>,
        functions: Arc<Vec<PolyhedralFunction>>,
        offline_dists: Arc<Vec<DiscreteDistribution>>,
        online: OnlineModel,
    ) -> Result<Self, SddpError> {
        if functions.len() != problem.horizon() + 1 {
            return Err(SddpError::BadInput(format!(
                "{} value functions for horizon {}",
                functions.len(),
                problem.horizon()
            )));
        }
        if offline_dists.len() != problem.horizon() {
            return Err(SddpError::BadInput("distribution count != horizon".into()));
        }
        Ok(Self { problem, functions, offline_dists, online })
    }

    fn online_dist(&self, ctx: &PolicyContext) -> DiscreteDistribution {
        match &self.online {
            OnlineModel::Offline => self.offline_dists[ctx.t].clone(),
            OnlineModel::ArConditional { ar, residual_dists } => {
                let (Some(w_t), true) = (ctx.history.last(), ctx.t > 0) else {
                    return self.offline_dists[ctx.t].clone();
                };
                let pred_el = ar.alpha[ctx.t][0] * w_t.d_el_net + ar.beta[ctx.t][0];
                let pred_th = ar.alpha[ctx.t][1] * w_t.d_th + ar.beta[ctx.t][1];
                let res = &residual_dists[ctx.t];
                let atoms = res
                    .atoms
                    .iter()
                    .map(|e| Uncertainty::new(pred_el + e.d_el_net, (pred_th + e.d_th).max(0.0)))
                    .collect();
                DiscreteDistribution { atoms, weights: res.weights.clone() }
            }
        }
    }
}

impl Policy for SddpPolicy {
    fn name(&self) -> &str {
        "sddp"
    }

    fn decide(&self, ctx: &PolicyContext) -> Result<Control, SddpError> {
        let dist = self.online_dist(ctx);
        let sol = solve_stage(ctx.t, &ctx.state, &dist, &self.functions[ctx.t + 1], &self.problem)?;
        Ok(sol.control)
    }
}

/// Quantize per-step AR residuals over the optimization scenarios (input to
/// the conditional online model).
pub fn quantize_ar_residuals(
    set: &crate::scenarios::ScenarioSet,
    ar: &Ar1Model,
    s: usize,
    seed: u64,
) -> Result<Vec<DiscreteDistribution>, SddpError> {
    let t_len = set.horizon();
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let points: Vec<Vec<f64>> = set
            .scenarios
            .iter()
            .map(|sc| {
                if t == 0 {
                    vec![sc[0].d_el_net - ar.beta[0][0], sc[0].d_th - ar.beta[0][1]]
                } else {
                    vec![
                        sc[t].d_el_net - ar.alpha[t][0] * sc[t - 1].d_el_net - ar.beta[t][0],
                        sc[t].d_th - ar.alpha[t][1] * sc[t - 1].d_th - ar.beta[t][1],
                    ]
                }
            })
            .collect();
        let q = crate::scenarios::lloyd_max_quantize(&points, s, seed.wrapping_add(t as u64))
            .map_err(|e| SddpError::BadInput(e.to_string()))?;
        let atoms = q.atoms.iter().map(|a| Uncertainty::new(a[0], a[1])).collect();
        out.push(
            DiscreteDistribution::new(atoms, q.weights)
                .map_err(|e| SddpError::BadInput(e.to_string()))?,
        );
    }
    Ok(out)
}

/// Deterministic forecast source for the receding-horizon policy.
#[derive(Debug, Clone)]
pub enum ForecastSource {
    /// AR one-step prediction for the next step, per-step optimization
    /// means for the rest.
    ArMeans { ar: Ar1Model, col_means: Vec<Uncertainty> },
    /// The realized scenario itself (diagnostic clairvoyant mode).
    Perfect { scenario: Vec<Uncertainty> },
}

impl ForecastSource {
    pub fn forecast(&self, t: usize, history: &[Uncertainty]) -> Vec<Uncertainty> {
        match self {
            ForecastSource::ArMeans { ar, col_means } => {
                let w_t = history.last().copied().unwrap_or(Uncertainty::ZERO);
                forecast_with_means(ar, col_means, t, w_t)
            }
            ForecastSource::Perfect { scenario } => scenario[t..].to_vec(),
        }
    }
}

/// How the receding-horizon policy evaluates its tail.
pub enum TailMode {
    /// Solve the full deterministic tail LP at every decision.
    Exact,
    /// One-stage LP against precomputed deterministic tail value functions
    /// (exact for the mean-tail forecast once the cuts have converged, and
    /// two orders of magnitude faster).
    Cuts(Arc<Vec<PolyhedralFunction>>),
}

impl TailMode {
    pub fn label(&self) -> &'static str {
        match self {
            TailMode::Exact => "exact",
            TailMode::Cuts(_) => "cuts",
        }
    }
}

pub struct MpcPolicy {
    problem: Arc<Problem>,
    forecaster: ForecastSource,
    tail: TailMode,
}

impl MpcPolicy {
    pub fn new(problem: Arc<Problem>, forecaster: ForecastSource, tail: TailMode) -> Self {
        Self { problem, forecaster, tail }
    }
}

impl Policy for MpcPolicy {
    fn name(&self) -> &str {
        "mpc"
    }

    fn decide(&self, ctx: &PolicyContext) -> Result<Control, SddpError> {
        let forecast = self.forecaster.forecast(ctx.t, ctx.history);
        let bx = admissible_box(&ctx.state, &self.problem.params, &self.problem.grid)?;
        match &self.tail {
            TailMode::Exact => {
                let sol = solve_horizon(&self.problem, ctx.t, &ctx.state, &forecast)?;
                Ok(bx.clamp(&sol.controls[0]))
            }
            TailMode::Cuts(tail) => {
                let dist = DiscreteDistribution::dirac(forecast[0]);
                let sol = solve_stage(ctx.t, &ctx.state, &dist, &tail[ctx.t + 1], &self.problem)?;
                Ok(bx.clamp(&sol.control))
            }
        }
    }
}

/// Offline construction of deterministic tail value functions for the
/// mean-tail forecast: Benders iterations on the mean problem.
///
/// Forward passes alternate between the mean trace and rollouts of the
/// cut-backed policy itself along pool scenarios (deciding from the same
/// one-step forecast it will see online when `ar` is given), so the cuts are
/// tight exactly where assessment visits. Backward passes always target the
/// mean-tail problem, which is what the cuts approximate.
pub fn train_mpc_tail_with_forecaster(
    problem: &Problem,
    col_means: &[Uncertainty],
    diversification: &[Vec<Uncertainty>],
    ar: Option<&Ar1Model>,
    max_iterations: usize,
) -> Result<Vec<PolyhedralFunction>, SddpError> {
    let t_len = problem.horizon();
    if col_means.len() != t_len {
        return Err(SddpError::BadInput("column means length != horizon".into()));
    }
    let dists: Vec<DiscreteDistribution> =
        col_means.iter().map(|w| DiscreteDistribution::dirac(*w)).collect();
    let mut vfs: Vec<PolyhedralFunction> =
        (0..t_len).map(|_| PolyhedralFunction::constant(0.0)).collect();
    vfs.push(final_cost_polyhedron(problem.x0.b, problem.x0.h, problem.costs.kappa));

    let x0 = problem.x0.as_array();
    // The bound at x0 saturates quickly along the mean trace, but cuts from
    // the diversification passes matter off-trajectory, so every pool
    // scenario gets visited at least twice before an early stop.
    let min_iterations = (4 * diversification.len()).max(16);
    let mut last_lb = f64::NEG_INFINITY;
    let mut stall = 0usize;
    for i in 0..max_iterations {
        let states = if diversification.is_empty() || i % 2 == 0 {
            forward_pass(&vfs, &dists, col_means, problem)?.states
        } else {
            let scenario = &diversification[(i / 2) % diversification.len()];
            policy_rollout_states(problem, &vfs, col_means, ar, scenario)?
        };
        backward_at_states(&mut vfs, &dists, &states, problem)?;
        let lb = vfs[0].evaluate(&x0)?;
        if (lb - last_lb).abs() <= 1e-10 * lb.abs().max(1.0) {
            stall += 1;
            if stall >= 8 && i + 1 >= min_iterations {
                break;
            }
        } else {
            stall = 0;
        }
        last_lb = lb;
    }
    Ok(vfs)
}

/// Backward-compatible wrapper without an online forecaster.
pub fn train_mpc_tail(
    problem: &Problem,
    col_means: &[Uncertainty],
    diversification: &[Vec<Uncertainty>],
    max_iterations: usize,
) -> Result<Vec<PolyhedralFunction>, SddpError> {
    train_mpc_tail_with_forecaster(problem, col_means, diversification, None, max_iterations)
}

/// Roll the cut-backed policy along a scenario, deciding against the same
/// one-step forecast the online policy uses.
fn policy_rollout_states(
    problem: &Problem,
    vfs: &[PolyhedralFunction],
    col_means: &[Uncertainty],
    ar: Option<&Ar1Model>,
    scenario: &[Uncertainty],
) -> Result<Vec<crate::physics::State>, SddpError> {
    let t_len = problem.horizon();
    let mut states = Vec::with_capacity(t_len + 1);
    let mut x = problem.x0;
    states.push(x);
    for t in 0..t_len {
        let next = match ar {
            Some(model) => {
                let w_t = if t > 0 { scenario[t - 1] } else { Uncertainty::ZERO };
                forecast_with_means(model, col_means, t, w_t)[0]
            }
            None => col_means[t],
        };
        let dist = DiscreteDistribution::dirac(next);
        let sol = solve_stage(t, &x, &dist, &vfs[t + 1], problem)?;
        x = crate::sddp::advance_state(&x, &sol.control, &scenario[t], t, problem);
        states.push(x);
    }
    Ok(states)
}

fn backward_at_states(
    vfs: &mut [PolyhedralFunction],
    dists: &[DiscreteDistribution],
    states: &[crate::physics::State],
    problem: &Problem,
) -> Result<(), SddpError> {
    for t in (0..problem.horizon()).rev() {
        let x = &states[t];
        let sol = solve_stage(t, x, &dists[t], &vfs[t + 1], problem)?;
        let lam = sol.subgradient;
        let beta = sol.objective
            - (lam[0] * x.b + lam[1] * x.h + lam[2] * x.theta_w + lam[3] * x.theta_i);
        vfs[t].add_cut(lam, beta)?;
    }
    Ok(())
}

/// Thermostat-style rule: charge the battery from solar surplus and
/// discharge it against demand, refill the tank below its target level,
/// heat with hysteresis around the setpoint.
pub struct RuleBasedPolicy {
    problem: Arc<Problem>,
    pub h_target: f64,
    /// Hysteresis width above the setpoint, °C.
    pub margin: f64,
}

impl RuleBasedPolicy {
    pub fn new(problem: Arc<Problem>, h_target: f64, margin: f64) -> Self {
        Self { problem, h_target, margin }
    }
}

impl Policy for RuleBasedPolicy {
    fn name(&self) -> &str {
        "rule"
    }

    fn decide(&self, ctx: &PolicyContext) -> Result<Control, SddpError> {
        let p = &self.problem.params;
        let bx = admissible_box(&ctx.state, p, &self.problem.grid)?;
        let d_last = ctx.history.last().map_or(0.0, |w| w.d_el_net);
        let f_b = if d_last < 0.0 {
            // Surplus: charge what the surplus and the headroom allow.
            (-d_last).min(bx.f_b.1)
        } else {
            // Shortage: discharge what is needed and available.
            -d_last.min(-bx.f_b.0)
        };
        let f_w = if ctx.state.h < self.h_target { bx.f_w.1 } else { 0.0 };
        let setpoint = self.problem.costs.temp_setpoint[ctx.t];
        let f_h = if ctx.state.theta_i < setpoint {
            bx.f_h.1
        } else if ctx.state.theta_i > setpoint + self.margin {
            0.0
        } else {
            ctx.prev_control.map_or(0.0, |u| u.f_h).clamp(bx.f_h.0, bx.f_h.1)
        };
        Ok(Control::new(f_b, f_w, f_h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{PhysicalParams, TimeGrid, WeatherTrace};
    use crate::problem::CostParams;

    fn problem(t_len: usize) -> Arc<Problem> {
        let grid = TimeGrid { delta_hours: 0.25, horizon_steps: t_len, start_step: 0 };
        Arc::new(Problem {
            grid,
            params: PhysicalParams::default(),
            costs: CostParams {
                price_elec: vec![0.15; t_len],
                price_discomfort: vec![0.05; t_len],
                temp_setpoint: vec![16.0; t_len],
                kappa: 0.5,
            },
            weather: WeatherTrace::constant(12.0, t_len),
            x0: State::new(1.0, 3.0, 15.0, 16.5),
        })
    }

    #[test]
    fn sddp_policy_last_stage_matches_myopic_horizon_lp() {
        let pr = problem(1);
        let w = Uncertainty::new(1.1, 0.4);
        let functions = Arc::new(vec![
            PolyhedralFunction::constant(0.0),
            final_cost_polyhedron(pr.x0.b, pr.x0.h, pr.costs.kappa),
        ]);
        let dists = Arc::new(vec![DiscreteDistribution::dirac(w)]);
        let pol =
            SddpPolicy::new(pr.clone(), functions, dists, OnlineModel::Offline).unwrap();
        let ctx = PolicyContext { t: 0, state: pr.x0, history: &[], prev_control: None };
        let u = pol.decide(&ctx).unwrap();
        let horizon = solve_horizon(&pr, 0, &pr.x0, &[w]).unwrap();
        assert!((u.f_b - horizon.controls[0].f_b).abs() < 1e-6);
        assert!((u.f_w - horizon.controls[0].f_w).abs() < 1e-6);
        assert!((u.f_h - horizon.controls[0].f_h).abs() < 1e-6);
    }

    #[test]
    fn rule_charges_from_surplus_up_to_headroom() {
        let pr = problem(4);
        let pol = RuleBasedPolicy::new(pr.clone(), 3.0, 1.0);
        let hist = [Uncertainty::new(-1.2, 0.0)];
        let state = State::new(2.9, 3.5, 15.0, 18.0);
        let ctx = PolicyContext { t: 1, state, history: &hist, prev_control: None };
        let u = pol.decide(&ctx).unwrap();
        let headroom = (3.0 - 2.9) / (0.25 * 0.95);
        assert!((u.f_b - 1.2f64.min(headroom)).abs() < 1e-12);
        assert_eq!(u.f_w, 0.0, "tank at target stays idle");
        assert_eq!(u.f_h, 0.0, "warm room stays unheated");
    }

    #[test]
    fn rule_does_not_discharge_an_empty_battery() {
        let pr = problem(4);
        let pol = RuleBasedPolicy::new(pr.clone(), 3.0, 1.0);
        let hist = [Uncertainty::new(2.0, 0.0)];
        let state = State::new(0.0, 3.5, 15.0, 18.0);
        let ctx = PolicyContext { t: 1, state, history: &hist, prev_control: None };
        let u = pol.decide(&ctx).unwrap();
        assert_eq!(u.f_b, 0.0);
    }

    #[test]
    fn rule_hysteresis_keeps_previous_heater_state() {
        let pr = problem(4);
        let pol = RuleBasedPolicy::new(pr.clone(), 3.0, 1.0);
        // Inside the band: setpoint 16, margin 1, temperature 16.5.
        let state = State::new(1.0, 3.5, 15.0, 16.5);
        let hist = [Uncertainty::ZERO];
        let on = PolicyContext {
            t: 1,
            state,
            history: &hist,
            prev_control: Some(Control::new(0.0, 0.0, 3.0)),
        };
        let off = PolicyContext { t: 1, state, history: &hist, prev_control: Some(Control::ZERO) };
        assert_eq!(pol.decide(&on).unwrap().f_h, 3.0);
        assert_eq!(pol.decide(&off).unwrap().f_h, 0.0);
        // Above the band the heater switches off regardless.
        let hot = State::new(1.0, 3.5, 15.0, 17.5);
        let ctx = PolicyContext {
            t: 1,
            state: hot,
            history: &hist,
            prev_control: Some(Control::new(0.0, 0.0, 3.0)),
        };
        assert_eq!(pol.decide(&ctx).unwrap().f_h, 0.0);
        // Below the setpoint it heats at full power.
        let cold = State::new(1.0, 3.5, 15.0, 15.0);
        let ctx = PolicyContext { t: 1, state: cold, history: &hist, prev_control: None };
        assert_eq!(pol.decide(&ctx).unwrap().f_h, 3.0);
    }

    #[test]
    fn policies_stay_inside_the_admissible_box() {
        use rand::rngs::SmallRng;
        use rand::{Rng, SeedableRng};
        let pr = problem(6);
        let functions: Arc<Vec<PolyhedralFunction>> = Arc::new(
            (0..6)
                .map(|_| PolyhedralFunction::constant(0.0))
                .chain([final_cost_polyhedron(pr.x0.b, pr.x0.h, 0.5)])
                .collect(),
        );
        let dists: Arc<Vec<DiscreteDistribution>> = Arc::new(
            (0..6)
                .map(|_| {
                    DiscreteDistribution::new(
                        vec![Uncertainty::new(-1.0, 0.0), Uncertainty::new(1.5, 2.0)],
                        vec![0.5, 0.5],
                    )
                    .unwrap()
                })
                .collect(),
        );
        let sddp = SddpPolicy::new(pr.clone(), functions, dists, OnlineModel::Offline).unwrap();
        let rule = RuleBasedPolicy::new(pr.clone(), 3.0, 1.0);
        let mut rng = SmallRng::seed_from_u64(17);
        for _ in 0..60 {
            let state = State::new(
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..6.9),
                rng.random_range(5.0..25.0),
                rng.random_range(5.0..25.0),
            );
            let hist = [Uncertainty::new(rng.random_range(-2.0..2.0), rng.random_range(0.0..3.0))];
            let t = rng.random_range(1..6);
            let ctx = PolicyContext { t, state, history: &hist, prev_control: None };
            let bx = admissible_box(&state, &pr.params, &pr.grid).unwrap();
            for pol in [&sddp as &dyn Policy, &rule] {
                let u = pol.decide(&ctx).unwrap();
                assert!(bx.contains(&u, 1e-6), "{} left the box: {u:?}", pol.name());
            }
        }
    }
}
