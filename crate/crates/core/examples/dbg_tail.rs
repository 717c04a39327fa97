use emsbench::config::ExperimentConfig;
use emsbench::deterministic::solve_horizon;
use emsbench::physics::Uncertainty;
use emsbench::policy::*;
use emsbench::scenarios::{generate_scenarios, fit_ar1, ScenarioRole, forecast_with_means, DiscreteDistribution};
use emsbench::sddp::solve_stage;
use emsbench::sim::simulate;
use std::sync::Arc;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.grid.horizon_steps = 24;
    cfg.scenarios.n_optimization = 120;
    cfg.quantization.atoms = 5;
    let problem = Arc::new(cfg.build_problem().unwrap());
    let profile = cfg.build_demand_profile();
    let opt = generate_scenarios(&profile, &problem.grid, 60, 5, ScenarioRole::Optimization).unwrap();
    let assess = generate_scenarios(&profile, &problem.grid, 10, 6, ScenarioRole::Assessment).unwrap();
    let ar = fit_ar1(&opt).unwrap();
    let col_means = opt.column_means();
    let pool: Vec<Vec<Uncertainty>> = opt.scenarios.iter().take(24).cloned().collect();
    let tail = Arc::new(train_mpc_tail_with_forecaster(&problem, &col_means, &pool, Some(&ar), 200).unwrap());

    let exact = MpcPolicy::new(problem.clone(), ForecastSource::ArMeans { ar: ar.clone(), col_means: col_means.clone() }, TailMode::Exact);
    let fast = MpcPolicy::new(problem.clone(), ForecastSource::ArMeans { ar: ar.clone(), col_means: col_means.clone() }, TailMode::Cuts(tail.clone()));
    for (id, scenario) in assess.scenarios.iter().enumerate() {
        let a = simulate(&exact, scenario, &problem, id).unwrap();
        let b = simulate(&fast, scenario, &problem, id).unwrap();
        let rel = (a.total_cost - b.total_cost).abs() / a.total_cost.abs().max(1e-6);
        println!("scen {id}: exact {:.6} cuts {:.6} rel {:.5}", a.total_cost, b.total_cost, rel);
        if rel > 0.01 {
            for t in 0..24 {
                let ua = a.controls[t];
                let ub = b.controls[t];
                if (ua.f_b-ub.f_b).abs() + (ua.f_w-ub.f_w).abs() + (ua.f_h-ub.f_h).abs() > 1e-6 {
                    // compare planned objectives at this state
                    let x = a.states[t];
                    let w_t = if t > 0 { scenario[t-1] } else { Uncertainty::ZERO };
                    let fc = forecast_with_means(&ar, &col_means, t, w_t);
                    let exact_sol = solve_horizon(&problem, t, &x, &fc).unwrap();
                    let dist = DiscreteDistribution::dirac(fc[0]);
                    let cut_sol = solve_stage(t, &x, &dist, &tail[t+1], &problem).unwrap();
                    println!("  t={t} exactU=({:.3},{:.3},{:.3}) cutU=({:.3},{:.3},{:.3}) exactPlan={:.6} cutPlan={:.6} stateA=({:.3},{:.3},{:.2},{:.2}) stateB=({:.3},{:.3},{:.2},{:.2})",
                        ua.f_b, ua.f_w, ua.f_h, ub.f_b, ub.f_w, ub.f_h,
                        exact_sol.objective, cut_sol.objective,
                        a.states[t].b, a.states[t].h, a.states[t].theta_w, a.states[t].theta_i,
                        b.states[t].b, b.states[t].h, b.states[t].theta_w, b.states[t].theta_i);
                }
            }
        }
    }
}
