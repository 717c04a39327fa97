use emsbench::config::ExperimentConfig;
use emsbench::deterministic::solve_horizon;
use emsbench::scenarios::{generate_scenarios, ScenarioRole};
use std::time::Instant;

fn main() {
    let cfg = ExperimentConfig::default();
    let problem = cfg.build_problem().unwrap();
    let profile = cfg.build_demand_profile();
    let set = generate_scenarios(&profile, &problem.grid, 3, 7, ScenarioRole::Optimization).unwrap();
    // Full-horizon solve from t=0
    for s in &set.scenarios {
        let t0 = Instant::now();
        let sol = solve_horizon(&problem, 0, &problem.x0, s).unwrap();
        println!("T=96 full solve: {:?}  obj={:.4}", t0.elapsed(), sol.objective);
    }
    // Simulated receding horizon total time
    let t0 = Instant::now();
    let mut x = problem.x0;
    let s = &set.scenarios[0];
    for t in 0..96 {
        let sol = solve_horizon(&problem, t, &x, &s[t..]).unwrap();
        let u = sol.controls[0];
        x = emsbench::sddp::advance_state(&x, &u, &s[t], t, &problem);
    }
    println!("96 receding-horizon exact solves: {:?}", t0.elapsed());
}
