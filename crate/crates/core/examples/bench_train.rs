use emsbench::config::ExperimentConfig;
use emsbench::pipeline::build_all;
use emsbench::sddp::TrainStatus;
use std::time::Instant;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.scenarios.n_assessment = 100;
    let t0 = Instant::now();
    let art = build_all(&cfg).unwrap();
    println!("offline build total: {:?}", t0.elapsed());
    println!(
        "sddp: {:.2}s  mpc tail: {:.2}s  status: {:?}  lb={:.4} ub={:.4}",
        art.sddp_offline_seconds,
        art.mpc_offline_seconds,
        art.trained.status,
        art.trained.lower_bound,
        art.trained.upper_bound
    );
    if let TrainStatus::Converged { iterations, gap } = art.trained.status {
        println!("converged after {iterations} iterations, gap {gap:.6}");
    }
    let cuts: usize = art.trained.functions.iter().map(|f| f.len()).sum();
    println!("total cuts: {cuts}");
}
