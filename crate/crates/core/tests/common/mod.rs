//! Independent oracles shared by the integration and acceptance suites.
//! Everything here recomputes expected values from first principles, never
//! through the code paths under test.

#![allow(dead_code)]

use emsbench::lp::{LinearProgram, Sense};
use emsbench::physics::{
    battery_step, Exogenous, PhysicalParams, State, TimeGrid, Uncertainty, WeatherTrace,
};
use emsbench::problem::{CostParams, Problem};
use emsbench::scenarios::DiscreteDistribution;
use rand::rngs::SmallRng;
use rand::Rng;

/// Battery-only instance: tank and heater pinned, uniform temperatures.
pub fn battery_only_problem(t_len: usize, prices: &[f64], b0: f64, kappa: f64) -> Problem {
    let grid = TimeGrid { delta_hours: 0.25, horizon_steps: t_len, start_step: 0 };
    let params =
        PhysicalParams { h_max: 0.0, fw_max: 0.0, fh_max: 0.0, ..PhysicalParams::default() };
    let costs = CostParams {
        price_elec: prices.to_vec(),
        price_discomfort: vec![0.0; t_len],
        temp_setpoint: vec![-100.0; t_len],
        kappa,
    };
    Problem {
        grid,
        params,
        costs,
        weather: WeatherTrace::constant(15.0, t_len),
        x0: State::new(b0, 0.0, 15.0, 15.0),
    }
}

/// Exhaustive tabular dynamic program on a battery grid.
pub struct BatteryDp {
    pub b_grid: Vec<f64>,
    /// `values[t][i]`: optimal expected cost-to-go from grid point `i` at `t`.
    pub values: Vec<Vec<f64>>,
    pub control_step: f64,
}

impl BatteryDp {
    pub fn value_at(&self, t: usize, b: f64) -> f64 {
        interp(&self.b_grid, &self.values[t], b)
    }

    /// Greedy grid control at `(t, b)` against the DP tables.
    pub fn control_at(
        &self,
        problem: &Problem,
        dists: &[DiscreteDistribution],
        t: usize,
        b: f64,
    ) -> f64 {
        best_grid_control(problem, dists, &self.b_grid, &self.values[t + 1], t, b, self.control_step).1
    }
}

fn interp(grid: &[f64], vals: &[f64], x: f64) -> f64 {
    let lo = grid[0];
    let hi = *grid.last().unwrap();
    let x = x.clamp(lo, hi);
    let step = grid[1] - grid[0];
    let k = (((x - lo) / step) as usize).min(grid.len() - 2);
    let frac = (x - grid[k]) / step;
    vals[k] * (1.0 - frac) + vals[k + 1] * frac
}

fn expected_stage_cost(
    problem: &Problem,
    dist: &DiscreteDistribution,
    t: usize,
    f_b: f64,
) -> f64 {
    let pe = problem.costs.price_elec[t] * problem.grid.delta_hours;
    dist.atoms
        .iter()
        .zip(&dist.weights)
        .map(|(w, p)| p * pe * (f_b + w.d_el_net).max(0.0))
        .sum()
}

fn best_grid_control(
    problem: &Problem,
    dists: &[DiscreteDistribution],
    b_grid: &[f64],
    next_vals: &[f64],
    t: usize,
    b: f64,
    control_step: f64,
) -> (f64, f64) {
    let p = &problem.params;
    let dt = problem.grid.delta_hours;
    let lo = (-p.fb_max).max(-(b - p.b_min) * p.rho_d / dt);
    let hi = p.fb_max.min((p.b_max - b) / (dt * p.rho_c));
    let mut best = (f64::INFINITY, 0.0);
    let mut k = 0usize;
    loop {
        let f = (lo + k as f64 * control_step).min(hi);
        let b1 = battery_step(b, f, p, &problem.grid);
        let v = expected_stage_cost(problem, &dists[t], t, f) + interp(b_grid, next_vals, b1);
        if v < best.0 {
            best = (v, f);
        }
        if lo + k as f64 * control_step >= hi {
            break;
        }
        k += 1;
    }
    best
}

/// Backward tabular DP with linear interpolation between grid points.
pub fn battery_dp(
    problem: &Problem,
    dists: &[DiscreteDistribution],
    state_step: f64,
    control_step: f64,
) -> BatteryDp {
    let p = &problem.params;
    let t_len = problem.horizon();
    let n = ((p.b_max - p.b_min) / state_step).round() as usize + 1;
    let b_grid: Vec<f64> = (0..n).map(|i| p.b_min + i as f64 * state_step).collect();
    let mut values = vec![vec![0.0; n]; t_len + 1];
    for (i, &b) in b_grid.iter().enumerate() {
        values[t_len][i] = problem.costs.kappa * (problem.x0.b - b).max(0.0);
    }
    for t in (0..t_len).rev() {
        let (next, rest) = values.split_at_mut(t + 1);
        let next_vals = &rest[0];
        for (i, &b) in b_grid.iter().enumerate() {
            next[t][i] =
                best_grid_control(problem, dists, &b_grid, next_vals, t, b, control_step).0;
        }
    }
    BatteryDp { b_grid, values, control_step }
}

/// Exact expected cost of a battery state-feedback policy: the state path
/// is deterministic (the battery sees no noise), so the expectation reduces
/// to per-step expectations over atoms.
pub fn expected_feedback_cost(
    problem: &Problem,
    dists: &[DiscreteDistribution],
    mut decide: impl FnMut(usize, f64) -> f64,
) -> f64 {
    let mut b = problem.x0.b;
    let mut total = 0.0;
    for t in 0..problem.horizon() {
        let f = decide(t, b);
        total += expected_stage_cost(problem, &dists[t], t, f);
        b = battery_step(b, f, &problem.params, &problem.grid);
    }
    total + problem.costs.kappa * (problem.x0.b - b).max(0.0)
}

/// A random boxed LP and its data kept in plain arrays for the oracle.
pub struct OracleLp {
    pub lp: LinearProgram,
    pub c: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rows: Vec<(Vec<f64>, Sense, f64)>,
}

pub fn random_boxed_lp(rng: &mut SmallRng) -> OracleLp {
    let n = rng.random_range(2..=6);
    let m = rng.random_range(1..=10);
    let mut lp = LinearProgram::new();
    let mut c = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for _ in 0..n {
        let l = rng.random_range(-2.0..0.5);
        let h = l + rng.random_range(0.5..3.0);
        c.push(rng.random_range(-2.0..2.0));
        lo.push(l);
        hi.push(h);
        lp.add_var(c[c.len() - 1], l, h);
    }
    let mut rows = Vec::new();
    for _ in 0..m {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sense = match rng.random_range(0..3) {
            0 => Sense::Le,
            1 => Sense::Ge,
            _ => Sense::Eq,
        };
        // Anchor the rhs near the box midpoint so a fair share of programs
        // stay feasible; equalities get an exact anchor.
        let mid: f64 = coeffs.iter().zip(lo.iter().zip(&hi)).map(|(a, (l, h))| a * 0.5 * (l + h)).sum();
        let rhs = match sense {
            Sense::Eq => mid + rng.random_range(-0.5..0.5),
            _ => mid + rng.random_range(-2.0..2.0),
        };
        let pairs: Vec<(usize, f64)> = coeffs.iter().enumerate().map(|(j, &v)| (j, v)).collect();
        lp.add_row(sense, rhs, &pairs);
        rows.push((coeffs, sense, rhs));
    }
    OracleLp { lp, c, lo, hi, rows }
}

/// Brute-force vertex enumeration for boxed LPs: every choice of active
/// constraints (rows at equality plus bounds) of total rank `n` is solved
/// and checked for feasibility. Returns the optimal objective, or None if
/// no feasible vertex exists (infeasible program).
pub fn enumerate_optimum(o: &OracleLp) -> Option<f64> {
    let n = o.c.len();
    let m = o.rows.len();
    let mut best: Option<f64> = None;
    // var_state: 0 = pinned low, 1 = pinned high, 2 = determined by rows.
    let mut var_state = vec![0u8; n];
    loop {
        let free: Vec<usize> = (0..n).filter(|&j| var_state[j] == 2).collect();
        let k = free.len();
        if k <= m.min(n) {
            for_each_subset(m, k, &mut |rows_active| {
                let mut a = vec![vec![0.0; k]; k];
                let mut b = vec![0.0; k];
                for (ri, &r) in rows_active.iter().enumerate() {
                    let (coeffs, _, rhs) = &o.rows[r];
                    let mut acc = *rhs;
                    for j in 0..n {
                        match var_state[j] {
                            0 => acc -= coeffs[j] * o.lo[j],
                            1 => acc -= coeffs[j] * o.hi[j],
                            _ => {}
                        }
                    }
                    b[ri] = acc;
                    for (fi, &j) in free.iter().enumerate() {
                        a[ri][fi] = coeffs[j];
                    }
                }
                if let Some(xf) = solve_square(&mut a, &mut b) {
                    let mut x = vec![0.0; n];
                    for j in 0..n {
                        x[j] = match var_state[j] {
                            0 => o.lo[j],
                            1 => o.hi[j],
                            _ => 0.0,
                        };
                    }
                    for (fi, &j) in free.iter().enumerate() {
                        x[j] = xf[fi];
                    }
                    if is_feasible(o, &x) {
                        let obj: f64 = x.iter().zip(&o.c).map(|(xi, ci)| xi * ci).sum();
                        if best.map_or(true, |b| obj < b) {
                            best = Some(obj);
                        }
                    }
                }
            });
        }
        // Next var_state in base-3.
        let mut j = 0;
        loop {
            if j == n {
                return best;
            }
            var_state[j] += 1;
            if var_state[j] < 3 {
                break;
            }
            var_state[j] = 0;
            j += 1;
        }
    }
}

fn for_each_subset(m: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for r in start..m {
            cur.push(r);
            rec(r + 1, m, k, cur, f);
            cur.pop();
        }
    }
    let mut cur = Vec::with_capacity(k);
    rec(0, m, k, &mut cur, f);
}

fn solve_square(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let k = b.len();
    for col in 0..k {
        let mut piv = col;
        for r in col + 1..k {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for cc in col..k {
                        a[r][cc] -= f * a[col][cc];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..k).map(|i| b[i] / a[i][i]).collect())
}

fn is_feasible(o: &OracleLp, x: &[f64]) -> bool {
    const TOL: f64 = 1e-8;
    for j in 0..x.len() {
        if x[j] < o.lo[j] - TOL || x[j] > o.hi[j] + TOL {
            return false;
        }
    }
    for (coeffs, sense, rhs) in &o.rows {
        let ax: f64 = coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        let ok = match sense {
            Sense::Le => ax <= rhs + TOL,
            Sense::Ge => ax >= rhs - TOL,
            Sense::Eq => (ax - rhs).abs() <= TOL,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Fixed-step RK4 on the two-temperature envelope ODE.
pub fn rk4_envelope(
    theta_w: f64,
    theta_i: f64,
    f_h: f64,
    exo: &Exogenous,
    p: &PhysicalParams,
    total_seconds: f64,
    substeps: usize,
) -> (f64, f64) {
    let g_is = 1.0 / (p.r_i + p.r_s);
    let g_me = 1.0 / (p.r_m + p.r_e);
    let g_v = 1.0 / p.r_v;
    let g_f = 1.0 / p.r_f;
    let heater_w = f_h * 1e3;
    let deriv = |w: f64, i: f64| -> (f64, f64) {
        let dw = (g_is * (i - w)
            + g_me * (exo.theta_e - w)
            + p.gamma * heater_w
            + p.r_i * g_is * exo.phi_int
            + p.r_e * g_me * exo.phi_ext)
            / p.c_m;
        let di = (g_is * (w - i)
            + (g_v + g_f) * (exo.theta_e - i)
            + (1.0 - p.gamma) * heater_w
            + p.r_s * g_is * exo.phi_int)
            / p.c_i;
        (dw, di)
    };
    let dt = total_seconds / substeps as f64;
    let (mut w, mut i) = (theta_w, theta_i);
    for _ in 0..substeps {
        let (k1w, k1i) = deriv(w, i);
        let (k2w, k2i) = deriv(w + 0.5 * dt * k1w, i + 0.5 * dt * k1i);
        let (k3w, k3i) = deriv(w + 0.5 * dt * k2w, i + 0.5 * dt * k2i);
        let (k4w, k4i) = deriv(w + dt * k3w, i + dt * k3i);
        w += dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        i += dt / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i);
    }
    (w, i)
}

/// Three-atom battery distributions that vary by step.
pub fn battery_dists(t_len: usize) -> Vec<DiscreteDistribution> {
    (0..t_len)
        .map(|t| {
            let shift = 0.3 * (t % 3) as f64;
            DiscreteDistribution::new(
                vec![
                    Uncertainty::new(-1.2 + shift, 0.0),
                    Uncertainty::new(0.4 + shift, 0.0),
                    Uncertainty::new(1.8 + shift, 0.0),
                ],
                vec![0.3, 0.4, 0.3],
            )
            .unwrap()
        })
        .collect()
}
