//! Self-contained linear-programming layer: a dense bounded-variable primal
//! simplex with dual extraction.
//!
//! Problems here are small (a stage subproblem has a few dozen rows), so a
//! dense explicit basis inverse is appropriate. The solver is deterministic:
//! Dantzig pricing with lowest-index tie-breaks, switching to Bland's rule
//! after a degeneracy streak, so identical inputs produce identical outputs.
//!
//! Dual convention: `duals[r]` is the sensitivity of the optimal objective
//! to the right-hand side of row `r` (∂z*/∂rhs). For a minimization this
//! makes duals of binding `>=` rows nonnegative and of binding `<=` rows
//! nonpositive.
//!
//! `dump` renders a program in a fixed text grammar for debugging:
//!
//! ```text
//! min 2 x0 + 1 x1
//! s.t.
//! r0: 1 x0 + 1 x1 >= 1
//! bounds
//! 0 <= x0 <= 1
//! 0 <= x1 <= 1
//! ```

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("malformed program: {0}")]
    BadProgram(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    sense: Sense,
    rhs: f64,
}

/// A linear program `min c·x` subject to rows `a·x (<=|=|>=) rhs` and
/// variable bounds `lower <= x <= upper` (infinite bounds allowed).
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, sense: Sense, rhs: f64, coeffs: &[(usize, f64)]) {
        self.rows.push(Row { coeffs: coeffs.to_vec(), sense, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Index that denotes row `r`'s slack in a basis hint.
    pub fn slack_index(&self, row: usize) -> usize {
        self.num_vars() + row
    }

    pub fn validate(&self) -> Result<(), LpError> {
        for (j, (&lo, &up)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || up.is_nan() || lo > up {
                return Err(LpError::BadProgram(format!("bounds of x{j}: [{lo}, {up}]")));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::BadProgram(format!("rhs of row {r} is {}", row.rhs)));
            }
            for &(j, c) in &row.coeffs {
                if j >= self.num_vars() {
                    return Err(LpError::BadProgram(format!("row {r} references unknown var x{j}")));
                }
                if !c.is_finite() {
                    return Err(LpError::BadProgram(format!("row {r} has coefficient {c}")));
                }
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::BadProgram("objective has non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let term = |out: &mut String, first: &mut bool, c: f64, j: usize| {
            if *first {
                let _ = write!(out, "{c} x{j}");
                *first = false;
            } else if c < 0.0 {
                let _ = write!(out, " - {} x{j}", -c);
            } else {
                let _ = write!(out, " + {c} x{j}");
            }
        };
        s.push_str("min ");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                term(&mut s, &mut first, c, j);
            }
        }
        if first {
            s.push('0');
        }
        s.push_str("\ns.t.\n");
        for (r, row) in self.rows.iter().enumerate() {
            let _ = write!(s, "r{r}:");
            let mut first = true;
            for &(j, c) in &row.coeffs {
                s.push(' ');
                if first {
                    let _ = write!(s, "{c} x{j}");
                    first = false;
                } else if c < 0.0 {
                    let _ = write!(s, "- {} x{j}", -c);
                } else {
                    let _ = write!(s, "+ {c} x{j}");
                }
            }
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(s, " {op} {}", row.rhs);
        }
        s.push_str("bounds\n");
        for j in 0..self.num_vars() {
            let _ = writeln!(s, "{} <= x{j} <= {}", self.lower[j], self.upper[j]);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver output. `primal`, `duals` and `reduced_costs` are only populated
/// when the status is `Optimal`.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub objective: f64,
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_inner(lp, None)
}

/// Solve starting from a caller-supplied basis (one variable index per row;
/// use `slack_index` for slacks). Falls back to the default start if the
/// hint is singular or infeasible.
pub fn solve_with_basis(lp: &LinearProgram, hint: &[usize]) -> Result<LpSolution, LpError> {
    solve_inner(lp, Some(hint))
}

const FEAS_TOL: f64 = 1e-9;
const DJ_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const DEGEN_LIMIT: u32 = 200;
const REINVERT_EVERY: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VStat {
    Basic,
    AtLo,
    AtUp,
    /// Nonbasic free variable pinned at zero.
    Free,
}

struct Simplex {
    m: usize,
    /// Total columns: structural + slacks (+ artificials appended later).
    n_total: usize,
    n_struct: usize,
    cols: Vec<Vec<f64>>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    rhs: Vec<f64>,
    stat: Vec<VStat>,
    basis: Vec<usize>,
    binv: Vec<Vec<f64>>,
    xb: Vec<f64>,
    pivots: u32,
    since_reinvert: u32,
    degen_streak: u32,
    bland: bool,
}

impl Simplex {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let n_total = n + m;
        let mut cols = vec![vec![0.0; m]; n_total];
        for (r, row) in lp.rows.iter().enumerate() {
            for &(j, c) in &row.coeffs {
                cols[j][r] += c;
            }
            cols[n + r][r] = 1.0;
        }
        let mut cost = lp.objective.clone();
        cost.resize(n_total, 0.0);
        let mut lo = lp.lower.clone();
        let mut up = lp.upper.clone();
        for row in &lp.rows {
            match row.sense {
                Sense::Le => {
                    lo.push(0.0);
                    up.push(f64::INFINITY);
                }
                Sense::Eq => {
                    lo.push(0.0);
                    up.push(0.0);
                }
                Sense::Ge => {
                    lo.push(f64::NEG_INFINITY);
                    up.push(0.0);
                }
            }
        }
        let rhs = lp.rows.iter().map(|r| r.rhs).collect();
        Self {
            m,
            n_total,
            n_struct: n,
            cols,
            cost,
            lo,
            up,
            rhs,
            stat: vec![VStat::AtLo; n_total],
            basis: Vec::new(),
            binv: Vec::new(),
            xb: Vec::new(),
            pivots: 0,
            since_reinvert: 0,
            degen_streak: 0,
            bland: false,
        }
    }

    fn nonbasic_rest_value(&self, j: usize) -> f64 {
        match self.stat[j] {
            VStat::AtLo => self.lo[j],
            VStat::AtUp => self.up[j],
            VStat::Free => 0.0,
            VStat::Basic => unreachable!(),
        }
    }

    fn default_nonbasic_stat(&self, j: usize) -> VStat {
        if self.lo[j].is_finite() {
            VStat::AtLo
        } else if self.up[j].is_finite() {
            VStat::AtUp
        } else {
            VStat::Free
        }
    }

    /// Install `basis` (must have length m), invert it and recompute basic
    /// values. Returns false if the basis matrix is singular.
    fn install_basis(&mut self, basis: Vec<usize>) -> bool {
        debug_assert_eq!(basis.len(), self.m);
        let m = self.m;
        // Gauss-Jordan inversion with partial pivoting.
        let mut a: Vec<Vec<f64>> = (0..m).map(|r| basis.iter().map(|&j| self.cols[j][r]).collect()).collect();
        let mut inv: Vec<Vec<f64>> = (0..m)
            .map(|r| {
                let mut row = vec![0.0; m];
                row[r] = 1.0;
                row
            })
            .collect();
        for k in 0..m {
            let mut best = k;
            for r in k + 1..m {
                if a[r][k].abs() > a[best][k].abs() {
                    best = r;
                }
            }
            if a[best][k].abs() < 1e-12 {
                return false;
            }
            a.swap(k, best);
            inv.swap(k, best);
            let piv = a[k][k];
            for c in 0..m {
                a[k][c] /= piv;
                inv[k][c] /= piv;
            }
            for r in 0..m {
                if r != k {
                    let f = a[r][k];
                    if f != 0.0 {
                        for c in 0..m {
                            a[r][c] -= f * a[k][c];
                            inv[r][c] -= f * inv[k][c];
                        }
                    }
                }
            }
        }
        for &j in &basis {
            self.stat[j] = VStat::Basic;
        }
        self.basis = basis;
        self.binv = inv;
        self.recompute_xb();
        self.since_reinvert = 0;
        true
    }

    fn recompute_xb(&mut self) {
        let m = self.m;
        let mut adj = self.rhs.clone();
        for j in 0..self.n_total {
            if self.stat[j] != VStat::Basic {
                let v = self.nonbasic_rest_value(j);
                if v != 0.0 {
                    for r in 0..m {
                        let c = self.cols[j][r];
                        if c != 0.0 {
                            adj[r] -= c * v;
                        }
                    }
                }
            }
        }
        self.xb = (0..m).map(|i| dot(&self.binv[i], &adj)).collect();
    }

    fn reinvert(&mut self) -> Result<(), LpError> {
        let basis = self.basis.clone();
        for &j in &basis {
            self.stat[j] = VStat::Basic;
        }
        if !self.install_basis(basis) {
            return Err(LpError::Numerical("singular basis on reinversion".into()));
        }
        Ok(())
    }

    fn infeasibility(&self) -> f64 {
        let mut total = 0.0;
        for (i, &j) in self.basis.iter().enumerate() {
            let v = self.xb[i];
            if v < self.lo[j] {
                total += self.lo[j] - v;
            } else if v > self.up[j] {
                total += v - self.up[j];
            }
        }
        total
    }

    /// One simplex phase with the given cost vector. Returns Unbounded only
    /// in phase 2 (phase-1 objectives are bounded below).
    fn run_phase(&mut self, cost: &[f64], max_pivots: u32) -> Result<LpStatus, LpError> {
        loop {
            if self.pivots > max_pivots {
                return Err(LpError::Numerical(format!(
                    "pivot limit {max_pivots} exceeded"
                )));
            }
            if self.since_reinvert >= REINVERT_EVERY {
                self.reinvert()?;
            }
            // Duals for the phase cost: y = c_B · B^-1.
            let m = self.m;
            let mut y = vec![0.0; m];
            for (i, &j) in self.basis.iter().enumerate() {
                let cb = cost[j];
                if cb != 0.0 {
                    for k in 0..m {
                        y[k] += cb * self.binv[i][k];
                    }
                }
            }
            // Pricing.
            let mut enter: Option<(usize, f64, i8)> = None;
            for j in 0..self.n_total {
                if self.stat[j] == VStat::Basic {
                    continue;
                }
                let span_zero = self.up[j] - self.lo[j] <= 0.0;
                if span_zero {
                    continue;
                }
                let dj = cost[j] - dot_col(&y, &self.cols[j]);
                let (eligible, dir) = match self.stat[j] {
                    VStat::AtLo => (dj < -DJ_TOL, 1i8),
                    VStat::AtUp => (dj > DJ_TOL, -1i8),
                    VStat::Free => (dj.abs() > DJ_TOL, if dj < 0.0 { 1 } else { -1 }),
                    VStat::Basic => unreachable!(),
                };
                if !eligible {
                    continue;
                }
                if self.bland {
                    enter = Some((j, dj, dir));
                    break;
                }
                match enter {
                    Some((_, best, _)) if dj.abs() <= best.abs() => {}
                    _ => enter = Some((j, dj, dir)),
                }
            }
            let Some((j_in, _, dir)) = enter else {
                return Ok(LpStatus::Optimal);
            };
            let dir = dir as f64;

            // Movement of basic variables per unit of entering movement.
            let alpha: Vec<f64> = (0..m).map(|i| dot(&self.binv[i], &self.cols[j_in])).collect();

            // Ratio test.
            let own_span = self.up[j_in] - self.lo[j_in];
            let mut theta = if own_span.is_finite() { own_span } else { f64::INFINITY };
            let mut leave: Option<usize> = None; // basis position
            for i in 0..m {
                let rate = -dir * alpha[i];
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let bj = self.basis[i];
                let limit = if rate > 0.0 {
                    if self.up[bj].is_finite() {
                        ((self.up[bj] - self.xb[i]) / rate).max(0.0)
                    } else {
                        continue;
                    }
                } else if self.lo[bj].is_finite() {
                    ((self.xb[i] - self.lo[bj]) / -rate).max(0.0)
                } else {
                    continue;
                };
                if limit < theta - 1e-12 {
                    theta = limit;
                    leave = Some(i);
                } else if limit <= theta + 1e-12 {
                    // Tie. Prefer the larger pivot for stability; under
                    // Bland's rule prefer the lowest variable index.
                    let take = match leave {
                        None => limit <= theta,
                        Some(cur) => {
                            if self.bland {
                                self.basis[i] < self.basis[cur]
                            } else {
                                alpha[i].abs() > alpha[cur].abs()
                            }
                        }
                    };
                    if take {
                        theta = theta.min(limit);
                        leave = Some(i);
                    }
                }
            }

            if theta.is_infinite() {
                return Ok(LpStatus::Unbounded);
            }

            self.pivots += 1;
            self.since_reinvert += 1;
            if theta <= 1e-10 {
                self.degen_streak += 1;
                if self.degen_streak > DEGEN_LIMIT {
                    self.bland = true;
                }
            } else {
                self.degen_streak = 0;
            }

            match leave {
                None => {
                    // Bound flip: the entering variable crosses its own span.
                    for i in 0..m {
                        self.xb[i] -= dir * theta * alpha[i];
                    }
                    self.stat[j_in] = match self.stat[j_in] {
                        VStat::AtLo => VStat::AtUp,
                        VStat::AtUp => VStat::AtLo,
                        other => other,
                    };
                }
                Some(r) => {
                    let entering_value = self.nonbasic_rest_value(j_in) + dir * theta;
                    for i in 0..m {
                        self.xb[i] -= dir * theta * alpha[i];
                    }
                    let j_out = self.basis[r];
                    // Departing variable lands on the bound it hit.
                    let rate = -dir * alpha[r];
                    self.stat[j_out] = if rate > 0.0 { VStat::AtUp } else { VStat::AtLo };
                    if !self.lo[j_out].is_finite() && !self.up[j_out].is_finite() {
                        self.stat[j_out] = VStat::Free;
                    }
                    self.basis[r] = j_in;
                    self.stat[j_in] = VStat::Basic;
                    self.xb[r] = entering_value;
                    // Eta update of the explicit inverse.
                    let piv = alpha[r];
                    let pivot_row = std::mem::take(&mut self.binv[r]);
                    for i in 0..m {
                        if i != r {
                            let f = alpha[i] / piv;
                            if f != 0.0 {
                                let row = &mut self.binv[i];
                                for k in 0..m {
                                    row[k] -= f * pivot_row[k];
                                }
                            }
                        }
                    }
                    self.binv[r] = pivot_row;
                    let inv_piv = 1.0 / piv;
                    for k in 0..m {
                        self.binv[r][k] *= inv_piv;
                    }
                }
            }
        }
    }

    fn value_of(&self, j: usize) -> f64 {
        match self.stat[j] {
            VStat::Basic => {
                let i = self.basis.iter().position(|&b| b == j).unwrap();
                self.xb[i]
            }
            _ => self.nonbasic_rest_value(j),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_col(y: &[f64], col: &[f64]) -> f64 {
    dot(y, col)
}

fn solve_inner(lp: &LinearProgram, hint: Option<&[usize]>) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let mut sx = Simplex::build(lp);
    let m = sx.m;
    let n = sx.n_struct;

    // Rest every variable at a finite bound (or zero when free).
    for j in 0..sx.n_total {
        sx.stat[j] = sx.default_nonbasic_stat(j);
    }

    let mut started = false;
    if let Some(h) = hint {
        if h.len() == m && h.iter().all(|&j| j < sx.n_total) {
            let mut seen = vec![false; sx.n_total];
            let distinct = h.iter().all(|&j| !std::mem::replace(&mut seen[j], true));
            if distinct && sx.install_basis(h.to_vec()) && sx.infeasibility() <= FEAS_TOL {
                started = true;
            } else {
                // Hint unusable; reset statuses and fall through.
                for j in 0..sx.n_total {
                    sx.stat[j] = sx.default_nonbasic_stat(j);
                }
            }
        }
    }

    if !started {
        let slack_basis: Vec<usize> = (0..m).map(|r| n + r).collect();
        assert!(sx.install_basis(slack_basis));
        if sx.infeasibility() > FEAS_TOL {
            // Phase 1: append artificials on violated rows and minimize them.
            let mut art_cost = vec![0.0; sx.n_total];
            let mut arts = Vec::new();
            for i in 0..m {
                let j = sx.basis[i];
                let v = sx.xb[i];
                let (viol, sign) = if v < sx.lo[j] - FEAS_TOL {
                    (sx.lo[j] - v, -1.0)
                } else if v > sx.up[j] + FEAS_TOL {
                    (v - sx.up[j], 1.0)
                } else {
                    continue;
                };
                // Column sign·e_i; slack retreats to its violated bound.
                let mut col = vec![0.0; m];
                col[i] = sign;
                sx.cols.push(col);
                sx.cost.push(0.0);
                sx.lo.push(0.0);
                sx.up.push(f64::INFINITY);
                sx.stat.push(VStat::AtLo);
                art_cost.push(1.0);
                let a = sx.n_total;
                sx.n_total += 1;
                // Swap: artificial becomes basic, slack rests at the bound it violated.
                sx.stat[j] = if sign > 0.0 { VStat::AtUp } else { VStat::AtLo };
                sx.basis[i] = a;
                sx.stat[a] = VStat::Basic;
                sx.xb[i] = viol;
                arts.push(a);
                let _ = viol;
            }
            // The basis is all slacks/artificials with unit columns: B^-1
            // must absorb the sign of artificial columns.
            let basis = sx.basis.clone();
            if !sx.install_basis(basis) {
                return Err(LpError::Numerical("phase-1 basis singular".into()));
            }
            art_cost.resize(sx.n_total, 1.0);
            let max_pivots = phase_pivot_cap(m, sx.n_total);
            let status = sx.run_phase(&art_cost, max_pivots)?;
            debug_assert_ne!(status, LpStatus::Unbounded);
            let resid: f64 = arts.iter().map(|&a| sx.value_of(a)).sum();
            if resid > 1e-7 {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    primal: Vec::new(),
                    objective: f64::NAN,
                    duals: Vec::new(),
                    reduced_costs: Vec::new(),
                });
            }
            // Freeze artificials at zero for phase 2.
            for &a in &arts {
                sx.up[a] = 0.0;
                if sx.stat[a] != VStat::Basic {
                    sx.stat[a] = VStat::AtLo;
                }
            }
        }
    }

    let cost = sx.cost.clone();
    let max_pivots = phase_pivot_cap(m, sx.n_total);
    let status = sx.run_phase(&cost, max_pivots)?;
    if status == LpStatus::Unbounded {
        return Ok(LpSolution {
            status,
            primal: Vec::new(),
            objective: f64::NEG_INFINITY,
            duals: Vec::new(),
            reduced_costs: Vec::new(),
        });
    }

    // Extraction.
    let primal: Vec<f64> = (0..n).map(|j| sx.value_of(j)).collect();
    let objective = dot(&primal, &lp.objective);
    let mut duals = vec![0.0; m];
    for (i, &j) in sx.basis.iter().enumerate() {
        let cb = sx.cost[j];
        if cb != 0.0 {
            for k in 0..m {
                duals[k] += cb * sx.binv[i][k];
            }
        }
    }
    let reduced_costs: Vec<f64> =
        (0..n).map(|j| lp.objective[j] - dot_col(&duals, &sx.cols[j])).collect();

    debug_assert!(primal_residual(lp, &primal) <= 1e-7, "primal residual too large");

    Ok(LpSolution { status: LpStatus::Optimal, primal, objective, duals, reduced_costs })
}

fn phase_pivot_cap(m: usize, n_total: usize) -> u32 {
    20_000u32.saturating_add(50 * (m as u32 + n_total as u32))
}

/// Worst bound/row violation of a primal point (test and debug helper).
pub fn primal_residual(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (j, &v) in x.iter().enumerate() {
        worst = worst.max(lp.lower[j] - v).max(v - lp.upper[j]);
    }
    for row in &lp.rows {
        let ax: f64 = row.coeffs.iter().map(|&(j, c)| c * x[j]).sum();
        let gap = match row.sense {
            Sense::Le => ax - row.rhs,
            Sense::Ge => row.rhs - ax,
            Sense::Eq => (ax - row.rhs).abs(),
        };
        worst = worst.max(gap);
    }
    worst.max(0.0)
}
