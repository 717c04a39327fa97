//! Discrete-time plant model: battery, electrical hot-water tank and an
//! R6C2 thermal envelope (two temperatures, six resistances, two capacities).
//!
//! Stocks are in kWh, powers in kW and the decision step in hours. The
//! thermal network is integrated in SI units (seconds, watts) and converted
//! at the boundary. All dynamics are one explicit-Euler step of the
//! continuous equations, which keeps them affine in state and control for
//! fixed noise — the property the cut-based solver relies on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Heat capacity of water, J/(kg·K).
pub const WATER_HEAT_CAPACITY: f64 = 4186.0;

const KW_TO_W: f64 = 1e3;
const J_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error("invalid physical parameters: {0}")]
    BadParams(String),
    #[error("weather trace length {got} does not match horizon {want}")]
    BadWeatherLen { got: usize, want: usize },
}

/// Decision-time discretization: step length, horizon and an offset into
/// the day (used to phase tariffs and weather).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub delta_hours: f64,
    pub horizon_steps: usize,
    pub start_step: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { delta_hours: 0.25, horizon_steps: 96, start_step: 0 }
    }
}

impl TimeGrid {
    pub fn new(delta_hours: f64, horizon_steps: usize, start_step: usize) -> Result<Self, PhysicsError> {
        let grid = Self { delta_hours, horizon_steps, start_step };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.delta_hours > 0.0) || !self.delta_hours.is_finite() {
            return Err(PhysicsError::BadGrid(format!("delta_hours = {}", self.delta_hours)));
        }
        if self.horizon_steps < 1 {
            return Err(PhysicsError::BadGrid("horizon_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn delta_seconds(&self) -> f64 {
        self.delta_hours * 3600.0
    }

    /// Wall-clock hour of day at the beginning of step `t`.
    pub fn hour_of_day(&self, t: usize) -> f64 {
        ((self.start_step + t) as f64 * self.delta_hours) % 24.0
    }
}

/// All plant parameters. Resistances in K/W and capacities in J/K
/// (the electrical-analogy values), stocks and powers in kWh / kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Battery charge efficiency, in (0, 1].
    pub rho_c: f64,
    /// Battery discharge efficiency, in (0, 1].
    pub rho_d: f64,
    pub b_min: f64,
    pub b_max: f64,
    /// Tank capacity, kWh.
    pub h_max: f64,
    /// Tank conversion yield, in (0, 1].
    pub beta_h: f64,
    pub fb_max: f64,
    pub fw_max: f64,
    pub fh_max: f64,
    pub r_i: f64,
    pub r_s: f64,
    pub r_m: f64,
    pub r_e: f64,
    pub r_v: f64,
    pub r_f: f64,
    pub c_i: f64,
    pub c_m: f64,
    /// Fraction of heater power dissipated in the wall, in [0, 1].
    pub gamma: f64,
    pub panel_area_m2: f64,
    pub panel_yield: f64,
}

/// Usable energy of a water tank for a given volume and temperature swing.
pub fn tank_energy_kwh(volume_l: f64, temp_swing_k: f64) -> f64 {
    volume_l * WATER_HEAT_CAPACITY * temp_swing_k / J_PER_KWH
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            rho_c: 0.95,
            rho_d: 0.95,
            b_min: 0.0,
            b_max: 3.0,
            h_max: tank_energy_kwh(120.0, 50.0),
            beta_h: 0.9,
            fb_max: 3.0,
            fw_max: 3.0,
            fh_max: 3.0,
            r_i: 4.81e-4,
            r_s: 2.94e-4,
            r_m: 4.51e-3,
            r_e: 1.48e-4,
            r_v: 4.51e-3,
            r_f: 2.00e-2,
            c_i: 8.30e7,
            c_m: 5.85e6,
            gamma: 0.1,
            panel_area_m2: 20.0,
            panel_yield: 0.15,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let eff = |name: &str, v: f64| -> Result<(), PhysicsError> {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(PhysicsError::BadParams(format!("{name} = {v} must be in (0, 1]")))
            }
        };
        eff("rho_c", self.rho_c)?;
        eff("rho_d", self.rho_d)?;
        eff("beta_h", self.beta_h)?;
        if !(self.b_min < self.b_max) {
            return Err(PhysicsError::BadParams(format!(
                "b_min = {} must be < b_max = {}",
                self.b_min, self.b_max
            )));
        }
        if !(self.h_max > 0.0) {
            // h_max = 0 is allowed: it pins the tank (used by reduced instances).
            if self.h_max != 0.0 {
                return Err(PhysicsError::BadParams(format!("h_max = {}", self.h_max)));
            }
        }
        for (name, v) in [
            ("r_i", self.r_i),
            ("r_s", self.r_s),
            ("r_m", self.r_m),
            ("r_e", self.r_e),
            ("r_v", self.r_v),
            ("r_f", self.r_f),
            ("c_i", self.c_i),
            ("c_m", self.c_m),
        ] {
            if !(v > 0.0) {
                return Err(PhysicsError::BadParams(format!("{name} = {v} must be > 0")));
            }
        }
        for (name, v) in [("fb_max", self.fb_max), ("fw_max", self.fw_max), ("fh_max", self.fh_max)] {
            if v < 0.0 {
                return Err(PhysicsError::BadParams(format!("{name} = {v} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(PhysicsError::BadParams(format!("gamma = {} must be in [0, 1]", self.gamma)));
        }
        Ok(())
    }
}

/// Plant state: battery and tank stocks plus the two envelope temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub b: f64,
    pub h: f64,
    pub theta_w: f64,
    pub theta_i: f64,
}

impl State {
    pub fn new(b: f64, h: f64, theta_w: f64, theta_i: f64) -> Self {
        Self { b, h, theta_w, theta_i }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.b, self.h, self.theta_w, self.theta_i]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self { b: x[0], h: x[1], theta_w: x[2], theta_i: x[3] }
    }
}

/// One decision: battery exchange (signed), tank heating and space heating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub f_b: f64,
    pub f_w: f64,
    pub f_h: f64,
}

impl Control {
    pub fn new(f_b: f64, f_w: f64, f_h: f64) -> Self {
        Self { f_b, f_w, f_h }
    }

    pub const ZERO: Control = Control { f_b: 0.0, f_w: 0.0, f_h: 0.0 };
}

/// One noise realization: net electrical demand (demand minus solar, may be
/// negative) and hot-water demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub d_el_net: f64,
    pub d_th: f64,
}

impl Uncertainty {
    pub fn new(d_el_net: f64, d_th: f64) -> Self {
        Self { d_el_net, d_th }
    }

    pub const ZERO: Uncertainty = Uncertainty { d_el_net: 0.0, d_th: 0.0 };

    pub fn as_array(&self) -> [f64; 2] {
        [self.d_el_net, self.d_th]
    }
}

/// Exogenous thermal inputs over one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exogenous {
    /// Outdoor temperature, °C.
    pub theta_e: f64,
    /// Radiation through windows, W.
    pub phi_int: f64,
    /// Radiation through the wall, W.
    pub phi_ext: f64,
}

/// Per-step exogenous thermal inputs over the whole horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherTrace {
    pub theta_e: Vec<f64>,
    pub phi_int: Vec<f64>,
    pub phi_ext: Vec<f64>,
}

impl WeatherTrace {
    pub fn constant(theta_e: f64, horizon: usize) -> Self {
        Self {
            theta_e: vec![theta_e; horizon],
            phi_int: vec![0.0; horizon],
            phi_ext: vec![0.0; horizon],
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<(), PhysicsError> {
        let want = grid.horizon_steps;
        for got in [self.theta_e.len(), self.phi_int.len(), self.phi_ext.len()] {
            if got != want {
                return Err(PhysicsError::BadWeatherLen { got, want });
            }
        }
        Ok(())
    }

    pub fn at(&self, t: usize) -> Exogenous {
        Exogenous {
            theta_e: self.theta_e[t],
            phi_int: self.phi_int[t],
            phi_ext: self.phi_ext[t],
        }
    }
}

/// Battery stock after one step. No clamping: feasibility is the admissible
/// set's job.
pub fn battery_step(b: f64, f_b: f64, params: &PhysicalParams, grid: &TimeGrid) -> f64 {
    let charge = f_b.max(0.0);
    let discharge = (-f_b).max(0.0);
    b + grid.delta_hours * (params.rho_c * charge - discharge / params.rho_d)
}

/// Tank stock after one step (enthalpy balance).
pub fn tank_step(h: f64, f_w: f64, d_th: f64, params: &PhysicalParams, grid: &TimeGrid) -> f64 {
    h + grid.delta_hours * (params.beta_h * f_w - d_th)
}

/// Affine form of one explicit-Euler step of the R6C2 network:
/// `theta_w' = a_ww·theta_w + a_wi·theta_i + b_w·f_h + r_w` and likewise for
/// the indoor temperature. Heater power is converted kW → W inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalAffine {
    pub a_ww: f64,
    pub a_wi: f64,
    pub b_w: f64,
    pub r_w: f64,
    pub a_iw: f64,
    pub a_ii: f64,
    pub b_i: f64,
    pub r_i: f64,
}

pub fn thermal_affine(params: &PhysicalParams, exo: &Exogenous, grid: &TimeGrid) -> ThermalAffine {
    let dt = grid.delta_seconds();
    let g_is = 1.0 / (params.r_i + params.r_s);
    let g_me = 1.0 / (params.r_m + params.r_e);
    let g_v = 1.0 / params.r_v;
    let g_f = 1.0 / params.r_f;
    let kw = dt / params.c_m;
    let ki = dt / params.c_i;
    ThermalAffine {
        a_ww: 1.0 - kw * (g_is + g_me),
        a_wi: kw * g_is,
        b_w: kw * params.gamma * KW_TO_W,
        r_w: kw
            * (g_me * exo.theta_e
                + params.r_i * g_is * exo.phi_int
                + params.r_e * g_me * exo.phi_ext),
        a_iw: ki * g_is,
        a_ii: 1.0 - ki * (g_is + g_v + g_f),
        b_i: ki * (1.0 - params.gamma) * KW_TO_W,
        r_i: ki * ((g_v + g_f) * exo.theta_e + params.r_s * g_is * exo.phi_int),
    }
}

/// One explicit-Euler step of the two coupled envelope temperatures.
pub fn thermal_step(
    theta_w: f64,
    theta_i: f64,
    f_h: f64,
    exo: &Exogenous,
    params: &PhysicalParams,
    grid: &TimeGrid,
) -> (f64, f64) {
    let c = thermal_affine(params, exo, grid);
    (
        c.a_ww * theta_w + c.a_wi * theta_i + c.b_w * f_h + c.r_w,
        c.a_iw * theta_w + c.a_ii * theta_i + c.b_i * f_h + c.r_i,
    )
}

/// Full state transition: battery, tank and envelope sub-steps applied
/// component-wise.
pub fn dynamics(
    x: &State,
    u: &Control,
    w: &Uncertainty,
    exo: &Exogenous,
    params: &PhysicalParams,
    grid: &TimeGrid,
) -> State {
    let (theta_w, theta_i) = thermal_step(x.theta_w, x.theta_i, u.f_h, exo, params, grid);
    State {
        b: battery_step(x.b, u.f_b, params, grid),
        h: tank_step(x.h, u.f_w, w.d_th, params, grid),
        theta_w,
        theta_i,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    fn grid() -> TimeGrid {
        TimeGrid::default()
    }

    fn params() -> PhysicalParams {
        PhysicalParams::default()
    }

    #[test]
    fn battery_zero_flow_keeps_stock() {
        assert_eq!(battery_step(1.0, 0.0, &params(), &grid()), 1.0);
    }

    #[test]
    fn battery_charge_applies_efficiency() {
        let b = battery_step(1.0, 1.0, &params(), &grid());
        assert!((b - 1.2375).abs() < 1e-12, "got {b}");
    }

    #[test]
    fn battery_discharge_divides_by_efficiency() {
        let b = battery_step(1.0, -1.0, &params(), &grid());
        assert!((b - (1.0 - 0.25 / 0.95)).abs() < 1e-12, "got {b}");
    }

    #[test]
    fn battery_round_trip_loses_energy() {
        let p = params();
        let g = grid();
        let b0 = 1.0;
        let q = 0.8;
        let b1 = battery_step(b0, q, &p, &g);
        // Discharge exactly what is needed to return the stock to b0.
        let needed = (b1 - b0) / g.delta_hours * p.rho_d;
        let b2 = battery_step(b1, -needed, &p, &g);
        assert!((b2 - b0).abs() < 1e-12);
        // Energy drawn from the grid exceeds energy recovered.
        assert!(q > needed * p.rho_d || (p.rho_c - 1.0).abs() < 1e-12);
        assert!(q - needed > 0.0, "round trip should lose energy at rho < 1");

        let mut ideal = p;
        ideal.rho_c = 1.0;
        ideal.rho_d = 1.0;
        let b1 = battery_step(b0, q, &ideal, &g);
        let b2 = battery_step(b1, -q, &ideal, &g);
        assert!((b2 - b0).abs() < 1e-12, "lossless battery round trip is exact");
    }

    #[test]
    fn tank_examples() {
        let p = params();
        let g = grid();
        assert_eq!(tank_step(3.0, 0.0, 0.0, &p, &g), 3.0);
        assert!((tank_step(3.0, 2.0, 0.0, &p, &g) - 3.45).abs() < 1e-12);
        assert!((tank_step(3.0, 0.0, 4.0, &p, &g) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn thermal_uniform_temperature_is_fixed_point() {
        let exo = Exogenous { theta_e: 15.0, phi_int: 0.0, phi_ext: 0.0 };
        let (w, i) = thermal_step(15.0, 15.0, 0.0, &exo, &params(), &grid());
        assert!((w - 15.0).abs() < 1e-12);
        assert!((i - 15.0).abs() < 1e-12);
    }

    #[test]
    fn thermal_gamma_zero_leaves_wall_unheated() {
        let mut p = params();
        p.gamma = 0.0;
        let exo = Exogenous { theta_e: 10.0, phi_int: 0.0, phi_ext: 0.0 };
        let (w_off, i_off) = thermal_step(14.0, 18.0, 0.0, &exo, &p, &grid());
        let (w_on, i_on) = thermal_step(14.0, 18.0, 2.0, &exo, &p, &grid());
        assert_eq!(w_on, w_off, "wall must not see the heater at gamma = 0");
        assert!(i_on > i_off, "indoor must receive all heating at gamma = 0");
    }

    /// Fixed-step RK4 on the two-temperature ODE; test-only oracle.
    fn rk4_envelope(
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

    #[test]
    fn thermal_euler_tracks_rk4_at_displaced_wall() {
        // Wall displaced 3 K off its quasi-static value relative to a warm
        // room: the one-step truncation error stays below 0.1 °C. (The wall
        // time constant is short, so larger artificial displacements decay
        // visibly within a single 900 s step.)
        let p = params();
        let g = grid();
        let exo = Exogenous { theta_e: 5.0, phi_int: 0.0, phi_ext: 0.0 };
        let (ew, ei) = thermal_step(15.0, 20.0, 0.0, &exo, &p, &g);
        let (rw, ri) = rk4_envelope(15.0, 20.0, 0.0, &exo, &p, g.delta_seconds(), 900);
        assert!((ew - rw).abs() < 0.1, "wall: euler {ew} vs rk4 {rw}");
        assert!((ei - ri).abs() < 0.1, "indoor: euler {ei} vs rk4 {ri}");
    }

    #[test]
    fn thermal_euler_matches_rk4_near_quasi_static_states() {
        // Operating states: the wall sits near its conduction balance point
        // for the current (indoor, outdoor) pair. There the Euler step is
        // well within 0.05 °C of the fine-step reference.
        let p = params();
        let g = grid();
        let g_is = 1.0 / (p.r_i + p.r_s);
        let g_me = 1.0 / (p.r_m + p.r_e);
        let mut rng = SmallRng::seed_from_u64(7);
        for _ in 0..200 {
            let theta_e: f64 = rng.random_range(-10.0..35.0);
            let theta_i: f64 = rng.random_range(5.0..30.0);
            let f_h: f64 = rng.random_range(0.0..5.0);
            let exo = Exogenous {
                theta_e,
                phi_int: rng.random_range(0.0..1000.0),
                phi_ext: rng.random_range(0.0..1000.0),
            };
            // Wall balance point for the current forcing; closed-loop states
            // stay within roughly a degree of it (the wall time constant is
            // under an hour).
            let balance = (g_is * theta_i
                + g_me * theta_e
                + p.gamma * f_h * 1e3
                + p.r_i * g_is * exo.phi_int
                + p.r_e * g_me * exo.phi_ext)
                / (g_is + g_me);
            let theta_w = balance + rng.random_range(-1.5..1.5);
            let (ew, ei) = thermal_step(theta_w, theta_i, f_h, &exo, &p, &g);
            let (rw, ri) = rk4_envelope(theta_w, theta_i, f_h, &exo, &p, g.delta_seconds(), 900);
            assert!((ew - rw).abs() < 0.05, "wall: euler {ew} vs rk4 {rw}");
            assert!((ei - ri).abs() < 0.05, "indoor: euler {ei} vs rk4 {ri}");
        }
    }

    #[test]
    fn dynamics_identity_without_inputs() {
        let p = params();
        let g = grid();
        let x = State::new(1.0, 2.0, 16.0, 16.0);
        let exo = Exogenous { theta_e: 16.0, phi_int: 0.0, phi_ext: 0.0 };
        let x1 = dynamics(&x, &Control::ZERO, &Uncertainty::ZERO, &exo, &p, &g);
        assert_eq!(x1, x);
    }

    #[test]
    fn dynamics_composes_the_three_substeps() {
        let p = params();
        let g = grid();
        let mut rng = SmallRng::seed_from_u64(3);
        for _ in 0..50 {
            let x = State::new(
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..6.0),
                rng.random_range(0.0..30.0),
                rng.random_range(0.0..30.0),
            );
            let u = Control::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..3.0),
            );
            let w = Uncertainty::new(rng.random_range(-2.0..2.0), rng.random_range(0.0..4.0));
            let exo = Exogenous {
                theta_e: rng.random_range(-5.0..30.0),
                phi_int: rng.random_range(0.0..800.0),
                phi_ext: rng.random_range(0.0..800.0),
            };
            let x1 = dynamics(&x, &u, &w, &exo, &p, &g);
            let (tw, ti) = thermal_step(x.theta_w, x.theta_i, u.f_h, &exo, &p, &g);
            assert_eq!(x1.b, battery_step(x.b, u.f_b, &p, &g));
            assert_eq!(x1.h, tank_step(x.h, u.f_w, w.d_th, &p, &g));
            assert_eq!((x1.theta_w, x1.theta_i), (tw, ti));
        }
    }

    #[test]
    fn battery_step_is_piecewise_affine_with_known_slopes() {
        let p = params();
        let g = grid();
        let mut rng = SmallRng::seed_from_u64(11);
        let eps = 1e-6;
        for _ in 0..100 {
            let b: f64 = rng.random_range(0.0..3.0);
            // Charging branch.
            let f: f64 = rng.random_range(0.1..3.0);
            let slope = (battery_step(b, f + eps, &p, &g) - battery_step(b, f - eps, &p, &g)) / (2.0 * eps);
            assert!((slope - g.delta_hours * p.rho_c).abs() < 1e-7, "charge slope {slope}");
            // Discharging branch.
            let f: f64 = rng.random_range(-3.0..-0.1);
            let slope = (battery_step(b, f + eps, &p, &g) - battery_step(b, f - eps, &p, &g)) / (2.0 * eps);
            assert!((slope - g.delta_hours / p.rho_d).abs() < 1e-7, "discharge slope {slope}");
            // Affine in the stock on both branches.
            let slope_b = (battery_step(b + eps, f, &p, &g) - battery_step(b - eps, f, &p, &g)) / (2.0 * eps);
            assert!((slope_b - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn thermal_jacobian_matches_affine_coefficients() {
        let p = params();
        let g = grid();
        let exo = Exogenous { theta_e: 4.0, phi_int: 300.0, phi_ext: 150.0 };
        let c = thermal_affine(&p, &exo, &g);
        let eps = 1e-4;
        let fd = |f: &dyn Fn(f64) -> f64, x: f64| (f(x + eps) - f(x - eps)) / (2.0 * eps);

        let w0 = 14.0;
        let i0 = 19.0;
        let fh0 = 1.5;
        let checks: [(f64, f64); 6] = [
            (fd(&|v| thermal_step(v, i0, fh0, &exo, &p, &g).0, w0), c.a_ww),
            (fd(&|v| thermal_step(w0, v, fh0, &exo, &p, &g).0, i0), c.a_wi),
            (fd(&|v| thermal_step(w0, i0, v, &exo, &p, &g).0, fh0), c.b_w),
            (fd(&|v| thermal_step(v, i0, fh0, &exo, &p, &g).1, w0), c.a_iw),
            (fd(&|v| thermal_step(w0, v, fh0, &exo, &p, &g).1, i0), c.a_ii),
            (fd(&|v| thermal_step(w0, i0, v, &exo, &p, &g).1, fh0), c.b_i),
        ];
        for (got, want) in checks {
            let rel = (got - want).abs() / want.abs().max(1.0);
            assert!(rel < 1e-9, "jacobian entry {got} vs {want}");
        }
    }

    #[test]
    fn tank_step_jacobian_is_exact() {
        let p = params();
        let g = grid();
        let eps = 1e-5;
        let dh = (tank_step(2.0 + eps, 1.0, 0.5, &p, &g) - tank_step(2.0 - eps, 1.0, 0.5, &p, &g)) / (2.0 * eps);
        let dfw = (tank_step(2.0, 1.0 + eps, 0.5, &p, &g) - tank_step(2.0, 1.0 - eps, 0.5, &p, &g)) / (2.0 * eps);
        let dd = (tank_step(2.0, 1.0, 0.5 + eps, &p, &g) - tank_step(2.0, 1.0, 0.5 - eps, &p, &g)) / (2.0 * eps);
        assert!((dh - 1.0).abs() < 1e-9);
        assert!((dfw - g.delta_hours * p.beta_h).abs() < 1e-9);
        assert!((dd + g.delta_hours).abs() < 1e-9);
    }

    #[test]
    fn tank_capacity_from_volume_and_swing() {
        // 120 l with a 50 K useful swing is just under 7 kWh.
        let e = tank_energy_kwh(120.0, 50.0);
        assert!((e - 6.977).abs() < 5e-3, "got {e}");
    }

    #[test]
    fn weather_trace_length_checked() {
        let g = grid();
        let w = WeatherTrace::constant(10.0, 95);
        assert!(matches!(w.validate(&g), Err(PhysicsError::BadWeatherLen { .. })));
        assert!(WeatherTrace::constant(10.0, 96).validate(&g).is_ok());
    }
}
