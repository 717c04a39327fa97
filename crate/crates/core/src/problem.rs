//! The multistage stochastic problem around the plant: load balance, stage
//! and final costs, and the state-dependent admissible control box.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{
    Control, PhysicalParams, PhysicsError, State, TimeGrid, Uncertainty, WeatherTrace,
};

/// Tolerance used when checking whether a state sits inside its stock bounds.
pub const STATE_FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("state outside stock bounds: {0}")]
    InfeasibleState(String),
    #[error("invalid cost parameters: {0}")]
    BadCosts(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Per-step tariffs, discomfort prices and temperature setpoints, plus the
/// final stock penalty coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// €/kWh for imported energy.
    pub price_elec: Vec<f64>,
    /// €/(°C·step) charged when the indoor temperature is below the setpoint.
    pub price_discomfort: Vec<f64>,
    /// °C setpoint per step.
    pub temp_setpoint: Vec<f64>,
    /// €/kWh penalty on final stocks below their initial level.
    pub kappa: f64,
}

impl CostParams {
    /// On-peak / off-peak tariff with a flat discomfort price and setpoint.
    pub fn on_off_peak(
        grid: &TimeGrid,
        on_peak: f64,
        off_peak: f64,
        price_discomfort: f64,
        setpoint: f64,
        kappa: f64,
    ) -> Self {
        let price_elec = (0..grid.horizon_steps)
            .map(|t| {
                let hour = grid.hour_of_day(t);
                if (7.0..23.0).contains(&hour) {
                    on_peak
                } else {
                    off_peak
                }
            })
            .collect();
        Self {
            price_elec,
            price_discomfort: vec![price_discomfort; grid.horizon_steps],
            temp_setpoint: vec![setpoint; grid.horizon_steps],
            kappa,
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<(), ProblemError> {
        let t = grid.horizon_steps;
        if self.price_elec.len() != t || self.price_discomfort.len() != t || self.temp_setpoint.len() != t {
            return Err(ProblemError::BadCosts(format!(
                "cost arrays must have length {t} (got {}, {}, {})",
                self.price_elec.len(),
                self.price_discomfort.len(),
                self.temp_setpoint.len()
            )));
        }
        if self.price_elec.iter().chain(&self.price_discomfort).any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(ProblemError::BadCosts("prices must be finite and >= 0".into()));
        }
        if self.kappa < 0.0 || !self.kappa.is_finite() {
            return Err(ProblemError::BadCosts(format!("kappa = {}", self.kappa)));
        }
        Ok(())
    }
}

/// One full problem instance: plant, grid, tariffs, weather and start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub grid: TimeGrid,
    pub params: PhysicalParams,
    pub costs: CostParams,
    pub weather: WeatherTrace,
    pub x0: State,
}

impl Problem {
    pub fn validate(&self) -> Result<(), ProblemError> {
        self.grid.validate()?;
        self.params.validate()?;
        self.costs.validate(&self.grid)?;
        self.weather.validate(&self.grid)?;
        check_state(&self.x0, &self.params)?;
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.grid.horizon_steps
    }
}

fn check_state(x: &State, params: &PhysicalParams) -> Result<(), ProblemError> {
    if x.b < params.b_min - STATE_FEAS_TOL || x.b > params.b_max + STATE_FEAS_TOL {
        return Err(ProblemError::InfeasibleState(format!(
            "battery stock {} outside [{}, {}]",
            x.b, params.b_min, params.b_max
        )));
    }
    if x.h < -STATE_FEAS_TOL || x.h > params.h_max + STATE_FEAS_TOL {
        return Err(ProblemError::InfeasibleState(format!(
            "tank stock {} outside [0, {}]",
            x.h, params.h_max
        )));
    }
    Ok(())
}

/// Net energy imported from the external network (negative means wasted
/// surplus). Solar production is already netted into `d_el_net`.
pub fn net_import(u: &Control, w: &Uncertainty) -> f64 {
    u.f_b + u.f_w + u.f_h + w.d_el_net
}

/// Stage cost: energy bought over the step plus the discomfort penalty on
/// the current indoor temperature.
pub fn stage_cost(
    x: &State,
    u: &Control,
    w: &Uncertainty,
    t: usize,
    costs: &CostParams,
    grid: &TimeGrid,
) -> f64 {
    let bought = net_import(u, w).max(0.0);
    costs.price_elec[t] * grid.delta_hours * bought
        + costs.price_discomfort[t] * (costs.temp_setpoint[t] - x.theta_i).max(0.0)
}

/// Final penalty on stocks ending below their initial level. Temperatures
/// are already penalized per step and are not part of the final cost.
pub fn final_cost(x_final: &State, x0: &State, kappa: f64) -> f64 {
    kappa * ((x0.b - x_final.b).max(0.0) + (x0.h - x_final.h).max(0.0))
}

/// State-dependent control bounds: next battery stock must stay within its
/// bounds for every noise (the battery sees none), the tank must not
/// overflow even at zero demand, plus the static box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibleBox {
    pub f_b: (f64, f64),
    pub f_w: (f64, f64),
    pub f_h: (f64, f64),
}

impl AdmissibleBox {
    pub fn contains(&self, u: &Control, tol: f64) -> bool {
        u.f_b >= self.f_b.0 - tol
            && u.f_b <= self.f_b.1 + tol
            && u.f_w >= self.f_w.0 - tol
            && u.f_w <= self.f_w.1 + tol
            && u.f_h >= self.f_h.0 - tol
            && u.f_h <= self.f_h.1 + tol
    }

    /// Project a control onto the box (used to strip solver round-off).
    pub fn clamp(&self, u: &Control) -> Control {
        Control {
            f_b: u.f_b.clamp(self.f_b.0, self.f_b.1),
            f_w: u.f_w.clamp(self.f_w.0, self.f_w.1),
            f_h: u.f_h.clamp(self.f_h.0, self.f_h.1),
        }
    }
}

/// Admissible control box at state `x`. Errors if `x` violates the stock
/// bounds by more than the feasibility tolerance.
pub fn admissible_box(
    x: &State,
    params: &PhysicalParams,
    grid: &TimeGrid,
) -> Result<AdmissibleBox, ProblemError> {
    check_state(x, params)?;
    let dt = grid.delta_hours;
    // Clip tiny negative headroom coming from states at (or 1e-6 beyond) a bound.
    let charge_cap = ((params.b_max - x.b) / (dt * params.rho_c)).max(0.0);
    let discharge_cap = ((x.b - params.b_min) * params.rho_d / dt).max(0.0);
    let tank_cap = ((params.h_max - x.h) / (dt * params.beta_h)).max(0.0);
    Ok(AdmissibleBox {
        f_b: (-params.fb_max.min(discharge_cap), params.fb_max.min(charge_cap)),
        f_w: (0.0, params.fw_max.min(tank_cap)),
        f_h: (0.0, params.fh_max),
    })
}
