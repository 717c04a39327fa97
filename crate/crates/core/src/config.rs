//! Experiment configuration: one human-editable TOML file collecting every
//! tunable of the toolkit. Unknown keys are rejected so a config cannot
//! silently drift from the code.
//!
//! The three day presets (winter, spring, summer) set outdoor temperature,
//! radiation and solar production to typical values for those seasons; all
//! other numbers live here with their defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{tank_energy_kwh, PhysicalParams, State, TimeGrid, WeatherTrace};
use crate::problem::{CostParams, Problem};
use crate::scenarios::{DemandProfile, SolarNoiseModel};
use crate::sddp::SddpConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayPreset {
    Winter,
    Spring,
    Summer,
}

impl DayPreset {
    pub fn all() -> [DayPreset; 3] {
        [DayPreset::Winter, DayPreset::Spring, DayPreset::Summer]
    }

    pub fn label(&self) -> &'static str {
        match self {
            DayPreset::Winter => "winter",
            DayPreset::Spring => "spring",
            DayPreset::Summer => "summer",
        }
    }

    /// Daily mean outdoor temperature, °C.
    fn mean_outdoor_c(&self) -> f64 {
        match self {
            DayPreset::Winter => 3.3,
            DayPreset::Spring => 10.1,
            DayPreset::Summer => 14.1,
        }
    }

    /// Solar irradiance collected by the panel, kWh per m² per day.
    fn irradiance_kwh_m2(&self) -> f64 {
        match self {
            DayPreset::Winter => 2.8,
            DayPreset::Spring => 4.933,
            DayPreset::Summer => 7.767,
        }
    }

    fn daylight_hours(&self) -> (f64, f64) {
        match self {
            DayPreset::Winter => (8.5, 17.0),
            DayPreset::Spring => (7.5, 18.5),
            DayPreset::Summer => (6.5, 20.0),
        }
    }

    fn outdoor_amplitude_c(&self) -> f64 {
        match self {
            DayPreset::Winter => 3.0,
            DayPreset::Spring => 4.0,
            DayPreset::Summer => 5.0,
        }
    }

    /// Peak radiation through windows / through the wall, W.
    fn radiation_peaks_w(&self) -> (f64, f64) {
        match self {
            DayPreset::Winter => (150.0, 300.0),
            DayPreset::Spring => (250.0, 500.0),
            DayPreset::Summer => (350.0, 700.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub delta_hours: f64,
    pub horizon_steps: usize,
    pub start_step: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { delta_hours: 0.25, horizon_steps: 96, start_step: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalSection {
    pub rho_c: f64,
    pub rho_d: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub beta_h: f64,
    pub fb_max: f64,
    pub fw_max: f64,
    pub fh_max: f64,
    /// Tank size; capacity in kWh is derived from volume and swing.
    pub tank_volume_l: f64,
    pub tank_temp_swing_k: f64,
    pub r_i: f64,
    pub r_s: f64,
    pub r_m: f64,
    pub r_e: f64,
    pub r_v: f64,
    pub r_f: f64,
    pub c_i: f64,
    pub c_m: f64,
    pub gamma: f64,
    pub panel_area_m2: f64,
    pub panel_yield: f64,
}

impl Default for PhysicalSection {
    fn default() -> Self {
        let p = PhysicalParams::default();
        Self {
            rho_c: p.rho_c,
            rho_d: p.rho_d,
            b_min: p.b_min,
            b_max: p.b_max,
            beta_h: p.beta_h,
            fb_max: p.fb_max,
            fw_max: p.fw_max,
            fh_max: p.fh_max,
            tank_volume_l: 120.0,
            tank_temp_swing_k: 50.0,
            r_i: p.r_i,
            r_s: p.r_s,
            r_m: p.r_m,
            r_e: p.r_e,
            r_v: p.r_v,
            r_f: p.r_f,
            c_i: p.c_i,
            c_m: p.c_m,
            gamma: p.gamma,
            panel_area_m2: p.panel_area_m2,
            panel_yield: p.panel_yield,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialStateSection {
    pub b: f64,
    /// Initial tank level as a fraction of capacity.
    pub h_fraction: f64,
    pub theta_w: f64,
    pub theta_i: f64,
}

impl Default for InitialStateSection {
    fn default() -> Self {
        Self { b: 0.0, h_fraction: 0.5, theta_w: 17.0, theta_i: 17.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    /// €/kWh between 07:00 and 23:00.
    pub on_peak: f64,
    pub off_peak: f64,
    /// €/(°C·step) below the setpoint.
    pub price_discomfort: f64,
    pub setpoint_c: f64,
    pub kappa: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { on_peak: 0.15, off_peak: 0.09, price_discomfort: 0.05, setpoint_c: 16.0, kappa: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandSection {
    /// Base load through the night, kW.
    pub night_kw: f64,
    /// Peak extra load of the morning / midday / evening bumps, kW.
    pub morning_kw: f64,
    pub midday_kw: f64,
    pub evening_kw: f64,
    /// Lognormal sigma of the multiplicative electrical noise.
    pub sigma_el: f64,
    pub base_th_kw: f64,
    pub sigma_th: f64,
    pub shower_kw: f64,
    pub shower_sigma: f64,
    pub morning_shower_prob: f64,
    pub midday_shower_prob: f64,
    pub evening_shower_prob: f64,
}

impl Default for DemandSection {
    fn default() -> Self {
        Self {
            night_kw: 0.15,
            morning_kw: 0.7,
            midday_kw: 0.9,
            evening_kw: 1.5,
            sigma_el: 0.25,
            base_th_kw: 0.05,
            sigma_th: 0.3,
            shower_kw: 4.0,
            shower_sigma: 0.3,
            morning_shower_prob: 0.12,
            midday_shower_prob: 0.03,
            evening_shower_prob: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub n_optimization: usize,
    pub n_assessment: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self { n_optimization: 1000, n_assessment: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizationSection {
    pub atoms: usize,
}

impl Default for QuantizationSection {
    fn default() -> Self {
        Self { atoms: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SddpSection {
    pub max_iterations: usize,
    pub gap_tolerance: f64,
    pub ub_eval_scenarios: usize,
    pub ub_check_period: usize,
    pub forward_passes: usize,
    /// "offline" reuses the quantized training distributions online;
    /// "ar_conditional" recenters quantized AR residuals on the latest
    /// observation.
    pub online_model: String,
}

impl Default for SddpSection {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            gap_tolerance: 0.001,
            ub_eval_scenarios: 500,
            ub_check_period: 10,
            forward_passes: 1,
            online_model: "offline".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    /// "cuts" evaluates precomputed deterministic tail value functions;
    /// "exact" re-solves the full tail LP at every decision.
    pub tail_mode: String,
    pub tail_iterations: usize,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self { tail_mode: "cuts".into(), tail_iterations: 240 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleSection {
    /// Tank refill target as a fraction of capacity.
    pub h_target_fraction: f64,
    pub margin_c: f64,
}

impl Default for RuleSection {
    fn default() -> Self {
        Self { h_target_fraction: 0.5, margin_c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub sigma_values: Vec<f64>,
    pub n_optimization: usize,
    pub n_assessment: usize,
    pub policies: Vec<String>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sigma_values: vec![0.0, 0.05, 0.1, 0.2],
            n_optimization: 1000,
            n_assessment: 10_000,
            policies: vec!["sddp".into(), "mpc".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub histogram_bins: usize,
    pub histogram_pair: Vec<String>,
    /// Cap on how many assessment trajectories are written to CSV.
    pub max_trajectories: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            histogram_bins: 40,
            histogram_pair: vec!["sddp".into(), "mpc".into()],
            max_trajectories: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub day: DayPreset,
    pub output_dir: String,
    /// 0 uses all available cores.
    pub threads: usize,
    pub grid: GridSection,
    pub physical: PhysicalSection,
    pub initial_state: InitialStateSection,
    pub costs: CostSection,
    pub demand: DemandSection,
    pub scenarios: ScenarioSection,
    pub quantization: QuantizationSection,
    pub sddp: SddpSection,
    pub mpc: MpcSection,
    pub rule: RuleSection,
    pub sweep: SweepSection,
    pub report: ReportSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            day: DayPreset::Summer,
            output_dir: "results/run".into(),
            threads: 0,
            grid: GridSection::default(),
            physical: PhysicalSection::default(),
            initial_state: InitialStateSection::default(),
            costs: CostSection::default(),
            demand: DemandSection::default(),
            scenarios: ScenarioSection::default(),
            quantization: QuantizationSection::default(),
            sddp: SddpSection::default(),
            mpc: MpcSection::default(),
            rule: RuleSection::default(),
            sweep: SweepSection::default(),
            report: ReportSection::default(),
        }
    }
}

/// Seed derivation for independent random streams, tagged by purpose.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer.
    let mut z = base ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn gauss_bump(h: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((h - center) / width).powi(2)).exp()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn build_grid(&self) -> TimeGrid {
        TimeGrid {
            delta_hours: self.grid.delta_hours,
            horizon_steps: self.grid.horizon_steps,
            start_step: self.grid.start_step,
        }
    }

    pub fn tank_capacity_kwh(&self) -> f64 {
        tank_energy_kwh(self.physical.tank_volume_l, self.physical.tank_temp_swing_k)
    }

    pub fn build_params(&self) -> PhysicalParams {
        let p = &self.physical;
        PhysicalParams {
            rho_c: p.rho_c,
            rho_d: p.rho_d,
            b_min: p.b_min,
            b_max: p.b_max,
            h_max: self.tank_capacity_kwh(),
            beta_h: p.beta_h,
            fb_max: p.fb_max,
            fw_max: p.fw_max,
            fh_max: p.fh_max,
            r_i: p.r_i,
            r_s: p.r_s,
            r_m: p.r_m,
            r_e: p.r_e,
            r_v: p.r_v,
            r_f: p.r_f,
            c_i: p.c_i,
            c_m: p.c_m,
            gamma: p.gamma,
            panel_area_m2: p.panel_area_m2,
            panel_yield: p.panel_yield,
        }
    }

    pub fn build_costs(&self) -> CostParams {
        CostParams::on_off_peak(
            &self.build_grid(),
            self.costs.on_peak,
            self.costs.off_peak,
            self.costs.price_discomfort,
            self.costs.setpoint_c,
            self.costs.kappa,
        )
    }

    pub fn build_weather(&self) -> WeatherTrace {
        let grid = self.build_grid();
        let day = self.day;
        let mean = day.mean_outdoor_c();
        let amp = day.outdoor_amplitude_c();
        let (sun_a, sun_b) = day.daylight_hours();
        let (peak_int, peak_ext) = day.radiation_peaks_w();
        let window = sun_b - sun_a;
        let mut theta_e = Vec::with_capacity(grid.horizon_steps);
        let mut phi_int = Vec::with_capacity(grid.horizon_steps);
        let mut phi_ext = Vec::with_capacity(grid.horizon_steps);
        for t in 0..grid.horizon_steps {
            let h = grid.hour_of_day(t);
            theta_e.push(mean - amp * (2.0 * std::f64::consts::PI * (h - 15.0) / 24.0).cos());
            let sun = if h >= sun_a && h < sun_b {
                (std::f64::consts::PI * (h - sun_a) / window).sin().powi(2)
            } else {
                0.0
            };
            phi_int.push(peak_int * sun);
            phi_ext.push(peak_ext * sun);
        }
        WeatherTrace { theta_e, phi_int, phi_ext }
    }

    /// Deterministic solar production profile implied by the day preset and
    /// the panel, kW per step.
    pub fn build_solar_mu(&self) -> Vec<f64> {
        let grid = self.build_grid();
        let (sun_a, sun_b) = self.day.daylight_hours();
        let daily =
            self.day.irradiance_kwh_m2() * self.physical.panel_area_m2 * self.physical.panel_yield;
        SolarNoiseModel::bell(&grid, sun_a, sun_b, daily).mu
    }

    pub fn build_solar_model(&self, sigma_final: f64) -> SolarNoiseModel {
        SolarNoiseModel { mu: self.build_solar_mu(), sigma_0: 0.0, sigma_final }
    }

    /// Household demand profile with the preset's solar netted in.
    pub fn build_demand_profile(&self) -> DemandProfile {
        let grid = self.build_grid();
        let d = &self.demand;
        let solar_mu = self.build_solar_mu();
        let mut mean_el = Vec::with_capacity(grid.horizon_steps);
        let mut event_prob = Vec::with_capacity(grid.horizon_steps);
        for t in 0..grid.horizon_steps {
            let h = grid.hour_of_day(t);
            mean_el.push(
                d.night_kw
                    + d.morning_kw * gauss_bump(h, 7.5, 1.2)
                    + d.midday_kw * gauss_bump(h, 13.0, 1.8)
                    + d.evening_kw * gauss_bump(h, 20.0, 1.6),
            );
            let p = if (6.5..9.0).contains(&h) {
                d.morning_shower_prob
            } else if (12.0..14.0).contains(&h) {
                d.midday_shower_prob
            } else if (19.0..22.0).contains(&h) {
                d.evening_shower_prob
            } else {
                0.0
            };
            event_prob.push(p);
        }
        DemandProfile {
            mean_el,
            sigma_el: d.sigma_el,
            solar_mu,
            base_th: vec![d.base_th_kw; grid.horizon_steps],
            sigma_th: d.sigma_th,
            event_prob,
            event_kw: d.shower_kw,
            event_sigma: d.shower_sigma,
        }
    }

    pub fn build_initial_state(&self) -> State {
        State::new(
            self.initial_state.b,
            self.initial_state.h_fraction * self.tank_capacity_kwh(),
            self.initial_state.theta_w,
            self.initial_state.theta_i,
        )
    }

    pub fn build_problem(&self) -> Result<Problem, ConfigError> {
        let problem = Problem {
            grid: self.build_grid(),
            params: self.build_params(),
            costs: self.build_costs(),
            weather: self.build_weather(),
            x0: self.build_initial_state(),
        };
        problem.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(problem)
    }

    pub fn build_sddp_config(&self) -> SddpConfig {
        SddpConfig {
            max_iterations: self.sddp.max_iterations,
            gap_tolerance: self.sddp.gap_tolerance,
            ub_eval_scenarios: self.sddp.ub_eval_scenarios,
            ub_check_period: self.sddp.ub_check_period,
            rng_seed: derive_seed(self.seed, "sddp"),
            forward_passes_per_iteration: self.sddp.forward_passes,
        }
    }

    pub fn rule_h_target(&self) -> f64 {
        self.rule.h_target_fraction * self.tank_capacity_kwh()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_problem()?;
        self.build_demand_profile()
            .validate(&self.build_grid())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.build_sddp_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.scenarios.n_optimization < 2 || self.scenarios.n_assessment < 2 {
            return Err(ConfigError::Invalid("need at least 2 scenarios per split".into()));
        }
        if self.quantization.atoms < 1 {
            return Err(ConfigError::Invalid("quantization.atoms must be >= 1".into()));
        }
        match self.sddp.online_model.as_str() {
            "offline" | "ar_conditional" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "sddp.online_model '{other}' (expected 'offline' or 'ar_conditional')"
                )))
            }
        }
        match self.mpc.tail_mode.as_str() {
            "cuts" | "exact" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "mpc.tail_mode '{other}' (expected 'cuts' or 'exact')"
                )))
            }
        }
        if !(0.0..=1.0).contains(&self.rule.h_target_fraction)
            || !(0.0..=1.0).contains(&self.initial_state.h_fraction)
        {
            return Err(ConfigError::Invalid("tank fractions must be in [0, 1]".into()));
        }
        for name in self.sweep.policies.iter().chain(&self.report.histogram_pair) {
            if !matches!(name.as_str(), "sddp" | "mpc" | "rule") {
                return Err(ConfigError::Invalid(format!("unknown policy '{name}'")));
            }
        }
        for s in &self.sweep.sigma_values {
            if *s < 0.0 {
                return Err(ConfigError::Invalid("sweep sigma values must be >= 0".into()));
            }
        }
        if self.report.histogram_bins == 0 {
            return Err(ConfigError::Invalid("report.histogram_bins must be >= 1".into()));
        }
        Ok(())
    }
}
