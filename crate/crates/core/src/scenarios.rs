//! Synthetic demand scenarios, solar-noise scenarios, Lloyd–Max quantization
//! into discrete distributions, and the AR(1) forecasting machinery.
//!
//! Scenario indexing convention used everywhere: `scenario[t]` is the noise
//! realized over the interval `[t, t+1)`, i.e. the value of W_{t+1}. At
//! decision time `t` the controller has observed `scenario[0..t]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{TimeGrid, Uncertainty};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid demand profile: {0}")]
    BadProfile(String),
    #[error("need at least {need} scenarios, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("cannot quantize an empty point set")]
    EmptyPoints,
    #[error("invalid distribution: {0}")]
    BadDistribution(String),
}

/// Finite-support distribution of one step's uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    pub atoms: Vec<Uncertainty>,
    pub weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<Uncertainty>, weights: Vec<f64>) -> Result<Self, ScenarioError> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(ScenarioError::BadDistribution(format!(
                "{} atoms vs {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(ScenarioError::BadDistribution("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ScenarioError::BadDistribution(format!("weights sum to {total}")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn dirac(w: Uncertainty) -> Self {
        Self { atoms: vec![w], weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Uncertainty {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *a;
            }
        }
        *self.atoms.last().unwrap()
    }

    pub fn mean(&self) -> Uncertainty {
        let mut el = 0.0;
        let mut th = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            el += w * a.d_el_net;
            th += w * a.d_th;
        }
        Uncertainty::new(el, th)
    }

    pub fn max_d_th(&self) -> f64 {
        self.atoms.iter().map(|a| a.d_th).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioRole {
    Optimization,
    Assessment,
}

/// A bundle of noise scenarios, each of horizon length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub scenarios: Vec<Vec<Uncertainty>>,
    pub role: ScenarioRole,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.scenarios.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<(), ScenarioError> {
        for (i, s) in self.scenarios.iter().enumerate() {
            if s.len() != grid.horizon_steps {
                return Err(ScenarioError::BadProfile(format!(
                    "scenario {i} has {} steps, horizon is {}",
                    s.len(),
                    grid.horizon_steps
                )));
            }
            if s.iter().any(|w| w.d_th < 0.0) {
                return Err(ScenarioError::BadProfile(format!("scenario {i} has negative d_th")));
            }
        }
        Ok(())
    }

    /// Column means, one per step.
    pub fn column_means(&self) -> Vec<Uncertainty> {
        let t_len = self.horizon();
        let n = self.len() as f64;
        (0..t_len)
            .map(|t| {
                let mut el = 0.0;
                let mut th = 0.0;
                for s in &self.scenarios {
                    el += s[t].d_el_net;
                    th += s[t].d_th;
                }
                Uncertainty::new(el / n, th / n)
            })
            .collect()
    }
}

/// Generative shape of household demand. Electrical demand is a mean profile
/// under multiplicative lognormal noise; hot water is a small lognormal base
/// draw plus Bernoulli events (showers) with lognormal magnitude. The
/// deterministic solar profile is netted off the electrical demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    /// Per-step mean electrical demand before solar netting, kW.
    pub mean_el: Vec<f64>,
    /// Lognormal sigma of the multiplicative electrical noise.
    pub sigma_el: f64,
    /// Per-step deterministic solar production, kW.
    pub solar_mu: Vec<f64>,
    /// Per-step mean of the base hot-water draw, kW.
    pub base_th: Vec<f64>,
    /// Lognormal sigma of the base hot-water draw.
    pub sigma_th: f64,
    /// Per-step probability of a shower event.
    pub event_prob: Vec<f64>,
    /// Mean power of one shower event, kW.
    pub event_kw: f64,
    /// Lognormal sigma of the event magnitude.
    pub event_sigma: f64,
}

impl DemandProfile {
    pub fn validate(&self, grid: &TimeGrid) -> Result<(), ScenarioError> {
        let t = grid.horizon_steps;
        for (name, len) in [
            ("mean_el", self.mean_el.len()),
            ("solar_mu", self.solar_mu.len()),
            ("base_th", self.base_th.len()),
            ("event_prob", self.event_prob.len()),
        ] {
            if len != t {
                return Err(ScenarioError::BadProfile(format!("{name} has length {len}, want {t}")));
            }
        }
        if self.mean_el.iter().chain(&self.base_th).chain(&self.solar_mu).any(|v| *v < 0.0) {
            return Err(ScenarioError::BadProfile("means must be nonnegative".into()));
        }
        if self.event_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ScenarioError::BadProfile("event probabilities must be in [0, 1]".into()));
        }
        if self.sigma_el < 0.0 || self.sigma_th < 0.0 || self.event_sigma < 0.0 || self.event_kw < 0.0 {
            return Err(ScenarioError::BadProfile("dispersions must be nonnegative".into()));
        }
        Ok(())
    }

    /// Expected net electrical demand at step `t`.
    pub fn mean_el_net(&self, t: usize) -> f64 {
        self.mean_el[t] - self.solar_mu[t]
    }

    /// Expected hot-water demand at step `t`.
    pub fn mean_th(&self, t: usize) -> f64 {
        self.base_th[t] + self.event_prob[t] * self.event_kw
    }

    /// A dispersion-free copy whose single scenario is exactly the mean
    /// trace of this profile.
    pub fn collapsed_to_means(&self) -> Self {
        let t_len = self.mean_el.len();
        Self {
            mean_el: self.mean_el.clone(),
            sigma_el: 0.0,
            solar_mu: self.solar_mu.clone(),
            base_th: (0..t_len).map(|t| self.mean_th(t)).collect(),
            sigma_th: 0.0,
            event_prob: vec![0.0; t_len],
            event_kw: 0.0,
            event_sigma: 0.0,
        }
    }
}

/// Mean-one lognormal factor: exp(sigma·z − sigma²/2).
fn lognormal_factor<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z - 0.5 * sigma * sigma).exp()
}

/// Seeded scenario generation. Identical inputs give identical output.
pub fn generate_scenarios(
    profile: &DemandProfile,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
    role: ScenarioRole,
) -> Result<ScenarioSet, ScenarioError> {
    profile.validate(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenarios = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = Vec::with_capacity(grid.horizon_steps);
        for t in 0..grid.horizon_steps {
            let d_el = self_noise(profile.mean_el[t], profile.sigma_el, &mut rng);
            let mut d_th = self_noise(profile.base_th[t], profile.sigma_th, &mut rng);
            // Event coin and magnitude are drawn unconditionally so the
            // stream layout does not depend on outcomes.
            let coin: f64 = rng.random();
            let magnitude = profile.event_kw * lognormal_factor(&mut rng, profile.event_sigma);
            if coin < profile.event_prob[t] {
                d_th += magnitude;
            }
            s.push(Uncertainty::new(d_el - profile.solar_mu[t], d_th));
        }
        scenarios.push(s);
    }
    Ok(ScenarioSet { scenarios, role })
}

fn self_noise<R: Rng>(mean: f64, sigma: f64, rng: &mut R) -> f64 {
    let f = lognormal_factor(rng, sigma);
    if sigma == 0.0 {
        mean
    } else {
        mean * f
    }
}

/// Disjoint optimization/assessment split from one seeded stream.
pub fn generate_split(
    profile: &DemandProfile,
    grid: &TimeGrid,
    n_opt: usize,
    n_sim: usize,
    seed: u64,
) -> Result<(ScenarioSet, ScenarioSet), ScenarioError> {
    let all = generate_scenarios(profile, grid, n_opt + n_sim, seed, ScenarioRole::Optimization)?;
    let mut scenarios = all.scenarios;
    let assess = scenarios.split_off(n_opt);
    Ok((
        ScenarioSet { scenarios, role: ScenarioRole::Optimization },
        ScenarioSet { scenarios: assess, role: ScenarioRole::Assessment },
    ))
}

/// Result of Lloyd–Max quantization of a point cloud.
#[derive(Debug, Clone)]
pub struct Quantization {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Number of atoms originally requested (kept for diagnostics when the
    /// distinct-point count forced a reduction).
    pub requested: usize,
    /// Distortion after each Lloyd iteration; non-increasing.
    pub distortions: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd–Max quantization: `s` centroids and their cluster fractions,
/// iterated to an assignment fixpoint (at most 100 rounds). If fewer than
/// `s` distinct points exist, the atom count is reduced to the distinct
/// count.
pub fn lloyd_max_quantize(
    points: &[Vec<f64>],
    s: usize,
    seed: u64,
) -> Result<Quantization, ScenarioError> {
    if points.is_empty() || s == 0 {
        return Err(ScenarioError::EmptyPoints);
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(ScenarioError::BadProfile("points of mixed dimension".into()));
    }

    // Distinct points, deterministically ordered.
    let mut distinct: Vec<Vec<f64>> = points.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let eff_s = s.min(distinct.len());

    // Seeded draw of initial centroids among the distinct points.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..distinct.len()).collect();
    for i in 0..eff_s {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut centroids: Vec<Vec<f64>> = idx[..eff_s].iter().map(|&i| distinct[i].clone()).collect();

    let mut assign = vec![usize::MAX; points.len()];
    let mut distortions: Vec<f64> = Vec::new();
    for _round in 0..100 {
        let mut changed = false;
        let mut distortion = 0.0;
        for (p, a) in points.iter().zip(assign.iter_mut()) {
            let mut best = 0usize;
            let mut best_d = sq_dist(p, &centroids[0]);
            for (k, c) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(p, c);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            distortion += best_d;
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if let Some(&prev) = distortions.last() {
            debug_assert!(distortion <= prev + 1e-9 * prev.abs().max(1.0), "Lloyd distortion increased");
        }
        distortions.push(distortion);
        if !changed {
            break;
        }
        // Centroid update; an emptied cluster is reseeded at the point
        // farthest from its current centroid.
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for k in 0..centroids.len() {
            if counts[k] == 0 {
                let (far, _) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centroids[assign[i]])))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
                    .unwrap();
                centroids[k] = points[far].clone();
            } else {
                for (c, s) in centroids[k].iter_mut().zip(&sums[k]) {
                    *c = s / counts[k] as f64;
                }
            }
        }
    }

    let mut counts = vec![0usize; centroids.len()];
    for &a in &assign {
        counts[a] += 1;
    }
    let total = points.len() as f64;
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(Quantization { atoms: centroids, weights, requested: s, distortions })
}

/// Per-step joint quantization of a scenario set into `s`-atom
/// distributions over (d_el_net, d_th).
pub fn quantize_scenarios(
    set: &ScenarioSet,
    s: usize,
    seed: u64,
) -> Result<Vec<DiscreteDistribution>, ScenarioError> {
    let t_len = set.horizon();
    let mut dists = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let points: Vec<Vec<f64>> =
            set.scenarios.iter().map(|sc| vec![sc[t].d_el_net, sc[t].d_th]).collect();
        let q = lloyd_max_quantize(&points, s, seed.wrapping_add(t as u64))?;
        let atoms = q.atoms.iter().map(|a| Uncertainty::new(a[0], a[1])).collect();
        dists.push(DiscreteDistribution::new(atoms, q.weights)?);
    }
    Ok(dists)
}

/// Per-step AR(1) model `w_{t+1} = alpha_t · w_t + beta_t + eps`, fitted by
/// ordinary least squares across scenarios, per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Model {
    pub alpha: Vec<[f64; 2]>,
    pub beta: Vec<[f64; 2]>,
    pub resid_std: Vec<[f64; 2]>,
    /// (step, dimension) pairs where the predictor had no variance and the
    /// fit fell back to the unconditional mean.
    pub fallbacks: Vec<(usize, usize)>,
}

const AR_VAR_TOL: f64 = 1e-12;

pub fn fit_ar1(set: &ScenarioSet) -> Result<Ar1Model, ScenarioError> {
    let n = set.len();
    if n < 2 {
        return Err(ScenarioError::TooFew { need: 2, got: n });
    }
    let t_len = set.horizon();
    let nf = n as f64;
    let mut model = Ar1Model {
        alpha: Vec::with_capacity(t_len),
        beta: Vec::with_capacity(t_len),
        resid_std: Vec::with_capacity(t_len),
        fallbacks: Vec::new(),
    };
    for t in 0..t_len {
        let mut alpha = [0.0; 2];
        let mut beta = [0.0; 2];
        let mut resid = [0.0; 2];
        for dim in 0..2 {
            let target: Vec<f64> = set.scenarios.iter().map(|s| pick(&s[t], dim)).collect();
            let ybar = target.iter().sum::<f64>() / nf;
            if t == 0 {
                // No prior observation exists for the first step; the
                // forecast of W_1 is its unconditional mean.
                beta[dim] = ybar;
                resid[dim] = (target.iter().map(|y| (y - ybar).powi(2)).sum::<f64>() / nf).sqrt();
                continue;
            }
            let pred: Vec<f64> = set.scenarios.iter().map(|s| pick(&s[t - 1], dim)).collect();
            let xbar = pred.iter().sum::<f64>() / nf;
            let sxx: f64 = pred.iter().map(|x| (x - xbar).powi(2)).sum();
            if sxx <= AR_VAR_TOL {
                alpha[dim] = 0.0;
                beta[dim] = ybar;
                model.fallbacks.push((t, dim));
            } else {
                let sxy: f64 =
                    pred.iter().zip(&target).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
                alpha[dim] = sxy / sxx;
                beta[dim] = ybar - alpha[dim] * xbar;
            }
            let ss: f64 = pred
                .iter()
                .zip(&target)
                .map(|(x, y)| (y - alpha[dim] * x - beta[dim]).powi(2))
                .sum();
            resid[dim] = (ss / nf).sqrt();
        }
        model.alpha.push(alpha);
        model.beta.push(beta);
        model.resid_std.push(resid);
    }
    Ok(model)
}

fn pick(w: &Uncertainty, dim: usize) -> f64 {
    if dim == 0 {
        w.d_el_net
    } else {
        w.d_th
    }
}

/// Deterministic forecast of the tail `(w̄_{t+1}, …, w̄_T)`: a one-step AR
/// prediction from the latest observation, then per-step means of the
/// optimization scenarios. Hot-water forecasts are floored at zero.
pub fn mpc_forecast(
    ar: &Ar1Model,
    opt_scenarios: &ScenarioSet,
    t: usize,
    w_t: Uncertainty,
) -> Vec<Uncertainty> {
    let means = opt_scenarios.column_means();
    forecast_with_means(ar, &means, t, w_t)
}

/// Same construction with precomputed column means (hot path).
pub fn forecast_with_means(
    ar: &Ar1Model,
    col_means: &[Uncertainty],
    t: usize,
    w_t: Uncertainty,
) -> Vec<Uncertainty> {
    let t_len = ar.alpha.len();
    debug_assert!(t < t_len);
    let mut out = Vec::with_capacity(t_len - t);
    let one_step = Uncertainty::new(
        ar.alpha[t][0] * w_t.d_el_net + ar.beta[t][0],
        (ar.alpha[t][1] * w_t.d_th + ar.beta[t][1]).max(0.0),
    );
    out.push(one_step);
    for tau in t + 1..t_len {
        let m = col_means[tau];
        out.push(Uncertainty::new(m.d_el_net, m.d_th.max(0.0)));
    }
    out
}

/// Multiplicative solar-noise model: production is `mu_t · (1 + eps_t)` with
/// `eps_t` zero-mean Gaussian whose standard deviation grows linearly from
/// `sigma_0` to `sigma_final` over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolarNoiseModel {
    pub mu: Vec<f64>,
    pub sigma_0: f64,
    pub sigma_final: f64,
}

impl SolarNoiseModel {
    /// sin²-shaped production over a daylight window, scaled to a daily total.
    pub fn bell(grid: &TimeGrid, start_hour: f64, end_hour: f64, daily_kwh: f64) -> Self {
        let window = end_hour - start_hour;
        let peak = if window > 0.0 { 2.0 * daily_kwh / window } else { 0.0 };
        let mu = (0..grid.horizon_steps)
            .map(|t| {
                let h = grid.hour_of_day(t);
                if h >= start_hour && h < end_hour {
                    let x = (h - start_hour) / window;
                    peak * (std::f64::consts::PI * x).sin().powi(2)
                } else {
                    0.0
                }
            })
            .collect();
        Self { mu, sigma_0: 0.0, sigma_final: 0.0 }
    }

    pub fn sigma_at(&self, t: usize) -> f64 {
        let t_len = self.mu.len() as f64;
        self.sigma_0 + (self.sigma_final - self.sigma_0) * t as f64 / t_len
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.sigma_0 < 0.0 || self.sigma_final < 0.0 {
            return Err(ScenarioError::BadProfile("solar sigmas must be >= 0".into()));
        }
        if self.mu.iter().any(|m| *m < 0.0) {
            return Err(ScenarioError::BadProfile("solar mu must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolarSample {
    pub scenarios: Vec<Vec<f64>>,
    /// Fraction of draws clamped at zero production.
    pub clamp_rate: f64,
}

pub fn sample_solar(model: &SolarNoiseModel, n: usize, seed: u64) -> Result<SolarSample, ScenarioError> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = model.mu.len();
    let mut clamped = 0usize;
    let mut scenarios = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let z: f64 = StandardNormal.sample(&mut rng);
            let raw = model.mu[t] * (1.0 + model.sigma_at(t) * z);
            if raw < 0.0 {
                clamped += 1;
                s.push(0.0);
            } else {
                s.push(raw);
            }
        }
        scenarios.push(s);
    }
    let clamp_rate = clamped as f64 / (n * t_len) as f64;
    Ok(SolarSample { scenarios, clamp_rate })
}

/// Assemble sweep scenarios: deterministic demand means against noisy solar.
pub fn net_scenarios_from_solar(
    mean_el: &[f64],
    mean_th: &[f64],
    solar: &[Vec<f64>],
    role: ScenarioRole,
) -> ScenarioSet {
    let scenarios = solar
        .iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .map(|(t, pv)| Uncertainty::new(mean_el[t] - pv, mean_th[t]))
                .collect()
        })
        .collect();
    ScenarioSet { scenarios, role }
}
