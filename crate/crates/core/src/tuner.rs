//! Sampling-based search over the relaxation schedule (γ₀, Δγ).

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Vec2;
use crate::parallel::{map_ordered, Execution};
use crate::sim::{run_scenario, ScenarioConfig, SimSummary, SimTrace};

/// Smallest γ₀ or Δγ handed to a schedule; keeps clipped samples strictly
/// positive.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid tune configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
}

/// Weights of the trajectory cost: intermediate error, final error, relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_i: f64,
    pub w_f: f64,
    pub w_delta: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_i: 1.0,
            w_f: 1000.0,
            w_delta: 0.5,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), TuneError> {
        if self.w_f > self.w_i && self.w_i > 0.0 && self.w_delta > 0.0 && self.w_f.is_finite() {
            Ok(())
        } else {
            Err(TuneError::InvalidConfig(format!(
                "cost weights need w_f > w_i > 0 and w_delta > 0, got {self:?}"
            )))
        }
    }
}

/// r = w_i Σ_{i=1}^{N−1} ‖e_x(iΔt)‖ + w_f ‖e_x(T)‖ + w_δ Σ_{i=1}^{N} Σ_k |δ_k(iΔt)|
pub fn trajectory_cost(trace: &SimTrace, w: &CostWeights) -> Result<f64, TuneError> {
    if !trace.is_complete() {
        return Err(TuneError::InvalidTrace(format!(
            "expected {} records, found {}",
            trace.steps + 1,
            trace.records.len()
        )));
    }
    let n = trace.steps;
    let r = &trace.records;
    let intermediate: f64 = r[1..n].iter().map(|s| s.tracking_error()).sum();
    let relaxation: f64 = r[1..=n]
        .iter()
        .map(|s| s.delta.iter().map(|d| d.abs()).sum::<f64>())
        .sum();
    Ok(w.w_i * intermediate + w.w_f * r[n].tracking_error() + w.w_delta * relaxation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub gamma0_points: usize,
    pub delta_gamma_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    /// Mean of (γ₀, Δγ).
    pub mu: Vec2,
    pub sigma: Matrix2<f64>,
    pub sample_count: usize,
    pub gamma0_range: [f64; 2],
    pub delta_gamma_range: [f64; 2],
    pub weights: CostWeights,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

impl TuneConfig {
    pub fn with_defaults(scenario: ScenarioConfig) -> Self {
        Self {
            mu: Vec2::new(3.0, 1.5),
            sigma: Matrix2::identity(),
            sample_count: 50,
            gamma0_range: [0.0, 5.0],
            delta_gamma_range: [0.0, 2.5],
            weights: CostWeights::default(),
            seed: 0,
            scenario,
            grid: None,
        }
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        let invalid = |m: String| Err(TuneError::InvalidConfig(m));
        self.weights.validate()?;
        cholesky_psd(&self.sigma)?;
        if self.sample_count == 0 {
            return invalid("sample_count must be positive".into());
        }
        for (name, r) in [("gamma0", self.gamma0_range), ("delta_gamma", self.delta_gamma_range)] {
            if r[0] > r[1] || !r[0].is_finite() || !r[1].is_finite() {
                return invalid(format!("{name} range [{}, {}] is empty", r[0], r[1]));
            }
        }
        if !self.mu.iter().all(|m| m.is_finite()) {
            return invalid("mu must be finite".into());
        }
        if let Some(g) = self.grid {
            if g.gamma0_points == 0 || g.delta_gamma_points == 0 {
                return invalid("grid needs at least one point per axis".into());
            }
        }
        if !self.scenario.mode.is_relaxing() {
            return invalid(format!("scenario mode {} has no schedule to tune", self.scenario.mode));
        }
        self.scenario
            .validate()
            .map_err(|e| TuneError::InvalidConfig(e.to_string()))
    }

    fn clip(&self, g0: f64, dg: f64) -> (f64, f64) {
        let c = |v: f64, r: [f64; 2]| v.clamp(r[0], r[1]).max(WEIGHT_FLOOR);
        (c(g0, self.gamma0_range), c(dg, self.delta_gamma_range))
    }
}

/// Lower-triangular L with LLᵀ = Σ for a symmetric PSD 2×2 Σ.
pub fn cholesky_psd(sigma: &Matrix2<f64>) -> Result<Matrix2<f64>, TuneError> {
    let (a, b, c, d) = (sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 0)], sigma[(1, 1)]);
    let scale = sigma.amax().max(1.0);
    let tol = 1e-12 * scale;
    let bad = || TuneError::InvalidConfig(format!("sigma is not symmetric PSD: {:?}", sigma.as_slice()));
    if !sigma.iter().all(|v| v.is_finite()) || (b - c).abs() > tol || a < 0.0 || d < 0.0 || a * d - b * c < -tol * scale
    {
        return Err(bad());
    }
    let l11 = a.sqrt();
    let l21 = if l11 > 0.0 {
        b / l11
    } else if b.abs() <= tol {
        0.0
    } else {
        return Err(bad());
    };
    let l22 = (d - l21 * l21).max(0.0).sqrt();
    Ok(Matrix2::new(l11, 0.0, l21, l22))
}

/// Unclipped draws from N(μ, Σ) via Box–Muller.
pub fn sample_gaussian(mu: &Vec2, sigma: &Matrix2<f64>, count: usize, seed: u64) -> Result<Vec<Vec2>, TuneError> {
    let l = cholesky_psd(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..count)
        .map(|_| {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random::<f64>();
            let radius = (-2.0 * u1.ln()).sqrt();
            let angle = std::f64::consts::TAU * u2;
            let z = Vec2::new(radius * angle.cos(), radius * angle.sin());
            mu + l * z
        })
        .collect();
    Ok(out)
}

/// `sample_count` (γ₀, Δγ) pairs, clipped into the configured ranges.
pub fn sample_weights(cfg: &TuneConfig) -> Result<Vec<(f64, f64)>, TuneError> {
    let raw = sample_gaussian(&cfg.mu, &cfg.sigma, cfg.sample_count, cfg.seed)?;
    Ok(raw.iter().map(|s| cfg.clip(s.x, s.y)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleResult {
    pub index: usize,
    pub gamma0: f64,
    pub delta_gamma: f64,
    /// Trajectory cost r; infinite when the run failed.
    pub cost: f64,
    /// r − min r over the batch.
    pub offset_cost: f64,
    pub failed: Option<String>,
    pub summary: Option<SimSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostMap {
    pub gamma0: Vec<f64>,
    pub delta_gamma: Vec<f64>,
    /// Row-major over (γ₀, Δγ), one entry per grid point.
    pub points: Vec<SampleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub samples: Vec<SampleResult>,
    pub best_index: usize,
    pub best: (f64, f64),
    pub best_cost: f64,
    pub cost_map: Option<CostMap>,
}

/// Run the scenario once per pair and apply offset elimination.
pub fn evaluate_pairs(
    scenario: &ScenarioConfig,
    pairs: &[(f64, f64)],
    weights: &CostWeights,
    execution: Execution,
) -> Vec<SampleResult> {
    let mut results = map_ordered(pairs, execution, |index, &(g0, dg)| {
        let mut s = scenario.with_schedule(g0, dg);
        s.cost = *weights;
        let (cost, failed, summary) = match run_scenario(&s) {
            Ok(run) => (run.summary.cost, None, Some(run.summary)),
            Err(e) => (f64::INFINITY, Some(e.to_string()), None),
        };
        SampleResult {
            index,
            gamma0: g0,
            delta_gamma: dg,
            cost,
            offset_cost: f64::NAN,
            failed,
            summary,
        }
    });
    eliminate_offset(&mut results);
    results
}

fn eliminate_offset(results: &mut [SampleResult]) {
    let min = results.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
    for r in results.iter_mut() {
        r.offset_cost = if min.is_finite() { r.cost - min } else { r.cost };
    }
}

/// Index of the lowest cost, first on ties.
pub fn argmin_cost(results: &[SampleResult]) -> Option<usize> {
    results
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
            Some((_, c)) if r.cost >= c => best,
            _ if r.cost.is_nan() => best,
            _ => Some((i, r.cost)),
        })
        .map(|(i, _)| i)
}

fn linspace(r: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (r[0] + r[1])];
    }
    (0..n)
        .map(|i| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn tune_samples(cfg: &TuneConfig, pairs: &[(f64, f64)], execution: Execution) -> Result<TuneReport, TuneError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TuneError::InvalidConfig("no samples to evaluate".into()));
    }
    let samples = evaluate_pairs(&cfg.scenario, pairs, &cfg.weights, execution);
    let best_index = argmin_cost(&samples).unwrap_or(0);
    let cost_map = cfg.grid.map(|g| {
        let gamma0 = linspace(cfg.gamma0_range, g.gamma0_points);
        let delta_gamma = linspace(cfg.delta_gamma_range, g.delta_gamma_points);
        let grid: Vec<(f64, f64)> = gamma0
            .iter()
            .flat_map(|&a| delta_gamma.iter().map(move |&b| (a, b)))
            .map(|(a, b)| cfg.clip(a, b))
            .collect();
        let points = evaluate_pairs(&cfg.scenario, &grid, &cfg.weights, execution);
        CostMap {
            gamma0,
            delta_gamma,
            points,
        }
    });
    let best = &samples[best_index];
    Ok(TuneReport {
        best_index,
        best: (best.gamma0, best.delta_gamma),
        best_cost: best.cost,
        samples,
        cost_map,
    })
}

pub fn tune(cfg: &TuneConfig, execution: Execution) -> Result<TuneReport, TuneError> {
    cfg.validate()?;
    let pairs = sample_weights(cfg)?;
    tune_samples(cfg, &pairs, execution)
}
