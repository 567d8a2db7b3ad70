//! Closed-loop ROM simulation: cubic reference, PD feedback, safety filter and
//! exact double-integrator integration.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{BarrierSpec, ClassKe, DEFAULT_VELOCITY_GAIN};
use crate::filters::{
    FilterConfig, FilterError, FilterMode, FilterStatus, RelaxationWeight, RelaxedBarrier, SafetyFilter, WeightSchedule,
};
use crate::model::{InputBox, State, Vec2};
use crate::tuner::{trajectory_cost, CostWeights};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("filter failed at t = {t}: {source}")]
    Filter {
        t: f64,
        #[source]
        source: FilterError,
    },
    /// `partial` holds every record logged before the blowup when the error
    /// comes from `run_scenario`.
    #[error("state became non-finite at t = {t}")]
    NumericalBlowup { t: f64, partial: Option<Box<SimTrace>> },
}

fn default_lambda_u() -> f64 {
    1.0
}

fn default_relaxed_weight() -> RelaxationWeight {
    RelaxationWeight::Fixed { value: 1.0 }
}

fn default_velocity_gain() -> f64 {
    DEFAULT_VELOCITY_GAIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub x0: State,
    pub start: Vec2,
    pub goal: Vec2,
    /// Every barrier, logged in this order.
    pub barriers: Vec<BarrierSpec>,
    /// Indices into `barriers` of the hard tier.
    pub strict: Vec<usize>,
    /// Indices into `barriers` of the relaxed barriers, highest priority first.
    pub relaxed: Vec<usize>,
    pub kp: Matrix2<f64>,
    pub kd: Matrix2<f64>,
    pub input_box: InputBox,
    pub mode: FilterMode,
    /// λ_δ rule of the hierarchical modes, shared by every relaxed barrier.
    pub weight: RelaxationWeight,
    /// λ_δ rule of the `Relaxed` mode.
    #[serde(default = "default_relaxed_weight")]
    pub relaxed_weight: RelaxationWeight,
    #[serde(default = "default_lambda_u")]
    pub lambda_u: f64,
    #[serde(default = "default_velocity_gain")]
    pub velocity_gain: f64,
    #[serde(default)]
    pub cost: CostWeights,
    #[serde(default)]
    pub seed: u64,
}

fn is_spd(m: &Matrix2<f64>) -> bool {
    let symmetric = (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-12 * m.amax().max(1.0);
    symmetric && m[(0, 0)] > 0.0 && m.determinant() > 0.0 && m.iter().all(|v| v.is_finite())
}

impl ScenarioConfig {
    /// Number of integration steps, duration / dt.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::InvalidScenario(m));
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if self.duration <= 0.0 || !self.duration.is_finite() {
            return invalid(format!("duration must be positive, got {}", self.duration));
        }
        let n = self.duration / self.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return invalid(format!(
                "duration {} is not a multiple of dt {}",
                self.duration, self.dt
            ));
        }
        if !is_spd(&self.kp) || !is_spd(&self.kd) {
            return invalid("Kp and Kd must be symmetric positive definite".into());
        }
        if !self.x0.is_finite() || !self.start.iter().chain(self.goal.iter()).all(|c| c.is_finite()) {
            return invalid("initial state and waypoints must be finite".into());
        }
        let mut seen = vec![false; self.barriers.len()];
        for &i in self.strict.iter().chain(&self.relaxed) {
            match seen.get_mut(i) {
                None => return invalid(format!("barrier index {i} out of range")),
                Some(true) => return invalid(format!("barrier index {i} listed twice")),
                Some(s) => *s = true,
            }
        }
        self.filter_config()
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))
    }

    pub fn filter_config(&self) -> FilterConfig {
        let pick = |idx: &[usize]| {
            idx.iter()
                .filter_map(|&i| self.barriers.get(i).copied())
                .collect::<Vec<_>>()
        };
        let (strict, relaxed) = match self.mode {
            FilterMode::Single => (pick(&self.strict[..self.strict.len().min(1)]), Vec::new()),
            _ => (pick(&self.strict), pick(&self.relaxed)),
        };
        let weight = self.active_weight();
        let relaxed = relaxed
            .into_iter()
            .map(|barrier| RelaxedBarrier { barrier, weight })
            .collect();
        FilterConfig {
            strict,
            relaxed,
            lambda_u: self.lambda_u,
            input_box: self.input_box,
            mode: self.mode,
            velocity_gain: self.velocity_gain,
        }
    }

    pub fn with_mode(&self, mode: FilterMode) -> Self {
        Self { mode, ..self.clone() }
    }

    /// Weight rule the configured mode uses.
    pub fn active_weight(&self) -> RelaxationWeight {
        match self.mode {
            FilterMode::Relaxed => self.relaxed_weight,
            _ => self.weight,
        }
    }

    /// Copy with the active weight rule replaced by the schedule (γ₀, Δγ).
    pub fn with_schedule(&self, gamma0: f64, delta_gamma: f64) -> Self {
        let mut s = self.clone();
        let w = RelaxationWeight::Scheduled(WeightSchedule { gamma0, delta_gamma });
        match self.mode {
            FilterMode::Relaxed => s.relaxed_weight = w,
            _ => s.weight = w,
        }
        s
    }
}

fn two_circle_scenario(name: &str, c3: (f64, f64, f64), c4: (f64, f64, f64), goal: Vec2) -> ScenarioConfig {
    let alpha = ClassKe::standard();
    // The workspace halfplanes keep p_x ≤ 0.2 and p_y ≥ −0.2 so the goal in
    // the second quadrant stays admissible.
    let barriers = vec![
        BarrierSpec::halfplane(Vec2::new(-1.0, 0.0), 0.2, alpha).expect("valid"),
        BarrierSpec::halfplane(Vec2::new(0.0, 1.0), 0.2, alpha).expect("valid"),
        BarrierSpec::circle(Vec2::new(c3.0, c3.1), c3.2, alpha).expect("valid"),
        BarrierSpec::circle(Vec2::new(c4.0, c4.1), c4.2, alpha).expect("valid"),
    ];
    ScenarioConfig {
        name: name.to_string(),
        duration: 20.0,
        dt: 0.01,
        x0: State::at_rest(Vec2::zeros()),
        start: Vec2::zeros(),
        goal,
        barriers,
        strict: vec![0, 1, 2],
        relaxed: vec![3],
        kp: Matrix2::from_diagonal_element(4.0),
        kd: Matrix2::from_diagonal_element(4.0),
        input_box: InputBox::symmetric(5.0),
        mode: FilterMode::Hierarchical,
        weight: RelaxationWeight::Scheduled(WeightSchedule {
            gamma0: 5.0,
            delta_gamma: 1.3,
        }),
        relaxed_weight: default_relaxed_weight(),
        lambda_u: 1.0,
        velocity_gain: DEFAULT_VELOCITY_GAIN,
        cost: CostWeights::default(),
        seed: 0,
    }
}

pub const BUILTIN_NAMES: [&str; 2] = ["sim-paper", "exp-paper"];

pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    vec![
        two_circle_scenario("sim-paper", (-1.0, 5.5, 4.0), (-1.0, 4.5, 5.0), Vec2::new(-12.0, 10.0)),
        two_circle_scenario("exp-paper", (-1.7, 1.5, 1.7), (-0.35, 1.8, 1.34), Vec2::new(-4.0, 3.34)),
    ]
}

pub fn builtin_scenario(name: &str) -> Result<ScenarioConfig, SimError> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| SimError::UnknownScenario(name.to_string()))
}

/// Cubic per-axis reference with zero velocity at both ends; t is clamped to
/// [0, duration].
pub fn reference_trajectory(t: f64, scenario: &ScenarioConfig) -> (Vec2, Vec2) {
    let big_t = scenario.duration;
    let tau = (t / big_t).clamp(0.0, 1.0);
    let span = scenario.goal - scenario.start;
    let s = tau * tau * (3.0 - 2.0 * tau);
    let ds = 6.0 * tau * (1.0 - tau) / big_t;
    (scenario.start + span * s, span * ds)
}

pub fn pd_control(x: &State, pd: &Vec2, vd: &Vec2, kp: &Matrix2<f64>, kd: &Matrix2<f64>) -> Vec2 {
    kp * (pd - x.p) + kd * (vd - x.v)
}

/// Exact zero-order-hold update of the double integrator.
pub fn step(x: &State, u: &Vec2, dt: f64) -> Result<State, SimError> {
    let next = State {
        p: x.p + x.v * dt + u * (0.5 * dt * dt),
        v: x.v + u * dt,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(SimError::NumericalBlowup {
            t: f64::NAN,
            partial: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub x: State,
    pub pd: Vec2,
    pub vd: Vec2,
    pub u_star: Vec2,
    pub u: Vec2,
    /// One entry per relaxed barrier.
    pub delta: Vec<f64>,
    /// h_k(x) for every scenario barrier.
    pub h: Vec<f64>,
    pub status: FilterStatus,
    /// atan2(v_y, v_x).
    pub heading: f64,
}

impl StepRecord {
    /// ‖x^d − x‖ over position and velocity.
    pub fn tracking_error(&self) -> f64 {
        let ep = self.pd - self.x.p;
        let ev = self.vd - self.x.v;
        (ep.norm_squared() + ev.norm_squared()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub final_error: f64,
    pub mean_error: f64,
    pub min_h: Vec<f64>,
    /// ∫ max(0, −h_k) dt, trapezoid rule.
    pub integrated_violation: Vec<f64>,
    pub infeasible_steps: usize,
    pub hat_fallbacks: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub scenario: String,
    pub mode: Option<FilterMode>,
    pub dt: f64,
    pub steps: usize,
    pub relaxed_count: usize,
    pub records: Vec<StepRecord>,
}

impl SimTrace {
    pub fn is_complete(&self) -> bool {
        self.steps > 0 && self.records.len() == self.steps + 1
    }

    pub fn summarize(&self, weights: &CostWeights) -> SimSummary {
        let m = self.records.first().map_or(0, |r| r.h.len());
        let mut min_h = vec![f64::INFINITY; m];
        let mut violation = vec![0.0; m];
        for (i, r) in self.records.iter().enumerate() {
            for k in 0..m {
                min_h[k] = min_h[k].min(r.h[k]);
                if i > 0 {
                    let prev = self.records[i - 1].h[k];
                    violation[k] += 0.5 * self.dt * ((-prev).max(0.0) + (-r.h[k]).max(0.0));
                }
            }
        }
        let errors: Vec<f64> = self.records.iter().map(StepRecord::tracking_error).collect();
        SimSummary {
            final_error: errors.last().copied().unwrap_or(f64::NAN),
            mean_error: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
            min_h,
            integrated_violation: violation,
            infeasible_steps: self
                .records
                .iter()
                .filter(|r| r.status == FilterStatus::StrictInfeasible)
                .count(),
            hat_fallbacks: 0,
            cost: trajectory_cost(self, weights).unwrap_or(f64::INFINITY),
        }
    }
}

/// Trace plus its summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRun {
    pub trace: SimTrace,
    pub summary: SimSummary,
}

pub fn run_scenario(scenario: &ScenarioConfig) -> Result<SimRun, SimError> {
    scenario.validate()?;
    let filter = SafetyFilter::new(scenario.filter_config()).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let n = scenario.steps();
    let relaxed_count = filter.config().relaxed.len();
    let mut trace = SimTrace {
        scenario: scenario.name.clone(),
        mode: Some(scenario.mode),
        dt: scenario.dt,
        steps: n,
        relaxed_count,
        records: Vec::with_capacity(n + 1),
    };
    let mut x = scenario.x0;
    let mut held = Vec2::zeros();
    let mut hat_fallbacks = 0;
    for i in 0..=n {
        let t = i as f64 * scenario.dt;
        let (pd, vd) = reference_trajectory(t, scenario);
        let u_star = pd_control(&x, &pd, &vd, &scenario.kp, &scenario.kd);
        if !u_star.iter().all(|c| c.is_finite()) {
            return Err(SimError::NumericalBlowup {
                t,
                partial: Some(Box::new(trace)),
            });
        }
        let result = filter
            .apply(&u_star, &x)
            .map_err(|source| SimError::Filter { t, source })?;
        hat_fallbacks += usize::from(result.stats.hat_fallback);
        let (u, delta) = match result.status {
            FilterStatus::Ok => (result.u, result.delta),
            FilterStatus::StrictInfeasible => (held, vec![0.0; relaxed_count]),
        };
        held = u;
        trace.records.push(StepRecord {
            t,
            x,
            pd,
            vd,
            u_star,
            u,
            delta,
            h: scenario.barriers.iter().map(|b| b.value(&x)).collect(),
            status: result.status,
            heading: x.v.y.atan2(x.v.x),
        });
        if i == n {
            break;
        }
        x = match step(&x, &u, scenario.dt) {
            Ok(next) => next,
            Err(_) => {
                return Err(SimError::NumericalBlowup {
                    t: t + scenario.dt,
                    partial: Some(Box::new(trace)),
                })
            }
        };
    }
    let mut summary = trace.summarize(&scenario.cost);
    summary.hat_fallbacks = hat_fallbacks;
    Ok(SimRun { trace, summary })
}
