//! CBF safety filters: maps (x, u*) → u that minimally modify a desired input.
//!
//! Barriers are split into a strict tier, which every mode enforces as hard
//! inequalities, and an ordered list of relaxed barriers (highest priority
//! first). With a single strict barrier and a single relaxed barrier the
//! modes reduce to the textbook two-barrier programs:
//!
//! | mode                     | program                                                          |
//! |--------------------------|------------------------------------------------------------------|
//! | `Single`                 | min ‖u* − u‖² s.t. ḣ ≥ −α(h)                                     |
//! | `MultiStrict`            | every barrier as a hard row                                      |
//! | `Relaxed`                | min λ_u‖u* − u‖² + λ_δ δ², ḣ₂ ≥ −α₂(h₂) − δ, δ ≥ 0              |
//! | `Hierarchical`           | min λ_u‖u* − u‖² + λ_δ δ², ḣ₂(u) + δ = ḣ₂(û₂), δ free            |
//! | `ImplicitHierarchical`   | one program, one equality row and one free δ_k per relaxed barrier |
//! | `ExplicitHierarchical`   | one program per relaxed barrier, earlier δ_i frozen               |
//!
//! û_k is the single-barrier filter output for barrier k alone (solved with the
//! input box). All programs also constrain u to the input box.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{BarrierSpec, CbfConstraint, CbfError, DEFAULT_VELOCITY_GAIN};
use crate::model::{DoubleIntegrator, InputBox, RomDynamics, State, Vec2};
use crate::qp::{solve_qp, QpError, QpProblem, QpSolution, QpStatus};

/// Slack allowed on the strict rows of an `Ok` result.
pub const STRICT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Barrier(#[from] CbfError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("QP solver hit its iteration cap")]
    SolverStalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    Single,
    MultiStrict,
    Relaxed,
    Hierarchical,
    ImplicitHierarchical,
    ExplicitHierarchical,
}

impl FilterMode {
    pub const ALL: [FilterMode; 6] = [
        FilterMode::Single,
        FilterMode::MultiStrict,
        FilterMode::Relaxed,
        FilterMode::Hierarchical,
        FilterMode::ImplicitHierarchical,
        FilterMode::ExplicitHierarchical,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FilterMode::Single => "single",
            FilterMode::MultiStrict => "multi-strict",
            FilterMode::Relaxed => "relaxed",
            FilterMode::Hierarchical => "hierarchical",
            FilterMode::ImplicitHierarchical => "implicit-hierarchical",
            FilterMode::ExplicitHierarchical => "explicit-hierarchical",
        }
    }

    /// Modes whose relaxed barriers carry a weighting schedule.
    pub fn is_relaxing(&self) -> bool {
        !matches!(self, FilterMode::Single | FilterMode::MultiStrict)
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterMode {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let mode = match key.as_str() {
            "single" => FilterMode::Single,
            "multi-strict" | "multi" | "strict" => FilterMode::MultiStrict,
            "relaxed" | "r-cbf-qp" => FilterMode::Relaxed,
            "hierarchical" | "h-cbf-qp" => FilterMode::Hierarchical,
            "implicit-hierarchical" | "implicit" | "ih-cbf-qp" => FilterMode::ImplicitHierarchical,
            "explicit-hierarchical" | "explicit" | "eh-cbf-qp" => FilterMode::ExplicitHierarchical,
            _ => return Err(FilterError::InvalidConfig(format!("unknown filter mode `{s}`"))),
        };
        Ok(mode)
    }
}

/// λ_δ(h) = γ₀ for h > 0, γ₀(1 + Δγ|h|) otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub gamma0: f64,
    pub delta_gamma: f64,
}

impl WeightSchedule {
    pub fn new(gamma0: f64, delta_gamma: f64) -> Result<Self, FilterError> {
        let s = Self { gamma0, delta_gamma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.gamma0 > 0.0 && self.delta_gamma > 0.0 && self.gamma0.is_finite() && self.delta_gamma.is_finite() {
            Ok(())
        } else {
            Err(FilterError::InvalidConfig(format!(
                "schedule needs γ₀ > 0 and Δγ > 0, got ({}, {})",
                self.gamma0, self.delta_gamma
            )))
        }
    }
}

pub fn lambda_delta(h: f64, schedule: &WeightSchedule) -> f64 {
    if h > 0.0 {
        schedule.gamma0
    } else {
        schedule.gamma0 * (1.0 + schedule.delta_gamma * h.abs())
    }
}

/// How the weight λ_δ of one relaxation is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RelaxationWeight {
    Scheduled(WeightSchedule),
    Fixed { value: f64 },
}

impl RelaxationWeight {
    pub fn at(&self, h: f64) -> f64 {
        match self {
            RelaxationWeight::Scheduled(s) => lambda_delta(h, s),
            RelaxationWeight::Fixed { value } => *value,
        }
    }

    fn validate(&self) -> Result<(), FilterError> {
        match self {
            RelaxationWeight::Scheduled(s) => s.validate(),
            RelaxationWeight::Fixed { value } if *value >= 0.0 && value.is_finite() => Ok(()),
            RelaxationWeight::Fixed { value } => Err(FilterError::InvalidConfig(format!(
                "fixed λ_δ must be ≥ 0, got {value}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedBarrier {
    pub barrier: BarrierSpec,
    pub weight: RelaxationWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Top-priority tier, enforced as hard rows by every mode.
    pub strict: Vec<BarrierSpec>,
    /// Lower-priority barriers in lexicographic order.
    pub relaxed: Vec<RelaxedBarrier>,
    pub lambda_u: f64,
    pub input_box: InputBox,
    pub mode: FilterMode,
    /// k_v of the velocity-augmented barrier (seconds).
    pub velocity_gain: f64,
}

impl FilterConfig {
    pub fn new(mode: FilterMode, strict: Vec<BarrierSpec>, relaxed: Vec<RelaxedBarrier>, input_box: InputBox) -> Self {
        Self {
            strict,
            relaxed,
            lambda_u: 1.0,
            input_box,
            mode,
            velocity_gain: DEFAULT_VELOCITY_GAIN,
        }
    }

    pub fn barrier_count(&self) -> usize {
        self.strict.len() + self.relaxed.len()
    }

    /// All barriers in priority order.
    pub fn barriers(&self) -> impl Iterator<Item = &BarrierSpec> {
        self.strict.iter().chain(self.relaxed.iter().map(|r| &r.barrier))
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let invalid = |m: String| Err(FilterError::InvalidConfig(m));
        for b in self.barriers() {
            b.validate()?;
        }
        for r in &self.relaxed {
            r.weight.validate()?;
        }
        if self.lambda_u < 0.0 || !self.lambda_u.is_finite() {
            return invalid(format!("λ_u must be ≥ 0, got {}", self.lambda_u));
        }
        if self.velocity_gain <= 0.0 || !self.velocity_gain.is_finite() {
            return invalid(format!("velocity gain must be > 0, got {}", self.velocity_gain));
        }
        if !self.input_box.is_valid() {
            return invalid("input box has lower > upper".into());
        }
        let (s, r) = (self.strict.len(), self.relaxed.len());
        match self.mode {
            FilterMode::Single if s + r != 1 => {
                invalid(format!("single mode needs exactly one barrier, got {}", s + r))
            }
            FilterMode::MultiStrict if s + r == 0 => invalid("multi-strict mode needs at least one barrier".into()),
            FilterMode::Relaxed | FilterMode::Hierarchical if s == 0 || r != 1 => invalid(format!(
                "{} mode needs a strict tier and exactly one relaxed barrier, got {s} strict / {r} relaxed",
                self.mode
            )),
            FilterMode::ImplicitHierarchical | FilterMode::ExplicitHierarchical if s == 0 || r == 0 => {
                invalid(format!(
                    "{} mode needs a strict tier and at least one relaxed barrier, got {s} strict / {r} relaxed",
                    self.mode
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterStatus {
    Ok,
    StrictInfeasible,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub qp_solves: usize,
    pub iterations: usize,
    /// Largest KKT residual across the programs solved.
    pub residual: f64,
    /// Some û_k had no solution inside the box and was replaced by the box
    /// point that maximizes ḣ_k.
    pub hat_fallback: bool,
    /// Explicit mode only: first relaxed barrier (0-based) whose stage failed.
    pub failed_stage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub u: Vec2,
    /// δ per relaxed barrier; empty for `Single` and `MultiStrict`.
    pub delta: Vec<f64>,
    /// λ_δ per relaxed barrier as used by the program.
    pub lambda_delta: Vec<f64>,
    /// ḣ_e(x, u) per barrier, strict tier first.
    pub hdot: Vec<f64>,
    /// ḣ_e(x, u) + α(h_e(x)) per barrier, strict tier first.
    pub margin: Vec<f64>,
    pub status: FilterStatus,
    pub stats: SolveStats,
}

impl FilterResult {
    pub fn is_ok(&self) -> bool {
        self.status == FilterStatus::Ok
    }
}

/// Evaluated rows for one state.
struct Rows {
    strict: Vec<CbfConstraint>,
    relaxed: Vec<CbfConstraint>,
}

/// Linear constraint accumulator over z = (u₁, u₂, δ…).
struct ProgramBuilder {
    n: usize,
    ineq: Vec<(Vec<f64>, f64)>,
    eq: Vec<(Vec<f64>, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    hessian_diag: Vec<f64>,
    linear: Vec<f64>,
}

impl ProgramBuilder {
    fn new(slacks: usize, u_star: &Vec2, lambda_u: f64, input_box: &InputBox) -> Self {
        let n = 2 + slacks;
        let mut hessian_diag = vec![0.0; n];
        let mut linear = vec![0.0; n];
        for i in 0..2 {
            hessian_diag[i] = 2.0 * lambda_u;
            linear[i] = -2.0 * lambda_u * u_star[i];
        }
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        lower[..2].copy_from_slice(input_box.lower.as_slice());
        upper[..2].copy_from_slice(input_box.upper.as_slice());
        Self {
            n,
            ineq: Vec::new(),
            eq: Vec::new(),
            lower,
            upper,
            hessian_diag,
            linear,
        }
    }

    fn slack_weight(&mut self, slack: usize, lambda: f64) {
        self.hessian_diag[2 + slack] = 2.0 * lambda;
    }

    fn slack_nonnegative(&mut self, slack: usize) {
        self.lower[2 + slack] = 0.0;
    }

    fn row(&self, lg: &Vec2, slack: Option<usize>) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        r[0] = lg.x;
        r[1] = lg.y;
        if let Some(k) = slack {
            r[2 + k] = 1.0;
        }
        r
    }

    /// L_g h u (+ δ) ≥ bound
    fn inequality(&mut self, lg: &Vec2, slack: Option<usize>, bound: f64) {
        let r = self.row(lg, slack);
        self.ineq.push((r, bound));
    }

    /// L_g h u (+ δ) = target
    fn equality(&mut self, lg: &Vec2, slack: Option<usize>, target: f64) {
        let r = self.row(lg, slack);
        self.eq.push((r, target));
    }

    fn build(&self) -> QpProblem {
        let stack = |rows: &[(Vec<f64>, f64)]| {
            let a = DMatrix::from_fn(rows.len(), self.n, |i, j| rows[i].0[j]);
            let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
            (a, b)
        };
        let (a_in, b_in) = stack(&self.ineq);
        let (a_eq, b_eq) = stack(&self.eq);
        QpProblem::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(&self.hessian_diag)),
            DVector::from_column_slice(&self.linear),
        )
        .with_inequalities(a_in, b_in)
        .with_equalities(a_eq, b_eq)
        .with_bounds(
            DVector::from_column_slice(&self.lower),
            DVector::from_column_slice(&self.upper),
        )
    }
}

/// A configured filter bound to ROM dynamics.
#[derive(Debug, Clone)]
pub struct SafetyFilter<D = DoubleIntegrator> {
    config: FilterConfig,
    dynamics: D,
}

impl SafetyFilter<DoubleIntegrator> {
    pub fn new(config: FilterConfig) -> Result<Self, FilterError> {
        Self::with_dynamics(config, DoubleIntegrator)
    }
}

impl<D: RomDynamics> SafetyFilter<D> {
    pub fn with_dynamics(config: FilterConfig, dynamics: D) -> Result<Self, FilterError> {
        config.validate()?;
        Ok(Self { config, dynamics })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    /// Run the configured mode.
    pub fn apply(&self, u_star: &Vec2, x: &State) -> Result<FilterResult, FilterError> {
        match self.config.mode {
            FilterMode::Single => {
                let barrier = *self.config.barriers().next().expect("validated");
                self.single(u_star, x, &barrier)
            }
            FilterMode::MultiStrict => self.multi(u_star, x),
            FilterMode::Relaxed => self.relaxed(u_star, x),
            FilterMode::Hierarchical => self.hierarchical(u_star, x),
            FilterMode::ImplicitHierarchical => self.implicit(u_star, x),
            FilterMode::ExplicitHierarchical => self.explicit(u_star, x),
        }
    }

    fn constraint(&self, barrier: &BarrierSpec, x: &State) -> Result<CbfConstraint, FilterError> {
        Ok(CbfConstraint::at(
            barrier,
            &self.dynamics,
            x,
            self.config.velocity_gain,
        )?)
    }

    fn rows(&self, x: &State) -> Result<Rows, FilterError> {
        let strict = self
            .config
            .strict
            .iter()
            .map(|b| self.constraint(b, x))
            .collect::<Result<Vec<_>, _>>()?;
        let relaxed = self
            .config
            .relaxed
            .iter()
            .map(|r| self.constraint(&r.barrier, x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Rows { strict, relaxed })
    }

    fn lambdas(&self, rows: &Rows) -> Vec<f64> {
        self.config
            .relaxed
            .iter()
            .zip(&rows.relaxed)
            .map(|(r, row)| r.weight.at(row.h))
            .collect()
    }

    fn finish(
        &self,
        rows: &Rows,
        u: Vec2,
        delta: Vec<f64>,
        lambda_delta: Vec<f64>,
        status: FilterStatus,
        stats: SolveStats,
    ) -> FilterResult {
        let all = rows.strict.iter().chain(rows.relaxed.iter());
        let (hdot, margin) = all.map(|r| (r.hdot(&u), r.margin(&u))).unzip();
        FilterResult {
            u,
            delta,
            lambda_delta,
            hdot,
            margin,
            status,
            stats,
        }
    }

    fn infeasible(
        &self,
        rows: &Rows,
        u_star: &Vec2,
        slacks: usize,
        lambdas: Vec<f64>,
        stats: SolveStats,
    ) -> FilterResult {
        let u = self.config.input_box.clamp(u_star);
        self.finish(
            rows,
            u,
            vec![0.0; slacks],
            lambdas,
            FilterStatus::StrictInfeasible,
            stats,
        )
    }

    fn solve(&self, builder: &ProgramBuilder, stats: &mut SolveStats) -> Result<QpSolution, FilterError> {
        let sol = solve_qp(&builder.build())?;
        stats.qp_solves += 1;
        stats.iterations += sol.iterations;
        if sol.status == QpStatus::Optimal {
            stats.residual = stats.residual.max(sol.kkt_residual);
        }
        if sol.status == QpStatus::MaxIter {
            return Err(FilterError::SolverStalled);
        }
        Ok(sol)
    }

    fn strict_builder(&self, rows: &Rows, u_star: &Vec2, slacks: usize, lambda_u: f64) -> ProgramBuilder {
        let mut b = ProgramBuilder::new(slacks, u_star, lambda_u, &self.config.input_box);
        for row in &rows.strict {
            b.inequality(&row.lg, None, row.input_bound());
        }
        b
    }

    /// û = argmin ‖u* − u‖² over the box subject to the single row, or the
    /// box point maximizing ḣ when that program is infeasible.
    fn hat(&self, row: &CbfConstraint, u_star: &Vec2, stats: &mut SolveStats) -> Result<Vec2, FilterError> {
        let mut b = ProgramBuilder::new(0, u_star, 1.0, &self.config.input_box);
        b.inequality(&row.lg, None, row.input_bound());
        let sol = self.solve(&b, stats)?;
        if sol.is_optimal() {
            return Ok(Vec2::new(sol.z[0], sol.z[1]));
        }
        stats.hat_fallback = true;
        let bx = &self.config.input_box;
        let pick = |i: usize| {
            if row.lg[i] > 0.0 {
                bx.upper[i]
            } else if row.lg[i] < 0.0 {
                bx.lower[i]
            } else {
                u_star[i].clamp(bx.lower[i], bx.upper[i])
            }
        };
        Ok(Vec2::new(pick(0), pick(1)))
    }

    /// Single-barrier program on an arbitrary barrier.
    pub fn single(&self, u_star: &Vec2, x: &State, barrier: &BarrierSpec) -> Result<FilterResult, FilterError> {
        let row = self.constraint(barrier, x)?;
        let rows = Rows {
            strict: vec![row],
            relaxed: Vec::new(),
        };
        let mut stats = SolveStats::default();
        let b = self.strict_builder(&rows, u_star, 0, 1.0);
        let sol = self.solve(&b, &mut stats)?;
        if !sol.is_optimal() {
            return Ok(self.infeasible(&rows, u_star, 0, Vec::new(), stats));
        }
        let u = Vec2::new(sol.z[0], sol.z[1]);
        Ok(self.finish(&rows, u, Vec::new(), Vec::new(), FilterStatus::Ok, stats))
    }

    /// Every barrier as a hard row.
    pub fn multi(&self, u_star: &Vec2, x: &State) -> Result<FilterResult, FilterError> {
        let rows = self.rows(x)?;
        let mut stats = SolveStats::default();
        let mut b = self.strict_builder(&rows, u_star, 0, 1.0);
        for row in &rows.relaxed {
            b.inequality(&row.lg, None, row.input_bound());
        }
        let sol = self.solve(&b, &mut stats)?;
        if !sol.is_optimal() {
            return Ok(self.infeasible(&rows, u_star, 0, Vec::new(), stats));
        }
        let u = Vec2::new(sol.z[0], sol.z[1]);
        Ok(self.finish(&rows, u, Vec::new(), Vec::new(), FilterStatus::Ok, stats))
    }

    /// Relaxed program with a non-negative slack on the relaxed barrier.
    pub fn relaxed(&self, u_star: &Vec2, x: &State) -> Result<FilterResult, FilterError> {
        let rows = self.rows(x)?;
        let lambdas = self.lambdas(&rows);
        let (row, lambda) = (rows.relaxed[0], lambdas[0]);
        let mut stats = SolveStats::default();
        let lambda_u = self.config.lambda_u;

        // With λ_δ = 0 the relaxed row imposes nothing; the slack is then the
        // smallest one consistent with the chosen u.
        let mut b = self.strict_builder(&rows, u_star, usize::from(lambda > 0.0), lambda_u);
        if lambda > 0.0 {
            b.slack_weight(0, lambda);
            b.slack_nonnegative(0);
            b.inequality(&row.lg, Some(0), row.input_bound());
        }
        let sol = self.solve(&b, &mut stats)?;
        if !sol.is_optimal() {
            return Ok(self.infeasible(&rows, u_star, 1, lambdas, stats));
        }
        let u = Vec2::new(sol.z[0], sol.z[1]);
        let delta = if lambda > 0.0 {
            sol.z[2]
        } else {
            (row.input_bound() - row.lg.dot(&u)).max(0.0)
        };
        Ok(self.finish(&rows, u, vec![delta], lambdas, FilterStatus::Ok, stats))
    }

    /// Hierarchical program: ḣ₂(u) + δ = ḣ₂(û₂), δ free.
    pub fn hierarchical(&self, u_star: &Vec2, x: &State) -> Result<FilterResult, FilterError> {
        self.implicit(u_star, x)
    }

    /// One program with an equality row and a free slack per relaxed barrier.
    pub fn implicit(&self, u_star: &Vec2, x: &State) -> Result<FilterResult, FilterError> {
        let rows = self.rows(x)?;
        let lambdas = self.lambdas(&rows);
        let mut stats = SolveStats::default();
        let targets = rows
            .relaxed
            .iter()
            .map(|row| Ok(row.lg.dot(&self.hat(row, u_star, &mut stats)?)))
            .collect::<Result<Vec<_>, FilterError>>()?;

        // Rows with λ_δ = 0 carry a free, costless slack and drop out.
        let weighted: Vec<usize> = (0..rows.relaxed.len()).filter(|&k| lambdas[k] > 0.0).collect();
        let mut b = self.strict_builder(&rows, u_star, weighted.len(), self.config.lambda_u);
        for (slot, &k) in weighted.iter().enumerate() {
            b.slack_weight(slot, lambdas[k]);
            b.equality(&rows.relaxed[k].lg, Some(slot), targets[k]);
        }
        let sol = self.solve(&b, &mut stats)?;
        if !sol.is_optimal() {
            return Ok(self.infeasible(&rows, u_star, rows.relaxed.len(), lambdas, stats));
        }
        let u = Vec2::new(sol.z[0], sol.z[1]);
        let delta = (0..rows.relaxed.len())
            .map(|k| match weighted.iter().position(|&w| w == k) {
                Some(slot) => sol.z[2 + slot],
                None => targets[k] - rows.relaxed[k].lg.dot(&u),
            })
            .collect();
        Ok(self.finish(&rows, u, delta, lambdas, FilterStatus::Ok, stats))
    }

    /// Sequential programs: stage k minimizes λ_u‖u* − u‖² + λ_k δ_k² with the
    /// relaxations of earlier stages frozen as equality rows.
    pub fn explicit(&self, u_star: &Vec2, x: &State) -> Result<FilterResult, FilterError> {
        let rows = self.rows(x)?;
        let lambdas = self.lambdas(&rows);
        let mut stats = SolveStats::default();
        let targets = rows
            .relaxed
            .iter()
            .map(|row| Ok(row.lg.dot(&self.hat(row, u_star, &mut stats)?)))
            .collect::<Result<Vec<_>, FilterError>>()?;

        let m = rows.relaxed.len();
        let mut frozen: Vec<f64> = Vec::with_capacity(m);
        let mut u: Option<Vec2> = None;
        for k in 0..m {
            let weighted = lambdas[k] > 0.0;
            let mut b = self.strict_builder(&rows, u_star, usize::from(weighted), self.config.lambda_u);
            for (i, &d) in frozen.iter().enumerate() {
                b.equality(&rows.relaxed[i].lg, None, targets[i] - d);
            }
            if weighted {
                b.slack_weight(0, lambdas[k]);
                b.equality(&rows.relaxed[k].lg, Some(0), targets[k]);
            }
            let sol = self.solve(&b, &mut stats)?;
            if !sol.is_optimal() {
                if k == 0 {
                    return Ok(self.infeasible(&rows, u_star, m, lambdas, stats));
                }
                stats.failed_stage = Some(k);
                break;
            }
            let stage_u = Vec2::new(sol.z[0], sol.z[1]);
            let d = if weighted {
                sol.z[2]
            } else {
                targets[k] - rows.relaxed[k].lg.dot(&stage_u)
            };
            frozen.push(d);
            u = Some(stage_u);
        }
        let u = u.expect("stage 0 succeeded");
        // Stages that did not run report the relaxation implied by the last u.
        let delta = (0..m)
            .map(|k| {
                frozen
                    .get(k)
                    .copied()
                    .unwrap_or_else(|| targets[k] - rows.relaxed[k].lg.dot(&u))
            })
            .collect();
        Ok(self.finish(&rows, u, delta, lambdas, FilterStatus::Ok, stats))
    }

    /// Targets ḣ_e,k(x, û_k) for every relaxed barrier.
    pub fn hat_rates(&self, u_star: &Vec2, x: &State) -> Result<Vec<f64>, FilterError> {
        let rows = self.rows(x)?;
        let mut stats = SolveStats::default();
        rows.relaxed
            .iter()
            .map(|row| Ok(row.hdot(&self.hat(row, u_star, &mut stats)?)))
            .collect()
    }

    /// Hierarchical cost with δ eliminated through its equality row:
    /// λ_u‖u* − u‖² + λ_δ (ḣ₂(û₂) − ḣ₂(u))².
    pub fn hierarchical_cost(&self, u_star: &Vec2, x: &State, u: &Vec2) -> Result<f64, FilterError> {
        let rows = self.rows(x)?;
        let lambdas = self.lambdas(&rows);
        let targets = self.hat_rates(u_star, x)?;
        let mut cost = self.config.lambda_u * (u_star - u).norm_squared();
        for (k, row) in rows.relaxed.iter().enumerate() {
            let d = targets[k] - row.hdot(u);
            cost += lambdas[k] * d * d;
        }
        Ok(cost)
    }

    /// The quadratic form of the hierarchical cost for λ_u = 0 and a unit
    /// weight: (M, p) with M = (L_g h₂)ᵀ L_g h₂ and p = −2 M Δu, where
    /// Δu = û₂ − u*.
    pub fn hierarchical_form(&self, u_star: &Vec2, x: &State) -> Result<(Matrix2<f64>, Vec2), FilterError> {
        let rows = self.rows(x)?;
        let row = rows.relaxed[0];
        let mut stats = SolveStats::default();
        let hat = self.hat(&row, u_star, &mut stats)?;
        let m = row.lg * row.lg.transpose();
        let p = -2.0 * m * (hat - u_star);
        Ok((m, p))
    }
}

fn filter_for(mode: FilterMode, cfg: &FilterConfig) -> Result<SafetyFilter, FilterError> {
    let mut cfg = cfg.clone();
    cfg.mode = mode;
    SafetyFilter::new(cfg)
}

/// Single-barrier program on `barrier`, using the box and gain from `cfg`.
pub fn cbf_qp_single(
    u_star: &Vec2,
    x: &State,
    barrier: &BarrierSpec,
    cfg: &FilterConfig,
) -> Result<FilterResult, FilterError> {
    let single = FilterConfig {
        strict: vec![*barrier],
        relaxed: Vec::new(),
        mode: FilterMode::Single,
        ..cfg.clone()
    };
    SafetyFilter::new(single)?.single(u_star, x, barrier)
}

pub fn cbf_qp_multi(u_star: &Vec2, x: &State, cfg: &FilterConfig) -> Result<FilterResult, FilterError> {
    filter_for(FilterMode::MultiStrict, cfg)?.multi(u_star, x)
}

pub fn r_cbf_qp(u_star: &Vec2, x: &State, cfg: &FilterConfig) -> Result<FilterResult, FilterError> {
    filter_for(FilterMode::Relaxed, cfg)?.relaxed(u_star, x)
}

pub fn h_cbf_qp(u_star: &Vec2, x: &State, cfg: &FilterConfig) -> Result<FilterResult, FilterError> {
    filter_for(FilterMode::Hierarchical, cfg)?.hierarchical(u_star, x)
}

pub fn ih_cbf_qp(u_star: &Vec2, x: &State, cfg: &FilterConfig) -> Result<FilterResult, FilterError> {
    filter_for(FilterMode::ImplicitHierarchical, cfg)?.implicit(u_star, x)
}

pub fn eh_cbf_qp(u_star: &Vec2, x: &State, cfg: &FilterConfig) -> Result<FilterResult, FilterError> {
    filter_for(FilterMode::ExplicitHierarchical, cfg)?.explicit(u_star, x)
}
