//! Checks shared by the integration tests and the acceptance target. Each
//! returns a one-line detail on success and a diagnostic on failure.

use std::time::{Duration, Instant};

use hcbf::cbf::{conflict_certificate, lie_derivatives, BarrierKind, BarrierSpec, CbfConstraint, Certificate};
use hcbf::filters::{
    cbf_qp_single, eh_cbf_qp, h_cbf_qp, r_cbf_qp, FilterConfig, FilterMode, FilterStatus, RelaxationWeight,
    RelaxedBarrier, SafetyFilter,
};
use hcbf::model::{DoubleIntegrator, InputBox, RomDynamics, State, Vec2};
use hcbf::parallel::Execution;
use hcbf::qp::{solve_qp, QpStatus, KKT_TOLERANCE};
use hcbf::sim::{builtin_scenario, run_scenario, ScenarioConfig};
use hcbf::tuner::{tune, GridSpec, TuneConfig};
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bisect_min, central_gradient, conflicting_instance, enumeration_oracle, grid_feasible, polygon_feasible,
    random_barrier, random_feasible_qp, random_state, row_of,
};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub fn standard_box() -> InputBox {
    InputBox::symmetric(5.0)
}

pub fn pair_config(mode: FilterMode, top: BarrierSpec, second: BarrierSpec, weight: RelaxationWeight) -> FilterConfig {
    FilterConfig::new(
        mode,
        vec![top],
        vec![RelaxedBarrier {
            barrier: second,
            weight,
        }],
        standard_box(),
    )
}

pub fn random_input(rng: &mut ChaCha8Rng, reach: f64) -> Vec2 {
    Vec2::new(rng.random_range(-reach..reach), rng.random_range(-reach..reach))
}

pub fn away_from_center(b: &BarrierSpec, x: &State) -> bool {
    match b.shape {
        BarrierKind::Circle { center, .. } => (x.p - center).norm() > 0.3,
        BarrierKind::Halfplane { .. } => true,
    }
}

pub fn qp_oracle(cases: usize) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x51ab);
    let mut worst_gap: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for case in 0..cases {
        let p = random_feasible_qp(&mut rng);
        let sol = solve_qp(&p).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(sol.status == QpStatus::Optimal, "case {case}: status {:?}", sol.status);
        let oracle = enumeration_oracle(&p).ok_or(format!("case {case}: oracle found no point"))?;
        worst_gap = worst_gap.max((p.objective(&sol.z) - oracle).abs());
        worst_kkt = worst_kkt.max(sol.kkt_residual);
    }
    let elapsed = start.elapsed();
    ensure!(worst_gap <= 1e-6, "objective gap {worst_gap:.3e} > 1e-6");
    ensure!(worst_kkt <= KKT_TOLERANCE, "KKT residual {worst_kkt:.3e} > 1e-8");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{cases} QPs, max gap {worst_gap:.2e}, max KKT {worst_kkt:.2e}, {elapsed:.2?}"
    ))
}

fn state_of(v: &[f64; 4]) -> State {
    State::new(v[0], v[1], v[2], v[3])
}

/// Largest relative mismatch between analytic and central-difference
/// derivatives of h, h_e and the Lie derivatives of h at one state.
pub fn derivative_mismatch(b: &BarrierSpec, x: &State) -> f64 {
    const STEP: f64 = 1e-5;
    let xv = [x.p.x, x.p.y, x.v.x, x.v.y];
    let mut worst: f64 = 0.0;
    let mut track = |analytic: f64, numeric: f64| {
        worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
    };
    let fd = central_gradient(|v| b.value(&state_of(v)), &xv, STEP);
    let g = b.gradient(x).unwrap();
    for i in 0..4 {
        track(g[i], fd[i]);
    }
    let fd_e = central_gradient(|v| b.augmented_value(&state_of(v), 1.0).unwrap(), &xv, STEP);
    let ge = b.augmented_gradient(x, 1.0).unwrap();
    for i in 0..4 {
        track(ge[i], fd_e[i]);
    }
    let dynamics = DoubleIntegrator;
    let drift = dynamics.drift(x);
    let inputs = dynamics.input_matrix(x);
    let (lf, lg) = lie_derivatives(b, &dynamics, x).unwrap();
    track(lf, (0..4).map(|i| fd[i] * drift[i]).sum());
    for j in 0..2 {
        track(lg[j], (0..4).map(|i| fd[i] * inputs[(i, j)]).sum());
    }
    let c = CbfConstraint::at(b, &dynamics, x, 1.0).unwrap();
    let fd_lf_e: f64 = (0..4).map(|i| fd_e[i] * drift[i]).sum();
    track(c.lf, fd_lf_e);
    for j in 0..2 {
        track(c.lg[j], (0..4).map(|i| fd_e[i] * inputs[(i, j)]).sum());
    }
    worst
}

pub fn gradients(per_kind: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1ff);
    let mut worst: f64 = 0.0;
    for want_circle in [false, true] {
        let mut checked = 0;
        while checked < per_kind {
            let b = random_barrier(&mut rng);
            let x = random_state(&mut rng);
            let is_circle = matches!(b.shape, BarrierKind::Circle { .. });
            if is_circle != want_circle || !away_from_center(&b, &x) {
                continue;
            }
            let m = derivative_mismatch(&b, &x);
            ensure!(m <= 1e-6, "{:?} at {x:?}: relative mismatch {m:.3e}", b.shape);
            worst = worst.max(m);
            checked += 1;
        }
    }
    Ok(format!(
        "{per_kind} states per barrier kind, max relative mismatch {worst:.2e}"
    ))
}

/// λ_δ = 0: the relaxed modes reproduce the single-barrier filter on h₁.
pub fn zero_relaxation_weight(mode: FilterMode, states: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0 + mode as u64);
    let mut worst: f64 = 0.0;
    for i in 0..states {
        let (x, b1, b2) = conflicting_instance(&mut rng, &standard_box());
        let cfg = pair_config(mode, b1, b2, RelaxationWeight::Fixed { value: 0.0 });
        let u_star = random_input(&mut rng, 6.0);
        let relaxed = match mode {
            FilterMode::Relaxed => r_cbf_qp(&u_star, &x, &cfg),
            _ => h_cbf_qp(&u_star, &x, &cfg),
        }
        .map_err(|e| format!("state {i}: {e}"))?;
        let single = cbf_qp_single(&u_star, &x, &b1, &cfg).map_err(|e| format!("state {i}: {e}"))?;
        ensure!(relaxed.is_ok() && single.is_ok(), "state {i}: unexpected infeasibility");
        let gap = (relaxed.u - single.u).amax();
        ensure!(gap <= 1e-8, "state {i}: |Δu| = {gap:.3e}");
        worst = worst.max(gap);
    }
    Ok(format!("{states} conflicting states, max |Δu| {worst:.2e}"))
}

pub fn zero_weight_relaxed(states: usize) -> Outcome {
    zero_relaxation_weight(FilterMode::Relaxed, states)
}

/// With λ_u = 0 the hierarchical cost is ‖u* − u‖²_M + pᵀu up to a constant,
/// and the filter output minimizes it over the h₁-feasible inputs.
pub fn hierarchical_cost_form(states: usize, inputs: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9202);
    let mut worst_var: f64 = 0.0;
    for i in 0..states {
        let (x, b1, b2) = conflicting_instance(&mut rng, &standard_box());
        let mut cfg = pair_config(FilterMode::Hierarchical, b1, b2, RelaxationWeight::Fixed { value: 1.0 });
        cfg.lambda_u = 0.0;
        let filter = SafetyFilter::new(cfg.clone()).map_err(|e| e.to_string())?;
        let u_star = random_input(&mut rng, 6.0);

        // Independent form: û₂ from the single-barrier filter, M = L_g h₂ᵀ L_g h₂.
        // When h₂ alone cannot be met, û₂ is the box corner with the largest ḣ₂.
        let hat = cbf_qp_single(&u_star, &x, &b2, &cfg).map_err(|e| e.to_string())?;
        let c2 = CbfConstraint::at(&b2, &DoubleIntegrator, &x, 1.0).unwrap();
        let hat_u = if hat.is_ok() {
            hat.u
        } else {
            let bx = standard_box();
            [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .map(|&(i, j)| {
                    Vec2::new(
                        if i == 0 { bx.lower[0] } else { bx.upper[0] },
                        if j == 0 { bx.lower[1] } else { bx.upper[1] },
                    )
                })
                .max_by(|a, b| c2.lg.dot(a).total_cmp(&c2.lg.dot(b)))
                .unwrap()
        };
        let m: Matrix2<f64> = c2.lg * c2.lg.transpose();
        let p = -2.0 * m * (hat_u - u_star);
        let (lib_m, lib_p) = filter.hierarchical_form(&u_star, &x).map_err(|e| e.to_string())?;
        ensure!(
            (lib_m - m).amax() <= 1e-12 && (lib_p - p).amax() <= 1e-9,
            "state {i}: form mismatch"
        );

        let diffs: Vec<f64> = (0..inputs)
            .map(|_| {
                let u = random_input(&mut rng, 5.0);
                let e = u_star - u;
                let jh = filter.hierarchical_cost(&u_star, &x, &u).unwrap();
                let direct = (c2.hdot(&hat_u) - c2.hdot(&u)).powi(2);
                (jh - (e.dot(&(m * e)) + p.dot(&u)), (jh - direct).abs())
            })
            .map(|(d, mismatch)| if mismatch > 1e-9 { f64::NAN } else { d })
            .collect();
        ensure!(
            diffs.iter().all(|d| d.is_finite()),
            "state {i}: library cost disagrees with ḣ₂ form"
        );
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        ensure!(var <= 1e-12, "state {i}: variance {var:.3e}");
        worst_var = worst_var.max(var);

        let result = filter.apply(&u_star, &x).map_err(|e| e.to_string())?;
        ensure!(result.is_ok(), "state {i}: filter infeasible");
        let best = filter.hierarchical_cost(&u_star, &x, &result.u).unwrap();
        let r1 = row_of(&b1, &x);
        for _ in 0..inputs {
            let u = random_input(&mut rng, 5.0);
            if r1.0.dot(&u) >= r1.1 {
                let other = filter.hierarchical_cost(&u_star, &x, &u).unwrap();
                ensure!(
                    best <= other + 1e-8,
                    "state {i}: feasible input beats the filter ({best} > {other})"
                );
            }
        }
    }
    Ok(format!(
        "{states} states × {inputs} inputs, max variance {worst_var:.2e}"
    ))
}

pub fn hierarchical_weight_and_cost_form(states: usize) -> Outcome {
    let c2 = zero_relaxation_weight(FilterMode::Hierarchical, states)?;
    let p2 = hierarchical_cost_form(states, 100)?;
    Ok(format!("λ_δ = 0: {c2}; λ_u = 0: {p2}"))
}

pub fn minimal_relaxation(states: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4e31);
    let input_box = standard_box();
    let mut worst: f64 = 0.0;
    for i in 0..states {
        let (x, b1, b2) = conflicting_instance(&mut rng, &input_box);
        let mut cfg = pair_config(FilterMode::Relaxed, b1, b2, RelaxationWeight::Fixed { value: 1.0 });
        cfg.lambda_u = 0.0;
        let u_star = random_input(&mut rng, 6.0);
        let r = r_cbf_qp(&u_star, &x, &cfg).map_err(|e| e.to_string())?;
        ensure!(r.is_ok(), "state {i}: filter infeasible");
        let (r1, (a2, bound2)) = (row_of(&b1, &x), row_of(&b2, &x));
        let oracle = bisect_min(
            |d| polygon_feasible(&[r1, (a2, bound2 - d)], &input_box, 1e-12),
            1.0,
            1e-10,
        );
        let gap = (r.delta[0] - oracle).abs();
        ensure!(
            gap <= 1e-6,
            "state {i}: δ* = {} vs bisection {oracle} (gap {gap:.3e})",
            r.delta[0]
        );
        worst = worst.max(gap);
    }
    Ok(format!("{states} conflicting states, max |δ* − δ_bisect| {worst:.2e}"))
}

/// sim-paper barriers as a full chain: h₃ strict, then h₄, h₁, h₂.
pub fn chain_config(lambda_u: f64) -> FilterConfig {
    let s = builtin_scenario("sim-paper").unwrap();
    let weight = RelaxationWeight::Fixed { value: 1.0 };
    let relaxed = [3, 0, 1]
        .iter()
        .map(|&i| RelaxedBarrier {
            barrier: s.barriers[i],
            weight,
        })
        .collect();
    let mut cfg = FilterConfig::new(
        FilterMode::ExplicitHierarchical,
        vec![s.barriers[2]],
        relaxed,
        standard_box(),
    );
    cfg.lambda_u = lambda_u;
    cfg
}

pub fn chain_scenario() -> ScenarioConfig {
    let mut s = builtin_scenario("sim-paper").unwrap();
    s.mode = FilterMode::ExplicitHierarchical;
    s.strict = vec![2];
    s.relaxed = vec![3, 0, 1];
    s
}

/// Stage-feasible perturbations never reduce δ_k² below the stage optimum.
pub fn lexicographic_chain(per_stage: usize) -> Outcome {
    let cfg = chain_config(0.0);
    let filter = SafetyFilter::new(cfg.clone()).map_err(|e| e.to_string())?;
    let rows_of = |x: &State| -> Vec<CbfConstraint> {
        cfg.barriers()
            .map(|b| CbfConstraint::at(b, &DoubleIntegrator, x, 1.0).unwrap())
            .collect()
    };
    let trace = run_scenario(&chain_scenario()).map_err(|e| e.to_string())?.trace;
    let mut states: Vec<State> = trace.records.iter().step_by(20).map(|r| r.x).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc3c3);
    while states.len() < 400 {
        let x = State::new(
            rng.random_range(-13.0..2.0),
            rng.random_range(-1.0..11.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        if cfg.barriers().all(|b| away_from_center(b, &x)) {
            states.push(x);
        }
    }

    let stages = cfg.relaxed.len();
    let mut drawn = vec![0usize; stages];
    let mut point_stages = 0usize;
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut cursor = 0usize;
    while drawn[..2].iter().any(|&d| d < per_stage) {
        ensure!(
            cursor < 100 * states.len(),
            "could not draw enough perturbations: {drawn:?}"
        );
        let x = states[cursor % states.len()];
        cursor += 1;
        let u_star = random_input(&mut rng, 6.0);
        let res = filter.apply(&u_star, &x).map_err(|e| e.to_string())?;
        if !res.is_ok() || res.stats.failed_stage.is_some() {
            continue;
        }
        let rows = rows_of(&x);
        let (strict, relaxed) = rows.split_at(1);
        let targets = filter.hat_rates(&u_star, &x).map_err(|e| e.to_string())?;
        let delta_of = |k: usize, u: &Vec2| targets[k] - relaxed[k].hdot(u);
        for k in 0..stages {
            let frozen: Vec<Vec2> = relaxed[..k].iter().map(|r| r.lg).collect();
            let rank2 = frozen
                .iter()
                .any(|a| frozen.iter().any(|b| (a.x * b.y - a.y * b.x).abs() > 1e-9));
            let candidate = if rank2 {
                point_stages += 1;
                res.u
            } else if let Some(a) = frozen.iter().find(|a| a.norm() > 0.0) {
                res.u + Vec2::new(-a.y, a.x).normalize() * rng.random_range(-8.0..8.0)
            } else {
                random_input(&mut rng, 5.0)
            };
            let stage_feasible = standard_box().contains(&candidate, 1e-12)
                && strict.iter().all(|r| r.margin(&candidate) >= 0.0)
                && (0..k).all(|i| (delta_of(i, &candidate) - res.delta[i]).abs() <= 1e-9);
            if !stage_feasible {
                continue;
            }
            let star = res.delta[k] * res.delta[k];
            let other = delta_of(k, &candidate).powi(2);
            ensure!(
                other >= star - 1e-8,
                "stage {k} at {x:?}: perturbation reaches δ² = {other:.6e} below δ*² = {star:.6e}"
            );
            worst = worst.max(star - other);
            drawn[k] += 1;
        }
    }
    Ok(format!(
        "stage draws {drawn:?} (stage 3 is a single point in {point_stages} cases), max improvement {worst:.2e}"
    ))
}

pub struct ScenarioComparison {
    pub relaxed_violation: f64,
    pub hierarchical_violation: f64,
    pub relaxed_mean: f64,
    pub hierarchical_mean: f64,
    pub min_h3: [f64; 2],
    pub final_error: [f64; 2],
    pub runtime: [Duration; 2],
}

pub fn compare_builtin_modes() -> Result<ScenarioComparison, String> {
    let base = builtin_scenario("sim-paper").map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for mode in [FilterMode::Relaxed, FilterMode::Hierarchical] {
        let start = Instant::now();
        let run = run_scenario(&base.with_mode(mode)).map_err(|e| format!("{mode}: {e}"))?;
        out.push((run.summary, start.elapsed()));
    }
    let (r, h) = (&out[0].0, &out[1].0);
    Ok(ScenarioComparison {
        relaxed_violation: r.integrated_violation[3],
        hierarchical_violation: h.integrated_violation[3],
        relaxed_mean: r.mean_error,
        hierarchical_mean: h.mean_error,
        min_h3: [r.min_h[2], h.min_h[2]],
        final_error: [r.final_error, h.final_error],
        runtime: [out[0].1, out[1].1],
    })
}

pub fn scenario_reproduction() -> Outcome {
    let c = compare_builtin_modes()?;
    ensure!(c.min_h3.iter().all(|h| *h >= -1e-6), "min h3 {:?}", c.min_h3);
    ensure!(
        c.hierarchical_violation <= 0.9 * c.relaxed_violation,
        "h4 violation: hierarchical {} vs relaxed {}",
        c.hierarchical_violation,
        c.relaxed_violation
    );
    ensure!(
        c.final_error.iter().all(|e| e.is_finite()),
        "final errors {:?}",
        c.final_error
    );
    ensure!(
        c.hierarchical_mean > c.relaxed_mean,
        "mean error: hierarchical {} vs relaxed {}",
        c.hierarchical_mean,
        c.relaxed_mean
    );
    ensure!(
        c.runtime.iter().all(|t| *t < Duration::from_secs(30)),
        "runtimes {:?}",
        c.runtime
    );
    Ok(format!(
        "∫h4⁻ R {:.4} vs H {:.4}; mean ‖e‖ R {:.4} vs H {:.4}; min h3 {:.4?}",
        c.relaxed_violation, c.hierarchical_violation, c.relaxed_mean, c.hierarchical_mean, c.min_h3
    ))
}

fn grid_verdict(rows: &[(Vec2, f64)], shift: f64) -> bool {
    let shifted: Vec<([f64; 2], f64)> = rows.iter().map(|(a, b)| ([a.x, a.y], b + shift * a.norm())).collect();
    grid_feasible(&shifted, [-5.0, -5.0], [5.0, 5.0], 41)
}

pub fn certificate_grid(instances: usize) -> Outcome {
    let input_box = standard_box();
    let spacing = 10.0 / 40.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0xce27);
    let (mut agreed, mut conflicting, mut skipped) = (0, 0, 0);
    while agreed < instances {
        let count = 2 + usize::from(rng.random_bool(0.3));
        let barriers: Vec<BarrierSpec> = (0..count).map(|_| random_barrier(&mut rng)).collect();
        let x = random_state(&mut rng);
        if !barriers.iter().all(|b| away_from_center(b, &x)) {
            continue;
        }
        let rows: Vec<_> = barriers.iter().map(|b| row_of(b, &x)).collect();
        // The scan only decides instances whose verdict survives moving every
        // boundary by one grid spacing.
        let (tight, loose) = (grid_verdict(&rows, spacing), grid_verdict(&rows, -spacing));
        if tight != loose {
            skipped += 1;
            continue;
        }
        let cert =
            conflict_certificate(&x, &barriers, &DoubleIntegrator, &input_box, 1.0).map_err(|e| e.to_string())?;
        ensure!(
            cert.is_compatible() == tight,
            "instance {agreed}: certificate {cert:?}, grid {tight}"
        );
        match cert {
            Certificate::Compatible(u) => {
                ensure!(input_box.contains(&u, 1e-9), "witness outside the box");
                ensure!(
                    rows.iter().all(|(a, b)| a.dot(&u) >= b - 1e-8),
                    "witness violates a row"
                );
            }
            Certificate::Conflicting => conflicting += 1,
        }
        agreed += 1;
    }
    ensure!(
        conflicting > 0 && conflicting < instances,
        "degenerate sample: {conflicting} conflicting"
    );
    Ok(format!(
        "{instances} instances agree ({conflicting} conflicting, {skipped} undecidable by the grid skipped)"
    ))
}

pub fn tuner_identity() -> Outcome {
    let mut cfg = TuneConfig::with_defaults(builtin_scenario("sim-paper").map_err(|e| e.to_string())?);
    cfg.seed = 11;
    cfg.sample_count = 16;
    cfg.grid = Some(GridSpec {
        gamma0_points: 4,
        delta_gamma_points: 4,
    });
    let serial = tune(&cfg, Execution::Serial).map_err(|e| e.to_string())?;
    let again = tune(&cfg, Execution::Serial).map_err(|e| e.to_string())?;
    let parallel = tune(&cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    let map = serial.cost_map.as_ref().ok_or("no cost map")?;
    let map_min = map.points.iter().map(|p| p.offset_cost).fold(f64::INFINITY, f64::min);
    let sample_min = serial
        .samples
        .iter()
        .map(|p| p.offset_cost)
        .fold(f64::INFINITY, f64::min);
    ensure!(map_min == 0.0, "cost map min offset {map_min}");
    ensure!(sample_min == 0.0, "sample min offset {sample_min}");
    ensure!(serial == again, "seeded tune runs differ");
    ensure!(serial == parallel, "parallel report differs from serial");
    let zero = serial.samples.iter().filter(|s| s.offset_cost == 0.0).count();
    ensure!(
        serial.samples[serial.best_index].offset_cost == 0.0,
        "best sample has non-zero offset"
    );
    Ok(format!(
        "min r_o = 0 on {} samples and {} grid points, {zero} zero-offset sample(s); serial = rerun = parallel",
        serial.samples.len(),
        map.points.len()
    ))
}

pub fn status_ok(s: FilterStatus) -> bool {
    s == FilterStatus::Ok
}

pub fn eh_matches_h(states: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xe4e4);
    for i in 0..states {
        let (x, b1, b2) = conflicting_instance(&mut rng, &standard_box());
        let w = RelaxationWeight::Fixed {
            value: rng.random_range(0.1..10.0),
        };
        let cfg = pair_config(FilterMode::Hierarchical, b1, b2, w);
        let u_star = random_input(&mut rng, 6.0);
        let h = h_cbf_qp(&u_star, &x, &cfg).map_err(|e| e.to_string())?;
        let e = eh_cbf_qp(&u_star, &x, &cfg).map_err(|e| e.to_string())?;
        ensure!((h.u - e.u).amax() <= 1e-8, "state {i}: EH {:?} vs H {:?}", e.u, h.u);
    }
    Ok(format!("{states} states"))
}
