//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod criteria;

use hcbf::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random strictly convex QP with a known feasible point, n ≤ 4, ≤ 4 rows.
pub fn random_feasible_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(1..=4);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let lb = DVector::from_fn(n, |_, _| {
        if rng.random_bool(0.15) {
            f64::NEG_INFINITY
        } else {
            rng.random_range(-3.0..-0.5)
        }
    });
    let ub = DVector::from_fn(n, |_, _| {
        if rng.random_bool(0.15) {
            f64::INFINITY
        } else {
            rng.random_range(0.5..3.0)
        }
    });
    let z0 = DVector::from_fn(n, |i, _| {
        let lo = lb[i].max(-0.5);
        let hi = ub[i].min(0.5);
        rng.random_range(lo..hi)
    });
    let rows = rng.random_range(0..=4);
    let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-2.0..2.0));
    let b = DVector::from_fn(rows, |i, _| a.row(i).dot(&z0.transpose()) - rng.random_range(0.0..1.0));
    QpProblem::new(h, f).with_inequalities(a, b).with_bounds(lb, ub)
}

/// Minimum objective over every active-set candidate: for each subset of at
/// most n constraint rows (general rows and finite bounds), solve the
/// equality-constrained KKT system and keep the feasible points.
pub fn enumeration_oracle(p: &QpProblem) -> Option<f64> {
    let n = p.dim();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..p.a_in.nrows() {
        rows.push((p.a_in.row(i).transpose(), p.b_in[i]));
    }
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        if p.lb[i].is_finite() {
            rows.push((e.clone(), p.lb[i]));
        }
        if p.ub[i].is_finite() {
            rows.push((e, p.ub[i]));
        }
    }
    let total = rows.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << total) {
        let chosen: Vec<usize> = (0..total).filter(|i| mask & (1 << i) != 0).collect();
        if chosen.len() > n {
            continue;
        }
        let k = chosen.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&p.linear));
        for (c, &r) in chosen.iter().enumerate() {
            for j in 0..n {
                kkt[(n + c, j)] = rows[r].0[j];
                kkt[(j, n + c)] = rows[r].0[j];
            }
            rhs[n + c] = rows[r].1;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        if p.max_violation(&z) <= 1e-9 {
            let obj = p.objective(&z);
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    }
    best
}

/// Dense grid scan of the input box: does any grid point satisfy every row
/// `a·u ≥ b`?
pub fn grid_feasible(rows: &[([f64; 2], f64)], lo: [f64; 2], hi: [f64; 2], per_axis: usize) -> bool {
    for i in 0..per_axis {
        for j in 0..per_axis {
            let u = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / (per_axis - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (per_axis - 1) as f64,
            ];
            if rows.iter().all(|(a, b)| a[0] * u[0] + a[1] * u[1] >= *b) {
                return true;
            }
        }
    }
    false
}

/// Central finite difference of a scalar function of a 4-vector.
pub fn central_gradient(f: impl Fn(&[f64; 4]) -> f64, x: &[f64; 4], step: f64) -> [f64; 4] {
    let mut g = [0.0; 4];
    for i in 0..4 {
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += step;
        xm[i] -= step;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * step);
    }
    g
}

/// Bisection for the smallest δ ≥ 0 such that `feasible(δ)` holds, assuming
/// monotonicity in δ.
pub fn bisect_min(feasible: impl Fn(f64) -> bool, mut hi: f64, tol: f64) -> f64 {
    if feasible(0.0) {
        return 0.0;
    }
    while !feasible(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

use hcbf::cbf::{BarrierSpec, CbfConstraint, ClassKe};
use hcbf::model::{DoubleIntegrator, InputBox, State, Vec2};

/// Exact test for a non-empty polygon {u ∈ box : a·u ≥ b for every row}:
/// a bounded non-empty polygon has a vertex, so it suffices to check every
/// pairwise intersection of boundary lines.
pub fn polygon_feasible(rows: &[(Vec2, f64)], input_box: &InputBox, tol: f64) -> bool {
    let mut lines: Vec<(Vec2, f64)> = rows.to_vec();
    for i in 0..2 {
        let mut e = Vec2::zeros();
        e[i] = 1.0;
        lines.push((e, input_box.lower[i]));
        lines.push((-e, -input_box.upper[i]));
    }
    let inside =
        |u: &Vec2| input_box.contains(u, tol) && rows.iter().all(|(a, b)| a.dot(u) >= b - tol * (1.0 + a.norm()));
    for i in 0..lines.len() {
        for j in (i + 1)..lines.len() {
            let (a1, b1) = lines[i];
            let (a2, b2) = lines[j];
            let det = a1.x * a2.y - a1.y * a2.x;
            if det.abs() < 1e-14 {
                continue;
            }
            let u = Vec2::new((b1 * a2.y - a1.y * b2) / det, (a1.x * b2 - b1 * a2.x) / det);
            if inside(&u) {
                return true;
            }
        }
    }
    false
}

/// (L_g h_e, −α(h_e) − L_f h_e) computed from the library's constraint.
pub fn row_of(b: &BarrierSpec, x: &State) -> (Vec2, f64) {
    let c = CbfConstraint::at(b, &DoubleIntegrator, x, 1.0).unwrap();
    (c.lg, c.input_bound())
}

pub fn random_barrier(rng: &mut ChaCha8Rng) -> BarrierSpec {
    let alpha = ClassKe::standard();
    if rng.random_bool(0.5) {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let scale = rng.random_range(0.5..2.0);
        let a = Vec2::new(angle.cos(), angle.sin()) * scale;
        BarrierSpec::halfplane(a, rng.random_range(-2.0..2.0), alpha).unwrap()
    } else {
        let c = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        BarrierSpec::circle(c, rng.random_range(0.5..3.0), alpha).unwrap()
    }
}

pub fn random_state(rng: &mut ChaCha8Rng) -> State {
    State::new(
        rng.random_range(-4.0..4.0),
        rng.random_range(-4.0..4.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    )
}

/// A state with h₁ > 0 > h₂ whose two CBF rows admit no common input in the
/// box while the h₁ row alone does.
pub fn conflicting_instance(rng: &mut ChaCha8Rng, input_box: &InputBox) -> (State, BarrierSpec, BarrierSpec) {
    loop {
        let (b1, b2) = (random_barrier(rng), random_barrier(rng));
        let x = random_state(rng);
        let (h1, h2) = (b1.value(&x), b2.value(&x));
        if !(h1 > 0.05 && h2 < -0.05) {
            continue;
        }
        let (Ok(_), Ok(_)) = (b1.position_gradient(&x), b2.position_gradient(&x)) else {
            continue;
        };
        let r1 = row_of(&b1, &x);
        let r2 = row_of(&b2, &x);
        if r1.0.norm() < 0.1 || r2.0.norm() < 0.1 {
            continue;
        }
        if polygon_feasible(&[r1], input_box, 0.0) && !polygon_feasible(&[r1, r2], input_box, 1e-6) {
            return (x, b1, b2);
        }
    }
}
