//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ zᵀ H z + fᵀ z
//! subject to  A_in z ≥ b_in
//!             A_eq z = b_eq
//!             lb ≤ z ≤ ub
//! ```
//!
//! Equalities are eliminated through a null-space basis, after which the
//! reduced problem is solved with the Goldfarb–Idnani dual active-set method:
//! start from the unconstrained minimizer and repeatedly add the most violated
//! constraint, dropping active constraints whose multipliers would turn
//! negative. The method either terminates at a KKT point or proves that the
//! violated constraint cannot be satisfied together with the current active
//! set, which is an exact infeasibility certificate.
//!
//! Bounds are treated as ordinary inequality rows; infinite bounds are skipped.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Iteration cap for the active-set loop (additions, drops and partial steps).
pub const MAX_ITERATIONS: usize = 200;

/// Residual that an `Optimal` solution is guaranteed not to exceed.
pub const KKT_TOLERANCE: f64 = 1e-8;

/// Relative proximal weight used when the reduced Hessian is only semidefinite.
pub const PROXIMAL_WEIGHT: f64 = 1e-6;
const PROXIMAL_MAX_ROUNDS: usize = 200;

const SYMMETRY_TOLERANCE: f64 = 1e-12;
const PSD_TOLERANCE: f64 = 1e-10;
const FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// Relative curvature below which an added normal counts as linearly dependent.
const DEPENDENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid QP: {0}")]
    InvalidProblem(String),
}

/// A dense QP. See the module docs for the sign conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with the given cost.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_inequalities(mut self, a_in: DMatrix<f64>, b_in: DVector<f64>) -> Self {
        self.a_in = a_in;
        self.b_in = b_in;
        self
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// ½ zᵀ H z + fᵀ z
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// Largest violation of any constraint at `z` (0 when feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let mut worst = 0.0_f64;
        if self.a_in.nrows() > 0 {
            let r = &self.a_in * z - &self.b_in;
            worst = r.iter().fold(worst, |w, &v| w.max(-v));
        }
        if self.a_eq.nrows() > 0 {
            let r = &self.a_eq * z - &self.b_eq;
            worst = r.iter().fold(worst, |w, &v| w.max(v.abs()));
        }
        for i in 0..z.len() {
            worst = worst.max(self.lb[i] - z[i]).max(z[i] - self.ub[i]);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        let invalid = |msg: String| Err(QpError::InvalidProblem(msg));
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return invalid(format!(
                "hessian is {}x{}, expected {n}x{n}",
                self.hessian.nrows(),
                self.hessian.ncols()
            ));
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return invalid(format!(
                "inequality block is {}x{} with {} right-hand sides (n = {n})",
                self.a_in.nrows(),
                self.a_in.ncols(),
                self.b_in.len()
            ));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return invalid(format!(
                "equality block is {}x{} with {} right-hand sides (n = {n})",
                self.a_eq.nrows(),
                self.a_eq.ncols(),
                self.b_eq.len()
            ));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return invalid(format!(
                "bounds have lengths {}/{}, expected {n}",
                self.lb.len(),
                self.ub.len()
            ));
        }
        let finite = self.hessian.iter().all(|v| v.is_finite())
            && self.linear.iter().all(|v| v.is_finite())
            && self.a_in.iter().all(|v| v.is_finite())
            && self.b_in.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite());
        if !finite {
            return invalid("non-finite problem data".into());
        }
        if self.lb.iter().chain(self.ub.iter()).any(|v| v.is_nan()) {
            return invalid("NaN bound".into());
        }
        for i in 0..n {
            if self.lb[i] > self.ub[i] {
                return invalid(format!("lb[{i}] = {} exceeds ub[{i}] = {}", self.lb[i], self.ub[i]));
            }
        }
        let scale = self.hessian.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return invalid(format!("hessian not symmetric at ({i}, {j})"));
                }
            }
        }
        if n > 0 {
            let min_eig = SymmetricEigen::new(self.hessian.clone()).eigenvalues.min();
            if min_eig < -PSD_TOLERANCE * scale {
                return invalid(format!("hessian is indefinite (min eigenvalue {min_eig:e})"));
            }
        }
        Ok(())
    }
}

/// Lagrange multipliers grouped by constraint block.
///
/// Inequality and bound multipliers are non-negative at a KKT point; entries
/// belonging to infinite bounds are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Multipliers {
    pub fn zeros(problem: &QpProblem) -> Self {
        Self {
            eq: DVector::zeros(problem.b_eq.len()),
            ineq: DVector::zeros(problem.b_in.len()),
            lower: DVector::zeros(problem.dim()),
            upper: DVector::zeros(problem.dim()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub multipliers: Multipliers,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Maximum over stationarity norm, primal infeasibility, dual infeasibility
/// and complementarity products. Zero exactly at a KKT point.
pub fn kkt_residual(problem: &QpProblem, z: &DVector<f64>, lambda: &Multipliers) -> Result<f64, QpError> {
    let n = problem.dim();
    if z.len() != n
        || lambda.eq.len() != problem.b_eq.len()
        || lambda.ineq.len() != problem.b_in.len()
        || lambda.lower.len() != n
        || lambda.upper.len() != n
    {
        return Err(QpError::InvalidProblem("kkt_residual: dimension mismatch".into()));
    }

    let mut grad = &problem.hessian * z + &problem.linear;
    if problem.a_in.nrows() > 0 {
        grad -= problem.a_in.transpose() * &lambda.ineq;
    }
    if problem.a_eq.nrows() > 0 {
        grad -= problem.a_eq.transpose() * &lambda.eq;
    }
    grad -= &lambda.lower;
    grad += &lambda.upper;
    let mut worst = grad.norm();

    if problem.a_in.nrows() > 0 {
        let slack = &problem.a_in * z - &problem.b_in;
        for (s, l) in slack.iter().zip(lambda.ineq.iter()) {
            worst = worst.max(-s).max(-l).max((s * l).abs());
        }
    }
    if problem.a_eq.nrows() > 0 {
        let r = &problem.a_eq * z - &problem.b_eq;
        worst = worst.max(r.amax());
    }
    for i in 0..n {
        for (bound, l, slack) in [
            (problem.lb[i], lambda.lower[i], z[i] - problem.lb[i]),
            (problem.ub[i], lambda.upper[i], problem.ub[i] - z[i]),
        ] {
            if bound.is_finite() {
                worst = worst.max(-slack).max(-l).max((slack * l).abs());
            } else {
                worst = worst.max(l.abs());
            }
        }
    }
    Ok(worst)
}

/// Where a reduced inequality row came from.
#[derive(Debug, Clone, Copy)]
enum RowSource {
    General(usize),
    Lower(usize),
    Upper(usize),
}

struct Reduced {
    z0: DVector<f64>,
    basis: DMatrix<f64>,
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
    sources: Vec<RowSource>,
    singular: bool,
}

/// Solve a dense convex QP.
pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.dim();

    let infeasible = |z: DVector<f64>, iterations| QpSolution {
        kkt_residual: f64::INFINITY,
        multipliers: Multipliers::zeros(problem),
        status: QpStatus::Infeasible,
        z,
        iterations,
    };

    let Some(reduced) = reduce(problem) else {
        return Ok(infeasible(DVector::zeros(n), 0));
    };

    // Constraints that no longer depend on the free variables.
    let mut live = Vec::with_capacity(reduced.rows.nrows());
    for j in 0..reduced.rows.nrows() {
        let row_norm = reduced.rows.row(j).norm();
        if row_norm <= 1e-12 {
            if reduced.rhs[j] > FEASIBILITY_TOLERANCE * (1.0 + reduced.rhs[j].abs()) {
                return Ok(infeasible(reduced.z0.clone(), 0));
            }
        } else {
            live.push(j);
        }
    }

    let outcome = if reduced.singular {
        proximal_active_set(&reduced, &live)
    } else {
        dual_active_set(&reduced.hessian, &reduced.linear, &reduced, &live)
    };
    let (y, active, iterations, status) = match outcome {
        ActiveSetOutcome::Optimal { y, active, iterations } => {
            let (y, active) = polish(&reduced, &live, y, active);
            (y, active, iterations, QpStatus::Optimal)
        }
        ActiveSetOutcome::Infeasible { y, iterations } => {
            let z = &reduced.z0 + &reduced.basis * y;
            return Ok(infeasible(z, iterations));
        }
        ActiveSetOutcome::MaxIter { y, active, iterations } => (y, active, iterations, QpStatus::MaxIter),
    };

    let z = &reduced.z0 + &reduced.basis * &y;
    let mut multipliers = Multipliers::zeros(problem);
    for (j, u) in active {
        match reduced.sources[j] {
            RowSource::General(i) => multipliers.ineq[i] += u,
            RowSource::Lower(i) => multipliers.lower[i] += u,
            RowSource::Upper(i) => multipliers.upper[i] += u,
        }
    }
    if problem.a_eq.nrows() > 0 {
        let mut rhs = &problem.hessian * &z + &problem.linear;
        if problem.a_in.nrows() > 0 {
            rhs -= problem.a_in.transpose() * &multipliers.ineq;
        }
        rhs -= &multipliers.lower;
        rhs += &multipliers.upper;
        // Least-squares solve of A_eqᵀ λ = rhs.
        let gram = &problem.a_eq * problem.a_eq.transpose();
        multipliers.eq = pseudo_inverse_symmetric(&gram) * (&problem.a_eq * rhs);
    }
    let kkt = kkt_residual(problem, &z, &multipliers)?;
    Ok(QpSolution {
        z,
        multipliers,
        status,
        kkt_residual: kkt,
        iterations,
    })
}

fn pseudo_inverse_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let tol = 1e-12 * eig.eigenvalues.amax().max(1e-300);
    let inv_vals = eig.eigenvalues.map(|l| if l > tol { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose()
}

/// Eliminate equalities: z = z0 + Z y with A_eq Z = 0. Returns `None` when the
/// equalities are inconsistent.
fn reduce(problem: &QpProblem) -> Option<Reduced> {
    let n = problem.dim();
    let (z0, basis) = if problem.a_eq.nrows() == 0 {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        let a = &problem.a_eq;
        let gram = a.transpose() * a;
        let eig = SymmetricEigen::new(gram);
        let tol = 1e-12 * eig.eigenvalues.amax().max(1.0);
        let range: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > tol).collect();
        let null: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= tol).collect();
        let atb = a.transpose() * &problem.b_eq;
        let mut z0 = DVector::zeros(n);
        for &i in &range {
            let v = eig.eigenvectors.column(i);
            z0 += v * (v.dot(&atb) / eig.eigenvalues[i]);
        }
        let resid = (a * &z0 - &problem.b_eq).amax();
        if resid > FEASIBILITY_TOLERANCE * (1.0 + problem.b_eq.amax()) {
            return None;
        }
        let mut basis = DMatrix::zeros(n, null.len());
        for (c, &i) in null.iter().enumerate() {
            basis.set_column(c, &eig.eigenvectors.column(i));
        }
        (z0, basis)
    };

    let mut row_data: Vec<DVector<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let mut sources = Vec::new();
    for i in 0..problem.a_in.nrows() {
        row_data.push(problem.a_in.row(i).transpose());
        rhs.push(problem.b_in[i]);
        sources.push(RowSource::General(i));
    }
    for i in 0..n {
        if problem.lb[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            row_data.push(e);
            rhs.push(problem.lb[i]);
            sources.push(RowSource::Lower(i));
        }
    }
    for i in 0..n {
        if problem.ub[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = -1.0;
            row_data.push(e);
            rhs.push(-problem.ub[i]);
            sources.push(RowSource::Upper(i));
        }
    }

    let k = basis.ncols();
    let mut rows = DMatrix::zeros(row_data.len(), k);
    let mut reduced_rhs = DVector::zeros(row_data.len());
    for (j, row) in row_data.iter().enumerate() {
        let reduced_row = basis.transpose() * row;
        rows.set_row(j, &reduced_row.transpose());
        reduced_rhs[j] = rhs[j] - row.dot(&z0);
    }

    let mut hessian = basis.transpose() * &problem.hessian * &basis;
    hessian = (&hessian + hessian.transpose()) * 0.5;
    let singular = k > 0 && {
        let eig = SymmetricEigen::new(hessian.clone()).eigenvalues;
        eig.min() <= 1e-9 * eig.amax().max(1.0)
    };
    let linear = basis.transpose() * (&problem.hessian * &z0 + &problem.linear);

    Some(Reduced {
        z0,
        basis,
        hessian,
        linear,
        rows,
        rhs: reduced_rhs,
        sources,
        singular,
    })
}

/// Refine a converged iterate on its active set against the unregularized
/// reduced problem with least-squares Newton corrections of the KKT system.
/// The refined point is kept only if it stays feasible with non-negative
/// multipliers.
fn polish(
    reduced: &Reduced,
    live: &[usize],
    y: DVector<f64>,
    active: Vec<(usize, f64)>,
) -> (DVector<f64>, Vec<(usize, f64)>) {
    let k = y.len();
    let q = active.len();
    if k == 0 {
        return (y, active);
    }
    let mut kkt = DMatrix::zeros(k + q, k + q);
    kkt.view_mut((0, 0), (k, k)).copy_from(&reduced.hessian);
    for (c, &(j, _)) in active.iter().enumerate() {
        for i in 0..k {
            kkt[(i, k + c)] = -reduced.rows[(j, i)];
            kkt[(k + c, i)] = reduced.rows[(j, i)];
        }
    }
    let svd = kkt.svd(true, true);
    let eps = 1e-12 * svd.singular_values.amax().max(1.0);

    let mut y_new = y.clone();
    let mut lambda = DVector::from_iterator(q, active.iter().map(|&(_, u)| u));
    for _ in 0..2 {
        let mut r = DVector::zeros(k + q);
        let mut stat = &reduced.hessian * &y_new + &reduced.linear;
        for (c, &(j, _)) in active.iter().enumerate() {
            stat -= reduced.rows.row(j).transpose() * lambda[c];
            r[k + c] = reduced.rows.row(j).dot(&y_new.transpose()) - reduced.rhs[j];
        }
        r.rows_mut(0, k).copy_from(&stat);
        let Ok(step) = svd.solve(&(-r), eps) else {
            return (y, active);
        };
        y_new += step.rows(0, k);
        lambda += step.rows(k, q);
    }

    let feasible = live.iter().all(|&j| {
        reduced.rows.row(j).dot(&y_new.transpose()) - reduced.rhs[j] >= -1e-12 * (1.0 + reduced.rhs[j].abs())
    });
    if !feasible || lambda.iter().any(|&l| l < -1e-12) {
        return (y, active);
    }
    let active = active
        .iter()
        .zip(lambda.iter())
        .map(|(&(j, _), &l)| (j, l.max(0.0)))
        .collect();
    (y_new, active)
}

enum ActiveSetOutcome {
    Optimal {
        y: DVector<f64>,
        active: Vec<(usize, f64)>,
        iterations: usize,
    },
    Infeasible {
        y: DVector<f64>,
        iterations: usize,
    },
    MaxIter {
        y: DVector<f64>,
        active: Vec<(usize, f64)>,
        iterations: usize,
    },
}

/// Proximal-point outer loop for a semidefinite reduced Hessian: each round
/// solves the strictly convex problem with cost ½yᵀ(G + ρI)y + (a − ρ y_k)ᵀy,
/// whose fixed points are exactly the minimizers of the original problem.
fn proximal_active_set(reduced: &Reduced, live: &[usize]) -> ActiveSetOutcome {
    let k = reduced.hessian.nrows();
    let rho = PROXIMAL_WEIGHT * reduced.hessian.amax().max(1.0);
    let g = &reduced.hessian + DMatrix::identity(k, k) * rho;
    let mut center = DVector::zeros(k);
    let mut total = 0;
    let mut last = None;
    for _ in 0..PROXIMAL_MAX_ROUNDS {
        let a = &reduced.linear - &center * rho;
        let outcome = dual_active_set(&g, &a, reduced, live);
        let (y, active, iterations) = match outcome {
            ActiveSetOutcome::Optimal { y, active, iterations } => (y, active, iterations),
            ActiveSetOutcome::Infeasible { y, iterations } => {
                return ActiveSetOutcome::Infeasible {
                    y,
                    iterations: total + iterations,
                }
            }
            ActiveSetOutcome::MaxIter { y, active, iterations } => {
                return ActiveSetOutcome::MaxIter {
                    y,
                    active,
                    iterations: total + iterations,
                }
            }
        };
        total += iterations;
        let moved = (&y - &center).amax();
        let done = moved <= 1e-13 * (1.0 + y.amax());
        center = y;
        last = Some(active);
        if done {
            break;
        }
    }
    ActiveSetOutcome::Optimal {
        y: center,
        active: last.unwrap_or_default(),
        iterations: total,
    }
}

/// Goldfarb–Idnani for min ½yᵀGy + aᵀy over the rows of `reduced` listed in
/// `live`. `g` must be positive definite.
fn dual_active_set(g: &DMatrix<f64>, a: &DVector<f64>, reduced: &Reduced, live: &[usize]) -> ActiveSetOutcome {
    let k = g.nrows();
    if k == 0 {
        // Fully determined by the equalities; remaining rows were checked already.
        return ActiveSetOutcome::Optimal {
            y: DVector::zeros(0),
            active: Vec::new(),
            iterations: 0,
        };
    }
    let g_inv = match g.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => pseudo_inverse_symmetric(g),
    };
    let rows = &reduced.rows;
    let rhs = &reduced.rhs;
    let normal = |j: usize| rows.row(j).transpose();
    let slack = |j: usize, y: &DVector<f64>| rows.row(j).dot(&y.transpose()) - rhs[j];
    let violation_tol =
        |j: usize, y: &DVector<f64>| 1e-12 * (1.0 + rhs[j].abs() + rows.row(j).norm() * y.norm().min(1e6));

    let mut y = -(&g_inv * a);
    let mut active: Vec<(usize, f64)> = Vec::new();
    let mut iterations = 0;

    loop {
        // Most violated inactive constraint, lowest index on ties.
        let mut pick: Option<(usize, f64)> = None;
        for &j in live {
            if active.iter().any(|&(a, _)| a == j) {
                continue;
            }
            let s = slack(j, &y);
            if s < -violation_tol(j, &y) && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((j, s));
            }
        }
        let Some((p, _)) = pick else {
            return ActiveSetOutcome::Optimal { y, active, iterations };
        };
        let n_p = normal(p);
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > MAX_ITERATIONS {
                return ActiveSetOutcome::MaxIter { y, active, iterations };
            }
            let g_n = &g_inv * &n_p;
            let (step, dual_dir) = if active.is_empty() {
                (g_n.clone(), DVector::zeros(0))
            } else {
                let q = active.len();
                let mut big_n = DMatrix::zeros(k, q);
                for (c, &(j, _)) in active.iter().enumerate() {
                    big_n.set_column(c, &normal(j));
                }
                let gram = big_n.transpose() * &g_inv * &big_n;
                let r = match gram.clone().cholesky() {
                    Some(ch) => ch.solve(&(big_n.transpose() * &g_n)),
                    None => pseudo_inverse_symmetric(&gram) * (big_n.transpose() * &g_n),
                };
                (&g_n - &g_inv * &big_n * &r, r)
            };

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (c, &(_, u)) in active.iter().enumerate() {
                if dual_dir[c] > 1e-14 {
                    let ratio = u / dual_dir[c];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(c);
                    }
                }
            }
            let curvature = step.dot(&n_p);
            let reference = n_p.dot(&g_n);
            let s_p = slack(p, &y);
            // A normal this close to the active span is treated as dependent;
            // a primal step along the rounding residue would be enormous.
            let t2 = if curvature <= DEPENDENCE_TOLERANCE * reference {
                f64::INFINITY
            } else {
                (-s_p / curvature).max(0.0)
            };

            if t1.is_infinite() && t2.is_infinite() {
                return ActiveSetOutcome::Infeasible { y, iterations };
            }
            if t2.is_infinite() {
                for (c, entry) in active.iter_mut().enumerate() {
                    entry.1 -= t1 * dual_dir[c];
                }
                u_p += t1;
                active.remove(drop_at.expect("finite t1 has an index"));
                continue;
            }
            let t = t1.min(t2);
            y += &step * t;
            for (c, entry) in active.iter_mut().enumerate() {
                entry.1 = (entry.1 - t * dual_dir[c]).max(0.0);
            }
            u_p += t;
            if t2 <= t1 {
                active.push((p, u_p));
                break;
            }
            active.remove(drop_at.expect("finite t1 has an index"));
        }
    }
}
