//! Convex quadratic programming with verifiable optimality certificates.
//!
//! Problems are stated as
//!
//! ```text
//!     minimize    ½ xᵀ P x + qᵀ x
//!     subject to  l ≤ A x ≤ u
//!                 lb ≤ x ≤ ub
//! ```
//!
//! where `P` is positive semidefinite and rows with `l = u` are equalities.
//! Infinite bounds are allowed. [`solve`] runs a primal-dual interior-point
//! method with Mehrotra's predictor-corrector and returns primal and dual
//! variables; [`kkt_residuals`] recomputes the optimality conditions from
//! those variables alone, without touching solver state.
//!
//! Dual signs follow the Lagrangian `½xᵀPx + qᵀx + yᵀAx + wᵀx`: a positive
//! multiplier marks an active upper bound, a negative one an active lower
//! bound.
//!
//! Variables can optionally be tagged with a block id. Rows whose support
//! lies in one block are folded into that block's Newton matrix; rows that
//! couple blocks (and all equalities) are handled through a Schur complement.
//! For problems made of many loosely coupled pieces this keeps the cost per
//! iteration linear in the number of blocks.

use std::fmt::Write as _;

use thiserror::Error;

use crate::linalg::{norm_inf, SquareMatrix};
use crate::scalar::Scalar;

/// Certificate threshold for scaled primal infeasibility.
pub const CERT_PRIMAL: f64 = 1e-8;
/// Certificate threshold for stationarity, dual sign and complementarity.
pub const CERT_DUAL: f64 = 1e-6;

/// Iteration cap used by [`QpSettings::default`].
pub const DEFAULT_MAX_ITERATIONS: usize = 500;

const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid quadratic cost: {0}")]
    Cost(String),
    #[error("inconsistent bounds on {what} {index}: lower {lower} > upper {upper}")]
    Bounds {
        what: &'static str,
        index: usize,
        lower: f64,
        upper: f64,
    },
}

/// Quadratic part of the objective.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadraticCost<T> {
    Diagonal(Vec<T>),
    /// Symmetric matrix stored row-major.
    Dense { n: usize, data: Vec<T> },
}

impl<T: Scalar> QuadraticCost<T> {
    fn dim(&self) -> usize {
        match self {
            QuadraticCost::Diagonal(d) => d.len(),
            QuadraticCost::Dense { n, .. } => *n,
        }
    }

    /// `out = P x`
    fn mul(&self, x: &[T], out: &mut [T]) {
        match self {
            QuadraticCost::Diagonal(d) => {
                for ((o, di), xi) in out.iter_mut().zip(d).zip(x) {
                    *o = *di * *xi;
                }
            }
            QuadraticCost::Dense { n, data } => {
                for i in 0..*n {
                    let row = &data[i * n..(i + 1) * n];
                    out[i] = row.iter().zip(x).fold(T::zero(), |s, (a, b)| s + *a * *b);
                }
            }
        }
    }

    fn entry(&self, i: usize, j: usize) -> T {
        match self {
            QuadraticCost::Diagonal(d) => {
                if i == j {
                    d[i]
                } else {
                    T::zero()
                }
            }
            QuadraticCost::Dense { n, data } => data[i * n + j],
        }
    }
}

/// A sparse constraint row as `(column, coefficient)` pairs.
pub type SparseRow<T> = Vec<(usize, T)>;

#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance<T> {
    pub quadratic: QuadraticCost<T>,
    pub linear: Vec<T>,
    pub rows: Vec<SparseRow<T>>,
    pub row_lower: Vec<T>,
    pub row_upper: Vec<T>,
    pub var_lower: Vec<T>,
    pub var_upper: Vec<T>,
    /// Optional block id per variable, see the module docs.
    pub blocks: Option<Vec<usize>>,
}

impl<T: Scalar> QpInstance<T> {
    /// An unconstrained instance with `n` free variables and zero cost.
    pub fn new(n: usize) -> Self {
        Self {
            quadratic: QuadraticCost::Diagonal(vec![T::zero(); n]),
            linear: vec![T::zero(); n],
            rows: Vec::new(),
            row_lower: Vec::new(),
            row_upper: Vec::new(),
            var_lower: vec![T::neg_infinity(); n],
            var_upper: vec![T::infinity(); n],
            blocks: None,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn push_row(&mut self, row: SparseRow<T>, lower: T, upper: T) -> usize {
        self.rows.push(row);
        self.row_lower.push(lower);
        self.row_upper.push(upper);
        self.rows.len() - 1
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if self.quadratic.dim() != n {
            return Err(QpError::Dimension(format!(
                "quadratic cost has dimension {}, expected {n}",
                self.quadratic.dim()
            )));
        }
        if self.var_lower.len() != n || self.var_upper.len() != n {
            return Err(QpError::Dimension("variable bounds length".into()));
        }
        let m = self.rows.len();
        if self.row_lower.len() != m || self.row_upper.len() != m {
            return Err(QpError::Dimension("row bounds length".into()));
        }
        if let Some(b) = &self.blocks {
            if b.len() != n {
                return Err(QpError::Dimension("block tags length".into()));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if let Some((j, _)) = row.iter().find(|(j, _)| *j >= n) {
                return Err(QpError::Dimension(format!("row {i} references column {j}")));
            }
        }
        match &self.quadratic {
            QuadraticCost::Diagonal(d) => {
                if let Some(i) = d.iter().position(|v| !(*v >= T::zero()) || !v.is_finite()) {
                    return Err(QpError::Cost(format!("diagonal entry {i} is negative or not finite")));
                }
            }
            QuadraticCost::Dense { n: dn, data } => {
                if data.len() != dn * dn {
                    return Err(QpError::Dimension("dense cost storage".into()));
                }
                for i in 0..*dn {
                    if !(data[i * dn + i] >= T::zero()) {
                        return Err(QpError::Cost(format!("diagonal entry {i} is negative")));
                    }
                    for j in 0..i {
                        let (a, b) = (data[i * dn + j], data[j * dn + i]);
                        if (a - b).abs() > T::epsilon().sqrt() * (T::one() + a.abs().max(b.abs())) {
                            return Err(QpError::Cost(format!("not symmetric at ({i}, {j})")));
                        }
                    }
                }
            }
        }
        for (i, (l, u)) in self.row_lower.iter().zip(&self.row_upper).enumerate() {
            if l > u || l.is_nan() || u.is_nan() {
                return Err(QpError::Bounds {
                    what: "row",
                    index: i,
                    lower: l.to_f64_lossy(),
                    upper: u.to_f64_lossy(),
                });
            }
        }
        for (j, (l, u)) in self.var_lower.iter().zip(&self.var_upper).enumerate() {
            if l > u || l.is_nan() || u.is_nan() {
                return Err(QpError::Bounds {
                    what: "variable",
                    index: j,
                    lower: l.to_f64_lossy(),
                    upper: u.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    pub fn row_activity(&self, i: usize, x: &[T]) -> T {
        self.rows[i]
            .iter()
            .fold(T::zero(), |s, (j, a)| s + *a * x[*j])
    }

    pub fn objective(&self, x: &[T]) -> T {
        let mut px = vec![T::zero(); x.len()];
        self.quadratic.mul(x, &mut px);
        x.iter()
            .zip(&px)
            .zip(&self.linear)
            .fold(T::zero(), |s, ((xi, pi), qi)| s + T::lit(0.5) * *xi * *pi + *qi * *xi)
    }

    /// True if `x` satisfies every bound up to `tol` (scaled by the bound).
    pub fn is_feasible(&self, x: &[T], tol: T) -> bool {
        let within = |v: T, l: T, u: T| {
            let lo_ok = l == T::neg_infinity() || v >= l - tol * (T::one() + l.abs());
            let hi_ok = u == T::infinity() || v <= u + tol * (T::one() + u.abs());
            lo_ok && hi_ok
        };
        (0..self.num_rows()).all(|i| within(self.row_activity(i, x), self.row_lower[i], self.row_upper[i]))
            && x
                .iter()
                .enumerate()
                .all(|(j, v)| within(*v, self.var_lower[j], self.var_upper[j]))
    }

    /// Plain-text dump for offline inspection.
    ///
    /// ```text
    /// qp <n> <m> <diag|dense>
    /// P <row-major entries, or the diagonal>
    /// q <n entries>
    /// x <lb> <ub>          (one line per variable)
    /// r <l> <u> <nnz> <col>:<val> ...   (one line per row)
    /// ```
    /// Infinite bounds print as `inf` / `-inf`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let kind = match self.quadratic {
            QuadraticCost::Diagonal(_) => "diag",
            QuadraticCost::Dense { .. } => "dense",
        };
        let _ = writeln!(out, "qp {} {} {}", self.num_vars(), self.num_rows(), kind);
        let p: Vec<String> = match &self.quadratic {
            QuadraticCost::Diagonal(d) => d.iter().map(|v| format!("{v:e}")).collect(),
            QuadraticCost::Dense { data, .. } => data.iter().map(|v| format!("{v:e}")).collect(),
        };
        let _ = writeln!(out, "P {}", p.join(" "));
        let q: Vec<String> = self.linear.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "q {}", q.join(" "));
        for (l, u) in self.var_lower.iter().zip(&self.var_upper) {
            let _ = writeln!(out, "x {l:e} {u:e}");
        }
        for (i, row) in self.rows.iter().enumerate() {
            let entries: Vec<String> = row.iter().map(|(j, a)| format!("{j}:{a:e}")).collect();
            let _ = writeln!(
                out,
                "r {:e} {:e} {} {}",
                self.row_lower[i],
                self.row_upper[i],
                row.len(),
                entries.join(" ")
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    pub row_duals: Vec<T>,
    pub bound_duals: Vec<T>,
    pub status: QpStatus,
    pub iterations: usize,
}

impl<T: Scalar> QpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings<T> {
    pub max_iterations: usize,
    pub primal_tolerance: T,
    pub dual_tolerance: T,
    pub complementarity_tolerance: T,
    /// Multiple of the tolerances accepted when progress stalls or the
    /// Newton system can no longer be factored.
    pub acceptable_factor: T,
}

impl<T: Scalar> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            primal_tolerance: T::primal_tolerance(),
            dual_tolerance: T::dual_tolerance(),
            complementarity_tolerance: T::complementarity_tolerance(),
            acceptable_factor: T::lit(100.0),
        }
    }
}

/// Residual norms of the KKT conditions at a candidate primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KktResiduals<T> {
    /// ‖Px + q + Aᵀy + w‖∞
    pub stationarity: T,
    /// Largest bound violation, each scaled by `max(1, |bound|)`.
    pub primal: T,
    /// Largest multiplier with the wrong sign for its (finite) bound.
    pub dual: T,
    /// Largest `|multiplier × distance to its bound|`.
    pub complementarity: T,
}

impl<T: Scalar> KktResiduals<T> {
    /// Checks the residuals against the fixed certificate thresholds.
    pub fn certified(&self) -> bool {
        self.primal.to_f64_lossy() <= CERT_PRIMAL
            && self.stationarity.to_f64_lossy() <= CERT_DUAL
            && self.dual.to_f64_lossy() <= CERT_DUAL
            && self.complementarity.to_f64_lossy() <= CERT_DUAL
    }
}

/// Recomputes the optimality conditions of `s` for `q` from scratch.
pub fn kkt_residuals<T: Scalar>(q: &QpInstance<T>, s: &QpSolution<T>) -> KktResiduals<T> {
    let n = q.num_vars();
    assert_eq!(s.x.len(), n, "primal dimension");
    assert_eq!(s.row_duals.len(), q.num_rows(), "row dual dimension");
    assert_eq!(s.bound_duals.len(), n, "bound dual dimension");

    let mut grad = vec![T::zero(); n];
    q.quadratic.mul(&s.x, &mut grad);
    for (g, (c, w)) in grad.iter_mut().zip(q.linear.iter().zip(&s.bound_duals)) {
        *g += *c + *w;
    }
    for (row, y) in q.rows.iter().zip(&s.row_duals) {
        for (j, a) in row {
            grad[*j] += *a * *y;
        }
    }

    let mut primal = T::zero();
    let mut dual = T::zero();
    let mut comp = T::zero();
    let mut visit = |v: T, l: T, u: T, mult: T| {
        if l.is_finite() {
            primal = primal.max((l - v).max(T::zero()) / T::one().max(l.abs()));
        }
        if u.is_finite() {
            primal = primal.max((v - u).max(T::zero()) / T::one().max(u.abs()));
        }
        if mult > T::zero() {
            if u.is_finite() {
                if l != u {
                    comp = comp.max(mult * (u - v).abs());
                }
            } else {
                dual = dual.max(mult);
            }
        } else if mult < T::zero() {
            if l.is_finite() {
                if l != u {
                    comp = comp.max(-mult * (v - l).abs());
                }
            } else {
                dual = dual.max(-mult);
            }
        }
    };
    for i in 0..q.num_rows() {
        visit(q.row_activity(i, &s.x), q.row_lower[i], q.row_upper[i], s.row_duals[i]);
    }
    for j in 0..n {
        visit(s.x[j], q.var_lower[j], q.var_upper[j], s.bound_duals[j]);
    }

    KktResiduals {
        stationarity: norm_inf(&grad),
        primal,
        dual,
        complementarity: comp,
    }
}

/// Solves with default settings.
pub fn solve<T: Scalar>(
    q: &QpInstance<T>,
    warm_start: Option<&QpSolution<T>>,
) -> Result<QpSolution<T>, QpError> {
    solve_with(q, warm_start, &QpSettings::default())
}

pub fn solve_with<T: Scalar>(
    q: &QpInstance<T>,
    warm_start: Option<&QpSolution<T>>,
    settings: &QpSettings<T>,
) -> Result<QpSolution<T>, QpError> {
    q.validate()?;
    if let Some((relaxed, kept)) = relax_implied_rows(q, settings.primal_tolerance) {
        let sub = solve_with(&relaxed, warm_start, settings)?;
        let mut row_duals = vec![T::zero(); q.num_rows()];
        for (k, i) in kept.iter().enumerate() {
            row_duals[*i] = sub.row_duals[k];
        }
        return Ok(QpSolution { row_duals, ..sub });
    }
    let fixed: Vec<bool> = q
        .var_lower
        .iter()
        .zip(&q.var_upper)
        .map(|(l, u)| l == u)
        .collect();
    if !fixed.iter().any(|f| *f) {
        let mut ipm = Ipm::new(q);
        return Ok(ipm.run(warm_start, settings));
    }
    Ok(solve_without_fixed(q, &fixed, warm_start, settings))
}

/// Relative slack under which [`polish`] treats a bound as active.
pub const POLISH_ACTIVE_SLACK: f64 = 1e-5;

/// Guesses the active set from an interior-point solution and re-solves the
/// equality-constrained problem it defines exactly. The result replaces
/// `sol` only if it is certified and its residuals are no worse.
///
/// Barrier methods converge like `√μ` rather than `μ` on a bound that is
/// active with a zero multiplier, which leaves the primal point a few
/// digits short; the exact re-solve removes that error.
pub fn polish<T: Scalar>(q: &QpInstance<T>, sol: &QpSolution<T>) -> Option<QpSolution<T>> {
    let n = q.num_vars();
    let delta = T::lit(POLISH_ACTIVE_SLACK);
    let near = |v: T, b: T| b.is_finite() && (v - b).abs() <= delta * T::one().max(b.abs());
    let snap: Vec<Option<T>> = (0..n)
        .map(|j| {
            let (v, l, u) = (sol.x[j], q.var_lower[j], q.var_upper[j]);
            match (near(v, l), near(v, u)) {
                (true, true) => Some(if (v - l).abs() <= (u - v).abs() { l } else { u }),
                (true, false) => Some(l),
                (false, true) => Some(u),
                _ => None,
            }
        })
        .collect();
    let free: Vec<usize> = (0..n).filter(|j| snap[*j].is_none()).collect();
    let mut col = vec![usize::MAX; n];
    for (k, j) in free.iter().enumerate() {
        col[*j] = k;
    }
    let mut x: Vec<T> = (0..n).map(|j| snap[j].unwrap_or(sol.x[j])).collect();

    // Active rows with at least one free column, and their targets.
    let mut active = Vec::new();
    for i in 0..q.num_rows() {
        if !q.rows[i].iter().any(|(j, a)| col[*j] != usize::MAX && *a != T::zero()) {
            continue;
        }
        let act = q.row_activity(i, &sol.x);
        let (l, u) = (q.row_lower[i], q.row_upper[i]);
        let target = if l == u || near(act, l) && (act - l).abs() <= (u - act).abs() {
            l
        } else if near(act, u) {
            u
        } else {
            continue;
        };
        active.push((i, target));
    }

    let (nf, na) = (free.len(), active.len());
    let mut k = SquareMatrix::zeros(nf + na);
    for (a, ja) in free.iter().enumerate() {
        for (b, jb) in free.iter().enumerate() {
            k.set(a, b, q.quadratic.entry(*ja, *jb));
        }
    }
    for (r, (i, _)) in active.iter().enumerate() {
        for (j, a) in &q.rows[*i] {
            if col[*j] != usize::MAX {
                k.add(nf + r, col[*j], *a);
                k.add(col[*j], nf + r, *a);
            }
        }
    }
    let fixed_x: Vec<T> = (0..n).map(|j| if col[j] == usize::MAX { x[j] } else { T::zero() }).collect();
    let mut p_fixed = vec![T::zero(); n];
    q.quadratic.mul(&fixed_x, &mut p_fixed);
    let mut rhs = vec![T::zero(); nf + na];
    for (a, j) in free.iter().enumerate() {
        rhs[a] = -(q.linear[*j] + p_fixed[*j]);
    }
    for (r, (i, target)) in active.iter().enumerate() {
        rhs[nf + r] = *target - q.row_activity(*i, &fixed_x);
    }
    // A small negative diagonal keeps the system solvable when active rows
    // are dependent; refinement against the exact matrix removes its bias.
    let mut reg = k.clone();
    let eps = T::epsilon().sqrt() * T::lit(1e-2);
    for r in 0..na {
        reg.add(nf + r, nf + r, -eps);
    }
    let piv = reg.lu_in_place().ok()?;
    let mut z = rhs.clone();
    reg.lu_solve(&piv, &mut z);
    for _ in 0..REFINEMENT_STEPS {
        let kz = k.mul(&z);
        let mut res: Vec<T> = rhs.iter().zip(&kz).map(|(b, v)| *b - *v).collect();
        reg.lu_solve(&piv, &mut res);
        z.iter_mut().zip(&res).for_each(|(v, d)| *v += *d);
    }
    if !z.iter().all(|v| v.is_finite()) {
        return None;
    }

    for (a, j) in free.iter().enumerate() {
        x[*j] = z[a];
    }
    let mut row_duals = vec![T::zero(); q.num_rows()];
    for (r, (i, _)) in active.iter().enumerate() {
        row_duals[*i] = z[nf + r];
    }
    let mut grad = vec![T::zero(); n];
    q.quadratic.mul(&x, &mut grad);
    for (g, c) in grad.iter_mut().zip(&q.linear) {
        *g += *c;
    }
    for (row, y) in q.rows.iter().zip(&row_duals) {
        for (j, a) in row {
            grad[*j] += *a * *y;
        }
    }
    let bound_duals = (0..n)
        .map(|j| if col[j] == usize::MAX { -grad[j] } else { T::zero() })
        .collect();
    let polished = QpSolution {
        x,
        row_duals,
        bound_duals,
        status: QpStatus::Optimal,
        iterations: sol.iterations,
    };
    let (before, after) = (kkt_residuals(q, sol), kkt_residuals(q, &polished));
    let worst = |r: &KktResiduals<T>| r.primal.max(r.stationarity).max(r.dual).max(r.complementarity);
    (after.certified() && worst(&after) <= worst(&before)).then_some(polished)
}

/// Removes row sides that the variable box already enforces, returning the
/// reduced instance and the original index of each surviving row, or `None`
/// when nothing is implied. A side that is implied and active is always
/// carried by the bounds that imply it, so its multiplier can be zero.
/// Leaving such sides in makes the constraint gradients degenerate at the
/// optimum and stalls the barrier a few digits short of the true solution.
fn relax_implied_rows<T: Scalar>(q: &QpInstance<T>, tol: T) -> Option<(QpInstance<T>, Vec<usize>)> {
    let mut lower = q.row_lower.clone();
    let mut upper = q.row_upper.clone();
    let mut changed = false;
    for (i, row) in q.rows.iter().enumerate() {
        if lower[i] == upper[i] {
            continue;
        }
        let (mut lo_act, mut hi_act) = (T::zero(), T::zero());
        for (j, a) in row {
            let (p, r) = (*a * q.var_lower[*j], *a * q.var_upper[*j]);
            let (p, r) = if *a >= T::zero() { (p, r) } else { (r, p) };
            lo_act += if *a == T::zero() { T::zero() } else { p };
            hi_act += if *a == T::zero() { T::zero() } else { r };
        }
        if lower[i].is_finite() && lo_act.is_finite() && lower[i] <= lo_act + tol * (T::one() + lo_act.abs()) {
            lower[i] = T::neg_infinity();
            changed = true;
        }
        if upper[i].is_finite() && hi_act.is_finite() && upper[i] >= hi_act - tol * (T::one() + hi_act.abs()) {
            upper[i] = T::infinity();
            changed = true;
        }
    }
    if !changed {
        return None;
    }
    let mut r = QpInstance {
        rows: Vec::new(),
        row_lower: Vec::new(),
        row_upper: Vec::new(),
        ..q.clone()
    };
    let mut kept = Vec::new();
    for (i, row) in q.rows.iter().enumerate() {
        if lower[i].is_finite() || upper[i].is_finite() {
            kept.push(i);
            r.push_row(row.clone(), lower[i], upper[i]);
        }
    }
    Some((r, kept))
}

/// Substitutes variables with equal bounds, solves the remaining problem and
/// expands the result. Fixed variables leave no interior for the barrier.
fn solve_without_fixed<T: Scalar>(
    q: &QpInstance<T>,
    fixed: &[bool],
    warm_start: Option<&QpSolution<T>>,
    settings: &QpSettings<T>,
) -> QpSolution<T> {
    let n = q.num_vars();
    let free: Vec<usize> = (0..n).filter(|j| !fixed[*j]).collect();
    let mut new_index = vec![usize::MAX; n];
    for (k, j) in free.iter().enumerate() {
        new_index[*j] = k;
    }
    let x_fixed: Vec<T> = (0..n)
        .map(|j| if fixed[j] { q.var_lower[j] } else { T::zero() })
        .collect();
    let mut px_fixed = vec![T::zero(); n];
    q.quadratic.mul(&x_fixed, &mut px_fixed);

    let mut r = QpInstance::new(free.len());
    r.quadratic = match &q.quadratic {
        QuadraticCost::Diagonal(d) => QuadraticCost::Diagonal(free.iter().map(|j| d[*j]).collect()),
        QuadraticCost::Dense { .. } => {
            let m = free.len();
            let mut data = vec![T::zero(); m * m];
            for (a, ja) in free.iter().enumerate() {
                for (b, jb) in free.iter().enumerate() {
                    data[a * m + b] = q.quadratic.entry(*ja, *jb);
                }
            }
            QuadraticCost::Dense { n: m, data }
        }
    };
    r.linear = free.iter().map(|j| q.linear[*j] + px_fixed[*j]).collect();
    r.var_lower = free.iter().map(|j| q.var_lower[*j]).collect();
    r.var_upper = free.iter().map(|j| q.var_upper[*j]).collect();
    r.blocks = q.blocks.as_ref().map(|b| free.iter().map(|j| b[*j]).collect());
    let mut kept_rows = Vec::new();
    for (i, row) in q.rows.iter().enumerate() {
        let offset = row
            .iter()
            .filter(|(j, _)| fixed[*j])
            .fold(T::zero(), |acc, (j, a)| acc + *a * x_fixed[*j]);
        let reduced: SparseRow<T> = row
            .iter()
            .filter(|(j, _)| !fixed[*j])
            .map(|(j, a)| (new_index[*j], *a))
            .collect();
        let (lo, up) = (q.row_lower[i] - offset, q.row_upper[i] - offset);
        let tol = settings.primal_tolerance * (T::one() + lo.abs().min(up.abs()));
        if reduced.is_empty() && lo <= tol && up >= -tol {
            continue;
        }
        kept_rows.push(i);
        r.push_row(reduced, lo, up);
    }

    let warm = warm_start.filter(|w| w.x.len() == n).map(|w| QpSolution {
        x: free.iter().map(|j| w.x[*j]).collect(),
        row_duals: Vec::new(),
        bound_duals: Vec::new(),
        status: w.status,
        iterations: 0,
    });
    let sub = if free.is_empty() && r.num_rows() == 0 {
        QpSolution {
            x: Vec::new(),
            row_duals: Vec::new(),
            bound_duals: Vec::new(),
            status: QpStatus::Optimal,
            iterations: 0,
        }
    } else {
        Ipm::new(&r).run(warm.as_ref(), settings)
    };

    let mut x = x_fixed;
    for (k, j) in free.iter().enumerate() {
        x[*j] = sub.x[k];
    }
    let mut row_duals = vec![T::zero(); q.num_rows()];
    for (k, i) in kept_rows.iter().enumerate() {
        row_duals[*i] = sub.row_duals[k];
    }
    let mut bound_duals = vec![T::zero(); n];
    for (k, j) in free.iter().enumerate() {
        bound_duals[*j] = sub.bound_duals[k];
    }
    // Fixed variables absorb whatever gradient remains.
    let mut grad = vec![T::zero(); n];
    q.quadratic.mul(&x, &mut grad);
    for (g, c) in grad.iter_mut().zip(&q.linear) {
        *g += *c;
    }
    for (row, y) in q.rows.iter().zip(&row_duals) {
        for (j, a) in row {
            grad[*j] += *a * *y;
        }
    }
    for j in 0..n {
        if fixed[j] {
            bound_duals[j] = -grad[j];
        }
    }
    QpSolution {
        x,
        row_duals,
        bound_duals,
        status: sub.status,
        iterations: sub.iterations,
    }
}

// ---------------------------------------------------------------------------
// Interior-point internals

#[derive(Debug, Clone, Copy)]
enum Target {
    Row(usize),
    Var(usize),
}

/// One inequality `sign · (a x) ≤ h`.
#[derive(Debug, Clone, Copy)]
struct Side<T> {
    target: Target,
    sign: T,
    h: T,
}

struct Block {
    vars: Vec<usize>,
    /// Rows whose support lies entirely in this block (inequalities only).
    rows: Vec<usize>,
}

struct Structure {
    blocks: Vec<Block>,
    /// Block id and local index per variable.
    var_block: Vec<(usize, usize)>,
    coupling_rows: Vec<usize>,
    is_equality: Vec<bool>,
}

impl Structure {
    fn new<T: Scalar>(q: &QpInstance<T>) -> Self {
        let n = q.num_vars();
        let is_equality: Vec<bool> = q
            .row_lower
            .iter()
            .zip(&q.row_upper)
            .map(|(l, u)| l == u)
            .collect();

        let mut tags: Vec<usize> = q.blocks.clone().unwrap_or_else(|| vec![0; n]);
        if let QuadraticCost::Dense { n: dn, data } = &q.quadratic {
            let crosses = (0..*dn).any(|i| {
                (0..*dn).any(|j| tags[i] != tags[j] && data[i * dn + j] != T::zero())
            });
            if crosses {
                tags = vec![0; n];
            }
        }
        // Dense renumbering in order of first appearance keeps things deterministic.
        let mut ids: Vec<usize> = Vec::new();
        let mut var_block = Vec::with_capacity(n);
        let mut blocks: Vec<Block> = Vec::new();
        for (j, t) in tags.iter().enumerate() {
            let b = match ids.iter().position(|x| x == t) {
                Some(b) => b,
                None => {
                    ids.push(*t);
                    blocks.push(Block {
                        vars: Vec::new(),
                        rows: Vec::new(),
                    });
                    ids.len() - 1
                }
            };
            var_block.push((b, blocks[b].vars.len()));
            blocks[b].vars.push(j);
        }

        let mut coupling_rows = Vec::new();
        for (i, row) in q.rows.iter().enumerate() {
            if row.is_empty() && !is_equality[i] {
                continue;
            }
            let first = row.first().map(|(j, _)| var_block[*j].0);
            let single = first.is_some() && row.iter().all(|(j, _)| Some(var_block[*j].0) == first);
            if single && !is_equality[i] {
                blocks[first.unwrap()].rows.push(i);
            } else {
                coupling_rows.push(i);
            }
        }
        Self {
            blocks,
            var_block,
            coupling_rows,
            is_equality,
        }
    }
}

struct Ipm<'a, T> {
    q: &'a QpInstance<T>,
    st: Structure,
    sides: Vec<Side<T>>,
    eq_rows: Vec<usize>,
    factors: Vec<SquareMatrix<T>>,
    /// Columns `Hb⁻¹ cᵢ` for each coupling row, stored densely.
    coupling_cols: Vec<Vec<T>>,
    schur: SquareMatrix<T>,
    /// Side weights accumulated per row and per variable at the last factorisation.
    row_w: Vec<T>,
    var_w: Vec<T>,
    reg: T,
}

impl<'a, T: Scalar> Ipm<'a, T> {
    fn new(q: &'a QpInstance<T>) -> Self {
        let st = Structure::new(q);
        let mut sides = Vec::new();
        let mut eq_rows = Vec::new();
        for i in 0..q.num_rows() {
            if st.is_equality[i] {
                eq_rows.push(i);
                continue;
            }
            if q.row_upper[i].is_finite() {
                sides.push(Side {
                    target: Target::Row(i),
                    sign: T::one(),
                    h: q.row_upper[i],
                });
            }
            if q.row_lower[i].is_finite() {
                sides.push(Side {
                    target: Target::Row(i),
                    sign: -T::one(),
                    h: -q.row_lower[i],
                });
            }
        }
        for j in 0..q.num_vars() {
            if q.var_upper[j].is_finite() {
                sides.push(Side {
                    target: Target::Var(j),
                    sign: T::one(),
                    h: q.var_upper[j],
                });
            }
            if q.var_lower[j].is_finite() {
                sides.push(Side {
                    target: Target::Var(j),
                    sign: -T::one(),
                    h: -q.var_lower[j],
                });
            }
        }
        let factors = st
            .blocks
            .iter()
            .map(|b| SquareMatrix::zeros(b.vars.len()))
            .collect();
        let nc = st.coupling_rows.len();
        Self {
            q,
            st,
            sides,
            eq_rows,
            factors,
            coupling_cols: vec![Vec::new(); nc],
            schur: SquareMatrix::zeros(nc),
            row_w: vec![T::zero(); q.num_rows()],
            var_w: vec![T::zero(); q.num_vars()],
            reg: T::epsilon() * T::lit(1e4),
        }
    }

    fn activities(&self, v: &[T]) -> Vec<T> {
        (0..self.q.num_rows()).map(|i| self.q.row_activity(i, v)).collect()
    }

    /// `gⱼᵀ v` for every side given precomputed row activities.
    fn side_values(&self, v: &[T], act: &[T]) -> Vec<T> {
        self.sides
            .iter()
            .map(|s| match s.target {
                Target::Row(i) => s.sign * act[i],
                Target::Var(j) => s.sign * v[j],
            })
            .collect()
    }

    /// `out += Σⱼ gⱼ cⱼ`
    fn add_side_combination(&self, coef: &[T], out: &mut [T]) {
        let mut row_coef = vec![T::zero(); self.q.num_rows()];
        for (s, c) in self.sides.iter().zip(coef) {
            match s.target {
                Target::Row(i) => row_coef[i] += s.sign * *c,
                Target::Var(j) => out[j] += s.sign * *c,
            }
        }
        for (row, c) in self.q.rows.iter().zip(&row_coef) {
            if *c != T::zero() {
                for (j, a) in row {
                    out[*j] += *a * *c;
                }
            }
        }
    }

    fn run(&mut self, warm_start: Option<&QpSolution<T>>, set: &QpSettings<T>) -> QpSolution<T> {
        let q = self.q;
        let n = q.num_vars();
        let ms = self.sides.len();
        let me = self.eq_rows.len();

        let mut x: Vec<T> = match warm_start {
            Some(w) if w.x.len() == n && w.x.iter().all(|v| v.is_finite()) => w.x.clone(),
            _ => vec![T::zero(); n],
        };
        for j in 0..n {
            x[j] = x[j].max(q.var_lower[j]).min(q.var_upper[j]);
        }
        let act = self.activities(&x);
        let gx = self.side_values(&x, &act);
        let mut s: Vec<T> = self
            .sides
            .iter()
            .zip(&gx)
            .map(|(sd, g)| (sd.h - *g).max(T::one()))
            .collect();
        let mut z = vec![T::one(); ms];
        let mut y = vec![T::zero(); me];

        let mut status = QpStatus::MaxIterations;
        let mut iterations = 0;
        let mut px = vec![T::zero(); n];
        let mut best = (x.clone(), z.clone(), y.clone());
        let mut best_merit = T::infinity();
        let mut best_it = 0;

        for it in 0..=set.max_iterations {
            iterations = it;
            // Residuals.
            q.quadratic.mul(&x, &mut px);
            let mut rd: Vec<T> = px.iter().zip(&q.linear).map(|(a, b)| *a + *b).collect();
            self.add_side_combination(&z, &mut rd);
            for (k, i) in self.eq_rows.iter().enumerate() {
                for (j, a) in &q.rows[*i] {
                    rd[*j] += *a * y[k];
                }
            }
            let act = self.activities(&x);
            let gx = self.side_values(&x, &act);
            let rp: Vec<T> = (0..ms).map(|k| gx[k] + s[k] - self.sides[k].h).collect();
            let re: Vec<T> = self
                .eq_rows
                .iter()
                .map(|i| act[*i] - q.row_lower[*i])
                .collect();

            let primal_scaled = (0..ms)
                .map(|k| rp[k].abs() / (T::one() + self.sides[k].h.abs()))
                .chain(
                    self.eq_rows
                        .iter()
                        .zip(&re)
                        .map(|(i, r)| r.abs() / (T::one() + q.row_lower[*i].abs())),
                )
                .fold(T::zero(), T::max);
            let dual_res = norm_inf(&rd);
            let primal_ok = primal_scaled <= set.primal_tolerance;
            let dual_ok = dual_res <= set.dual_tolerance;
            let comp_max = s
                .iter()
                .zip(&z)
                .fold(T::zero(), |m, (a, b)| m.max(*a * *b));
            // Largest residual relative to its tolerance.
            let merit = (primal_scaled / set.primal_tolerance)
                .max(dual_res / set.dual_tolerance)
                .max(comp_max / set.complementarity_tolerance);
            if merit < best_merit {
                best_merit = merit;
                best_it = it;
                best = (x.clone(), z.clone(), y.clone());
            }
            log::trace!(
                "it {it}: rd {:e} rp {:e} comp {:e}",
                norm_inf(&rd),
                norm_inf(&rp),
                comp_max
            );
            if primal_ok && dual_ok && comp_max <= set.complementarity_tolerance {
                status = QpStatus::Optimal;
                break;
            }
            // Close to the boundary the Newton system becomes too ill
            // conditioned to make progress; stop at the best iterate once it
            // is acceptable and progress has stalled or reversed.
            let acceptable = best_merit <= set.acceptable_factor;
            let degraded = merit > T::lit(1e3) * best_merit || it >= best_it + 3;
            if acceptable && degraded {
                break;
            }
            if it == set.max_iterations {
                break;
            }
            if !rd.iter().chain(&rp).all(|v| v.is_finite()) {
                status = QpStatus::NumericalFailure;
                break;
            }

            let mu = if ms > 0 {
                s.iter().zip(&z).fold(T::zero(), |a, (si, zi)| a + *si * *zi) / T::from_usize(ms).unwrap()
            } else {
                T::zero()
            };
            let w: Vec<T> = z.iter().zip(&s).map(|(zi, si)| *zi / *si).collect();
            if self.factorize(&w).is_err() {
                status = QpStatus::NumericalFailure;
                break;
            }

            // Predictor.
            let rc_aff: Vec<T> = s.iter().zip(&z).map(|(a, b)| *a * *b).collect();
            let (dx_a, _dy_a, ds_a, dz_a) = self.newton(&rd, &rp, &re, &rc_aff, &s, &z);
            let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let mut sigma = T::zero();
            if ms > 0 {
                let mu_aff = (0..ms).fold(T::zero(), |a, k| {
                    a + (s[k] + alpha_aff * ds_a[k]) * (z[k] + alpha_aff * dz_a[k])
                }) / T::from_usize(ms).unwrap();
                let ratio = if mu > T::zero() { mu_aff / mu } else { T::zero() };
                sigma = ratio * ratio * ratio;
            }
            let _ = dx_a;

            // Corrector.
            let rc: Vec<T> = (0..ms)
                .map(|k| s[k] * z[k] + ds_a[k] * dz_a[k] - sigma * mu)
                .collect();
            let (dx, dy, ds, dz) = self.newton(&rd, &rp, &re, &rc, &s, &z);
            let alpha = (T::lit(0.99) * max_step(&s, &ds).min(max_step(&z, &dz))).min(T::one());

            for j in 0..n {
                x[j] += alpha * dx[j];
            }
            for k in 0..ms {
                s[k] += alpha * ds[k];
                z[k] += alpha * dz[k];
            }
            for k in 0..me {
                y[k] += alpha * dy[k];
            }
        }

        if status != QpStatus::Optimal {
            (x, z, y) = best;
            if best_merit <= set.acceptable_factor {
                status = QpStatus::Optimal;
            }
        }
        // Multipliers in the user's sign convention.
        let mut row_duals = vec![T::zero(); q.num_rows()];
        let mut bound_duals = vec![T::zero(); n];
        for (sd, zk) in self.sides.iter().zip(&z) {
            match sd.target {
                Target::Row(i) => row_duals[i] += sd.sign * *zk,
                Target::Var(j) => bound_duals[j] += sd.sign * *zk,
            }
        }
        for (k, i) in self.eq_rows.iter().enumerate() {
            row_duals[*i] = y[k];
        }
        QpSolution {
            x,
            row_duals,
            bound_duals,
            status,
            iterations,
        }
    }

    /// Builds and factors the block matrices and the Schur complement for
    /// side weights `w = z / s`.
    fn factorize(&mut self, w: &[T]) -> Result<(), ()> {
        let q = self.q;
        let mut row_w = vec![T::zero(); q.num_rows()];
        let mut var_w = vec![T::zero(); q.num_vars()];
        for (sd, wk) in self.sides.iter().zip(w) {
            match sd.target {
                Target::Row(i) => row_w[i] += *wk,
                Target::Var(j) => var_w[j] += *wk,
            }
        }
        let reg = self.reg;

        for (b, block) in self.st.blocks.iter().enumerate() {
            let h = &mut self.factors[b];
            h.fill_zero();
            for (li, gi) in block.vars.iter().enumerate() {
                match &q.quadratic {
                    QuadraticCost::Diagonal(d) => h.add(li, li, d[*gi]),
                    QuadraticCost::Dense { .. } => {
                        for (lj, gj) in block.vars.iter().enumerate().take(li + 1) {
                            h.add(li, lj, q.quadratic.entry(*gi, *gj));
                        }
                    }
                }
                h.add(li, li, var_w[*gi] + reg);
            }
            for i in &block.rows {
                let wi = row_w[*i];
                if wi == T::zero() {
                    continue;
                }
                let row = &q.rows[*i];
                for (ja, a) in row {
                    let la = self.st.var_block[*ja].1;
                    for (jb, bv) in row {
                        let lb = self.st.var_block[*jb].1;
                        if lb <= la {
                            h.add(la, lb, wi * *a * *bv);
                        }
                    }
                }
            }
            h.cholesky_in_place().map_err(|_| ())?;
        }

        let nc = self.st.coupling_rows.len();
        self.var_w = var_w;
        if nc == 0 {
            self.row_w = row_w;
            return Ok(());
        }
        let n = q.num_vars();
        for (c, i) in self.st.coupling_rows.iter().enumerate() {
            let mut col = vec![T::zero(); n];
            self.block_solve_sparse(&q.rows[*i], &mut col);
            self.coupling_cols[c] = col;
        }
        self.schur.fill_zero();
        for (a, ia) in self.st.coupling_rows.iter().enumerate() {
            for b in 0..=a {
                let col = &self.coupling_cols[b];
                let v = q.rows[*ia]
                    .iter()
                    .fold(T::zero(), |s, (j, coef)| s + *coef * col[*j]);
                self.schur.set(a, b, v);
            }
            let d = if self.st.is_equality[*ia] {
                reg
            } else {
                T::one() / row_w[*ia]
            };
            self.schur.add(a, a, d);
        }
        self.row_w = row_w;
        self.schur.cholesky_in_place().map_err(|_| ())
    }

    /// Applies the factored matrix: returns `(M dx + A_eqᵀ dy, A_eq dx − reg dy)`.
    fn apply_reduced(&self, dx: &[T], dy: &[T]) -> (Vec<T>, Vec<T>) {
        let q = self.q;
        let mut out = vec![T::zero(); dx.len()];
        q.quadratic.mul(dx, &mut out);
        for j in 0..dx.len() {
            out[j] += (self.var_w[j] + self.reg) * dx[j];
        }
        for (i, row) in q.rows.iter().enumerate() {
            let w = self.row_w[i];
            if w != T::zero() {
                let a = q.row_activity(i, dx) * w;
                for (j, c) in row {
                    out[*j] += *c * a;
                }
            }
        }
        let mut eq = Vec::with_capacity(self.eq_rows.len());
        for (k, i) in self.eq_rows.iter().enumerate() {
            for (j, c) in &q.rows[*i] {
                out[*j] += *c * dy[k];
            }
            eq.push(q.row_activity(*i, dx) - self.reg * dy[k]);
        }
        (out, eq)
    }

    /// Solves `Hb x = r` where `r` is sparse, touching only the blocks in its support.
    fn block_solve_sparse(&self, r: &SparseRow<T>, out: &mut [T]) {
        let mut touched: Vec<usize> = r.iter().map(|(j, _)| self.st.var_block[*j].0).collect();
        touched.sort_unstable();
        touched.dedup();
        for b in touched {
            let block = &self.st.blocks[b];
            let mut rhs = vec![T::zero(); block.vars.len()];
            for (j, a) in r {
                let (bj, lj) = self.st.var_block[*j];
                if bj == b {
                    rhs[lj] += *a;
                }
            }
            self.factors[b].cholesky_solve(&mut rhs);
            for (lj, gj) in block.vars.iter().enumerate() {
                out[*gj] = rhs[lj];
            }
        }
    }

    fn block_solve_dense(&self, r: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); r.len()];
        for (b, block) in self.st.blocks.iter().enumerate() {
            let mut rhs: Vec<T> = block.vars.iter().map(|j| r[*j]).collect();
            self.factors[b].cholesky_solve(&mut rhs);
            for (lj, gj) in block.vars.iter().enumerate() {
                out[*gj] = rhs[lj];
            }
        }
        out
    }

    /// Solves `Hb dx + Cᵀλ = rx`, `C dx − Dλ = rc` with the current factors.
    fn kkt_solve(&self, rx: &[T], rc: &[T]) -> (Vec<T>, Vec<T>) {
        let t = self.block_solve_dense(rx);
        let nc = self.st.coupling_rows.len();
        if nc == 0 {
            return (t, Vec::new());
        }
        let mut lam: Vec<T> = self
            .st
            .coupling_rows
            .iter()
            .zip(rc)
            .map(|(i, r)| self.q.row_activity(*i, &t) - *r)
            .collect();
        self.schur.cholesky_solve(&mut lam);
        let mut dx = t;
        for (c, l) in lam.iter().enumerate() {
            if *l != T::zero() {
                for (d, m) in dx.iter_mut().zip(&self.coupling_cols[c]) {
                    *d -= *m * *l;
                }
            }
        }
        (dx, lam)
    }

    /// Solves the reduced system for right-hand sides `rx` (variables) and
    /// `req` (equality rows).
    fn reduced_solve(&self, rx: &[T], req: &[T]) -> (Vec<T>, Vec<T>) {
        let mut eq_pos = 0;
        let rc_coupling: Vec<T> = self
            .st
            .coupling_rows
            .iter()
            .map(|i| {
                if self.st.is_equality[*i] {
                    let k = self.eq_rows[eq_pos..]
                        .iter()
                        .position(|e| e == i)
                        .map(|p| p + eq_pos)
                        .expect("equality row indexed");
                    eq_pos = k;
                    req[k]
                } else {
                    T::zero()
                }
            })
            .collect();
        let (dx, lam) = self.kkt_solve(rx, &rc_coupling);
        let dy: Vec<T> = self
            .eq_rows
            .iter()
            .map(|i| {
                let c = self
                    .st
                    .coupling_rows
                    .iter()
                    .position(|r| r == i)
                    .expect("equality rows are coupling rows");
                lam[c]
            })
            .collect();
        (dx, dy)
    }

    #[allow(clippy::type_complexity)]
    fn newton(
        &self,
        rd: &[T],
        rp: &[T],
        re: &[T],
        rc: &[T],
        s: &[T],
        z: &[T],
    ) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
        let ms = self.sides.len();
        let coef: Vec<T> = (0..ms).map(|k| (-rc[k] + z[k] * rp[k]) / s[k]).collect();
        let mut rhs: Vec<T> = rd.iter().map(|v| -*v).collect();
        let mut tmp = vec![T::zero(); rhs.len()];
        self.add_side_combination(&coef, &mut tmp);
        for (r, t) in rhs.iter_mut().zip(&tmp) {
            *r -= *t;
        }
        let neg_re: Vec<T> = re.iter().map(|v| -*v).collect();
        let (mut dx, mut dy) = self.reduced_solve(&rhs, &neg_re);
        // Iterative refinement against the factored operator; the block
        // elimination loses accuracy once many constraints are nearly active.
        let scale = norm_inf(&rhs).max(norm_inf(&neg_re)).max(T::one());
        for _ in 0..REFINEMENT_STEPS {
            let (mx, me) = self.apply_reduced(&dx, &dy);
            let res_x: Vec<T> = rhs.iter().zip(&mx).map(|(a, b)| *a - *b).collect();
            let res_e: Vec<T> = neg_re.iter().zip(&me).map(|(a, b)| *a - *b).collect();
            if norm_inf(&res_x).max(norm_inf(&res_e)) <= T::epsilon() * scale {
                break;
            }
            let (cx, cy) = self.reduced_solve(&res_x, &res_e);
            dx.iter_mut().zip(&cx).for_each(|(a, b)| *a += *b);
            dy.iter_mut().zip(&cy).for_each(|(a, b)| *a += *b);
        }
        let act = self.activities(&dx);
        let gdx = self.side_values(&dx, &act);
        let ds: Vec<T> = (0..ms).map(|k| -rp[k] - gdx[k]).collect();
        let dz: Vec<T> = (0..ms).map(|k| (-rc[k] - z[k] * ds[k]) / s[k]).collect();
        (dx, dy, ds, dz)
    }
}

fn max_step<T: Scalar>(v: &[T], dv: &[T]) -> T {
    v.iter().zip(dv).fold(T::one(), |a, (vi, di)| {
        if *di < T::zero() {
            a.min(-*vi / *di)
        } else {
            a
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounded_1d() -> QpInstance<f64> {
        let mut q = QpInstance::new(1);
        q.quadratic = QuadraticCost::Diagonal(vec![2.0]);
        q.var_lower = vec![1.0];
        q.var_upper = vec![2.0];
        q
    }

    #[test]
    fn active_lower_bound() {
        let q = bounded_1d();
        let s = solve(&q, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.x[0] - 1.0).abs() < 1e-9);
        assert!(kkt_residuals(&q, &s).certified());
    }

    #[test]
    fn hand_built_certificate_and_perturbation() {
        let q = bounded_1d();
        let exact = QpSolution {
            x: vec![1.0],
            row_duals: vec![],
            bound_duals: vec![-2.0],
            status: QpStatus::Optimal,
            iterations: 0,
        };
        let r = kkt_residuals(&q, &exact);
        assert!(r.stationarity <= 1e-12 && r.primal <= 1e-12);
        assert!(r.dual <= 1e-12 && r.complementarity <= 1e-12);

        let mut off = exact.clone();
        off.x[0] = 1.1;
        let r = kkt_residuals(&q, &off);
        assert!((r.stationarity - 0.2).abs() < 1e-12);
        assert!(!r.certified());
    }

    #[test]
    fn symmetric_plane_constraint() {
        // min (x−10)² + (y−10)² s.t. x + y ≤ 9, x, y ≥ 0
        let mut q = QpInstance::new(2);
        q.quadratic = QuadraticCost::Diagonal(vec![2.0, 2.0]);
        q.linear = vec![-20.0, -20.0];
        q.var_lower = vec![0.0, 0.0];
        q.push_row(vec![(0, 1.0), (1, 1.0)], f64::NEG_INFINITY, 9.0);
        let s = solve(&q, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.x[0] - 4.5).abs() < 1e-8 && (s.x[1] - 4.5).abs() < 1e-8);
        assert!(kkt_residuals(&q, &s).certified());
    }

    #[test]
    fn equality_rows_and_dense_cost() {
        // min x² + xy + y² − x  s.t. x + y = 1
        let mut q = QpInstance::new(2);
        q.quadratic = QuadraticCost::Dense {
            n: 2,
            data: vec![2.0, 1.0, 1.0, 2.0],
        };
        q.linear = vec![-1.0, 0.0];
        q.push_row(vec![(0, 1.0), (1, 1.0)], 1.0, 1.0);
        let s = solve(&q, None).unwrap();
        assert!(s.is_optimal(), "{:?}", s.status);
        // With y = 1 − x the cost is (x − 1)², so x = 1, y = 0.
        assert!((s.x[0] - 1.0f64).abs() < 1e-8, "{:?}", s.x);
        assert!(s.x[1].abs() < 1e-8f64);
        assert!(kkt_residuals(&q, &s).certified());
    }

    #[test]
    fn blocks_with_coupling_row_match_unblocked() {
        let mut q = QpInstance::new(4);
        q.quadratic = QuadraticCost::Diagonal(vec![2.0, 1.0, 3.0, 0.5]);
        q.linear = vec![-4.0, -3.0, -1.0, -2.0];
        q.var_lower = vec![0.0; 4];
        q.var_upper = vec![5.0; 4];
        q.push_row(vec![(0, 1.0), (1, 1.0)], f64::NEG_INFINITY, 2.0);
        q.push_row(vec![(2, 1.0), (3, -1.0)], -1.0, 1.0);
        q.push_row(vec![(0, 1.0), (3, 1.0)], f64::NEG_INFINITY, 3.0);
        let plain = solve(&q, None).unwrap();
        let mut blocked = q.clone();
        blocked.blocks = Some(vec![0, 0, 1, 1]);
        let b = solve(&blocked, None).unwrap();
        assert!(plain.is_optimal() && b.is_optimal());
        for (u, v) in plain.x.iter().zip(&b.x) {
            assert!((u - v).abs() < 1e-8);
        }
        assert!(kkt_residuals(&blocked, &b).certified());
    }

    #[test]
    fn single_precision_solves() {
        let mut q = QpInstance::<f32>::new(2);
        q.quadratic = QuadraticCost::Diagonal(vec![2.0, 2.0]);
        q.linear = vec![-20.0, -20.0];
        q.var_lower = vec![0.0, 0.0];
        q.push_row(vec![(0, 1.0), (1, 1.0)], f32::NEG_INFINITY, 9.0);
        let s = solve(&q, None).unwrap();
        assert!(s.is_optimal());
        assert!((s.x[0] - 4.5).abs() < 1e-3);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut q = QpInstance::<f64>::new(2);
        q.rows.push(vec![(3, 1.0)]);
        q.row_lower.push(0.0);
        q.row_upper.push(1.0);
        assert!(matches!(q.validate(), Err(QpError::Dimension(_))));
    }

    #[test]
    fn dump_lists_every_row() {
        let q = bounded_1d();
        let d = q.dump();
        assert!(d.starts_with("qp 1 0 diag"));
        assert!(d.contains("x 1e0 2e0"));
    }

    /// `min x² + y²` over `[0, 1]²` with `x + y ≤ 2` (implied by the box)
    /// and `x ≥ 0.25`.
    fn box_with_implied_row() -> QpInstance<f64> {
        let mut q = QpInstance::new(2);
        q.quadratic = QuadraticCost::Diagonal(vec![2.0, 2.0]);
        q.var_lower = vec![0.0, 0.0];
        q.var_upper = vec![1.0, 1.0];
        q.push_row(vec![(0, 1.0), (1, 1.0)], f64::NEG_INFINITY, 2.0);
        q.push_row(vec![(0, 1.0)], 0.25, f64::INFINITY);
        q
    }

    #[test]
    fn rows_implied_by_the_box_are_dropped_with_zero_duals() {
        let q = box_with_implied_row();
        let (r, kept) = relax_implied_rows(&q, 1e-11).unwrap();
        assert_eq!(kept, vec![1]);
        assert_eq!(r.num_rows(), 1);
        let s = solve(&q, None).unwrap();
        assert_eq!(s.row_duals.len(), 2);
        assert_eq!(s.row_duals[0], 0.0);
        assert!((s.x[0] - 0.25).abs() < 1e-8);
        assert!(kkt_residuals(&q, &s).certified());
    }

    #[test]
    fn nothing_is_relaxed_when_rows_bind() {
        let mut q = box_with_implied_row();
        q.row_upper[0] = 1.5;
        q.row_lower[1] = 0.1;
        q.row_upper[1] = 0.5;
        assert!(relax_implied_rows(&q, 1e-11).is_none());
    }

    #[test]
    fn polish_lands_exactly_on_a_bound_with_zero_multiplier() {
        // The unconstrained minimum sits on the lower bound, so the barrier
        // approaches it only like √μ.
        let mut q = QpInstance::new(2);
        q.quadratic = QuadraticCost::Diagonal(vec![2.0, 2.0]);
        q.linear = vec![0.0, -2.0];
        q.var_lower = vec![0.0, 0.0];
        q.push_row(vec![(0, 1.0), (1, 1.0)], f64::NEG_INFINITY, 0.5);
        let s = solve(&q, None).unwrap();
        let p = polish(&q, &s).expect("polish succeeds");
        assert_eq!(p.x[0], 0.0);
        assert!((p.x[1] - 0.5).abs() < 1e-15);
        assert!((p.row_duals[0] - 1.0).abs() < 1e-12);
        let r = kkt_residuals(&q, &p);
        assert!(r.certified());
        assert!(r.complementarity <= kkt_residuals(&q, &s).complementarity);
    }

    #[test]
    fn polish_declines_a_wrong_guess() {
        // A point near a bound that is not optimal: the re-solve would need
        // a multiplier of the wrong sign.
        let mut q = QpInstance::new(1);
        q.quadratic = QuadraticCost::Diagonal(vec![2.0]);
        q.linear = vec![-2.0];
        q.var_lower = vec![0.0];
        let s = QpSolution {
            x: vec![1e-7],
            row_duals: vec![],
            bound_duals: vec![0.0],
            status: QpStatus::Optimal,
            iterations: 0,
        };
        assert!(polish(&q, &s).is_none());
    }
}
