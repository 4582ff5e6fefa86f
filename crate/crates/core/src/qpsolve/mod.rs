//! Dense primal active-set solver for small convex QPs.
//!
//! Solves `min ½ xᵀQx + cᵀx  s.t.  A x <= b,  lb <= x <= ub` with `Q`
//! symmetric positive semidefinite. A phase-1 LP (minimising the largest
//! constraint violation) produces the starting point; infeasibility is reported,
//! never clamped away.

mod sed;

pub use sed::{assemble_sed_qp, solve_sed, SedLayout, SedQpOptions, SedSolution};

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.q.shape() != (n, n)
            || self.a_ineq.ncols() != n && self.a_ineq.nrows() > 0
            || self.a_ineq.nrows() != self.b_ineq.len()
            || self.lb.len() != n
            || self.ub.len() != n
        {
            return Err(Error::Dimension(format!(
                "qp with n = {n}: q {:?}, a_ineq {:?}, b_ineq {}, lb {}, ub {}",
                self.q.shape(),
                self.a_ineq.shape(),
                self.b_ineq.len(),
                self.lb.len(),
                self.ub.len()
            )));
        }
        let asym = (&self.q - self.q.transpose()).amax();
        if asym > 1e-10 * (1.0 + self.q.amax()) {
            return Err(Error::InvalidArgument(format!(
                "q is not symmetric (max asymmetry {asym:e})"
            )));
        }
        if self.lb.iter().zip(self.ub.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("lb > ub for some variable".into()));
        }
        Ok(())
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v = 0.0_f64;
        if self.a_ineq.nrows() > 0 {
            let ax = &self.a_ineq * x;
            for (ai, bi) in ax.iter().zip(self.b_ineq.iter()) {
                v = v.max(ai - bi);
            }
        }
        for i in 0..x.len() {
            v = v.max(self.lb[i] - x[i]).max(x[i] - self.ub[i]);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    Unbounded,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIter => "max_iter",
            QpStatus::Unbounded => "unbounded",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tol: f64,
    /// Iteration cap per phase; `None` means `10 * (n + m)`.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-8,
            max_iter: None,
        }
    }
}

/// Scaled KKT residuals at a returned point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Multipliers for `a_ineq` rows (>= 0).
    pub mult_ineq: DVector<f64>,
    /// Multipliers for the lower and upper bounds (>= 0).
    pub mult_lb: DVector<f64>,
    pub mult_ub: DVector<f64>,
    pub kkt: KktResiduals,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Ineq(usize),
    Lower(usize),
    Upper(usize),
}

/// Every constraint as a row `a·x <= b`, box rows included.
struct Rows {
    a: Vec<DVector<f64>>,
    b: Vec<f64>,
    kind: Vec<RowKind>,
}

impl Rows {
    fn from_problem(p: &QpProblem) -> Self {
        let n = p.n();
        let mut rows = Rows {
            a: Vec::new(),
            b: Vec::new(),
            kind: Vec::new(),
        };
        for i in 0..p.a_ineq.nrows() {
            rows.a.push(p.a_ineq.row(i).transpose());
            rows.b.push(p.b_ineq[i]);
            rows.kind.push(RowKind::Ineq(i));
        }
        for j in 0..n {
            if p.lb[j].is_finite() {
                rows.a.push(unit(n, j, -1.0));
                rows.b.push(-p.lb[j]);
                rows.kind.push(RowKind::Lower(j));
            }
            if p.ub[j].is_finite() {
                rows.a.push(unit(n, j, 1.0));
                rows.b.push(p.ub[j]);
                rows.kind.push(RowKind::Upper(j));
            }
        }
        rows
    }

    fn len(&self) -> usize {
        self.a.len()
    }
}

fn unit(n: usize, j: usize, v: f64) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[j] = v;
    e
}

enum Outcome {
    Optimal {
        x: DVector<f64>,
        working: Vec<usize>,
        mult: Vec<f64>,
        iterations: usize,
    },
    MaxIter(DVector<f64>, usize),
    Unbounded(DVector<f64>, usize),
}

/// Solves a convex QP. Returns `Err` only for malformed problems; solver
/// outcomes (infeasible, iteration cap) are carried in the status.
pub fn solve(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    p.validate()?;
    let n = p.n();
    let rows = Rows::from_problem(p);
    let m = rows.len();
    let cap = opts.max_iter.unwrap_or(10 * (n + m)).max(1);
    let tol = opts.tol;

    let x0 = match phase_one(p, &rows, tol, cap) {
        PhaseOne::Feasible(x) => x,
        PhaseOne::Infeasible(x) => return Ok(failed(p, x, QpStatus::Infeasible, 0)),
        PhaseOne::MaxIter(x) => return Ok(failed(p, x, QpStatus::MaxIter, cap)),
    };

    match active_set(&p.q, &p.c, &rows, x0, tol, cap) {
        Outcome::Optimal {
            x,
            working,
            mult,
            iterations,
        } => {
            let mut mult_ineq = DVector::zeros(p.a_ineq.nrows());
            let mut mult_lb = DVector::zeros(n);
            let mut mult_ub = DVector::zeros(n);
            for (&r, &mu) in working.iter().zip(mult.iter()) {
                let mu = mu.max(0.0);
                match rows.kind[r] {
                    RowKind::Ineq(i) => mult_ineq[i] = mu,
                    RowKind::Lower(j) => mult_lb[j] = mu,
                    RowKind::Upper(j) => mult_ub[j] = mu,
                }
            }
            let kkt = kkt_residuals(p, &x, &mult_ineq, &mult_lb, &mult_ub);
            Ok(QpSolution {
                objective: p.objective(&x),
                x,
                status: QpStatus::Optimal,
                iterations,
                mult_ineq,
                mult_lb,
                mult_ub,
                kkt,
            })
        }
        Outcome::MaxIter(x, it) => Ok(failed(p, x, QpStatus::MaxIter, it)),
        Outcome::Unbounded(x, it) => Ok(failed(p, x, QpStatus::Unbounded, it)),
    }
}

fn failed(p: &QpProblem, x: DVector<f64>, status: QpStatus, iterations: usize) -> QpSolution {
    let n = p.n();
    QpSolution {
        objective: p.objective(&x),
        x,
        status,
        iterations,
        mult_ineq: DVector::zeros(p.a_ineq.nrows()),
        mult_lb: DVector::zeros(n),
        mult_ub: DVector::zeros(n),
        kkt: KktResiduals::default(),
    }
}

/// KKT residuals scaled by the problem data magnitude.
pub fn kkt_residuals(
    p: &QpProblem,
    x: &DVector<f64>,
    mult_ineq: &DVector<f64>,
    mult_lb: &DVector<f64>,
    mult_ub: &DVector<f64>,
) -> KktResiduals {
    let qx = &p.q * x;
    let mut grad = &qx + &p.c;
    if p.a_ineq.nrows() > 0 {
        grad += p.a_ineq.transpose() * mult_ineq;
    }
    grad -= mult_lb;
    grad += mult_ub;
    let scale = 1.0 + p.c.amax().max(qx.amax());
    let stationarity = grad.amax() / scale;

    let bscale = 1.0 + p.b_ineq.amax().max(x.amax());
    let primal = p.max_violation(x) / bscale;
    let dual = mult_ineq
        .iter()
        .chain(mult_lb.iter())
        .chain(mult_ub.iter())
        .fold(0.0_f64, |acc, &m| acc.max(-m))
        / scale;

    let mut comp = 0.0_f64;
    if p.a_ineq.nrows() > 0 {
        let slack = &p.b_ineq - &p.a_ineq * x;
        for (s, m) in slack.iter().zip(mult_ineq.iter()) {
            comp = comp.max((s * m).abs());
        }
    }
    for j in 0..x.len() {
        if p.lb[j].is_finite() {
            comp = comp.max(((x[j] - p.lb[j]) * mult_lb[j]).abs());
        }
        if p.ub[j].is_finite() {
            comp = comp.max(((p.ub[j] - x[j]) * mult_ub[j]).abs());
        }
    }
    KktResiduals {
        stationarity,
        primal,
        dual,
        complementarity: comp / (scale * bscale),
    }
}

enum PhaseOne {
    Feasible(DVector<f64>),
    Infeasible(DVector<f64>),
    MaxIter(DVector<f64>),
}

fn phase_one(p: &QpProblem, rows: &Rows, tol: f64, cap: usize) -> PhaseOne {
    let n = p.n();
    let x0 = DVector::from_fn(n, |j, _| 0.0_f64.clamp(p.lb[j], p.ub[j]));
    let viol = rows
        .a
        .iter()
        .zip(rows.b.iter())
        .fold(0.0_f64, |acc, (a, b)| acc.max(a.dot(&x0) - b));
    let feas_tol = tol * (1.0 + rows.b.iter().fold(0.0_f64, |acc, b| acc.max(b.abs())));
    if viol <= 0.0 {
        return PhaseOne::Feasible(x0);
    }

    // min t  s.t.  a·x - t <= b (general rows), box rows unchanged, t >= 0
    let mut ext = Rows {
        a: Vec::with_capacity(rows.len() + 1),
        b: rows.b.clone(),
        kind: rows.kind.clone(),
    };
    for (a, kind) in rows.a.iter().zip(rows.kind.iter()) {
        let mut row = a.clone().resize_vertically(n + 1, 0.0);
        if matches!(kind, RowKind::Ineq(_)) {
            row[n] = -1.0;
        }
        ext.a.push(row);
    }
    ext.a.push(unit(n + 1, n, -1.0));
    ext.b.push(0.0);
    ext.kind.push(RowKind::Lower(n));

    let start = x0.resize_vertically(n + 1, viol);
    let q = DMatrix::zeros(n + 1, n + 1);
    let c = unit(n + 1, n, 1.0);
    match active_set(&q, &c, &ext, start, tol, cap) {
        Outcome::Optimal { x, .. } => {
            let t = x[n];
            let xs = x.rows(0, n).into_owned();
            if t <= feas_tol {
                PhaseOne::Feasible(xs)
            } else {
                PhaseOne::Infeasible(xs)
            }
        }
        Outcome::MaxIter(x, _) | Outcome::Unbounded(x, _) => {
            PhaseOne::MaxIter(x.rows(0, n).into_owned())
        }
    }
}

/// Orthonormal basis of the null space of the working-set rows.
fn null_space(rows: &Rows, working: &[usize], n: usize) -> DMatrix<f64> {
    if working.is_empty() {
        return DMatrix::identity(n, n);
    }
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for &r in working {
        let a = &rows.a[r];
        let a = a / a.norm();
        gram += &a * a.transpose();
    }
    let eig = SymmetricEigen::new(gram);
    let cols: Vec<_> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() < 1e-10)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Least-squares multipliers for `Σ μ_r a_r = -g` over the working set.
fn multipliers(rows: &Rows, working: &[usize], g: &DVector<f64>) -> Vec<f64> {
    if working.is_empty() {
        return Vec::new();
    }
    let cols: Vec<_> = working.iter().map(|&r| rows.a[r].clone()).collect();
    let at = DMatrix::from_columns(&cols);
    let svd = at.svd(true, true);
    let rhs = -g;
    svd.solve(&rhs, 1e-13)
        .map(|v| v.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; working.len()])
}

fn active_set(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    rows: &Rows,
    mut x: DVector<f64>,
    tol: f64,
    cap: usize,
) -> Outcome {
    let n = x.len();
    let mut working: Vec<usize> = Vec::new();
    let qscale = 1.0 + q.amax();
    let cscale = 1.0 + c.amax();

    for iter in 0..cap {
        let g = q * &x + c;
        let z = null_space(rows, &working, n);
        let (d, ray) = if z.ncols() == 0 {
            (DVector::zeros(n), false)
        } else {
            let h = z.transpose() * q * &z;
            let gz = z.transpose() * &g;
            let eig = SymmetricEigen::new(h);
            let curv_tol = 1e-11 * qscale;
            let mut flat = DVector::zeros(z.ncols());
            let mut newton = DVector::zeros(z.ncols());
            for i in 0..z.ncols() {
                let v = eig.eigenvectors.column(i);
                let proj = v.dot(&gz);
                if eig.eigenvalues[i] > curv_tol {
                    newton -= v * (proj / eig.eigenvalues[i]);
                } else {
                    flat -= v * proj;
                }
            }
            if flat.amax() > 1e-12 * (cscale + g.amax()) {
                // zero-curvature descent: objective falls linearly until a row blocks
                (&z * flat, true)
            } else {
                (&z * newton, false)
            }
        };

        let step_scale = 1.0 + x.amax();
        if !ray && d.amax() <= 1e-13 * step_scale {
            let mult = multipliers(rows, &working, &g);
            let gscale = cscale + g.amax();
            let worst = mult
                .iter()
                .enumerate()
                .filter(|(_, &m)| m < -tol * gscale)
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)));
            match worst {
                None => {
                    return Outcome::Optimal {
                        x,
                        working,
                        mult,
                        iterations: iter,
                    }
                }
                Some((k, _)) => {
                    working.remove(k);
                    continue;
                }
            }
        }

        let mut alpha = if ray { f64::INFINITY } else { 1.0 };
        let mut blocking = None;
        for r in 0..rows.len() {
            if working.contains(&r) {
                continue;
            }
            let ad = rows.a[r].dot(&d);
            if ad <= 1e-14 * rows.a[r].amax() * d.amax() {
                continue;
            }
            let slack = (rows.b[r] - rows.a[r].dot(&x)).max(0.0);
            let t = slack / ad;
            if t < alpha {
                alpha = t;
                blocking = Some(r);
            }
        }
        if !alpha.is_finite() {
            return Outcome::Unbounded(x, iter);
        }
        x += &d * alpha;
        if let Some(r) = blocking {
            working.push(r);
        }
    }
    Outcome::MaxIter(x, cap)
}
