//! Coupled learning-enabled optimization (CLEO).
//!
//! Each iteration queries the consumer oracle around the current commitments,
//! fits a local linear regression (LLR) of delivered on accepted DR, solves
//! the dispatch QP with the surrogate inside an ∞-norm trust region, refits
//! with fresh data at the trial point and accepts or rejects the step on the
//! ratio of estimated to predicted decrease.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispatch::{
    uniform_in, AffineResponse, Decision, DispatchEvaluation, DispatchModel, DrResponse,
};
use crate::error::{Error, Result};
use crate::oracle::{ConsumerModel, ResponsePair};
use crate::qpsolve::{solve_sed, QpOptions, QpStatus, SedQpOptions, SedSolution};
use crate::rng;

/// Fitted affine surrogate plus the empirical residual sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlrModel {
    /// `N_DRP x N_DRP`; prediction is `a1_hatᵀ p + a0_hat`.
    pub a1_hat: DMatrix<f64>,
    pub a0_hat: DVector<f64>,
    pub residuals: Vec<DVector<f64>>,
}

impl LlrModel {
    pub fn affine(&self) -> AffineResponse {
        AffineResponse {
            a1: self.a1_hat.clone(),
            a0: self.a0_hat.clone(),
        }
    }

    pub fn predict(&self, p: &DVector<f64>) -> DVector<f64> {
        self.a1_hat.tr_mul(p) + &self.a0_hat
    }

    /// Residual standard deviation per DRP (0 when the fit interpolates).
    pub fn residual_std(&self) -> DVector<f64> {
        let n = self.a0_hat.len();
        let dof = self.residuals.len().saturating_sub(n + 1);
        if dof == 0 {
            return DVector::zeros(n);
        }
        let mut ss = DVector::zeros(n);
        for e in &self.residuals {
            ss += e.component_mul(e);
        }
        (ss / dof as f64).map(f64::sqrt)
    }
}

/// `(Â1)ᵀ p + Â0 + ε`, with `ε` a stored residual or zero.
pub fn surrogate(m: &LlrModel, p: &DVector<f64>, eps_draw: &DVector<f64>) -> DVector<f64> {
    m.predict(p) + eps_draw
}

impl DrResponse for LlrModel {
    fn mean_map(&self) -> AffineResponse {
        self.affine()
    }

    fn draw(&self, p_rd: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        if self.residuals.is_empty() {
            return self.predict(p_rd);
        }
        let k = rng.random_range(0..self.residuals.len());
        surrogate(self, p_rd, &self.residuals[k])
    }
}

/// Ordinary least squares of delivered on accepted DR with intercept.
///
/// Regressors are centered at `origin` and column-scaled before an SVD solve;
/// a relative singular-value cutoff detects rank deficiency.
pub fn fit_ols(data: &[&ResponsePair], origin: &DVector<f64>) -> Result<LlrModel> {
    let n = origin.len();
    let needed = n + 1;
    if data.len() < needed {
        return Err(Error::RankDeficient {
            rank: data.len().min(needed),
            needed,
        });
    }
    if data
        .iter()
        .any(|d| d.p_rd.len() != n || d.p_rd_enu.len() != n)
    {
        return Err(Error::Dimension(
            "response pairs do not match the regression dimension".into(),
        ));
    }
    let rows = data.len();
    let mut x = DMatrix::from_fn(rows, needed, |r, c| {
        if c == 0 {
            1.0
        } else {
            data[r].p_rd[c - 1] - origin[c - 1]
        }
    });
    let scale = DVector::from_fn(needed, |c, _| {
        let norm = x.column(c).norm() / (rows as f64).sqrt();
        if norm > 0.0 {
            norm
        } else {
            1.0
        }
    });
    for c in 0..needed {
        let s = scale[c];
        x.column_mut(c).scale_mut(1.0 / s);
    }
    let y = DMatrix::from_fn(rows, n, |r, j| data[r].p_rd_enu[j]);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    if rank < needed {
        return Err(Error::RankDeficient { rank, needed });
    }
    let beta = svd
        .solve(&y, cutoff)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    // beta row c: coefficient of scaled column c, per output
    let mut a1 = DMatrix::zeros(n, n);
    let mut a0 = DVector::zeros(n);
    for j in 0..n {
        let mut intercept = beta[(0, j)] / scale[0];
        for i in 0..n {
            let slope = beta[(i + 1, j)] / scale[i + 1];
            a1[(i, j)] = slope;
            intercept -= slope * origin[i];
        }
        a0[j] = intercept;
    }
    let residuals = data
        .iter()
        .map(|d| &d.p_rd_enu - a1.tr_mul(&d.p_rd) - &a0)
        .collect();
    Ok(LlrModel {
        a1_hat: a1,
        a0_hat: a0,
        residuals,
    })
}

/// Local fit on pairs with `‖p - center‖∞ <= window · radius`, falling back to
/// the most recent `N_DRP + 5` pairs when fewer than `N_DRP + 1` qualify.
pub fn fit_llr(
    data: &[ResponsePair],
    center: &DVector<f64>,
    radius: f64,
    window: f64,
) -> Result<LlrModel> {
    let n = center.len();
    let reach = window * radius;
    let local: Vec<&ResponsePair> = data
        .iter()
        .filter(|d| (&d.p_rd - center).amax() <= reach)
        .collect();
    if local.len() > n {
        if let Ok(m) = fit_ols(&local, center) {
            return Ok(m);
        }
    }
    let recent: Vec<&ResponsePair> = data.iter().rev().take(n + 5).rev().collect();
    fit_ols(&recent, center)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleoConfig {
    /// Initial radius; default `0.25 · max(dr_max)`.
    pub delta0: Option<f64>,
    pub delta_min: f64,
    /// Largest radius; default `max(dr_max)`.
    pub delta_max: Option<f64>,
    pub eta1: f64,
    pub gamma_shrink: f64,
    pub gamma_grow: f64,
    pub max_iters: usize,
    /// Oracle queries per exploration batch; default `max(3, N_DRP + 1)`.
    pub batch: Option<usize>,
    /// Stationarity: stop when the predicted decrease is below `tol · (1 + |f|)`.
    pub tol: f64,
    /// LLR locality window as a multiple of the radius.
    pub window: f64,
    /// Sufficient-decrease constant.
    pub kappa: f64,
}

impl Default for CleoConfig {
    fn default() -> Self {
        CleoConfig {
            delta0: None,
            delta_min: 1e-6,
            delta_max: None,
            eta1: 0.1,
            gamma_shrink: 0.5,
            gamma_grow: 2.0,
            max_iters: 500,
            batch: None,
            tol: 1e-6,
            window: 2.0,
            kappa: 1e-4,
        }
    }
}

/// Config with the data-dependent defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedConfig {
    pub delta0: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub eta1: f64,
    pub gamma_shrink: f64,
    pub gamma_grow: f64,
    pub max_iters: usize,
    pub batch: usize,
    pub tol: f64,
    pub window: f64,
    pub kappa: f64,
}

impl CleoConfig {
    pub fn resolve(&self, dr_max: &DVector<f64>) -> Result<ResolvedConfig> {
        let cap = dr_max.iter().fold(0.0_f64, |a, b| a.max(*b));
        let r = ResolvedConfig {
            delta0: self.delta0.unwrap_or(0.25 * cap),
            delta_min: self.delta_min,
            delta_max: self.delta_max.unwrap_or(cap),
            eta1: self.eta1,
            gamma_shrink: self.gamma_shrink,
            gamma_grow: self.gamma_grow,
            max_iters: self.max_iters,
            batch: self.batch.unwrap_or(3.max(dr_max.len() + 1)),
            tol: self.tol,
            window: self.window,
            kappa: self.kappa,
        };
        if !(0.0 < r.eta1 && r.eta1 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eta1 = {} not in (0, 1)",
                r.eta1
            )));
        }
        if !(0.0 < r.gamma_shrink && r.gamma_shrink < 1.0) || !(r.gamma_grow > 1.0) {
            return Err(Error::InvalidArgument(
                "need 0 < gamma_shrink < 1 < gamma_grow".into(),
            ));
        }
        if !(0.0 < r.delta_min && r.delta_min < r.delta0 && r.delta0 < r.delta_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < delta_min < delta0 < delta_max, got {} / {} / {}",
                r.delta_min, r.delta0, r.delta_max
            )));
        }
        if r.batch == 0 || r.window <= 0.0 || r.tol < 0.0 {
            return Err(Error::InvalidArgument(
                "batch, window and tol must be positive".into(),
            ));
        }
        Ok(r)
    }
}

/// One row of the convergence history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    /// Estimated objective at the iteration's center.
    pub objective: f64,
    /// Running best estimate over accepted centers.
    pub best_objective: f64,
    /// Radius used in this iteration.
    pub radius: f64,
    pub rho: Option<f64>,
    pub accepted: bool,
    pub step_norm: f64,
    pub predicted_decrease: f64,
}

#[derive(Debug, Clone)]
pub struct TrustRegionState {
    pub center: Decision,
    pub radius: f64,
    pub dataset: Vec<ResponsePair>,
    pub iter: usize,
    pub history: Vec<IterRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stationary,
    RadiusCollapsed,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct CleoOutcome {
    pub decision: Decision,
    pub evaluation: DispatchEvaluation,
    pub model: LlrModel,
    pub history: Vec<IterRecord>,
    pub termination: Termination,
    pub oracle_calls: usize,
}

/// Candidate step from the trust-region subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemStep {
    pub step: DVector<f64>,
    pub trial: Decision,
    /// Surrogate value at the center with generation re-optimised.
    pub f_center: f64,
    pub f_trial: f64,
    /// False when the ball excludes every feasible point.
    pub feasible: bool,
    /// Decrease achieved along the steepest-descent (Cauchy) path.
    pub cauchy_decrease: f64,
}

impl SubproblemStep {
    pub fn predicted_decrease(&self) -> f64 {
        self.f_center - self.f_trial
    }
}

fn qp_options() -> QpOptions {
    QpOptions::default()
}

fn pinned_value(
    model: &DispatchModel,
    resp: &AffineResponse,
    p_rd: &DVector<f64>,
) -> Result<Option<SedSolution>> {
    let sol = solve_sed(
        model,
        resp,
        &SedQpOptions::ball(p_rd.clone(), 0.0, true),
        &qp_options(),
    )?;
    match sol.qp.status {
        QpStatus::Optimal => Ok(Some(sol)),
        QpStatus::Infeasible => Ok(None),
        status => Err(Error::Solver {
            stage: "surrogate value at fixed commitments".into(),
            status,
        }),
    }
}

/// Surrogate dispatch cost at fixed commitments with generation re-optimised;
/// `None` when no generation schedule is feasible.
pub fn surrogate_value(
    model: &DispatchModel,
    m: &LlrModel,
    p_rd: &DVector<f64>,
) -> Result<Option<(f64, Decision)>> {
    Ok(pinned_value(model, &m.affine(), p_rd)?.map(|s| (s.objective, s.decision)))
}

/// Minimises the surrogate dispatch cost over `‖s‖∞ <= radius`.
pub fn solve_subproblem(
    center: &Decision,
    radius: f64,
    m: &LlrModel,
    model: &DispatchModel,
) -> Result<SubproblemStep> {
    let resp = m.affine();
    let nd = center.p_rd.len();
    let pinned = pinned_value(model, &resp, &center.p_rd)?;
    let f_center = pinned.as_ref().map_or(f64::INFINITY, |s| s.objective);

    let sol = solve_sed(
        model,
        &resp,
        &SedQpOptions::ball(center.p_rd.clone(), radius, true),
        &qp_options(),
    )?;
    match sol.qp.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            return Ok(SubproblemStep {
                step: DVector::zeros(nd),
                trial: center.clone(),
                f_center,
                f_trial: f_center,
                feasible: false,
                cauchy_decrease: 0.0,
            })
        }
        status => {
            return Err(Error::Solver {
                stage: "trust-region subproblem".into(),
                status,
            })
        }
    }
    let step = &sol.decision.p_rd - &center.p_rd;
    let cauchy_decrease = match &pinned {
        Some(p) => cauchy_decrease(model, &resp, center, radius, p)?,
        None => 0.0,
    };
    Ok(SubproblemStep {
        step,
        trial: sol.decision,
        f_center,
        f_trial: sol.objective,
        feasible: true,
        cauchy_decrease,
    })
}

/// Decrease along the ∞-norm steepest-descent direction of the surrogate value
/// function, with backtracking from the ball boundary.
fn cauchy_decrease(
    model: &DispatchModel,
    resp: &AffineResponse,
    center: &Decision,
    radius: f64,
    pinned: &SedSolution,
) -> Result<f64> {
    let ng = model.sys.n_gen();
    let nd = center.p_rd.len();
    // dV/dp = μ_lb - μ_ub on the pinned DR block
    let grad = DVector::from_fn(nd, |j, _| {
        pinned.qp.mult_lb[ng + j] - pinned.qp.mult_ub[ng + j]
    });
    if grad.amax() == 0.0 {
        return Ok(0.0);
    }
    let dir = grad.map(|g| -g.signum() * radius);
    let mut t = 1.0;
    for _ in 0..12 {
        let p = (&center.p_rd + &dir * t).zip_map(&model.dr_max, |v, cap| v.clamp(0.0, cap));
        if let Some(s) = pinned_value(model, resp, &p)? {
            let dec = pinned.objective - s.objective;
            if dec > 0.0 {
                return Ok(dec);
            }
        }
        t *= 0.5;
    }
    Ok(0.0)
}

/// `ρ = (u_k - u_{k+1/2}) / (f_k(p) - f_k(p + s))`; `None` when the predicted
/// decrease is not positive.
pub fn estimate_ratio(u_center: f64, u_trial: f64, f_center: f64, f_trial: f64) -> Option<f64> {
    let pred = f_center - f_trial;
    if pred > 0.0 && pred.is_finite() {
        Some((u_center - u_trial) / pred)
    } else {
        None
    }
}

fn explore(
    oracle: &mut ConsumerModel,
    rng: &mut ChaCha8Rng,
    around: &DVector<f64>,
    radius: f64,
    dr_max: &DVector<f64>,
    count: usize,
) -> Result<Vec<ResponsePair>> {
    let points: Vec<DVector<f64>> = (0..count)
        .map(|_| {
            DVector::from_fn(around.len(), |j, _| {
                let lo = (around[j] - radius).max(0.0);
                let hi = (around[j] + radius).min(dr_max[j]);
                uniform_in(rng, lo, hi)
            })
        })
        .collect();
    oracle.collect(&points)
}

/// Deterministic ED warm start with DR pinned at zero (or at `fallback` when
/// zero DR is infeasible).
pub fn warm_start(model: &DispatchModel, fallback: &DVector<f64>) -> Result<Decision> {
    let nd = model.sys.n_drp();
    let ident = AffineResponse::identity(nd);
    for p in [DVector::zeros(nd), fallback.clone()] {
        if let Some(s) = pinned_value(model, &ident, &p)? {
            return Ok(s.decision);
        }
    }
    Err(Error::Solver {
        stage: "warm start".into(),
        status: QpStatus::Infeasible,
    })
}

/// Runs CLEO against `oracle`. Exploration randomness comes from the
/// `exploration` stream of `seed`.
pub fn run(
    model: &DispatchModel,
    oracle: &mut ConsumerModel,
    config: &CleoConfig,
    seed: u64,
) -> Result<CleoOutcome> {
    let nd = model.sys.n_drp();
    if oracle.n_drp() != nd {
        return Err(Error::Dimension(format!(
            "oracle has {} drps, system has {nd}",
            oracle.n_drp()
        )));
    }
    let cfg = config.resolve(&model.dr_max)?;
    let mut rng = rng::stream(seed, rng::STREAM_EXPLORATION);
    let start_p = &model.dr_max * 0.5;
    let warm = warm_start(model, &start_p)?;
    let mut state = TrustRegionState {
        center: Decision::new(warm.p_g_base, start_p),
        radius: cfg.delta0,
        dataset: Vec::new(),
        iter: 0,
        history: Vec::new(),
    };
    let first = explore(
        oracle,
        &mut rng,
        &state.center.p_rd,
        state.radius,
        &model.dr_max,
        cfg.batch.max(nd + 1),
    )?;
    state.dataset.extend(first);

    let mut best = f64::INFINITY;
    let mut termination = Termination::MaxIters;
    let mut model_k = fit_llr(&state.dataset, &state.center.p_rd, state.radius, cfg.window)?;

    while state.iter < cfg.max_iters {
        let k = state.iter;
        state.iter += 1;
        if k > 0 {
            let fresh = explore(
                oracle,
                &mut rng,
                &state.center.p_rd,
                state.radius,
                &model.dr_max,
                cfg.batch,
            )?;
            state.dataset.extend(fresh);
            model_k = fit_llr(&state.dataset, &state.center.p_rd, state.radius, cfg.window)?;
        }
        let sub = solve_subproblem(&state.center, state.radius, &model_k, model)?;
        if best.is_infinite() && sub.f_center.is_finite() {
            best = sub.f_center;
        }
        let mut record = IterRecord {
            iter: k,
            objective: sub.f_center,
            best_objective: best,
            radius: state.radius,
            rho: None,
            accepted: false,
            step_norm: sub.step.amax(),
            predicted_decrease: sub.predicted_decrease(),
        };

        if !sub.feasible {
            state.radius *= cfg.gamma_shrink;
        } else if sub.f_center.is_finite()
            && sub.predicted_decrease() <= cfg.tol * (1.0 + sub.f_center.abs())
        {
            state.history.push(record);
            termination = Termination::Stationary;
            break;
        } else if sub.f_center.is_finite()
            && sub.predicted_decrease()
                < cfg.kappa * state.radius.min(sub.cauchy_decrease) * (1.0 - 1e-12)
        {
            state.radius *= cfg.gamma_shrink;
        } else {
            let fresh = explore(
                oracle,
                &mut rng,
                &sub.trial.p_rd,
                state.radius,
                &model.dr_max,
                cfg.batch,
            )?;
            state.dataset.extend(fresh);
            let model_half = fit_llr(&state.dataset, &sub.trial.p_rd, state.radius, cfg.window)?;
            let u_trial = surrogate_value(model, &model_half, &sub.trial.p_rd)?;
            let rho = match (&u_trial, sub.f_center.is_finite()) {
                (Some((u, _)), true) => estimate_ratio(sub.f_center, *u, sub.f_center, sub.f_trial),
                _ => None,
            };
            record.rho = rho;
            // an infeasible center is left for any feasible trial point
            let accept = match (&u_trial, rho) {
                (Some(_), Some(r)) => r >= cfg.eta1,
                (Some(_), None) => sub.f_center.is_infinite(),
                (None, _) => false,
            };
            if accept {
                let (u, decision) = u_trial.expect("accepted trial has a value");
                state.center = decision;
                state.radius = (state.radius * cfg.gamma_grow).min(cfg.delta_max);
                best = best.min(u);
                record.accepted = true;
                record.best_objective = best;
            } else {
                state.radius *= cfg.gamma_shrink;
            }
        }
        state.history.push(record);
        if state.radius < cfg.delta_min {
            termination = Termination::RadiusCollapsed;
            break;
        }
    }

    // final surrogate at the returned center
    let final_model =
        fit_llr(&state.dataset, &state.center.p_rd, state.radius, cfg.window).unwrap_or(model_k);
    let decision = match surrogate_value(model, &final_model, &state.center.p_rd)? {
        Some((_, d)) => d,
        None => state.center.clone(),
    };
    let mut evaluation = model.analytic_cost(&decision, &final_model.affine());
    evaluation.constraint_violations = crate::dispatch::check_constraints(
        &decision,
        model,
        &final_model.predict(&decision.p_rd),
        &crate::scenario::ResScenario::zero(model.sys.n_res()),
        crate::dispatch::FEAS_TOL,
    )?;
    Ok(CleoOutcome {
        decision,
        evaluation,
        model: final_model,
        history: state.history,
        termination,
        oracle_calls: state.dataset.len(),
    })
}
