//! The three comparison cases and the global linear-regression surrogate.
//!
//! * Case 1: CLEO, learning the DR response under RES uncertainty.
//! * Case 2: deterministic ED, DR delivered as accepted, no RES deviations.
//! * Case 3: stochastic ED with RES uncertainty, DR delivered as accepted.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cleo::{self, fit_ols, IterRecord, LlrModel, Termination};
use crate::config::Config;
use crate::dispatch::{
    expected_cost, uniform_in, violation_rate, AffineResponse, Decision, DispatchEvaluation,
    DispatchModel, DispatchOptions, DrResponse, ViolationReport,
};
use crate::error::{Error, Result};
use crate::netmodel::PowerSystem;
use crate::oracle::{ConsumerModel, ResponsePair};
use crate::qpsolve::{solve_sed, QpOptions, QpStatus, SedQpOptions};
use crate::rng;
use crate::scenario::{sample_scenarios, ResScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    Case1,
    Case2,
    Case3,
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::Case1 => "case1",
            CaseId::Case2 => "case2",
            CaseId::Case3 => "case3",
        })
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" | "1" => Ok(CaseId::Case1),
            "case2" | "2" => Ok(CaseId::Case2),
            "case3" | "3" => Ok(CaseId::Case3),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario {other:?}"
            ))),
        }
    }
}

/// Fitted surrogate coefficients as plain rows for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedResponse {
    pub a1: Vec<Vec<f64>>,
    pub a0: Vec<f64>,
}

impl From<&LlrModel> for FittedResponse {
    fn from(m: &LlrModel) -> Self {
        FittedResponse {
            a1: m
                .a1_hat
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            a0: m.a0_hat.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: CaseId,
    pub seed: u64,
    pub base_mva: f64,
    /// Expected cost under the case's own response model ($/h).
    pub objective: f64,
    /// Accepted DR per DRP (pu).
    pub dr_commitment: Vec<f64>,
    pub dr_commitment_total: f64,
    /// Base-point generation per generator (pu).
    pub dispatch: Vec<f64>,
    pub evaluation: DispatchEvaluation,
    /// Sample-average cost with the true consumer response and sampled RES.
    pub realized: DispatchEvaluation,
    /// Constraint violations over sampled RES deviations, true mean response.
    pub violations: ViolationReport,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub oracle_calls: usize,
    pub fitted_response: Option<FittedResponse>,
    pub history: Vec<IterRecord>,
}

fn sed_solution(
    model: &DispatchModel,
    resp: &AffineResponse,
    include_variance: bool,
    stage: &str,
) -> Result<Decision> {
    let sol = solve_sed(
        model,
        resp,
        &SedQpOptions::unrestricted(include_variance),
        &QpOptions::default(),
    )?;
    if sol.qp.status != QpStatus::Optimal {
        return Err(Error::Solver {
            stage: stage.into(),
            status: sol.qp.status,
        });
    }
    Ok(sol.decision)
}

fn with_options(model: &DispatchModel, analytic: bool) -> DispatchModel {
    let mut m = model.clone();
    m.options.analytic_expectation = analytic;
    m
}

/// Runs one case. `oracle` is the ground truth; Case 1 queries it, the other
/// cases only use it for the realized-cost evaluation.
pub fn run_case(
    sys: &PowerSystem,
    oracle: &ConsumerModel,
    case: CaseId,
    config: &Config,
    seed: u64,
) -> Result<CaseResult> {
    let options: DispatchOptions = config.dispatch;
    let uncertainty = config.uncertainty_model(sys, seed)?;
    let stochastic = DispatchModel::with_uncertainty(sys, &uncertainty, options)?;
    let samples = options.samples.max(1);
    let scenarios = sample_scenarios(&uncertainty, samples)?;
    let eval_seed = rng::substream_seed(seed, rng::STREAM_EVALUATION);
    let nd = sys.n_drp();
    let identity = AffineResponse::identity(nd);

    let mut iterations = 0;
    let mut termination = None;
    let mut oracle_calls = 0;
    let mut fitted = None;
    let mut history = Vec::new();
    let (decision, evaluation) = match case {
        CaseId::Case1 => {
            let mut learner_oracle = oracle.clone();
            let out = cleo::run(&stochastic, &mut learner_oracle, &config.cleo, seed)?;
            iterations = out.history.len();
            termination = Some(out.termination);
            oracle_calls = out.oracle_calls;
            fitted = Some(FittedResponse::from(&out.model));
            history = out.history;
            let eval = expected_cost(
                &out.decision,
                &stochastic,
                &out.model,
                &scenarios,
                eval_seed,
            )?;
            (out.decision, eval)
        }
        CaseId::Case2 => {
            let det = DispatchModel::deterministic(sys, options)?;
            let d = sed_solution(&det, &identity, false, "deterministic ED")?;
            let eval = expected_cost(
                &d,
                &det,
                &identity,
                &[ResScenario::zero(sys.n_res())],
                eval_seed,
            )?;
            (d, eval)
        }
        CaseId::Case3 => {
            let d = sed_solution(&stochastic, &identity, true, "stochastic ED")?;
            let eval = expected_cost(&d, &stochastic, &identity, &scenarios, eval_seed)?;
            (d, eval)
        }
    };

    let truth = with_options(&stochastic, false);
    let realized = expected_cost(&decision, &truth, oracle, &scenarios, eval_seed)?;
    let violations = violation_rate(
        &decision,
        &stochastic,
        &oracle.psi(&decision.p_rd),
        &scenarios,
    )?;
    Ok(CaseResult {
        case,
        seed,
        base_mva: sys.base_mva,
        objective: evaluation.expected_cost,
        dr_commitment: decision.p_rd.iter().copied().collect(),
        dr_commitment_total: decision.p_rd.sum(),
        dispatch: decision.p_g_base.iter().copied().collect(),
        evaluation,
        realized,
        violations,
        iterations,
        termination,
        oracle_calls,
        fitted_response: fitted,
        history,
    })
}

/// One global OLS fit over every pair: no locality window, no trust region.
pub fn global_regression_baseline(data: &[ResponsePair]) -> Result<LlrModel> {
    let n = data.first().map_or(0, |d| d.p_rd.len());
    if n == 0 {
        return Err(Error::RankDeficient { rank: 0, needed: 1 });
    }
    let mean = data.iter().fold(DVector::zeros(n), |acc, d| acc + &d.p_rd) / data.len() as f64;
    let refs: Vec<&ResponsePair> = data.iter().collect();
    fit_ols(&refs, &mean)
}

/// Result of the one-shot regression surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub decision: Decision,
    pub objective: f64,
    pub model: LlrModel,
}

/// Queries the oracle at `queries` points drawn uniformly over `[0, dr_max]`,
/// fits one global regression and solves the dispatch once with it.
pub fn regression_case(
    sys: &PowerSystem,
    oracle: &ConsumerModel,
    config: &Config,
    seed: u64,
    queries: usize,
) -> Result<RegressionResult> {
    let uncertainty = config.uncertainty_model(sys, seed)?;
    let model = DispatchModel::with_uncertainty(sys, &uncertainty, config.dispatch)?;
    let mut rng = rng::stream(seed, rng::STREAM_EXPLORATION);
    let points: Vec<DVector<f64>> = (0..queries.max(1))
        .map(|_| {
            DVector::from_fn(sys.n_drp(), |j, _| {
                uniform_in(&mut rng, 0.0, model.dr_max[j])
            })
        })
        .collect();
    let mut oracle = oracle.clone();
    let data = oracle.collect(&points)?;
    let fit = global_regression_baseline(&data)?;
    let decision = sed_solution(&model, &fit.mean_map(), true, "regression surrogate ED")?;
    let objective = model
        .analytic_cost(&decision, &fit.mean_map())
        .expected_cost;
    Ok(RegressionResult {
        decision,
        objective,
        model: fit,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len();
        if n == 0 {
            return Spread {
                n,
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Spread { n, mean, std }
    }
}

/// Objective spread across seeds for CLEO and the global regression, with the
/// mean wall-clock time per run in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateComparison {
    pub cleo: Spread,
    pub regression: Spread,
    pub cleo_ms: f64,
    pub regression_ms: f64,
}

pub fn compare_surrogates(
    sys: &PowerSystem,
    config: &Config,
    seeds: &[u64],
    regression_queries: usize,
) -> Result<SurrogateComparison> {
    let uncertainty = config.uncertainty_model(sys, 0)?;
    let model = DispatchModel::with_uncertainty(sys, &uncertainty, config.dispatch)?;
    let mut cleo_obj = Vec::new();
    let mut reg_obj = Vec::new();
    let mut cleo_time = 0.0;
    let mut reg_time = 0.0;
    for &seed in seeds {
        let oracle = config.oracle(sys, &model.dr_max, seed)?;
        let t = std::time::Instant::now();
        let mut o = oracle.clone();
        let out = cleo::run(&model, &mut o, &config.cleo, seed)?;
        cleo_time += t.elapsed().as_secs_f64() * 1e3;
        cleo_obj.push(out.evaluation.expected_cost);
        let t = std::time::Instant::now();
        let reg = regression_case(sys, &oracle, config, seed, regression_queries)?;
        reg_time += t.elapsed().as_secs_f64() * 1e3;
        reg_obj.push(reg.objective);
    }
    let k = seeds.len().max(1) as f64;
    Ok(SurrogateComparison {
        cleo: Spread::of(&cleo_obj),
        regression: Spread::of(&reg_obj),
        cleo_ms: cleo_time / k,
        regression_ms: reg_time / k,
    })
}
