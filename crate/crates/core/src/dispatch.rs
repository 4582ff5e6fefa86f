//! Dispatch cost model and constraint set, parameterised by a DR-response model.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{self, Drp, Network, PowerSystem};
use crate::rng;
use crate::scenario::{self, ResScenario, UncertaintyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub p_g_base: DVector<f64>,
    pub p_rd: DVector<f64>,
}

impl Decision {
    pub fn new(p_g_base: DVector<f64>, p_rd: DVector<f64>) -> Self {
        Decision { p_g_base, p_rd }
    }

    pub fn is_valid(&self) -> bool {
        self.p_g_base
            .iter()
            .chain(self.p_rd.iter())
            .all(|v| v.is_finite())
            && self.p_rd.iter().all(|v| *v >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ConstraintId {
    Adequacy,
    LineFlow(usize),
    GenMin(usize),
    GenMax(usize),
    DrMin(usize),
    DrMax(usize),
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintId::Adequacy => write!(f, "energy adequacy"),
            ConstraintId::LineFlow(l) => write!(f, "flow limit on line {l}"),
            ConstraintId::GenMin(i) => write!(f, "lower limit of generator {i}"),
            ConstraintId::GenMax(i) => write!(f, "upper limit of generator {i}"),
            ConstraintId::DrMin(j) => write!(f, "nonnegative DR at drp {j}"),
            ConstraintId::DrMax(j) => write!(f, "DR ceiling at drp {j}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintId,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchEvaluation {
    pub expected_cost: f64,
    pub gen_cost: f64,
    pub variance_cost: f64,
    pub dr_cost: f64,
    pub constraint_violations: Vec<Violation>,
}

/// Affine DR response `r = A1ᵀ p + A0`, used for the mean map of any model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineResponse {
    pub a1: DMatrix<f64>,
    pub a0: DVector<f64>,
}

impl AffineResponse {
    /// Realized DR equals accepted DR.
    pub fn identity(n: usize) -> Self {
        AffineResponse {
            a1: DMatrix::identity(n, n),
            a0: DVector::zeros(n),
        }
    }

    pub fn predict(&self, p_rd: &DVector<f64>) -> DVector<f64> {
        self.a1.tr_mul(p_rd) + &self.a0
    }

    pub fn dim(&self) -> usize {
        self.a0.len()
    }
}

/// A model of how consumers deliver on accepted DR commitments.
pub trait DrResponse: Sync {
    /// Mean response as an affine map.
    fn mean_map(&self) -> AffineResponse;

    /// One realization for accepted commitments `p_rd`.
    fn draw(&self, p_rd: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64>;
}

impl DrResponse for AffineResponse {
    fn mean_map(&self) -> AffineResponse {
        self.clone()
    }

    fn draw(&self, p_rd: &DVector<f64>, _rng: &mut ChaCha8Rng) -> DVector<f64> {
        self.predict(p_rd)
    }
}

/// Which DR quantity enters the line-flow constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowDrBasis {
    /// Accepted commitments.
    #[default]
    Accepted,
    /// Mean realized response.
    Realized,
}

pub fn participation_factors(sys: &PowerSystem) -> Result<DVector<f64>> {
    if let Some((i, g)) = sys
        .generators
        .iter()
        .enumerate()
        .find(|(_, g)| !(g.a > 0.0))
    {
        return Err(Error::InvalidArgument(format!(
            "generator {i} has a = {} <= 0",
            g.a
        )));
    }
    let inv: DVector<f64> =
        DVector::from_iterator(sys.n_gen(), sys.generators.iter().map(|g| 1.0 / g.a));
    let total = inv.sum();
    Ok(inv / total)
}

/// `P^G_i = base_i - α_i Σζ`.
pub fn recourse_generation(
    d: &Decision,
    alpha: &DVector<f64>,
    zeta: &ResScenario,
) -> Result<DVector<f64>> {
    if alpha.len() != d.p_g_base.len() {
        return Err(Error::Dimension(format!(
            "alpha has {} entries for {} generators",
            alpha.len(),
            d.p_g_base.len()
        )));
    }
    Ok(&d.p_g_base - alpha * zeta.total())
}

pub fn generation_cost(p_g: &DVector<f64>, sys: &PowerSystem) -> f64 {
    sys.generators
        .iter()
        .zip(p_g.iter())
        .map(|(g, p)| g.a * p * p + g.b * p)
        .sum()
}

/// DR ceiling from a linear aggregated demand curve.
pub fn dr_max(drp: &Drp) -> Result<f64> {
    if !(drp.pi_max > drp.pi_rr) {
        return Err(Error::InvalidArgument(format!(
            "pi_max ({}) must exceed pi_rr ({})",
            drp.pi_max, drp.pi_rr
        )));
    }
    Ok(drp
        .p_base
        .min(drp.pi_s / (drp.pi_max - drp.pi_rr) * drp.p_base))
}

/// Pairwise summation; the result depends only on the order of `v`.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatchOptions {
    pub adequacy_margin: f64,
    pub analytic_expectation: bool,
    pub samples: usize,
    pub flow_dr_basis: FlowDrBasis,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        DispatchOptions {
            adequacy_margin: 0.0,
            analytic_expectation: true,
            samples: 1000,
            flow_dr_basis: FlowDrBasis::Accepted,
        }
    }
}

/// A system with everything the cost and constraint evaluations need.
#[derive(Debug, Clone)]
pub struct DispatchModel {
    pub sys: PowerSystem,
    pub net: Network,
    pub alpha: DVector<f64>,
    pub lambda: DMatrix<f64>,
    pub a_prime: DVector<f64>,
    pub dr_max: DVector<f64>,
    pub loads: DVector<f64>,
    pub res_nominal: DVector<f64>,
    pub options: DispatchOptions,
}

impl DispatchModel {
    pub fn new(sys: &PowerSystem, lambda: DMatrix<f64>, options: DispatchOptions) -> Result<Self> {
        let net = Network::new(sys)?;
        let alpha = participation_factors(sys)?;
        let a_prime = scenario::variance_cost_coeffs(sys, &lambda)?;
        let dr_max = sys.drps.iter().map(dr_max).collect::<Result<Vec<_>>>()?;
        Ok(DispatchModel {
            net,
            alpha,
            lambda,
            a_prime,
            dr_max: DVector::from_vec(dr_max),
            loads: netmodel::load_vector(sys),
            res_nominal: netmodel::res_nominal_vector(sys),
            sys: sys.clone(),
            options,
        })
    }

    /// Model with the covariance implied by `uncertainty`.
    pub fn with_uncertainty(
        sys: &PowerSystem,
        uncertainty: &UncertaintyModel,
        options: DispatchOptions,
    ) -> Result<Self> {
        Self::new(sys, scenario::covariance_of(uncertainty)?, options)
    }

    /// Model that ignores RES uncertainty (λ = 0).
    pub fn deterministic(sys: &PowerSystem, options: DispatchOptions) -> Result<Self> {
        Self::new(sys, DMatrix::zeros(sys.n_res(), sys.n_res()), options)
    }

    /// `Σ a'_i α_i²`.
    pub fn variance_cost(&self) -> f64 {
        self.a_prime
            .iter()
            .zip(self.alpha.iter())
            .map(|(a, al)| a * al * al)
            .sum()
    }

    pub fn dr_cost(&self, realized: &DVector<f64>) -> f64 {
        self.sys
            .drps
            .iter()
            .zip(realized.iter())
            .map(|(d, r)| d.pi_dr * r)
            .sum()
    }

    /// Cost with the expectation taken in closed form.
    pub fn analytic_cost(&self, d: &Decision, response: &AffineResponse) -> DispatchEvaluation {
        let gen_cost = generation_cost(&d.p_g_base, &self.sys);
        let variance_cost = self.variance_cost();
        let dr_cost = self.dr_cost(&response.predict(&d.p_rd));
        DispatchEvaluation {
            expected_cost: gen_cost + variance_cost + dr_cost,
            gen_cost,
            variance_cost,
            dr_cost,
            constraint_violations: Vec::new(),
        }
    }
}

/// Expected dispatch cost of `d`.
///
/// In Monte-Carlo mode the sample average of the recourse generation cost
/// estimates base cost plus variance cost together; `gen_cost` reports the
/// estimate net of the closed-form variance term so the components still add
/// up to `expected_cost`. Response draws for scenario `i` use the stream
/// `(response_seed, i)`.
pub fn expected_cost(
    d: &Decision,
    model: &DispatchModel,
    response: &dyn DrResponse,
    scenarios: &[ResScenario],
    response_seed: u64,
) -> Result<DispatchEvaluation> {
    if scenarios.is_empty() {
        return Err(Error::InvalidArgument("empty scenario set".into()));
    }
    check_dims(d, model)?;
    let mean = response.mean_map();
    let mut eval = if model.options.analytic_expectation {
        model.analytic_cost(d, &mean)
    } else {
        let per: Vec<(f64, f64)> = scenarios
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let pg = &d.p_g_base - &model.alpha * s.total();
                let mut r = rng::indexed(response_seed, i as u64);
                let realized = response.draw(&d.p_rd, &mut r);
                (generation_cost(&pg, &model.sys), model.dr_cost(&realized))
            })
            .collect();
        let n = per.len() as f64;
        let gen: Vec<f64> = per.iter().map(|p| p.0).collect();
        let dr: Vec<f64> = per.iter().map(|p| p.1).collect();
        let variance_cost = model.variance_cost();
        let gen_cost = pairwise_sum(&gen) / n - variance_cost;
        let dr_cost = pairwise_sum(&dr) / n;
        DispatchEvaluation {
            expected_cost: gen_cost + variance_cost + dr_cost,
            gen_cost,
            variance_cost,
            dr_cost,
            constraint_violations: Vec::new(),
        }
    };
    eval.constraint_violations = check_constraints(
        d,
        model,
        &mean.predict(&d.p_rd),
        &ResScenario::zero(model.sys.n_res()),
        FEAS_TOL,
    )?;
    Ok(eval)
}

/// Tolerance used when reporting violations of solver outputs.
pub const FEAS_TOL: f64 = 1e-7;

fn check_dims(d: &Decision, model: &DispatchModel) -> Result<()> {
    if d.p_g_base.len() != model.sys.n_gen() || d.p_rd.len() != model.sys.n_drp() {
        return Err(Error::Dimension(format!(
            "decision has {} generators / {} drps, system has {} / {}",
            d.p_g_base.len(),
            d.p_rd.len(),
            model.sys.n_gen(),
            model.sys.n_drp()
        )));
    }
    Ok(())
}

/// Evaluates adequacy, line-flow, generation and DR limits at scenario `zeta`.
///
/// A constraint counts as violated when it fails by more than `tol`; adequacy
/// is strict, so with `tol = 0` exact balance is reported with magnitude 0.
pub fn check_constraints(
    d: &Decision,
    model: &DispatchModel,
    response_mean: &DVector<f64>,
    zeta: &ResScenario,
    tol: f64,
) -> Result<Vec<Violation>> {
    check_dims(d, model)?;
    if response_mean.len() != model.sys.n_drp() || zeta.zeta.len() != model.sys.n_res() {
        return Err(Error::Dimension(
            "response or scenario length does not match the system".into(),
        ));
    }
    let mut out = Vec::new();
    let pg = recourse_generation(d, &model.alpha, zeta)?;

    let supply = pg.sum() + model.res_nominal.sum() + response_mean.sum();
    let demand = model.loads.sum() + model.options.adequacy_margin;
    if supply - demand <= -tol {
        out.push(Violation {
            constraint: ConstraintId::Adequacy,
            magnitude: demand - supply,
        });
    }

    let dr_flow = match model.options.flow_dr_basis {
        FlowDrBasis::Accepted => d.p_rd.clone(),
        FlowDrBasis::Realized => response_mean.clone(),
    };
    let flows = model.net.line_flows(
        &pg,
        &dr_flow,
        &(&model.res_nominal + &zeta.zeta),
        &model.loads,
    );
    for (l, (f, line)) in flows.iter().zip(model.sys.lines.iter()).enumerate() {
        let excess = f.abs() - line.flow_limit;
        if excess > tol {
            out.push(Violation {
                constraint: ConstraintId::LineFlow(l),
                magnitude: excess,
            });
        }
    }
    for (i, (p, g)) in pg.iter().zip(model.sys.generators.iter()).enumerate() {
        if g.p_min - p > tol {
            out.push(Violation {
                constraint: ConstraintId::GenMin(i),
                magnitude: g.p_min - p,
            });
        }
        if p - g.p_max > tol {
            out.push(Violation {
                constraint: ConstraintId::GenMax(i),
                magnitude: p - g.p_max,
            });
        }
    }
    for (j, (p, cap)) in d.p_rd.iter().zip(model.dr_max.iter()).enumerate() {
        if -p > tol {
            out.push(Violation {
                constraint: ConstraintId::DrMin(j),
                magnitude: -p,
            });
        }
        if p - cap > tol {
            out.push(Violation {
                constraint: ConstraintId::DrMax(j),
                magnitude: p - cap,
            });
        }
    }
    Ok(out)
}

/// Post-solve check of the zero-mean constraint treatment against sampled RES
/// deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub samples: usize,
    pub violated_samples: usize,
    pub violation_rate: f64,
    /// `(constraint, number of samples violating it)`, sorted by constraint.
    pub by_constraint: Vec<(String, usize)>,
}

pub fn violation_rate(
    d: &Decision,
    model: &DispatchModel,
    response_mean: &DVector<f64>,
    scenarios: &[ResScenario],
) -> Result<ViolationReport> {
    let per = scenarios
        .par_iter()
        .map(|s| check_constraints(d, model, response_mean, s, FEAS_TOL))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    let mut violated = 0;
    for v in &per {
        if !v.is_empty() {
            violated += 1;
        }
        for x in v {
            *counts.entry(x.constraint.to_string()).or_default() += 1;
        }
    }
    Ok(ViolationReport {
        samples: scenarios.len(),
        violated_samples: violated,
        violation_rate: if scenarios.is_empty() {
            0.0
        } else {
            violated as f64 / scenarios.len() as f64
        },
        by_constraint: counts.into_iter().collect(),
    })
}

/// Uniform draw helper used by exploration: `lo + (hi - lo) * U`.
pub(crate) fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Bus, Generator, Line, Load, ResUnit};
    use crate::scenario::{sample_scenarios, DeviationDistribution};

    fn one_gen_system(a: f64, b: f64, load: f64, with_res: bool) -> PowerSystem {
        PowerSystem::new(
            100.0,
            vec![
                Bus {
                    id: 0,
                    is_slack: true,
                },
                Bus {
                    id: 1,
                    is_slack: false,
                },
            ],
            vec![Line {
                from_bus: 0,
                to_bus: 1,
                reactance: 0.1,
                flow_limit: 10.0,
            }],
            vec![Generator {
                bus: 0,
                a,
                b,
                p_min: 0.0,
                p_max: 5.0,
            }],
            if with_res {
                vec![ResUnit {
                    bus: 1,
                    p_nominal: 1.0,
                    r_pct: 100.0,
                }]
            } else {
                vec![]
            },
            vec![],
            vec![Load { bus: 1, p: load }],
        )
        .unwrap()
    }

    fn gens(a: &[f64]) -> PowerSystem {
        let mut sys = one_gen_system(1.0, 0.0, 0.0, false);
        sys.generators = a
            .iter()
            .map(|&a| Generator {
                bus: 0,
                a,
                b: 0.0,
                p_min: 0.0,
                p_max: 5.0,
            })
            .collect();
        sys
    }

    #[test]
    fn participation_examples() {
        let a = participation_factors(&gens(&[1.0, 1.0])).unwrap();
        assert_eq!(a.as_slice(), &[0.5, 0.5]);
        let a = participation_factors(&gens(&[1.0, 3.0])).unwrap();
        assert!((a[0] - 0.75).abs() < 1e-15 && (a[1] - 0.25).abs() < 1e-15);
        let a = participation_factors(&gens(&[7.0])).unwrap();
        assert_eq!(a.as_slice(), &[1.0]);
        let mut bad = gens(&[1.0]);
        bad.generators[0].a = 0.0;
        assert!(participation_factors(&bad).is_err());
    }

    #[test]
    fn recourse_examples() {
        let d = Decision::new(DVector::from_row_slice(&[1.0, 1.0]), DVector::zeros(0));
        let alpha = DVector::from_row_slice(&[0.5, 0.5]);
        let z0 = recourse_generation(&d, &alpha, &ResScenario::zero(2)).unwrap();
        assert_eq!(z0, d.p_g_base);
        let z = ResScenario {
            zeta: DVector::from_row_slice(&[0.04, 0.06]),
        };
        let pg = recourse_generation(&d, &alpha, &z).unwrap();
        assert!((pg[0] - 0.95).abs() < 1e-15 && (pg[1] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn generation_cost_examples() {
        let sys = one_gen_system(2.0, 1.0, 0.0, false);
        assert_eq!(generation_cost(&DVector::zeros(1), &sys), 0.0);
        assert_eq!(generation_cost(&DVector::from_element(1, 3.0), &sys), 21.0);
    }

    #[test]
    fn generation_cost_gradient_matches_finite_difference() {
        let mut sys = gens(&[0.7, 2.5, 1.3]);
        for (g, b) in sys.generators.iter_mut().zip([3.0, -1.0, 0.5]) {
            g.b = b;
        }
        let p = DVector::from_row_slice(&[0.4, 1.7, 2.2]);
        for i in 0..3 {
            let h = 1e-5;
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (generation_cost(&up, &sys) - generation_cost(&dn, &sys)) / (2.0 * h);
            let g = &sys.generators[i];
            let exact = 2.0 * g.a * p[i] + g.b;
            assert!((fd - exact).abs() <= 1e-6 * exact.abs());
        }
    }

    fn drp(pi_s: f64) -> Drp {
        Drp {
            bus: 0,
            p_base: 60.0,
            pi_s,
            pi_max: 400.0,
            pi_rr: 100.0,
            pi_dr: 100.0,
        }
    }

    #[test]
    fn dr_max_examples() {
        assert_eq!(dr_max(&drp(150.0)).unwrap(), 30.0);
        assert_eq!(dr_max(&drp(300.0)).unwrap(), 60.0);
        assert_eq!(dr_max(&drp(450.0)).unwrap(), 60.0);
        assert_eq!(dr_max(&drp(0.0)).unwrap(), 0.0);
        let mut bad = drp(10.0);
        bad.pi_max = 100.0;
        assert!(dr_max(&bad).is_err());
    }

    #[test]
    fn zero_everything_costs_nothing() {
        let sys = one_gen_system(1.0, 0.0, 0.0, false);
        let model = DispatchModel::deterministic(&sys, DispatchOptions::default()).unwrap();
        let d = Decision::new(DVector::zeros(1), DVector::zeros(0));
        let scen = vec![ResScenario::zero(0)];
        let e = expected_cost(&d, &model, &AffineResponse::identity(0), &scen, 0).unwrap();
        assert_eq!(e.expected_cost, 0.0);
        assert!(expected_cost(&d, &model, &AffineResponse::identity(0), &[], 0).is_err());
    }

    #[test]
    fn single_generator_expectation() {
        // E[(1 - ζ)²] with ζ ~ U(-1, 1) is 1 + 1/3
        let sys = one_gen_system(1.0, 0.0, 0.0, true);
        let unc = UncertaintyModel {
            res_units: sys.res_units.clone(),
            distribution: DeviationDistribution::Uniform,
            covariance: None,
            seed: 3,
        };
        let analytic =
            DispatchModel::with_uncertainty(&sys, &unc, DispatchOptions::default()).unwrap();
        let d = Decision::new(DVector::from_element(1, 1.0), DVector::zeros(0));
        let scen = sample_scenarios(&unc, 100_000).unwrap();
        let resp = AffineResponse::identity(0);
        let ea = expected_cost(&d, &analytic, &resp, &scen, 0).unwrap();
        assert!((ea.expected_cost - (1.0 + 1.0 / 3.0)).abs() < 1e-12);
        let mut mc = analytic.clone();
        mc.options.analytic_expectation = false;
        let em = expected_cost(&d, &mc, &resp, &scen, 0).unwrap();
        assert!((em.expected_cost - ea.expected_cost).abs() / ea.expected_cost < 0.01);
        let sum = em.gen_cost + em.variance_cost + em.dr_cost;
        assert!((sum - em.expected_cost).abs() < 1e-12);
    }

    #[test]
    fn degenerate_uncertainty_has_no_variance_term() {
        let mut sys = one_gen_system(2.0, 1.0, 0.5, true);
        sys.res_units[0].r_pct = 0.0;
        let unc = UncertaintyModel::new(&sys, 1);
        let model =
            DispatchModel::with_uncertainty(&sys, &unc, DispatchOptions::default()).unwrap();
        let d = Decision::new(DVector::from_element(1, 0.5), DVector::zeros(0));
        let e = expected_cost(
            &d,
            &model,
            &AffineResponse::identity(0),
            &[ResScenario::zero(1)],
            0,
        )
        .unwrap();
        assert_eq!(e.variance_cost, 0.0);
        assert_eq!(e.expected_cost, 2.0 * 0.25 + 0.5);
    }

    #[test]
    fn exact_balance_fails_strict_adequacy() {
        let sys = one_gen_system(1.0, 0.0, 1.0, false);
        let model = DispatchModel::deterministic(&sys, DispatchOptions::default()).unwrap();
        let d = Decision::new(DVector::from_element(1, 1.0), DVector::zeros(0));
        let v =
            check_constraints(&d, &model, &DVector::zeros(0), &ResScenario::zero(0), 0.0).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, ConstraintId::Adequacy);
        assert_eq!(v[0].magnitude, 0.0);
        let ok = Decision::new(DVector::from_element(1, 1.1), DVector::zeros(0));
        assert!(
            check_constraints(&ok, &model, &DVector::zeros(0), &ResScenario::zero(0), 0.0)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn dr_above_ceiling_reported() {
        let mut sys = one_gen_system(1.0, 0.0, 1.0, false);
        let mut p = drp(300.0);
        p.bus = 1;
        p.p_base = 0.6;
        sys.drps = vec![p];
        let model = DispatchModel::deterministic(&sys, DispatchOptions::default()).unwrap();
        let d = Decision::new(DVector::from_element(1, 2.0), DVector::from_element(1, 1.6));
        let v = check_constraints(
            &d,
            &model,
            &DVector::from_element(1, 1.6),
            &ResScenario::zero(0),
            1e-9,
        )
        .unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, ConstraintId::DrMax(0));
        assert!((v[0].magnitude - 1.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn recourse_conserves_total(base in proptest::collection::vec(-5.0f64..5.0, 3),
                                    zeta in proptest::collection::vec(-1.0f64..1.0, 2),
                                    a in proptest::collection::vec(0.1f64..10.0, 3)) {
            let alpha = participation_factors(&gens(&a)).unwrap();
            proptest::prop_assert!((alpha.sum() - 1.0).abs() <= 1e-12);
            proptest::prop_assert!(alpha.iter().all(|x| (0.0..=1.0).contains(x)));
            let d = Decision::new(DVector::from_vec(base.clone()), DVector::zeros(0));
            let z = ResScenario { zeta: DVector::from_vec(zeta.clone()) };
            let pg = recourse_generation(&d, &alpha, &z).unwrap();
            let lhs = pg.sum();
            let rhs = base.iter().sum::<f64>() - zeta.iter().sum::<f64>();
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn dr_cost_is_linear(r in proptest::collection::vec(0.0f64..1.0, 2), s in 0.0f64..3.0) {
            let mut sys = one_gen_system(1.0, 0.0, 0.0, false);
            sys.drps = vec![drp(300.0), Drp { pi_dr: 37.0, ..drp(300.0) }];
            let model = DispatchModel::deterministic(&sys, DispatchOptions::default()).unwrap();
            let rv = DVector::from_vec(r.clone());
            let c = model.dr_cost(&rv);
            proptest::prop_assert!((c - (100.0 * r[0] + 37.0 * r[1])).abs() < 1e-9);
            proptest::prop_assert!((model.dr_cost(&(&rv * s)) - s * c).abs() < 1e-9);
        }
    }
}
