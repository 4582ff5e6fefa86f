//! RES forecast-error model: deviation sampling, covariance and the
//! variance-cost coefficients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::RngExt;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{PowerSystem, ResUnit};
use crate::rng;

/// Standard deviations to the truncation point for the truncated normal.
const TRUNC_K: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationDistribution {
    #[default]
    Uniform,
    /// Normal with sd = half-width / 2, truncated to the interval.
    Truncnormal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResScenario {
    pub zeta: DVector<f64>,
}

impl ResScenario {
    pub fn zero(n: usize) -> Self {
        ResScenario {
            zeta: DVector::zeros(n),
        }
    }

    pub fn total(&self) -> f64 {
        self.zeta.sum()
    }
}

#[derive(Debug, Clone)]
pub struct UncertaintyModel {
    pub res_units: Vec<ResUnit>,
    pub distribution: DeviationDistribution,
    /// Explicit covariance; when absent the units are independent.
    pub covariance: Option<DMatrix<f64>>,
    pub seed: u64,
}

impl UncertaintyModel {
    pub fn new(sys: &PowerSystem, seed: u64) -> Self {
        UncertaintyModel {
            res_units: sys.res_units.clone(),
            distribution: DeviationDistribution::Uniform,
            covariance: None,
            seed,
        }
    }

    pub fn n_res(&self) -> usize {
        self.res_units.len()
    }
}

fn draw_one(model: &UncertaintyModel, index: u64) -> ResScenario {
    let mut rng = rng::indexed(model.seed, index);
    let zeta = DVector::from_iterator(
        model.n_res(),
        model.res_units.iter().map(|u| {
            let w = u.half_width();
            if w == 0.0 {
                return 0.0;
            }
            match model.distribution {
                DeviationDistribution::Uniform => rng.random_range(-w..=w),
                DeviationDistribution::Truncnormal => {
                    let normal = Normal::new(0.0, w / TRUNC_K).expect("positive sd");
                    loop {
                        let v: f64 = normal.sample(&mut rng);
                        if v.abs() <= w {
                            break v;
                        }
                    }
                }
            }
        }),
    );
    ResScenario { zeta }
}

/// Draws `n` independent scenarios; scenario `i` depends only on `(seed, i)`.
pub fn sample_scenarios(model: &UncertaintyModel, n: usize) -> Result<Vec<ResScenario>> {
    sample_range(model, 0, n)
}

/// Scenarios with indices `start..start + n` of the model's seeded family.
pub fn sample_range(model: &UncertaintyModel, start: u64, n: usize) -> Result<Vec<ResScenario>> {
    if n == 0 {
        return Err(Error::InvalidArgument("scenario count must be >= 1".into()));
    }
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| draw_one(model, start + i))
        .collect())
}

fn marginal_variance(dist: DeviationDistribution, half_width: f64) -> f64 {
    match dist {
        DeviationDistribution::Uniform => half_width * half_width / 3.0,
        DeviationDistribution::Truncnormal => {
            let sd = half_width / TRUNC_K;
            let phi = (-0.5 * TRUNC_K * TRUNC_K).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let mass = libm::erf(TRUNC_K / std::f64::consts::SQRT_2);
            sd * sd * (1.0 - 2.0 * TRUNC_K * phi / mass)
        }
    }
}

/// Covariance λ of the deviations.
pub fn covariance_of(model: &UncertaintyModel) -> Result<DMatrix<f64>> {
    let n = model.n_res();
    if let Some(cov) = &model.covariance {
        if cov.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "covariance is {:?}, expected {n}x{n}",
                cov.shape()
            )));
        }
        check_psd(cov)?;
        return Ok(cov.clone());
    }
    Ok(DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        model
            .res_units
            .iter()
            .map(|u| marginal_variance(model.distribution, u.half_width())),
    )))
}

fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    let scale = 1.0 + m.amax();
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidArgument("covariance is not symmetric".into()));
    }
    if m.nrows() > 0 {
        let eig = SymmetricEigen::new(m.clone());
        if eig.eigenvalues.min() < -1e-12 * scale {
            return Err(Error::InvalidArgument(
                "covariance is not positive semidefinite".into(),
            ));
        }
    }
    Ok(())
}

/// `a'_i = (Σ_jk λ_jk) · a_i`.
pub fn variance_cost_coeffs(sys: &PowerSystem, lambda: &DMatrix<f64>) -> Result<DVector<f64>> {
    let nr = sys.n_res();
    if lambda.shape() != (nr, nr) {
        return Err(Error::Dimension(format!(
            "lambda is {:?}, system has {nr} RES units",
            lambda.shape()
        )));
    }
    Ok(sys.gen_a() * lambda.sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{self, Bus, Generator, Line};

    fn unit(p: f64, r: f64) -> ResUnit {
        ResUnit {
            bus: 0,
            p_nominal: p,
            r_pct: r,
        }
    }

    fn model(units: Vec<ResUnit>, seed: u64) -> UncertaintyModel {
        UncertaintyModel {
            res_units: units,
            distribution: DeviationDistribution::Uniform,
            covariance: None,
            seed,
        }
    }

    fn small_system(a: &[f64], n_res: usize) -> PowerSystem {
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
                flow_limit: 1.0,
            }],
            a.iter()
                .map(|&a| Generator {
                    bus: 0,
                    a,
                    b: 0.0,
                    p_min: 0.0,
                    p_max: 10.0,
                })
                .collect(),
            (0..n_res).map(|_| unit(1.0, 10.0)).collect(),
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn zero_level_gives_zero_scenarios() {
        let m = model(vec![unit(1.0, 0.0), unit(2.0, 0.0)], 3);
        for s in sample_scenarios(&m, 50).unwrap() {
            assert!(s.zeta.iter().all(|z| *z == 0.0));
        }
        assert_eq!(covariance_of(&m).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn ieee14_deviations_within_interval() {
        let sys = netmodel::ieee14();
        let m = UncertaintyModel::new(&sys, 11);
        for s in sample_scenarios(&m, 2000).unwrap() {
            assert!(s.zeta.iter().all(|z| z.abs() <= 0.08 + 1e-15));
        }
    }

    #[test]
    fn empty_request_rejected() {
        let m = model(vec![unit(1.0, 100.0)], 1);
        assert!(sample_scenarios(&m, 0).is_err());
    }

    #[test]
    fn sample_mean_clt_bound() {
        let n = 100_000;
        let m = model(vec![unit(1.0, 100.0)], 5);
        let s = sample_scenarios(&m, n).unwrap();
        let mean: f64 = s.iter().map(|s| s.zeta[0]).sum::<f64>() / n as f64;
        let bound = 3.0 * (1.0 / 3.0_f64.sqrt()) / (n as f64).sqrt();
        assert!(mean.abs() < bound, "mean {mean} bound {bound}");
    }

    #[test]
    fn uniform_covariance() {
        let m = model(vec![unit(1.0, 100.0)], 0);
        let c = covariance_of(&m).unwrap();
        assert!((c[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        let m2 = model(vec![unit(1.0, 50.0), unit(0.3, 20.0)], 0);
        let c2 = covariance_of(&m2).unwrap();
        assert_eq!(c2[(0, 1)], 0.0);
        assert_eq!(c2[(1, 0)], 0.0);
    }

    #[test]
    fn empirical_covariance_matches() {
        for dist in [
            DeviationDistribution::Uniform,
            DeviationDistribution::Truncnormal,
        ] {
            let mut m = model(vec![unit(1.0, 80.0), unit(0.5, 40.0)], 9);
            m.distribution = dist;
            let n = 100_000;
            let s = sample_scenarios(&m, n).unwrap();
            let c = covariance_of(&m).unwrap();
            for k in 0..2 {
                let var: f64 = s.iter().map(|s| s.zeta[k] * s.zeta[k]).sum::<f64>() / n as f64;
                let rel = (var - c[(k, k)]).abs() / c[(k, k)];
                assert!(rel < 0.05, "{dist:?} unit {k}: rel err {rel}");
            }
        }
    }

    #[test]
    fn seeds_reproduce() {
        let m = model(vec![unit(1.0, 100.0), unit(2.0, 30.0)], 42);
        let a = sample_scenarios(&m, 100).unwrap();
        let b = sample_scenarios(&m, 100).unwrap();
        assert_eq!(a, b);
        let tail = sample_range(&m, 60, 40).unwrap();
        assert_eq!(&a[60..], &tail[..]);
    }

    #[test]
    fn explicit_covariance_is_checked() {
        let mut m = model(vec![unit(1.0, 100.0), unit(1.0, 100.0)], 0);
        m.covariance = Some(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(covariance_of(&m).is_err());
        let good = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        m.covariance = Some(good.clone());
        assert_eq!(covariance_of(&m).unwrap(), good);
    }

    #[test]
    fn variance_cost_examples() {
        let sys = small_system(&[2.0, 3.0], 2);
        let a = variance_cost_coeffs(&sys, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(a.as_slice(), &[4.0, 6.0]);
        let z = variance_cost_coeffs(&sys, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
        let sys1 = small_system(&[1.0], 1);
        let one = variance_cost_coeffs(&sys1, &DMatrix::from_element(1, 1, 1.0 / 3.0)).unwrap();
        assert!((one[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(variance_cost_coeffs(&sys1, &DMatrix::zeros(2, 2)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn variance_cost_is_bilinear(s in 0.0f64..10.0, t in 0.0f64..10.0, l in 0.0f64..1.0) {
            let sys = small_system(&[1.5, 0.5], 1);
            let lam = DMatrix::from_element(1, 1, l);
            let base = variance_cost_coeffs(&sys, &lam).unwrap();
            let scaled = variance_cost_coeffs(&sys, &(&lam * s)).unwrap();
            proptest::prop_assert!((scaled - &base * s).amax() <= 1e-12 * (1.0 + base.amax() * s));
            let sys_t = PowerSystem {
                generators: sys.generators.iter().map(|g| Generator { a: g.a * t, ..g.clone() }).collect(),
                ..sys.clone()
            };
            let at = variance_cost_coeffs(&sys_t, &lam).unwrap();
            proptest::prop_assert!((at - &base * t).amax() <= 1e-12 * (1.0 + base.amax() * t));
        }
    }
}
