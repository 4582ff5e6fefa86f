//! Ground-truth consumer responsiveness: the hidden environment the learner
//! queries. Realized DR is `(A1)ᵀ p + A0 + ε` with independent Gaussian ε.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dispatch::{AffineResponse, DrResponse};
use crate::error::{Error, Result};
use crate::netmodel::PowerSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsePair {
    pub p_rd: DVector<f64>,
    pub p_rd_enu: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ConsumerModel {
    pub a1_true: DMatrix<f64>,
    pub a0_true: DVector<f64>,
    pub noise_std: DVector<f64>,
    pub clip: bool,
    /// Upper clip bound per DRP (the DR ceiling).
    pub dr_max: DVector<f64>,
    seed: u64,
    rng: ChaCha8Rng,
    calls: u64,
}

impl ConsumerModel {
    pub fn new(
        a1_true: DMatrix<f64>,
        a0_true: DVector<f64>,
        noise_std: DVector<f64>,
        dr_max: DVector<f64>,
        clip: bool,
        seed: u64,
    ) -> Result<Self> {
        let n = a0_true.len();
        if a1_true.shape() != (n, n) || noise_std.len() != n || dr_max.len() != n {
            return Err(Error::Dimension(format!(
                "consumer model: a1 {:?}, a0 {}, noise {}, dr_max {}",
                a1_true.shape(),
                n,
                noise_std.len(),
                dr_max.len()
            )));
        }
        if noise_std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
        }
        Ok(ConsumerModel {
            a1_true,
            a0_true,
            noise_std,
            clip,
            dr_max,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            calls: 0,
        })
    }

    /// Partial compliance: `A1 = 0.8 I`, `A0 = 0`, noise 2 % of each baseline.
    pub fn default_for(sys: &PowerSystem, dr_max: &DVector<f64>, seed: u64) -> Self {
        let n = sys.n_drp();
        Self::new(
            DMatrix::identity(n, n) * 0.8,
            DVector::zeros(n),
            DVector::from_iterator(n, sys.drps.iter().map(|d| 0.02 * d.p_base)),
            dr_max.clone(),
            false,
            seed,
        )
        .expect("dimensions agree by construction")
    }

    /// Noiseless `A1 = I`, `A0 = 0`: the purely exogenous world.
    pub fn identity(n: usize, dr_max: &DVector<f64>, seed: u64) -> Self {
        Self::new(
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DVector::zeros(n),
            dr_max.clone(),
            false,
            seed,
        )
        .expect("dimensions agree by construction")
    }

    pub fn n_drp(&self) -> usize {
        self.a0_true.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of `respond` calls made so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Mean response ψ(p) without noise or clipping.
    pub fn psi(&self, p_rd: &DVector<f64>) -> DVector<f64> {
        self.a1_true.tr_mul(p_rd) + &self.a0_true
    }

    fn realize(&self, p_rd: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut out = self.psi(p_rd);
        for (j, s) in self.noise_std.iter().enumerate() {
            if *s > 0.0 {
                out[j] += Normal::new(0.0, *s).expect("finite sd").sample(rng);
            }
        }
        if self.clip {
            for (v, hi) in out.iter_mut().zip(self.dr_max.iter()) {
                *v = v.clamp(0.0, *hi);
            }
        }
        out
    }

    pub fn respond(&mut self, p_rd: &DVector<f64>) -> Result<DVector<f64>> {
        if p_rd.len() != self.n_drp() {
            return Err(Error::Dimension(format!(
                "decision has {} entries, oracle expects {}",
                p_rd.len(),
                self.n_drp()
            )));
        }
        let mut rng = self.rng.clone();
        let out = self.realize(p_rd, &mut rng);
        self.rng = rng;
        self.calls += 1;
        Ok(out)
    }

    /// One `respond` call per decision, paired in order.
    pub fn collect(&mut self, decisions: &[DVector<f64>]) -> Result<Vec<ResponsePair>> {
        if decisions.is_empty() {
            return Err(Error::InvalidArgument("no decisions to query".into()));
        }
        decisions
            .iter()
            .map(|p| {
                Ok(ResponsePair {
                    p_rd: p.clone(),
                    p_rd_enu: self.respond(p)?,
                })
            })
            .collect()
    }
}

impl DrResponse for ConsumerModel {
    fn mean_map(&self) -> AffineResponse {
        AffineResponse {
            a1: self.a1_true.clone(),
            a0: self.a0_true.clone(),
        }
    }

    fn draw(&self, p_rd: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        self.realize(p_rd, rng)
    }
}
