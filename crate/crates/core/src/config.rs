//! Run configuration loaded from TOML.
//!
//! ```toml
//! [dispatch]
//! samples = 2000
//!
//! [oracle]
//! a1 = 0.7            # scalar times identity, or a full matrix
//! noise_std = 0.012   # pu, scalar or per DRP
//!
//! [cleo]
//! eta1 = 0.2
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cleo::CleoConfig;
use crate::dispatch::DispatchOptions;
use crate::error::{Error, Result};
use crate::netmodel::PowerSystem;
use crate::oracle::ConsumerModel;
use crate::rng;
use crate::scenario::{DeviationDistribution, UncertaintyModel};

/// A scalar multiple of the identity or an explicit matrix (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Scalar(v) => Ok(DMatrix::identity(n, n) * *v),
            MatrixSpec::Rows(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension(format!("expected a {n}x{n} matrix")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

/// A scalar broadcast to every entry or an explicit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    Values(Vec<f64>),
}

impl VectorSpec {
    pub fn to_vector(&self, n: usize) -> Result<DVector<f64>> {
        match self {
            VectorSpec::Scalar(v) => Ok(DVector::from_element(n, *v)),
            VectorSpec::Values(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            VectorSpec::Values(v) => Err(Error::Dimension(format!(
                "expected {n} values, got {}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub distribution: DeviationDistribution,
    /// Explicit RES covariance in pu²; independent units when absent.
    pub covariance: Option<Vec<Vec<f64>>>,
}

/// Ground-truth consumer model. Unset fields take the partial-compliance
/// defaults (`0.8 I`, zero intercept, noise 2 % of each baseline).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub a1: Option<MatrixSpec>,
    pub a0: Option<VectorSpec>,
    /// Noise standard deviation in pu.
    pub noise_std: Option<VectorSpec>,
    pub clip: bool,
    /// Fixed oracle seed; derived from the master seed when absent.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub uncertainty: UncertaintyConfig,
    pub dispatch: DispatchOptions,
    pub oracle: OracleConfig,
    pub cleo: CleoConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Sets a dotted key such as `oracle.a1` from a TOML literal (`0.7`,
    /// `[[0.8, 0], [0, 0.9]]`, `"truncnormal"`).
    pub fn set(&mut self, key: &str, literal: &str) -> Result<()> {
        let parsed: toml::Table = format!("v = {literal}")
            .parse()
            .map_err(|e| Error::Parse(format!("value for {key}: {e}")))?;
        let value = parsed["v"].clone();
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Parse(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for part in &parts[..parts.len() - 1] {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(*part))
                .ok_or_else(|| Error::InvalidArgument(format!("unknown config key {key}")))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown config key {key}")))?;
        table.insert(parts[parts.len() - 1].to_string(), value);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidArgument(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn uncertainty_model(
        &self,
        sys: &PowerSystem,
        master_seed: u64,
    ) -> Result<UncertaintyModel> {
        let mut m =
            UncertaintyModel::new(sys, rng::substream_seed(master_seed, rng::STREAM_SCENARIOS));
        m.distribution = self.uncertainty.distribution;
        if let Some(rows) = &self.uncertainty.covariance {
            m.covariance = Some(MatrixSpec::Rows(rows.clone()).to_matrix(sys.n_res())?);
        }
        Ok(m)
    }

    pub fn oracle(
        &self,
        sys: &PowerSystem,
        dr_max: &DVector<f64>,
        master_seed: u64,
    ) -> Result<ConsumerModel> {
        let n = sys.n_drp();
        let seed = self
            .oracle
            .seed
            .unwrap_or_else(|| rng::substream_seed(master_seed, rng::STREAM_ORACLE));
        let default = ConsumerModel::default_for(sys, dr_max, seed);
        let a1 = match &self.oracle.a1 {
            Some(spec) => spec.to_matrix(n)?,
            None => default.a1_true,
        };
        let a0 = match &self.oracle.a0 {
            Some(spec) => spec.to_vector(n)?,
            None => default.a0_true,
        };
        let noise = match &self.oracle.noise_std {
            Some(spec) => spec.to_vector(n)?,
            None => default.noise_std,
        };
        ConsumerModel::new(a1, a0, noise, dr_max.clone(), self.oracle.clip, seed)
    }
}
