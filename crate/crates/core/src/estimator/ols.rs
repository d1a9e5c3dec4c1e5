use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::EstimatorDataset;

pub const OLS_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl OlsModel {
    pub fn raw_predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Least squares with an intercept, solved on centred normal equations.
pub fn fit_ols(train: &EstimatorDataset) -> Result<OlsModel> {
    fit_ols_ridge(train, OLS_RIDGE)
}

pub fn fit_ols_ridge(train: &EstimatorDataset, ridge: f64) -> Result<OlsModel> {
    let n = train.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let d = train.dim();
    let inv_n = 1.0 / n as f64;
    let mut x_mean = vec![0.0; d];
    let mut z_mean = 0.0;
    for row in train.rows() {
        for (m, v) in x_mean.iter_mut().zip(row.features.as_slice()) {
            *m += v * inv_n;
        }
        z_mean += row.z * inv_n;
    }
    let xc = DMatrix::from_fn(n, d, |i, j| train.rows()[i].features.0[j] - x_mean[j]);
    let zc = DVector::from_fn(n, |i, _| train.rows()[i].z - z_mean);
    let mut gram = xc.transpose() * &xc;
    for k in 0..d {
        gram[(k, k)] += ridge;
    }
    let rhs = xc.transpose() * zc;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Estimator(format!("normal equations singular (ridge {ridge})")))?;
    let w = chol.solve(&rhs);
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = z_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("OLS coefficients".into()));
    }
    Ok(OlsModel { weights, intercept })
}
