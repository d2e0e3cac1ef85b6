use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::achq::features;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::exact::rvi::ValueTable;
use crate::mdp::StateSpace;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    /// Coefficients on `(L, B_1, …, B_k)`.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub r_squared: f64,
}

fn raw_design(config: &SystemConfig) -> DMatrix<f64> {
    let space = StateSpace::new(config);
    let k = config.num_servers();
    let mut x = DMatrix::zeros(space.len(), k + 2);
    for (i, s) in space.iter().enumerate() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = s.queue_len as f64;
        for j in 0..k {
            x[(i, j + 2)] = if s.is_busy(j) { 1.0 } else { 0.0 };
        }
    }
    x
}

fn numeric_rank(x: &DMatrix<f64>) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let top = sv.max();
    let tol = top * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|s| **s > tol).count()
}

/// Ordinary least squares of `V(s)` on the raw state vector plus an
/// intercept. A constant `V` has zero total variance and reports `R² = 0`.
pub fn linear_fit_value(values: &ValueTable, config: &SystemConfig) -> Result<LinearFit> {
    let x = raw_design(config);
    let y = DVector::from_column_slice(&values.values);
    if y.len() != x.nrows() {
        return Err(Error::InvalidArgument(format!(
            "value table has {} entries, expected {}",
            y.len(),
            x.nrows()
        )));
    }
    let rank = numeric_rank(&x);
    if rank < x.ncols() {
        return Err(Error::RankDeficient {
            rank,
            columns: x.ncols(),
        });
    }
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&y, 0.0)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;
    let fitted = &x * &beta;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit {
        weights: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        r_squared,
    })
}

/// Numerical column rank of the critic feature matrix `Φ` (one row
/// `φ(s)ᵀ` per enumerated state).
pub fn feature_matrix_rank(config: &SystemConfig) -> usize {
    let space = StateSpace::new(config);
    let k = config.num_servers();
    let mut phi = DMatrix::zeros(space.len(), k + 1);
    for (i, s) in space.iter().enumerate() {
        for (j, v) in features(&s, config).into_iter().enumerate() {
            phi[(i, j)] = v;
        }
    }
    numeric_rank(&phi)
}

/// `max_s ‖φ(s)‖₂` over the enumerated space.
pub fn max_feature_norm(config: &SystemConfig) -> f64 {
    StateSpace::new(config)
        .iter()
        .map(|s| features(&s, config).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}
