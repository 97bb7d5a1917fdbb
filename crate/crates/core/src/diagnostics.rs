//! Gradients of `f_eps`, a finite-difference check, and the first-order
//! stationarity residual over the nonnegative orthant.
//!
//! A point is stationary when the gradient vanishes on every strictly
//! positive coordinate and is nonnegative on every coordinate sitting at
//! zero. The residual reports the worst violation of either condition.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_factor_dims, effective_skills, neg_log_likelihood, ComparisonTensor, FactorPair};

/// Entries at or below this are treated as sitting on the boundary.
pub const DEFAULT_POSITIVITY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub grad_w: Array2<f64>,
    pub grad_h: Array2<f64>,
}

/// Analytic partial derivatives of `f_eps` with respect to `W` and `H`.
pub fn gradient(data: &ComparisonTensor, factors: &FactorPair, epsilon: f64) -> Result<GradientPair> {
    check_factor_dims(data, factors)?;
    let (w, h) = (factors.w(), factors.h());
    let k = factors.rank();
    let a = effective_skills(w, h, epsilon);
    let mut grad_w = Array2::<f64>::zeros(w.dim());
    let mut grad_h = Array2::<f64>::zeros(h.dim());
    for t in 0..data.num_tournaments() {
        for pair in data.pairs(t) {
            let (i, j) = (pair.i, pair.j);
            let sum = a[[t, i]] + a[[t, j]];
            let games = f64::from(pair.games()) / sum;
            for (win, lose, b) in pair.directed() {
                let b = f64::from(b);
                let own = b / a[[t, win]];
                let both = b / sum;
                for f in 0..k {
                    grad_w[[t, f]] +=
                        -own * (h[[f, win]] + epsilon) + both * (h[[f, win]] + h[[f, lose]] + 2.0 * epsilon);
                    grad_h[[f, win]] -= own * w[[t, f]];
                }
            }
            for f in 0..k {
                grad_h[[f, i]] += games * w[[t, f]];
                grad_h[[f, j]] += games * w[[t, f]];
            }
        }
    }
    for (what, g) in [("grad_w", &grad_w), ("grad_h", &grad_h)] {
        if let Some(((row, col), _)) = g.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { what, row, col });
        }
    }
    Ok(GradientPair { grad_w, grad_h })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorMatrix {
    W,
    H,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coordinate {
    pub matrix: FactorMatrix,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// `max(interior_max_abs_grad, boundary_max_neg_grad)`.
    pub residual: f64,
    /// Coordinate attaining the residual; `None` when it is exactly zero.
    pub worst_coordinate: Option<Coordinate>,
    /// Largest `|grad|` over coordinates above the positivity threshold.
    pub interior_max_abs_grad: f64,
    /// Largest `max(-grad, 0)` over coordinates at or below the threshold.
    pub boundary_max_neg_grad: f64,
    /// `f_eps` at the evaluated point, for judging the gradient scale.
    pub objective: f64,
}

pub fn stationarity_residual(
    data: &ComparisonTensor,
    factors: &FactorPair,
    epsilon: f64,
    positivity_threshold: f64,
) -> Result<StationarityReport> {
    let objective = neg_log_likelihood(data, factors, epsilon)?;
    let grads = gradient(data, factors, epsilon)?;
    let mut interior = 0.0_f64;
    let mut boundary = 0.0_f64;
    let mut worst: Option<(f64, Coordinate)> = None;
    let blocks = [(FactorMatrix::W, factors.w(), &grads.grad_w), (FactorMatrix::H, factors.h(), &grads.grad_h)];
    for (matrix, values, grad) in blocks {
        for ((row, col), &v) in values.indexed_iter() {
            let g = grad[[row, col]];
            let violation = if v > positivity_threshold {
                interior = interior.max(g.abs());
                g.abs()
            } else {
                let neg = (-g).max(0.0);
                boundary = boundary.max(neg);
                neg
            };
            if violation > worst.map_or(0.0, |(x, _)| x) {
                worst = Some((violation, Coordinate { matrix, row, col }));
            }
        }
    }
    Ok(StationarityReport {
        residual: interior.max(boundary),
        worst_coordinate: worst.map(|(_, c)| c),
        interior_max_abs_grad: interior,
        boundary_max_neg_grad: boundary,
        objective,
    })
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences with the given step.
///
/// Only coordinates larger than `step` are perturbed, so every evaluation
/// point stays feasible. The relative error of a coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1)`.
pub fn finite_difference_check(data: &ComparisonTensor, factors: &FactorPair, epsilon: f64, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {step}")));
    }
    let grads = gradient(data, factors, epsilon)?;
    let mut worst = 0.0_f64;
    for matrix in [FactorMatrix::W, FactorMatrix::H] {
        let (values, analytic) = match matrix {
            FactorMatrix::W => (factors.w(), &grads.grad_w),
            FactorMatrix::H => (factors.h(), &grads.grad_h),
        };
        for ((row, col), &v) in values.indexed_iter() {
            if v <= step {
                continue;
            }
            let at = |delta: f64| -> Result<f64> {
                let (mut w, mut h) = (factors.w().clone(), factors.h().clone());
                match matrix {
                    FactorMatrix::W => w[[row, col]] = v + delta,
                    FactorMatrix::H => h[[row, col]] = v + delta,
                }
                neg_log_likelihood(data, &FactorPair::from_parts(w, h)?, epsilon)
            };
            let numeric = (at(step)? - at(-step)?) / (2.0 * step);
            let g = analytic[[row, col]];
            let scale = g.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((g - numeric).abs() / scale);
        }
    }
    Ok(worst)
}
