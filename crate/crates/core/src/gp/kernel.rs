use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bench::Domain;
use crate::error::{PboError, Result};

pub const DEFAULT_JITTER: f64 = 1e-6;

/// Squared-exponential kernel with one lengthscale per duel coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    /// One per coordinate of the concatenated `[x, x']` vector.
    pub lengthscales: Vec<f64>,
    pub jitter: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, jitter: f64) -> Result<Self> {
        let p = Self {
            signal_variance,
            lengthscales,
            jitter,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unit signal variance and lengthscale `fraction * range` on both halves.
    pub fn for_domain(domain: &Domain, fraction: f64) -> Self {
        let half: Vec<f64> = domain.ranges().iter().map(|r| r * fraction).collect();
        Self {
            signal_variance: 1.0,
            lengthscales: half.iter().chain(&half).copied().collect(),
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.signal_variance) {
            return Err(PboError::InvalidParams(format!(
                "signal variance {} is not positive",
                self.signal_variance
            )));
        }
        if self.lengthscales.is_empty() || self.lengthscales.len() % 2 != 0 {
            return Err(PboError::InvalidParams(format!(
                "need 2q lengthscales, got {}",
                self.lengthscales.len()
            )));
        }
        if let Some(l) = self.lengthscales.iter().find(|&&l| !positive(l)) {
            return Err(PboError::InvalidParams(format!("lengthscale {l} is not positive")));
        }
        if !positive(self.jitter) || self.jitter > 1e-4 * self.signal_variance {
            return Err(PboError::InvalidParams(format!(
                "jitter {} must lie in (0, 1e-4 * signal variance]",
                self.jitter
            )));
        }
        Ok(())
    }

    /// Length of the concatenated duel vector, `2q`.
    pub fn duel_dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Dimension `q` of the search space.
    pub fn point_dim(&self) -> usize {
        self.lengthscales.len() / 2
    }
}

/// `k(d1, d2) = s² exp(-½ Σ ((d1_i - d2_i) / ℓ_i)²)`.
pub fn kernel_eval(params: &KernelParams, d1: &[f64], d2: &[f64]) -> Result<f64> {
    let n = params.duel_dim();
    for d in [d1, d2] {
        if d.len() != n {
            return Err(PboError::DimensionMismatch {
                expected: n,
                got: d.len(),
            });
        }
    }
    Ok(params.signal_variance * (-0.5 * scaled_sq_dist(&params.lengthscales, d1, d2)).exp())
}

pub(crate) fn scaled_sq_dist(lengthscales: &[f64], a: &[f64], b: &[f64]) -> f64 {
    lengthscales
        .iter()
        .zip(a.iter().zip(b))
        .map(|(l, (x, y))| {
            let t = (x - y) / l;
            t * t
        })
        .sum()
}

/// Prior covariance of the training inputs, jitter included on the diagonal.
pub(crate) fn gram(params: &KernelParams, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.signal_variance + params.jitter;
        for j in 0..i {
            let v = params.signal_variance
                * (-0.5 * scaled_sq_dist(&params.lengthscales, &inputs[i], &inputs[j])).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Unit-variance SE factor between one half (left or right) of every training
/// input and a set of points: `out[(i, m)] = exp(-½ Σ_d ((x_i[off+d] - p_m[d]) / ℓ[off+d])²)`.
pub(crate) fn half_factors(
    params: &KernelParams,
    inputs: &[Vec<f64>],
    offset: usize,
    points: &[Vec<f64>],
) -> DMatrix<f64> {
    let q = params.point_dim();
    let ls = &params.lengthscales[offset..offset + q];
    DMatrix::from_fn(inputs.len(), points.len(), |i, m| {
        (-0.5 * scaled_sq_dist(ls, &inputs[i][offset..offset + q], &points[m])).exp()
    })
}
