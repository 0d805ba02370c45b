//! Continuous posterior samples of the duel reward via random Fourier features.
//!
//! A draw is built in two stages. First the latent values at the training
//! duels are sampled jointly from the Laplace posterior. Then a prior
//! weight-space draw is corrected by a ridge regression so that the path
//! passes through those values. With no data the path is a prior sample.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::bench::{sigmoid, Point};
use crate::copeland::{argmax_first, LandmarkSet};
use crate::error::{PboError, Result};
use crate::gp::{KernelParams, LaplacePosterior};

pub const DEFAULT_FEATURES: usize = 500;
/// Ridge regularizer of the interpolation step.
pub const RIDGE: f64 = 1e-6;

/// Frequencies and phases of `φ_i(d) = cos(ω_i · d + b_i)`, drawn from the
/// spectral measure of a squared-exponential kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierBasis {
    /// `F × 2q`.
    frequencies: DMatrix<f64>,
    phases: DVector<f64>,
    signal_variance: f64,
}

impl FourierBasis {
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }

    /// `√(2 s² / F)`; carried by the weights, not the features.
    pub fn amplitude(&self) -> f64 {
        (2.0 * self.signal_variance / self.len() as f64).sqrt()
    }

    /// Amplitudeless features at a concatenated duel vector.
    pub fn features(&self, x: &[f64]) -> DVector<f64> {
        let xv = DVector::from_column_slice(x);
        let mut z = &self.frequencies * xv + &self.phases;
        z.apply(|v| *v = v.cos());
        z
    }

    /// `a² φ(d1)ᵀ φ(d2)`, the Monte-Carlo estimate of `k(d1, d2)`.
    pub fn kernel_estimate(&self, d1: &[f64], d2: &[f64]) -> f64 {
        self.amplitude().powi(2) * self.features(d1).dot(&self.features(d2))
    }

    fn feature_matrix(&self, inputs: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(inputs.len(), self.len(), |i, f| {
            let w = self.frequencies.row(f);
            (w.iter().zip(&inputs[i]).map(|(a, b)| a * b).sum::<f64>() + self.phases[f]).cos()
        })
    }

    /// `(cos, sin)` of `ω_half · x (+ b)` for every point, each `points × F`.
    fn half_phases(&self, points: &[Point], offset: usize, with_phase: bool) -> (DMatrix<f64>, DMatrix<f64>) {
        let f = self.len();
        let mut c = DMatrix::zeros(points.len(), f);
        let mut s = DMatrix::zeros(points.len(), f);
        for (p, x) in points.iter().enumerate() {
            for i in 0..f {
                let mut u = if with_phase { self.phases[i] } else { 0.0 };
                for (d, xd) in x.iter().enumerate() {
                    u += self.frequencies[(i, offset + d)] * xd;
                }
                let (sn, cs) = u.sin_cos();
                c[(p, i)] = cs;
                s[(p, i)] = sn;
            }
        }
        (c, s)
    }
}

/// Frequencies `ω ~ N(0, diag(ℓ⁻²))` and phases `b ~ U[0, 2π)`.
pub fn sample_basis<R: Rng + ?Sized>(
    params: &KernelParams,
    n_features: usize,
    rng: &mut R,
) -> Result<FourierBasis> {
    params.validate()?;
    if n_features == 0 {
        return Err(PboError::InvalidConfig("need at least one Fourier feature".into()));
    }
    let dim = params.duel_dim();
    let mut frequencies = DMatrix::zeros(n_features, dim);
    for f in 0..n_features {
        for d in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            frequencies[(f, d)] = z / params.lengthscales[d];
        }
    }
    let phases =
        DVector::from_fn(n_features, |_, _| rng.random::<f64>() * std::f64::consts::TAU);
    Ok(FourierBasis {
        frequencies,
        phases,
        signal_variance: params.signal_variance,
    })
}

/// `f̃(d) = Σ_i w_i cos(ω_i · d + b_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    basis: FourierBasis,
    weights: DVector<f64>,
    /// The joint draw at the training duels the path was fitted through.
    anchor: DVector<f64>,
}

impl SampledPath {
    /// A path with explicit weights, mostly useful in tests.
    pub fn from_weights(basis: FourierBasis, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != basis.len() {
            return Err(PboError::DimensionMismatch {
                expected: basis.len(),
                got: weights.len(),
            });
        }
        Ok(Self {
            basis,
            weights: DVector::from_vec(weights),
            anchor: DVector::zeros(0),
        })
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.basis
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.basis.features(x).dot(&self.weights)
    }

    pub fn eval_duel(&self, left: &[f64], right: &[f64]) -> f64 {
        let mut x = left.to_vec();
        x.extend_from_slice(right);
        self.eval(&x)
    }

    /// `out[(g, k)] = f̃([lefts[g], rights[k]])`, using
    /// `cos(u + v) = cos u cos v - sin u sin v` to keep it a matrix product.
    pub fn eval_grid(&self, lefts: &[Point], rights: &[Point]) -> DMatrix<f64> {
        let q = self.basis.frequencies.ncols() / 2;
        let (mut cu, mut su) = self.basis.half_phases(lefts, 0, true);
        let (cv, sv) = self.basis.half_phases(rights, q, false);
        for (i, w) in self.weights.iter().enumerate() {
            cu.column_mut(i).scale_mut(*w);
            su.column_mut(i).scale_mut(*w);
        }
        cu * cv.transpose() - su * sv.transpose()
    }
}

/// Joint draw from `N(mean, cov)` with escalating diagonal jitter.
fn gaussian_draw<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = mean.len();
    let scale = cov.diagonal().amax().max(1e-12);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut c = cov.clone();
        for i in 0..n {
            c[(i, i)] += jitter;
        }
        if let Some(chol) = c.cholesky() {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
            return Ok(mean + chol.l() * z);
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 100.0 };
    }
    Err(PboError::NotPositiveDefinite("posterior covariance at training duels"))
}

/// One approximate posterior path.
pub fn sample_latent_path<R: Rng + ?Sized>(
    post: &LaplacePosterior,
    basis: &FourierBasis,
    rng: &mut R,
) -> Result<SampledPath> {
    let f = basis.len();
    let prior = Normal::new(0.0, basis.amplitude()).expect("finite amplitude");
    let w0 = DVector::from_fn(f, |_, _| prior.sample(rng));
    if post.is_empty() {
        return Ok(SampledPath {
            basis: basis.clone(),
            weights: w0,
            anchor: DVector::zeros(0),
        });
    }

    let anchor = gaussian_draw(post.mode(), post.training_covariance(), rng)?;
    let phi = basis.feature_matrix(post.inputs());
    let mut gram = &phi * phi.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += RIDGE;
    }
    let chol = gram.cholesky().ok_or(PboError::RankDeficient)?;
    let residual = &anchor - &phi * &w0;
    let weights = w0 + phi.transpose() * chol.solve(&residual);
    Ok(SampledPath {
        basis: basis.clone(),
        weights,
        anchor,
    })
}

/// Index of the candidate whose sampled soft-Copeland score
/// `(1/M) Σ_k σ(f̃([x, x_k]))` is largest, with that score.
pub fn sampled_copeland_argmax(
    path: &SampledPath,
    candidates: &[Point],
    landmarks: &LandmarkSet,
) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(PboError::InvalidConfig("no candidates".into()));
    }
    let scores = sampled_copeland_scores(path, candidates, landmarks);
    let idx = argmax_first(&scores).unwrap_or(0);
    Ok((idx, scores[idx]))
}

pub fn sampled_copeland_scores(
    path: &SampledPath,
    candidates: &[Point],
    landmarks: &LandmarkSet,
) -> Vec<f64> {
    let values = path.eval_grid(candidates, landmarks.points());
    let m = landmarks.len() as f64;
    values
        .row_iter()
        .map(|row| row.iter().map(|&v| sigmoid(v)).sum::<f64>() / m)
        .collect()
}
