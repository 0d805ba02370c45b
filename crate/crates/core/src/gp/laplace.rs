//! Laplace approximation of the GP-classification posterior.
//!
//! The logistic likelihood `p(y | f) = σ((2y - 1) f)` is combined with a
//! zero-mean GP prior over the duel reward `f`. Newton's method finds the
//! posterior mode using the `B = I + W^½ K W^½` parameterization, which stays
//! well conditioned even when the Gram matrix itself is nearly singular
//! (repeated duels).

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use super::dataset::DuelDataset;
use super::kernel::{gram, half_factors, kernel_eval, KernelParams};
use super::quadrature::sigmoid_moments;
use crate::bench::{sigmoid, Duel, Point};
use crate::error::{PboError, Result};

/// Max-norm of the log-posterior gradient accepted at the mode.
pub const MODE_TOL: f64 = 1e-6;
pub const MAX_NEWTON_ITERS: usize = 100;
/// The last Newton update must also be this small before we stop.
const STEP_TOL: f64 = 1e-9;

/// Predictive summary of one test duel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePrediction {
    pub latent_mean: f64,
    pub latent_var: f64,
    /// `π_f = E[σ(f⋆)]`, the probability that the left point wins.
    pub prob: f64,
    /// `V[σ(f⋆)]`, the epistemic part of the outcome variance.
    pub var_sigma: f64,
    /// `V[y⋆] = π_f (1 - π_f)`.
    pub var_y: f64,
}

impl PreferencePrediction {
    pub fn from_latent(latent_mean: f64, latent_var: f64) -> Self {
        let (p, var_sigma) = sigmoid_moments(latent_mean, latent_var);
        let prob = p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        Self {
            latent_mean,
            latent_var,
            prob,
            var_sigma,
            var_y: prob * (1.0 - prob),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LaplacePosterior {
    params: KernelParams,
    inputs: Vec<Vec<f64>>,
    labels: Vec<u8>,
    mode: DVector<f64>,
    /// `K⁻¹ f̂`, carried through Newton so warm starts need no solve.
    alpha: DVector<f64>,
    /// `∇ log p(y | f̂)`; drives the predictive mean.
    grad: DVector<f64>,
    hessian_diag: DVector<f64>,
    sqrt_w: DVector<f64>,
    factor: Factor,
    log_marginal: f64,
    iterations: usize,
    grad_norm: f64,
}

/// Factorization of `B = I + W^½ K W^½`.
#[derive(Clone, Debug)]
enum Factor {
    /// Lower Cholesky factor of `B`.
    Dense(DMatrix<f64>),
    /// Mirror-closed data under tied lengthscales: the second half of the
    /// duels is the first half swapped, with flipped labels. Then
    /// `K = [[A, B], [B, A]]`, the mode is `(u, -u)` and `W = diag(w, w)`, so
    /// in the basis `(e_i ∓ e_{i+N}) / √2` both `K` and `B` are block
    /// diagonal. These are the lower factors of the `A - B` and `A + B` blocks.
    Mirrored {
        minus: DMatrix<f64>,
        plus: DMatrix<f64>,
    },
}

/// `A ∓ B` for a Gram matrix `[[A, B], [B, A]]`.
fn mirror_blocks(k: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = k.nrows() / 2;
    let a = k.view((0, 0), (h, h));
    let b = k.view((0, h), (h, h));
    (a - b, a + b)
}

/// Back from the rotated basis: `Q diag(X, Y) Qᵀ` with `X` acting on the
/// antisymmetric and `Y` on the symmetric half.
fn unrotate(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let h = x.nrows();
    let mut out = DMatrix::zeros(2 * h, 2 * h);
    let same = (x + y) * 0.5;
    let cross = (y - x) * 0.5;
    out.view_mut((0, 0), (h, h)).copy_from(&same);
    out.view_mut((h, h), (h, h)).copy_from(&same);
    out.view_mut((0, h), (h, h)).copy_from(&cross);
    out.view_mut((h, 0), (h, h)).copy_from(&cross);
    out
}

fn is_mirror_closed(dataset: &DuelDataset, params: &KernelParams) -> bool {
    let n = dataset.len();
    let q = params.point_dim();
    if n == 0 || n % 2 == 1 || params.lengthscales[..q] != params.lengthscales[q..] {
        return false;
    }
    let h = n / 2;
    let (duels, labels) = (dataset.duels(), dataset.labels());
    (0..h).all(|i| {
        labels[h + i] == 1 - labels[i] && duels[h + i].left == duels[i].right && duels[h + i].right == duels[i].left
    })
}

/// `L⁻¹ W^½` for the lower factor `L` of `I + W^½ K W^½`.
fn whiten(l: &DMatrix<f64>, sqrt_w: DVectorView<'_, f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut g = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor has a positive diagonal");
    for (j, mut col) in g.column_iter_mut().enumerate() {
        col *= sqrt_w[j];
    }
    g
}

/// `R = W^½ B⁻¹ W^½` and `diag(K - K R K)` for one factor.
fn block_terms(l: &DMatrix<f64>, sqrt_w: DVectorView<'_, f64>, k: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let g = whiten(l, sqrt_w);
    let c = &g * k;
    let var = DVector::from_fn(k.nrows(), |i, _| k[(i, i)] - c.column(i).norm_squared());
    (g.transpose() * &g, var)
}

struct LikDerivs {
    grad: DVector<f64>,
    w: DVector<f64>,
    log_lik: f64,
}

fn log_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn lik_derivs(f: &DVector<f64>, labels: &[u8]) -> LikDerivs {
    let n = f.len();
    let mut grad = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let mut log_lik = 0.0;
    for i in 0..n {
        let p = sigmoid(f[i]);
        let y = f64::from(labels[i]);
        grad[i] = y - p;
        w[i] = p * (1.0 - p);
        log_lik += log_sigmoid((2.0 * y - 1.0) * f[i]);
    }
    LikDerivs { grad, w, log_lik }
}

/// Lower factor of `B = I + diag(s) K diag(s)`.
fn b_factor(k: &DMatrix<f64>, sqrt_w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let b = DMatrix::from_fn(n, n, |i, j| {
        let v = sqrt_w[i] * k[(i, j)] * sqrt_w[j];
        if i == j {
            1.0 + v
        } else {
            v
        }
    });
    b.cholesky()
        .map(|c| c.l())
        .ok_or(PboError::NotPositiveDefinite("I + W^1/2 K W^1/2"))
}

/// One Newton proposal `a_new` from the current `(f, derivatives)`.
fn newton_direction(
    k: &DMatrix<f64>,
    f: &DVector<f64>,
    d: &LikDerivs,
) -> Result<DVector<f64>> {
    let sqrt_w = d.w.map(f64::sqrt);
    let l = b_factor(k, &sqrt_w)?;
    let b = d.w.component_mul(f) + &d.grad;
    let c = sqrt_w.component_mul(&(k * &b));
    let z = l
        .solve_lower_triangular(&c)
        .ok_or(PboError::NotPositiveDefinite("B"))?;
    let z = l
        .tr_solve_lower_triangular(&z)
        .ok_or(PboError::NotPositiveDefinite("B"))?;
    Ok(b - sqrt_w.component_mul(&z))
}

struct Mode {
    f: DVector<f64>,
    a: DVector<f64>,
    derivs: LikDerivs,
    iterations: usize,
    grad_norm: f64,
}

fn find_mode(k: &DMatrix<f64>, labels: &[u8], a0: DVector<f64>) -> Result<Mode> {
    let mut a = a0;
    let mut f = k * &a;
    let mut d = lik_derivs(&f, labels);
    let mut psi = -0.5 * a.dot(&f) + d.log_lik;
    let mut last_step = f64::INFINITY;

    for it in 0..=MAX_NEWTON_ITERS {
        let grad_norm = (&d.grad - &a).amax();
        if grad_norm < MODE_TOL && last_step < STEP_TOL {
            return Ok(Mode {
                f,
                a,
                derivs: d,
                iterations: it,
                grad_norm,
            });
        }
        if it == MAX_NEWTON_ITERS || !grad_norm.is_finite() {
            return Err(PboError::NotConverged {
                iterations: it,
                grad_norm,
            });
        }

        let direction = newton_direction(k, &f, &d)? - &a;
        let mut step = 1.0;
        loop {
            let a_try = &a + &direction * step;
            let f_try = k * &a_try;
            let d_try = lik_derivs(&f_try, labels);
            let psi_try = -0.5 * a_try.dot(&f_try) + d_try.log_lik;
            // Newton on this concave objective rarely overshoots; halve when it does.
            if psi_try >= psi - 1e-12 * psi.abs().max(1.0) || step < 1e-6 {
                last_step = (&f_try - &f).amax();
                a = a_try;
                f = f_try;
                d = d_try;
                psi = psi_try;
                break;
            }
            step *= 0.5;
        }
    }
    unreachable!("loop returns on its last iteration")
}

fn check_inputs(dataset: &DuelDataset, params: &KernelParams) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    if dataset.is_empty() {
        return Err(PboError::EmptyDataset);
    }
    let inputs = dataset.inputs();
    if let Some(bad) = inputs.iter().find(|x| x.len() != params.duel_dim()) {
        return Err(PboError::DimensionMismatch {
            expected: params.duel_dim(),
            got: bad.len(),
        });
    }
    Ok(inputs)
}

/// Newton fit from `f = 0`.
pub fn fit_laplace(dataset: &DuelDataset, params: &KernelParams) -> Result<LaplacePosterior> {
    fit_laplace_warm(dataset, params, &[])
}

/// Newton fit warm-started from `K⁻¹ f` coefficients of a previous fit; the
/// vector is zero-padded when the dataset has grown.
pub fn fit_laplace_warm(
    dataset: &DuelDataset,
    params: &KernelParams,
    warm_alpha: &[f64],
) -> Result<LaplacePosterior> {
    let inputs = check_inputs(dataset, params)?;
    let n = inputs.len();
    let k = gram(params, &inputs);
    let labels = dataset.labels().to_vec();
    if is_mirror_closed(dataset, params) {
        return fit_mirrored(params, inputs, labels, &k, warm_alpha);
    }
    let mut a0 = DVector::zeros(n);
    for (dst, src) in a0.iter_mut().zip(warm_alpha) {
        *dst = *src;
    }
    let mode = find_mode(&k, &labels, a0)?;

    let sqrt_w = mode.derivs.w.map(f64::sqrt);
    let chol = b_factor(&k, &sqrt_w)?;
    let log_det_half: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
    let log_marginal = -0.5 * mode.a.dot(&mode.f) + mode.derivs.log_lik - log_det_half;

    Ok(LaplacePosterior {
        params: params.clone(),
        inputs,
        labels,
        mode: mode.f,
        alpha: mode.a,
        grad: mode.derivs.grad,
        hessian_diag: mode.derivs.w,
        sqrt_w,
        factor: Factor::Dense(chol),
        log_marginal,
        iterations: mode.iterations,
        grad_norm: mode.grad_norm,
    })
}

/// Newton on the antisymmetric half alone: with `f = (u, -u)` the log
/// posterior is twice the usual one for kernel `A - B` and the first-half
/// labels.
fn fit_mirrored(
    params: &KernelParams,
    inputs: Vec<Vec<f64>>,
    labels: Vec<u8>,
    k: &DMatrix<f64>,
    warm_alpha: &[f64],
) -> Result<LaplacePosterior> {
    let n = inputs.len();
    let h = n / 2;
    let (k_minus, k_plus) = mirror_blocks(k);
    // A warm start from a smaller mirror-closed fit keeps its antisymmetric
    // coefficients in its first half.
    let mut a0 = DVector::zeros(h);
    for (dst, src) in a0.iter_mut().zip(&warm_alpha[..warm_alpha.len() / 2]) {
        *dst = *src;
    }
    let mode = find_mode(&k_minus, &labels[..h], a0)?;

    let sqrt_w = mode.derivs.w.map(f64::sqrt);
    let minus = b_factor(&k_minus, &sqrt_w)?;
    let plus = b_factor(&k_plus, &sqrt_w)?;
    let log_det_half: f64 = minus.diagonal().iter().chain(plus.diagonal().iter()).map(|v| v.ln()).sum();
    let log_marginal = 2.0 * (-0.5 * mode.a.dot(&mode.f) + mode.derivs.log_lik) - log_det_half;

    let mirror = |v: &DVector<f64>, sign: f64| DVector::from_fn(n, |i, _| if i < h { v[i] } else { sign * v[i - h] });
    Ok(LaplacePosterior {
        params: params.clone(),
        inputs,
        labels,
        mode: mirror(&mode.f, -1.0),
        alpha: mirror(&mode.a, -1.0),
        grad: mirror(&mode.derivs.grad, -1.0),
        hessian_diag: mirror(&mode.derivs.w, 1.0),
        sqrt_w: mirror(&sqrt_w, 1.0),
        factor: Factor::Mirrored { minus, plus },
        log_marginal,
        iterations: mode.iterations,
        grad_norm: mode.grad_norm,
    })
}

/// Fits the model on the mirror-augmented copy of raw observations.
pub fn fit_preference_model(raw: &DuelDataset, params: &KernelParams) -> Result<LaplacePosterior> {
    fit_laplace(&raw.augment_symmetric(), params)
}

impl LaplacePosterior {
    /// Posterior with no observations: predictions are the prior's.
    pub fn prior(params: &KernelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params: params.clone(),
            inputs: Vec::new(),
            labels: Vec::new(),
            mode: DVector::zeros(0),
            alpha: DVector::zeros(0),
            grad: DVector::zeros(0),
            hessian_diag: DVector::zeros(0),
            sqrt_w: DVector::zeros(0),
            factor: Factor::Dense(DMatrix::zeros(0, 0)),
            log_marginal: 0.0,
            iterations: 0,
            grad_norm: 0.0,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Latent values `f̂` at the training duels.
    pub fn mode(&self) -> &DVector<f64> {
        &self.mode
    }

    /// `K⁻¹ f̂`; pass to [`fit_laplace_warm`] to warm-start a refit.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Negative log-likelihood curvatures `W` at the mode.
    pub fn hessian_diag(&self) -> &DVector<f64> {
        &self.hessian_diag
    }

    /// `G` with `GᵀG = W^½ B⁻¹ W^½ = (K + W⁻¹)⁻¹`, so that the predictive
    /// variance at a duel is `s² - |G k⋆|²`.
    pub(crate) fn whitener(&self) -> DMatrix<f64> {
        match &self.factor {
            Factor::Dense(l) => whiten(l, self.sqrt_w.rows(0, self.len())),
            Factor::Mirrored { minus, plus } => {
                let h = self.len() / 2;
                let sw = self.sqrt_w.rows(0, h);
                let gm = whiten(minus, sw) * std::f64::consts::FRAC_1_SQRT_2;
                let gp = whiten(plus, sw) * std::f64::consts::FRAC_1_SQRT_2;
                let mut g = DMatrix::zeros(2 * h, 2 * h);
                g.view_mut((0, 0), (h, h)).copy_from(&gm);
                g.view_mut((0, h), (h, h)).copy_from(&-gm);
                g.view_mut((h, 0), (h, h)).copy_from(&gp);
                g.view_mut((h, h), (h, h)).copy_from(&gp);
                g
            }
        }
    }

    /// `|G v|²` without forming `G`.
    fn whitened_norm_sq(&self, v: &DVector<f64>) -> f64 {
        let solve = |l: &DMatrix<f64>, u: DVector<f64>| {
            l.solve_lower_triangular(&u)
                .expect("Cholesky factor has a positive diagonal")
                .norm_squared()
        };
        match &self.factor {
            Factor::Dense(l) => solve(l, self.sqrt_w.component_mul(v)),
            Factor::Mirrored { minus, plus } => {
                let h = self.len() / 2;
                let part = |sign: f64| DVector::from_fn(h, |i, _| self.sqrt_w[i] * (v[i] + sign * v[h + i]));
                0.5 * (solve(minus, part(-1.0)) + solve(plus, part(1.0)))
            }
        }
    }

    /// `R = W^½ B⁻¹ W^½` and the diagonal of the training posterior
    /// covariance, given the Gram matrix `k`; the pieces of the evidence
    /// gradient that need a cubic-cost inverse.
    pub(crate) fn evidence_terms(&self, k: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        match &self.factor {
            Factor::Dense(l) => block_terms(l, self.sqrt_w.rows(0, self.len()), k),
            Factor::Mirrored { minus, plus } => {
                let h = self.len() / 2;
                let sw = self.sqrt_w.rows(0, h);
                let (k_minus, k_plus) = mirror_blocks(k);
                let (r_minus, var_minus) = block_terms(minus, sw, &k_minus);
                let (r_plus, var_plus) = block_terms(plus, sw, &k_plus);
                let var = DVector::from_fn(2 * h, |i, _| 0.5 * (var_minus[i % h] + var_plus[i % h]));
                (unrotate(&r_minus, &r_plus), var)
            }
        }
    }

    pub(crate) fn lik_grad(&self) -> &DVector<f64> {
        &self.grad
    }

    /// Laplace approximation of the log evidence.
    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Max-norm of `∇ log p(y|f) - K⁻¹ f` at the returned mode.
    pub fn gradient_max_norm(&self) -> f64 {
        self.grad_norm
    }

    pub(crate) fn gram(&self) -> DMatrix<f64> {
        gram(&self.params, &self.inputs)
    }

    /// Max-norm change of `f̂` under one more Newton step.
    pub fn newton_step_change(&self) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let k = self.gram();
        let d = lik_derivs(&self.mode, &self.labels);
        let a_new = newton_direction(&k, &self.mode, &d)?;
        Ok((&k * a_new - &self.mode).amax())
    }

    /// Posterior covariance `(K⁻¹ + W)⁻¹` of the latent values at the training duels.
    pub fn training_covariance(&self) -> DMatrix<f64> {
        let k = self.gram();
        let block = |l: &DMatrix<f64>, k: &DMatrix<f64>| {
            let mut swk = k.clone();
            for (i, mut row) in swk.row_iter_mut().enumerate() {
                row *= self.sqrt_w[i];
            }
            let c = l
                .solve_lower_triangular(&swk)
                .expect("Cholesky factor has a positive diagonal");
            k - c.transpose() * &c
        };
        match &self.factor {
            Factor::Dense(l) => block(l, &k),
            Factor::Mirrored { minus, plus } => {
                let (k_minus, k_plus) = mirror_blocks(&k);
                unrotate(&block(minus, &k_minus), &block(plus, &k_plus))
            }
        }
    }

    /// Mean and variance of `f⋆` at a concatenated duel vector.
    pub fn latent(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.params.duel_dim() {
            return Err(PboError::DimensionMismatch {
                expected: self.params.duel_dim(),
                got: x.len(),
            });
        }
        let sv = self.params.signal_variance;
        if self.is_empty() {
            return Ok((0.0, sv));
        }
        let kstar = DVector::from_iterator(
            self.len(),
            self.inputs
                .iter()
                .map(|xi| kernel_eval(&self.params, xi, x).expect("dimensions checked")),
        );
        let mean = kstar.dot(&self.grad);
        Ok((mean, (sv - self.whitened_norm_sq(&kstar)).max(0.0)))
    }

    pub fn predict(&self, duel: &Duel) -> Result<PreferencePrediction> {
        let (m, v) = self.latent(&duel.concat())?;
        Ok(PreferencePrediction::from_latent(m, v))
    }

    pub fn batch(&self) -> BatchPredictor<'_> {
        BatchPredictor::new(self)
    }

    /// Predictions for index pairs `(left, right)` into `points`.
    pub fn predict_pairs(
        &self,
        points: &[Point],
        pairs: &[(usize, usize)],
    ) -> Vec<PreferencePrediction> {
        let batch = self.batch();
        let mut out = vec![PreferencePrediction::from_latent(0.0, 0.0); pairs.len()];
        let mut by_left: Vec<Vec<usize>> = vec![Vec::new(); points.len()];
        for (slot, &(l, _)) in pairs.iter().enumerate() {
            by_left[l].push(slot);
        }
        for (l, slots) in by_left.iter().enumerate() {
            if slots.is_empty() {
                continue;
            }
            let rights: Vec<Point> = slots.iter().map(|&s| points[pairs[s].1].clone()).collect();
            let left_factor = batch.left_factors(std::slice::from_ref(&points[l]));
            let right_factors = batch.right_factors(&rights);
            let (mean, var) = batch.latent_row(left_factor.column(0), &right_factors);
            for (k, &s) in slots.iter().enumerate() {
                out[s] = PreferencePrediction::from_latent(mean[k], var[k]);
            }
        }
        out
    }
}

pub fn predict_latent(posterior: &LaplacePosterior, duel: &Duel) -> Result<(f64, f64)> {
    posterior.latent(&duel.concat())
}

pub fn predict_preference(posterior: &LaplacePosterior, duel: &Duel) -> Result<PreferencePrediction> {
    posterior.predict(duel)
}

/// Vectorized predictions over products of left and right point sets.
///
/// With `a_i` and `b_i` the SE factors of training duel `i` against a left and
/// a right test point, `k⋆_i = s² a_i b_i`, so a whole row of test duels sharing
/// their left point costs one `N×N` by `N×M` product.
pub struct BatchPredictor<'a> {
    post: &'a LaplacePosterior,
    /// See [`LaplacePosterior::whitener`].
    whitened: DMatrix<f64>,
}

impl<'a> BatchPredictor<'a> {
    fn new(post: &'a LaplacePosterior) -> Self {
        Self {
            post,
            whitened: post.whitener(),
        }
    }

    /// `N × G` left-half factors.
    pub fn left_factors(&self, lefts: &[Point]) -> DMatrix<f64> {
        half_factors(&self.post.params, &self.post.inputs, 0, lefts)
    }

    /// `N × M` right-half factors.
    pub fn right_factors(&self, rights: &[Point]) -> DMatrix<f64> {
        let q = self.post.params.point_dim();
        half_factors(&self.post.params, &self.post.inputs, q, rights)
    }

    /// Latent means and variances for one left point against every column of
    /// `right_factors`.
    pub fn latent_row(
        &self,
        left_factor: DVectorView<'_, f64>,
        right_factors: &DMatrix<f64>,
    ) -> (Vec<f64>, Vec<f64>) {
        let sv = self.post.params.signal_variance;
        let m = right_factors.ncols();
        if self.post.is_empty() {
            return (vec![0.0; m], vec![sv; m]);
        }
        let weights = self.post.grad.component_mul(&left_factor) * sv;
        let mean = right_factors.tr_mul(&weights);
        let mut scaled = self.whitened.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= sv * left_factor[j];
        }
        let t = scaled * right_factors;
        let var = t
            .column_iter()
            .map(|c| (sv - c.norm_squared()).max(0.0))
            .collect();
        (mean.iter().copied().collect(), var)
    }

    /// `G × M` latent mean and variance matrices for all `[left, right]` duels.
    pub fn latent_grid(&self, lefts: &[Point], rights: &[Point]) -> (DMatrix<f64>, DMatrix<f64>) {
        let lf = self.left_factors(lefts);
        let rf = self.right_factors(rights);
        let mut mean = DMatrix::zeros(lefts.len(), rights.len());
        let mut var = DMatrix::zeros(lefts.len(), rights.len());
        for g in 0..lefts.len() {
            let (m, v) = self.latent_row(lf.column(g), &rf);
            for h in 0..rights.len() {
                mean[(g, h)] = m[h];
                var[(g, h)] = v[h];
            }
        }
        (mean, var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_1d() -> KernelParams {
        KernelParams::new(1.0, vec![0.3, 0.3], 1e-6).unwrap()
    }

    /// Newton on `log σ(f) - f²/2` in one dimension.
    fn scalar_mode(prior_var: f64) -> f64 {
        let mut f = 0.0;
        for _ in 0..100 {
            let p = sigmoid(f);
            let g = (1.0 - p) - f / prior_var;
            let h = -p * (1.0 - p) - 1.0 / prior_var;
            f -= g / h;
        }
        f
    }

    #[test]
    fn single_duel_mode_matches_scalar_newton() {
        let d = DuelDataset::from_parts(vec![Duel::new(vec![0.2], vec![0.8])], vec![1]).unwrap();
        let post = fit_laplace(&d, &params_1d()).unwrap();
        let expected = scalar_mode(1.0 + 1e-6);
        assert!(post.mode()[0] > 0.0);
        assert!((post.mode()[0] - expected).abs() < 1e-9);
        assert!(post.gradient_max_norm() < MODE_TOL);
    }

    #[test]
    fn mirrored_single_duel_is_antisymmetric() {
        let d = DuelDataset::from_parts(vec![Duel::new(vec![0.2], vec![0.8])], vec![1]).unwrap();
        let post = fit_preference_model(&d, &params_1d()).unwrap();
        assert!((post.mode()[0] + post.mode()[1]).abs() < 1e-8);
    }

    #[test]
    fn far_away_duels_revert_to_prior() {
        let d = DuelDataset::from_parts(vec![Duel::new(vec![0.2], vec![0.8])], vec![1]).unwrap();
        let post = fit_preference_model(&d, &params_1d()).unwrap();
        let (m, v) = post.latent(&[40.0, -30.0]).unwrap();
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn repeated_wins_push_mean_positive() {
        let duel = Duel::new(vec![0.1], vec![0.9]);
        let d = DuelDataset::from_parts(vec![duel.clone(); 50], vec![1; 50]).unwrap();
        let post = fit_preference_model(&d, &params_1d()).unwrap();
        let (m, v) = predict_latent(&post, &duel).unwrap();
        assert!(m > 0.0);
        assert!(v <= 1.0 + 1e-6);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            fit_laplace(&DuelDataset::new(), &params_1d()),
            Err(PboError::EmptyDataset)
        ));
    }

    #[test]
    fn batch_matches_single_predictions() {
        let duels = vec![
            Duel::new(vec![0.1], vec![0.5]),
            Duel::new(vec![0.7], vec![0.2]),
            Duel::new(vec![0.4], vec![0.9]),
        ];
        let d = DuelDataset::from_parts(duels, vec![1, 0, 1]).unwrap();
        let post = fit_preference_model(&d, &params_1d()).unwrap();
        let lefts: Vec<Point> = vec![vec![0.0], vec![0.35], vec![1.0]];
        let rights: Vec<Point> = vec![vec![0.2], vec![0.6]];
        let (mean, var) = post.batch().latent_grid(&lefts, &rights);
        for (g, l) in lefts.iter().enumerate() {
            for (h, r) in rights.iter().enumerate() {
                let (m, v) = predict_latent(&post, &Duel::new(l.clone(), r.clone())).unwrap();
                assert!((mean[(g, h)] - m).abs() < 1e-12);
                assert!((var[(g, h)] - v).abs() < 1e-12);
            }
        }
    }
}
