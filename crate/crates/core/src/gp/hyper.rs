//! Point estimates of the kernel hyperparameters by maximizing the Laplace
//! evidence.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::DuelDataset;
use super::kernel::KernelParams;
use super::laplace::{fit_laplace_warm, LaplacePosterior};
use crate::bench::{sigmoid, Domain};
use crate::error::{PboError, Result};
use crate::rng::{stream_rng, Stream};

/// Hyperparameters are re-optimized after every new duel up to this many...
pub const REFIT_EVERY_UNTIL: usize = 25;
/// ...and after every fifth one beyond.
pub const REFIT_EVERY: usize = 5;

const ASCENT_ITERS: usize = 30;
const RESTARTS: usize = 2;
const PERTURB_SD: f64 = 0.5;
const ARMIJO: f64 = 1e-4;

/// Box constraints on the signal variance and per-dimension lengthscales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub signal_variance: (f64, f64),
    /// One interval per search-space dimension; both duel halves share it.
    pub lengthscales: Vec<(f64, f64)>,
}

impl HyperBounds {
    pub fn for_domain(domain: &Domain) -> Self {
        Self {
            signal_variance: (0.05, 10.0),
            lengthscales: domain.ranges().iter().map(|r| (0.02 * r, 2.0 * r)).collect(),
        }
    }

    fn validate(&self, q: usize) -> Result<()> {
        if self.lengthscales.len() != q {
            return Err(PboError::DimensionMismatch {
                expected: q,
                got: self.lengthscales.len(),
            });
        }
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !ok(self.signal_variance) || !self.lengthscales.iter().all(|&b| ok(b)) {
            return Err(PboError::InvalidParams("bounds must be positive intervals".into()));
        }
        Ok(())
    }

    fn log_box(&self) -> Vec<(f64, f64)> {
        std::iter::once(self.signal_variance)
            .chain(self.lengthscales.iter().copied())
            .map(|(lo, hi)| (lo.ln(), hi.ln()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperStatus {
    Improved,
    /// No start beat the initial evidence; the initial parameters are kept.
    NoImprovement,
    /// Not even the initial parameters could be fitted.
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperFit {
    pub params: KernelParams,
    pub log_marginal: f64,
    pub status: HyperStatus,
}

/// Gradient of the Laplace evidence at a fitted posterior, with respect to
/// `log s²` and then `log ℓ` for each group of lengthscale indices (a group
/// moves its lengthscales together).
pub(crate) fn evidence_gradient(post: &LaplacePosterior, groups: &[Vec<usize>]) -> Vec<f64> {
    let params = post.params();
    let n = post.len();
    let k = post.gram();
    let a = post.alpha();
    let grad_lik = post.lik_grad();
    let (r, post_var) = post.evidence_terms(&k);

    // Third derivative of the log-likelihood at the mode.
    let third: DVector<f64> = post.mode().map(|f| {
        let p = sigmoid(f);
        -p * (1.0 - p) * (1.0 - 2.0 * p)
    });
    // Sensitivity of the log-determinant term to the mode.
    let s2 = DVector::from_fn(n, |i, _| 0.5 * post_var[i] * third[i]);

    let inputs = post.inputs();
    let sv = params.signal_variance;
    let mut out = Vec::with_capacity(1 + groups.len());
    let mut derivative = |dk: &DMatrix<f64>| {
        let trace: f64 = r.iter().zip(dk.iter()).map(|(x, y)| x * y).sum();
        let s1 = 0.5 * a.dot(&(dk * a)) - 0.5 * trace;
        let b = dk * grad_lik;
        let s3 = &b - &k * (&r * &b);
        out.push(s1 + s2.dot(&s3));
    };

    let mut k_se = k.clone();
    k_se.fill_diagonal(sv);
    derivative(&k_se);
    let mut dk = DMatrix::zeros(n, n);
    for group in groups {
        for j in 0..n {
            for i in 0..n {
                let dist: f64 = group
                    .iter()
                    .map(|&d| {
                        let t = (inputs[i][d] - inputs[j][d]) / params.lengthscales[d];
                        t * t
                    })
                    .sum();
                dk[(i, j)] = k_se[(i, j)] * dist;
            }
        }
        derivative(&dk);
    }
    out
}

/// Laplace log evidence and its gradient over the log-hyperparameters
/// `[log s², log ℓ_1, ..., log ℓ_2q]`, for the dataset exactly as given.
pub fn log_marginal_and_grad(dataset: &DuelDataset, params: &KernelParams) -> Result<(f64, Vec<f64>)> {
    let post = fit_laplace_warm(dataset, params, &[])?;
    let groups: Vec<Vec<usize>> = (0..params.duel_dim()).map(|d| vec![d]).collect();
    Ok((post.log_marginal(), evidence_gradient(&post, &groups)))
}

/// Free variables `[log s², log ℓ_1..q]`; both halves share the lengthscales
/// so that the fitted model respects the left/right exchange symmetry.
fn pack(params: &KernelParams) -> Vec<f64> {
    let q = params.point_dim();
    std::iter::once(params.signal_variance.ln())
        .chain((0..q).map(|d| (params.lengthscales[d] * params.lengthscales[d + q]).sqrt().ln()))
        .collect()
}

/// Back to linear scale, clamped so that `exp(ln hi)` cannot overshoot `hi`.
fn unpack(z: &[f64], jitter: f64, bounds: &HyperBounds) -> KernelParams {
    let clamp = |v: f64, (lo, hi): (f64, f64)| v.exp().clamp(lo, hi);
    let half: Vec<f64> = z[1..]
        .iter()
        .zip(&bounds.lengthscales)
        .map(|(&v, &b)| clamp(v, b))
        .collect();
    KernelParams {
        signal_variance: clamp(z[0], bounds.signal_variance),
        lengthscales: half.iter().chain(&half).copied().collect(),
        jitter,
    }
}

struct Objective<'a> {
    dataset: &'a DuelDataset,
    bounds: &'a HyperBounds,
    jitter: f64,
    warm: Vec<f64>,
}

impl Objective<'_> {
    fn eval(&mut self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        let params = unpack(z, self.jitter, self.bounds);
        let post = fit_laplace_warm(self.dataset, &params, &self.warm).ok()?;
        let q = params.point_dim();
        let groups: Vec<Vec<usize>> = (0..q).map(|d| vec![d, d + q]).collect();
        let g = evidence_gradient(&post, &groups);
        self.warm = post.alpha().iter().copied().collect();
        let v = post.log_marginal();
        (v.is_finite() && g.iter().all(|x| x.is_finite())).then_some((v, g))
    }
}

fn project(z: &mut [f64], lims: &[(f64, f64)]) {
    for (v, &(lo, hi)) in z.iter_mut().zip(lims) {
        *v = v.clamp(lo, hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected gradient ascent with Barzilai–Borwein steps and Armijo
/// backtracking along the projection arc.
fn ascend(obj: &mut Objective<'_>, z0: Vec<f64>, lims: &[(f64, f64)]) -> Option<(Vec<f64>, f64)> {
    let mut z = z0;
    project(&mut z, lims);
    let (mut v, mut g) = obj.eval(&z)?;
    let mut step = 0.1 / g.iter().fold(1e-12_f64, |m, x| m.max(x.abs()));

    for _ in 0..ASCENT_ITERS {
        let mut accepted = None;
        let mut t = step;
        while t > 1e-12 {
            let mut z_try: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi + t * gi).collect();
            project(&mut z_try, lims);
            let s: Vec<f64> = z_try.iter().zip(&z).map(|(a, b)| a - b).collect();
            if s.iter().all(|x| x.abs() < 1e-10) {
                return Some((z, v));
            }
            if let Some((v_try, g_try)) = obj.eval(&z_try) {
                if v_try >= v + ARMIJO * dot(&g, &s) {
                    accepted = Some((z_try, v_try, g_try, s));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((z_new, v_new, g_new, s)) = accepted else {
            break;
        };
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy < 0.0 { (dot(&s, &s) / -sy).clamp(1e-6, 1e3) } else { (2.0 * t).min(1e3) };
        let gain = v_new - v;
        z = z_new;
        v = v_new;
        g = g_new;
        if gain < 1e-9 * (1.0 + v.abs()) {
            break;
        }
    }
    Some((z, v))
}

/// Multi-start maximization of the evidence over `(s², ℓ)` with tied halves:
/// one start at `init` (projected into the bounds) and two log-normal
/// perturbations of it drawn from `rng`.
pub fn optimize_hyperparams<R: Rng + ?Sized>(
    dataset: &DuelDataset,
    init: &KernelParams,
    bounds: &HyperBounds,
    rng: &mut R,
) -> Result<HyperFit> {
    init.validate()?;
    bounds.validate(init.point_dim())?;
    if dataset.is_empty() {
        return Err(PboError::EmptyDataset);
    }
    let lims = bounds.log_box();
    let mut obj = Objective {
        dataset,
        bounds,
        jitter: init.jitter,
        warm: Vec::new(),
    };
    let init_value = fit_laplace_warm(dataset, init, &[]).ok().map(|p| p.log_marginal());

    let z0 = pack(init);
    let perturb = Normal::new(0.0, PERTURB_SD).expect("positive standard deviation");
    let mut starts = vec![z0.clone()];
    for _ in 0..RESTARTS {
        starts.push(z0.iter().map(|v| v + perturb.sample(rng)).collect());
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        obj.warm.clear();
        if let Some((z, v)) = ascend(&mut obj, start, &lims) {
            if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                best = Some((z, v));
            }
        }
    }

    let fit = match (best, init_value) {
        (Some((z, v)), Some(v0)) if v > v0 + 1e-9 => HyperFit {
            params: unpack(&z, init.jitter, bounds),
            log_marginal: v,
            status: HyperStatus::Improved,
        },
        (_, Some(v0)) => HyperFit {
            params: init.clone(),
            log_marginal: v0,
            status: HyperStatus::NoImprovement,
        },
        (Some((z, v)), None) => HyperFit {
            params: unpack(&z, init.jitter, bounds),
            log_marginal: v,
            status: HyperStatus::Improved,
        },
        (None, None) => HyperFit {
            params: init.clone(),
            log_marginal: f64::NEG_INFINITY,
            status: HyperStatus::Failed,
        },
    };
    if fit.status != HyperStatus::Improved {
        tracing::warn!(status = ?fit.status, n = dataset.len(), "hyperparameter search kept the initial values");
    }
    Ok(fit)
}

/// Hyperparameters as a pure function of the observation history.
///
/// `θ_N` for `N` raw duels is `θ_{N-1}` re-optimized on the first `N` duels
/// when `N ≤ REFIT_EVERY_UNTIL` or `N` is a multiple of `REFIT_EVERY`, and
/// `θ_{N-1}` otherwise. Replaying the same history therefore always lands
/// on the same parameters, however the calls were batched.
#[derive(Clone, Debug)]
pub struct ModelRefitter {
    params: KernelParams,
    bounds: HyperBounds,
    seed: u64,
    upto: usize,
}

impl ModelRefitter {
    pub fn new(init: KernelParams, bounds: HyperBounds, seed: u64) -> Self {
        Self {
            params: init,
            bounds,
            seed,
            upto: 0,
        }
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Number of raw duels the current parameters account for.
    pub fn observed(&self) -> usize {
        self.upto
    }

    pub fn is_refit_step(n: usize) -> bool {
        n <= REFIT_EVERY_UNTIL || n % REFIT_EVERY == 0
    }

    /// Advances the schedule to `raw.len()` duels and returns `θ_N`.
    pub fn advance(&mut self, raw: &DuelDataset) -> Result<&KernelParams> {
        if raw.len() < self.upto {
            return Err(PboError::InvalidConfig(format!(
                "history shrank from {} to {} duels",
                self.upto,
                raw.len()
            )));
        }
        for n in self.upto + 1..=raw.len() {
            if Self::is_refit_step(n) {
                let data = raw.prefix(n).augment_symmetric();
                let mut rng = stream_rng(self.seed, Stream::Hyper, n as u64);
                let fit = optimize_hyperparams(&data, &self.params, &self.bounds, &mut rng)?;
                self.params = fit.params;
            }
            self.upto = n;
        }
        Ok(&self.params)
    }

    /// `θ_N` followed by a fit on the mirror-augmented history.
    pub fn fit(&mut self, raw: &DuelDataset) -> Result<LaplacePosterior> {
        let params = self.advance(raw)?.clone();
        super::laplace::fit_preference_model(raw, &params)
    }
}
