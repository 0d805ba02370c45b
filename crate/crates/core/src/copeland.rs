//! Soft-Copeland scores and the Condorcet winner.
//!
//! The soft-Copeland score of `x` is the average probability that `x` wins a
//! duel against a landmark, `C(x) = (1/M) Σ_k π([x, x_k])`. The Condorcet
//! winner is the candidate with the largest score, the lowest index winning
//! exact ties.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bench::{make_grid, sigmoid, Benchmark, Domain, Point};
use crate::error::{PboError, Result};
use crate::gp::{sigmoid_mean, LaplacePosterior, PreferencePrediction};
use crate::rng::{stream_rng, Stream};

/// Anything that assigns a win probability to the left member of a duel.
pub trait PreferenceFunction {
    fn preference(&self, left: &[f64], right: &[f64]) -> f64;

    /// `out[k] = preference(left, rights[k])`.
    fn preference_row(&self, left: &[f64], rights: &[Point]) -> Vec<f64> {
        rights.iter().map(|r| self.preference(left, r)).collect()
    }

    /// `out[(g, k)] = preference(lefts[g], rights[k])`.
    fn preference_matrix(&self, lefts: &[Point], rights: &[Point]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(lefts.len(), rights.len());
        for (g, l) in lefts.iter().enumerate() {
            for (k, v) in self.preference_row(l, rights).into_iter().enumerate() {
                out[(g, k)] = v;
            }
        }
        out
    }
}

impl PreferenceFunction for LaplacePosterior {
    fn preference(&self, left: &[f64], right: &[f64]) -> f64 {
        let mut x = left.to_vec();
        x.extend_from_slice(right);
        let (m, v) = self.latent(&x).expect("duel matches the model dimension");
        PreferencePrediction::from_latent(m, v).prob
    }

    fn preference_row(&self, left: &[f64], rights: &[Point]) -> Vec<f64> {
        RowScorer::new(self, rights).probs(left)
    }

    fn preference_matrix(&self, lefts: &[Point], rights: &[Point]) -> DMatrix<f64> {
        let scorer = RowScorer::new(self, rights);
        let mut out = DMatrix::zeros(lefts.len(), rights.len());
        for (g, l) in lefts.iter().enumerate() {
            for (k, v) in scorer.probs(l).into_iter().enumerate() {
                out[(g, k)] = v;
            }
        }
        out
    }
}

/// Preferences computed from the true objective, `σ(g(x') - g(x))`.
#[derive(Clone, Copy, Debug)]
pub struct ExactPreference(pub Benchmark);

impl PreferenceFunction for ExactPreference {
    fn preference(&self, left: &[f64], right: &[f64]) -> f64 {
        sigmoid(self.0.eval_unchecked(right) - self.0.eval_unchecked(left))
    }

    fn preference_row(&self, left: &[f64], rights: &[Point]) -> Vec<f64> {
        let gl = self.0.eval_unchecked(left);
        rights
            .iter()
            .map(|r| sigmoid(self.0.eval_unchecked(r) - gl))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LandmarkOrigin {
    Grid,
    Uniform { seed: u64 },
}

/// The points the Copeland integral is averaged over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<Point>,
    origin: LandmarkOrigin,
}

impl LandmarkSet {
    /// Every point of the domain's evaluation grid.
    pub fn grid(domain: &Domain) -> Result<Self> {
        Ok(Self {
            points: make_grid(domain)?,
            origin: LandmarkOrigin::Grid,
        })
    }

    /// `count` uniform draws from the domain box.
    pub fn uniform(domain: &Domain, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(PboError::InvalidConfig("need at least one landmark".into()));
        }
        let mut rng = stream_rng(seed, Stream::Landmarks, 0);
        Ok(Self {
            points: (0..count).map(|_| domain.sample_uniform(&mut rng)).collect(),
            origin: LandmarkOrigin::Uniform { seed },
        })
    }

    pub fn from_points(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(PboError::InvalidConfig("need at least one landmark".into()));
        }
        Ok(Self {
            points,
            origin: LandmarkOrigin::Grid,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn origin(&self) -> LandmarkOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopelandEstimate {
    pub candidates: Vec<Point>,
    pub scores: Vec<f64>,
    pub winner_index: usize,
    pub winner_score: f64,
}

impl CopelandEstimate {
    pub fn winner(&self) -> &Point {
        &self.candidates[self.winner_index]
    }
}

/// Mean of the row, summed in landmark order.
fn row_mean(row: &[f64]) -> f64 {
    row.iter().sum::<f64>() / row.len() as f64
}

/// First index of the maximum; NaN never wins.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) && !v.is_nan() {
            best = Some(i);
        }
    }
    best
}

pub fn soft_copeland_at<P: PreferenceFunction + ?Sized>(
    pref: &P,
    x: &[f64],
    landmarks: &LandmarkSet,
) -> f64 {
    row_mean(&pref.preference_row(x, landmarks.points()))
}

/// Scores every candidate and returns the argmax.
pub fn condorcet_winner<P: PreferenceFunction + ?Sized>(
    pref: &P,
    candidates: &[Point],
    landmarks: &LandmarkSet,
) -> Result<CopelandEstimate> {
    if candidates.is_empty() {
        return Err(PboError::InvalidConfig("no candidates".into()));
    }
    let probs = pref.preference_matrix(candidates, landmarks.points());
    let scores: Vec<f64> = probs
        .row_iter()
        .map(|row| row_mean(&row.iter().copied().collect::<Vec<_>>()))
        .collect();
    let winner_index = argmax_first(&scores).unwrap_or(0);
    Ok(CopelandEstimate {
        candidates: candidates.to_vec(),
        winner_score: scores[winner_index],
        scores,
        winner_index,
    })
}

/// Row-at-a-time GP preference evaluation against a fixed set of right points.
pub(crate) struct RowScorer<'a> {
    post: &'a LaplacePosterior,
    batch: crate::gp::BatchPredictor<'a>,
    right_factors: DMatrix<f64>,
}

impl<'a> RowScorer<'a> {
    pub(crate) fn new(post: &'a LaplacePosterior, rights: &[Point]) -> Self {
        let batch = post.batch();
        let right_factors = batch.right_factors(rights);
        Self {
            post,
            batch,
            right_factors,
        }
    }

    pub(crate) fn predictions(&self, left: &[f64]) -> Vec<PreferencePrediction> {
        let lf = self.batch.left_factors(&[left.to_vec()]);
        let (mean, var) = self.batch.latent_row(lf.column(0), &self.right_factors);
        mean.into_iter()
            .zip(var)
            .map(|(m, v)| PreferencePrediction::from_latent(m, v))
            .collect()
    }

    pub(crate) fn probs(&self, left: &[f64]) -> Vec<f64> {
        self.predictions(left).into_iter().map(|p| p.prob).collect()
    }

    /// Latent means only; much cheaper than [`Self::predictions`].
    fn means(&self, lefts: &[Point]) -> DMatrix<f64> {
        let lf = self.batch.left_factors(lefts);
        let sv = self.post.params().signal_variance;
        let mut weighted = lf;
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= sv * self.post.lik_grad()[i];
        }
        weighted.transpose() * &self.right_factors
    }
}

/// Resolution of the tabulated bound for negative latent means.
const BOUND_TABLE: usize = 4096;

/// The GP Condorcet winner without scoring every candidate in full.
///
/// For a fixed latent mean `m`, `E[σ(f)]` under `f ~ N(m, v)` moves
/// monotonically from `σ(m)` towards one half as `v` grows, and the latent
/// variance never exceeds the signal variance. That brackets every score from
/// the latent means alone; candidates are then scored exactly in order of
/// decreasing upper bound until no bound can beat the incumbent. The winner
/// and its score are bit-identical to [`condorcet_winner`].
pub fn condorcet_winner_pruned(
    post: &LaplacePosterior,
    candidates: &[Point],
    landmarks: &LandmarkSet,
) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(PboError::InvalidConfig("no candidates".into()));
    }
    let scorer = RowScorer::new(post, landmarks.points());
    if post.is_empty() {
        return Ok((0, row_mean(&scorer.probs(&candidates[0]))));
    }
    let sv = post.params().signal_variance;
    let means = scorer.means(candidates);
    let m = landmarks.len() as f64;
    // `sigmoid_mean(μ, s²)` increases with `μ`, so on large grids its value
    // at the next table point up bounds it for every negative mean in between.
    let tabulate = means.iter().filter(|&&mu| mu < 0.0).count() > BOUND_TABLE;
    let lowest = means.min().min(0.0);
    let step = -lowest / (BOUND_TABLE - 1) as f64;
    let table: Vec<f64> = if tabulate {
        (0..BOUND_TABLE)
            .map(|j| sigmoid_mean((lowest + j as f64 * step).min(0.0), sv))
            .collect()
    } else {
        Vec::new()
    };
    let negative_bound = |mu: f64| {
        if tabulate {
            let j = ((mu - lowest) / step).ceil() as usize;
            table[j.min(BOUND_TABLE - 1)]
        } else {
            sigmoid_mean(mu, sv)
        }
    };
    let upper: Vec<f64> = means
        .row_iter()
        .map(|row| {
            row.iter()
                .map(|&mu| if mu >= 0.0 { sigmoid(mu) } else { negative_bound(mu) })
                .sum::<f64>()
                / m
        })
        .collect();

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| upper[b].total_cmp(&upper[a]).then(a.cmp(&b)));

    // Slack covers quadrature error in the bounds and rounding in the sums.
    const SLACK: f64 = 1e-8;
    let mut best: Option<(usize, f64)> = None;
    for g in order {
        if let Some((_, s)) = best {
            if upper[g] + SLACK < s {
                break;
            }
        }
        let score = row_mean(&scorer.probs(&candidates[g]));
        best = match best {
            Some((bi, bs)) if bs > score || (bs == score && bi < g) => Some((bi, bs)),
            _ => Some((g, score)),
        };
    }
    Ok(best.expect("at least one candidate is scored"))
}

/// Hard Copeland score: fraction of landmarks `x` beats with probability
/// above one half. Kept for diagnostics only.
pub fn hard_copeland_at<P: PreferenceFunction + ?Sized>(
    pref: &P,
    x: &[f64],
    landmarks: &LandmarkSet,
) -> f64 {
    let row = pref.preference_row(x, landmarks.points());
    row.iter().filter(|&&p| p > 0.5).count() as f64 / row.len() as f64
}
