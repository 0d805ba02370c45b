//! Duel-selection policies driven by the preference model.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{Duel, Point};
use crate::copeland::{argmax_first, condorcet_winner_pruned, LandmarkSet, RowScorer};
use crate::error::{PboError, Result};
use crate::gp::{fit_laplace_warm, DuelDataset, LaplacePosterior};
use crate::thompson::{sample_basis, sample_latent_path, sampled_copeland_argmax, SampledPath};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Pe,
    Cei,
    Dts,
    Random,
    Sparring,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Pe, Policy::Cei, Policy::Dts, Policy::Random, Policy::Sparring];

    pub fn id(self) -> &'static str {
        match self {
            Policy::Pe => "pe",
            Policy::Cei => "cei",
            Policy::Dts => "dts",
            Policy::Random => "random",
            Policy::Sparring => "sparring",
        }
    }

    /// Whether the policy fits the GP preference model.
    pub fn uses_model(self) -> bool {
        matches!(self, Policy::Pe | Policy::Cei | Policy::Dts)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Policy {
    type Err = PboError;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.id() == s)
            .ok_or_else(|| PboError::UnknownPolicy(s.to_string()))
    }
}

/// The selected duel, given as indices into the candidate list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionChoice {
    pub duel: Duel,
    pub left_index: usize,
    pub right_index: usize,
    pub score: f64,
    pub policy: Policy,
    pub diagnostics: BTreeMap<String, f64>,
}

impl AcquisitionChoice {
    fn new(candidates: &[Point], (l, r): (usize, usize), score: f64, policy: Policy) -> Self {
        Self {
            duel: Duel::new(candidates[l].clone(), candidates[r].clone()),
            left_index: l,
            right_index: r,
            score,
            policy,
            diagnostics: BTreeMap::new(),
        }
    }
}

/// Every ordered pair `(i, j)` of `n` candidates, self-duels included, left
/// index major.
pub fn all_ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
}

/// `count` distinct ordered pairs drawn uniformly, in increasing flat order.
pub fn sampled_pairs<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let total = n * n;
    if count >= total {
        return all_ordered_pairs(n);
    }
    let mut flat = sample(rng, total, count).into_vec();
    flat.sort_unstable();
    flat.into_iter().map(|f| (f / n, f % n)).collect()
}

fn check_pairs(candidates: &[Point], pairs: &[(usize, usize)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(PboError::InvalidConfig("no candidate duels".into()));
    }
    let n = candidates.len();
    match pairs.iter().find(|&&(l, r)| l >= n || r >= n) {
        Some(&(l, r)) => Err(PboError::ArmOutOfRange { index: l.max(r), arms: n }),
        None => Ok(()),
    }
}

/// The candidate duel with the largest `V[σ(f⋆)]`.
pub fn acq_pure_exploration(
    post: &LaplacePosterior,
    candidates: &[Point],
    pairs: &[(usize, usize)],
) -> Result<AcquisitionChoice> {
    check_pairs(candidates, pairs)?;
    let var: Vec<f64> = post
        .predict_pairs(candidates, pairs)
        .iter()
        .map(|p| p.var_sigma)
        .collect();
    let best = argmax_first(&var).unwrap_or(0);
    Ok(AcquisitionChoice::new(candidates, pairs[best], var[best], Policy::Pe))
}

/// Score of the current Condorcet winner.
pub fn condorcet_value(
    post: &LaplacePosterior,
    candidates: &[Point],
    landmarks: &LandmarkSet,
) -> Result<f64> {
    Ok(condorcet_winner_pruned(post, candidates, landmarks)?.1)
}

/// Ingredients of the expected improvement of one candidate duel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CeiTerms {
    /// `π([x, x'])` under the current model.
    pub prob_left: f64,
    /// `π([x', x])` under the current model.
    pub prob_right: f64,
    /// Winner score after adding the duel won by `x`.
    pub value_left_wins: f64,
    /// Winner score after adding the duel won by `x'`.
    pub value_right_wins: f64,
    /// Winner score of the current model.
    pub incumbent: f64,
}

impl CeiTerms {
    pub fn value(&self) -> f64 {
        self.prob_left * (self.value_left_wins - self.incumbent).max(0.0)
            + self.prob_right * (self.value_right_wins - self.incumbent).max(0.0)
    }
}

/// Refits at fixed hyperparameters with `[x_i, x_j]` won by `x_i`, caching by
/// ordered pair: the duel `[x_j, x_i]` won by `x_j` yields the same data.
struct Fantasies<'a> {
    post: &'a LaplacePosterior,
    raw: &'a DuelDataset,
    candidates: &'a [Point],
    landmarks: &'a LandmarkSet,
    cache: HashMap<(usize, usize), Option<f64>>,
    failures: usize,
}

impl Fantasies<'_> {
    fn value(&mut self, winner: usize, loser: usize) -> Option<f64> {
        if let Some(v) = self.cache.get(&(winner, loser)) {
            return *v;
        }
        let v = self.compute(winner, loser);
        if v.is_none() {
            self.failures += 1;
            tracing::warn!(winner, loser, "fantasy refit failed; candidate skipped");
        }
        self.cache.insert((winner, loser), v);
        v
    }

    fn compute(&self, winner: usize, loser: usize) -> Option<f64> {
        let mut raw = self.raw.clone();
        let duel = Duel::new(self.candidates[winner].clone(), self.candidates[loser].clone());
        raw.push(duel, 1).ok()?;
        let data = raw.augment_symmetric();
        // Warm start: old coefficients with zeros for the new duel and its mirror.
        let n = self.raw.len();
        let old = self.post.alpha();
        let mut warm = Vec::with_capacity(2 * n + 2);
        if old.len() == 2 * n {
            warm.extend(old.iter().take(n));
            warm.push(0.0);
            warm.extend(old.iter().skip(n));
            warm.push(0.0);
        }
        let fpost = fit_laplace_warm(&data, self.post.params(), &warm).ok()?;
        condorcet_winner_pruned(&fpost, self.candidates, self.landmarks)
            .ok()
            .map(|(_, s)| s)
    }
}

/// Improvement terms for every candidate duel; `None` where a fantasy refit
/// failed.
pub fn cei_terms(
    post: &LaplacePosterior,
    raw: &DuelDataset,
    candidates: &[Point],
    pairs: &[(usize, usize)],
    landmarks: &LandmarkSet,
) -> Result<Vec<Option<CeiTerms>>> {
    check_pairs(candidates, pairs)?;
    let incumbent = condorcet_value(post, candidates, landmarks)?;
    let forward = post.predict_pairs(candidates, pairs);
    let mirrored: Vec<(usize, usize)> = pairs.iter().map(|&(l, r)| (r, l)).collect();
    let backward = post.predict_pairs(candidates, &mirrored);
    let mut fantasies = Fantasies {
        post,
        raw,
        candidates,
        landmarks,
        cache: HashMap::new(),
        failures: 0,
    };
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, &(l, r))| {
            Some(CeiTerms {
                prob_left: forward[k].prob,
                prob_right: backward[k].prob,
                value_left_wins: fantasies.value(l, r)?,
                value_right_wins: fantasies.value(r, l)?,
                incumbent,
            })
        })
        .collect())
}

/// One-step lookahead expected gain in the Condorcet winner's score.
///
/// `post` must be the fit of `raw` after mirror augmentation; fantasies are
/// refitted at its hyperparameters.
pub fn acq_cei(
    post: &LaplacePosterior,
    raw: &DuelDataset,
    candidates: &[Point],
    pairs: &[(usize, usize)],
    landmarks: &LandmarkSet,
) -> Result<AcquisitionChoice> {
    let terms = cei_terms(post, raw, candidates, pairs, landmarks)?;
    let values: Vec<f64> = terms
        .iter()
        .map(|t| t.map_or(f64::NAN, |t| t.value()))
        .collect();
    let skipped = values.iter().filter(|v| v.is_nan()).count();
    let best = argmax_first(&values).ok_or(PboError::NotConverged {
        iterations: 0,
        grad_norm: f64::NAN,
    })?;
    let mut choice = AcquisitionChoice::new(candidates, pairs[best], values[best], Policy::Cei);
    choice
        .diagnostics
        .insert("incumbent".into(), terms[best].map_or(f64::NAN, |t| t.incumbent));
    choice.diagnostics.insert("skipped".into(), skipped as f64);
    Ok(choice)
}

/// Dueling-Thompson sampling; also returns the sampled path.
pub fn acq_dts_detailed<R: Rng + ?Sized>(
    post: &LaplacePosterior,
    n_features: usize,
    candidates: &[Point],
    landmarks: &LandmarkSet,
    rng: &mut R,
) -> Result<(AcquisitionChoice, SampledPath)> {
    if candidates.is_empty() {
        return Err(PboError::InvalidConfig("no candidates".into()));
    }
    let basis = sample_basis(post.params(), n_features, rng)?;
    let path = sample_latent_path(post, &basis, rng)?;
    let (left, sampled_score) = sampled_copeland_argmax(&path, candidates, landmarks)?;

    let slice = RowScorer::new(post, candidates).predictions(&candidates[left]);
    let var: Vec<f64> = slice
        .iter()
        .enumerate()
        .map(|(j, p)| if j == left { f64::NAN } else { p.var_sigma })
        .collect();
    let right = argmax_first(&var).unwrap_or(left);
    let score = slice[right].var_sigma;

    let mut choice = AcquisitionChoice::new(candidates, (left, right), score, Policy::Dts);
    choice.diagnostics.insert("sampled_copeland".into(), sampled_score);
    Ok((choice, path))
}

/// Left member: argmax of a sampled path's soft-Copeland score. Right member:
/// the other candidate maximizing `V[σ(f⋆)]` against it.
pub fn acq_dts<R: Rng + ?Sized>(
    post: &LaplacePosterior,
    n_features: usize,
    candidates: &[Point],
    landmarks: &LandmarkSet,
    rng: &mut R,
) -> Result<AcquisitionChoice> {
    acq_dts_detailed(post, n_features, candidates, landmarks, rng).map(|(c, _)| c)
}

/// What a model-based policy chooses from.
#[derive(Clone, Copy, Debug)]
pub struct ProposalContext<'a> {
    pub candidates: &'a [Point],
    pub landmarks: &'a LandmarkSet,
    pub features: usize,
    /// Above one dimension CEI scores a random subsample of this many duels.
    pub cei_max_duels: usize,
}

/// Dispatches to the acquisition of a model-based policy. `rng` feeds DTS
/// paths and the CEI candidate subsample.
pub fn propose<R: Rng + ?Sized>(
    policy: Policy,
    post: &LaplacePosterior,
    raw: &DuelDataset,
    ctx: &ProposalContext<'_>,
    rng: &mut R,
) -> Result<AcquisitionChoice> {
    let n = ctx.candidates.len();
    match policy {
        Policy::Pe => acq_pure_exploration(post, ctx.candidates, &all_ordered_pairs(n)),
        Policy::Cei => {
            let one_dim = ctx.candidates.first().is_some_and(|c| c.len() == 1);
            let pairs = if one_dim || n * n <= ctx.cei_max_duels {
                all_ordered_pairs(n)
            } else {
                sampled_pairs(n, ctx.cei_max_duels, rng)
            };
            acq_cei(post, raw, ctx.candidates, &pairs, ctx.landmarks)
        }
        Policy::Dts => acq_dts(post, ctx.features, ctx.candidates, ctx.landmarks, rng),
        Policy::Random | Policy::Sparring => Err(PboError::InvalidConfig(format!(
            "policy `{policy}` does not use the preference model"
        ))),
    }
}
