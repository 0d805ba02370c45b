//! One interactive optimization session as an event-sourced state machine.
//!
//! Every mutation is first expressed as an [`Event`]; the store persists it
//! and only then calls [`Session::apply`]. Replaying a log through `apply`
//! therefore rebuilds the live state exactly.

use pbo_core::acquisition::{propose, ProposalContext};
use pbo_core::baselines::random_duel_indices;
use pbo_core::bench::{make_grid, sample_duel_outcome};
use pbo_core::copeland::condorcet_winner;
use pbo_core::gp::{HyperBounds, ModelRefitter};
use pbo_core::harness::{initial_duel_indices, INITIAL_LENGTHSCALE_FRACTION};
use pbo_core::rng::{stream_rng, Stream};
use pbo_core::thompson::DEFAULT_FEATURES;
use pbo_core::{Benchmark, Domain, Duel, DuelDataset, KernelParams, LandmarkSet, LaplacePosterior, Point, Policy};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// Largest candidate grid a session accepts. Pure exploration scores every
/// ordered pair, so the cost grows with the square of this.
pub const MAX_CANDIDATES: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Uniform-random duels proposed before the model takes over.
    pub n_init: usize,
    pub grid_per_dim: usize,
    pub features: usize,
    pub seed: u64,
    pub cei_max_duels: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_init: 5,
            grid_per_dim: 33,
            features: DEFAULT_FEATURES,
            seed: 0,
            cei_max_duels: 500,
        }
    }
}

/// Body of a session creation request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    /// Search box. Optional for simulated sessions, which default to the
    /// benchmark's own box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    pub policy: Policy,
    #[serde(default)]
    pub config: SessionConfig,
    /// Answer duels with a Bernoulli oracle on this benchmark instead of a
    /// human.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulated: Option<Benchmark>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        id: String,
        spec: SessionSpec,
    },
    Proposed {
        left_index: usize,
        right_index: usize,
        left: Point,
        right: Point,
    },
    Outcome {
        y: u8,
        simulated: bool,
    },
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelView {
    pub left: Point,
    pub right: Point,
    pub left_index: usize,
    pub right_index: usize,
    /// 1-based number of the duel among all duels of the session.
    pub iteration: usize,
    /// Whether the duel is one of the uniform-random opening duels.
    pub bootstrap: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsweredDuel {
    pub left: Point,
    pub right: Point,
    pub y: u8,
    pub simulated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub point: Point,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinnerView {
    pub point: Point,
    pub index: usize,
    pub score: f64,
    /// Soft-Copeland score of every grid candidate, in grid order.
    pub table: Vec<ScoreEntry>,
    /// Number of answered duels the model was fitted on.
    pub size: usize,
    pub model: ModelSnapshot,
}

/// Hyperparameters of the fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub signal_variance: f64,
    /// One per search-space dimension; both duel halves share them.
    pub lengthscales: Vec<f64>,
}

/// Everything a client may see about a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublicState {
    pub id: String,
    pub policy: Policy,
    pub domain: Domain,
    pub config: SessionConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulated: Option<Benchmark>,
    pub size: usize,
    pub seq: u64,
    pub pending: Option<DuelView>,
    pub history: Vec<AnsweredDuel>,
}

/// Checks a creation request and resolves its domain.
pub fn resolve_domain(spec: &SessionSpec) -> ServiceResult<Domain> {
    let c = &spec.config;
    if c.n_init == 0 || c.features == 0 || c.cei_max_duels == 0 {
        return Err(ServiceError::InvalidRequest(
            "n_init, features and cei_max_duels must be at least 1".into(),
        ));
    }
    let bounds = match (&spec.domain, spec.simulated) {
        (Some(d), Some(b)) if d.bounds() != b.bounds().as_slice() => {
            return Err(ServiceError::InvalidRequest(format!(
                "a session simulated on `{b}` must use its domain {:?}",
                b.bounds()
            )))
        }
        (Some(d), _) => d.bounds().to_vec(),
        (None, Some(b)) => b.bounds(),
        (None, None) => return Err(ServiceError::InvalidRequest("a domain is required".into())),
    };
    let domain = Domain::new(bounds, Some(c.grid_per_dim))?;
    match spec.policy {
        Policy::Sparring => {
            return Err(ServiceError::Unsupported(
                "sparring is only available in batch experiments".into(),
            ))
        }
        Policy::Cei if domain.dim() > 1 => {
            return Err(ServiceError::Unsupported(format!(
                "cei refits the model for every candidate duel and is limited to 1-D domains, got {} dimensions",
                domain.dim()
            )))
        }
        _ => {}
    }
    let candidates = (c.grid_per_dim as f64).powi(domain.dim() as i32);
    if candidates > MAX_CANDIDATES as f64 {
        return Err(ServiceError::InvalidRequest(format!(
            "grid of {} candidates exceeds the limit of {MAX_CANDIDATES}",
            candidates
        )));
    }
    Ok(domain)
}

pub struct Session {
    id: String,
    spec: SessionSpec,
    domain: Domain,
    grid: Vec<Point>,
    landmarks: LandmarkSet,
    opening: Vec<(usize, usize)>,
    raw: DuelDataset,
    history: Vec<AnsweredDuel>,
    pending: Option<DuelView>,
    refitter: ModelRefitter,
    model: Option<LaplacePosterior>,
    /// Oracle stream of a simulated session; advanced only by `apply`.
    oracle: Option<ChaCha8Rng>,
    next_seq: u64,
}

impl Session {
    /// Builds the session named by a `Created` event. Nothing is applied
    /// yet; pass the event to `apply` to take its sequence number.
    pub fn from_created(event: &Event) -> ServiceResult<Self> {
        let Event::Created { id, spec } = event else {
            return Err(ServiceError::CorruptLog("log does not start with a creation event".into()));
        };
        let domain = resolve_domain(spec)?;
        let grid = make_grid(&domain)?;
        let landmarks = LandmarkSet::grid(&domain)?;
        let seed = spec.config.seed;
        let opening = initial_duel_indices(spec.config.n_init, grid.len(), seed)?;
        let refitter = ModelRefitter::new(
            KernelParams::for_domain(&domain, INITIAL_LENGTHSCALE_FRACTION),
            HyperBounds::for_domain(&domain),
            seed,
        );
        Ok(Self {
            id: id.clone(),
            spec: spec.clone(),
            domain,
            grid,
            landmarks,
            opening,
            raw: DuelDataset::new(),
            history: Vec::new(),
            pending: None,
            refitter,
            model: None,
            oracle: spec.simulated.map(|_| stream_rng(seed, Stream::Oracle, 0)),
            next_seq: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn size(&self) -> usize {
        self.raw.len()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn pending(&self) -> Option<&DuelView> {
        self.pending.as_ref()
    }

    pub fn dataset(&self) -> &DuelDataset {
        &self.raw
    }

    pub fn grid(&self) -> &[Point] {
        &self.grid
    }

    pub fn is_simulated(&self) -> bool {
        self.spec.simulated.is_some()
    }

    /// Applies an already persisted event.
    pub fn apply(&mut self, logged: &LoggedEvent) -> ServiceResult<()> {
        if logged.seq != self.next_seq {
            return Err(ServiceError::CorruptLog(format!(
                "expected sequence number {}, found {}",
                self.next_seq, logged.seq
            )));
        }
        match &logged.event {
            Event::Created { id, .. } => {
                if self.next_seq != 0 || *id != self.id {
                    return Err(ServiceError::CorruptLog("unexpected creation event".into()));
                }
            }
            Event::Proposed {
                left_index,
                right_index,
                left,
                right,
            } => {
                if self.pending.is_some() {
                    return Err(ServiceError::CorruptLog("proposal while a duel is pending".into()));
                }
                let n = self.grid.len();
                if *left_index >= n || *right_index >= n {
                    return Err(ServiceError::CorruptLog("proposal outside the grid".into()));
                }
                if self.grid[*left_index] != *left || self.grid[*right_index] != *right {
                    return Err(ServiceError::CorruptLog("proposal does not match the grid".into()));
                }
                self.pending = Some(DuelView {
                    left: left.clone(),
                    right: right.clone(),
                    left_index: *left_index,
                    right_index: *right_index,
                    iteration: self.raw.len() + 1,
                    bootstrap: self.raw.len() < self.spec.config.n_init,
                });
            }
            Event::Outcome { y, simulated } => {
                let Some(duel) = self.pending.take() else {
                    return Err(ServiceError::CorruptLog("outcome without a pending duel".into()));
                };
                if *simulated {
                    let Some(rng) = self.oracle.as_mut() else {
                        return Err(ServiceError::CorruptLog("simulated outcome in a human session".into()));
                    };
                    // Keep the stream in step with the draws already made.
                    let bench = self.spec.simulated.expect("simulated session");
                    sample_duel_outcome(bench, &Duel::new(duel.left.clone(), duel.right.clone()), rng)?;
                }
                self.raw.push(Duel::new(duel.left.clone(), duel.right.clone()), *y)?;
                self.history.push(AnsweredDuel {
                    left: duel.left,
                    right: duel.right,
                    y: *y,
                    simulated: *simulated,
                });
                self.model = None;
            }
        }
        self.next_seq += 1;
        Ok(())
    }

    /// The posterior on every answered duel, refitting lazily.
    pub fn model(&mut self) -> ServiceResult<&LaplacePosterior> {
        if self.raw.is_empty() {
            return Err(ServiceError::NoData);
        }
        if self.model.is_none() {
            self.model = Some(self.refitter.fit(&self.raw)?);
        }
        Ok(self.model.as_ref().expect("fitted above"))
    }

    /// The event that makes a new duel pending, or `None` when one already
    /// is.
    pub fn propose_event(&mut self) -> ServiceResult<Option<Event>> {
        if self.pending.is_some() {
            return Ok(None);
        }
        let k = self.raw.len();
        let n_init = self.spec.config.n_init;
        let (l, r) = if k < n_init {
            self.opening[k]
        } else {
            let mut rng = stream_rng(self.spec.config.seed, Stream::Policy, (k - n_init) as u64);
            match self.spec.policy {
                Policy::Random => random_duel_indices(self.grid.len(), &mut rng)?,
                policy => {
                    self.model()?;
                    let post = self.model.as_ref().expect("fitted above");
                    let ctx = ProposalContext {
                        candidates: &self.grid,
                        landmarks: &self.landmarks,
                        features: self.spec.config.features,
                        cei_max_duels: self.spec.config.cei_max_duels,
                    };
                    let choice = propose(policy, post, &self.raw, &ctx, &mut rng)?;
                    (choice.left_index, choice.right_index)
                }
            }
        };
        Ok(Some(Event::Proposed {
            left_index: l,
            right_index: r,
            left: self.grid[l].clone(),
            right: self.grid[r].clone(),
        }))
    }

    pub fn outcome_event(&self, y: u8) -> ServiceResult<Event> {
        if y > 1 {
            return Err(ServiceError::InvalidRequest(format!("y must be 0 or 1, got {y}")));
        }
        if self.pending.is_none() {
            return Err(ServiceError::NoPendingDuel);
        }
        Ok(Event::Outcome { y, simulated: false })
    }

    /// The simulated oracle's answer to the pending duel, drawn from a copy
    /// of the stream so that nothing moves until the event is applied.
    pub fn simulated_outcome_event(&self) -> ServiceResult<Event> {
        let (Some(bench), Some(rng)) = (self.spec.simulated, self.oracle.as_ref()) else {
            return Err(ServiceError::NotSimulated);
        };
        let Some(duel) = self.pending.as_ref() else {
            return Err(ServiceError::NoPendingDuel);
        };
        let outcome = sample_duel_outcome(
            bench,
            &Duel::new(duel.left.clone(), duel.right.clone()),
            &mut rng.clone(),
        )?;
        Ok(Event::Outcome {
            y: outcome.y,
            simulated: true,
        })
    }

    pub fn winner(&mut self) -> ServiceResult<WinnerView> {
        let size = self.raw.len();
        self.model()?;
        let post = self.model.as_ref().expect("fitted above");
        let est = condorcet_winner(post, &self.grid, &self.landmarks)?;
        let params = post.params();
        let model = ModelSnapshot {
            signal_variance: params.signal_variance,
            lengthscales: params.lengthscales[..self.domain.dim()].to_vec(),
        };
        Ok(WinnerView {
            point: est.winner().clone(),
            index: est.winner_index,
            score: est.winner_score,
            table: est
                .candidates
                .into_iter()
                .zip(est.scores)
                .map(|(point, score)| ScoreEntry { point, score })
                .collect(),
            size,
            model,
        })
    }

    pub fn public_state(&self) -> PublicState {
        PublicState {
            id: self.id.clone(),
            policy: self.spec.policy,
            domain: self.domain.clone(),
            config: self.spec.config.clone(),
            simulated: self.spec.simulated,
            size: self.raw.len(),
            seq: self.next_seq.saturating_sub(1),
            pending: self.pending.clone(),
            history: self.history.clone(),
        }
    }
}
