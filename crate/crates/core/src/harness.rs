//! The optimization loop on simulated oracles, replicate aggregation and
//! result files.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{propose, Policy, ProposalContext};
use crate::baselines::{most_frequent_winner, random_duel_indices, SparringState};
use crate::bench::{make_grid, Benchmark, Duel, DuelOracle, Point, SimulatedOracle};
use crate::copeland::{condorcet_winner_pruned, LandmarkSet};
use crate::error::{PboError, Result};
use crate::gp::{DuelDataset, HyperBounds, KernelParams, ModelRefitter};
use crate::rng::{stream_rng, Stream};
use crate::thompson::DEFAULT_FEATURES;

/// Initial lengthscale as a fraction of each coordinate's range.
pub const INITIAL_LENGTHSCALE_FRACTION: f64 = 0.2;

/// Where the Copeland integral takes its landmarks from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LandmarkMode {
    /// The full evaluation grid: the score is an exact grid average.
    Grid,
    /// A fixed number of uniform draws from the domain, seeded per replicate.
    Uniform { count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub function: Benchmark,
    pub policy: Policy,
    pub budget: usize,
    pub n_init: usize,
    pub grid_per_dim: usize,
    pub replicates: usize,
    pub seed: u64,
    pub features: usize,
    pub landmarks: LandmarkMode,
    pub cei_max_duels: usize,
    /// Fill `wall_ms`; off by default so that reruns are byte-identical.
    pub record_timing: bool,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(function: Benchmark, policy: Policy) -> Self {
        Self {
            function,
            policy,
            budget: 200,
            n_init: 5,
            grid_per_dim: 33,
            replicates: 20,
            seed: 0,
            features: DEFAULT_FEATURES,
            landmarks: LandmarkMode::Grid,
            cei_max_duels: 500,
            record_timing: false,
            output: None,
        }
    }

    /// The full-scale protocol: 5 + 200 duels on a 33-point grid, 20
    /// replicates, except 100 for the random policy and 5 for CEI.
    pub fn full_scale(function: Benchmark, policy: Policy) -> Self {
        let replicates = match policy {
            Policy::Random => 100,
            Policy::Cei => 5,
            _ => 20,
        };
        Self {
            replicates,
            ..Self::new(function, policy)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PboError::InvalidConfig(m.to_string()));
        if self.n_init == 0 {
            return bad("n_init must be at least 1");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.grid_per_dim < 2 {
            return bad("grid_per_dim must be at least 2");
        }
        if self.features == 0 {
            return bad("features must be at least 1");
        }
        if matches!(self.landmarks, LandmarkMode::Uniform { count: 0 }) {
            return bad("uniform landmark count must be at least 1");
        }
        if self.policy == Policy::Cei && self.cei_max_duels == 0 {
            return bad("cei_max_duels must be at least 1");
        }
        Ok(())
    }
}

/// One row of a trace. Row `iter = 0` reports the winner after the initial
/// duels; row `iter = j ≥ 1` carries the `j`-th chosen duel, its outcome and
/// the winner once it has been added.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub replicate: usize,
    pub iter: usize,
    pub policy: Policy,
    #[serde(rename = "fn")]
    pub function: Benchmark,
    pub winner: Point,
    pub g_winner: f64,
    pub wall_ms: u64,
    pub duel: Option<Duel>,
    pub y: Option<u8>,
}

/// A replicate that stopped early, with the rows produced before it did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub iter: usize,
    pub message: String,
    pub partial: Vec<ExperimentRecord>,
}

impl fmt::Display for ReplicateFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "replicate {} failed at iteration {}: {}",
            self.replicate, self.iter, self.message
        )
    }
}

impl std::error::Error for ReplicateFailure {}

struct Setup {
    grid: Vec<Point>,
    landmarks: LandmarkSet,
    refitter: ModelRefitter,
    seed: u64,
}

fn setup(config: &ExperimentConfig, replicate: usize) -> Result<Setup> {
    config.validate()?;
    let domain = config.function.domain(config.grid_per_dim)?;
    let grid = make_grid(&domain)?;
    let seed = config.seed.wrapping_add(replicate as u64);
    let landmarks = match config.landmarks {
        LandmarkMode::Grid => LandmarkSet::grid(&domain)?,
        LandmarkMode::Uniform { count } => LandmarkSet::uniform(&domain, count, seed)?,
    };
    let refitter = ModelRefitter::new(
        KernelParams::for_domain(&domain, INITIAL_LENGTHSCALE_FRACTION),
        HyperBounds::for_domain(&domain),
        seed,
    );
    Ok(Setup {
        grid,
        landmarks,
        refitter,
        seed,
    })
}

/// Grid indices of the `n_init` initial duels of a replicate. They depend
/// only on the replicate seed, so every policy starts from the same duels.
pub fn initial_duel_indices(n_init: usize, grid_len: usize, replicate_seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut rng = stream_rng(replicate_seed, Stream::InitDuels, 0);
    (0..n_init)
        .map(|_| random_duel_indices(grid_len, &mut rng))
        .collect()
}

/// Runs one replicate against `oracle`.
pub fn run_pbo(
    config: &ExperimentConfig,
    oracle: &mut dyn DuelOracle,
    replicate: usize,
) -> std::result::Result<Vec<ExperimentRecord>, ReplicateFailure> {
    let mut records = Vec::with_capacity(config.budget + 1);
    let fail = |iter: usize, e: PboError, records: &mut Vec<ExperimentRecord>| ReplicateFailure {
        replicate,
        iter,
        message: e.to_string(),
        partial: std::mem::take(records),
    };
    let mut s = setup(config, replicate).map_err(|e| fail(0, e, &mut records))?;

    let mut raw = DuelDataset::new();
    let mut history: Vec<(usize, usize, u8)> = Vec::new();
    let init = initial_duel_indices(config.n_init, s.grid.len(), s.seed).map_err(|e| fail(0, e, &mut records))?;
    for (l, r) in init {
        let duel = Duel::new(s.grid[l].clone(), s.grid[r].clone());
        let y = oracle.query(&duel).map_err(|e| fail(0, e, &mut records))?;
        raw.push(duel, y).map_err(|e| fail(0, e, &mut records))?;
        history.push((l, r, y));
    }

    let mut sparring = match config.policy {
        Policy::Sparring => Some(SparringState::new(s.grid.len()).map_err(|e| fail(0, e, &mut records))?),
        _ => None,
    };
    let mut last: Option<(Duel, u8)> = None;
    let mut clock = Instant::now();

    for iter in 0..=config.budget {
        let step = (|| -> Result<Option<(usize, usize)>> {
            let mut rng = stream_rng(s.seed, Stream::Policy, iter as u64);
            let (winner, next) = match config.policy {
                Policy::Random => {
                    let w = most_frequent_winner(&history, s.grid.len())?;
                    (w, random_duel_indices(s.grid.len(), &mut rng)?)
                }
                Policy::Sparring => {
                    let st = sparring.as_ref().expect("sparring state");
                    let w = if st.rounds() == 0 {
                        most_frequent_winner(&history, s.grid.len())?
                    } else {
                        st.recommend()?
                    };
                    (w, st.select())
                }
                policy => {
                    let post = s.refitter.fit(&raw)?;
                    let (w, _) = condorcet_winner_pruned(&post, &s.grid, &s.landmarks)?;
                    if iter == config.budget {
                        (w, (0, 0))
                    } else {
                        let ctx = ProposalContext {
                            candidates: &s.grid,
                            landmarks: &s.landmarks,
                            features: config.features,
                            cei_max_duels: config.cei_max_duels,
                        };
                        let choice = propose(policy, &post, &raw, &ctx, &mut rng)?;
                        (w, (choice.left_index, choice.right_index))
                    }
                }
            };
            let point = s.grid[winner].clone();
            let g_winner = config.function.eval(&point)?;
            let wall_ms = if config.record_timing {
                let ms = clock.elapsed().as_millis() as u64;
                clock = Instant::now();
                ms
            } else {
                0
            };
            records.push(ExperimentRecord {
                replicate,
                iter,
                policy: config.policy,
                function: config.function,
                winner: point,
                g_winner,
                wall_ms,
                duel: last.as_ref().map(|(d, _)| d.clone()),
                y: last.as_ref().map(|&(_, y)| y),
            });
            Ok((iter < config.budget).then_some(next))
        })();

        let next = match step {
            Ok(Some(next)) => next,
            Ok(None) => break,
            Err(e) => return Err(fail(iter, e, &mut records)),
        };
        let (l, r) = next;
        let duel = Duel::new(s.grid[l].clone(), s.grid[r].clone());
        let y = oracle.query(&duel).map_err(|e| fail(iter + 1, e, &mut records))?;
        raw.push(duel.clone(), y).map_err(|e| fail(iter + 1, e, &mut records))?;
        history.push((l, r, y));
        if let Some(st) = sparring.as_mut() {
            st.update(l, r, y).map_err(|e| fail(iter + 1, e, &mut records))?;
        }
        last = Some((duel, y));
    }
    Ok(records)
}

/// The oracle used for replicate `replicate`: a Bernoulli oracle on the
/// benchmark with the replicate's own stream.
pub fn replicate_oracle(config: &ExperimentConfig, replicate: usize) -> SimulatedOracle<rand_chacha::ChaCha8Rng> {
    let seed = config.seed.wrapping_add(replicate as u64);
    SimulatedOracle::new(config.function, stream_rng(seed, Stream::Oracle, 0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iter: usize,
    pub median: f64,
    pub mean: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    /// Completed replicates, sorted by replicate then iteration.
    pub records: Vec<ExperimentRecord>,
    pub summary: Vec<IterationSummary>,
    pub failures: Vec<ReplicateFailure>,
}

impl ExperimentResults {
    /// `g(x_c)` of every completed replicate at `iter`.
    pub fn values_at(&self, iter: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.iter == iter)
            .map(|r| r.g_winner)
            .collect()
    }

    pub fn final_summary(&self) -> Option<&IterationSummary> {
        self.summary.last()
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-iteration median and mean of `g(x_c)` over replicates.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<IterationSummary> {
    let last = records.iter().map(|r| r.iter).max();
    let Some(last) = last else {
        return Vec::new();
    };
    let mut by_iter = vec![Vec::new(); last + 1];
    for r in records {
        by_iter[r.iter].push(r.g_winner);
    }
    by_iter
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(iter, v)| IterationSummary {
            iter,
            median: median(&v),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            replicates: v.len(),
        })
        .collect()
}

/// Runs every replicate with its own derived seed and oracle stream.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let outcomes: Vec<_> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut oracle = replicate_oracle(config, rep);
            run_pbo(config, &mut oracle, rep)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.extend(r),
            Err(f) => {
                tracing::warn!("{f}");
                failures.push(f);
            }
        }
    }
    let summary = summarize(&records);
    Ok(ExperimentResults {
        records,
        summary,
        failures,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = PboError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(PboError::InvalidConfig(format!("unknown output format `{other}`"))),
        }
    }
}

fn header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["replicate", "iter", "policy", "fn"].map(String::from).to_vec();
    h.extend((0..dim).map(|d| format!("x_c_{d}")));
    h.push("g_xc".into());
    h.push("wall_ms".into());
    h.extend((0..dim).map(|d| format!("left_{d}")));
    h.extend((0..dim).map(|d| format!("right_{d}")));
    h.push("y".into());
    h
}

fn csv_row(r: &ExperimentRecord, dim: usize) -> Vec<String> {
    let mut row = vec![
        r.replicate.to_string(),
        r.iter.to_string(),
        r.policy.to_string(),
        r.function.to_string(),
    ];
    row.extend(r.winner.iter().map(|v| v.to_string()));
    row.push(r.g_winner.to_string());
    row.push(r.wall_ms.to_string());
    match &r.duel {
        Some(d) => {
            row.extend(d.left.iter().map(|v| v.to_string()));
            row.extend(d.right.iter().map(|v| v.to_string()));
        }
        None => row.extend(std::iter::repeat_n(String::new(), 2 * dim)),
    }
    row.push(r.y.map(|y| y.to_string()).unwrap_or_default());
    row
}

/// CSV or JSON, UTF-8 with LF line endings. CSV columns are
/// `replicate,iter,policy,fn,x_c_*,g_xc,wall_ms` followed by the chosen
/// duel (`left_*`, `right_*`) and its outcome `y`, empty on row 0.
pub fn write_results(records: &[ExperimentRecord], path: &Path, format: OutputFormat) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        OutputFormat::Csv => {
            let dim = records.first().map_or(1, |r| r.winner.len());
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(file);
            w.write_record(header(dim))?;
            for r in records {
                w.write_record(csv_row(r, dim))?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let mut file = file;
            serde_json::to_writer_pretty(&mut file, records)?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
    }
    Ok(())
}

fn parse<T: FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| PboError::InvalidConfig(format!("cannot parse {what} from `{field}`")))
}

pub fn read_results(path: &Path, format: OutputFormat) -> Result<Vec<ExperimentRecord>> {
    let file = BufReader::new(File::open(path)?);
    match format {
        OutputFormat::Json => Ok(serde_json::from_reader(file)?),
        OutputFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(file);
            let dim = rdr.headers()?.iter().filter(|h| h.starts_with("x_c_")).count();
            let mut out = Vec::new();
            for row in rdr.records() {
                let row = row?;
                let f = |i: usize| row.get(i).unwrap_or("");
                let floats = |start: usize| -> Result<Vec<f64>> {
                    (start..start + dim).map(|i| parse(f(i), "coordinate")).collect()
                };
                let winner = floats(4)?;
                let after = 4 + dim;
                let duel = if f(after + 2).is_empty() {
                    None
                } else {
                    Some(Duel::new(floats(after + 2)?, floats(after + 2 + dim)?))
                };
                let y_field = f(after + 2 + 2 * dim);
                out.push(ExperimentRecord {
                    replicate: parse(f(0), "replicate")?,
                    iter: parse(f(1), "iter")?,
                    policy: f(2).parse()?,
                    function: f(3).parse()?,
                    winner,
                    g_winner: parse(f(after), "g_xc")?,
                    wall_ms: parse(f(after + 1), "wall_ms")?,
                    duel,
                    y: if y_field.is_empty() { None } else { Some(parse(y_field, "y")?) },
                });
            }
            Ok(out)
        }
    }
}
