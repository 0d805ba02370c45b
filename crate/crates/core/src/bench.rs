//! Benchmark objectives, their domains and the simulated duel oracle.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PboError, Result};

/// A point of the search space `X ⊆ R^q`.
pub type Point = Vec<f64>;

/// Upper bound on the number of grid points we are willing to materialize.
const MAX_GRID_POINTS: usize = 1 << 22;

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Box-shaped search space with an optional evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid_per_dim: Option<usize>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>, grid_per_dim: Option<usize>) -> Result<Self> {
        let domain = Self { bounds, grid_per_dim };
        domain.validate()?;
        Ok(domain)
    }

    /// Checks the invariants; useful after deserializing untrusted input.
    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(PboError::InvalidDomain("dimension must be positive".into()));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(PboError::InvalidDomain(format!(
                    "coordinate {i} has bounds ({lo}, {hi}); need finite lower < upper"
                )));
            }
        }
        if let Some(n) = self.grid_per_dim {
            if n < 2 {
                return Err(PboError::InvalidDomain(format!(
                    "grid_per_dim must be at least 2, got {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn grid_per_dim(&self) -> Option<usize> {
        self.grid_per_dim
    }

    pub fn with_grid(mut self, per_dim: usize) -> Result<Self> {
        self.grid_per_dim = Some(per_dim);
        self.validate()?;
        Ok(self)
    }

    /// Width of each coordinate interval.
    pub fn ranges(&self) -> Vec<f64> {
        self.bounds.iter().map(|&(lo, hi)| hi - lo).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.bounds)
                .all(|(&v, &(lo, hi))| v.is_finite() && lo <= v && v <= hi)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(PboError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(PboError::OutOfDomain { point: x.to_vec() });
        }
        Ok(())
    }

    /// Uniform sample from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        self.bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// Cartesian grid with `grid_per_dim` equally spaced values per coordinate,
/// endpoints included. The first coordinate varies fastest, so index
/// `i0 + n*i1 + n^2*i2 + ...` addresses the point `(v0[i0], v1[i1], ...)`.
pub fn make_grid(domain: &Domain) -> Result<Vec<Point>> {
    let per_dim = domain
        .grid_per_dim
        .ok_or_else(|| PboError::InvalidDomain("grid_per_dim is not set".into()))?;
    let dim = domain.dim();
    let total = u32::try_from(dim)
        .ok()
        .and_then(|d| per_dim.checked_pow(d))
        .filter(|&t| t <= MAX_GRID_POINTS)
        .ok_or(PboError::GridOverflow { per_dim, dim })?;

    let axes: Vec<Vec<f64>> = domain
        .bounds
        .iter()
        .map(|&(lo, hi)| {
            (0..per_dim)
                .map(|i| {
                    if i + 1 == per_dim {
                        hi
                    } else {
                        lo + (hi - lo) * (i as f64 / (per_dim - 1) as f64)
                    }
                })
                .collect()
        })
        .collect();

    let mut points = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut p = Vec::with_capacity(dim);
        for axis in &axes {
            p.push(axis[rem % per_dim]);
            rem /= per_dim;
        }
        points.push(p);
    }
    Ok(points)
}

/// An ordered pair of points whose outcome says whether `left` beat `right`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Duel {
    pub left: Point,
    pub right: Point,
}

impl Duel {
    pub fn new(left: Point, right: Point) -> Self {
        Self { left, right }
    }

    /// The concatenated `2q` vector `[x, x']` consumed by the model.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.left.len() + self.right.len());
        v.extend_from_slice(&self.left);
        v.extend_from_slice(&self.right);
        v
    }

    pub fn swap(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }
}

/// A duel with its observed label: `y = 1` when the left point won.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelOutcome {
    pub duel: Duel,
    pub y: u8,
}

impl DuelOutcome {
    pub fn new(duel: Duel, y: u8) -> Result<Self> {
        if y > 1 {
            return Err(PboError::InvalidLabel(y));
        }
        Ok(Self { duel, y })
    }
}

/// The four latent objectives used in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Forrester,
    SixHumpCamel,
    GoldsteinPrice,
    Levy,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Forrester,
        Benchmark::SixHumpCamel,
        Benchmark::GoldsteinPrice,
        Benchmark::Levy,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Benchmark::Forrester => "forrester",
            Benchmark::SixHumpCamel => "six-hump-camel",
            Benchmark::GoldsteinPrice => "goldstein-price",
            Benchmark::Levy => "levy",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Benchmark::Forrester => 1,
            _ => 2,
        }
    }

    /// Canonical box, without a grid.
    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            Benchmark::Forrester => vec![(0.0, 1.0)],
            Benchmark::SixHumpCamel => vec![(-2.0, 2.0), (-1.0, 1.0)],
            Benchmark::GoldsteinPrice => vec![(-2.0, 2.0), (-2.0, 2.0)],
            Benchmark::Levy => vec![(-10.0, 10.0), (-10.0, 10.0)],
        }
    }

    /// Canonical domain with `grid_per_dim` points per coordinate.
    pub fn domain(self, grid_per_dim: usize) -> Result<Domain> {
        Domain::new(self.bounds(), Some(grid_per_dim))
    }

    /// `g(x)`, checking dimension and bounds.
    pub fn eval(self, x: &[f64]) -> Result<f64> {
        Domain::new(self.bounds(), None)?.check(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Forrester => {
                let t = 6.0 * x[0] - 2.0;
                t * t * (12.0 * x[0] - 4.0).sin()
            }
            Benchmark::SixHumpCamel => {
                let (a, b) = (x[0], x[1]);
                let a2 = a * a;
                let b2 = b * b;
                (4.0 - 2.1 * a2 + a2 * a2 / 3.0) * a2 + a * b + (-4.0 + 4.0 * b2) * b2
            }
            Benchmark::GoldsteinPrice => {
                let (a, b) = (x[0], x[1]);
                let s = a + b + 1.0;
                let t1 = 1.0
                    + s * s * (19.0 - 14.0 * a + 3.0 * a * a - 14.0 * b + 6.0 * a * b + 3.0 * b * b);
                let d = 2.0 * a - 3.0 * b;
                let t2 = 30.0
                    + d * d
                        * (18.0 - 32.0 * a + 12.0 * a * a + 48.0 * b - 36.0 * a * b + 27.0 * b * b);
                t1 * t2
            }
            Benchmark::Levy => {
                let w1 = 1.0 + (x[0] - 1.0) / 4.0;
                let w2 = 1.0 + (x[1] - 1.0) / 4.0;
                let s1 = (PI * w1).sin();
                let s_mid = (PI * w1 + 1.0).sin();
                let s_last = (2.0 * PI * w2).sin();
                s1 * s1
                    + (w1 - 1.0).powi(2) * (1.0 + 10.0 * s_mid * s_mid)
                    + (w2 - 1.0).powi(2) * (1.0 + s_last * s_last)
            }
        }
    }

    /// Probability that the left point of `duel` wins: `σ(g(x') - g(x))`.
    pub fn preference_prob(self, duel: &Duel) -> Result<f64> {
        let gl = self.eval(&duel.left)?;
        let gr = self.eval(&duel.right)?;
        // 1 - σ(-z) is exact for σ(-z) ≥ ½, so a duel and its swap sum to
        // exactly one.
        let z = gr - gl;
        Ok(if z >= 0.0 { sigmoid(z) } else { 1.0 - sigmoid(-z) })
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Benchmark {
    type Err = PboError;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.id() == s)
            .ok_or_else(|| PboError::UnknownFunction(s.to_string()))
    }
}

/// `g(x)` for a benchmark named by its identifier.
pub fn eval_objective(fn_id: &str, x: &[f64]) -> Result<f64> {
    fn_id.parse::<Benchmark>()?.eval(x)
}

pub fn true_preference_prob(bench: Benchmark, duel: &Duel) -> Result<f64> {
    bench.preference_prob(duel)
}

/// Draws `y ~ Bernoulli(σ(g(x') - g(x)))`.
pub fn sample_duel_outcome<R: Rng + ?Sized>(
    bench: Benchmark,
    duel: &Duel,
    rng: &mut R,
) -> Result<DuelOutcome> {
    let p = bench.preference_prob(duel)?;
    let y = u8::from(rng.random::<f64>() < p);
    Ok(DuelOutcome {
        duel: duel.clone(),
        y,
    })
}

/// Anything that can settle a duel: a simulated benchmark, a recorded trace,
/// or (in the session service) a human.
pub trait DuelOracle {
    fn query(&mut self, duel: &Duel) -> Result<u8>;
}

/// Bernoulli oracle on a benchmark objective with its own random stream.
pub struct SimulatedOracle<R> {
    bench: Benchmark,
    rng: R,
}

impl<R: Rng> SimulatedOracle<R> {
    pub fn new(bench: Benchmark, rng: R) -> Self {
        Self { bench, rng }
    }

    pub fn benchmark(&self) -> Benchmark {
        self.bench
    }
}

impl<R: Rng> DuelOracle for SimulatedOracle<R> {
    fn query(&mut self, duel: &Duel) -> Result<u8> {
        Ok(sample_duel_outcome(self.bench, duel, &mut self.rng)?.y)
    }
}
