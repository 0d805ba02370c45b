//! Model-free comparison policies: uniform random duels and Sparring.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{Duel, Point};
use crate::error::{PboError, Result};

/// Two independent uniform grid indices, left drawn first.
pub fn random_duel_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(usize, usize)> {
    if n == 0 {
        return Err(PboError::InvalidConfig("empty grid".into()));
    }
    let left = rng.random_range(0..n);
    let right = rng.random_range(0..n);
    Ok((left, right))
}

pub fn random_duel<R: Rng + ?Sized>(grid: &[Point], rng: &mut R) -> Result<Duel> {
    let (l, r) = random_duel_indices(grid.len(), rng)?;
    Ok(Duel::new(grid[l].clone(), grid[r].clone()))
}

/// The arm with the most duel wins, lowest index on ties. Each entry is
/// `(left, right, y)`; `y = 1` credits the left arm.
pub fn most_frequent_winner(duels: &[(usize, usize, u8)], n_arms: usize) -> Result<usize> {
    if n_arms == 0 {
        return Err(PboError::InvalidConfig("no arms".into()));
    }
    let mut wins = vec![0usize; n_arms];
    for &(l, r, y) in duels {
        let w = if y == 1 { l } else { r };
        if w >= n_arms {
            return Err(PboError::ArmOutOfRange { index: w, arms: n_arms });
        }
        wins[w] += 1;
    }
    Ok(first_max(&wins))
}

fn first_max(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct UcbAgent {
    counts: Vec<u64>,
    means: Vec<f64>,
}

impl UcbAgent {
    fn new(n_arms: usize) -> Self {
        Self {
            counts: vec![0; n_arms],
            means: vec![0.0; n_arms],
        }
    }

    fn index(&self, arm: usize, t: u64) -> f64 {
        match self.counts[arm] {
            0 => f64::INFINITY,
            n => self.means[arm] + (2.0 * (t as f64).ln() / n as f64).sqrt(),
        }
    }

    fn select(&self, t: u64) -> usize {
        // Unpulled arms come first, in index order.
        if let Some(a) = self.counts.iter().position(|&c| c == 0) {
            return a;
        }
        let mut best = 0;
        let mut best_value = self.index(0, t);
        for a in 1..self.counts.len() {
            let v = self.index(a, t);
            if v > best_value {
                best = a;
                best_value = v;
            }
        }
        best
    }

    fn update(&mut self, arm: usize, reward: f64) {
        self.counts[arm] += 1;
        self.means[arm] += (reward - self.means[arm]) / self.counts[arm] as f64;
    }
}

/// Sparring: one UCB1 agent per duel slot. The left agent is paid `y`, the
/// right agent `1 - y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparringState {
    left: UcbAgent,
    right: UcbAgent,
    rounds: u64,
}

impl SparringState {
    pub fn new(n_arms: usize) -> Result<Self> {
        if n_arms == 0 {
            return Err(PboError::InvalidConfig("no arms".into()));
        }
        Ok(Self {
            left: UcbAgent::new(n_arms),
            right: UcbAgent::new(n_arms),
            rounds: 0,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.left.counts.len()
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Pull counts of the left (`0`) or right (`1`) agent.
    pub fn counts(&self, agent: usize) -> &[u64] {
        if agent == 0 {
            &self.left.counts
        } else {
            &self.right.counts
        }
    }

    pub fn means(&self, agent: usize) -> &[f64] {
        if agent == 0 {
            &self.left.means
        } else {
            &self.right.means
        }
    }

    /// UCB index `mean + √(2 ln t / n)` of an arm for one agent; infinite
    /// while the arm is unpulled.
    pub fn ucb_index(&self, agent: usize, arm: usize) -> f64 {
        let a = if agent == 0 { &self.left } else { &self.right };
        a.index(arm, self.rounds)
    }

    pub fn select(&self) -> (usize, usize) {
        (self.left.select(self.rounds), self.right.select(self.rounds))
    }

    pub fn update(&mut self, arm_left: usize, arm_right: usize, y: u8) -> Result<()> {
        let n = self.n_arms();
        if arm_left >= n || arm_right >= n {
            return Err(PboError::ArmOutOfRange {
                index: arm_left.max(arm_right),
                arms: n,
            });
        }
        if y > 1 {
            return Err(PboError::InvalidLabel(y));
        }
        let reward = f64::from(y);
        self.left.update(arm_left, reward);
        self.right.update(arm_right, 1.0 - reward);
        self.rounds += 1;
        Ok(())
    }

    /// The left agent's most pulled arm, lowest index on ties.
    pub fn recommend(&self) -> Result<usize> {
        if self.rounds == 0 {
            return Err(PboError::EmptyState);
        }
        let counts: Vec<usize> = self.left.counts.iter().map(|&c| c as usize).collect();
        Ok(first_max(&counts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_state_sweeps_arms_in_order() {
        let mut s = SparringState::new(5).unwrap();
        for k in 0..5 {
            assert_eq!(s.select(), (k, k));
            s.update(k, k, 1).unwrap();
        }
        assert_eq!(s.rounds(), 5);
    }

    #[test]
    fn recommend_needs_a_round_and_breaks_ties_low() {
        let mut s = SparringState::new(10).unwrap();
        assert!(matches!(s.recommend(), Err(PboError::EmptyState)));
        s.update(7, 0, 1).unwrap();
        s.update(2, 0, 0).unwrap();
        assert_eq!(s.recommend().unwrap(), 2);
        assert!(s.update(10, 0, 1).is_err());
    }

    #[test]
    fn frequent_winner_counts_both_slots() {
        let duels = [(0, 3, 0), (3, 1, 1), (2, 1, 0)];
        assert_eq!(most_frequent_winner(&duels, 4).unwrap(), 3);
        assert_eq!(most_frequent_winner(&[], 4).unwrap(), 0);
    }
}
