use serde::{Deserialize, Serialize};

use crate::bench::{Duel, DuelOutcome};
use crate::error::{PboError, Result};

/// Observed duels and their labels, in arrival order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DuelDataset {
    duels: Vec<Duel>,
    labels: Vec<u8>,
}

impl DuelDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(duels: Vec<Duel>, labels: Vec<u8>) -> Result<Self> {
        if duels.len() != labels.len() {
            return Err(PboError::InvalidConfig(format!(
                "{} duels but {} labels",
                duels.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y > 1) {
            return Err(PboError::InvalidLabel(y));
        }
        Ok(Self { duels, labels })
    }

    pub fn push(&mut self, duel: Duel, y: u8) -> Result<()> {
        if y > 1 {
            return Err(PboError::InvalidLabel(y));
        }
        self.duels.push(duel);
        self.labels.push(y);
        Ok(())
    }

    pub fn push_outcome(&mut self, outcome: DuelOutcome) -> Result<()> {
        self.push(outcome.duel, outcome.y)
    }

    pub fn len(&self) -> usize {
        self.duels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.duels.is_empty()
    }

    pub fn duels(&self) -> &[Duel] {
        &self.duels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// First `n` observations.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            duels: self.duels[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Concatenated `[x, x']` training inputs.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.duels.iter().map(Duel::concat).collect()
    }

    /// Appends the mirrored copy `([x', x], 1 - y)` of every observation.
    /// No deduplication is performed.
    pub fn augment_symmetric(&self) -> Self {
        let mut out = self.clone();
        for (d, &y) in self.duels.iter().zip(&self.labels) {
            out.duels.push(d.swap());
            out.labels.push(1 - y);
        }
        out
    }
}
