//! Device tiers: ordered capability classes with strictly increasing
//! encoder depths. The topology decides which encoder layers are shared
//! across tiers (everything below each tier's isolated top layer).

use crate::error::{Error, Result};

/// Ordered tier list. Index 0 is the weakest tier, the last index the
/// strongest. `ids` carries stable labels for reporting so that a topology
/// reduced by an ablation still names tiers as in the full experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TierTopology {
    ids: Vec<usize>,
    depths: Vec<usize>,
    proportions: Vec<f64>,
}

impl TierTopology {
    /// Build and validate a topology. Proportions are client-membership
    /// weights and are normalized to sum to 1.
    pub fn new(depths: &[usize], proportions: &[f64]) -> Result<TierTopology> {
        if depths.is_empty() {
            return Err(Error::Topology("at least one tier is required".into()));
        }
        if depths[0] < 2 {
            return Err(Error::Topology(format!(
                "smallest tier depth must be >= 2 so a cross-shared layer exists, got {}",
                depths[0]
            )));
        }
        if depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Topology(format!(
                "tier depths must be strictly increasing, got {depths:?}"
            )));
        }
        if proportions.len() != depths.len() {
            return Err(Error::Topology(format!(
                "{} depths but {} proportions",
                depths.len(),
                proportions.len()
            )));
        }
        if proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Topology(format!(
                "proportions must be finite and nonnegative, got {proportions:?}"
            )));
        }
        let total: f64 = proportions.iter().sum();
        if total <= 0.0 {
            return Err(Error::Topology("proportions sum to zero".into()));
        }
        Ok(TierTopology {
            ids: (0..depths.len()).collect(),
            depths: depths.to_vec(),
            proportions: proportions.iter().map(|p| p / total).collect(),
        })
    }

    pub fn num_tiers(&self) -> usize {
        self.depths.len()
    }

    pub fn depth(&self, tier: usize) -> usize {
        self.depths[tier]
    }

    pub fn depths(&self) -> &[usize] {
        &self.depths
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    /// Reporting label of a tier (its index in the original experiment).
    pub fn id(&self, tier: usize) -> usize {
        self.ids[tier]
    }

    /// Index of the strongest (deepest) tier.
    pub fn largest(&self) -> usize {
        self.depths.len() - 1
    }

    pub fn max_depth(&self) -> usize {
        *self.depths.last().unwrap()
    }

    /// Topology with the given tiers removed; remaining proportions are
    /// renormalized and original ids kept for reporting.
    pub fn exclude(&self, excluded: &[usize]) -> Result<TierTopology> {
        for &e in excluded {
            if e >= self.num_tiers() {
                return Err(Error::Topology(format!(
                    "cannot exclude tier {e}: only {} tiers exist",
                    self.num_tiers()
                )));
            }
        }
        let keep: Vec<usize> =
            (0..self.num_tiers()).filter(|j| !excluded.contains(j)).collect();
        if keep.is_empty() {
            return Err(Error::Topology("cannot exclude every tier".into()));
        }
        let total: f64 = keep.iter().map(|&j| self.proportions[j]).sum();
        if total <= 0.0 {
            return Err(Error::Topology(
                "remaining tiers after exclusion have zero total proportion".into(),
            ));
        }
        Ok(TierTopology {
            ids: keep.iter().map(|&j| self.ids[j]).collect(),
            depths: keep.iter().map(|&j| self.depths[j]).collect(),
            proportions: keep.iter().map(|&j| self.proportions[j] / total).collect(),
        })
    }
}
