//! Data-level perturbation: a capped per-category feature store feeding the
//! distribution fitter, and noise-added copies of training inputs.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::{FeatureMap, FeatureVector};
use crate::seed::{self, Purpose};
use crate::CategoryId;

pub const DEFAULT_GROUP_SIZE: usize = 80;
pub const DEFAULT_MAX_GROUPS: usize = 20;

#[derive(Debug, Clone, Default, PartialEq)]
struct CategoryGroups {
    full: VecDeque<Vec<FeatureVector>>,
    tail: Vec<FeatureVector>,
}

/// Ring of fixed-size feature groups per category. Complete groups plus a
/// partially filled tail never exceed `max_groups`, so a category holds at
/// most `group_size * max_groups` features; the oldest group goes first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    group_size: usize,
    max_groups: usize,
    dim: Option<usize>,
    categories: BTreeMap<CategoryId, CategoryGroups>,
    evictions: usize,
}

impl Default for FeatureStore {
    fn default() -> Self {
        Self::new(DEFAULT_GROUP_SIZE, DEFAULT_MAX_GROUPS).expect("default store sizes are valid")
    }
}

impl FeatureStore {
    pub fn new(group_size: usize, max_groups: usize) -> Result<Self> {
        if group_size == 0 || max_groups == 0 {
            return Err(Error::contract(
                "group_size and max_groups must be positive",
            ));
        }
        Ok(Self {
            group_size,
            max_groups,
            dim: None,
            categories: BTreeMap::new(),
            evictions: 0,
        })
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn max_groups(&self) -> usize {
        self.max_groups
    }

    pub fn capacity_per_category(&self) -> usize {
        self.group_size * self.max_groups
    }

    /// Groups evicted since construction.
    pub fn evictions(&self) -> usize {
        self.evictions
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.categories.keys().copied()
    }

    /// `(complete groups, tail length)` for a category.
    pub fn occupancy(&self, category: CategoryId) -> (usize, usize) {
        self.categories
            .get(&category)
            .map_or((0, 0), |g| (g.full.len(), g.tail.len()))
    }

    pub fn stored(&self, category: CategoryId) -> usize {
        let (groups, tail) = self.occupancy(category);
        groups * self.group_size + tail
    }

    pub fn push(&mut self, category: CategoryId, f: FeatureVector) -> Result<()> {
        if let Some(dim) = self.dim {
            check_dim(dim, f.dim())?;
        }
        self.dim = Some(f.dim());
        let groups = self.categories.entry(category).or_default();
        // A started tail occupies a group slot, so a new group evicts the
        // oldest complete one once every slot is taken.
        if groups.tail.is_empty() && groups.full.len() == self.max_groups {
            groups.full.pop_front();
            self.evictions += 1;
        }
        groups.tail.push(f);
        if groups.tail.len() == self.group_size {
            groups.full.push_back(std::mem::take(&mut groups.tail));
        }
        Ok(())
    }

    /// Every stored coordinate, ordered by (category, group, index,
    /// coordinate); a partial tail counts as the newest group.
    pub fn pooled_values(&self) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::NoOldKnowledge);
        }
        let mut out = Vec::new();
        for groups in self.categories.values() {
            for f in groups.full.iter().flatten().chain(&groups.tail) {
                out.extend_from_slice(f.as_slice());
            }
        }
        Ok(out)
    }

    pub fn dump(&self) -> Vec<StoreDump> {
        self.categories
            .iter()
            .map(|(&category_id, g)| StoreDump {
                category_id,
                groups: g
                    .full
                    .iter()
                    .chain((!g.tail.is_empty()).then_some(&g.tail))
                    .cloned()
                    .collect(),
            })
            .collect()
    }

    /// Rebuild a store by replaying a dump through [`FeatureStore::push`].
    pub fn from_dump(dump: &[StoreDump], group_size: usize, max_groups: usize) -> Result<Self> {
        let mut store = Self::new(group_size, max_groups)?;
        for entry in dump {
            for f in entry.groups.iter().flatten() {
                store.push(entry.category_id, f.clone())?;
            }
        }
        Ok(store)
    }
}

/// JSON view of one category's stored groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreDump {
    pub category_id: CategoryId,
    pub groups: Vec<Vec<FeatureVector>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DlpConfig {
    /// Fraction of training records that get an adversarial copy.
    pub frequency: f64,
    /// Multiplier on sampled noise.
    pub noise_scale: f64,
    /// Optional `(lo, hi)` clamp on the perturbed values.
    pub clamp: Option<(f64, f64)>,
}

impl Default for DlpConfig {
    fn default() -> Self {
        Self {
            frequency: 0.01,
            noise_scale: 1.0,
            clamp: None,
        }
    }
}

impl DlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.frequency) {
            return Err(Error::contract(format!(
                "DLP frequency {} outside [0, 1]",
                self.frequency
            )));
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::contract("noise_scale must be positive"));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(Error::contract(format!(
                    "clamp range ({lo}, {hi}) is empty"
                )));
            }
        }
        Ok(())
    }
}

/// `raw + noise_scale * noise`, elementwise, then clamped if configured.
pub fn make_adversarial(
    raw: &FeatureMap,
    noise: &FeatureMap,
    cfg: &DlpConfig,
) -> Result<FeatureMap> {
    if raw.shape() != noise.shape() {
        return Err(Error::contract(format!(
            "noise shape {:?} does not match input shape {:?}",
            noise.shape(),
            raw.shape()
        )));
    }
    let values = raw
        .values()
        .iter()
        .zip(noise.values())
        .map(|(r, n)| {
            let v = r + cfg.noise_scale * n;
            match cfg.clamp {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => v,
            }
        })
        .collect();
    FeatureMap::new(raw.shape(), values)
}

/// Independent Bernoulli(`rate`) flags from a seeded stream.
pub fn select_perturb_subset(stream_length: usize, rate: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::contract(format!("rate {rate} outside [0, 1]")));
    }
    let mut rng = seed::rng(seed, Purpose::DlpSubset, 0, 0);
    Ok((0..stream_length)
        .map(|_| rng.random::<f64>() < rate)
        .collect())
}
