//! A linear softmax classifier over stream features with max-probability
//! unknown rejection. It stands in for the detector heads so the protocol
//! can run end to end; nothing here is specific to the perturbation scheme.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::{softmax, FeatureVector};
use crate::seed::{self, Purpose};
use crate::CategoryId;

pub const INIT_RANGE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub learning_rate: f64,
    /// Predictions whose max probability falls below this are UNKNOWN.
    pub unknown_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            unknown_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHead {
    pub id: CategoryId,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Serializable model state; doubles as the checkpoint format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub feature_dim: usize,
    pub learning_rate: f64,
    pub unknown_threshold: f64,
    pub classes: Vec<ClassHead>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Known(CategoryId),
    Unknown(UnknownTag),
}

/// Serialized as the string `"unknown"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownTag {
    Unknown,
}

impl Label {
    pub const UNKNOWN: Label = Label::Unknown(UnknownTag::Unknown);

    pub fn known(&self) -> Option<CategoryId> {
        match self {
            Label::Known(c) => Some(*c),
            Label::Unknown(_) => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Label::Unknown(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    /// Max softmax probability.
    pub score: f64,
    /// Argmax class regardless of rejection.
    pub top_class: CategoryId,
    pub per_class_scores: Vec<(CategoryId, f64)>,
}

/// Gradient of the cross-entropy for one record, aligned with `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

fn init_head(dim: usize, id: CategoryId, seed: u64) -> ClassHead {
    let mut rng = seed::rng(seed, Purpose::ModelInit, id as u64, 0);
    ClassHead {
        id,
        weights: (0..dim)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect(),
        bias: 0.0,
    }
}

impl ModelState {
    /// Weights uniform in ±0.01, biases zero. Each class row is seeded by
    /// `(seed, class id)`, so growing the head later gives the same rows.
    pub fn init(
        feature_dim: usize,
        known: &[CategoryId],
        seed: u64,
        cfg: ModelConfig,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::contract("feature_dim must be >= 1"));
        }
        let mut m = Self {
            feature_dim,
            learning_rate: cfg.learning_rate,
            unknown_threshold: cfg.unknown_threshold,
            classes: Vec::new(),
        };
        m.add_classes(known, seed)?;
        Ok(m)
    }

    pub fn class_ids(&self) -> Vec<CategoryId> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn index_of(&self, id: CategoryId) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    /// Append heads for `new` classes. Existing rows are untouched.
    pub fn add_classes(&mut self, new: &[CategoryId], seed: u64) -> Result<()> {
        let mut seen: HashSet<CategoryId> = self.classes.iter().map(|c| c.id).collect();
        for id in new {
            if !seen.insert(*id) {
                return Err(Error::DuplicateCategory(*id));
            }
        }
        self.classes
            .extend(new.iter().map(|&id| init_head(self.feature_dim, id, seed)));
        Ok(())
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        check_dim(self.feature_dim, x.dim())?;
        Ok(self
            .classes
            .iter()
            .map(|c| {
                c.bias
                    + c.weights
                        .iter()
                        .zip(x.as_slice())
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect())
    }

    pub fn probabilities(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        if self.classes.is_empty() {
            return Err(Error::contract("model has no classes"));
        }
        softmax(&self.logits(x)?)
    }

    /// Softmax cross-entropy of one labeled record.
    pub fn loss(&self, x: &FeatureVector, label: CategoryId) -> Result<f64> {
        let idx = self
            .index_of(label)
            .ok_or_else(|| Error::contract(format!("label {label} is not a known class")))?;
        let logits = self.logits(x)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        Ok(lse - logits[idx])
    }

    pub fn gradient(&self, x: &FeatureVector, label: CategoryId) -> Result<Gradient> {
        let idx = self
            .index_of(label)
            .ok_or_else(|| Error::contract(format!("label {label} is not a known class")))?;
        let mut delta = self.probabilities(x)?;
        delta[idx] -= 1.0;
        Ok(Gradient {
            weights: delta
                .iter()
                .map(|d| x.as_slice().iter().map(|v| d * v).collect())
                .collect(),
            bias: delta,
        })
    }

    /// One SGD step on a single record.
    pub fn train_step(&mut self, x: &FeatureVector, label: CategoryId) -> Result<()> {
        let g = self.gradient(x, label)?;
        let lr = self.learning_rate;
        for ((head, gw), gb) in self.classes.iter_mut().zip(&g.weights).zip(&g.bias) {
            for (w, d) in head.weights.iter_mut().zip(gw) {
                *w -= lr * d;
            }
            head.bias -= lr * gb;
        }
        Ok(())
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<Prediction> {
        let probs = self.probabilities(x)?;
        // First index wins ties, keeping argmax deterministic.
        let (best, score) = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| {
                if *p > acc.1 {
                    (i, *p)
                } else {
                    acc
                }
            });
        let top_class = self.classes[best].id;
        let label = if score >= self.unknown_threshold {
            Label::Known(top_class)
        } else {
            Label::UNKNOWN
        };
        Ok(Prediction {
            label,
            score,
            top_class,
            per_class_scores: self.classes.iter().map(|c| c.id).zip(probs).collect(),
        })
    }
}
