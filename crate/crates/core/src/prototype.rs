//! Per-category prototypes and prototype-anchored exemplar selection.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::{l2_distance, FeatureVector};
use crate::CategoryId;

/// Prototype columns in insertion order, one per trained category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeMatrix {
    ids: Vec<CategoryId>,
    columns: Vec<FeatureVector>,
}

impl PrototypeMatrix {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Build from `(category, prototype)` pairs, keeping the given order.
    pub fn from_columns(
        columns: impl IntoIterator<Item = (CategoryId, FeatureVector)>,
    ) -> Result<Self> {
        let mut m = Self::empty();
        for (id, column) in columns {
            m.push(id, column)?;
        }
        Ok(m)
    }

    fn push(&mut self, id: CategoryId, column: FeatureVector) -> Result<()> {
        if let Some(dim) = self.dim() {
            check_dim(dim, column.dim())?;
        }
        if self.ids.contains(&id) {
            return Err(Error::DuplicateCategory(id));
        }
        self.ids.push(id);
        self.columns.push(column);
        Ok(())
    }

    /// `None` while the matrix has no columns.
    pub fn dim(&self) -> Option<usize> {
        self.columns.first().map(FeatureVector::dim)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[CategoryId] {
        &self.ids
    }

    pub fn columns(&self) -> &[FeatureVector] {
        &self.columns
    }

    pub fn get(&self, id: CategoryId) -> Option<&FeatureVector> {
        self.ids
            .iter()
            .position(|&c| c == id)
            .map(|i| &self.columns[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (CategoryId, &FeatureVector)> {
        self.ids.iter().copied().zip(&self.columns)
    }

    /// Union with `new`, old columns first.
    pub fn append(&self, new: &PrototypeMatrix) -> Result<PrototypeMatrix> {
        if let (Some(a), Some(b)) = (self.dim(), new.dim()) {
            check_dim(a, b)?;
        }
        let old: HashSet<_> = self.ids.iter().collect();
        if let Some(&dup) = new.ids.iter().find(|id| old.contains(id)) {
            return Err(Error::DuplicateCategory(dup));
        }
        let mut out = self.clone();
        out.ids.extend_from_slice(&new.ids);
        out.columns.extend(new.columns.iter().cloned());
        Ok(out)
    }
}

/// Elementwise mean of a non-empty feature set.
pub fn compute_prototype(features: &[FeatureVector]) -> Result<FeatureVector> {
    let first = features
        .first()
        .ok_or_else(|| Error::contract("prototype of an empty feature set"))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for f in features {
        check_dim(dim, f.dim())?;
        for (a, v) in acc.iter_mut().zip(f.as_slice()) {
            *a += v;
        }
    }
    let n = features.len() as f64;
    FeatureVector::new(acc.into_iter().map(|a| a / n).collect())
}

/// One prototype per category. Columns follow the input order; categories
/// may hold different numbers of features.
pub fn build_prototypes<'a, I>(labeled: I) -> Result<PrototypeMatrix>
where
    I: IntoIterator<Item = (CategoryId, &'a [FeatureVector])>,
{
    let mut m = PrototypeMatrix::empty();
    for (id, feats) in labeled {
        if feats.is_empty() {
            return Err(Error::EmptyCategory(id));
        }
        m.push(id, compute_prototype(feats)?)?;
    }
    Ok(m)
}

/// Convenience wrapper over [`build_prototypes`] for a sorted map.
pub fn build_prototypes_from_map(
    labeled: &BTreeMap<CategoryId, Vec<FeatureVector>>,
) -> Result<PrototypeMatrix> {
    build_prototypes(labeled.iter().map(|(id, v)| (*id, v.as_slice())))
}

/// Exemplars ranked by distance to their category prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSelection<S = u64> {
    pub category_id: CategoryId,
    #[serde(rename = "exemplars")]
    pub ranked_ids: Vec<S>,
    pub distances: Vec<f64>,
}

impl<S> ExemplarSelection<S> {
    pub fn len(&self) -> usize {
        self.ranked_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked_ids.is_empty()
    }
}

/// The `k` samples nearest to `prototype` in L2, ascending by distance with
/// ties broken by the smaller sample id. Returns everything when fewer than
/// `k` samples exist.
pub fn select_exemplars<S: Ord + Clone>(
    category_id: CategoryId,
    features: &[(S, FeatureVector)],
    prototype: &FeatureVector,
    k: usize,
) -> Result<ExemplarSelection<S>> {
    if k == 0 {
        return Err(Error::contract("exemplar count k must be positive"));
    }
    if features.is_empty() {
        return Err(Error::EmptyCategory(category_id));
    }
    let mut scored = features
        .iter()
        .map(|(id, f)| Ok((l2_distance(f, prototype)?, id)))
        .collect::<Result<Vec<_>>>()?;
    let by_distance = |a: &(f64, &S), b: &(f64, &S)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_distance);
        scored.truncate(k);
    }
    scored.sort_by(by_distance);
    let (distances, ranked_ids) = scored.into_iter().map(|(d, id)| (d, id.clone())).unzip();
    Ok(ExemplarSelection {
        category_id,
        ranked_ids,
        distances,
    })
}
