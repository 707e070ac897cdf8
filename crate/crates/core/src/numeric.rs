//! Deterministic f64 kernels shared by the rest of the crate.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A finite, non-empty real vector of dimension `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("feature vector must have dim >= 1"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "feature vector entry {i} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

/// Dense `(C, H, W)` tensor stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: (usize, usize, usize),
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let (c, h, w) = shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::contract(format!(
                "feature map shape {shape:?} has a zero extent"
            )));
        }
        check_dim(c * h * w, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("feature map contains non-finite values"));
        }
        Ok(Self { shape, values })
    }

    /// A `(C, 1, 1)` map holding a plain feature vector.
    pub fn from_vector(v: &FeatureVector) -> Self {
        Self {
            shape: (v.dim(), 1, 1),
            values: v.as_slice().to_vec(),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.1 * self.shape.2;
        &self.values[c * plane..(c + 1) * plane]
    }
}

/// Euclidean distance between two vectors of equal dimension.
pub fn l2_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    let cos = a.dot(b)? / (na * nb);
    Ok(cos.clamp(-1.0, 1.0))
}

/// Max-subtracted softmax; identical to the textbook form but overflow-free.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::contract("softmax of an empty sequence"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("softmax input is not finite"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Mean over each channel's `H x W` plane.
pub fn global_average_pool(m: &FeatureMap) -> FeatureVector {
    let (c, h, w) = m.shape;
    let plane = (h * w) as f64;
    let values = (0..c)
        .map(|ch| m.channel(ch).iter().sum::<f64>() / plane)
        .collect();
    FeatureVector(values)
}
