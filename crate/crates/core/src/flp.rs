//! Feature-level perturbation: mix a new-task feature with a
//! similarity-weighted blend of the stored old-category prototypes.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::{cosine_similarity, softmax, FeatureVector};
use crate::prototype::PrototypeMatrix;

/// Softmax-normalized cosine similarities, aligned with the prototype
/// column order.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationWeights(Vec<f64>);

impl PerturbationWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Raw weights. Must be positive and sum to one.
    pub fn from_raw(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::contract("weights must be non-empty and positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("weights sum to {total}, not 1")));
        }
        Ok(Self(weights))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlpConfig {
    /// Weight on the original feature; the remainder goes to the blend.
    pub gamma: f64,
    /// Fraction of training features that get perturbed.
    pub frequency: f64,
}

impl Default for FlpConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            frequency: 0.01,
        }
    }
}

impl FlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::contract(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.frequency) {
            return Err(Error::contract(format!(
                "FLP frequency {} outside [0, 1]",
                self.frequency
            )));
        }
        Ok(())
    }
}

pub fn perturbation_weights(f: &FeatureVector, m: &PrototypeMatrix) -> Result<PerturbationWeights> {
    if m.is_empty() {
        return Err(Error::NoOldCategories);
    }
    let sims = m
        .columns()
        .iter()
        .map(|p| cosine_similarity(f, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(PerturbationWeights(softmax(&sims)?))
}

/// Weighted sum of prototype columns.
pub fn generate_old_feature(w: &PerturbationWeights, m: &PrototypeMatrix) -> Result<FeatureVector> {
    if w.len() != m.len() {
        return Err(Error::contract(format!(
            "{} weights for {} prototypes",
            w.len(),
            m.len()
        )));
    }
    let dim = m.dim().ok_or(Error::NoOldCategories)?;
    let mut acc = vec![0.0; dim];
    for (weight, proto) in w.0.iter().zip(m.columns()) {
        for (a, p) in acc.iter_mut().zip(proto.as_slice()) {
            *a += weight * p;
        }
    }
    FeatureVector::new(acc)
}

/// `gamma * f + (1 - gamma) * f_gen`.
pub fn perturb_feature(
    f: &FeatureVector,
    f_gen: &FeatureVector,
    gamma: f64,
) -> Result<FeatureVector> {
    check_dim(f.dim(), f_gen.dim())?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::contract(format!("gamma {gamma} outside [0, 1]")));
    }
    let values = f
        .as_slice()
        .iter()
        .zip(f_gen.as_slice())
        .map(|(a, g)| gamma * a + (1.0 - gamma) * g)
        .collect();
    FeatureVector::new(values)
}

/// Perturb `f` when `coin < frequency` and old prototypes exist; otherwise
/// pass it through untouched. `coin` comes from the caller's seeded stream.
pub fn apply_flp(
    f: &FeatureVector,
    m: &PrototypeMatrix,
    cfg: &FlpConfig,
    coin: f64,
) -> Result<FeatureVector> {
    if m.is_empty() || coin >= cfg.frequency {
        return Ok(f.clone());
    }
    let w = perturbation_weights(f, m)?;
    let f_gen = generate_old_feature(&w, m)?;
    perturb_feature(f, &f_gen, cfg.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn matrix(cols: &[&[f64]]) -> PrototypeMatrix {
        PrototypeMatrix::from_columns(cols.iter().enumerate().map(|(i, c)| (i as u32, fv(c))))
            .unwrap()
    }

    #[test]
    fn weights_examples() {
        let single = matrix(&[&[3.0, -1.0]]);
        assert_eq!(
            perturbation_weights(&fv(&[1.0, 2.0]), &single)
                .unwrap()
                .as_slice(),
            &[1.0]
        );

        let axes = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let w = perturbation_weights(&fv(&[1.0, 1.0]), &axes).unwrap();
        assert!((w.as_slice()[0] - 0.5).abs() < 1e-15);
        assert!((w.as_slice()[1] - 0.5).abs() < 1e-15);

        let m = matrix(&[&[1.0, 0.2], &[-0.3, 1.0], &[0.5, 0.5]]);
        let f = fv(&[0.7, -0.4]);
        let scaled = fv(&[0.7 * 3.7, -0.4 * 3.7]);
        let a = perturbation_weights(&f, &m).unwrap();
        let b = perturbation_weights(&scaled, &m).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_errors() {
        assert!(matches!(
            perturbation_weights(&fv(&[1.0]), &PrototypeMatrix::empty()),
            Err(Error::NoOldCategories)
        ));
        assert!(matches!(
            perturbation_weights(&fv(&[0.0, 0.0]), &matrix(&[&[1.0, 0.0]])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn generate_examples() {
        let m = matrix(&[&[1.0, 2.0], &[5.0, -4.0]]);
        let one_hot = PerturbationWeights(vec![0.0, 1.0]);
        assert_eq!(
            generate_old_feature(&one_hot, &m).unwrap().as_slice(),
            &[5.0, -4.0]
        );
        let half = PerturbationWeights::from_raw(vec![0.5, 0.5]).unwrap();
        assert_eq!(
            generate_old_feature(&half, &m).unwrap().as_slice(),
            &[3.0, -1.0]
        );
        let short = PerturbationWeights::from_raw(vec![1.0]).unwrap();
        assert!(generate_old_feature(&short, &m).is_err());
    }

    #[test]
    fn generate_matches_column_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (dim, n) = (9, 7);
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let m =
            PrototypeMatrix::from_columns(cols.iter().enumerate().map(|(i, c)| (i as u32, fv(c))))
                .unwrap();
        let got =
            generate_old_feature(&PerturbationWeights::from_raw(weights.clone()).unwrap(), &m)
                .unwrap();
        for (k, g) in got.as_slice().iter().enumerate() {
            let s: f64 = weights.iter().zip(&cols).map(|(w, c)| w * c[k]).sum();
            assert!((g - s).abs() < 1e-10);
        }
    }

    #[test]
    fn perturb_examples() {
        let f = fv(&[2.0, 0.0]);
        let g = fv(&[0.0, 2.0]);
        assert_eq!(perturb_feature(&f, &g, 1.0).unwrap(), f);
        assert_eq!(perturb_feature(&f, &g, 0.0).unwrap(), g);
        assert_eq!(
            perturb_feature(&f, &g, 0.5).unwrap().as_slice(),
            &[1.0, 1.0]
        );
        assert!(perturb_feature(&f, &fv(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn apply_examples() {
        let f = fv(&[4.0, 2.0]);
        let p = matrix(&[&[0.0, 2.0]]);
        let off = FlpConfig {
            gamma: 0.5,
            frequency: 0.0,
        };
        assert_eq!(apply_flp(&f, &p, &off, 0.0).unwrap(), f);

        let all = FlpConfig {
            gamma: 0.5,
            frequency: 1.0,
        };
        assert_eq!(
            apply_flp(&f, &p, &all, 0.999).unwrap().as_slice(),
            &[2.0, 2.0]
        );
        assert_eq!(
            apply_flp(&f, &PrototypeMatrix::empty(), &all, 0.0).unwrap(),
            f
        );

        let one_pct = FlpConfig {
            gamma: 0.5,
            frequency: 0.01,
        };
        assert_eq!(apply_flp(&f, &p, &one_pct, 0.5).unwrap(), f);
        assert_ne!(apply_flp(&f, &p, &one_pct, 0.005).unwrap(), f);
    }

    #[test]
    fn config_validation() {
        assert!(FlpConfig {
            gamma: 1.2,
            frequency: 0.5
        }
        .validate()
        .is_err());
        assert!(FlpConfig {
            gamma: 0.5,
            frequency: -0.1
        }
        .validate()
        .is_err());
        assert!(FlpConfig::default().validate().is_ok());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>)> {
        (1usize..10, 1usize..12).prop_flat_map(|(dim, n)| {
            (
                proptest::collection::vec(0.1..10.0f64, dim),
                proptest::collection::vec(proptest::collection::vec(0.1..10.0f64, dim), n),
            )
        })
    }

    proptest! {
        #[test]
        fn weights_on_simplex_and_scale_invariant((f, cols) in instance(), alpha in 0.01..100.0f64) {
            let m = PrototypeMatrix::from_columns(cols.iter().enumerate().map(|(i, c)| (i as u32, fv(c)))).unwrap();
            let w = perturbation_weights(&fv(&f), &m).unwrap();
            prop_assert_eq!(w.len(), m.len());
            prop_assert!(w.as_slice().iter().all(|x| *x > 0.0));
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let scaled: Vec<f64> = f.iter().map(|x| x * alpha).collect();
            let ws = perturbation_weights(&fv(&scaled), &m).unwrap();
            for (a, b) in w.as_slice().iter().zip(ws.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn perturbed_feature_lies_between_endpoints((f, cols) in instance(), gamma in 0.0..=1.0f64) {
            let m = PrototypeMatrix::from_columns(cols.iter().enumerate().map(|(i, c)| (i as u32, fv(c)))).unwrap();
            let f = fv(&f);
            let g = generate_old_feature(&perturbation_weights(&f, &m).unwrap(), &m).unwrap();
            let p = perturb_feature(&f, &g, gamma).unwrap();
            for ((a, b), x) in f.as_slice().iter().zip(g.as_slice()).zip(p.as_slice()) {
                let eps = 1e-12 * a.abs().max(b.abs()).max(1.0);
                prop_assert!(*x >= a.min(*b) - eps && *x <= a.max(*b) + eps);
            }
        }

        #[test]
        fn single_prototype_collapse(f in proptest::collection::vec(-10.0..10.0f64, 4), p in proptest::collection::vec(0.5..10.0f64, 4)) {
            let f = fv(&f);
            prop_assume!(f.norm() > 1e-9);
            let m = PrototypeMatrix::from_columns([(0, fv(&p))]).unwrap();
            let g = generate_old_feature(&perturbation_weights(&f, &m).unwrap(), &m).unwrap();
            prop_assert_eq!(g.as_slice(), &p[..]);
        }
    }
}
