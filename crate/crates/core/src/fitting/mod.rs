//! Univariate distribution fitting over pooled old-category feature values.
//!
//! Every family in [`FamilyId::ALL`] is fitted to the same sample, scored by
//! the squared error between a density-normalized histogram and the fitted
//! density, and ranked ascending by that error. The best converged fit is
//! the noise source for data-level perturbation.
//!
//! Location/scale families use closed-form or moment/quantile estimators.
//! Shape families (alpha, beta, gamma, pareto, cosine) use maximum
//! likelihood found by a Nelder-Mead simplex started from moment estimates.

mod family;
pub mod simplex;

pub use family::{Distribution, FamilyId};

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::FeatureMap;
use simplex::{minimize, SimplexOptions};

pub const DEFAULT_BINS: usize = 100;
pub const MIN_FIT_SAMPLES: usize = 30;
/// Offset below the sample minimum for positive-support families.
pub const SUPPORT_EPS: f64 = 1e-6;
/// Beta support is the sample range widened by this fraction on each side.
pub const BETA_MARGIN: f64 = 0.05;

/// A parameterized fit plus its histogram error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(flatten)]
    pub distribution: Distribution,
    #[serde(with = "finite_or_null")]
    pub sse: f64,
    pub converged: bool,
}

impl FitResult {
    pub fn family(&self) -> FamilyId {
        self.distribution.family()
    }
}

/// Fits ranked by SSE, converged entries first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub bins: usize,
    pub sample_count: usize,
    pub results: Vec<FitResult>,
}

impl FitReport {
    /// The lowest-SSE converged fit.
    pub fn best(&self) -> Option<&FitResult> {
        self.results.iter().find(|r| r.converged)
    }

    pub fn get(&self, family: FamilyId) -> Option<&FitResult> {
        self.results.iter().find(|r| r.family() == family)
    }

    /// Rank (0-based) of `family`, if present.
    pub fn rank_of(&self, family: FamilyId) -> Option<usize> {
        self.results.iter().position(|r| r.family() == family)
    }
}

/// Parameters from one estimator run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub distribution: Distribution,
    pub converged: bool,
}

struct Moments {
    n: f64,
    mean: f64,
    var: f64,
    min: f64,
    max: f64,
}

fn moments(samples: &[f64]) -> Moments {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    Moments {
        n,
        mean,
        var,
        min,
        max,
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_samples(samples: &[f64]) -> Result<Moments> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("samples contain non-finite values"));
    }
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::contract(format!(
            "need at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let m = moments(samples);
    if !(m.var > 0.0) || m.min == m.max {
        return Err(Error::DegenerateData("samples have zero variance".into()));
    }
    Ok(m)
}

/// Estimate parameters of `family` from `samples`.
pub fn estimate_params(family: FamilyId, samples: &[f64]) -> Result<Estimate> {
    let m = check_samples(samples)?;
    let closed = |distribution| Estimate {
        distribution,
        converged: true,
    };
    let sorted = || {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let opts = SimplexOptions::default();

    Ok(match family {
        FamilyId::Norm => closed(Distribution::Norm {
            loc: m.mean,
            scale: m.var.sqrt(),
        }),
        FamilyId::Uniform => closed(Distribution::Uniform {
            loc: m.min,
            scale: m.max - m.min,
        }),
        FamilyId::Laplace => {
            let median = quantile(&sorted(), 0.5);
            let mad = samples.iter().map(|x| (x - median).abs()).sum::<f64>() / m.n;
            closed(Distribution::Laplace {
                loc: median,
                scale: mad,
            })
        }
        FamilyId::Logistic => closed(Distribution::Logistic {
            loc: m.mean,
            scale: m.var.sqrt() * 3f64.sqrt() / PI,
        }),
        FamilyId::Cauchy => {
            let s = sorted();
            let half_iqr = 0.5 * (quantile(&s, 0.75) - quantile(&s, 0.25));
            if !(half_iqr > 0.0) {
                return Err(Error::DegenerateData("interquartile range is zero".into()));
            }
            closed(Distribution::Cauchy {
                loc: quantile(&s, 0.5),
                scale: half_iqr,
            })
        }
        FamilyId::Gamma => {
            let loc = m.min - SUPPORT_EPS;
            let ym = m.mean - loc;
            let (sum_y, sum_ln_y) = samples
                .iter()
                .fold((0.0, 0.0), |(s, l), x| (s + (x - loc), l + (x - loc).ln()));
            let nll = |p: &[f64]| {
                let (a, scale) = (p[0].exp(), p[1].exp());
                m.n * (statrs::function::gamma::ln_gamma(a) + a * scale.ln()) - (a - 1.0) * sum_ln_y
                    + sum_y / scale
            };
            let a0 = ym * ym / m.var;
            let s0 = m.var / ym;
            let r = minimize(nll, &[a0.ln(), s0.ln()], &[0.1, 0.1], &opts);
            Estimate {
                distribution: Distribution::Gamma {
                    a: r.x[0].exp(),
                    loc,
                    scale: r.x[1].exp(),
                },
                converged: r.converged,
            }
        }
        FamilyId::Alpha => {
            // 1 / ((x - loc) / scale) is a normal(a, 1) truncated to > 0.
            let loc = m.min - SUPPORT_EPS;
            let inv: Vec<f64> = samples.iter().map(|x| 1.0 / (x - loc)).collect();
            let (s1, s2) = inv.iter().fold((0.0, 0.0), |(a, b), r| (a + r, b + r * r));
            let sum_ln_y: f64 = samples.iter().map(|x| (x - loc).ln()).sum();
            let nll = |p: &[f64]| {
                let (a, scale) = (p[0].exp(), p[1].exp());
                // sum (a - scale / y)^2 expanded over the sufficient statistics.
                let quad = a * a * m.n - 2.0 * a * scale * s1 + scale * scale * s2;
                0.5 * quad + m.n * family::std_normal_ln_cdf(a) + 2.0 * sum_ln_y - m.n * scale.ln()
                    + m.n * 0.918_938_533_204_672_8
            };
            let mut sorted_inv = inv.clone();
            sorted_inv.sort_by(f64::total_cmp);
            let iqr = quantile(&sorted_inv, 0.75) - quantile(&sorted_inv, 0.25);
            let s0 = if iqr > 0.0 { 1.349 / iqr } else { 1.0 };
            let a0 = (quantile(&sorted_inv, 0.5) * s0).max(0.5);
            let r = minimize(nll, &[a0.ln(), s0.ln()], &[0.1, 0.1], &opts);
            Estimate {
                distribution: Distribution::Alpha {
                    a: r.x[0].exp(),
                    loc,
                    scale: r.x[1].exp(),
                },
                converged: r.converged,
            }
        }
        FamilyId::Pareto => {
            // Support start pinned just below the sample minimum, so
            // loc = start - scale and (b, scale) are free.
            let start = m.min - SUPPORT_EPS;
            let ys: Vec<f64> = samples.iter().map(|x| x - start).collect();
            let ym = m.mean - start;
            let nll = |p: &[f64]| {
                let (b, scale) = (p[0].exp(), p[1].exp());
                let tail: f64 = ys.iter().map(|y| (y / scale).ln_1p()).sum();
                -m.n * (b.ln() - scale.ln()) + (b + 1.0) * tail
            };
            let b0 = if m.var > ym * ym {
                (2.0 * m.var / (m.var - ym * ym)).clamp(2.1, 100.0)
            } else {
                20.0
            };
            let s0 = ym * (b0 - 1.0);
            let r = minimize(nll, &[b0.ln(), s0.ln()], &[0.1, 0.1], &opts);
            let scale = r.x[1].exp();
            Estimate {
                distribution: Distribution::Pareto {
                    b: r.x[0].exp(),
                    loc: start - scale,
                    scale,
                },
                converged: r.converged,
            }
        }
        FamilyId::Beta => {
            let range = m.max - m.min;
            let loc = m.min - BETA_MARGIN * range;
            let scale = range * (1.0 + 2.0 * BETA_MARGIN);
            let (sum_ln_z, sum_ln_1mz) = samples.iter().fold((0.0, 0.0), |(a, b), x| {
                let z = (x - loc) / scale;
                (a + z.ln(), b + (-z).ln_1p())
            });
            let nll = |p: &[f64]| {
                let (a, b) = (p[0].exp(), p[1].exp());
                m.n * statrs::function::beta::ln_beta(a, b)
                    - (a - 1.0) * sum_ln_z
                    - (b - 1.0) * sum_ln_1mz
            };
            let zm = (m.mean - loc) / scale;
            let zv = m.var / (scale * scale);
            let common = (zm * (1.0 - zm) / zv - 1.0).max(0.1);
            let r = minimize(
                nll,
                &[(zm * common).ln(), ((1.0 - zm) * common).ln()],
                &[0.1, 0.1],
                &opts,
            );
            Estimate {
                distribution: Distribution::Beta {
                    a: r.x[0].exp(),
                    b: r.x[1].exp(),
                    loc,
                    scale,
                },
                converged: r.converged,
            }
        }
        FamilyId::Cosine => {
            let sd = m.var.sqrt();
            let from_var = sd / (1.0 / 3.0 - 2.0 / (PI * PI)).sqrt();
            let reach = (m.max - m.mean).max(m.mean - m.min) / PI * (1.0 + 1e-3);
            let s0 = from_var.max(reach);
            let nll = |p: &[f64]| {
                let d = Distribution::Cosine {
                    loc: p[0],
                    scale: p[1].exp(),
                };
                -samples.iter().map(|x| d.ln_pdf(*x)).sum::<f64>()
            };
            let r = minimize(nll, &[m.mean, s0.ln()], &[0.1 * sd, 0.1], &opts);
            Estimate {
                distribution: Distribution::Cosine {
                    loc: r.x[0],
                    scale: r.x[1].exp(),
                },
                converged: r.converged,
            }
        }
    })
}

/// Equal-width, density-normalized histogram over `[min, max]`.
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

pub fn histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::contract("histogram needs at least one bin"));
    }
    let m = moments(samples);
    if samples.is_empty() || m.min == m.max {
        return Err(Error::DegenerateData("histogram range is empty".into()));
    }
    let width = (m.max - m.min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for x in samples {
        let i = (((x - m.min) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let mut edges: Vec<f64> = (0..bins).map(|i| m.min + i as f64 * width).collect();
    edges.push(m.max);
    let norm = samples.len() as f64 * width;
    Ok(Histogram {
        edges,
        density: counts.into_iter().map(|c| c as f64 / norm).collect(),
    })
}

/// Sum over bins of (empirical density - fitted density)^2. The fitted
/// density of a bin is its probability mass divided by the bin width, which
/// stays faithful for sharply peaked heavy-tailed fits whose peak would
/// otherwise fall between bin centers.
pub fn sse_score(distribution: &Distribution, samples: &[f64], bins: usize) -> Result<f64> {
    if bins < 10 {
        return Err(Error::contract(format!(
            "need at least 10 bins, got {bins}"
        )));
    }
    if !distribution.is_valid() {
        return Err(Error::contract(format!(
            "invalid parameters for {}",
            distribution.family()
        )));
    }
    let h = histogram(samples, bins)?;
    let mut sse = 0.0;
    let mut lower_cdf = distribution.cdf(h.edges[0]);
    for (i, emp) in h.density.iter().enumerate() {
        let upper_cdf = distribution.cdf(h.edges[i + 1]);
        let fitted = (upper_cdf - lower_cdf) / (h.edges[i + 1] - h.edges[i]);
        lower_cdf = upper_cdf;
        sse += (emp - fitted) * (emp - fitted);
    }
    Ok(sse)
}

fn rank_order(a: &FitResult, b: &FitResult) -> Ordering {
    b.converged
        .cmp(&a.converged)
        .then_with(|| a.sse.total_cmp(&b.sse))
        .then_with(|| a.family().name().cmp(b.family().name()))
}

/// Fit, score and rank every family. Families whose fit fails or scores
/// non-finite are kept but marked unconverged and sorted last.
pub fn fit_all(samples: &[f64], bins: usize) -> Result<FitReport> {
    check_samples(samples)?;
    if bins < 10 {
        return Err(Error::contract(format!(
            "need at least 10 bins, got {bins}"
        )));
    }
    let fits: Vec<Result<FitResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = FamilyId::ALL
            .into_iter()
            .map(|family| scope.spawn(move || fit_one(family, samples, bins)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fit worker panicked"))
            .collect()
    });
    let mut results = fits.into_iter().collect::<Result<Vec<_>>>()?;
    results.sort_by(rank_order);
    Ok(FitReport {
        bins,
        sample_count: samples.len(),
        results,
    })
}

fn fit_one(family: FamilyId, samples: &[f64], bins: usize) -> Result<FitResult> {
    let est = estimate_params(family, samples)?;
    let sse = if est.distribution.is_valid() {
        sse_score(&est.distribution, samples, bins)?
    } else {
        f64::INFINITY
    };
    Ok(FitResult {
        distribution: est.distribution,
        sse,
        converged: est.converged && sse.is_finite(),
    })
}

/// A `(C, H, W)` tensor of i.i.d. draws from a converged fit.
pub fn sample_noise(
    fit: &FitResult,
    shape: (usize, usize, usize),
    seed: u64,
) -> Result<FeatureMap> {
    if !fit.converged {
        return Err(Error::contract(format!(
            "cannot sample from unconverged {} fit",
            fit.family()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = shape.0 * shape.1 * shape.2;
    let values = (0..count)
        .map(|_| fit.distribution.sample(&mut rng))
        .collect();
    FeatureMap::new(shape, values)
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
