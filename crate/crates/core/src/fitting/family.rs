//! The ten candidate families, parameterized location/scale/shape the same
//! way the common scientific-Python conventions do.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution as _, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::{beta as sbeta, erf, gamma as sgamma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyId {
    Alpha,
    Beta,
    Gamma,
    Laplace,
    Uniform,
    Norm,
    Cauchy,
    Logistic,
    Pareto,
    Cosine,
}

impl FamilyId {
    pub const ALL: [FamilyId; 10] = [
        FamilyId::Alpha,
        FamilyId::Beta,
        FamilyId::Gamma,
        FamilyId::Laplace,
        FamilyId::Uniform,
        FamilyId::Norm,
        FamilyId::Cauchy,
        FamilyId::Logistic,
        FamilyId::Pareto,
        FamilyId::Cosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyId::Alpha => "alpha",
            FamilyId::Beta => "beta",
            FamilyId::Gamma => "gamma",
            FamilyId::Laplace => "laplace",
            FamilyId::Uniform => "uniform",
            FamilyId::Norm => "norm",
            FamilyId::Cauchy => "cauchy",
            FamilyId::Logistic => "logistic",
            FamilyId::Pareto => "pareto",
            FamilyId::Cosine => "cosine",
        }
    }
}

impl fmt::Display for FamilyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FamilyId::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown distribution family {s:?}")))
    }
}

/// A fully parameterized member of one family. The density is
/// `standard_pdf((x - loc) / scale) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase")]
pub enum Distribution {
    Alpha {
        a: f64,
        loc: f64,
        scale: f64,
    },
    Beta {
        a: f64,
        b: f64,
        loc: f64,
        scale: f64,
    },
    Gamma {
        a: f64,
        loc: f64,
        scale: f64,
    },
    Laplace {
        loc: f64,
        scale: f64,
    },
    Uniform {
        loc: f64,
        scale: f64,
    },
    Norm {
        loc: f64,
        scale: f64,
    },
    Cauchy {
        loc: f64,
        scale: f64,
    },
    Logistic {
        loc: f64,
        scale: f64,
    },
    Pareto {
        b: f64,
        loc: f64,
        scale: f64,
    },
    Cosine {
        loc: f64,
        scale: f64,
    },
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

pub(crate) fn std_normal_ln_cdf(z: f64) -> f64 {
    if z > -20.0 {
        std_normal_cdf(z).ln()
    } else {
        // Mills-ratio asymptote; erfc underflows out here.
        -0.5 * z * z - LN_SQRT_2PI - (-z).ln()
    }
}

fn std_normal_inv_cdf(p: f64) -> f64 {
    -SQRT_2 * erf::erfc_inv(2.0 * p)
}

impl Distribution {
    pub fn family(&self) -> FamilyId {
        match self {
            Distribution::Alpha { .. } => FamilyId::Alpha,
            Distribution::Beta { .. } => FamilyId::Beta,
            Distribution::Gamma { .. } => FamilyId::Gamma,
            Distribution::Laplace { .. } => FamilyId::Laplace,
            Distribution::Uniform { .. } => FamilyId::Uniform,
            Distribution::Norm { .. } => FamilyId::Norm,
            Distribution::Cauchy { .. } => FamilyId::Cauchy,
            Distribution::Logistic { .. } => FamilyId::Logistic,
            Distribution::Pareto { .. } => FamilyId::Pareto,
            Distribution::Cosine { .. } => FamilyId::Cosine,
        }
    }

    fn loc_scale(&self) -> (f64, f64) {
        match *self {
            Distribution::Alpha { loc, scale, .. }
            | Distribution::Beta { loc, scale, .. }
            | Distribution::Gamma { loc, scale, .. }
            | Distribution::Laplace { loc, scale }
            | Distribution::Uniform { loc, scale }
            | Distribution::Norm { loc, scale }
            | Distribution::Cauchy { loc, scale }
            | Distribution::Logistic { loc, scale }
            | Distribution::Pareto { loc, scale, .. }
            | Distribution::Cosine { loc, scale } => (loc, scale),
        }
    }

    /// Scale positive, shapes positive, everything finite.
    pub fn is_valid(&self) -> bool {
        let (loc, scale) = self.loc_scale();
        let shapes_ok = match *self {
            Distribution::Alpha { a, .. } | Distribution::Gamma { a, .. } => {
                a.is_finite() && a > 0.0
            }
            Distribution::Pareto { b, .. } => b.is_finite() && b > 0.0,
            Distribution::Beta { a, b, .. } => a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0,
            _ => true,
        };
        shapes_ok && loc.is_finite() && scale.is_finite() && scale > 0.0
    }

    /// Log-density of the standardized variable; `-inf` outside the support.
    fn std_ln_pdf(&self, z: f64) -> f64 {
        match *self {
            Distribution::Alpha { a, .. } => {
                if z <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let d = a - 1.0 / z;
                -0.5 * d * d - LN_SQRT_2PI - 2.0 * z.ln() - std_normal_ln_cdf(a)
            }
            Distribution::Beta { a, b, .. } => {
                if z <= 0.0 || z >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                (a - 1.0) * z.ln() + (b - 1.0) * (-z).ln_1p() - sbeta::ln_beta(a, b)
            }
            Distribution::Gamma { a, .. } => {
                if z <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                (a - 1.0) * z.ln() - z - sgamma::ln_gamma(a)
            }
            Distribution::Laplace { .. } => -z.abs() - std::f64::consts::LN_2,
            Distribution::Uniform { .. } => {
                if (0.0..=1.0).contains(&z) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Distribution::Norm { .. } => -0.5 * z * z - LN_SQRT_2PI,
            Distribution::Cauchy { .. } => -(PI * (1.0 + z * z)).ln(),
            Distribution::Logistic { .. } => {
                let e = (-z.abs()).exp();
                -z.abs() - 2.0 * e.ln_1p()
            }
            Distribution::Pareto { b, .. } => {
                if z < 1.0 {
                    return f64::NEG_INFINITY;
                }
                b.ln() - (b + 1.0) * z.ln()
            }
            Distribution::Cosine { .. } => {
                if z.abs() > PI {
                    return f64::NEG_INFINITY;
                }
                (1.0 + z.cos()).ln() - (2.0 * PI).ln()
            }
        }
    }

    fn std_cdf(&self, z: f64) -> f64 {
        match *self {
            Distribution::Alpha { a, .. } => {
                if z <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf(a - 1.0 / z) / std_normal_cdf(a)
                }
            }
            Distribution::Beta { a, b, .. } => {
                if z <= 0.0 {
                    0.0
                } else if z >= 1.0 {
                    1.0
                } else {
                    sbeta::checked_beta_reg(a, b, z).unwrap_or(f64::NAN)
                }
            }
            Distribution::Gamma { a, .. } => {
                if z <= 0.0 {
                    0.0
                } else {
                    sgamma::checked_gamma_lr(a, z).unwrap_or(f64::NAN)
                }
            }
            Distribution::Laplace { .. } => {
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
            Distribution::Uniform { .. } => z.clamp(0.0, 1.0),
            Distribution::Norm { .. } => std_normal_cdf(z),
            Distribution::Cauchy { .. } => 0.5 + z.atan() / PI,
            Distribution::Logistic { .. } => 1.0 / (1.0 + (-z).exp()),
            Distribution::Pareto { b, .. } => {
                if z <= 1.0 {
                    0.0
                } else {
                    1.0 - z.powf(-b)
                }
            }
            Distribution::Cosine { .. } => {
                let z = z.clamp(-PI, PI);
                (PI + z + z.sin()) / (2.0 * PI)
            }
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let (loc, scale) = self.loc_scale();
        self.std_ln_pdf((x - loc) / scale) - scale.ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (loc, scale) = self.loc_scale();
        self.std_cdf((x - loc) / scale)
    }

    /// One draw. Inverse-CDF where it has a closed form; standard
    /// transforms for norm, gamma and beta; bisection for cosine.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (loc, scale) = self.loc_scale();
        // (0, 1), open at both ends.
        let mut u = || loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        let z = match *self {
            Distribution::Alpha { a, .. } => {
                let p = u() * std_normal_cdf(a);
                1.0 / (a - std_normal_inv_cdf(p))
            }
            Distribution::Beta { a, b, .. } => {
                Beta::new(a, b).expect("valid beta shapes").sample(rng)
            }
            Distribution::Gamma { a, .. } => {
                Gamma::new(a, 1.0).expect("valid gamma shape").sample(rng)
            }
            Distribution::Laplace { .. } => {
                let v = u() - 0.5;
                -v.signum() * (1.0 - 2.0 * v.abs()).ln()
            }
            Distribution::Uniform { .. } => rng.random::<f64>(),
            Distribution::Norm { .. } => rng.sample::<f64, _>(StandardNormal),
            Distribution::Cauchy { .. } => (PI * (u() - 0.5)).tan(),
            Distribution::Logistic { .. } => {
                let p = u();
                (p / (1.0 - p)).ln()
            }
            Distribution::Pareto { b, .. } => u().powf(-1.0 / b),
            Distribution::Cosine { .. } => {
                let p = u();
                let (mut lo, mut hi) = (-PI, PI);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if (PI + mid + mid.sin()) / (2.0 * PI) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        };
        loc + scale * z
    }
}
