//! Schur-monotone objectives and the piecewise decomposition of concave
//! nondecreasing functions.
//!
//! Evaluation is done in `f64`; this is the only floating-point boundary of
//! the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::load::LoadVector;
use crate::rational::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchurClass {
    SchurConcave,
    SchurConvex,
}

/// How the objective reacts to scaling the load vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `f(sℓ) = s^degree·f(ℓ)`.
    Homogeneous(f64),
    /// `f_c(sℓ) = s·f_{c/s}(ℓ)`: homogeneous once the capacity is rescaled.
    CapacityScaled(f64),
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    /// Geometric mean of the loads.
    Nsw,
    /// `Σ min(c, ℓ_i)`.
    Matching { c: f64 },
    /// `min ℓ_i`.
    Egalitarian,
    /// `(mean ℓ_i^p)^{1/p}`, geometric mean at `p = 0`.
    PowerMean { p: f64 },
    /// Mean absolute difference over twice the mean.
    Gini,
    /// Population variance.
    Variance,
    /// `max ℓ_i`.
    Makespan,
    /// `(Σ ℓ_i^p)^{1/p}`, `p ≥ 1`.
    LpNorm { p: f64 },
    /// `1{ℓ_i > 1/2 for every i}`.
    IndicatorHalf,
}

/// Names accepted by [`Objective::from_str`]; parameters after `:`.
pub const OBJECTIVE_NAMES: [&str; 9] = [
    "nsw",
    "matching:c",
    "egalitarian",
    "powermean:p",
    "gini",
    "variance",
    "makespan",
    "lpnorm:p",
    "indicator-half",
];

fn parse_param(name: &str, raw: Option<&str>) -> Result<f64> {
    let raw = raw.ok_or_else(|| Error::InvalidParameter(format!("{name} needs a parameter, e.g. {name}:1")))?;
    let value = match raw.parse::<Rational>() {
        Ok(x) => x.to_f64(),
        Err(_) => raw
            .parse::<f64>()
            .map_err(|_| Error::InvalidParameter(format!("cannot parse {raw:?} as a number")))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::InvalidParameter(format!("{name} parameter must be finite")))
    }
}

impl Objective {
    pub fn matching(c: f64) -> Result<Self> {
        if c > 0.0 && c.is_finite() {
            Ok(Objective::Matching { c })
        } else {
            Err(Error::InvalidParameter(format!("matching capacity must be positive, got {c}")))
        }
    }

    pub fn power_mean(p: f64) -> Result<Self> {
        if p.is_finite() {
            Ok(Objective::PowerMean { p })
        } else {
            Err(Error::InvalidParameter("power mean exponent must be finite".into()))
        }
    }

    pub fn lp_norm(p: f64) -> Result<Self> {
        if p >= 1.0 && p.is_finite() {
            Ok(Objective::LpNorm { p })
        } else {
            Err(Error::InvalidParameter(format!("lp norm needs finite p >= 1, got {p}")))
        }
    }

    /// One representative of every family.
    pub fn catalog() -> Vec<Objective> {
        vec![
            Objective::Nsw,
            Objective::Matching { c: 1.0 },
            Objective::Egalitarian,
            Objective::PowerMean { p: 0.5 },
            Objective::PowerMean { p: -1.0 },
            Objective::PowerMean { p: 2.0 },
            Objective::Gini,
            Objective::Variance,
            Objective::Makespan,
            Objective::LpNorm { p: 2.0 },
            Objective::LpNorm { p: 3.0 },
            Objective::IndicatorHalf,
        ]
    }

    pub fn direction(&self) -> Direction {
        match self.schur_class() {
            SchurClass::SchurConcave => Direction::Maximize,
            SchurClass::SchurConvex => Direction::Minimize,
        }
    }

    pub fn schur_class(&self) -> SchurClass {
        match self {
            Objective::Nsw | Objective::Matching { .. } | Objective::Egalitarian | Objective::IndicatorHalf => {
                SchurClass::SchurConcave
            }
            Objective::PowerMean { p } if *p < 1.0 => SchurClass::SchurConcave,
            _ => SchurClass::SchurConvex,
        }
    }

    /// Whether the objective is symmetric and concave (maximized) or
    /// symmetric and convex (minimized), beyond being Schur-monotone.
    pub fn symmetric_convexity(&self) -> bool {
        !matches!(self, Objective::Gini | Objective::IndicatorHalf)
    }

    pub fn scaling(&self) -> Scaling {
        match self {
            Objective::Nsw
            | Objective::Egalitarian
            | Objective::PowerMean { .. }
            | Objective::Makespan
            | Objective::LpNorm { .. } => Scaling::Homogeneous(1.0),
            Objective::Gini => Scaling::Homogeneous(0.0),
            Objective::Variance => Scaling::Homogeneous(2.0),
            Objective::Matching { c } => Scaling::CapacityScaled(*c),
            Objective::IndicatorHalf => Scaling::None,
        }
    }

    pub fn evaluate(&self, loads: &LoadVector) -> f64 {
        if let Objective::IndicatorHalf = self {
            let half = Rational::new(1, 2);
            return if loads.iter().all(|x| x > &half) { 1.0 } else { 0.0 };
        }
        self.evaluate_f64(&loads.to_f64())
    }

    /// Evaluation on real loads; entries are expected to be nonnegative.
    pub fn evaluate_f64(&self, x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        match *self {
            Objective::Nsw => geometric_mean(x),
            Objective::Matching { c } => x.iter().map(|&v| v.min(c)).sum(),
            Objective::Egalitarian => x.iter().copied().fold(f64::INFINITY, f64::min),
            Objective::PowerMean { p } => {
                if p == 0.0 {
                    geometric_mean(x)
                } else if p < 0.0 && x.contains(&0.0) {
                    0.0
                } else {
                    (x.iter().map(|&v| v.powf(p)).sum::<f64>() / n).powf(1.0 / p)
                }
            }
            Objective::Gini => {
                if mean == 0.0 {
                    return 0.0;
                }
                let spread: f64 = x.iter().flat_map(|a| x.iter().map(move |b| (a - b).abs())).sum();
                spread / (2.0 * n * n * mean)
            }
            Objective::Variance => x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n,
            Objective::Makespan => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Objective::LpNorm { p } => x.iter().map(|&v| v.powf(p)).sum::<f64>().powf(1.0 / p),
            Objective::IndicatorHalf => {
                if x.iter().all(|&v| v > 0.5) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn geometric_mean(x: &[f64]) -> f64 {
    if x.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    (x.iter().map(|v| v.ln()).sum::<f64>() / x.len() as f64).exp()
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Nsw => write!(f, "nsw"),
            Objective::Matching { c } => write!(f, "matching:{c}"),
            Objective::Egalitarian => write!(f, "egalitarian"),
            Objective::PowerMean { p } => write!(f, "powermean:{p}"),
            Objective::Gini => write!(f, "gini"),
            Objective::Variance => write!(f, "variance"),
            Objective::Makespan => write!(f, "makespan"),
            Objective::LpNorm { p } => write!(f, "lpnorm:{p}"),
            Objective::IndicatorHalf => write!(f, "indicator-half"),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((name, param)) => (name, Some(param)),
            None => (s, None),
        };
        let plain = |o: Objective| match param {
            None => Ok(o),
            Some(_) => Err(Error::InvalidParameter(format!("{name} takes no parameter"))),
        };
        match name {
            "nsw" => plain(Objective::Nsw),
            "egalitarian" | "maximin" => plain(Objective::Egalitarian),
            "gini" => plain(Objective::Gini),
            "variance" => plain(Objective::Variance),
            "makespan" | "minimax" => plain(Objective::Makespan),
            "indicator-half" => plain(Objective::IndicatorHalf),
            "matching" => match param {
                None => Ok(Objective::Matching { c: 1.0 }),
                raw => Objective::matching(parse_param(name, raw)?),
            },
            "powermean" => Objective::power_mean(parse_param(name, param)?),
            "lpnorm" => Objective::lp_norm(parse_param(name, param)?),
            _ => Err(Error::UnknownObjective(s.to_string())),
        }
    }
}

/// One `β·min(c, x)` term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub beta: f64,
    pub c: f64,
}

/// `γx + Σ β_i·min(c_i, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcaveDecomposition {
    pub gamma: f64,
    pub pieces: Vec<Piece>,
}

impl ConcaveDecomposition {
    pub fn evaluate(&self, x: f64) -> f64 {
        self.gamma * x + self.pieces.iter().map(|p| p.beta * p.c.min(x)).sum::<f64>()
    }
}

const SLOPE_TOLERANCE: f64 = 1e-12;

/// Writes the piecewise-linear interpolation of samples of a concave
/// nondecreasing `f` with `f(0) = 0` as a sum of capped linear terms.
pub fn concave_decompose(points: &[f64], values: &[f64]) -> Result<ConcaveDecomposition> {
    if points.len() != values.len() {
        return Err(Error::UnequalLength {
            left: points.len(),
            right: values.len(),
        });
    }
    if points.is_empty() {
        return Err(Error::InvalidParameter("no sample points".into()));
    }
    if points[0] <= 0.0 || points.windows(2).any(|w| w[0] >= w[1]) || points.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("points must be positive and strictly increasing".into()));
    }
    let mut slopes = vec![values[0] / points[0]];
    for i in 1..points.len() {
        slopes.push((values[i] - values[i - 1]) / (points[i] - points[i - 1]));
    }
    for (i, w) in slopes.windows(2).enumerate() {
        if w[1] > w[0] + SLOPE_TOLERANCE {
            return Err(Error::NotConcaveNondecreasing { index: i + 1 });
        }
    }
    let gamma = *slopes.last().expect("nonempty");
    if gamma < -SLOPE_TOLERANCE || !gamma.is_finite() {
        return Err(Error::NotConcaveNondecreasing {
            index: slopes.len() - 1,
        });
    }
    let pieces = (1..slopes.len())
        .map(|i| Piece {
            beta: slopes[i - 1] - slopes[i],
            c: points[i - 1],
        })
        .filter(|p| p.beta > SLOPE_TOLERANCE)
        .collect();
    Ok(ConcaveDecomposition {
        gamma: gamma.max(0.0),
        pieces,
    })
}
