//! α-regret of policies, the worst case of water-filling over sorted load
//! profiles, and closed-form competitive ratios.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hindsight::opt_hindsight;
use crate::load::HarmonicMatrix;
use crate::objective::{Direction, Objective, Scaling};
use crate::policy::{outcomes, ExpectationMode, Policy};
use crate::rational::Rational;
use crate::sequence::RequestSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub alpha: f64,
    pub objective: String,
    /// Instance identifier or search domain.
    pub subject: String,
    pub policy_value: f64,
    pub hindsight_value: f64,
    pub regret: f64,
    /// Runs behind `policy_value` (branches or samples).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    /// Numeric searches only: the best sorted profile found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_loads: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// True when `regret` is the best value found by a search, hence only a
    /// lower bound on the supremum.
    pub lower_bound: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")))
    }
}

fn combine(direction: Direction, alpha: f64, hindsight: f64, policy: f64) -> f64 {
    match direction {
        Direction::Maximize => alpha * hindsight - policy,
        Direction::Minimize => policy - alpha * hindsight,
    }
}

/// `α·f(OPT(E)) − E[f(A(E))]` (or the reverse for minimization).
pub fn alpha_regret(
    sequence: &RequestSequence,
    policy: &mut dyn Policy,
    objective: &Objective,
    alpha: f64,
    mode: ExpectationMode,
) -> Result<RegretReport> {
    check_alpha(alpha)?;
    let runs = outcomes(sequence, policy, mode)?;
    let policy_value = runs
        .iter()
        .map(|o| o.weight.to_f64() * objective.evaluate(&o.final_loads(sequence.n())))
        .sum();
    let hindsight_value = objective.evaluate(&opt_hindsight(sequence)?);
    Ok(RegretReport {
        alpha,
        objective: objective.to_string(),
        subject: format!("{} on n={}, m={}", policy.name(), sequence.n(), sequence.m()),
        policy_value,
        hindsight_value,
        regret: combine(objective.direction(), alpha, hindsight_value, policy_value),
        runs: Some(runs.len()),
        best_loads: None,
        iterations: None,
        tolerance: None,
        lower_bound: false,
    })
}

/// Multistart coordinate search settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub multistarts: usize,
    pub iterations: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            multistarts: 32,
            iterations: 400,
            initial_step: 0.25,
            shrink: 0.5,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

/// Largest `n` accepted by the numeric searches.
pub const MAX_SEARCH_N: usize = 12;

/// Smallest chain ratio; keeps every entry of a profile positive.
const RATIO_FLOOR: f64 = 1e-12;

/// Sorted profile from chain ratios: `ℓ_n = 1`, `ℓ_i = r_i·ℓ_{i+1}`.
fn chain_profile(ratios: &[f64]) -> Vec<f64> {
    let n = ratios.len() + 1;
    let mut l = vec![1.0; n];
    for i in (0..n - 1).rev() {
        l[i] = ratios[i] * l[i + 1];
    }
    l
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Normalize {
    Total,
    Largest,
}

fn normalized(ratios: &[f64], how: Normalize, value: f64) -> Vec<f64> {
    let l = chain_profile(ratios);
    let scale = match how {
        Normalize::Total => value / l.iter().sum::<f64>(),
        Normalize::Largest => value,
    };
    l.into_iter().map(|x| x * scale).collect()
}

/// Ratios of the profiles `(0,…,0,β,1,…,1)` for a few `β`, plus uniform.
fn boundary_seeds(n: usize) -> Vec<Vec<f64>> {
    let mut seeds = Vec::new();
    for zeros in 0..n {
        for beta in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let mut profile = vec![0.0; zeros];
            profile.push(beta);
            profile.resize(n, 1.0);
            let ratios = (0..n - 1)
                .map(|i| {
                    let ratio: f64 = if profile[i + 1] == 0.0 { 0.0 } else { profile[i] / profile[i + 1] };
                    ratio.clamp(RATIO_FLOOR, 1.0)
                })
                .collect();
            seeds.push(ratios);
        }
    }
    seeds.dedup();
    seeds
}

/// Result of [`maximize`].
#[derive(Clone, Debug, PartialEq)]
struct SearchResult {
    value: f64,
    ratios: Vec<f64>,
    iterations: usize,
}

fn pattern_search(score: &(dyn Fn(&[f64]) -> f64 + Sync), start: Vec<f64>, config: &SearchConfig) -> SearchResult {
    let mut x = start;
    let mut best = score(&x);
    let mut step = config.initial_step;
    let mut iterations = 0;
    while iterations < config.iterations && step >= config.tolerance {
        iterations += 1;
        let mut improved = false;
        for i in 0..x.len() {
            for delta in [step, -step] {
                let mut y = x.clone();
                y[i] = (y[i] + delta).clamp(RATIO_FLOOR, 1.0);
                let v = score(&y);
                if v > best {
                    best = v;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= config.shrink;
        }
    }
    SearchResult {
        value: best,
        ratios: x,
        iterations,
    }
}

/// Maximizes `score` over chain ratios in `[RATIO_FLOOR, 1]^dim`. Starts run
/// in parallel; the reduction keeps the first best in start order. NaN
/// scores never win.
fn maximize(dim: usize, score: &(dyn Fn(&[f64]) -> f64 + Sync), config: &SearchConfig) -> SearchResult {
    let guarded = |r: &[f64]| {
        let v = score(r);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    if dim == 0 {
        return SearchResult {
            value: guarded(&[]),
            ratios: Vec::new(),
            iterations: 0,
        };
    }
    let mut starts = boundary_seeds(dim + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.multistarts {
        starts.push((0..dim).map(|_| rng.gen_range(RATIO_FLOOR..=1.0)).collect());
    }
    let results: Vec<SearchResult> = starts
        .into_par_iter()
        .map(|s| pattern_search(&guarded, s, config))
        .collect();
    let iterations = results.iter().map(|r| r.iterations).sum();
    let mut best = results
        .into_iter()
        .reduce(|a, b| if b.value > a.value { b } else { a })
        .expect("at least one start");
    best.iterations = iterations;
    best
}

fn check_n(n: usize) -> Result<()> {
    if (1..=MAX_SEARCH_N).contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("n must be in 1..={MAX_SEARCH_N}, got {n}")))
    }
}

/// Best found `α·f(ℓ) − f(Hℓ)` over sorted `ℓ` with total `q` (reversed for
/// minimization). A lower bound on the worst-case regret of water-filling.
pub fn numeric_minimax_regret(
    n: usize,
    objective: &Objective,
    alpha: f64,
    q: &Rational,
    config: &SearchConfig,
) -> Result<RegretReport> {
    check_n(n)?;
    check_alpha(alpha)?;
    if !q.is_positive() {
        return Err(Error::InvalidParameter("total quantity must be positive".into()));
    }
    let total = q.to_f64();
    let h = HarmonicMatrix::new(n);
    let direction = objective.direction();
    let score = |r: &[f64]| {
        let l = normalized(r, Normalize::Total, total);
        combine(direction, alpha, objective.evaluate_f64(&l), objective.evaluate_f64(&h.apply_f64(&l)))
    };
    let best = maximize(n - 1, &score, config);
    let l = normalized(&best.ratios, Normalize::Total, total);
    let hindsight_value = objective.evaluate_f64(&l);
    let policy_value = objective.evaluate_f64(&h.apply_f64(&l));
    Ok(RegretReport {
        alpha,
        objective: objective.to_string(),
        subject: format!("sorted profiles with n={n}, total={q}"),
        policy_value,
        hindsight_value,
        regret: best.value,
        runs: None,
        best_loads: Some(l),
        iterations: Some(best.iterations),
        tolerance: Some(config.tolerance),
        lower_bound: true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub objective: String,
    pub n: usize,
    /// `inf f(Hℓ)/f(ℓ)` when maximizing, `sup g(Hℓ)/g(ℓ)` when minimizing,
    /// as found by the search.
    pub ratio: f64,
    pub best_loads: Vec<f64>,
    pub iterations: usize,
}

/// Competitive ratio of water-filling by direct search over sorted profiles.
/// Profiles are normalized to total 1, or to largest entry `c` for capped
/// objectives.
pub fn numeric_competitive_ratio(n: usize, objective: &Objective, config: &SearchConfig) -> Result<RatioReport> {
    check_n(n)?;
    let (how, value) = match objective.scaling() {
        Scaling::Homogeneous(_) => (Normalize::Total, 1.0),
        Scaling::CapacityScaled(c) => (Normalize::Largest, c),
        Scaling::None => return Err(Error::NotHomogeneous(objective.to_string())),
    };
    let h = HarmonicMatrix::new(n);
    let sign = match objective.direction() {
        Direction::Maximize => -1.0,
        Direction::Minimize => 1.0,
    };
    let ratio = |r: &[f64]| {
        let l = normalized(r, how, value);
        objective.evaluate_f64(&h.apply_f64(&l)) / objective.evaluate_f64(&l)
    };
    let score = |r: &[f64]| sign * ratio(r);
    let best = maximize(n - 1, &score, config);
    Ok(RatioReport {
        objective: objective.to_string(),
        n,
        ratio: sign * best.value,
        best_loads: normalized(&best.ratios, how, value),
        iterations: best.iterations,
    })
}

/// `H_k = Σ_{j≤k} 1/j`, `H_0 = 0`.
pub fn harmonic_number(k: usize) -> Rational {
    (1..=k).map(|j| Rational::from(j).recip()).sum()
}

/// `M_k = (1/k)·Σ_{i=0}^{k} min(1, H_k − H_i)`.
pub fn fm_sequence(k: usize) -> Result<Rational> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let hk = harmonic_number(k);
    let one = Rational::one();
    let mut hi = Rational::zero();
    let mut sum = Rational::zero();
    for i in 0..=k {
        if i > 0 {
            hi += Rational::from(i).recip();
        }
        let gap = &hk - &hi;
        sum += if gap < one { gap } else { one.clone() };
    }
    Ok(sum / Rational::from(k))
}

/// `min_{k ≤ n} M_k`.
pub fn min_fm(n: usize) -> Result<Rational> {
    (1..=n).map(fm_sequence).try_fold(None::<Rational>, |best, m| {
        let m = m?;
        Ok(Some(match best {
            Some(b) if b <= m => b,
            _ => m,
        }))
    })?
    .ok_or_else(|| Error::InvalidParameter("n must be at least 1".into()))
}

/// Objectives with a known competitive ratio for water-filling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrObjective {
    Nsw,
    Maximin,
    Makespan,
    Matching,
    SeparableConcave,
}

impl CrObjective {
    pub const ALL: [CrObjective; 5] = [
        CrObjective::Nsw,
        CrObjective::Maximin,
        CrObjective::Makespan,
        CrObjective::Matching,
        CrObjective::SeparableConcave,
    ];

    /// The evaluator used for the numeric check; none for the separable
    /// family, which has only a bound.
    pub fn objective(&self) -> Option<Objective> {
        match self {
            CrObjective::Nsw => Some(Objective::Nsw),
            CrObjective::Maximin => Some(Objective::Egalitarian),
            CrObjective::Makespan => Some(Objective::Makespan),
            CrObjective::Matching => Some(Objective::Matching { c: 1.0 }),
            CrObjective::SeparableConcave => None,
        }
    }
}

impl fmt::Display for CrObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrObjective::Nsw => "nsw",
            CrObjective::Maximin => "maximin",
            CrObjective::Makespan => "makespan",
            CrObjective::Matching => "matching",
            CrObjective::SeparableConcave => "separable-concave",
        })
    }
}

impl FromStr for CrObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nsw" => CrObjective::Nsw,
            "maximin" | "egalitarian" => CrObjective::Maximin,
            "makespan" | "minimax" => CrObjective::Makespan,
            "separable-concave" => CrObjective::SeparableConcave,
            other if other == "matching" || other.starts_with("matching:") => {
                other.parse::<Objective>()?;
                CrObjective::Matching
            }
            other => return Err(Error::UnknownObjective(other.to_string())),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub value: f64,
    /// Exact value when it is rational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<Rational>,
    /// True when `value` is only a lower bound on the ratio.
    pub bound: bool,
}

pub fn closed_form_cr(objective: CrObjective, n: usize) -> Result<ClosedForm> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let rational = |exact: Rational, bound: bool| ClosedForm {
        value: exact.to_f64(),
        exact: Some(exact),
        bound,
    };
    Ok(match objective {
        CrObjective::Nsw => {
            let factorial: BigInt = (1..=n).map(BigInt::from).product();
            let ln = Rational::from_bigints(factorial, BigInt::from(1)).to_f64().ln();
            ClosedForm {
                value: (-ln / n as f64).exp(),
                exact: (n == 1).then(Rational::one),
                bound: false,
            }
        }
        CrObjective::Maximin => rational(Rational::from(n).recip(), false),
        CrObjective::Makespan => rational(harmonic_number(n), false),
        CrObjective::Matching => rational(min_fm(n)?, false),
        CrObjective::SeparableConcave => rational(min_fm(n)?, true),
    })
}
