//! Online allocation policies and their (expected) loads.
//!
//! A policy sees the arrival history and the current arrival, never the
//! future. Randomness comes only from an injected [`Coins`] source, which is
//! either a seeded generator or a scripted choice list used to enumerate the
//! branch tree of finite-support policies exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::load::LoadVector;
use crate::rational::Rational;
use crate::sequence::{arrival_feasible, Arrival, RequestSequence};
use crate::waterfill::{water_fill_step, AllocationTrace};

/// Default guard on the number of enumerated branches.
pub const DEFAULT_BRANCH_LIMIT: usize = 4096;

/// Resolution of [`Coins::unit`] draws.
const UNIT_BITS: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Deterministic,
    /// Finitely many equally weighted outcomes per draw.
    Finite,
    Infinite,
}

/// Injected randomness.
#[derive(Clone, Debug)]
pub enum Coins {
    Seeded(Box<ChaCha8Rng>),
    /// Replays `script` and records the arity of every draw; draws past the
    /// end of the script take branch `0`.
    Scripted {
        script: Vec<usize>,
        taken: Vec<(usize, usize)>,
    },
}

impl Coins {
    pub fn seeded(seed: u64) -> Self {
        Coins::Seeded(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn scripted(script: Vec<usize>) -> Self {
        Coins::Scripted {
            script,
            taken: Vec::new(),
        }
    }

    /// Uniform draw from `0..k`.
    pub fn choose(&mut self, k: usize) -> usize {
        assert!(k > 0, "choose needs at least one branch");
        match self {
            Coins::Seeded(rng) => rng.gen_range(0..k),
            Coins::Scripted { script, taken } => {
                let c = script.get(taken.len()).copied().unwrap_or(0);
                assert!(c < k, "script does not match the policy's draws");
                taken.push((c, k));
                c
            }
        }
    }

    /// A rational in `(0, 1]` with denominator `2^20`. Not available when
    /// enumerating branches.
    pub fn unit(&mut self, policy: &str) -> Result<Rational> {
        match self {
            Coins::Seeded(rng) => {
                let k = rng.gen_range(1..=1i64 << UNIT_BITS);
                Ok(Rational::new(k, 1 << UNIT_BITS))
            }
            Coins::Scripted { .. } => Err(Error::ExactUnavailable {
                policy: policy.to_string(),
            }),
        }
    }
}

/// What a policy sees when allocating arrival `t`.
pub struct StepContext<'a> {
    pub n: usize,
    /// Earlier arrivals with the allocations this policy gave them.
    pub history: &'a [(Arrival, LoadVector)],
    pub current: &'a Arrival,
    /// Loads before the current arrival.
    pub loads: &'a LoadVector,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn support(&self) -> Support;

    /// Rejects instance sizes the policy is not defined for.
    fn check_dimension(&self, _n: usize) -> Result<()> {
        Ok(())
    }

    /// Clears per-run state.
    fn reset(&mut self) {}

    fn step(&mut self, ctx: &StepContext<'_>, coins: &mut Coins) -> Result<LoadVector>;
}

#[derive(Clone, Debug, Default)]
pub struct WaterFillingPolicy;

impl Policy for WaterFillingPolicy {
    fn name(&self) -> &str {
        "wf"
    }

    fn support(&self) -> Support {
        Support::Deterministic
    }

    fn step(&mut self, ctx: &StepContext<'_>, _coins: &mut Coins) -> Result<LoadVector> {
        Ok(water_fill_step(&ctx.current.neighbors, &ctx.current.quantity, ctx.loads)?.allocation)
    }
}

/// Splits `q_t` equally over `N_t`.
#[derive(Clone, Debug, Default)]
pub struct ProportionalPolicy;

impl Policy for ProportionalPolicy {
    fn name(&self) -> &str {
        "proportional"
    }

    fn support(&self) -> Support {
        Support::Deterministic
    }

    fn step(&mut self, ctx: &StepContext<'_>, _coins: &mut Coins) -> Result<LoadVector> {
        let share = &ctx.current.quantity / Rational::from(ctx.current.neighbors.len());
        let mut x = vec![Rational::zero(); ctx.n];
        for &i in &ctx.current.neighbors {
            x[i - 1] = share.clone();
        }
        LoadVector::new(x)
    }
}

/// Sends all of `q_t` to the lowest-indexed neighbor.
#[derive(Clone, Debug, Default)]
pub struct GreedyLowestIndexPolicy;

impl Policy for GreedyLowestIndexPolicy {
    fn name(&self) -> &str {
        "greedy-lowest"
    }

    fn support(&self) -> Support {
        Support::Deterministic
    }

    fn step(&mut self, ctx: &StepContext<'_>, _coins: &mut Coins) -> Result<LoadVector> {
        let mut x = vec![Rational::zero(); ctx.n];
        let first = *ctx.current.neighbors.first().expect("validated arrival");
        x[first - 1] = ctx.current.quantity.clone();
        LoadVector::new(x)
    }
}

/// Two-node policy: picks a primary node uniformly at random, fills it up to
/// load 3/4 on arrivals adjacent to both nodes and sends the overflow to the
/// other node.
#[derive(Clone, Debug, Default)]
pub struct ThresholdGuardPolicy {
    primary: Option<usize>,
}

impl ThresholdGuardPolicy {
    pub fn threshold() -> Rational {
        Rational::new(3, 4)
    }
}

impl Policy for ThresholdGuardPolicy {
    fn name(&self) -> &str {
        "threshold-guard"
    }

    fn support(&self) -> Support {
        Support::Finite
    }

    fn check_dimension(&self, n: usize) -> Result<()> {
        if n == 2 {
            Ok(())
        } else {
            Err(Error::UnsupportedDimension {
                policy: self.name().to_string(),
                n,
            })
        }
    }

    fn reset(&mut self) {
        self.primary = None;
    }

    fn step(&mut self, ctx: &StepContext<'_>, coins: &mut Coins) -> Result<LoadVector> {
        self.check_dimension(ctx.n)?;
        let u = *self.primary.get_or_insert_with(|| 1 + coins.choose(2));
        let q = &ctx.current.quantity;
        let mut x = vec![Rational::zero(); 2];
        if ctx.current.neighbors.len() == 1 {
            let only = *ctx.current.neighbors.first().expect("nonempty");
            x[only - 1] = q.clone();
        } else {
            let room = (Self::threshold() - ctx.loads.node(u)).positive_part();
            let to_primary = if &room < q { room } else { q.clone() };
            x[2 - u] = q - &to_primary;
            x[u - 1] = to_primary;
        }
        LoadVector::new(x)
    }
}

/// Splits `q_t` over `N_t` with independent random weights.
#[derive(Clone, Debug, Default)]
pub struct RandomSplitPolicy;

impl Policy for RandomSplitPolicy {
    fn name(&self) -> &str {
        "random-split"
    }

    fn support(&self) -> Support {
        Support::Infinite
    }

    fn step(&mut self, ctx: &StepContext<'_>, coins: &mut Coins) -> Result<LoadVector> {
        let weights = ctx
            .current
            .neighbors
            .iter()
            .map(|_| coins.unit(self.name()))
            .collect::<Result<Vec<_>>>()?;
        let total: Rational = weights.iter().sum();
        let mut x = vec![Rational::zero(); ctx.n];
        for (&i, w) in ctx.current.neighbors.iter().zip(&weights) {
            x[i - 1] = &ctx.current.quantity * w / &total;
        }
        LoadVector::new(x)
    }
}

/// Names accepted by [`policy_by_name`].
pub const POLICY_NAMES: [&str; 5] = ["wf", "proportional", "greedy-lowest", "threshold-guard", "random-split"];

pub fn policy_by_name(name: &str) -> Result<Box<dyn Policy>> {
    Ok(match name {
        "wf" | "water-filling" => Box::new(WaterFillingPolicy),
        "proportional" => Box::new(ProportionalPolicy),
        "greedy-lowest" | "greedy" => Box::new(GreedyLowestIndexPolicy),
        "threshold-guard" => Box::new(ThresholdGuardPolicy::default()),
        "random-split" => Box::new(RandomSplitPolicy),
        other => return Err(Error::UnknownPolicy(other.to_string())),
    })
}

/// Runs `policy` from scratch, checking every step for feasibility.
pub fn run_with_coins(sequence: &RequestSequence, policy: &mut dyn Policy, coins: &mut Coins) -> Result<Vec<LoadVector>> {
    let n = sequence.n();
    policy.check_dimension(n)?;
    policy.reset();
    let mut history: Vec<(Arrival, LoadVector)> = Vec::with_capacity(sequence.m());
    let mut loads = LoadVector::zeros(n);
    for (t, arrival) in sequence.arrivals().iter().enumerate() {
        let x = policy.step(
            &StepContext {
                n,
                history: &history,
                current: arrival,
                loads: &loads,
            },
            coins,
        )?;
        if !arrival_feasible(arrival, &x, n) {
            return Err(Error::PolicyInfeasibleOutput {
                policy: policy.name().to_string(),
                arrival: t + 1,
            });
        }
        loads = loads.checked_add(&x)?;
        history.push((arrival.clone(), x));
    }
    Ok(history.into_iter().map(|(_, x)| x).collect())
}

/// One seeded run.
pub fn run_policy(sequence: &RequestSequence, policy: &mut dyn Policy, seed: u64) -> Result<AllocationTrace> {
    let allocations = run_with_coins(sequence, policy, &mut Coins::seeded(seed))?;
    Ok(AllocationTrace::from_allocations(sequence, allocations))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ExpectationMode {
    Exact,
    /// Sample `k` uses seed `seed + k`, so one sample equals `run_policy`
    /// with `seed`.
    MonteCarlo { samples: usize, seed: u64 },
}

impl ExpectationMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            ExpectationMode::MonteCarlo { samples: 0, .. } => {
                Err(Error::InvalidParameter("Monte Carlo needs at least one sample".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One realized run with its probability (exact) or sample weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub weight: Rational,
    pub allocations: Vec<LoadVector>,
}

impl Outcome {
    pub fn final_loads(&self, n: usize) -> LoadVector {
        self.allocations
            .iter()
            .fold(LoadVector::zeros(n), |acc, x| acc.checked_add(x).expect("length n"))
    }
}

/// Every branch of a finite-support policy, with exact probabilities.
pub fn enumerate_branches(sequence: &RequestSequence, policy: &mut dyn Policy, limit: usize) -> Result<Vec<Outcome>> {
    if policy.support() == Support::Infinite {
        return Err(Error::ExactUnavailable {
            policy: policy.name().to_string(),
        });
    }
    let mut outcomes = Vec::new();
    let mut script = Vec::new();
    loop {
        if outcomes.len() == limit {
            return Err(Error::BranchLimitExceeded { limit });
        }
        let mut coins = Coins::scripted(script);
        let allocations = run_with_coins(sequence, policy, &mut coins)?;
        let Coins::Scripted { taken, .. } = coins else {
            unreachable!("scripted coins stay scripted")
        };
        let weight = taken
            .iter()
            .fold(Rational::one(), |w, &(_, k)| w / Rational::from(k));
        outcomes.push(Outcome { weight, allocations });

        // odometer: bump the deepest draw that still has untried branches
        match taken.iter().rposition(|&(c, k)| c + 1 < k) {
            Some(j) => {
                script = taken[..j].iter().map(|&(c, _)| c).collect();
                script.push(taken[j].0 + 1);
            }
            None => return Ok(outcomes),
        }
    }
}

/// Runs per `mode`: the exact branch tree or equally weighted seeded samples.
pub fn outcomes(sequence: &RequestSequence, policy: &mut dyn Policy, mode: ExpectationMode) -> Result<Vec<Outcome>> {
    mode.validate()?;
    match mode {
        ExpectationMode::Exact => enumerate_branches(sequence, policy, DEFAULT_BRANCH_LIMIT),
        ExpectationMode::MonteCarlo { samples, seed } => {
            let weight = Rational::new(1, samples as i64);
            (0..samples as u64)
                .map(|k| {
                    let allocations = run_with_coins(sequence, policy, &mut Coins::seeded(seed.wrapping_add(k)))?;
                    Ok(Outcome {
                        weight: weight.clone(),
                        allocations,
                    })
                })
                .collect()
        }
    }
}

/// Expected loads after each arrival.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedLoads {
    pub steps: Vec<LoadVector>,
    /// Number of runs behind the estimate (branches in exact mode).
    pub runs: usize,
    /// Per-node standard error of the final loads; Monte Carlo only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
}

impl ExpectedLoads {
    pub fn final_loads(&self) -> &LoadVector {
        self.steps.last().expect("validated sequences are nonempty")
    }
}

pub fn expected_from_outcomes(n: usize, m: usize, outcomes: &[Outcome], monte_carlo: bool) -> ExpectedLoads {
    let mut steps = vec![vec![Rational::zero(); n]; m];
    for o in outcomes {
        let mut running = vec![Rational::zero(); n];
        for (t, x) in o.allocations.iter().enumerate() {
            for i in 0..n {
                running[i] += &x[i];
                steps[t][i] += &running[i] * &o.weight;
            }
        }
    }
    let steps: Vec<LoadVector> = steps
        .into_iter()
        .map(|v| LoadVector::new(v).expect("expectation of nonnegative loads"))
        .collect();
    let std_errors = monte_carlo.then(|| {
        let k = outcomes.len() as f64;
        let finals: Vec<Vec<f64>> = outcomes.iter().map(|o| o.final_loads(n).to_f64()).collect();
        (0..n)
            .map(|i| {
                if outcomes.len() < 2 {
                    return 0.0;
                }
                let mean = finals.iter().map(|f| f[i]).sum::<f64>() / k;
                let var = finals.iter().map(|f| (f[i] - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            })
            .collect()
    });
    ExpectedLoads {
        steps,
        runs: outcomes.len(),
        std_errors,
    }
}

pub fn expected_loads(sequence: &RequestSequence, policy: &mut dyn Policy, mode: ExpectationMode) -> Result<ExpectedLoads> {
    let runs = outcomes(sequence, policy, mode)?;
    Ok(expected_from_outcomes(
        sequence.n(),
        sequence.m(),
        &runs,
        matches!(mode, ExpectationMode::MonteCarlo { .. }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::r;
    use crate::sequence::fixtures::{running_example, two_by_two};
    use crate::sequence::{random_instance, InstanceParams};
    use crate::waterfill::run_waterfill;

    fn loads(v: &[Rational]) -> LoadVector {
        LoadVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn water_filling_policy_matches_run_waterfill() {
        for seed in 0..100 {
            let e = random_instance(&InstanceParams::new(1 + seed as usize % 6, 1 + seed as usize % 8, seed)).unwrap();
            assert_eq!(run_policy(&e, &mut WaterFillingPolicy, seed).unwrap(), run_waterfill(&e).unwrap());
        }
    }

    #[test]
    fn proportional_on_running_example() {
        let e = running_example();
        let trace = run_policy(&e, &mut ProportionalPolicy, 0).unwrap();
        // per-node sums of q_t/|N_t| over adjacent arrivals
        let mut oracle = vec![Rational::zero(); 4];
        for a in e.arrivals() {
            for &i in &a.neighbors {
                oracle[i - 1] += &a.quantity / Rational::from(a.neighbors.len());
            }
        }
        let expected = loads(&[r(5, 3), r(19, 6), r(14, 3), r(5, 2)]);
        assert_eq!(trace.final_loads, expected);
        assert_eq!(loads(&oracle), expected);
    }

    #[test]
    fn greedy_is_forced() {
        let trace = run_policy(&two_by_two(), &mut GreedyLowestIndexPolicy, 3).unwrap();
        assert_eq!(trace.final_loads, LoadVector::from_integers(&[1, 1]).unwrap());
    }

    #[test]
    fn threshold_guard_branches() {
        let e = two_by_two();
        let branches = enumerate_branches(&e, &mut ThresholdGuardPolicy::default(), DEFAULT_BRANCH_LIMIT).unwrap();
        assert_eq!(branches.len(), 2);
        assert_eq!(branches[0].weight, r(1, 2));
        assert_eq!(branches[0].final_loads(2), loads(&[r(3, 4), r(5, 4)]));
        assert_eq!(branches[1].final_loads(2), loads(&[r(1, 4), r(7, 4)]));

        let exp = expected_loads(&e, &mut ThresholdGuardPolicy::default(), ExpectationMode::Exact).unwrap();
        assert_eq!(exp.final_loads(), &loads(&[r(1, 2), r(3, 2)]));
        assert_eq!(exp.runs, 2);
        assert!(exp.std_errors.is_none());
    }

    #[test]
    fn threshold_guard_singletons_are_forced() {
        let e = RequestSequence::new(2, vec![Arrival::new([1], r(1, 1)), Arrival::new([2], r(1, 1))]).unwrap();
        let branches = enumerate_branches(&e, &mut ThresholdGuardPolicy::default(), DEFAULT_BRANCH_LIMIT).unwrap();
        assert_eq!(branches.len(), 2);
        for b in branches {
            assert_eq!(b.final_loads(2), LoadVector::from_integers(&[1, 1]).unwrap());
        }
    }

    #[test]
    fn threshold_guard_rejects_other_dimensions() {
        let e = running_example();
        assert!(matches!(
            run_policy(&e, &mut ThresholdGuardPolicy::default(), 0),
            Err(Error::UnsupportedDimension { n: 4, .. })
        ));
    }

    #[test]
    fn threshold_guard_caps_at_quantity() {
        let e = RequestSequence::new(
            2,
            vec![Arrival::new([1, 2], r(1, 2)), Arrival::new([1, 2], r(1, 2))],
        )
        .unwrap();
        let branches = enumerate_branches(&e, &mut ThresholdGuardPolicy::default(), 10).unwrap();
        // primary 1 takes 1/2, then 1/4 more, overflow 1/4
        assert_eq!(branches[0].final_loads(2), loads(&[r(3, 4), r(1, 4)]));
        assert_eq!(branches[1].final_loads(2), loads(&[r(1, 4), r(3, 4)]));
    }

    #[test]
    fn monte_carlo_approaches_exact() {
        let e = two_by_two();
        let mc = expected_loads(
            &e,
            &mut ThresholdGuardPolicy::default(),
            ExpectationMode::MonteCarlo { samples: 10_000, seed: 7 },
        )
        .unwrap();
        let exact = [0.5, 1.5];
        for (got, want) in mc.final_loads().to_f64().iter().zip(exact) {
            assert!((got - want).abs() < 0.05, "{got} vs {want}");
        }
        assert_eq!(mc.runs, 10_000);
        assert_eq!(mc.std_errors.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn one_sample_is_one_seeded_run() {
        let e = running_example();
        for seed in [0u64, 5, 99] {
            let mc = expected_loads(&e, &mut RandomSplitPolicy, ExpectationMode::MonteCarlo { samples: 1, seed }).unwrap();
            let run = run_policy(&e, &mut RandomSplitPolicy, seed).unwrap();
            assert_eq!(mc.steps, run.loads);
        }
    }

    #[test]
    fn deterministic_expectation_is_the_run() {
        for seed in 0..30 {
            let e = random_instance(&InstanceParams::new(1 + seed as usize % 5, 1 + seed as usize % 7, seed)).unwrap();
            for name in ["wf", "proportional", "greedy-lowest"] {
                let mut p = policy_by_name(name).unwrap();
                let exp = expected_loads(&e, p.as_mut(), ExpectationMode::Exact).unwrap();
                let run = run_policy(&e, p.as_mut(), seed).unwrap();
                assert_eq!(exp.steps, run.loads);
                assert_eq!(exp.runs, 1);
            }
        }
    }

    #[test]
    fn infinite_support_has_no_exact_expectation() {
        assert!(matches!(
            expected_loads(&running_example(), &mut RandomSplitPolicy, ExpectationMode::Exact),
            Err(Error::ExactUnavailable { .. })
        ));
        assert!(expected_loads(
            &running_example(),
            &mut WaterFillingPolicy,
            ExpectationMode::MonteCarlo { samples: 0, seed: 0 }
        )
        .is_err());
    }

    /// Draws one coin per arrival, so the tree has `2^m` leaves.
    struct CoinPerStep;

    impl Policy for CoinPerStep {
        fn name(&self) -> &str {
            "coin-per-step"
        }
        fn support(&self) -> Support {
            Support::Finite
        }
        fn step(&mut self, ctx: &StepContext<'_>, coins: &mut Coins) -> Result<LoadVector> {
            let nodes: Vec<usize> = ctx.current.neighbors.iter().copied().collect();
            let pick = nodes[coins.choose(2) % nodes.len()];
            let mut x = vec![Rational::zero(); ctx.n];
            x[pick - 1] = ctx.current.quantity.clone();
            LoadVector::new(x)
        }
    }

    #[test]
    fn branch_tree_enumeration_and_guard() {
        let e = running_example();
        let branches = enumerate_branches(&e, &mut CoinPerStep, 64).unwrap();
        assert_eq!(branches.len(), 32);
        assert_eq!(branches.iter().map(|b| b.weight.clone()).sum::<Rational>(), Rational::one());
        assert!(matches!(
            enumerate_branches(&e, &mut CoinPerStep, 31),
            Err(Error::BranchLimitExceeded { limit: 31 })
        ));
    }

    struct Broken;

    impl Policy for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn support(&self) -> Support {
            Support::Deterministic
        }
        fn step(&mut self, ctx: &StepContext<'_>, _coins: &mut Coins) -> Result<LoadVector> {
            Ok(LoadVector::zeros(ctx.n))
        }
    }

    #[test]
    fn infeasible_steps_are_caught() {
        let err = run_policy(&running_example(), &mut Broken, 0).unwrap_err();
        assert!(matches!(err, Error::PolicyInfeasibleOutput { arrival: 1, .. }));
        assert!(err.is_guard());
    }

    #[test]
    fn built_in_policies_stay_feasible() {
        for seed in 0..500u64 {
            let n = 1 + seed as usize % 6;
            let e = random_instance(&InstanceParams::new(n, 1 + (seed as usize / 6) % 8, seed)).unwrap();
            for name in POLICY_NAMES {
                let mut p = policy_by_name(name).unwrap();
                if name == "threshold-guard" && n != 2 {
                    continue;
                }
                let trace = run_policy(&e, p.as_mut(), seed).unwrap();
                assert!(e.check_feasible(&trace.allocations), "{name} on seed {seed}");
            }
        }
        assert!(matches!(policy_by_name("nope"), Err(Error::UnknownPolicy(_))));
    }
}
