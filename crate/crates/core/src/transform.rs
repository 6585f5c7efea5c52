//! Adversarial sequence constructions: nestification, deviation against a
//! policy, the upper-triangular worst case, and the adaptive game.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hindsight::opt_hindsight;
use crate::load::LoadVector;
use crate::policy::{expected_loads, Coins, ExpectationMode, ExpectedLoads, Policy, StepContext};
use crate::rational::Rational;
use crate::sequence::{arrival_feasible, Arrival, NodeSet, RequestSequence};
use crate::waterfill::run_waterfill;

/// Intermediate artifacts of [`nestify`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestifyAudit {
    /// Input with the inactive water-filling edges removed.
    pub pruned: RequestSequence,
    /// Removed `(offline node, arrival)` pairs.
    pub inactive_edges: Vec<(usize, usize)>,
    /// Water-filling heights on the pruned sequence.
    pub heights: Vec<Rational>,
    /// `sigma[t - 1]` is the new position of arrival `t`.
    pub sigma: Vec<usize>,
    /// `sigma_inverse[k - 1]` is the arrival placed at position `k`.
    pub sigma_inverse: Vec<usize>,
    pub permuted: RequestSequence,
    pub nested: RequestSequence,
    /// Last neighboring arrival of every offline node in `permuted`.
    pub mu: Vec<usize>,
}

/// Turns `E` into a nested sequence whose water-filling loads majorize
/// `WF(E)` and whose hindsight optimum is minorized by `OPT(E)`.
///
/// Inactive edges are pruned, arrivals are sorted by height (ties put the
/// later arrival first) and the induced nested sequence is taken.
pub fn nestify(sequence: &RequestSequence) -> Result<(RequestSequence, NestifyAudit)> {
    let m = sequence.m();
    let trace = run_waterfill(sequence)?;
    let pruned = sequence.with_neighborhoods(trace.supports(m))?;
    let heights = run_waterfill(&pruned)?
        .heights
        .expect("water-filling supports share a common level");

    let mut order: Vec<usize> = (1..=m).collect();
    order.sort_by(|&s, &t| heights[s - 1].cmp(&heights[t - 1]).then(t.cmp(&s)));
    let mut sigma = vec![0; m];
    for (k, &t) in order.iter().enumerate() {
        sigma[t - 1] = k + 1;
    }

    let permuted = pruned.permute_arrivals(&order);
    let nested = permuted.induced_nested()?;
    let audit = NestifyAudit {
        pruned,
        inactive_edges: trace.inactive_edges,
        heights,
        sigma,
        sigma_inverse: order,
        mu: permuted.last_neighbors(),
        permuted,
        nested: nested.clone(),
    };
    Ok((nested, audit))
}

/// `φ_t = |{i : μ_i = t}|` for `t = 0..=m`.
fn departures(sequence: &RequestSequence) -> Vec<usize> {
    let mut phi = vec![0; sequence.m() + 1];
    for mu in sequence.last_neighbors() {
        phi[mu] += 1;
    }
    phi
}

/// Removes `count` remaining nodes of smallest load; among equal loads the
/// largest index goes first.
fn remove_lowest(remaining: &mut NodeSet, loads: &LoadVector, count: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = remaining.iter().copied().collect();
    candidates.sort_by(|&a, &b| loads.node(a).cmp(loads.node(b)).then(b.cmp(&a)));
    let removed: Vec<usize> = candidates.into_iter().take(count).collect();
    for i in &removed {
        remaining.remove(i);
    }
    removed
}

/// Result of [`policy_deviation`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub sequence: RequestSequence,
    /// `schedule[t]` lists the nodes removed after arrival `t`; entry `0`
    /// holds nodes with no neighbor at all, removed before the first arrival.
    pub schedule: Vec<Vec<usize>>,
    /// Expected loads of the policy on the output sequence.
    pub expected: ExpectedLoads,
}

/// Rebuilds a nested sequence against `policy`: after each arrival the
/// `φ_t` remaining nodes with the smallest expected load leave the game.
pub fn policy_deviation(nested: &RequestSequence, policy: &mut dyn Policy, mode: ExpectationMode) -> Result<Deviation> {
    if !nested.is_nested() {
        return Err(Error::NotNested);
    }
    mode.validate()?;
    let n = nested.n();
    policy.check_dimension(n)?;
    let phi = departures(nested);
    let mut remaining: NodeSet = (1..=n).collect();
    let mut schedule = vec![remove_lowest(&mut remaining, &LoadVector::zeros(n), phi[0])];
    let mut arrivals = Vec::with_capacity(nested.m());
    let mut expected = None;
    for (t, arrival) in nested.arrivals().iter().enumerate() {
        arrivals.push(Arrival {
            neighbors: remaining.clone(),
            quantity: arrival.quantity.clone(),
        });
        let prefix = RequestSequence::new(n, arrivals.clone())?;
        let exp = expected_loads(&prefix, policy, mode)?;
        schedule.push(remove_lowest(&mut remaining, exp.final_loads(), phi[t + 1]));
        expected = Some(exp);
    }
    Ok(Deviation {
        sequence: RequestSequence::new(n, arrivals)?,
        schedule,
        expected: expected.expect("nonempty sequence"),
    })
}

/// The complete upper-triangular sequence `N′_t = {t..n}` whose quantities
/// are `OPT(Ẽ)` sorted ascending. Zero entries of `OPT(Ẽ)` (isolated nodes)
/// stay isolated and produce no arrival.
pub fn worstcase_upper_triangular(nested: &RequestSequence) -> Result<RequestSequence> {
    if !nested.is_nested() {
        return Err(Error::NotNested);
    }
    let n = nested.n();
    let q = opt_hindsight(nested)?.sorted_asc();
    let arrivals = q
        .into_iter()
        .enumerate()
        .filter(|(_, x)| x.is_positive())
        .map(|(j, x)| Arrival::new(j + 1..=n, x))
        .collect();
    RequestSequence::new(n, arrivals)
}

/// One round of [`adaptive_game`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRound {
    pub arrival: Arrival,
    pub allocation: LoadVector,
    /// Nodes the adversary retires after observing the allocation.
    pub removed: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameTranscript {
    pub policy: String,
    pub seed: u64,
    /// Isolated nodes retired before the first round.
    pub removed_at_start: Vec<usize>,
    pub rounds: Vec<GameRound>,
    pub realized: RequestSequence,
    pub final_loads: LoadVector,
    pub realized_opt: LoadVector,
}

/// Plays the deviation construction against one seeded run, retiring nodes
/// by realized rather than expected load.
pub fn adaptive_game(policy: &mut dyn Policy, seed_sequence: &RequestSequence, seed: u64) -> Result<GameTranscript> {
    if !seed_sequence.is_nested() {
        return Err(Error::NotNested);
    }
    let n = seed_sequence.n();
    policy.check_dimension(n)?;
    policy.reset();
    let mut coins = Coins::seeded(seed);
    let phi = departures(seed_sequence);
    let mut remaining: NodeSet = (1..=n).collect();
    let mut loads = LoadVector::zeros(n);
    let removed_at_start = remove_lowest(&mut remaining, &loads, phi[0]);
    let mut history: Vec<(Arrival, LoadVector)> = Vec::new();
    let mut rounds = Vec::with_capacity(seed_sequence.m());

    for (t, a) in seed_sequence.arrivals().iter().enumerate() {
        let arrival = Arrival {
            neighbors: remaining.clone(),
            quantity: a.quantity.clone(),
        };
        let x = policy.step(
            &StepContext {
                n,
                history: &history,
                current: &arrival,
                loads: &loads,
            },
            &mut coins,
        )?;
        if !arrival_feasible(&arrival, &x, n) {
            return Err(Error::PolicyInfeasibleOutput {
                policy: policy.name().to_string(),
                arrival: t + 1,
            });
        }
        loads = loads.checked_add(&x)?;
        let removed = remove_lowest(&mut remaining, &loads, phi[t + 1]);
        history.push((arrival.clone(), x.clone()));
        rounds.push(GameRound {
            arrival,
            allocation: x,
            removed,
        });
    }

    let realized = RequestSequence::new(n, rounds.iter().map(|r| r.arrival.clone()).collect())?;
    let realized_opt = opt_hindsight(&realized)?;
    Ok(GameTranscript {
        policy: policy.name().to_string(),
        seed,
        removed_at_start,
        rounds,
        realized,
        final_loads: loads,
        realized_opt,
    })
}
