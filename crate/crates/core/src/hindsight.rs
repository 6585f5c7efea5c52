//! The majorization-minimal hindsight allocation `OPT(E)`.
//!
//! Feasible load vectors are exactly the bases of the polymatroid with rank
//! `f(S) = Σ_t q_t·1{S ∩ N_t ≠ ∅}`. The minimal one is built bottom-up: the
//! lowest level is `λ* = min_{S≠∅} f(S)/|S|`, every node of the maximal
//! minimizer sits at `λ*`, the rank is contracted by that set, and the
//! recursion continues on the remaining nodes. Subsets are enumerated
//! exhaustively, so the instance size is guarded.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::load::LoadVector;
use crate::rational::Rational;
use crate::sequence::{NodeSet, RequestSequence};

/// Default guard on `n` for subset enumeration.
pub const DEFAULT_MAX_N: usize = 20;
/// Hard ceiling regardless of configuration; the rank table has `2^n` entries.
pub const MAX_ENUMERATION_N: usize = 30;

static MAX_N: AtomicUsize = AtomicUsize::new(DEFAULT_MAX_N);

/// Sets the guard used by [`opt_hindsight`] for the whole process.
pub fn set_max_n(limit: usize) {
    MAX_N.store(limit, Ordering::Relaxed);
}

pub fn max_n() -> usize {
    MAX_N.load(Ordering::Relaxed)
}

/// `f(S)`: total quantity of arrivals touching `S`.
pub fn rank(sequence: &RequestSequence, subset: &NodeSet) -> Result<Rational> {
    if let Some(&node) = subset.iter().find(|&&i| i == 0 || i > sequence.n()) {
        return Err(Error::IndexOutOfRange { node, n: sequence.n() });
    }
    Ok(sequence
        .arrivals()
        .iter()
        .filter(|a| !a.neighbors.is_disjoint(subset))
        .map(|a| &a.quantity)
        .sum())
}

/// Rank function tabulated over every subset (bit `k` of a mask is node
/// `k + 1`). Values are stored as integers over a common denominator.
#[derive(Clone, Debug)]
pub struct RankFunction {
    n: usize,
    scale: BigInt,
    table: Vec<BigInt>,
}

impl RankFunction {
    pub fn new(sequence: &RequestSequence, max_n: usize) -> Result<Self> {
        let n = sequence.n();
        let limit = max_n.min(MAX_ENUMERATION_N);
        if n > limit {
            return Err(Error::InstanceTooLarge { n, limit });
        }
        let scale = sequence
            .arrivals()
            .iter()
            .fold(BigInt::one(), |acc, a| acc.lcm(a.quantity.denom()));
        let full = (1usize << n) - 1;

        // inside[A] = scaled quantity of arrivals with N_t ⊆ A (zeta transform)
        let mut inside = vec![BigInt::zero(); 1 << n];
        let mut total = BigInt::zero();
        for a in sequence.arrivals() {
            let mask = a.neighbors.iter().fold(0usize, |m, &i| m | 1 << (i - 1));
            let scaled = a.quantity.numer() * (&scale / a.quantity.denom());
            total += &scaled;
            inside[mask] += scaled;
        }
        for bit in 0..n {
            for mask in 0..=full {
                if mask & (1 << bit) != 0 {
                    let lower = inside[mask ^ (1 << bit)].clone();
                    inside[mask] += lower;
                }
            }
        }
        let table = (0..=full).map(|s| &total - &inside[full ^ s]).collect();
        Ok(RankFunction { n, scale, table })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn value(&self, mask: usize) -> Rational {
        Rational::from_bigints(self.table[mask].clone(), self.scale.clone())
    }

    fn scaled(&self, mask: usize) -> &BigInt {
        &self.table[mask]
    }
}

/// One level of the tight-set recursion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TightLevel {
    pub level: Rational,
    pub nodes: NodeSet,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HindsightSolution {
    pub loads: LoadVector,
    /// Levels in strictly increasing order.
    pub levels: Vec<TightLevel>,
    /// One feasible per-arrival allocation achieving `loads`. Not canonical.
    pub witness: Vec<LoadVector>,
}

/// `OPT(E)` under the process-wide size guard (see [`set_max_n`]).
pub fn opt_hindsight(sequence: &RequestSequence) -> Result<LoadVector> {
    Ok(solve_hindsight(sequence, max_n())?.loads)
}

pub fn solve_hindsight(sequence: &RequestSequence, max_n: usize) -> Result<HindsightSolution> {
    let f = RankFunction::new(sequence, max_n)?;
    let n = f.n;
    let mut loads = vec![Rational::zero(); n];
    let mut levels = Vec::new();
    let mut fixed = 0usize;
    let everything = (1usize << n) - 1;

    while fixed != everything {
        let rest = everything ^ fixed;
        let base = f.scaled(fixed);
        // best ratio as (value, size), compared by cross-multiplication
        let mut best: Option<(BigInt, usize)> = None;
        let mut union = 0usize;
        let mut sub = rest;
        while sub != 0 {
            let value = f.scaled(sub | fixed) - base;
            let size = sub.count_ones() as usize;
            let ord = match &best {
                None => std::cmp::Ordering::Less,
                Some((bv, bs)) => (&value * *bs).cmp(&(bv * size)),
            };
            match ord {
                std::cmp::Ordering::Less => {
                    best = Some((value, size));
                    union = sub;
                }
                std::cmp::Ordering::Equal => union |= sub,
                std::cmp::Ordering::Greater => {}
            }
            sub = (sub - 1) & rest;
        }
        let (value, size) = best.expect("rest is nonempty");
        let level = Rational::from_bigints(value, f.scale.clone() * size);
        let nodes: NodeSet = (0..n).filter(|k| union & (1 << k) != 0).map(|k| k + 1).collect();
        for &i in &nodes {
            loads[i - 1] = level.clone();
        }
        levels.push(TightLevel { level, nodes });
        fixed |= union;
    }

    let loads = LoadVector::new(loads)?;
    let witness = feasible_allocation(sequence, &loads)
        .expect("tight-set loads are a base of the rank polymatroid");
    Ok(HindsightSolution {
        loads,
        levels,
        witness,
    })
}

/// Finds a per-arrival allocation whose loads equal `targets`, if any, by an
/// exact augmenting-path max-flow (source → arrivals → nodes → sink).
pub fn feasible_allocation(sequence: &RequestSequence, targets: &LoadVector) -> Option<Vec<LoadVector>> {
    let (n, m) = (sequence.n(), sequence.m());
    if targets.len() != n || targets.total() != sequence.total_quantity() {
        return None;
    }
    let source = 0;
    let sink = m + n + 1;
    let size = m + n + 2;
    let mut cap = vec![vec![Rational::zero(); size]; size];
    let mut adj = vec![Vec::new(); size];
    let mut link = |cap: &mut Vec<Vec<Rational>>, u: usize, v: usize, c: Rational| {
        cap[u][v] = c;
        adj[u].push(v);
        adj[v].push(u);
    };
    for (t, a) in sequence.arrivals().iter().enumerate() {
        link(&mut cap, source, t + 1, a.quantity.clone());
        for &i in &a.neighbors {
            // arrival edges are bounded by q_t through the source edge anyway
            link(&mut cap, t + 1, m + i, a.quantity.clone());
        }
    }
    for i in 1..=n {
        link(&mut cap, m + i, sink, targets.node(i).clone());
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }

    let mut flow = vec![vec![Rational::zero(); size]; size];
    let mut pushed = Rational::zero();
    loop {
        let mut parent = vec![usize::MAX; size];
        parent[source] = source;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if parent[v] == usize::MAX && (&cap[u][v] - &flow[u][v]).is_positive() {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if parent[sink] == usize::MAX {
            break;
        }
        let mut bottleneck: Option<Rational> = None;
        let mut v = sink;
        while v != source {
            let u = parent[v];
            let residual = &cap[u][v] - &flow[u][v];
            bottleneck = Some(match bottleneck {
                Some(b) if b <= residual => b,
                _ => residual,
            });
            v = u;
        }
        let b = bottleneck.expect("path has an edge");
        let mut v = sink;
        while v != source {
            let u = parent[v];
            flow[u][v] += &b;
            flow[v][u] -= &b;
            v = u;
        }
        pushed += b;
    }
    if pushed != sequence.total_quantity() {
        return None;
    }
    let allocation = (1..=m)
        .map(|t| {
            LoadVector::new((1..=n).map(|i| flow[t][m + i].positive_part()).collect())
                .expect("flow is nonnegative")
        })
        .collect();
    Some(allocation)
}

/// A random point of `Δ(N, q)` with small-denominator rational weights.
pub fn sample_simplex<R: Rng>(rng: &mut R, neighbors: &NodeSet, q: &Rational, n: usize) -> LoadVector {
    let nodes: Vec<usize> = neighbors.iter().copied().collect();
    let mut weights: Vec<i64> = nodes.iter().map(|_| rng.gen_range(0..=6)).collect();
    if weights.iter().all(|&w| w == 0) {
        let k = rng.gen_range(0..weights.len());
        weights[k] = 1;
    }
    let total = Rational::from_integer(weights.iter().sum());
    let mut x = vec![Rational::zero(); n];
    for (&i, &w) in nodes.iter().zip(&weights) {
        x[i - 1] = q * Rational::from_integer(w) / &total;
    }
    LoadVector::new(x).expect("weights are nonnegative")
}

/// A random feasible per-arrival allocation; deterministic in `seed`.
pub fn sample_feasible(sequence: &RequestSequence, seed: u64) -> Vec<LoadVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sequence
        .arrivals()
        .iter()
        .map(|a| sample_simplex(&mut rng, &a.neighbors, &a.quantity, sequence.n()))
        .collect()
}

/// Sum of a per-arrival allocation.
pub fn total_loads(allocation: &[LoadVector], n: usize) -> LoadVector {
    allocation
        .iter()
        .fold(LoadVector::zeros(n), |acc, x| acc.checked_add(x).expect("same length"))
}
