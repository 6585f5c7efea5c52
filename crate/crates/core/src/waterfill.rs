//! Water-filling: each arrival is split so as to maximize the minimum
//! resulting load among its neighbors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::load::LoadVector;
use crate::rational::Rational;
use crate::sequence::{NodeSet, RequestSequence};

/// The allocation for one arrival together with its water level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepResult {
    pub allocation: LoadVector,
    /// Common post-step load of every node in the support.
    pub level: Rational,
    pub support: NodeSet,
}

/// Water-fills quantity `q` over `neighbors` on top of `loads`.
///
/// Neighbor loads are scanned in ascending order; the level after filling the
/// `k` lowest nodes is `(q + Σ_{j≤k} ℓ_j) / k`, and the scan stops at the first
/// `k` whose level does not exceed the next load. Errors report arrival `0`
/// since a lone step has no sequence position.
pub fn water_fill_step(neighbors: &NodeSet, q: &Rational, loads: &LoadVector) -> Result<StepResult> {
    if neighbors.is_empty() {
        return Err(Error::EmptyNeighborhood { arrival: 0 });
    }
    if !q.is_positive() {
        return Err(Error::NonpositiveQuantity { arrival: 0 });
    }
    let n = loads.len();
    if let Some(&node) = neighbors.iter().find(|&&i| i == 0 || i > n) {
        return Err(Error::IndexOutOfRange { node, n });
    }

    let mut order: Vec<usize> = neighbors.iter().copied().collect();
    order.sort_by(|&a, &b| loads.node(a).cmp(loads.node(b)).then(a.cmp(&b)));

    let mut filled = q.clone();
    let mut k = 0;
    let level = loop {
        filled += loads.node(order[k]);
        k += 1;
        let level = &filled / Rational::from(k);
        if k == order.len() || &level <= loads.node(order[k]) {
            break level;
        }
    };

    let mut allocation = vec![Rational::zero(); n];
    for &i in &order[..k] {
        allocation[i - 1] = &level - loads.node(i);
    }
    Ok(StepResult {
        allocation: LoadVector::new(allocation)?,
        level,
        support: order[..k].iter().copied().collect(),
    })
}

/// Full record of an online run: per-arrival allocations, intermediate loads,
/// heights and the active/inactive edge split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationTrace {
    /// `x_t` for `t = 1..=m`.
    pub allocations: Vec<LoadVector>,
    /// `ℓ_t = ℓ_{t−1} + x_t` for `t = 1..=m`.
    pub loads: Vec<LoadVector>,
    /// `h_t`, present when every arrival's support ends at a common load
    /// (always the case for water-filling).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heights: Option<Vec<Rational>>,
    /// `(offline node, arrival)` pairs with positive allocation.
    pub active_edges: Vec<(usize, usize)>,
    /// `(offline node, arrival)` pairs in `N_t` left at zero.
    pub inactive_edges: Vec<(usize, usize)>,
    pub final_loads: LoadVector,
}

impl AllocationTrace {
    /// Builds the trace of a feasible allocation. The caller is responsible
    /// for feasibility.
    pub fn from_allocations(sequence: &RequestSequence, allocations: Vec<LoadVector>) -> Self {
        assert_eq!(allocations.len(), sequence.m());
        let mut current = LoadVector::zeros(sequence.n());
        let mut loads = Vec::with_capacity(allocations.len());
        let mut heights = Some(Vec::with_capacity(allocations.len()));
        let mut active_edges = Vec::new();
        let mut inactive_edges = Vec::new();

        for (t, (x, arrival)) in allocations.iter().zip(sequence.arrivals()).enumerate() {
            current = current.checked_add(x).expect("allocation has length n");
            let mut level: Option<&Rational> = None;
            for &i in &arrival.neighbors {
                if x.node(i).is_positive() {
                    active_edges.push((i, t + 1));
                    match level {
                        None => level = Some(current.node(i)),
                        Some(h) if h != current.node(i) => heights = None,
                        Some(_) => {}
                    }
                } else {
                    inactive_edges.push((i, t + 1));
                }
            }
            if let (Some(hs), Some(h)) = (heights.as_mut(), level) {
                hs.push(h.clone());
            }
            loads.push(current.clone());
        }
        active_edges.sort_unstable();
        inactive_edges.sort_unstable();

        AllocationTrace {
            allocations,
            loads,
            heights,
            active_edges,
            inactive_edges,
            final_loads: current,
        }
    }

    pub fn final_loads(&self) -> &LoadVector {
        &self.final_loads
    }

    /// `I_t` for each arrival: neighbors that received nothing.
    pub fn inactive_sets(&self, m: usize) -> Vec<NodeSet> {
        let mut sets = vec![BTreeSet::new(); m];
        for &(i, t) in &self.inactive_edges {
            sets[t - 1].insert(i);
        }
        sets
    }

    /// `{i : x_t(i) > 0}` for each arrival.
    pub fn supports(&self, m: usize) -> Vec<NodeSet> {
        let mut sets = vec![BTreeSet::new(); m];
        for &(i, t) in &self.active_edges {
            sets[t - 1].insert(i);
        }
        sets
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Water-filling over a whole sequence.
pub fn run_waterfill(sequence: &RequestSequence) -> Result<AllocationTrace> {
    let mut loads = LoadVector::zeros(sequence.n());
    let mut allocations = Vec::with_capacity(sequence.m());
    for (t, arrival) in sequence.arrivals().iter().enumerate() {
        let step = water_fill_step(&arrival.neighbors, &arrival.quantity, &loads).map_err(|e| match e {
            Error::EmptyNeighborhood { .. } => Error::EmptyNeighborhood { arrival: t + 1 },
            Error::NonpositiveQuantity { .. } => Error::NonpositiveQuantity { arrival: t + 1 },
            other => other,
        })?;
        loads = loads.checked_add(&step.allocation)?;
        allocations.push(step.allocation);
    }
    Ok(AllocationTrace::from_allocations(sequence, allocations))
}

/// `WF(E)`.
pub fn waterfill_loads(sequence: &RequestSequence) -> Result<LoadVector> {
    Ok(run_waterfill(sequence)?.final_loads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hindsight::sample_simplex;
    use crate::load::{compare_majorization, HarmonicMatrix, MajorizationRelation};
    use crate::rational::r;
    use crate::sequence::fixtures::running_example;
    use crate::sequence::{random_instance, random_nested_instance, Arrival, InstanceParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(v: &[usize]) -> NodeSet {
        v.iter().copied().collect()
    }

    fn lv(v: &[i64]) -> LoadVector {
        LoadVector::from_integers(v).unwrap()
    }

    #[test]
    fn step_examples() {
        let s = water_fill_step(&set(&[1, 2, 3]), &r(5, 1), &lv(&[0, 1, 0, 1])).unwrap();
        assert_eq!(s.allocation, lv(&[2, 1, 2, 0]));
        assert_eq!(s.level, r(2, 1));
        assert_eq!(s.support, set(&[1, 2, 3]));

        let s = water_fill_step(&set(&[4]), &r(2, 1), &lv(&[2, 2, 4, 2])).unwrap();
        assert_eq!(s.allocation, lv(&[0, 0, 0, 2]));
        assert_eq!(s.level, r(4, 1));

        let s = water_fill_step(&set(&[1, 2]), &r(1, 1), &lv(&[0, 0])).unwrap();
        assert_eq!(s.allocation, LoadVector::new(vec![r(1, 2), r(1, 2)]).unwrap());
        assert_eq!(s.level, r(1, 2));
    }

    #[test]
    fn step_leaves_high_neighbors_untouched() {
        let s = water_fill_step(&set(&[1, 2, 3]), &r(1, 1), &lv(&[0, 5, 0])).unwrap();
        assert_eq!(s.allocation, LoadVector::new(vec![r(1, 2), r(0, 1), r(1, 2)]).unwrap());
        assert_eq!(s.support, set(&[1, 3]));
        // exactly reaching the next load keeps that node out of the support
        let s = water_fill_step(&set(&[1, 2]), &r(2, 1), &lv(&[0, 2])).unwrap();
        assert_eq!(s.support, set(&[1]));
        assert_eq!(s.level, r(2, 1));
    }

    #[test]
    fn step_errors() {
        assert!(matches!(
            water_fill_step(&set(&[]), &r(1, 1), &lv(&[0])),
            Err(Error::EmptyNeighborhood { .. })
        ));
        assert!(matches!(
            water_fill_step(&set(&[1]), &Rational::zero(), &lv(&[0])),
            Err(Error::NonpositiveQuantity { .. })
        ));
        assert!(matches!(
            water_fill_step(&set(&[2]), &r(1, 1), &lv(&[0])),
            Err(Error::IndexOutOfRange { node: 2, n: 1 })
        ));
    }

    #[test]
    fn running_example_trace() {
        let trace = run_waterfill(&running_example()).unwrap();
        assert_eq!(trace.final_loads, lv(&[2, 2, 4, 4]));
        let expected_loads = [[0, 1, 0, 1], [2, 2, 2, 1], [2, 2, 4, 1], [2, 2, 4, 2], [2, 2, 4, 4]];
        for (got, want) in trace.loads.iter().zip(expected_loads) {
            assert_eq!(got, &lv(&want));
        }
        assert_eq!(
            trace.heights.clone().unwrap(),
            vec![r(1, 1), r(2, 1), r(4, 1), r(2, 1), r(4, 1)]
        );
        assert_eq!(trace.inactive_edges, vec![(2, 4), (3, 5)]);
        assert_eq!(trace.active_edges.len(), running_example().edges().len() - 2);
    }

    #[test]
    fn nested_example_and_harmonic_cross_check() {
        let e = RequestSequence::new(
            4,
            vec![
                Arrival::new([1, 2, 3, 4], r(2, 1)),
                Arrival::new([1, 2, 3, 4], r(1, 1)),
                Arrival::new([1, 2, 3, 4], r(5, 1)),
                Arrival::new([3, 4], r(2, 1)),
                Arrival::new([3], r(2, 1)),
            ],
        )
        .unwrap();
        let wf = waterfill_loads(&e).unwrap();
        assert_eq!(wf, lv(&[2, 2, 5, 3]));
        // nodes ordered by last neighbor: 1,2 (t=3), 4 (t=4), 3 (t=5)
        let z = lv(&[8, 0, 2, 2]);
        let hz = HarmonicMatrix::new(4).apply(&z).unwrap();
        assert_eq!(hz, wf.gather(&[1, 2, 4, 3]));
    }

    #[test]
    fn single_full_arrival_is_uniform() {
        for n in 1..=6 {
            let e = RequestSequence::new(n, vec![Arrival::new(1..=n, r(7, 3))]).unwrap();
            let wf = waterfill_loads(&e).unwrap();
            assert!(wf.iter().all(|v| v == &(r(7, 3) / Rational::from(n))));
        }
    }

    #[test]
    fn step_is_majorization_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..=6);
            let loads = LoadVector::new((0..n).map(|_| r(rng.gen_range(0..=8), rng.gen_range(1..=3))).collect()).unwrap();
            let mut neighbors: NodeSet = (1..=n).filter(|_| rng.gen_bool(0.6)).collect();
            if neighbors.is_empty() {
                neighbors.insert(rng.gen_range(1..=n));
            }
            let q = r(rng.gen_range(1..=12), rng.gen_range(1..=4));
            let best = water_fill_step(&neighbors, &q, &loads).unwrap();
            let best_loads = loads.checked_add(&best.allocation).unwrap();
            for _ in 0..50 {
                let other = sample_simplex(&mut rng, &neighbors, &q, n);
                let rel = compare_majorization(&best_loads, &loads.checked_add(&other).unwrap()).unwrap();
                assert!(rel.left_is_minor(), "{rel:?}");
                if rel == MajorizationRelation::Equivalent {
                    assert_eq!(other, best.allocation);
                }
            }
        }
    }

    #[test]
    fn nested_sequences_climb_in_height() {
        for seed in 0..200 {
            let e = random_nested_instance(&InstanceParams::new(1 + seed as usize % 6, 1 + seed as usize % 8, seed)).unwrap();
            let trace = run_waterfill(&e).unwrap();
            assert!(trace.inactive_edges.is_empty());
            let h = trace.heights.unwrap();
            assert!(h.windows(2).all(|w| w[0] < w[1]), "{h:?}");
        }
    }

    #[test]
    fn all_active_sequences_order_heights_per_node() {
        for seed in 0..200 {
            let e = random_instance(&InstanceParams::new(2 + seed as usize % 5, 1 + seed as usize % 8, seed)).unwrap();
            let trace = run_waterfill(&e).unwrap();
            let supports = trace.supports(e.m());
            let pruned = e.with_neighborhoods(supports).unwrap();
            let pruned_trace = run_waterfill(&pruned).unwrap();
            assert!(pruned_trace.inactive_edges.is_empty());
            let h = pruned_trace.heights.unwrap();
            for i in 1..=e.n() {
                let gamma = pruned.neighbors_of(i);
                for w in gamma.windows(2) {
                    assert!(h[w[0] - 1] < h[w[1] - 1]);
                }
            }
        }
    }

    #[test]
    fn nested_waterfill_is_harmonic_image() {
        for seed in 0..300 {
            let n = 1 + seed as usize % 6;
            let e = random_nested_instance(&InstanceParams::new(n, 1 + (seed as usize / 6) % 8, seed)).unwrap();
            let mu = e.last_neighbors();
            let mut order: Vec<usize> = (1..=n).collect();
            order.sort_by_key(|&i| (mu[i - 1], i));
            let q = e.quantities();
            let mut prev = 0;
            let z: Vec<Rational> = order
                .iter()
                .map(|&i| {
                    let zi = q[prev..mu[i - 1]].iter().sum();
                    prev = mu[i - 1];
                    zi
                })
                .collect();
            let hz = HarmonicMatrix::new(n).apply(&LoadVector::new(z).unwrap()).unwrap();
            assert_eq!(hz, waterfill_loads(&e).unwrap().gather(&order));
        }
    }

    #[test]
    fn loads_are_conserved() {
        for seed in 0..100 {
            let e = random_instance(&InstanceParams::new(5, 8, seed)).unwrap();
            let trace = run_waterfill(&e).unwrap();
            let mut total = Rational::zero();
            for (t, l) in trace.loads.iter().enumerate() {
                total += &e.arrival(t + 1).quantity;
                assert_eq!(l.total(), total);
            }
            assert!(e.check_feasible(&trace.allocations));
        }
    }
}
