//! Request sequences: validation, nestedness, the induced nested sequence,
//! JSON instance files and seeded random generators.
//!
//! Offline nodes are 1-indexed everywhere in the public surface, and so are
//! arrivals when they are referred to by position (`t = 1..=m`).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::load::LoadVector;
use crate::rational::Rational;

pub type NodeSet = BTreeSet<usize>;

/// One online node: its compatible offline neighbors and divisible quantity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arrival {
    pub neighbors: NodeSet,
    #[serde(rename = "q")]
    pub quantity: Rational,
}

impl Arrival {
    pub fn new(neighbors: impl IntoIterator<Item = usize>, quantity: Rational) -> Self {
        Arrival {
            neighbors: neighbors.into_iter().collect(),
            quantity,
        }
    }
}

#[derive(Deserialize)]
struct RawSequence {
    n: usize,
    arrivals: Vec<Arrival>,
}

impl TryFrom<RawSequence> for RequestSequence {
    type Error = Error;
    fn try_from(raw: RawSequence) -> Result<Self> {
        RequestSequence::new(raw.n, raw.arrivals)
    }
}

/// A validated sequence of arrivals over `n` offline nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct RequestSequence {
    n: usize,
    arrivals: Vec<Arrival>,
}

impl RequestSequence {
    pub fn new(n: usize, arrivals: Vec<Arrival>) -> Result<Self> {
        validate(n, &arrivals)?;
        Ok(RequestSequence { n, arrivals })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.arrivals.len()
    }

    pub fn arrivals(&self) -> &[Arrival] {
        &self.arrivals
    }

    /// Arrival `t`, 1-indexed.
    pub fn arrival(&self, t: usize) -> &Arrival {
        &self.arrivals[t - 1]
    }

    pub fn total_quantity(&self) -> Rational {
        self.arrivals.iter().map(|a| &a.quantity).sum()
    }

    pub fn quantities(&self) -> Vec<Rational> {
        self.arrivals.iter().map(|a| a.quantity.clone()).collect()
    }

    /// The first `t` arrivals as a sequence of their own.
    pub fn prefix(&self, t: usize) -> RequestSequence {
        assert!((1..=self.m()).contains(&t));
        RequestSequence {
            n: self.n,
            arrivals: self.arrivals[..t].to_vec(),
        }
    }

    /// `N_1 ⊇ N_2 ⊇ … ⊇ N_m`.
    pub fn is_nested(&self) -> bool {
        self.arrivals
            .windows(2)
            .all(|w| w[1].neighbors.is_subset(&w[0].neighbors))
    }

    /// `Γ_i`: the arrivals (1-indexed, increasing) adjacent to offline node `i`.
    pub fn neighbors_of(&self, node: usize) -> Vec<usize> {
        self.arrivals
            .iter()
            .enumerate()
            .filter(|(_, a)| a.neighbors.contains(&node))
            .map(|(t, _)| t + 1)
            .collect()
    }

    /// `μ_i = max(Γ_i ∪ {0})` for every offline node.
    pub fn last_neighbors(&self) -> Vec<usize> {
        let mut mu = vec![0; self.n];
        for (t, a) in self.arrivals.iter().enumerate() {
            for &i in &a.neighbors {
                mu[i - 1] = t + 1;
            }
        }
        mu
    }

    /// All edges as `(offline node, arrival)` pairs.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        self.arrivals
            .iter()
            .enumerate()
            .flat_map(|(t, a)| a.neighbors.iter().map(move |&i| (i, t + 1)))
            .collect()
    }

    /// The nested sequence with `N̂_t = {i : t ≤ μ_i}` and unchanged quantities.
    pub fn induced_nested(&self) -> Result<RequestSequence> {
        let mu = self.last_neighbors();
        let arrivals = self
            .arrivals
            .iter()
            .enumerate()
            .map(|(t, a)| {
                let neighbors: NodeSet = (1..=self.n).filter(|&i| mu[i - 1] > t).collect();
                if neighbors.is_empty() {
                    return Err(Error::DegenerateOutput { arrival: t + 1 });
                }
                Ok(Arrival {
                    neighbors,
                    quantity: a.quantity.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RequestSequence {
            n: self.n,
            arrivals,
        })
    }

    /// Reorders arrivals: position `k` of the result holds arrival `order[k]`.
    pub fn permute_arrivals(&self, order: &[usize]) -> RequestSequence {
        assert_eq!(order.len(), self.m());
        RequestSequence {
            n: self.n,
            arrivals: order.iter().map(|&t| self.arrival(t).clone()).collect(),
        }
    }

    /// Renames offline node `i` to `relabel[i - 1]`; `relabel` must be a
    /// permutation of `1..=n`.
    pub fn relabel_nodes(&self, relabel: &[usize]) -> RequestSequence {
        assert_eq!(relabel.len(), self.n);
        RequestSequence {
            n: self.n,
            arrivals: self
                .arrivals
                .iter()
                .map(|a| Arrival {
                    neighbors: a.neighbors.iter().map(|&i| relabel[i - 1]).collect(),
                    quantity: a.quantity.clone(),
                })
                .collect(),
        }
    }

    /// Same quantities, new neighborhoods. The result is validated.
    pub fn with_neighborhoods(&self, neighborhoods: Vec<NodeSet>) -> Result<RequestSequence> {
        assert_eq!(neighborhoods.len(), self.m());
        let arrivals = neighborhoods
            .into_iter()
            .zip(&self.arrivals)
            .map(|(neighbors, a)| Arrival {
                neighbors,
                quantity: a.quantity.clone(),
            })
            .collect();
        RequestSequence::new(self.n, arrivals)
    }

    /// Whether `allocation` is feasible: one vector per arrival, supported on
    /// `N_t`, nonnegative, summing exactly to `q_t`.
    pub fn check_feasible(&self, allocation: &[LoadVector]) -> bool {
        allocation.len() == self.m()
            && allocation
                .iter()
                .zip(&self.arrivals)
                .all(|(x, a)| arrival_feasible(a, x, self.n))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sequence serializes")
    }

    pub fn from_json(text: &str) -> Result<RequestSequence> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInstance(e.to_string()))
    }
}

pub(crate) fn arrival_feasible(arrival: &Arrival, x: &LoadVector, n: usize) -> bool {
    x.len() == n
        && x.iter()
            .enumerate()
            .all(|(k, v)| !v.is_negative() && (v.is_zero() || arrival.neighbors.contains(&(k + 1))))
        && x.total() == arrival.quantity
}

/// Checks every structural invariant of a candidate sequence.
pub fn validate(n: usize, arrivals: &[Arrival]) -> Result<()> {
    if n == 0 {
        return Err(Error::NoOfflineNodes);
    }
    if arrivals.is_empty() {
        return Err(Error::EmptySequence);
    }
    for (t, a) in arrivals.iter().enumerate() {
        if a.neighbors.is_empty() {
            return Err(Error::EmptyNeighborhood { arrival: t + 1 });
        }
        if !a.quantity.is_positive() {
            return Err(Error::NonpositiveQuantity { arrival: t + 1 });
        }
        if let Some(&node) = a.neighbors.iter().find(|&&i| i == 0 || i > n) {
            return Err(Error::IndexOutOfRange { node, n });
        }
    }
    Ok(())
}

/// Knobs for the seeded instance generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub n: usize,
    pub m: usize,
    /// When set, quantities are rescaled exactly to this total. When unset
    /// they stay `k / denominator` with `k` in `1..=denominator`.
    pub total_quantity: Option<Rational>,
    /// Probability that an offline node is adjacent to an arrival.
    pub density: f64,
    pub denominator: u32,
    pub seed: u64,
}

impl InstanceParams {
    pub fn new(n: usize, m: usize, seed: u64) -> Self {
        InstanceParams {
            n,
            m,
            total_quantity: None,
            density: 0.5,
            denominator: 12,
            seed,
        }
    }

    pub fn with_total(mut self, total: Rational) -> Self {
        self.total_quantity = Some(total);
        self
    }

    pub fn with_density(mut self, density: f64) -> Self {
        self.density = density;
        self
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidParameter("n and m must be at least 1".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidParameter("density must lie in (0, 1]".into()));
        }
        if self.denominator == 0 {
            return Err(Error::InvalidParameter("denominator must be positive".into()));
        }
        if matches!(&self.total_quantity, Some(q) if !q.is_positive()) {
            return Err(Error::InvalidParameter("total quantity must be positive".into()));
        }
        Ok(())
    }

    fn quantities(&self, rng: &mut ChaCha8Rng) -> Vec<Rational> {
        let d = i64::from(self.denominator);
        let ks: Vec<i64> = (0..self.m).map(|_| rng.gen_range(1..=d)).collect();
        match &self.total_quantity {
            None => ks.iter().map(|&k| Rational::new(k, d)).collect(),
            Some(total) => {
                let sum = Rational::from_integer(ks.iter().sum());
                ks.iter()
                    .map(|&k| Rational::from_integer(k) * total / &sum)
                    .collect()
            }
        }
    }
}

/// A random member of `E_{n,m,q}`; deterministic in `params.seed`.
pub fn random_instance(params: &InstanceParams) -> Result<RequestSequence> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let quantities = params.quantities(&mut rng);
    let arrivals = quantities
        .into_iter()
        .map(|quantity| {
            let mut neighbors: NodeSet = (1..=params.n)
                .filter(|_| params.density >= 1.0 || rng.gen_bool(params.density))
                .collect();
            if neighbors.is_empty() {
                neighbors.insert(rng.gen_range(1..=params.n));
            }
            Arrival { neighbors, quantity }
        })
        .collect();
    RequestSequence::new(params.n, arrivals)
}

/// A random nested sequence: neighborhoods are prefixes of one random node
/// ordering with nonincreasing sizes. `density` is ignored.
pub fn random_nested_instance(params: &InstanceParams) -> Result<RequestSequence> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x6e65_7374_6564);
    let quantities = params.quantities(&mut rng);
    let mut order: Vec<usize> = (1..=params.n).collect();
    order.shuffle(&mut rng);
    let mut sizes: Vec<usize> = (0..params.m).map(|_| rng.gen_range(1..=params.n)).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let arrivals = quantities
        .into_iter()
        .zip(sizes)
        .map(|(quantity, size)| Arrival {
            neighbors: order[..size].iter().copied().collect(),
            quantity,
        })
        .collect();
    RequestSequence::new(params.n, arrivals)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::rational::r;
    use proptest::prelude::*;

    #[test]
    fn running_example_is_valid() {
        let e = running_example();
        assert_eq!((e.n(), e.m()), (4, 5));
        assert_eq!(e.total_quantity(), r(12, 1));
        assert!(validate(e.n(), e.arrivals()).is_ok());
    }

    #[test]
    fn validation_errors() {
        let empty = RequestSequence::new(2, vec![Arrival::new([], r(1, 1))]);
        assert!(matches!(empty, Err(Error::EmptyNeighborhood { arrival: 1 })));
        let zero = RequestSequence::new(
            2,
            vec![Arrival::new([1], r(1, 1)), Arrival::new([1], Rational::zero())],
        );
        assert!(matches!(zero, Err(Error::NonpositiveQuantity { arrival: 2 })));
        let out = RequestSequence::new(2, vec![Arrival::new([3], r(1, 1))]);
        assert!(matches!(out, Err(Error::IndexOutOfRange { node: 3, n: 2 })));
        let none = RequestSequence::new(2, vec![Arrival::new([0], r(1, 1))]);
        assert!(matches!(none, Err(Error::IndexOutOfRange { node: 0, .. })));
        assert!(matches!(RequestSequence::new(2, vec![]), Err(Error::EmptySequence)));
        assert!(matches!(
            RequestSequence::new(0, vec![Arrival::new([1], r(1, 1))]),
            Err(Error::NoOfflineNodes)
        ));
    }

    #[test]
    fn nestedness() {
        assert!(!running_example().is_nested());
        let single = RequestSequence::new(3, vec![Arrival::new([2], r(1, 1))]).unwrap();
        assert!(single.is_nested());
        let chain = RequestSequence::new(
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
        assert!(chain.is_nested());
    }

    #[test]
    fn induced_nested_of_running_example() {
        let e = running_example();
        assert_eq!(e.last_neighbors(), vec![2, 4, 5, 5]);
        let nested = e.induced_nested().unwrap();
        let expected: Vec<Vec<usize>> = vec![
            vec![1, 2, 3, 4],
            vec![1, 2, 3, 4],
            vec![2, 3, 4],
            vec![2, 3, 4],
            vec![3, 4],
        ];
        let got: Vec<Vec<usize>> = nested
            .arrivals()
            .iter()
            .map(|a| a.neighbors.iter().copied().collect())
            .collect();
        assert_eq!(got, expected);
        assert_eq!(nested.quantities(), e.quantities());
        assert!(nested.is_nested());
    }

    #[test]
    fn induced_nested_single_node() {
        let e = RequestSequence::new(
            1,
            vec![Arrival::new([1], r(1, 2)), Arrival::new([1], r(3, 2))],
        )
        .unwrap();
        assert_eq!(e.induced_nested().unwrap(), e);
    }

    #[test]
    fn feasibility_predicate() {
        let e = running_example();
        let opt_alloc: Vec<LoadVector> = [[0, 1, 0, 1], [3, 1, 1, 0], [0, 0, 2, 0], [0, 1, 0, 0], [0, 0, 0, 2]]
            .iter()
            .map(|row| LoadVector::from_integers(row).unwrap())
            .collect();
        assert!(e.check_feasible(&opt_alloc));

        let mut off_support = opt_alloc.clone();
        off_support[2] = LoadVector::from_integers(&[0, 1, 1, 0]).unwrap();
        assert!(!e.check_feasible(&off_support));

        let mut short = opt_alloc.clone();
        short[1] = LoadVector::from_integers(&[2, 1, 1, 0]).unwrap();
        assert!(!e.check_feasible(&short));
        assert!(!e.check_feasible(&opt_alloc[..4]));
    }

    #[test]
    fn json_format() {
        let e = two_by_two();
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(
            json,
            r#"{"n":2,"arrivals":[{"neighbors":[1,2],"q":"1"},{"neighbors":[2],"q":"1"}]}"#
        );
        let parsed = RequestSequence::from_json(
            r#"{"n": 2, "arrivals": [{"neighbors": [2, 1], "q": "0.5"}, {"neighbors": [2], "q": "3/2"}]}"#,
        )
        .unwrap();
        assert_eq!(parsed.arrival(1).quantity, r(1, 2));
        assert_eq!(parsed.total_quantity(), r(2, 1));
        let bad = RequestSequence::from_json(r#"{"n": 2, "arrivals": [{"neighbors": [], "q": "1"}]}"#);
        assert!(matches!(bad, Err(Error::InvalidInstance(msg)) if msg.contains("empty neighborhood")));
    }

    #[test]
    fn generators_are_deterministic_and_valid() {
        let p = InstanceParams::new(4, 5, 99).with_total(r(12, 1));
        let a = random_instance(&p).unwrap();
        assert_eq!(a, random_instance(&p).unwrap());
        assert_eq!((a.n(), a.m()), (4, 5));
        assert_eq!(a.total_quantity(), r(12, 1));

        let dense = random_instance(&InstanceParams::new(5, 6, 1).with_density(1.0)).unwrap();
        assert!(dense.is_nested());
        assert!(dense.arrivals().iter().all(|a| a.neighbors.len() == 5));

        for seed in 0..50 {
            let nested = random_nested_instance(&InstanceParams::new(5, 7, seed)).unwrap();
            assert!(nested.is_nested());
            for a in nested.arrivals() {
                assert!(a.quantity.denom() <= &12.into());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn json_roundtrip(n in 1usize..7, m in 1usize..9, seed in any::<u64>(), dense in 0.1f64..1.0) {
            let e = random_instance(&InstanceParams::new(n, m, seed).with_density(dense)).unwrap();
            let back = RequestSequence::from_json(&e.to_json()).unwrap();
            prop_assert_eq!(back, e);
        }

        #[test]
        fn induced_nested_is_idempotent_and_adds_edges(n in 1usize..7, m in 1usize..9, seed in any::<u64>()) {
            let e = random_instance(&InstanceParams::new(n, m, seed)).unwrap();
            // every arrival is nonempty, so each N_t ⊆ N̂_t and nothing degenerates
            let hat = e.induced_nested().unwrap();
            prop_assert!(hat.is_nested());
            prop_assert_eq!(hat.induced_nested().unwrap(), hat.clone());
            prop_assert!(e.edges().is_subset(&hat.edges()));
        }

        #[test]
        fn nested_sequences_are_fixed_points(n in 1usize..7, m in 1usize..9, seed in any::<u64>()) {
            let e = random_nested_instance(&InstanceParams::new(n, m, seed)).unwrap();
            prop_assert_eq!(e.induced_nested().unwrap(), e);
        }
    }
}
