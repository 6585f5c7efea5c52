//! Load vectors, the majorization preorder and the harmonic matrix.

use std::cmp::Ordering;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::Rational;

/// A fixed-length vector of nonnegative rationals.
///
/// Used for cumulative loads, single-arrival allocations and hindsight
/// optima alike. Position `k` holds offline node `k + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Rational>", into = "Vec<Rational>")]
pub struct LoadVector(Vec<Rational>);

impl LoadVector {
    pub fn new(entries: Vec<Rational>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(index) = entries.iter().position(Rational::is_negative) {
            return Err(Error::NegativeEntry { index });
        }
        Ok(LoadVector(entries))
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "load vector needs n >= 1");
        LoadVector(vec![Rational::zero(); n])
    }

    pub fn from_integers(values: &[i64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Rational::from_integer(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entries(&self) -> &[Rational] {
        &self.0
    }

    pub fn into_entries(self) -> Vec<Rational> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Rational> {
        self.0.iter()
    }

    pub fn total(&self) -> Rational {
        self.0.iter().sum()
    }

    /// Entry of 1-indexed offline node `node`.
    pub fn node(&self, node: usize) -> &Rational {
        &self.0[node - 1]
    }

    pub fn sorted_desc(&self) -> Vec<Rational> {
        let mut v = self.0.clone();
        v.sort_by(|a, b| b.cmp(a));
        v
    }

    pub fn sorted_asc(&self) -> Vec<Rational> {
        let mut v = self.0.clone();
        v.sort();
        v
    }

    /// Prefix sums of the decreasing rearrangement: entry `k` is `x([k+1])`.
    pub fn top_prefix_sums(&self) -> Vec<Rational> {
        prefix_sums(&self.sorted_desc())
    }

    pub fn checked_add(&self, other: &LoadVector) -> Result<LoadVector> {
        same_length(self, other)?;
        Ok(LoadVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Entries reordered so that output node `k` carries input node `perm[k]`
    /// (both 1-indexed).
    pub fn gather(&self, perm: &[usize]) -> LoadVector {
        LoadVector(perm.iter().map(|&i| self.0[i - 1].clone()).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(Rational::to_f64).collect()
    }

    /// True when both vectors hold the same multiset of entries.
    pub fn is_rearrangement_of(&self, other: &LoadVector) -> bool {
        self.len() == other.len() && self.sorted_asc() == other.sorted_asc()
    }
}

impl TryFrom<Vec<Rational>> for LoadVector {
    type Error = Error;
    fn try_from(value: Vec<Rational>) -> Result<Self> {
        LoadVector::new(value)
    }
}

impl From<LoadVector> for Vec<Rational> {
    fn from(value: LoadVector) -> Self {
        value.0
    }
}

impl Index<usize> for LoadVector {
    type Output = Rational;
    fn index(&self, index: usize) -> &Rational {
        &self.0[index]
    }
}

impl<'a> IntoIterator for &'a LoadVector {
    type Item = &'a Rational;
    type IntoIter = std::slice::Iter<'a, Rational>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

pub(crate) fn prefix_sums(values: &[Rational]) -> Vec<Rational> {
    let mut acc = Rational::zero();
    values
        .iter()
        .map(|v| {
            acc += v;
            acc.clone()
        })
        .collect()
}

fn same_length(x: &LoadVector, y: &LoadVector) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::UnequalLength {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

/// Outcome of comparing two vectors in the majorization preorder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MajorizationRelation {
    Equivalent,
    LeftMajorizesRight,
    RightMajorizesLeft,
    Incomparable,
}

impl MajorizationRelation {
    /// `x ⪯ y`: the left vector is at least as balanced as the right one.
    pub fn left_is_minor(self) -> bool {
        matches!(self, Self::Equivalent | Self::RightMajorizesLeft)
    }

    /// `x ⪰ y`.
    pub fn left_is_major(self) -> bool {
        matches!(self, Self::Equivalent | Self::LeftMajorizesRight)
    }
}

/// Compares `x` and `y` by the prefix sums of their decreasing rearrangements.
///
/// Both vectors must have the same length and the same exact total.
pub fn compare_majorization(x: &LoadVector, y: &LoadVector) -> Result<MajorizationRelation> {
    same_length(x, y)?;
    let (tx, ty) = (x.total(), y.total());
    if tx != ty {
        return Err(Error::UnequalSums {
            left: tx.to_string(),
            right: ty.to_string(),
        });
    }
    let (px, py) = (x.top_prefix_sums(), y.top_prefix_sums());
    let mut x_above = true;
    let mut y_above = true;
    for (a, b) in px.iter().zip(&py) {
        match a.cmp(b) {
            Ordering::Less => x_above = false,
            Ordering::Greater => y_above = false,
            Ordering::Equal => {}
        }
    }
    Ok(match (x_above, y_above) {
        (true, true) => MajorizationRelation::Equivalent,
        (true, false) => MajorizationRelation::LeftMajorizesRight,
        (false, true) => MajorizationRelation::RightMajorizesLeft,
        (false, false) => MajorizationRelation::Incomparable,
    })
}

/// `Σ_i max(x(i) − γ, 0)`.
pub fn karamata_value(x: &LoadVector, gamma: &Rational) -> Rational {
    x.iter().map(|v| (v - gamma).positive_part()).sum()
}

/// Majorization decided through threshold functions instead of prefix sums.
///
/// Both sides of `Σ max(x(i) − γ, 0)` are piecewise linear in `γ` with kinks
/// only at entry values, so checking every entry of either vector suffices.
pub fn majorizes_by_thresholds(x: &LoadVector, y: &LoadVector) -> Result<bool> {
    same_length(x, y)?;
    if x.total() != y.total() {
        return Err(Error::UnequalSums {
            left: x.total().to_string(),
            right: y.total().to_string(),
        });
    }
    Ok(x
        .iter()
        .chain(y.iter())
        .all(|g| karamata_value(x, g) >= karamata_value(y, g)))
}

/// The lower-triangular matrix with `H(i, j) = 1/(n − j + 1)` for `i ≥ j`.
///
/// It maps the per-level quantity profile of a nested sequence to the
/// water-filling load vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HarmonicMatrix {
    n: usize,
}

impl HarmonicMatrix {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "harmonic matrix needs n >= 1");
        HarmonicMatrix { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry `(i, j)`, 1-indexed.
    pub fn entry(&self, i: usize, j: usize) -> Rational {
        assert!((1..=self.n).contains(&i) && (1..=self.n).contains(&j));
        if i >= j {
            Rational::from(self.n - j + 1).recip()
        } else {
            Rational::zero()
        }
    }

    pub fn apply(&self, z: &LoadVector) -> Result<LoadVector> {
        if z.len() != self.n {
            return Err(Error::UnequalLength {
                left: self.n,
                right: z.len(),
            });
        }
        let mut acc = Rational::zero();
        let out = z
            .iter()
            .enumerate()
            .map(|(j, zj)| {
                acc += zj / Rational::from(self.n - j);
                acc.clone()
            })
            .collect();
        LoadVector::new(out)
    }

    /// Floating-point product, used inside numeric searches.
    pub fn apply_f64(&self, z: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        z.iter()
            .enumerate()
            .map(|(j, zj)| {
                acc += zj / (self.n - j) as f64;
                acc
            })
            .collect()
    }
}

pub fn apply_harmonic(h: &HarmonicMatrix, z: &LoadVector) -> Result<LoadVector> {
    h.apply(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::r;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lv(v: &[i64]) -> LoadVector {
        LoadVector::from_integers(v).unwrap()
    }

    fn lvr(v: &[(i64, i64)]) -> LoadVector {
        LoadVector::new(v.iter().map(|&(p, q)| r(p, q)).collect()).unwrap()
    }

    #[test]
    fn running_example_wf_majorizes_opt() {
        let rel = compare_majorization(&lv(&[2, 2, 4, 4]), &lv(&[3, 3, 3, 3])).unwrap();
        assert_eq!(rel, MajorizationRelation::LeftMajorizesRight);
    }

    #[test]
    fn identical_vectors_are_equivalent() {
        let rel = compare_majorization(&lv(&[3, 1, 2]), &lv(&[3, 1, 2])).unwrap();
        assert_eq!(rel, MajorizationRelation::Equivalent);
        let rel = compare_majorization(&lv(&[3, 1, 2]), &lv(&[1, 2, 3])).unwrap();
        assert_eq!(rel, MajorizationRelation::Equivalent);
    }

    #[test]
    fn crossing_prefix_sums_are_incomparable() {
        // sorted prefix sums (3,6,8,8) vs (4,6,7,8)
        let (x, y) = (lv(&[3, 3, 0, 2]), lv(&[4, 1, 1, 2]));
        assert_eq!(
            x.top_prefix_sums(),
            vec![r(3, 1), r(6, 1), r(8, 1), r(8, 1)]
        );
        assert_eq!(
            y.top_prefix_sums(),
            vec![r(4, 1), r(6, 1), r(7, 1), r(8, 1)]
        );
        let rel = compare_majorization(&x, &y).unwrap();
        assert_eq!(rel, MajorizationRelation::Incomparable);
    }

    #[test]
    fn unequal_inputs_are_rejected() {
        assert!(matches!(
            compare_majorization(&lv(&[1, 2]), &lv(&[1, 1])),
            Err(Error::UnequalSums { .. })
        ));
        assert!(matches!(
            compare_majorization(&lv(&[1, 2]), &lv(&[1, 1, 1])),
            Err(Error::UnequalLength { .. })
        ));
    }

    #[test]
    fn negative_entries_are_rejected() {
        assert!(matches!(
            LoadVector::new(vec![r(1, 1), r(-1, 2)]),
            Err(Error::NegativeEntry { index: 1 })
        ));
        assert!(matches!(LoadVector::new(vec![]), Err(Error::EmptyVector)));
    }

    #[test]
    fn karamata_examples() {
        assert_eq!(karamata_value(&lv(&[2, 2, 4, 4]), &r(3, 1)), r(2, 1));
        let x = lvr(&[(1, 3), (5, 2), (0, 1)]);
        assert_eq!(karamata_value(&x, &Rational::zero()), x.total());
        assert_eq!(karamata_value(&lv(&[3, 3, 3, 3]), &r(5, 1)), Rational::zero());
    }

    fn harmonic_oracle(z: &[Rational]) -> Vec<Rational> {
        let n = z.len();
        (1..=n)
            .map(|i| {
                (1..=i)
                    .map(|j| &z[j - 1] / Rational::from(n - j + 1))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn harmonic_examples() {
        let h2 = HarmonicMatrix::new(2);
        assert_eq!(
            h2.apply(&lv(&[1, 1])).unwrap(),
            lvr(&[(1, 2), (3, 2)])
        );
        let h4 = HarmonicMatrix::new(4);
        let z = lv(&[3, 3, 3, 3]);
        let expected = lvr(&[(3, 4), (7, 4), (13, 4), (25, 4)]);
        assert_eq!(harmonic_oracle(z.entries()), expected.entries());
        assert_eq!(h4.apply(&z).unwrap(), expected);
        assert_eq!(HarmonicMatrix::new(1).apply(&lvr(&[(7, 3)])).unwrap(), lvr(&[(7, 3)]));
        assert!(HarmonicMatrix::new(3).apply(&lv(&[1, 1])).is_err());
    }

    #[test]
    fn harmonic_columns_sum_to_one() {
        for n in 1..=8 {
            let h = HarmonicMatrix::new(n);
            for j in 1..=n {
                let col: Rational = (1..=n).map(|i| h.entry(i, j)).sum();
                assert_eq!(col, Rational::one());
                for i in 1..j {
                    assert!(h.entry(i, j).is_zero());
                }
            }
        }
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> LoadVector {
        LoadVector::new(
            (0..n)
                .map(|_| r(rng.gen_range(0..=12), rng.gen_range(1..=4)))
                .collect(),
        )
        .unwrap()
    }

    fn transfer(rng: &mut ChaCha8Rng, x: &LoadVector) -> LoadVector {
        let n = x.len();
        let mut y = x.clone().into_entries();
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let amount = &y[a] * r(rng.gen_range(0..=4), 4);
        y[a] -= &amount;
        y[b] += &amount;
        LoadVector::new(y).unwrap()
    }

    /// Random pair with equal totals; every other pair is built by a transfer
    /// so that comparable pairs are common.
    fn random_pair(rng: &mut ChaCha8Rng, k: usize) -> (LoadVector, LoadVector) {
        let n = rng.gen_range(1..=6);
        let x = random_vector(rng, n);
        let y = if k.is_multiple_of(2) {
            transfer(rng, &x)
        } else {
            let mut y = random_vector(rng, n).into_entries();
            let ty: Rational = y.iter().sum();
            let tx = x.total();
            if ty.is_zero() {
                y = vec![&tx / Rational::from(n); n];
            } else {
                y = y.iter().map(|v| v * &tx / &ty).collect();
            }
            LoadVector::new(y).unwrap()
        };
        (x, y)
    }

    #[test]
    fn preorder_laws_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..400 {
            let (x, y) = random_pair(&mut rng, k);
            assert_eq!(
                compare_majorization(&x, &x).unwrap(),
                MajorizationRelation::Equivalent
            );
            let rel = compare_majorization(&x, &y).unwrap();
            let back = compare_majorization(&y, &x).unwrap();
            let flipped = match rel {
                MajorizationRelation::LeftMajorizesRight => MajorizationRelation::RightMajorizesLeft,
                MajorizationRelation::RightMajorizesLeft => MajorizationRelation::LeftMajorizesRight,
                other => other,
            };
            assert_eq!(back, flipped);
            assert_eq!(
                rel == MajorizationRelation::Equivalent,
                x.sorted_desc() == y.sorted_desc()
            );
            // transitivity along a chain of random transfers
            let z = transfer(&mut rng, &y);
            let yz = compare_majorization(&y, &z).unwrap();
            if rel.left_is_major() && yz.left_is_major() {
                assert!(compare_majorization(&x, &z).unwrap().left_is_major());
            }
        }
    }

    #[test]
    fn karamata_agrees_with_prefix_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..1000 {
            let (x, y) = random_pair(&mut rng, k);
            let by_prefix = compare_majorization(&x, &y).unwrap().left_is_major();
            assert_eq!(by_prefix, majorizes_by_thresholds(&x, &y).unwrap(), "{x:?} {y:?}");
        }
    }

    #[test]
    fn harmonic_preserves_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let n = rng.gen_range(1..=8);
            let z = random_vector(&mut rng, n);
            let hz = HarmonicMatrix::new(n).apply(&z).unwrap();
            assert_eq!(hz.total(), z.total());
            assert_eq!(hz.entries(), harmonic_oracle(z.entries()).as_slice());
        }
    }

    #[test]
    fn harmonic_orders_prefix_dominated_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            let n = rng.gen_range(1..=7);
            let y = random_vector(&mut rng, n);
            // shifting mass to later positions lowers every prefix sum
            let mut x = y.clone().into_entries();
            for _ in 0..3 {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(a..n);
                let amount = &x[a] * r(rng.gen_range(0..=4), 4);
                x[a] -= &amount;
                x[b] += &amount;
            }
            let x = LoadVector::new(x).unwrap();
            let (px, py) = (prefix_sums(x.entries()), prefix_sums(y.entries()));
            assert!(px.iter().zip(&py).all(|(a, b)| a <= b));
            let h = HarmonicMatrix::new(n);
            let rel = compare_majorization(&h.apply(&x).unwrap(), &h.apply(&y).unwrap()).unwrap();
            assert!(rel.left_is_major(), "{x:?} {y:?}");
        }
    }
}
