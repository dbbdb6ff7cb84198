//! Secure alignment of feature-mode vocabularies.
//!
//! Each hospital encodes its element set as the roots of a polynomial over
//! `Z_P`, blinded by one extra random root `α` outside the code space. The
//! coordinator only ever sees coefficient vectors, adds them pairwise and
//! hands hospital `k` the sums `f_k + f_j`. Because `f_k(y) = 0` for its own
//! elements, `(f_k + f_j)(y) ≡ 0` exactly when `y` is also a root of `f_j`.
//! Hospitals then report how many of their elements fall into each
//! membership pattern (region), the coordinator cross-checks and publishes
//! all region sizes, and every hospital lays out the regions in one canonical
//! order to obtain a shared global index.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default modulus, the prime `2^62 − 57`.
pub const DEFAULT_MODULUS: u64 = (1u64 << 62) - 57;

/// Element codes live below this bound; blinding roots are drawn above it.
pub const CODE_SPACE: u64 = 1u64 << 31;

/// Largest number of hospitals the region bookkeeping supports.
pub const MAX_HOSPITALS: usize = 16;

#[inline]
fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

#[inline]
fn add_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 + b as u128) % p as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1 % p;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &b in &BASES {
        if n.is_multiple_of(b) {
            return n == b;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Public mapping from a string code (e.g. a diagnosis code) into the code space.
pub fn element_code(code: &str) -> u64 {
    let digest = Sha256::digest(code.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head) % CODE_SPACE
}

/// Polynomial over `Z_P`, constant coefficient first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetPolynomial {
    modulus: u64,
    coeffs: Vec<u64>,
}

impl SetPolynomial {
    pub fn new(modulus: u64, coeffs: Vec<u64>) -> Result<Self> {
        if modulus < 2 {
            return Err(Error::InvalidArgument(format!("modulus {modulus} < 2")));
        }
        if let Some(c) = coeffs.iter().find(|&&c| c >= modulus) {
            return Err(Error::InvalidArgument(format!("coefficient {c} not reduced mod {modulus}")));
        }
        Ok(Self { modulus, coeffs })
    }

    pub fn zero(modulus: u64) -> Self {
        Self {
            modulus,
            coeffs: Vec::new(),
        }
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    /// Index of the highest nonzero coefficient; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|&c| c != 0)
    }

    /// Horner evaluation mod P.
    pub fn evaluate(&self, y: u64) -> u64 {
        let p = self.modulus;
        let y = y % p;
        self.coeffs
            .iter()
            .rev()
            .fold(0, |acc, &c| add_mod(mul_mod(acc, y, p), c, p))
    }

    /// Multiplies every coefficient by `c`; roots are unchanged for `c ≢ 0`.
    pub fn scale(&self, c: u64) -> Self {
        let p = self.modulus;
        Self {
            modulus: p,
            coeffs: self.coeffs.iter().map(|&v| mul_mod(v, c, p)).collect(),
        }
    }

    /// Multiplies by `(y − root)`.
    fn mul_linear(&self, root: u64) -> Self {
        let p = self.modulus;
        let neg_root = (p - root % p) % p;
        let mut out = vec![0u64; self.coeffs.len() + 1];
        for (i, &c) in self.coeffs.iter().enumerate() {
            out[i + 1] = add_mod(out[i + 1], c, p);
            out[i] = add_mod(out[i], mul_mod(c, neg_root, p), p);
        }
        Self {
            modulus: p,
            coeffs: out,
        }
    }
}

/// Encodes `elements` as `(y − α)·Π(y − e)` mod `p`, or without the blinding
/// root when `alpha` is `None`.
///
/// Requires every element below `code_space`, `code_space ≤ α < p` and `p` prime.
pub fn encode_set(elements: &[u64], alpha: Option<u64>, p: u64, code_space: u64) -> Result<SetPolynomial> {
    if !is_prime(p) {
        return Err(Error::InvalidArgument(format!("modulus {p} is not prime")));
    }
    if code_space > p {
        return Err(Error::InvalidArgument(format!("code space {code_space} exceeds modulus {p}")));
    }
    let mut seen = std::collections::HashSet::with_capacity(elements.len());
    for &e in elements {
        if e >= code_space {
            return Err(Error::InvalidArgument(format!("element {e} outside the code space")));
        }
        if !seen.insert(e) {
            return Err(Error::DuplicateElement(e));
        }
    }
    let mut poly = SetPolynomial {
        modulus: p,
        coeffs: vec![1],
    };
    if let Some(a) = alpha {
        if a < code_space || a >= p {
            return Err(Error::InvalidArgument(format!(
                "blinding root {a} must lie in [{code_space}, {p})"
            )));
        }
        poly = poly.mul_linear(a);
    }
    for &e in elements {
        poly = poly.mul_linear(e);
    }
    Ok(poly)
}

/// Coefficientwise sum mod P, padded to the longer polynomial.
pub fn pairwise_sum(f: &SetPolynomial, g: &SetPolynomial) -> Result<SetPolynomial> {
    if f.modulus != g.modulus {
        return Err(Error::InvalidArgument(format!(
            "modulus mismatch: {} vs {}",
            f.modulus, g.modulus
        )));
    }
    let p = f.modulus;
    let len = f.coeffs.len().max(g.coeffs.len());
    let coeffs = (0..len)
        .map(|i| {
            add_mod(
                f.coeffs.get(i).copied().unwrap_or(0),
                g.coeffs.get(i).copied().unwrap_or(0),
                p,
            )
        })
        .collect();
    Ok(SetPolynomial { modulus: p, coeffs })
}

/// True iff `sum_poly(y) ≡ 0 (mod P)`.
pub fn membership_test(sum_poly: &SetPolynomial, y: u64) -> bool {
    sum_poly.evaluate(y) == 0
}

/// Membership pattern over the K hospitals: bit `k` set means the region lies in hospital `k`'s set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionLabel(pub u32);

impl RegionLabel {
    pub fn new(mask: u32) -> Result<Self> {
        if mask == 0 {
            return Err(Error::InvalidArgument("the all-absent region has no label".into()));
        }
        Ok(Self(mask))
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn contains(self, hospital: usize) -> bool {
        self.0 >> hospital & 1 == 1
    }

    /// Sort key of the shared region order. Hospital 0 is the most
    /// significant position, so for K = 2 the order is
    /// `Y1∩Y2, Y1∩Y2ᶜ, Y1ᶜ∩Y2`.
    pub fn canonical_key(self, k_total: usize) -> u32 {
        (0..k_total).fold(0, |acc, k| (acc << 1) | (self.0 >> k & 1))
    }

    /// `"110"`-style rendering, hospital 0 first.
    pub fn pattern(self, k_total: usize) -> String {
        (0..k_total).map(|k| if self.contains(k) { '1' } else { '0' }).collect()
    }

    /// Every nonzero label over `k_total` hospitals, in canonical order.
    pub fn all(k_total: usize) -> Vec<RegionLabel> {
        let mut labels: Vec<RegionLabel> = (1..(1u32 << k_total)).map(RegionLabel).collect();
        labels.sort_by_key(|l| std::cmp::Reverse(l.canonical_key(k_total)));
        labels
    }
}

/// Labels each own element: own bit plus the bit of every hospital whose
/// pairwise sum vanishes at the element.
pub fn classify_elements(
    own_index: usize,
    own_set: &[u64],
    pairwise_sums: &[(usize, SetPolynomial)],
) -> BTreeMap<u64, RegionLabel> {
    own_set
        .iter()
        .map(|&y| {
            let mask = pairwise_sums
                .iter()
                .filter(|(_, poly)| membership_test(poly, y))
                .fold(1u32 << own_index, |m, (other, _)| m | 1u32 << other);
            (y, RegionLabel(mask))
        })
        .collect()
}

/// Sizes of the `2^(K−1)` regions that include hospital `own_index`, zeros included.
pub fn region_counts(
    own_index: usize,
    k_total: usize,
    classes: &BTreeMap<u64, RegionLabel>,
) -> BTreeMap<RegionLabel, u32> {
    let mut counts: BTreeMap<RegionLabel, u32> = RegionLabel::all(k_total)
        .into_iter()
        .filter(|l| l.contains(own_index))
        .map(|l| (l, 0))
        .collect();
    for label in classes.values() {
        *counts.entry(*label).or_default() += 1;
    }
    counts
}

/// Coordinator-side merge of the hospitals' region reports.
///
/// Every hospital in a region must report the same size for it; any
/// disagreement aborts the alignment of this mode.
pub fn merge_region_sizes(
    mode: usize,
    k_total: usize,
    reports: &[(usize, BTreeMap<RegionLabel, u32>)],
) -> Result<BTreeMap<RegionLabel, u32>> {
    let mut sizes: BTreeMap<RegionLabel, (u32, usize)> = BTreeMap::new();
    for (k, report) in reports {
        for (&label, &count) in report {
            if label.0 == 0 || label.0 >= 1 << k_total || !label.contains(*k) {
                return Err(Error::AlignmentConflict {
                    mode,
                    reason: format!("hospital {k} reported foreign region {}", label.0),
                });
            }
            match sizes.get(&label) {
                Some(&(prev, by)) if prev != count => {
                    return Err(Error::AlignmentConflict {
                        mode,
                        reason: format!(
                            "region {} has size {prev} at hospital {by} but {count} at hospital {k}",
                            label.pattern(k_total)
                        ),
                    });
                }
                Some(_) => {}
                None => {
                    sizes.insert(label, (count, *k));
                }
            }
        }
    }
    let all = RegionLabel::all(k_total);
    if sizes.len() != all.len() {
        return Err(Error::AlignmentConflict {
            mode,
            reason: format!("{} of {} regions reported", sizes.len(), all.len()),
        });
    }
    Ok(sizes.into_iter().map(|(l, (c, _))| (l, c)).collect())
}

/// One hospital's view of an aligned feature mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub hospitals: usize,
    pub region_sizes: BTreeMap<RegionLabel, u32>,
    /// Own element → global index.
    pub index: BTreeMap<u64, usize>,
    pub global_size: usize,
}

impl AlignmentResult {
    /// Global index for each element of `local_vocabulary`, in order.
    pub fn local_to_global(&self, local_vocabulary: &[u64]) -> Result<Vec<usize>> {
        local_vocabulary
            .iter()
            .map(|e| {
                self.index
                    .get(e)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("element {e} was not aligned")))
            })
            .collect()
    }
}

/// Lays regions out in canonical order and ranks own elements inside each one.
pub fn build_global_order(
    mode: usize,
    k_total: usize,
    region_sizes: &BTreeMap<RegionLabel, u32>,
    own_regions: &BTreeMap<u64, RegionLabel>,
) -> Result<AlignmentResult> {
    let mut members: BTreeMap<RegionLabel, Vec<u64>> = BTreeMap::new();
    for (&y, &label) in own_regions {
        members.entry(label).or_default().push(y);
    }
    let mut index = BTreeMap::new();
    let mut offset = 0usize;
    for label in RegionLabel::all(k_total) {
        let size = *region_sizes.get(&label).unwrap_or(&0) as usize;
        if let Some(own) = members.get_mut(&label) {
            if own.len() != size {
                return Err(Error::AlignmentConflict {
                    mode,
                    reason: format!(
                        "region {} has {} local elements but published size {size}",
                        label.pattern(k_total),
                        own.len()
                    ),
                });
            }
            own.sort_unstable();
            for (rank, &y) in own.iter().enumerate() {
                index.insert(y, offset + rank);
            }
        }
        offset += size;
    }
    Ok(AlignmentResult {
        hospitals: k_total,
        region_sizes: region_sizes.clone(),
        index,
        global_size: offset,
    })
}

/// Hospital-side state for aligning one feature mode.
#[derive(Debug, Clone)]
pub struct AlignParty {
    pub hospital: usize,
    pub hospitals: usize,
    pub mode: usize,
    elements: Vec<u64>,
    modulus: u64,
    classes: BTreeMap<u64, RegionLabel>,
}

impl AlignParty {
    pub fn new(hospital: usize, hospitals: usize, mode: usize, elements: Vec<u64>, modulus: u64) -> Result<Self> {
        if hospitals == 0 || hospitals > MAX_HOSPITALS || hospital >= hospitals {
            return Err(Error::InvalidArgument(format!(
                "hospital {hospital} of {hospitals} (at most {MAX_HOSPITALS} supported)"
            )));
        }
        Ok(Self {
            hospital,
            hospitals,
            mode,
            elements,
            modulus,
            classes: BTreeMap::new(),
        })
    }

    pub fn elements(&self) -> &[u64] {
        &self.elements
    }

    /// Blinded set polynomial with a fresh `α` drawn from `[CODE_SPACE, P)`,
    /// times a random nonzero scalar so no coefficient is predictable.
    pub fn encode<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SetPolynomial> {
        let alpha = rng.random_range(CODE_SPACE..self.modulus);
        let c = rng.random_range(1..self.modulus);
        Ok(encode_set(&self.elements, Some(alpha), self.modulus, CODE_SPACE)?.scale(c))
    }

    /// Classifies own elements against the pairwise sums and returns the region sizes to report.
    pub fn classify(&mut self, pairwise_sums: &[(usize, SetPolynomial)]) -> BTreeMap<RegionLabel, u32> {
        self.classes = classify_elements(self.hospital, &self.elements, pairwise_sums);
        region_counts(self.hospital, self.hospitals, &self.classes)
    }

    pub fn finish(&self, region_sizes: &BTreeMap<RegionLabel, u32>) -> Result<AlignmentResult> {
        build_global_order(self.mode, self.hospitals, region_sizes, &self.classes)
    }
}

/// Coordinator step: for every hospital `k`, the sums `f_k + f_j` for all `j ≠ k`.
pub fn all_pairwise_sums(polys: &[SetPolynomial]) -> Result<Vec<Vec<(usize, SetPolynomial)>>> {
    (0..polys.len())
        .map(|k| {
            (0..polys.len())
                .filter(|&j| j != k)
                .map(|j| Ok((j, pairwise_sum(&polys[k], &polys[j])?)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primality() {
        assert!(is_prime(DEFAULT_MODULUS));
        assert!(is_prime(101));
        assert!(is_prime(2));
        assert!(!is_prime(1));
        assert!(!is_prime(DEFAULT_MODULUS - 2));
        assert!(!is_prime(3215031751)); // strong pseudoprime to bases 2, 3, 5, 7
    }

    #[test]
    fn encode_examples() {
        let f = encode_set(&[2, 3], Some(11), 101, 10).unwrap();
        assert_eq!(f.degree(), Some(3));
        assert_eq!(f.evaluate(3), 0);
        assert_eq!(f.evaluate(2), 0);
        assert_eq!(f.evaluate(11), 0);
        // (5-2)(5-3)(5-11) = -36 ≡ 65
        assert_eq!(f.evaluate(5), 65);

        let plain = encode_set(&[2, 3], None, 101, 10).unwrap();
        assert_eq!(plain.coeffs(), &[6, 96, 1]);
    }

    #[test]
    fn encode_errors() {
        assert!(matches!(encode_set(&[2, 2], None, 101, 10), Err(Error::DuplicateElement(2))));
        assert!(encode_set(&[2], Some(5), 101, 10).is_err());
        assert!(encode_set(&[2], Some(11), 100, 10).is_err());
        assert!(encode_set(&[12], Some(11), 101, 10).is_err());
    }

    #[test]
    fn pairwise_sum_cases() {
        let f = SetPolynomial::new(101, vec![1, 1]).unwrap();
        assert_eq!(pairwise_sum(&f, &SetPolynomial::zero(101)).unwrap(), f);
        let g = SetPolynomial::new(101, vec![100, 100]).unwrap();
        assert_eq!(pairwise_sum(&f, &g).unwrap().coeffs(), &[0, 0]);
        assert!(pairwise_sum(&f, &SetPolynomial::zero(103)).is_err());
    }

    #[test]
    fn membership_examples() {
        let f1 = encode_set(&[2, 3], Some(11), 101, 10).unwrap();
        let f2 = encode_set(&[3, 5], Some(13), 101, 10).unwrap();
        let s = pairwise_sum(&f1, &f2).unwrap();
        assert!(!membership_test(&s, 2));
        assert!(membership_test(&s, 3));
        assert!(!membership_test(&s, 5));
    }

    #[test]
    fn classify_disjoint_and_three_way() {
        let f1 = encode_set(&[1, 2], Some(11), 101, 10).unwrap();
        let f2 = encode_set(&[3], Some(13), 101, 10).unwrap();
        let sums = vec![(1, pairwise_sum(&f1, &f2).unwrap())];
        let classes = classify_elements(0, &[1, 2], &sums);
        assert!(classes.values().all(|l| l.mask() == 0b01));

        let polys: Vec<_> = [17, 19, 23]
            .iter()
            .map(|&a| encode_set(&[1], Some(a), 101, 10).unwrap())
            .collect();
        let sums = all_pairwise_sums(&polys).unwrap();
        let classes = classify_elements(0, &[1], &sums[0]);
        assert_eq!(classes[&1].mask(), 0b111);
    }

    #[test]
    fn canonical_order_for_two_hospitals() {
        let order: Vec<String> = RegionLabel::all(2).iter().map(|l| l.pattern(2)).collect();
        assert_eq!(order, vec!["11", "10", "01"]);
        assert_eq!(RegionLabel::all(3).len(), 7);
        assert!(RegionLabel::new(0).is_err());
    }

    #[test]
    fn single_hospital_sorts() {
        let classes = classify_elements(0, &[5, 2], &[]);
        let sizes = region_counts(0, 1, &classes);
        let res = build_global_order(1, 1, &sizes, &classes).unwrap();
        assert_eq!(res.index[&2], 0);
        assert_eq!(res.index[&5], 1);
        assert_eq!(res.global_size, 2);
    }

    #[test]
    fn two_hospital_worked_example() {
        let f1 = encode_set(&[2, 3], Some(11), 101, 10).unwrap();
        let f2 = encode_set(&[3, 5], Some(13), 101, 10).unwrap();
        let sums = all_pairwise_sums(&[f1, f2]).unwrap();
        let c1 = classify_elements(0, &[2, 3], &sums[0]);
        let c2 = classify_elements(1, &[3, 5], &sums[1]);
        let sizes = merge_region_sizes(
            1,
            2,
            &[(0, region_counts(0, 2, &c1)), (1, region_counts(1, 2, &c2))],
        )
        .unwrap();
        assert_eq!(sizes.values().sum::<u32>(), 3);
        let r1 = build_global_order(1, 2, &sizes, &c1).unwrap();
        let r2 = build_global_order(1, 2, &sizes, &c2).unwrap();
        assert_eq!((r1.index[&3], r1.index[&2]), (0, 1));
        assert_eq!((r2.index[&3], r2.index[&5]), (0, 2));
        assert_eq!(r1.global_size, 3);
    }

    #[test]
    fn merge_detects_size_conflict() {
        let mut a = BTreeMap::new();
        a.insert(RegionLabel(0b11), 2);
        a.insert(RegionLabel(0b01), 0);
        let mut b = BTreeMap::new();
        b.insert(RegionLabel(0b11), 1);
        b.insert(RegionLabel(0b10), 0);
        let err = merge_region_sizes(2, 2, &[(0, a), (1, b)]).unwrap_err();
        assert!(matches!(err, Error::AlignmentConflict { mode: 2, .. }));
    }

    #[test]
    fn element_codes_are_stable_and_in_range() {
        let c = element_code("ICD9:250.00");
        assert_eq!(c, element_code("ICD9:250.00"));
        assert!(c < CODE_SPACE);
        assert_ne!(c, element_code("ICD9:250.01"));
    }
}
