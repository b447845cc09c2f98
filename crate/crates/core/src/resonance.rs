//! Small divisors, the block-count removal condition and empirical
//! non-resonance diagnostics.

use std::collections::HashMap;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::{block_index, ModeIndex, TruncatedLattice};
use crate::potential::{block_draw, frequencies, BlockPotential, FrequencyTable};
use crate::scalar::torus_normalisation;

/// A pair of mode lists `(k, l)` of equal length `q`, each sorted.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndexPair {
    pub k: Vec<ModeIndex>,
    pub l: Vec<ModeIndex>,
}

impl IndexPair {
    pub fn new(mut k: Vec<ModeIndex>, mut l: Vec<ModeIndex>) -> Result<Self> {
        if k.len() != l.len() {
            return invalid("index lists must have equal length");
        }
        if k.len() < 2 {
            return invalid("index lists need q >= 2");
        }
        k.sort_unstable();
        l.sort_unstable();
        let p = IndexPair { k, l };
        if !p.is_zero_momentum() {
            return invalid(format!("momentum violation in {:?} / {:?}", p.k, p.l));
        }
        Ok(p)
    }

    pub fn d1(k: &[i32], l: &[i32]) -> Result<Self> {
        Self::new(
            k.iter().map(|&c| ModeIndex::d1(c)).collect(),
            l.iter().map(|&c| ModeIndex::d1(c)).collect(),
        )
    }

    pub fn q(&self) -> usize {
        self.k.len()
    }

    pub fn is_zero_momentum(&self) -> bool {
        momentum(&self.k) == momentum(&self.l)
    }

    pub fn swapped(&self) -> IndexPair {
        IndexPair {
            k: self.l.clone(),
            l: self.k.clone(),
        }
    }
}

pub fn momentum(modes: &[ModeIndex]) -> ModeIndex {
    modes.iter().fold(ModeIndex::ZERO, |acc, m| acc + *m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallDivisorRecord {
    pub pair: IndexPair,
    /// `|Ω| / 2`.
    pub omega_gap: f64,
    pub removal: bool,
}

/// `|Ω(k, l)| = 2 |Σ ω_{k_j} - Σ ω_{l_j}|`.
pub fn small_divisor(pair: &IndexPair, omega: &FrequencyTable) -> f64 {
    2.0 * omega.signed_gap::<f64>(&pair.k, &pair.l).abs()
}

/// True when some block holds a different number of `k`'s and `l`'s.
pub fn satisfies_removal(pair: &IndexPair) -> bool {
    removal_condition(&pair.k, &pair.l)
}

pub fn removal_condition(k: &[ModeIndex], l: &[ModeIndex]) -> bool {
    let mut bk: Vec<usize> = k.iter().map(block_index).collect();
    let mut bl: Vec<usize> = l.iter().map(block_index).collect();
    bk.sort_unstable();
    bl.sort_unstable();
    bk != bl
}

/// `j`-th largest (1-based) of the `2q` Euclidean norms.
pub fn mu(pair: &IndexPair, j: usize) -> Result<f64> {
    mu_of(&pair.k, &pair.l, j)
}

pub fn mu_of(k: &[ModeIndex], l: &[ModeIndex], j: usize) -> Result<f64> {
    if j == 0 || j > k.len() + l.len() {
        return invalid(format!("mu index {j} out of range"));
    }
    let mut norms: Vec<i64> = k.iter().chain(l).map(|m| m.norm2()).collect();
    norms.sort_unstable_by(|a, b| b.cmp(a));
    Ok((norms[j - 1] as f64).sqrt())
}

/// Squared `μ_1` and `μ_2`, exact.
pub fn mu12_squared(k: &[ModeIndex], l: &[ModeIndex]) -> (i64, i64) {
    let mut a = 0i64;
    let mut b = 0i64;
    for m in k.iter().chain(l) {
        let n = m.norm2();
        if n > a {
            b = a;
            a = n;
        } else if n > b {
            b = n;
        }
    }
    (a, b)
}

/// All sorted `q`-multisets of box modes, grouped by their momentum sum.
/// Groups are returned in increasing momentum order and each group is sorted.
pub fn multisets_by_momentum(lattice: &TruncatedLattice, q: usize) -> Vec<Vec<Vec<ModeIndex>>> {
    let mut groups: HashMap<ModeIndex, Vec<Vec<ModeIndex>>> = HashMap::new();
    for ms in lattice.modes().combinations_with_replacement(q) {
        groups.entry(momentum(&ms)).or_default().push(ms);
    }
    let mut out: Vec<(ModeIndex, Vec<Vec<ModeIndex>>)> = groups.into_iter().collect();
    out.sort_by_key(|a| a.0);
    out.into_iter()
        .map(|(_, mut g)| {
            g.sort();
            g
        })
        .collect()
}

/// Zero-momentum orbit representatives `(k, l)` with `k <= l`.
pub fn zero_momentum_orbits(lattice: &TruncatedLattice, q: usize) -> Vec<IndexPair> {
    let mut out = Vec::new();
    for g in multisets_by_momentum(lattice, q) {
        for i in 0..g.len() {
            for j in i..g.len() {
                out.push(IndexPair {
                    k: g[i].clone(),
                    l: g[j].clone(),
                });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub q: usize,
    pub pair: IndexPair,
    pub removal: bool,
    /// `|Ω|`.
    pub omega_abs: f64,
    /// `|Ω| q^4 (log2 μ_1)^{2q+1}`, only for removal pairs with `μ_1 >= 2`.
    pub gamma_contribution: Option<f64>,
}

/// Every zero-momentum orbit with `2 <= q <= q_max` in the box, with its small
/// divisor and `γ`-contribution.
pub fn small_divisor_scan(
    v: &BlockPotential,
    lattice: &TruncatedLattice,
    q_max: usize,
) -> Result<Vec<ScanEntry>> {
    let mut out = Vec::new();
    small_divisor_scan_each(v, lattice, q_max, |e| {
        out.push(e);
        Ok(())
    })?;
    Ok(out)
}

/// Streaming form of [`small_divisor_scan`]: entries reach `sink` in the same
/// order, with only a bounded batch of momentum groups held in memory.
pub fn small_divisor_scan_each<F>(v: &BlockPotential, lattice: &TruncatedLattice, q_max: usize, mut sink: F) -> Result<()>
where
    F: FnMut(ScanEntry) -> Result<()>,
{
    if q_max < 2 {
        return invalid("q_max must be at least 2");
    }
    let freqs = frequencies(v, lattice)?;
    for q in 2..=q_max {
        let groups = multisets_by_momentum(lattice, q);
        for batch in groups.chunks(SCAN_BATCH) {
            let part: Vec<Vec<ScanEntry>> = batch
                .par_iter()
                .map(|g| {
                    let mut local = Vec::new();
                    for i in 0..g.len() {
                        for j in i + 1..g.len() {
                            let (k, l) = (&g[i], &g[j]);
                            let removal = removal_condition(k, l);
                            let omega_abs = 2.0 * freqs.signed_gap::<f64>(k, l).abs();
                            let gamma_contribution = if removal {
                                gamma_term(k, l, omega_abs)
                            } else {
                                None
                            };
                            local.push(ScanEntry {
                                q,
                                pair: IndexPair {
                                    k: k.clone(),
                                    l: l.clone(),
                                },
                                removal,
                                omega_abs,
                                gamma_contribution,
                            });
                        }
                    }
                    local
                })
                .collect();
            for e in part.into_iter().flatten() {
                sink(e)?;
            }
        }
    }
    Ok(())
}

const SCAN_BATCH: usize = 4;

fn gamma_term(k: &[ModeIndex], l: &[ModeIndex], omega_abs: f64) -> Option<f64> {
    let (m1sq, _) = mu12_squared(k, l);
    if m1sq < 4 {
        return None;
    }
    let q = k.len() as f64;
    let log_mu1 = 0.5 * (m1sq as f64).log2();
    Some(omega_abs * q.powi(4) * log_mu1.powi(2 * k.len() as i32 + 1))
}

/// `min |Ω| q^4 (log2 μ_1)^{2q+1}` over zero-momentum removal pairs with
/// `q <= q_max` and `μ_1 >= 2`; `+∞` when there is none.
pub fn gamma_empirical(v: &BlockPotential, lattice: &TruncatedLattice, q_max: usize) -> Result<f64> {
    if q_max < 2 {
        return invalid("q_max must be at least 2");
    }
    let freqs = frequencies(v, lattice)?;
    let mut best = f64::INFINITY;
    for q in 2..=q_max {
        let groups = multisets_by_momentum(lattice, q);
        let m = groups
            .par_iter()
            .map(|g| {
                let mut local = f64::INFINITY;
                for i in 0..g.len() {
                    for j in i + 1..g.len() {
                        let (k, l) = (&g[i], &g[j]);
                        if !removal_condition(k, l) {
                            continue;
                        }
                        let om = 2.0 * freqs.signed_gap::<f64>(k, l).abs();
                        if let Some(c) = gamma_term(k, l, om) {
                            local = local.min(c);
                        }
                    }
                }
                local
            })
            .reduce(|| f64::INFINITY, f64::min);
        best = best.min(m);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub gamma: f64,
    pub q: usize,
    pub n_max: usize,
    pub trials: u64,
    pub events: u64,
    pub probability: f64,
}

struct BlockPairTest {
    coeffs: Vec<(usize, f64)>,
    half_threshold_unit: f64,
}

fn block_multisets(q: usize, n_max: usize) -> Vec<Vec<usize>> {
    (0..=n_max).combinations_with_replacement(q).collect()
}

/// Fraction of sampled potentials for which some pair of distinct block
/// multisets `n, m` (size `q`, entries `<= n_max`) and some integer `a`
/// give `2 |a + (2π)^{-d/2}(Σ X_n - Σ X_m)| <= γ ρ_{n,m}` with
/// `ρ_{n,m} = q^{-4} max(n, m)^{-(2q+1)}`.
///
/// Trial `t` uses the potential `sample_potential(seed + t, n_max)`.
pub fn mc_event_probability(
    gamma: f64,
    q: usize,
    n_max: usize,
    trials: u64,
    d: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return invalid("gamma must be positive and finite");
    }
    if trials == 0 {
        return invalid("need at least one trial");
    }
    if q < 2 {
        return invalid("q must be at least 2");
    }
    if !(1..=3).contains(&d) {
        return invalid("dimension must be 1, 2 or 3");
    }
    let sets = block_multisets(q, n_max);
    let mut tests = Vec::new();
    let qf = q as f64;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let mut c = vec![0i64; n_max + 1];
            for &n in &sets[i] {
                c[n] += 1;
            }
            for &n in &sets[j] {
                c[n] -= 1;
            }
            let top = sets[i].iter().chain(&sets[j]).copied().max().unwrap_or(0);
            let rho = qf.powi(-4) * (top as f64).powi(-(2 * q as i32 + 1));
            tests.push(BlockPairTest {
                coeffs: c
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0)
                    .map(|(n, &v)| (n, v as f64))
                    .collect(),
                half_threshold_unit: 0.5 * rho,
            });
        }
    }
    let kappa: f64 = torus_normalisation(d);
    let events: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = seed.wrapping_add(t);
            let x: Vec<f64> = (0..=n_max).map(|n| block_draw(s, n)).collect();
            let hit = tests.iter().any(|pt| {
                let y = kappa * pt.coeffs.iter().map(|&(n, c)| c * x[n]).sum::<f64>();
                // nearest integer offset a; |y| < q keeps it inside [-q, q]
                let dist = (y - y.round()).abs();
                dist <= gamma * pt.half_threshold_unit
            });
            hit as u64
        })
        .sum();
    Ok(McEstimate {
        gamma,
        q,
        n_max,
        trials,
        events,
        probability: events as f64 / trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::sample_potential;

    #[test]
    fn small_divisor_examples() {
        let lat = TruncatedLattice::new(1, 4).unwrap();
        let zero = frequencies(&BlockPotential::zero(lat.n_max), &lat).unwrap();
        let p = IndexPair::d1(&[1, 2], &[3, 0]).unwrap();
        assert_eq!(small_divisor(&p, &zero), 8.0);
        let rnd = frequencies(&sample_potential(11, lat.n_max), &lat).unwrap();
        assert_eq!(small_divisor(&p, &rnd), 8.0);
        let same = IndexPair::d1(&[1, 2], &[2, 1]).unwrap();
        assert_eq!(small_divisor(&same, &rnd), 0.0);
    }

    #[test]
    fn removal_examples() {
        assert!(!satisfies_removal(&IndexPair::d1(&[1, 2], &[3, 0]).unwrap()));
        assert!(satisfies_removal(&IndexPair::d1(&[1, 1], &[2, 0]).unwrap()));
        assert!(!satisfies_removal(&IndexPair::d1(&[1, 1], &[1, 1]).unwrap()));
    }

    #[test]
    fn mu_examples() {
        let p = IndexPair::d1(&[1, 2], &[3, 0]).unwrap();
        assert_eq!(mu(&p, 1).unwrap(), 3.0);
        assert_eq!(mu(&p, 2).unwrap(), 2.0);
        assert_eq!(mu(&p, 4).unwrap(), 0.0);
        assert!(mu(&p, 5).is_err());
        let p = IndexPair::d1(&[2, -2], &[-2, 2]).unwrap();
        for j in 1..=4 {
            assert_eq!(mu(&p, j).unwrap(), 2.0);
        }
    }

    #[test]
    fn momentum_violation_rejected() {
        assert!(IndexPair::d1(&[1, 2], &[3, 1]).is_err());
        assert!(IndexPair::d1(&[1], &[1]).is_err());
    }

    #[test]
    fn gamma_is_infinite_without_removal_pairs() {
        // K = 1: every mode lies in block 0
        let lat = TruncatedLattice::new(1, 1).unwrap();
        let v = sample_potential(1, lat.n_max);
        assert_eq!(gamma_empirical(&v, &lat, 3).unwrap(), f64::INFINITY);
    }

    #[test]
    fn block_multisets_count() {
        // C(n_max + q, q)
        assert_eq!(block_multisets(2, 4).len(), 15);
        assert_eq!(block_multisets(3, 2).len(), 10);
    }

    #[test]
    fn orbit_enumeration_counts() {
        let lat = TruncatedLattice::new(1, 2).unwrap();
        let orbits = zero_momentum_orbits(&lat, 2);
        for o in &orbits {
            assert!(o.k <= o.l);
            assert!(o.is_zero_momentum());
        }
        // brute force over ordered pairs of sorted 2-multisets
        let modes: Vec<i32> = (-2..=2).collect();
        let mut ms = Vec::new();
        for a in 0..5 {
            for b in a..5 {
                ms.push((modes[a], modes[b]));
            }
        }
        let mut count = 0;
        for x in &ms {
            for y in &ms {
                if x <= y && x.0 + x.1 == y.0 + y.1 {
                    count += 1;
                }
            }
        }
        assert_eq!(orbits.len(), count);
    }

    #[test]
    fn mc_is_deterministic_and_vanishes_with_gamma() {
        let a = mc_event_probability(1e-2, 2, 3, 2000, 1, 5).unwrap();
        let b = mc_event_probability(1e-2, 2, 3, 2000, 1, 5).unwrap();
        assert_eq!(a, b);
        let tiny = mc_event_probability(1e-12, 2, 3, 2000, 1, 5).unwrap();
        assert_eq!(tiny.events, 0);
        assert!(mc_event_probability(0.0, 2, 3, 10, 1, 5).is_err());
    }
}
