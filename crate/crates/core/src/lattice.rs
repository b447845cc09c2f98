//! Truncated Fourier lattice, dyadic blocks and the norms/observables built on
//! them.
//!
//! Modes live in the sup-norm box `[-K, K]^d`. Dyadic blocks use the Euclidean
//! norm: `B_0 = {|k| < 2}` and `B_n = {2^n <= |k| < 2^{n+1}}`. Membership is
//! decided on `|k|^2` with integer arithmetic so that no mode ever sits on the
//! wrong side of a block boundary.

use std::fmt;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{cabs, Real};

/// A lattice frequency `k ∈ Z^d`, `d <= 3`. Unused trailing components are zero,
/// so the derived lexicographic order agrees with the order of the
/// `d`-component vectors.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct ModeIndex(pub [i32; 3]);

impl ModeIndex {
    pub const ZERO: ModeIndex = ModeIndex([0, 0, 0]);

    pub fn new(components: &[i32]) -> Self {
        assert!(components.len() <= 3, "at most three components");
        let mut c = [0; 3];
        c[..components.len()].copy_from_slice(components);
        ModeIndex(c)
    }

    pub fn d1(k: i32) -> Self {
        ModeIndex([k, 0, 0])
    }

    pub fn components(&self, d: usize) -> &[i32] {
        &self.0[..d]
    }

    /// Squared Euclidean norm, exact.
    pub fn norm2(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    pub fn sup_norm(&self) -> i32 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    /// Japanese bracket `<k> = (1 + |k|^2)^{1/2}`.
    pub fn bracket(&self) -> f64 {
        (1.0 + self.norm2() as f64).sqrt()
    }
}

impl std::ops::Add for ModeIndex {
    type Output = ModeIndex;
    fn add(self, o: ModeIndex) -> ModeIndex {
        ModeIndex([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl std::ops::Sub for ModeIndex {
    type Output = ModeIndex;
    fn sub(self, o: ModeIndex) -> ModeIndex {
        ModeIndex([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl std::ops::Neg for ModeIndex {
    type Output = ModeIndex;
    fn neg(self) -> ModeIndex {
        ModeIndex([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl fmt::Debug for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.0[0], self.0[1], self.0[2])
    }
}

/// Dyadic block of a mode: 0 when `|k| < 2`, otherwise the `n` with
/// `4^n <= |k|^2 < 4^{n+1}`.
pub fn block_index(k: &ModeIndex) -> usize {
    block_of_norm2(k.norm2())
}

pub fn block_of_norm2(n2: i64) -> usize {
    let mut n = 0usize;
    let mut upper: i64 = 4;
    while n2 >= upper {
        n += 1;
        upper *= 4;
    }
    n
}

/// Sup-norm box `[-K, K]^d` together with its dyadic block count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncatedLattice {
    pub d: usize,
    pub k_max: i32,
    pub n_max: usize,
}

impl TruncatedLattice {
    /// `n_max` is the smallest integer with `2^{n_max} > K sqrt(d)`.
    pub fn new(d: usize, k_max: i32) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return invalid(format!("dimension must be 1, 2 or 3, got {d}"));
        }
        if k_max < 1 {
            return invalid(format!("box half-width must be positive, got {k_max}"));
        }
        if k_max > 1 << 20 {
            return invalid(format!("box half-width {k_max} is unreasonably large"));
        }
        let target = (k_max as i64) * (k_max as i64) * d as i64;
        let mut n_max = 0usize;
        let mut four_n: i64 = 1;
        while four_n <= target {
            n_max += 1;
            four_n *= 4;
        }
        Ok(TruncatedLattice { d, k_max, n_max })
    }

    pub fn side(&self) -> usize {
        (2 * self.k_max + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: &ModeIndex) -> bool {
        k.0[..self.d].iter().all(|c| c.abs() <= self.k_max) && k.0[self.d..].iter().all(|&c| c == 0)
    }

    /// Row-major position of `k`; monotone in the lexicographic mode order.
    pub fn index_of(&self, k: &ModeIndex) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let side = self.side();
        let mut idx = 0usize;
        for j in 0..self.d {
            idx = idx * side + (k.0[j] + self.k_max) as usize;
        }
        Some(idx)
    }

    pub fn mode(&self, mut idx: usize) -> ModeIndex {
        let side = self.side();
        let mut c = [0i32; 3];
        for j in (0..self.d).rev() {
            c[j] = (idx % side) as i32 - self.k_max;
            idx /= side;
        }
        ModeIndex(c)
    }

    pub fn modes(&self) -> impl Iterator<Item = ModeIndex> + '_ {
        (0..self.len()).map(move |i| self.mode(i))
    }

    pub fn block_of(&self, idx: usize) -> usize {
        block_index(&self.mode(idx))
    }

    /// Block index of every mode, in storage order.
    pub fn block_table(&self) -> Vec<usize> {
        self.modes().map(|k| block_index(&k)).collect()
    }

    /// `K_{s0} = (Σ_box <k>^{-2 s0})^{1/2}`, the constant in `l1 <= K_{s0} H^{s0}`.
    pub fn sobolev_constant(&self, s0: f64) -> f64 {
        self.modes()
            .map(|k| (1.0 + k.norm2() as f64).powf(-s0))
            .sum::<f64>()
            .sqrt()
    }
}

/// Dense Fourier coefficients over the box, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierState<T = f64> {
    pub lattice: TruncatedLattice,
    pub amps: Vec<Complex<T>>,
}

impl<T: Real> FourierState<T> {
    pub fn zeros(lattice: TruncatedLattice) -> Self {
        FourierState {
            lattice,
            amps: vec![Complex::new(T::zero(), T::zero()); lattice.len()],
        }
    }

    pub fn from_amplitudes(lattice: TruncatedLattice, amps: Vec<Complex<T>>) -> Result<Self> {
        if amps.len() != lattice.len() {
            return invalid(format!(
                "expected {} amplitudes, got {}",
                lattice.len(),
                amps.len()
            ));
        }
        let s = FourierState { lattice, amps };
        s.check_finite()?;
        Ok(s)
    }

    /// Single mode of the given amplitude.
    pub fn delta(lattice: TruncatedLattice, k: ModeIndex, amp: Complex<T>) -> Result<Self> {
        let mut s = Self::zeros(lattice);
        let idx = lattice
            .index_of(&k)
            .ok_or_else(|| Error::InvalidInput(format!("mode {k:?} outside the box")))?;
        s.amps[idx] = amp;
        Ok(s)
    }

    pub fn get(&self, k: &ModeIndex) -> Complex<T> {
        match self.lattice.index_of(k) {
            Some(i) => self.amps[i],
            None => Complex::new(T::zero(), T::zero()),
        }
    }

    pub fn set(&mut self, k: &ModeIndex, v: Complex<T>) -> Result<()> {
        let idx = self
            .lattice
            .index_of(k)
            .ok_or_else(|| Error::InvalidInput(format!("mode {k:?} outside the box")))?;
        self.amps[idx] = v;
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.amps.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("Fourier state".into()))
        }
    }

    pub fn l1(&self) -> T {
        self.amps.iter().fold(T::zero(), |acc, z| acc + cabs(*z))
    }

    pub fn l2_squared(&self) -> T {
        self.amps
            .iter()
            .fold(T::zero(), |acc, z| acc + z.re * z.re + z.im * z.im)
    }

    pub fn max_abs(&self) -> T {
        self.amps.iter().fold(T::zero(), |acc, z| acc.max(cabs(*z)))
    }

    pub fn scaled(&self, s: T) -> Self {
        FourierState {
            lattice: self.lattice,
            amps: self.amps.iter().map(|z| Complex::new(z.re * s, z.im * s)).collect(),
        }
    }

    pub fn lift<U: Real>(&self) -> FourierState<U> {
        FourierState {
            lattice: self.lattice,
            amps: self
                .amps
                .iter()
                .map(|z| Complex::new(U::from_f64(z.re.to_f64()), U::from_f64(z.im.to_f64())))
                .collect(),
        }
    }

    /// `l1` distance to another state on the same lattice.
    pub fn l1_distance(&self, other: &Self) -> T {
        self.amps
            .iter()
            .zip(&other.amps)
            .fold(T::zero(), |acc, (a, b)| acc + cabs(*a - *b))
    }
}

impl FourierState<f64> {
    pub fn mass(&self) -> f64 {
        self.l2_squared()
    }

    /// `Σ <k>^η |u_k|`.
    pub fn l1_eta(&self, eta: f64) -> f64 {
        self.lattice
            .modes()
            .zip(&self.amps)
            .map(|(k, z)| k.bracket().powf(eta) * z.norm())
            .sum()
    }

    /// `(Σ <k>^{2s} |u_k|^2)^{1/2}`.
    pub fn hs_norm(&self, s: f64) -> f64 {
        self.lattice
            .modes()
            .zip(&self.amps)
            .map(|(k, z)| (1.0 + k.norm2() as f64).powf(s) * z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// `J_n = Σ_{k ∈ B_n} |u_k|^2`.
pub fn super_action(u: &FourierState, n: usize) -> f64 {
    u.lattice
        .modes()
        .zip(&u.amps)
        .filter(|(k, _)| block_index(k) == n)
        .map(|(_, z)| z.norm_sqr())
        .sum()
}

/// All super-actions `J_0 ..= J_{n_max}` in one pass.
pub fn super_actions(u: &FourierState) -> Vec<f64> {
    let mut j = vec![0.0; u.lattice.n_max + 1];
    for (k, z) in u.lattice.modes().zip(&u.amps) {
        j[block_index(&k)] += z.norm_sqr();
    }
    j
}

/// `N_s = Σ_n 2^{2ns} J_n`.
pub fn ns_observable(u: &FourierState, s: f64) -> f64 {
    super_actions(u)
        .iter()
        .enumerate()
        .map(|(n, j)| 2f64.powf(2.0 * n as f64 * s) * j)
        .sum()
}

pub fn check_power_of_two(n_cut: u64) -> Result<u32> {
    if n_cut == 0 || !n_cut.is_power_of_two() {
        return invalid(format!("cut-off N = {n_cut} is not a power of two"));
    }
    Ok(n_cut.trailing_zeros())
}

/// Weight of mode `k` in `N_{N,s}`: `2^{2ns}` for blocks below `log2 N`,
/// `|k|^{2s}` for `|k| >= N`.
pub fn nns_weight(k: &ModeIndex, s: f64, log2_n: u32) -> f64 {
    let n2 = k.norm2();
    let block = block_of_norm2(n2);
    if 2 * log2_n < 63 && n2 >= 1i64 << (2 * log2_n) {
        (n2 as f64).powf(s)
    } else if block < log2_n as usize {
        2f64.powf(2.0 * block as f64 * s)
    } else {
        // only k = 0 with N = 1
        0.0
    }
}

/// `N_{N,s} = Σ_{n < log2 N} 2^{2ns} J_n + Σ_{|k| >= N} |k|^{2s} |u_k|^2`.
pub fn nns_observable(u: &FourierState, s: f64, n_cut: u64) -> Result<f64> {
    let log2_n = check_power_of_two(n_cut)?;
    Ok(u.lattice
        .modes()
        .zip(&u.amps)
        .map(|(k, z)| nns_weight(&k, s, log2_n) * z.norm_sqr())
        .sum())
}

/// The `N_{N,s}` functional as per-mode weights on the box.
pub fn nns_weights(lattice: &TruncatedLattice, s: f64, n_cut: u64) -> Result<Vec<f64>> {
    let log2_n = check_power_of_two(n_cut)?;
    Ok(lattice.modes().map(|k| nns_weight(&k, s, log2_n)).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    pub hs: Vec<f64>,
    pub nns: Option<(f64, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub mass: f64,
    pub hs_norms: Vec<(f64, f64)>,
    pub super_actions: Vec<f64>,
    pub nns: Option<f64>,
}

pub fn observables(u: &FourierState, spec: &ObservableSpec) -> Result<Observables> {
    let nns = match spec.nns {
        Some((s, n)) => Some(nns_observable(u, s, n)?),
        None => None,
    };
    Ok(Observables {
        mass: u.mass(),
        hs_norms: spec.hs.iter().map(|&s| (s, u.hs_norm(s))).collect(),
        super_actions: super_actions(u),
        nns,
    })
}
