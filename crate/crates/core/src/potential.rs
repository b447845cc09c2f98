//! Block-constant random potentials and the linear frequencies they induce.
//!
//! Block `n` draws `X_n` from its own ChaCha stream (seed fixed, stream id `n`),
//! so growing `n_max` only appends values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lattice::{block_index, ModeIndex, TruncatedLattice};
use crate::scalar::{torus_normalisation, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPotential {
    pub seed: u64,
    pub n_max: usize,
    pub block_values: Vec<f64>,
}

impl BlockPotential {
    pub fn zero(n_max: usize) -> Self {
        BlockPotential {
            seed: 0,
            n_max,
            block_values: vec![0.0; n_max + 1],
        }
    }

    pub fn from_values(seed: u64, block_values: Vec<f64>) -> Result<Self> {
        if block_values.is_empty() {
            return invalid("a potential needs at least one block value");
        }
        if block_values.iter().any(|x| !(0.0..1.0).contains(x)) {
            return invalid("block values must lie in [0, 1)");
        }
        Ok(BlockPotential {
            seed,
            n_max: block_values.len() - 1,
            block_values,
        })
    }

    /// `V_k = X_{n(k)}`.
    pub fn value(&self, k: &ModeIndex) -> f64 {
        self.block_values[block_index(k)]
    }
}

/// Draw of block `n` for a given seed; independent of how many blocks are drawn.
pub fn block_draw(seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n as u64);
    rng.random::<f64>()
}

pub fn sample_potential(seed: u64, n_max: usize) -> BlockPotential {
    BlockPotential {
        seed,
        n_max,
        block_values: (0..=n_max).map(|n| block_draw(seed, n)).collect(),
    }
}

/// `ω_k = |k|^2 + (2π)^{-d/2} V_k` over the box.
#[derive(Clone, Debug)]
pub struct FrequencyTable {
    pub lattice: TruncatedLattice,
    pub potential: BlockPotential,
    pub omega: Vec<f64>,
}

impl FrequencyTable {
    pub fn omega_of(&self, k: &ModeIndex) -> Option<f64> {
        self.lattice.index_of(k).map(|i| self.omega[i])
    }

    /// Potential coefficient `(2π)^{-d/2}` in precision `T`.
    pub fn coupling<T: Real>(&self) -> T {
        torus_normalisation(self.lattice.d)
    }

    /// `ω_k` in precision `T`.
    pub fn omega_t<T: Real>(&self, k: &ModeIndex) -> T {
        T::from_i64(k.norm2()) + self.coupling::<T>() * T::from_f64(self.potential.value(k))
    }

    /// Signed gap `Σ ω_{k_j} - Σ ω_{l_j}` (so `Ω = 2i * gap`).
    ///
    /// The integer part is formed exactly and the potential enters only
    /// through block-count differences, so pairs with equal block multisets
    /// see no potential at all.
    pub fn signed_gap<T: Real>(&self, k: &[ModeIndex], l: &[ModeIndex]) -> T {
        let integer: i64 = k.iter().map(|m| m.norm2()).sum::<i64>()
            - l.iter().map(|m| m.norm2()).sum::<i64>();
        let mut counts = vec![0i64; self.potential.block_values.len()];
        for m in k {
            counts[block_index(m)] += 1;
        }
        for m in l {
            counts[block_index(m)] -= 1;
        }
        let mut pot = T::zero();
        for (c, x) in counts.iter().zip(&self.potential.block_values) {
            if *c != 0 {
                pot = pot + T::from_i64(*c) * T::from_f64(*x);
            }
        }
        T::from_i64(integer) + self.coupling::<T>() * pot
    }
}

pub fn frequencies(v: &BlockPotential, lattice: &TruncatedLattice) -> Result<FrequencyTable> {
    if lattice.n_max > v.n_max {
        return invalid(format!(
            "lattice needs {} block values, potential has {}",
            lattice.n_max + 1,
            v.n_max + 1
        ));
    }
    let c: f64 = torus_normalisation(lattice.d);
    let omega = lattice
        .modes()
        .map(|k| k.norm2() as f64 + c * v.value(&k))
        .collect();
    Ok(FrequencyTable {
        lattice: *lattice,
        potential: v.clone(),
        omega,
    })
}
