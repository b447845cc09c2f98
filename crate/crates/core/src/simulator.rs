//! Split-step spectral integrator for the Galerkin-truncated equation
//! `i ∂_t u_k = ω_k u_k + σ Π(|u|^{2p} u)_k` on the mode box.
//!
//! Grid values are `u(x) = (2π)^{-d/2} Σ_k u_k e^{ik·x}` on `M^d` points with
//! `M > (2p+2)K`, so products of box modes are never aliased back into the box.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{observables, FourierState, ObservableSpec, TruncatedLattice};
use crate::polyalg::{evaluate, HomPoly};
use crate::potential::{frequencies, BlockPotential, FrequencyTable};
use crate::scalar::torus_normalisation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub lattice: TruncatedLattice,
    pub potential: BlockPotential,
    pub p: usize,
    pub sigma: f64,
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
    pub dealias: bool,
    pub observables: ObservableSpec,
}

impl SimConfig {
    pub fn new(lattice: TruncatedLattice, potential: BlockPotential, p: usize, sigma: f64, dt: f64, t_final: f64) -> Self {
        SimConfig {
            lattice,
            potential,
            p,
            sigma,
            dt,
            t_final,
            record_every: 1,
            dealias: true,
            observables: ObservableSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return invalid(format!("time step must be positive, got {}", self.dt));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return invalid(format!("final time must be non-negative, got {}", self.t_final));
        }
        if self.p < 1 {
            return invalid("nonlinearity power p must be at least 1");
        }
        if self.record_every == 0 {
            return invalid("record_every must be at least 1");
        }
        if !self.sigma.is_finite() {
            return invalid("sigma must be finite");
        }
        Ok(())
    }

    /// Number of steps and the step actually used (`t_final / n`).
    pub fn steps(&self) -> (u64, f64) {
        if self.t_final == 0.0 {
            return (0, self.dt);
        }
        let n = (self.t_final / self.dt).round().max(1.0) as u64;
        (n, self.t_final / n as f64)
    }
}

/// Smallest `2^a 3^b 5^c` that is at least `n`.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut x = m;
        for f in [2, 3, 5] {
            while x.is_multiple_of(f) {
                x /= f;
            }
        }
        if x == 1 {
            return m;
        }
        m += 1;
    }
}

/// Grid points per dimension: the smallest FFT-friendly size above
/// `(2p+2)K` when dealiasing, the box side otherwise.
pub fn grid_size(lattice: &TruncatedLattice, p: usize, dealias: bool) -> usize {
    if dealias {
        smooth_size((p + 1) * lattice.side())
    } else {
        lattice.side()
    }
}

/// Transform workspace: one per thread.
pub struct Spectral {
    d: usize,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    line: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
    pub grid: Vec<Complex<f64>>,
    map: Vec<usize>,
    to_grid_scale: f64,
    from_grid_scale: f64,
}

impl Spectral {
    pub fn new(lattice: &TruncatedLattice, m: usize) -> Result<Self> {
        if m < lattice.side() {
            return invalid(format!("grid of {m} points cannot hold the box side {}", lattice.side()));
        }
        let d = lattice.d;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let total = m.pow(d as u32);
        let map = lattice
            .modes()
            .map(|k| {
                k.components(d)
                    .iter()
                    .fold(0usize, |acc, &c| acc * m + c.rem_euclid(m as i32) as usize)
            })
            .collect();
        let c: f64 = torus_normalisation(d);
        Ok(Spectral {
            d,
            m,
            fwd,
            inv,
            line: vec![Complex::default(); m],
            scratch: vec![Complex::default(); scratch_len],
            grid: vec![Complex::default(); total],
            map,
            to_grid_scale: c,
            from_grid_scale: 1.0 / (c * total as f64),
        })
    }

    pub fn points(&self) -> usize {
        self.m
    }

    fn transform(&mut self, inverse: bool) {
        let m = self.m;
        let total = self.grid.len();
        let fft = if inverse { &self.inv } else { &self.fwd };
        for axis in 0..self.d {
            let stride = m.pow((self.d - 1 - axis) as u32);
            if stride == 1 {
                for chunk in self.grid.chunks_exact_mut(m) {
                    fft.process_with_scratch(chunk, &mut self.scratch);
                }
                continue;
            }
            for base in 0..total {
                // base runs over line starts: index digit along `axis` is zero
                if !(base / stride).is_multiple_of(m) {
                    continue;
                }
                for j in 0..m {
                    self.line[j] = self.grid[base + j * stride];
                }
                fft.process_with_scratch(&mut self.line, &mut self.scratch);
                for j in 0..m {
                    self.grid[base + j * stride] = self.line[j];
                }
            }
        }
    }

    /// Physical values of `u` on the grid.
    pub fn to_grid(&mut self, u: &[Complex<f64>]) {
        self.grid.iter_mut().for_each(|z| *z = Complex::default());
        for (i, &g) in self.map.iter().enumerate() {
            self.grid[g] = u[i] * self.to_grid_scale;
        }
        self.transform(true);
    }

    /// Box coefficients of the grid function (the grid is consumed).
    pub fn from_grid(&mut self, out: &mut [Complex<f64>]) {
        self.transform(false);
        for (i, &g) in self.map.iter().enumerate() {
            out[i] = self.grid[g] * self.from_grid_scale;
        }
    }

    /// `(2π/M)^d Σ_x |u(x)|^{2p+2}`, i.e. `∫ |u|^{2p+2}` for the current grid.
    pub fn power_integral(&self, p: usize) -> f64 {
        let cell = (2.0 * std::f64::consts::PI / self.m as f64).powi(self.d as i32);
        cell * self
            .grid
            .iter()
            .map(|z| z.norm_sqr().powi(p as i32 + 1))
            .sum::<f64>()
    }
}

/// Integrator state: frequencies, precomputed half-step phases and workspace.
pub struct Simulator {
    pub cfg: SimConfig,
    pub freqs: FrequencyTable,
    dt: f64,
    n_steps: u64,
    half_phase: Vec<Complex<f64>>,
    spectral: Spectral,
    mid: Vec<Complex<f64>>,
    field: Vec<Complex<f64>>,
    pub max_iterations: usize,
}

/// One recorded sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub step: u64,
    pub t: f64,
    pub mass: f64,
    pub hamiltonian: f64,
    pub super_actions: Vec<f64>,
    pub hs_norms: Vec<(f64, f64)>,
    pub nns: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let freqs = frequencies(&cfg.potential, &cfg.lattice)?;
        let (n_steps, dt) = cfg.steps();
        let half_phase = freqs
            .omega
            .iter()
            .map(|w| Complex::from_polar(1.0, -0.5 * dt * w))
            .collect();
        let m = grid_size(&cfg.lattice, cfg.p, cfg.dealias);
        let spectral = Spectral::new(&cfg.lattice, m)?;
        let n = cfg.lattice.len();
        Ok(Simulator {
            cfg,
            freqs,
            dt,
            n_steps,
            half_phase,
            spectral,
            mid: vec![Complex::default(); n],
            field: vec![Complex::default(); n],
            max_iterations: 200,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> u64 {
        self.n_steps
    }

    pub fn grid_points(&self) -> usize {
        self.spectral.points()
    }

    /// `Π(|v|^{2p} v)` into `self.field`.
    fn nonlinearity(&mut self, v: &[Complex<f64>]) {
        self.spectral.to_grid(v);
        let p = self.cfg.p as i32;
        for z in self.spectral.grid.iter_mut() {
            *z *= z.norm_sqr().powi(p);
        }
        self.spectral.from_grid(&mut self.field);
    }

    /// Implicit midpoint for `v' = -iσ Π(|v|^{2p} v)` over one step.
    fn nonlinear_step(&mut self, v: &mut [Complex<f64>]) -> Result<()> {
        if self.cfg.sigma == 0.0 {
            return Ok(());
        }
        let c = Complex::new(0.0, -self.cfg.sigma * self.dt);
        let v0 = v.to_vec();
        let scale = v0.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let tol = 4.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE);
        let mut last = f64::INFINITY;
        let mut stalls = 0;
        self.mid.copy_from_slice(&v0);
        for _ in 0..self.max_iterations {
            let mid = std::mem::take(&mut self.mid);
            self.nonlinearity(&mid);
            self.mid = mid;
            let mut diff: f64 = 0.0;
            for i in 0..v.len() {
                let next = v0[i] + c * self.field[i];
                diff = diff.max((next - v[i]).norm());
                v[i] = next;
                self.mid[i] = (v0[i] + next) * 0.5;
            }
            if !diff.is_finite() {
                return Err(Error::NonFinite("nonlinear substep".into()));
            }
            if diff <= tol {
                return Ok(());
            }
            // round-off plateau: stop once the correction stops shrinking
            if diff >= last {
                stalls += 1;
                if stalls >= 3 && diff <= 1e3 * tol {
                    return Ok(());
                }
            }
            last = diff;
        }
        Err(Error::NonFinite(format!(
            "implicit midpoint did not converge in {} iterations (step too large for the amplitude)",
            self.max_iterations
        )))
    }

    fn linear_half(&self, v: &mut [Complex<f64>]) {
        for (z, e) in v.iter_mut().zip(&self.half_phase) {
            *z *= e;
        }
    }

    /// One Strang step: half linear phase, nonlinear step, half linear phase.
    pub fn step(&mut self, u: &mut FourierState) -> Result<()> {
        if u.lattice != self.cfg.lattice {
            return invalid("state does not live on the simulation lattice");
        }
        let mut amps = std::mem::take(&mut u.amps);
        self.linear_half(&mut amps);
        let r = self.nonlinear_step(&mut amps);
        self.linear_half(&mut amps);
        u.amps = amps;
        r?;
        if u.amps.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("state after step".into()));
        }
        Ok(())
    }

    /// `Z_2 + σ/(p+1) ∫ |u|^{2p+2}` with the integral by grid quadrature.
    pub fn hamiltonian(&mut self, u: &FourierState) -> f64 {
        let z2: f64 = self
            .freqs
            .omega
            .iter()
            .zip(&u.amps)
            .map(|(w, z)| w * z.norm_sqr())
            .sum();
        if self.cfg.sigma == 0.0 {
            return z2;
        }
        self.spectral.to_grid(&u.amps);
        z2 + self.cfg.sigma / (self.cfg.p + 1) as f64 * self.spectral.power_integral(self.cfg.p)
    }

    pub fn sample(&mut self, u: &FourierState, step: u64) -> Result<Sample> {
        let obs = observables(u, &self.cfg.observables)?;
        Ok(Sample {
            step,
            t: step as f64 * self.dt,
            mass: obs.mass,
            hamiltonian: self.hamiltonian(u),
            super_actions: obs.super_actions,
            hs_norms: obs.hs_norms,
            nns: obs.nns,
        })
    }

    /// Integrate from `start_step` to the end, recording every
    /// `record_every` steps and at the final step. `hook` sees the state after
    /// every step.
    pub fn run_with(
        &mut self,
        u0: &FourierState,
        start_step: u64,
        mut hook: impl FnMut(u64, &FourierState) -> Result<()>,
    ) -> Result<(TrajectoryRecord, FourierState)> {
        if start_step > self.n_steps {
            return invalid(format!("start step {start_step} beyond the {} planned steps", self.n_steps));
        }
        u0.check_finite()?;
        let mut u = u0.clone();
        let mut rec = TrajectoryRecord::default();
        rec.samples.push(self.sample(&u, start_step)?);
        let every = self.cfg.record_every as u64;
        for step in start_step + 1..=self.n_steps {
            if let Err(e) = self.step(&mut u) {
                rec.aborted = Some(format!("step {step}: {e}"));
                return Ok((rec, u));
            }
            hook(step, &u)?;
            if step % every == 0 || step == self.n_steps {
                rec.samples.push(self.sample(&u, step)?);
            }
        }
        Ok((rec, u))
    }
}

pub fn simulate(u0: &FourierState, cfg: &SimConfig) -> Result<TrajectoryRecord> {
    Ok(Simulator::new(cfg.clone())?.run_with(u0, 0, |_, _| Ok(()))?.0)
}

/// A single step with a fresh workspace.
pub fn step(u: &FourierState, cfg: &SimConfig) -> Result<FourierState> {
    let mut sim = Simulator::new(cfg.clone())?;
    let mut v = u.clone();
    sim.step(&mut v)?;
    Ok(v)
}

/// `Z_2(u) + P(u)` through the polynomial algebra.
pub fn hamiltonian_spectral(u: &FourierState, freqs: &FrequencyTable, p: &HomPoly) -> f64 {
    let z2: f64 = freqs.omega.iter().zip(&u.amps).map(|(w, z)| w * z.norm_sqr()).sum();
    z2 + evaluate(p, u)
}

/// Random data `u_k ∝ ξ_k <k>^{-decay}` with `ξ_k` uniform in the unit square
/// centred at 0, scaled to `‖u‖_{H^s} = size`.
pub fn random_initial_data(lattice: TruncatedLattice, s: f64, size: f64, decay: f64, seed: u64) -> Result<FourierState> {
    if !(size >= 0.0) || !size.is_finite() {
        return invalid(format!("initial size must be non-negative, got {size}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps = lattice
        .modes()
        .map(|k| {
            let w = k.bracket().powf(-decay);
            Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * w
        })
        .collect();
    let u = FourierState::from_amplitudes(lattice, amps)?;
    let n = u.hs_norm(s);
    Ok(if n > 0.0 { u.scaled(size / n) } else { u })
}

/// Drift statistics of a trajectory relative to its first sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    /// `max_t |J_n(t) - J_n(0)| / J_n(0)` per block (0 for empty blocks).
    pub super_action_drift: Vec<f64>,
    pub max_super_action_drift: f64,
    pub max_mass_drift: f64,
    /// Whether `2^{-2s} ‖u‖_{H^s}^2 ≤ N_{N,s} ≤ ‖u‖_{H^s}^2` held at every
    /// sample; absent when the record lacks the matching `H^s` norm.
    pub nns_bounds_held: Option<bool>,
    pub samples: usize,
}

pub fn drift_summary(rec: &TrajectoryRecord, nns_s: Option<f64>) -> Result<DriftSummary> {
    let Some(first) = rec.samples.first() else {
        return invalid("empty trajectory");
    };
    let mut drift = vec![0.0f64; first.super_actions.len()];
    let mut mass: f64 = 0.0;
    let mut held = nns_s.map(|_| true);
    for smp in &rec.samples {
        for (n, (j, j0)) in smp.super_actions.iter().zip(&first.super_actions).enumerate() {
            if *j0 > 0.0 {
                drift[n] = drift[n].max((j - j0).abs() / j0);
            }
        }
        mass = mass.max((smp.mass - first.mass).abs() / first.mass.max(f64::MIN_POSITIVE));
        if let (Some(s), Some(h)) = (nns_s, held.as_mut()) {
            let hs = smp.hs_norms.iter().find(|(si, _)| *si == s).map(|(_, v)| v * v);
            match (hs, smp.nns) {
                (Some(hs2), Some(n)) => {
                    let slack = 1e-12 * hs2;
                    *h &= 2f64.powf(-2.0 * s) * hs2 <= n + slack && n <= hs2 + slack;
                }
                _ => held = None,
            }
        }
    }
    Ok(DriftSummary {
        max_super_action_drift: drift.iter().copied().fold(0.0, f64::max),
        super_action_drift: drift,
        max_mass_drift: mass,
        nns_bounds_held: held,
        samples: rec.samples.len(),
    })
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"NLSSNAP\0";
pub const SNAPSHOT_VERSION: u32 = 1;

/// State at a given step of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub state: FourierState,
    pub step: u64,
    pub t: f64,
    /// Free-form 32-byte tag (the command line stores its config hash here).
    pub tag: [u8; 32],
}

/// Little-endian layout: magic `NLSSNAP\0`, `u32` version, `u32 d`,
/// `i32 K_max`, 32-byte tag, `u64` step, `f64` time, `u64` mode count, then `(re, im)`
/// pairs as `f64` in row-major mode order.
pub fn write_snapshot<W: Write>(mut w: W, snap: &Snapshot) -> Result<()> {
    let lat = snap.state.lattice;
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(lat.d as u32).to_le_bytes())?;
    w.write_all(&lat.k_max.to_le_bytes())?;
    w.write_all(&snap.tag)?;
    w.write_all(&snap.step.to_le_bytes())?;
    w.write_all(&snap.t.to_le_bytes())?;
    w.write_all(&(snap.state.amps.len() as u64).to_le_bytes())?;
    for z in &snap.state.amps {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Snapshot> {
    fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        r.read_exact(&mut b)?;
        Ok(b)
    }
    if &take::<8, _>(&mut r)? != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a state snapshot".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("snapshot version {version} is not supported")));
    }
    let d = u32::from_le_bytes(take(&mut r)?) as usize;
    let k = i32::from_le_bytes(take(&mut r)?);
    let tag = take::<32, _>(&mut r)?;
    let step = u64::from_le_bytes(take(&mut r)?);
    let t = f64::from_le_bytes(take(&mut r)?);
    let n = u64::from_le_bytes(take(&mut r)?) as usize;
    let lattice = TruncatedLattice::new(d, k).map_err(|e| Error::Format(e.to_string()))?;
    if n != lattice.len() {
        return Err(Error::Format(format!("snapshot holds {n} modes, box has {}", lattice.len())));
    }
    let mut amps = Vec::with_capacity(n);
    for _ in 0..n {
        let re = f64::from_le_bytes(take(&mut r)?);
        let im = f64::from_le_bytes(take(&mut r)?);
        amps.push(Complex::new(re, im));
    }
    Ok(Snapshot {
        state: FourierState::from_amplitudes(lattice, amps)?,
        step,
        t,
        tag,
    })
}
