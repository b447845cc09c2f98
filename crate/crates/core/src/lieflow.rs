//! Hamiltonian flows `∂_t u = i∇χ(u)` of polynomial generators and the
//! truncated adjoint series `Σ ad_χ^n Q / n!` on the algebra side.
//!
//! With the bracket `{P, Q} = (i∇P, ∇Q)`, `d/dt Q(Φ^t(u)) = {χ, Q}(Φ^t(u))`,
//! so `Q ∘ Φ^1 = Σ_n ad_χ^n Q / n!` with `ad_χ Q = {χ, Q}`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{FourierState, TruncatedLattice};
use crate::polyalg::{poisson_bracket_with, Budget, CompiledPoly, HomPoly};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_final: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 1e-3,
            t_final: 1.0,
        }
    }
}

impl FlowConfig {
    pub fn at(t_final: f64) -> Self {
        FlowConfig {
            t_final,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return invalid(format!("flow step must be positive, got {}", self.dt));
        }
        if !(self.t_final.abs() <= 1.0) {
            return invalid(format!("flow time must lie in [-1, 1], got {}", self.t_final));
        }
        Ok(())
    }

    /// Number of steps and the signed step actually used.
    fn steps(&self) -> (usize, f64) {
        if self.t_final == 0.0 {
            return (0, 0.0);
        }
        let n = (self.t_final.abs() / self.dt).ceil().max(1.0) as usize;
        (n, self.t_final / n as f64)
    }
}

/// `ε_χ = ¼ (2q ‖χ‖_{ℓ^∞})^{-1/(2q-2)}`; infinite for `χ = 0`.
pub fn epsilon_chi<T: Real>(chi: &HomPoly<T>) -> f64 {
    let norm = chi.linf().to_f64();
    if norm == 0.0 {
        return f64::INFINITY;
    }
    let q = chi.q() as f64;
    0.25 * (2.0 * q * norm).powf(-1.0 / (2.0 * q - 2.0))
}

/// A generator compiled against a lattice, ready for repeated integration.
pub struct Flow<T: Real> {
    chi: CompiledPoly<T>,
    eps: f64,
}

fn axpy<T: Real>(y: &[Complex<T>], a: T, x: &[Complex<T>]) -> Vec<Complex<T>> {
    y.iter()
        .zip(x)
        .map(|(y, x)| Complex::new(y.re + a * x.re, y.im + a * x.im))
        .collect()
}

fn times_i<T: Real>(v: &mut [Complex<T>]) {
    for z in v.iter_mut() {
        *z = Complex::new(-z.im, z.re);
    }
}

fn l1<T: Real>(v: &[Complex<T>]) -> f64 {
    v.iter().map(|z| z.re.to_f64().hypot(z.im.to_f64())).sum()
}

impl<T: Real> Flow<T> {
    pub fn new(chi: &HomPoly<T>, lattice: &TruncatedLattice) -> Self {
        Flow {
            chi: chi.compile(lattice),
            eps: epsilon_chi(chi),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    fn field(&self, u: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut g = self.chi.gradient(u);
        times_i(&mut g);
        g
    }

    fn tangent_field(&self, u: &[Complex<T>], w: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut g = vec![Complex::new(T::zero(), T::zero()); u.len()];
        self.chi.gradient_tangent_into(u, w, &mut g);
        times_i(&mut g);
        g
    }

    fn check_start(&self, u: &FourierState<T>) -> Result<()> {
        let n = l1(&u.amps);
        if !(n < self.eps) {
            return Err(Error::NormEscape {
                norm: n,
                radius: self.eps,
            });
        }
        Ok(())
    }

    fn guard(&self, u: &[Complex<T>], time: f64) -> Result<()> {
        let n = l1(u);
        if !(n <= 2.0 * self.eps) {
            return Err(Error::FlowEscape {
                norm: n,
                limit: 2.0 * self.eps,
                time,
            });
        }
        Ok(())
    }

    /// Classical RK4 with the fixed step of `cfg`.
    pub fn apply(&self, u0: &FourierState<T>, cfg: &FlowConfig) -> Result<FourierState<T>> {
        let delta = self.displacement(u0, cfg)?;
        let amps = u0.amps.iter().zip(&delta).map(|(a, b)| a + b).collect();
        FourierState::from_amplitudes(u0.lattice, amps)
    }

    /// `Φ^t(u0) - u0`, accumulated directly so that it keeps full relative
    /// precision when it is much smaller than `u0`.
    pub fn displacement(&self, u0: &FourierState<T>, cfg: &FlowConfig) -> Result<Vec<Complex<T>>> {
        cfg.validate()?;
        if u0.lattice != *self.chi.lattice() {
            return invalid("state and generator live on different lattices");
        }
        let zero = Complex::new(T::zero(), T::zero());
        let mut delta = vec![zero; u0.amps.len()];
        let (n, h) = cfg.steps();
        if n == 0 || self.eps.is_infinite() {
            return Ok(delta);
        }
        self.check_start(u0)?;
        let ht = T::from_f64(cfg.t_final) / T::from_f64(n as f64);
        let half = T::from_f64(0.5) * ht;
        let sixth = ht / T::from_f64(6.0);
        let two = T::from_f64(2.0);
        let mut u = u0.amps.clone();
        for step in 0..n {
            let k1 = self.field(&u);
            let k2 = self.field(&axpy(&u, half, &k1));
            let k3 = self.field(&axpy(&u, half, &k2));
            let k4 = self.field(&axpy(&u, ht, &k3));
            for i in 0..u.len() {
                let s = k1[i] + (k2[i] + k3[i]) * two + k4[i];
                delta[i] = delta[i] + Complex::new(s.re * sixth, s.im * sixth);
                u[i] = u0.amps[i] + delta[i];
            }
            self.guard(&u, h * (step + 1) as f64)?;
        }
        if delta.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("flow displacement".into()));
        }
        Ok(delta)
    }

    /// Flow together with its linearisation applied to `v0`.
    pub fn apply_tangent(
        &self,
        u0: &FourierState<T>,
        v0: &FourierState<T>,
        cfg: &FlowConfig,
    ) -> Result<(FourierState<T>, FourierState<T>)> {
        cfg.validate()?;
        if u0.lattice != *self.chi.lattice() || v0.lattice != u0.lattice {
            return invalid("state, tangent and generator live on different lattices");
        }
        let (n, h) = cfg.steps();
        if n == 0 || self.eps.is_infinite() {
            return Ok((u0.clone(), v0.clone()));
        }
        self.check_start(u0)?;
        let ht = T::from_f64(cfg.t_final) / T::from_f64(n as f64);
        let half = T::from_f64(0.5) * ht;
        let sixth = ht / T::from_f64(6.0);
        let two = T::from_f64(2.0);
        let mut u = u0.amps.clone();
        let mut w = v0.amps.clone();
        for step in 0..n {
            let k1 = self.field(&u);
            let l1v = self.tangent_field(&u, &w);
            let u2 = axpy(&u, half, &k1);
            let w2 = axpy(&w, half, &l1v);
            let k2 = self.field(&u2);
            let l2v = self.tangent_field(&u2, &w2);
            let u3 = axpy(&u, half, &k2);
            let w3 = axpy(&w, half, &l2v);
            let k3 = self.field(&u3);
            let l3v = self.tangent_field(&u3, &w3);
            let u4 = axpy(&u, ht, &k3);
            let w4 = axpy(&w, ht, &l3v);
            let k4 = self.field(&u4);
            let l4v = self.tangent_field(&u4, &w4);
            for i in 0..u.len() {
                let s = k1[i] + (k2[i] + k3[i]) * two + k4[i];
                u[i] = u[i] + Complex::new(s.re * sixth, s.im * sixth);
                let s = l1v[i] + (l2v[i] + l3v[i]) * two + l4v[i];
                w[i] = w[i] + Complex::new(s.re * sixth, s.im * sixth);
            }
            self.guard(&u, h * (step + 1) as f64)?;
        }
        Ok((
            FourierState::from_amplitudes(u0.lattice, u)?,
            FourierState::from_amplitudes(u0.lattice, w)?,
        ))
    }
}

/// `Φ_χ^{t}(u0)` with `t = cfg.t_final`.
pub fn flow<T: Real>(chi: &HomPoly<T>, u0: &FourierState<T>, cfg: &FlowConfig) -> Result<FourierState<T>> {
    Flow::new(chi, &u0.lattice).apply(u0, cfg)
}

/// `dΦ_χ^t(u0)[v0]`.
pub fn flow_tangent<T: Real>(
    chi: &HomPoly<T>,
    u0: &FourierState<T>,
    v0: &FourierState<T>,
    cfg: &FlowConfig,
) -> Result<FourierState<T>> {
    Ok(Flow::new(chi, &u0.lattice).apply_tangent(u0, v0, cfg)?.1)
}

/// Degree bookkeeping for one stage of the normal form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LieSeriesBudget {
    /// Largest kept degree, `2r`.
    pub degree_cap: usize,
    /// Stage index `𝔯`; the generator has half-degree `𝔯 + 1`.
    pub stage: usize,
    /// Compute the first omitted term of every series for the ledger.
    pub audit: bool,
    /// Omitted terms above this degree are counted but not computed.
    pub audit_degree: usize,
    pub poly: Budget,
}

impl LieSeriesBudget {
    pub fn new(r: usize, stage: usize) -> Self {
        LieSeriesBudget {
            degree_cap: 2 * r,
            stage,
            audit: true,
            audit_degree: 2 * r + 2,
            poly: Budget::default(),
        }
    }

    pub fn r(&self) -> usize {
        self.degree_cap / 2
    }

    /// `m_q`: the smallest `m` with `(m + 1)𝔯 + q > r`.
    pub fn m_q(&self, q: usize) -> usize {
        let r = self.r();
        if q > r || self.stage == 0 {
            return 0;
        }
        (r - q) / self.stage
    }

    fn validate(&self) -> Result<()> {
        if self.degree_cap < 4 || !self.degree_cap.is_multiple_of(2) {
            return invalid(format!("degree cap must be even and at least 4, got {}", self.degree_cap));
        }
        if self.stage == 0 {
            return invalid("stage index must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscardEntry {
    pub stage: usize,
    /// Half-degree of the series' first term.
    pub source_q: usize,
    /// Half-degree of the omitted term.
    pub q: usize,
    pub linf: f64,
}

/// Audit of the Lie-series terms cut by the degree cap.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscardLedger {
    pub entries: Vec<DiscardEntry>,
    /// Number of truncated series.
    pub count: usize,
    pub max_linf: f64,
}

impl DiscardLedger {
    fn record(&mut self, e: Option<DiscardEntry>) {
        self.count += 1;
        if let Some(e) = e {
            self.max_linf = self.max_linf.max(e.linf);
            self.entries.push(e);
        }
    }

    pub fn merge(&mut self, other: DiscardLedger) {
        self.count += other.count;
        self.max_linf = self.max_linf.max(other.max_linf);
        self.entries.extend(other.entries);
    }
}

/// Output of a Lie transform: `parts[i]` has half-degree `i + 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedParts<T: Real> {
    pub parts: Vec<HomPoly<T>>,
    pub ledger: DiscardLedger,
}

impl<T: Real> TransformedParts<T> {
    pub fn get(&self, q: usize) -> Option<&HomPoly<T>> {
        q.checked_sub(2).and_then(|i| self.parts.get(i))
    }
}

/// Push `Σ_{n >= n0} ad_χ^{n - n0} W / n!` into `out`, with `W` of half-degree
/// `q0` landing in half-degree `q0 + (n - n0)𝔯`.
fn push_series<T: Real>(
    out: &mut [HomPoly<T>],
    ledger: &mut DiscardLedger,
    w: &HomPoly<T>,
    n0: usize,
    chi: &HomPoly<T>,
    budget: &LieSeriesBudget,
) -> Result<()> {
    let r = budget.r();
    let stage = budget.stage;
    let mut fact = T::one();
    for i in 2..=n0 {
        fact = fact * T::from_f64(i as f64);
    }
    let mut term = w.scale(T::one() / fact);
    let mut q = w.q();
    let mut n = n0;
    loop {
        if q > r {
            let entry = if budget.audit && !term.is_empty() {
                Some(DiscardEntry {
                    stage,
                    source_q: w.q(),
                    q,
                    linf: term.linf().to_f64(),
                })
            } else {
                None
            };
            ledger.record(entry);
            return Ok(());
        }
        let slot = &mut out[q - 2];
        *slot = slot.add(&term)?;
        if chi.is_empty() || term.is_empty() {
            return Ok(());
        }
        if q + stage > r && (!budget.audit || 2 * (q + stage) > budget.audit_degree) {
            ledger.record(None);
            return Ok(());
        }
        n += 1;
        term = poisson_bracket_with(chi, &term, budget.poly)?.scale(T::one() / T::from_f64(n as f64));
        q += stage;
    }
}

/// `Σ_{n=0}^{m_q} ad_χ^n Q / n!` for every part `Q`, collected by degree.
pub fn lie_transform<T: Real>(
    parts: &[HomPoly<T>],
    chi: &HomPoly<T>,
    budget: &LieSeriesBudget,
) -> Result<TransformedParts<T>> {
    lie_transform_with_z2(parts, None, chi, budget)
}

/// As [`lie_transform`], plus `Σ_{n>=1} ad_χ^{n-1} W / n!` for the quadratic
/// channel `W = {χ, Z_2}`.
pub fn lie_transform_with_z2<T: Real>(
    parts: &[HomPoly<T>],
    z2_bracket: Option<&HomPoly<T>>,
    chi: &HomPoly<T>,
    budget: &LieSeriesBudget,
) -> Result<TransformedParts<T>> {
    budget.validate()?;
    let r = budget.r();
    if chi.q() != budget.stage + 1 {
        return invalid(format!(
            "generator of half-degree {} does not match stage {}",
            chi.q(),
            budget.stage
        ));
    }
    let d = chi.d();
    let mut out: Vec<HomPoly<T>> = (2..=r).map(|q| HomPoly::zero(d, q)).collect();
    let mut ledger = DiscardLedger::default();
    for p in parts {
        if p.q() < 2 || p.q() > r {
            return invalid(format!("part of half-degree {} outside [2, {r}]", p.q()));
        }
        push_series(&mut out, &mut ledger, p, 0, chi, budget)?;
    }
    if let Some(w) = z2_bracket {
        if w.q() != chi.q() {
            return invalid("quadratic channel must have the generator's degree");
        }
        push_series(&mut out, &mut ledger, w, 1, chi, budget)?;
    }
    Ok(TransformedParts { parts: out, ledger })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ModeIndex;
    use crate::polyalg::{evaluate, make_poly, random_poly};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state<R: Rng>(lat: TruncatedLattice, l1_target: f64, rng: &mut R) -> FourierState {
        let amps: Vec<Complex<f64>> = (0..lat.len())
            .map(|_| Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let u = FourierState::from_amplitudes(lat, amps).unwrap();
        let s = l1_target / u.l1();
        u.scaled(s)
    }

    #[test]
    fn epsilon_examples() {
        let one = make_poly(
            1,
            2,
            vec![((vec![ModeIndex::d1(0); 2], vec![ModeIndex::d1(0); 2]), Complex::new(1.0, 0.0))],
        )
        .unwrap();
        assert!((epsilon_chi(&one) - 0.125).abs() < 1e-15);
        assert!((epsilon_chi(&one.scale(0.125)) - 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert!((epsilon_chi(&one.scale(4.0)) - 0.0625).abs() < 1e-15);
        assert_eq!(epsilon_chi(&HomPoly::<f64>::zero(1, 2)), f64::INFINITY);
    }

    #[test]
    fn zero_time_is_identity() {
        let lat = TruncatedLattice::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chi = random_poly(&lat, 2, 0.6, &mut rng);
        let u = state(lat, 0.5 * epsilon_chi(&chi), &mut rng);
        assert_eq!(flow(&chi, &u, &FlowConfig::at(0.0)).unwrap(), u);
    }

    #[test]
    fn round_trip_and_conservation() {
        let lat = TruncatedLattice::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chi = random_poly(&lat, 2, 0.6, &mut rng);
        let u = state(lat, 0.5 * epsilon_chi(&chi), &mut rng);
        let f = flow(&chi, &u, &FlowConfig::at(1.0)).unwrap();
        let b = flow(&chi, &f, &FlowConfig::at(-1.0)).unwrap();
        assert!(b.l1_distance(&u) < 1e-8);
        let c0 = evaluate(&chi, &u);
        let c1 = evaluate(&chi, &f);
        assert!((c1 - c0).abs() <= 1e-9 * (1.0 + c0.abs()));
        assert!(f.l1_distance(&u) > 0.0);
    }

    #[test]
    fn escape_is_reported() {
        let lat = TruncatedLattice::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chi = random_poly(&lat, 2, 0.6, &mut rng);
        let u = state(lat, 3.0 * epsilon_chi(&chi), &mut rng);
        assert!(flow(&chi, &u, &FlowConfig::at(1.0)).is_err());
        assert!(FlowConfig { dt: 0.0, t_final: 1.0 }.validate().is_err());
        assert!(FlowConfig { dt: 1e-3, t_final: 1.5 }.validate().is_err());
    }

    #[test]
    fn tangent_matches_finite_difference() {
        let lat = TruncatedLattice::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let chi = random_poly(&lat, 2, 0.6, &mut rng);
        let eps = epsilon_chi(&chi);
        let u = state(lat, 0.5 * eps, &mut rng);
        let v = state(lat, 1.0, &mut rng);
        let cfg = FlowConfig::at(1.0);
        let w = flow_tangent(&chi, &u, &v, &cfg).unwrap();
        let h = 1e-5;
        let up = FourierState::from_amplitudes(
            lat,
            u.amps.iter().zip(&v.amps).map(|(a, b)| a + b * h).collect(),
        )
        .unwrap();
        let fd: Vec<Complex<f64>> = flow(&chi, &up, &cfg)
            .unwrap()
            .amps
            .iter()
            .zip(&flow(&chi, &u, &cfg).unwrap().amps)
            .map(|(a, b)| (a - b) / h)
            .collect();
        let err: f64 = fd.iter().zip(&w.amps).map(|(a, b)| (a - b).norm()).sum();
        let size: f64 = w.amps.iter().map(|z| z.norm()).sum();
        assert!(err / size < 1e-4, "{}", err / size);
        let zero = HomPoly::<f64>::zero(1, 2);
        assert_eq!(flow_tangent(&zero, &u, &v, &cfg).unwrap(), v);
    }

    #[test]
    fn m_q_bookkeeping() {
        let b = LieSeriesBudget::new(2, 1);
        assert_eq!(b.m_q(2), 0);
        let b = LieSeriesBudget::new(3, 1);
        assert_eq!(b.m_q(2), 1);
        assert_eq!(b.m_q(3), 0);
        let b = LieSeriesBudget::new(5, 2);
        assert_eq!(b.m_q(2), 1);
        assert_eq!(b.m_q(3), 1);
        assert_eq!(b.m_q(4), 0);
    }

    #[test]
    fn zero_generator_leaves_parts() {
        let lat = TruncatedLattice::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_poly(&lat, 2, 0.6, &mut rng);
        let chi = HomPoly::zero(1, 2);
        let t = lie_transform(std::slice::from_ref(&p), &chi, &LieSeriesBudget::new(3, 1)).unwrap();
        assert_eq!(t.get(2), Some(&p));
        assert!(t.get(3).unwrap().is_empty());
        let t = lie_transform(std::slice::from_ref(&p), &random_poly(&lat, 2, 0.6, &mut rng), &LieSeriesBudget::new(2, 1)).unwrap();
        assert_eq!(t.get(2), Some(&p));
        assert_eq!(t.ledger.count, 1);
        assert!(t.ledger.max_linf > 0.0);
    }
}
