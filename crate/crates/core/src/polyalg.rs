//! Real, symmetric, momentum-conserving homogeneous polynomials
//!
//! `P(u) = Σ_{k,l} P_{k,l} u_{k_1}..u_{k_q} conj(u_{l_1})..conj(u_{l_q})`
//!
//! stored with one coefficient per `S_q × S_q × conjugation` orbit. The
//! representative of an orbit has both lists sorted and `k <= l`
//! lexicographically; the coefficient of `(l, k)` is the conjugate.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{FourierState, ModeIndex, TruncatedLattice};
use crate::potential::FrequencyTable;
use crate::resonance::{momentum, mu12_squared, multisets_by_momentum, IndexPair};
use crate::scalar::{cabs, cscale, torus_normalisation, Real};

pub const DEFAULT_MAX_ORBITS: usize = 10_000_000;

/// Cap on the number of stored orbits of any polynomial produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_orbits: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_orbits: DEFAULT_MAX_ORBITS,
        }
    }
}

impl Budget {
    fn check(&self, needed: usize) -> Result<()> {
        if needed > self.max_orbits {
            Err(Error::Budget {
                needed,
                cap: self.max_orbits,
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomPoly<T: Real = f64> {
    d: usize,
    q: usize,
    coeffs: BTreeMap<IndexPair, Complex<T>>,
    linf: T,
}

fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

fn is_czero<T: Real>(z: &Complex<T>) -> bool {
    z.re == T::zero() && z.im == T::zero()
}

/// `q! / Π mult!` for a sorted list.
fn multinomial<T: Real, M: PartialEq>(sorted: &[M]) -> T {
    let mut num = 1u64;
    for i in 2..=sorted.len() as u64 {
        num *= i;
    }
    let mut den = 1u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
            den *= run;
        } else {
            run = 1;
        }
    }
    T::from_f64((num / den) as f64)
}

impl<T: Real> HomPoly<T> {
    pub fn zero(d: usize, q: usize) -> Self {
        HomPoly {
            d,
            q,
            coeffs: BTreeMap::new(),
            linf: T::zero(),
        }
    }

    /// Build from canonical orbits; exact zeros are dropped and self-conjugate
    /// orbits have their imaginary part cleared.
    fn from_canonical(d: usize, q: usize, map: BTreeMap<IndexPair, Complex<T>>) -> Self {
        let mut coeffs = BTreeMap::new();
        let mut linf = T::zero();
        for (pair, mut c) in map {
            if pair.k == pair.l {
                c.im = T::zero();
            }
            if is_czero(&c) {
                continue;
            }
            linf = linf.max(cabs(c));
            coeffs.insert(pair, c);
        }
        HomPoly { d, q, coeffs, linf }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Half-degree.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn degree(&self) -> usize {
        2 * self.q
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `‖P‖_{ℓ^∞}`, the largest coefficient modulus.
    pub fn linf(&self) -> T {
        self.linf
    }

    pub fn iter(&self) -> impl Iterator<Item = (&IndexPair, &Complex<T>)> {
        self.coeffs.iter()
    }

    /// Coefficient of an arbitrary (not necessarily canonical) pair.
    pub fn coeff(&self, k: &[ModeIndex], l: &[ModeIndex]) -> Complex<T> {
        let mut k = k.to_vec();
        let mut l = l.to_vec();
        k.sort_unstable();
        l.sort_unstable();
        if k <= l {
            self.coeffs
                .get(&IndexPair { k, l })
                .copied()
                .unwrap_or_else(czero)
        } else {
            self.coeffs
                .get(&IndexPair { k: l, l: k })
                .map(|c| c.conj())
                .unwrap_or_else(czero)
        }
    }

    /// Largest sup-norm of any mode present.
    pub fn extent(&self) -> i32 {
        self.coeffs
            .keys()
            .flat_map(|p| p.k.iter().chain(&p.l))
            .map(|m| m.sup_norm())
            .max()
            .unwrap_or(0)
    }

    pub fn map_coeffs(&self, mut f: impl FnMut(&IndexPair, Complex<T>) -> Complex<T>) -> Self {
        let map = self
            .coeffs
            .iter()
            .map(|(p, c)| (p.clone(), f(p, *c)))
            .collect();
        Self::from_canonical(self.d, self.q, map)
    }

    pub fn filter(&self, mut keep: impl FnMut(&IndexPair, &Complex<T>) -> bool) -> Self {
        let map = self
            .coeffs
            .iter()
            .filter(|(p, c)| keep(p, c))
            .map(|(p, c)| (p.clone(), *c))
            .collect();
        Self::from_canonical(self.d, self.q, map)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map_coeffs(|_, c| cscale(c, s))
    }

    pub fn neg(&self) -> Self {
        self.map_coeffs(|_, c| -c)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut map = self.coeffs.clone();
        for (p, c) in &other.coeffs {
            let e = map.entry(p.clone()).or_insert_with(czero);
            *e = *e + *c;
        }
        Ok(Self::from_canonical(self.d, self.q, map))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    /// `max |P_c - Q_c|` over the union of supports.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for (p, c) in &self.coeffs {
            let o = other.coeffs.get(p).copied().unwrap_or_else(czero);
            m = m.max(cabs(*c - o));
        }
        for (p, c) in &other.coeffs {
            if !self.coeffs.contains_key(p) {
                m = m.max(cabs(*c));
            }
        }
        m
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.d != other.d || self.q != other.q {
            return invalid(format!(
                "incompatible polynomials (d={}, q={}) and (d={}, q={})",
                self.d, self.q, other.d, other.q
            ));
        }
        Ok(())
    }

    pub fn convert<U: Real>(&self) -> HomPoly<U> {
        let map = self
            .coeffs
            .iter()
            .map(|(p, c)| {
                (
                    p.clone(),
                    Complex::new(U::from_f64(c.re.to_f64()), U::from_f64(c.im.to_f64())),
                )
            })
            .collect();
        HomPoly::from_canonical(self.d, self.q, map)
    }

    /// Orbits expanded into monomials `(c, hol, anti)` with multiplicity
    /// counting; `P(u) = Σ c Π u_hol Π conj(u_anti)`.
    fn monomials(&self) -> Vec<(Complex<T>, &[ModeIndex], &[ModeIndex])> {
        let mut out = Vec::with_capacity(2 * self.coeffs.len());
        for (p, c) in &self.coeffs {
            let mk: T = multinomial(&p.k);
            if p.k == p.l {
                out.push((cscale(*c, mk * mk), &p.k[..], &p.l[..]));
            } else {
                let ml: T = multinomial(&p.l);
                let w = mk * ml;
                out.push((cscale(*c, w), &p.k[..], &p.l[..]));
                out.push((cscale(c.conj(), w), &p.l[..], &p.k[..]));
            }
        }
        out
    }

    /// Monomials resolved to storage indices of `lattice`; terms touching
    /// modes outside the box are dropped (they vanish on box states).
    pub fn compile(&self, lattice: &TruncatedLattice) -> CompiledPoly<T> {
        let monos = self
            .monomials()
            .into_iter()
            .filter_map(|(c, h, a)| {
                let hol: Option<Vec<u32>> =
                    h.iter().map(|m| lattice.index_of(m).map(|i| i as u32)).collect();
                let anti: Option<Vec<u32>> =
                    a.iter().map(|m| lattice.index_of(m).map(|i| i as u32)).collect();
                Some(Monomial {
                    coef: c,
                    hol: hol?,
                    anti: anti?,
                })
            })
            .collect();
        CompiledPoly {
            lattice: *lattice,
            q: self.q,
            monos,
        }
    }
}

/// Build a polynomial from raw `((k, l), coefficient)` entries.
///
/// Lists are sorted, the conjugate representative with `k <= l` is chosen,
/// and duplicate entries of the same orbit must agree (to 1e-12 relative).
pub fn make_poly<T: Real>(
    d: usize,
    q: usize,
    raw: impl IntoIterator<Item = ((Vec<ModeIndex>, Vec<ModeIndex>), Complex<T>)>,
) -> Result<HomPoly<T>> {
    if q < 2 {
        return invalid(format!("half-degree must be at least 2, got {q}"));
    }
    if !(1..=3).contains(&d) {
        return invalid(format!("dimension must be 1, 2 or 3, got {d}"));
    }
    let tol = T::from_f64(1e-12);
    let mut map: BTreeMap<IndexPair, Complex<T>> = BTreeMap::new();
    for ((k, l), c) in raw {
        if k.len() != q || l.len() != q {
            return invalid(format!("entry lists must have length {q}"));
        }
        if k.iter().chain(&l).any(|m| m.0[d..].iter().any(|&x| x != 0)) {
            return invalid(format!("mode with more than {d} components"));
        }
        let mut pair = IndexPair::new(k, l)?;
        let mut c = c;
        if pair.k > pair.l {
            pair = pair.swapped();
            c = c.conj();
        }
        if pair.k == pair.l && cabs(Complex::new(T::zero(), c.im)) > tol * (T::one() + cabs(c)) {
            return invalid(format!(
                "self-conjugate orbit {:?} needs a real coefficient",
                pair.k
            ));
        }
        match map.get(&pair) {
            Some(prev) => {
                if cabs(*prev - c) > tol * (T::one() + cabs(c)) {
                    return invalid(format!(
                        "inconsistent symmetric duplicates at {:?} / {:?}",
                        pair.k, pair.l
                    ));
                }
            }
            None => {
                map.insert(pair, c);
            }
        }
    }
    Ok(HomPoly::from_canonical(d, q, map))
}

/// `P(u) = σ (2π)^{-pd}/(p+1) Σ_{zero momentum} u^k conj(u)^l` on the box,
/// i.e. the Fourier form of `σ/(p+1) ∫ |u|^{2p+2}`.
pub fn nls_nonlinearity<T: Real>(
    lattice: &TruncatedLattice,
    p: usize,
    sigma: f64,
    budget: Budget,
) -> Result<HomPoly<T>> {
    if p < 1 {
        return invalid("nonlinearity power p must be at least 1");
    }
    let q = p + 1;
    let groups = multisets_by_momentum(lattice, q);
    let needed: usize = groups.iter().map(|g| g.len() * (g.len() + 1) / 2).sum();
    budget.check(needed)?;
    let base: T = torus_normalisation(lattice.d);
    let mut c = T::from_f64(sigma) / T::from_f64((p + 1) as f64);
    for _ in 0..p {
        c = c * base * base;
    }
    let mut map = BTreeMap::new();
    for g in groups {
        for i in 0..g.len() {
            for j in i..g.len() {
                map.insert(
                    IndexPair {
                        k: g[i].clone(),
                        l: g[j].clone(),
                    },
                    Complex::new(c, T::zero()),
                );
            }
        }
    }
    Ok(HomPoly::from_canonical(lattice.d, q, map))
}

/// Random polynomial on the zero-momentum orbits of the box; each orbit is
/// kept with probability `density`, coefficients uniform in the unit square
/// (real on self-conjugate orbits).
pub fn random_poly<R: Rng>(
    lattice: &TruncatedLattice,
    q: usize,
    density: f64,
    rng: &mut R,
) -> HomPoly<f64> {
    let mut map = BTreeMap::new();
    for g in multisets_by_momentum(lattice, q) {
        for i in 0..g.len() {
            for j in i..g.len() {
                if rng.random::<f64>() >= density {
                    continue;
                }
                let re = 2.0 * rng.random::<f64>() - 1.0;
                let im = if i == j {
                    0.0
                } else {
                    2.0 * rng.random::<f64>() - 1.0
                };
                map.insert(
                    IndexPair {
                        k: g[i].clone(),
                        l: g[j].clone(),
                    },
                    Complex::new(re, im),
                );
            }
        }
    }
    HomPoly::from_canonical(lattice.d, q, map)
}

#[derive(Clone, Debug)]
struct Monomial<T: Real> {
    coef: Complex<T>,
    hol: Vec<u32>,
    anti: Vec<u32>,
}

/// A polynomial expanded into monomials over a fixed lattice, for repeated
/// evaluation (flows, simulations).
#[derive(Clone, Debug)]
pub struct CompiledPoly<T: Real> {
    lattice: TruncatedLattice,
    q: usize,
    monos: Vec<Monomial<T>>,
}

fn product<T: Real>(u: &[Complex<T>], idx: &[u32], conj: bool) -> Complex<T> {
    let mut p = Complex::new(T::one(), T::zero());
    for &i in idx {
        let z = u[i as usize];
        p = p * if conj { z.conj() } else { z };
    }
    p
}

/// Products of all factors but one: `out[i] = Π_{j != i} f_j`.
fn leave_one_out<T: Real>(factors: &[Complex<T>], out: &mut Vec<Complex<T>>) {
    let n = factors.len();
    out.clear();
    out.resize(n, Complex::new(T::one(), T::zero()));
    let mut acc = Complex::new(T::one(), T::zero());
    for i in 0..n {
        out[i] = acc;
        acc = acc * factors[i];
    }
    let mut acc = Complex::new(T::one(), T::zero());
    for i in (0..n).rev() {
        out[i] = out[i] * acc;
        acc = acc * factors[i];
    }
}

impl<T: Real> CompiledPoly<T> {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn lattice(&self) -> &TruncatedLattice {
        &self.lattice
    }

    pub fn evaluate(&self, u: &[Complex<T>]) -> T {
        let mut s = T::zero();
        for m in &self.monos {
            let v = m.coef * product(u, &m.hol, false) * product(u, &m.anti, true);
            s = s + v.re;
        }
        s
    }

    /// `(∇P)_j = 2 ∂P/∂conj(u_j)` accumulated into `out` (overwritten).
    pub fn gradient_into(&self, u: &[Complex<T>], out: &mut [Complex<T>]) {
        for z in out.iter_mut() {
            *z = czero();
        }
        let two = T::from_f64(2.0);
        let mut fac = Vec::new();
        let mut loo = Vec::new();
        for m in &self.monos {
            let h = cscale(m.coef * product(u, &m.hol, false), two);
            fac.clear();
            fac.extend(m.anti.iter().map(|&i| u[i as usize].conj()));
            leave_one_out(&fac, &mut loo);
            for (pos, &j) in m.anti.iter().enumerate() {
                out[j as usize] = out[j as usize] + h * loo[pos];
            }
        }
    }

    pub fn gradient(&self, u: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut out = vec![czero(); u.len()];
        self.gradient_into(u, &mut out);
        out
    }

    /// Directional derivative `d(∇P)(u)[w]`, written into `out`.
    pub fn gradient_tangent_into(&self, u: &[Complex<T>], w: &[Complex<T>], out: &mut [Complex<T>]) {
        for z in out.iter_mut() {
            *z = czero();
        }
        let two = T::from_f64(2.0);
        let mut hol_f = Vec::new();
        let mut hol_loo = Vec::new();
        let mut anti_f = Vec::new();
        for m in &self.monos {
            hol_f.clear();
            hol_f.extend(m.hol.iter().map(|&i| u[i as usize]));
            leave_one_out(&hol_f, &mut hol_loo);
            let h: Complex<T> = hol_f.iter().fold(Complex::new(T::one(), T::zero()), |a, b| a * *b);
            let mut dh: Complex<T> = czero();
            for (a, &i) in m.hol.iter().enumerate() {
                dh = dh + hol_loo[a] * w[i as usize];
            }
            anti_f.clear();
            anti_f.extend(m.anti.iter().map(|&i| u[i as usize].conj()));
            let na = anti_f.len();
            for i in 0..na {
                // product over anti factors except i, and its derivative
                let mut rest = Complex::new(T::one(), T::zero());
                let mut drest: Complex<T> = czero();
                for b in 0..na {
                    if b == i {
                        continue;
                    }
                    let f = anti_f[b];
                    let df = w[m.anti[b] as usize].conj();
                    drest = drest * f + rest * df;
                    rest = rest * f;
                }
                let v = cscale(m.coef * (dh * rest + h * drest), two);
                let j = m.anti[i] as usize;
                out[j] = out[j] + v;
            }
        }
    }
}

/// `P(u)`.
pub fn evaluate<T: Real>(p: &HomPoly<T>, u: &FourierState<T>) -> T {
    p.compile(&u.lattice).evaluate(&u.amps)
}

/// `∇P(u)` with `(∇P)_k = 2 ∂P/∂conj(u_k)`.
pub fn gradient<T: Real>(p: &HomPoly<T>, u: &FourierState<T>) -> FourierState<T> {
    let c = p.compile(&u.lattice);
    FourierState {
        lattice: u.lattice,
        amps: c.gradient(&u.amps),
    }
}

/// `(f, g)_{L^2} = Re Σ f_k conj(g_k)`.
pub fn real_inner<T: Real>(f: &[Complex<T>], g: &[Complex<T>]) -> T {
    f.iter()
        .zip(g)
        .fold(T::zero(), |acc, (a, b)| acc + a.re * b.re + a.im * b.im)
}

/// `{P, Q}(u) = (i∇P(u), ∇Q(u))_{L^2}` evaluated directly from gradients.
pub fn bracket_at<T: Real>(p: &HomPoly<T>, q: &HomPoly<T>, u: &FourierState<T>) -> T {
    let gp = gradient(p, u);
    let gq = gradient(q, u);
    let igp: Vec<Complex<T>> = gp.amps.iter().map(|z| Complex::new(-z.im, z.re)).collect();
    real_inner(&igp, &gq.amps)
}

type MonoKey = (Vec<u32>, Vec<u32>);

fn remove_one(v: &[u32], m: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(v.len().saturating_sub(1));
    let mut removed = false;
    for &x in v {
        if !removed && x == m {
            removed = true;
        } else {
            out.push(x);
        }
    }
    out
}

fn merge_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Distinct entries of a sorted list with their multiplicities.
fn runs(v: &[u32]) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = Vec::new();
    for &x in v {
        match out.last_mut() {
            Some((y, c)) if *y == x => *c += 1,
            _ => out.push((x, 1)),
        }
    }
    out
}

const BRACKET_CHUNK: usize = 256;

/// `{P, Q} = (i∇P, ∇Q)_{L^2}` as a polynomial of half-degree `q + q' - 1`,
/// with the default budget.
pub fn poisson_bracket<T: Real>(p: &HomPoly<T>, q: &HomPoly<T>) -> Result<HomPoly<T>> {
    poisson_bracket_with(p, q, Budget::default())
}

/// Poisson bracket with an explicit orbit budget.
///
/// At monomial level `{P, Q} = 2i Σ_m (∂_{ū_m}P ∂_{u_m}Q - ∂_{u_m}P ∂_{ū_m}Q)`.
/// Only modes carried by `P` or `Q` can appear, so the result stays inside
/// their common box. The work is split into fixed-size chunks of `P`'s
/// monomials and merged in chunk order, so the result does not depend on the
/// thread count.
pub fn poisson_bracket_with<T: Real>(
    p: &HomPoly<T>,
    q: &HomPoly<T>,
    budget: Budget,
) -> Result<HomPoly<T>> {
    if p.d != q.d {
        return invalid("bracket of polynomials in different dimensions");
    }
    let d = p.d;
    let qq = p.q + q.q - 1;
    if p.is_empty() || q.is_empty() {
        return Ok(HomPoly::zero(d, qq));
    }
    let extent = p.extent().max(q.extent()).max(1);
    let lat = TruncatedLattice::new(d, extent)?;
    let pm = p.compile(&lat).monos;
    let qm = q.compile(&lat).monos;

    let mut hol_index: HashMap<u32, Vec<(usize, u32)>> = HashMap::new();
    let mut anti_index: HashMap<u32, Vec<(usize, u32)>> = HashMap::new();
    for (i, m) in qm.iter().enumerate() {
        for (x, c) in runs(&m.hol) {
            hol_index.entry(x).or_default().push((i, c));
        }
        for (x, c) in runs(&m.anti) {
            anti_index.entry(x).or_default().push((i, c));
        }
    }

    let two = T::from_f64(2.0);
    let bracket_chunk = |chunk: &[Monomial<T>]| {
        let mut local: HashMap<MonoKey, Complex<T>> = HashMap::new();
        let mut add = |key: MonoKey, v: Complex<T>| {
            if key.0 <= key.1 {
                let e = local.entry(key).or_insert_with(czero);
                *e = *e + v;
            }
        };
        for a in chunk {
            for (m, mult_b) in runs(&a.anti) {
                if let Some(list) = hol_index.get(&m) {
                    let anti_rest = remove_one(&a.anti, m);
                    for &(qi, mult_c) in list {
                        let b = &qm[qi];
                        let w = T::from_f64((mult_b * mult_c) as f64) * two;
                        let pq = a.coef * b.coef;
                        // 2i * w * p * q
                        let v = Complex::new(-pq.im * w, pq.re * w);
                        let key = (
                            merge_sorted(&a.hol, &remove_one(&b.hol, m)),
                            merge_sorted(&anti_rest, &b.anti),
                        );
                        add(key, v);
                    }
                }
            }
            for (m, mult_a) in runs(&a.hol) {
                if let Some(list) = anti_index.get(&m) {
                    let hol_rest = remove_one(&a.hol, m);
                    for &(qi, mult_d) in list {
                        let b = &qm[qi];
                        let w = T::from_f64((mult_a * mult_d) as f64) * two;
                        let pq = a.coef * b.coef;
                        // -2i * w * p * q
                        let v = Complex::new(pq.im * w, -pq.re * w);
                        let key = (
                            merge_sorted(&hol_rest, &b.hol),
                            merge_sorted(&a.anti, &remove_one(&b.anti, m)),
                        );
                        add(key, v);
                    }
                }
            }
        }
        local
    };

    let mut total: HashMap<MonoKey, Complex<T>> = HashMap::new();
    let batch = BRACKET_CHUNK * 4 * rayon::current_num_threads().max(1);
    for group in pm.chunks(batch) {
        let chunks: Vec<HashMap<MonoKey, Complex<T>>> = group.par_chunks(BRACKET_CHUNK).map(bracket_chunk).collect();
        for chunk in chunks {
            for (k, v) in chunk {
                let e = total.entry(k).or_insert_with(czero);
                *e = *e + v;
            }
            budget.check(total.len())?;
        }
    }

    let mut map = BTreeMap::new();
    for ((h, a), s) in total {
        let hk: Vec<ModeIndex> = h.iter().map(|&i| lat.mode(i as usize)).collect();
        let ak: Vec<ModeIndex> = a.iter().map(|&i| lat.mode(i as usize)).collect();
        let w = multinomial::<T, _>(&hk) * multinomial::<T, _>(&ak);
        map.insert(IndexPair { k: hk, l: ak }, Complex::new(s.re / w, s.im / w));
    }
    Ok(HomPoly::from_canonical(d, qq, map))
}

/// Weights `g_k` of a diagonal quadratic form `Z(u) = Σ g_k |u_k|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalQuadratic<T: Real = f64> {
    pub lattice: TruncatedLattice,
    pub weights: Vec<T>,
}

impl<T: Real> DiagonalQuadratic<T> {
    pub fn new(lattice: TruncatedLattice, weights: Vec<T>) -> Result<Self> {
        if weights.len() != lattice.len() {
            return invalid("one weight per box mode is required");
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("diagonal weights".into()));
        }
        Ok(DiagonalQuadratic { lattice, weights })
    }

    /// `Z_2` with `g_k = ω_k`, formed in precision `T`.
    pub fn from_frequencies(freqs: &FrequencyTable) -> Self {
        let lattice = freqs.lattice;
        DiagonalQuadratic {
            lattice,
            weights: lattice.modes().map(|k| freqs.omega_t::<T>(&k)).collect(),
        }
    }

    pub fn from_f64(lattice: TruncatedLattice, weights: &[f64]) -> Result<Self> {
        Self::new(lattice, weights.iter().map(|&w| T::from_f64(w)).collect())
    }

    pub fn weight(&self, k: &ModeIndex) -> Option<T> {
        self.lattice.index_of(k).map(|i| self.weights[i])
    }

    pub fn evaluate(&self, u: &FourierState<T>) -> T {
        self.weights
            .iter()
            .zip(&u.amps)
            .fold(T::zero(), |acc, (w, z)| acc + *w * (z.re * z.re + z.im * z.im))
    }

    /// `Σ g_{k_j} - Σ g_{l_j}`, summed as differences of sorted weights so that
    /// equal weight multisets give exactly zero.
    pub fn weight_gap(&self, k: &[ModeIndex], l: &[ModeIndex]) -> Result<T> {
        let lookup = |m: &ModeIndex| {
            self.weight(m)
                .ok_or_else(|| Error::InvalidInput(format!("mode {m:?} has no weight")))
        };
        let mut gk = k.iter().map(lookup).collect::<Result<Vec<T>>>()?;
        let mut gl = l.iter().map(lookup).collect::<Result<Vec<T>>>()?;
        let ord = |a: &T, b: &T| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
        gk.sort_by(ord);
        gl.sort_by(ord);
        Ok(gk
            .iter()
            .zip(&gl)
            .fold(T::zero(), |acc, (a, b)| acc + (*a - *b)))
    }
}

/// `{P, Z}` for diagonal `Z`: the coefficient at `(k, l)` is multiplied by
/// `-2i (Σ g_{k_j} - Σ g_{l_j})`.
pub fn bracket_with_diagonal<T: Real>(p: &HomPoly<T>, z: &DiagonalQuadratic<T>) -> Result<HomPoly<T>> {
    let mut map = BTreeMap::new();
    let two = T::from_f64(2.0);
    for (pair, c) in &p.coeffs {
        let g = z.weight_gap(&pair.k, &pair.l)? * two;
        // c * (-2i g)
        map.insert(pair.clone(), Complex::new(c.im * g, -c.re * g));
    }
    Ok(HomPoly::from_canonical(p.d, p.q, map))
}

/// Split by `|Ω(k, l)| < ν` (resonant) versus `|Ω| >= ν`.
pub fn resonant_split<T: Real>(
    p: &HomPoly<T>,
    omega: &FrequencyTable,
    nu: f64,
) -> Result<(HomPoly<T>, HomPoly<T>)> {
    if !(nu > 0.0) {
        return invalid("resonance threshold must be positive");
    }
    let res = p.filter(|pair, _| 2.0 * omega.signed_gap::<f64>(&pair.k, &pair.l).abs() < nu);
    let non = p.filter(|pair, _| 2.0 * omega.signed_gap::<f64>(&pair.k, &pair.l).abs() >= nu);
    Ok((res, non))
}

/// Split by `μ_2(k, l) < N` (low) versus `μ_2 >= N` (high).
pub fn mu2_split<T: Real>(p: &HomPoly<T>, n_cut: u64) -> Result<(HomPoly<T>, HomPoly<T>)> {
    let log2_n = crate::lattice::check_power_of_two(n_cut)?;
    let is_low = |pair: &IndexPair| {
        let (_, m2) = mu12_squared(&pair.k, &pair.l);
        2 * log2_n >= 63 || m2 < 1i64 << (2 * log2_n)
    };
    Ok((p.filter(|pair, _| is_low(pair)), p.filter(|pair, _| !is_low(pair))))
}

/// Serialized form of one orbit coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub q: usize,
    pub k: Vec<Vec<i32>>,
    pub l: Vec<Vec<i32>>,
    pub re: f64,
    pub im: f64,
}

impl HomPoly<f64> {
    pub fn orbit_records(&self) -> Vec<OrbitRecord> {
        self.coeffs
            .iter()
            .map(|(p, c)| OrbitRecord {
                q: self.q,
                k: p.k.iter().map(|m| m.components(self.d).to_vec()).collect(),
                l: p.l.iter().map(|m| m.components(self.d).to_vec()).collect(),
                re: c.re,
                im: c.im,
            })
            .collect()
    }

    pub fn from_orbit_records(d: usize, q: usize, records: Vec<OrbitRecord>) -> Result<Self> {
        let mut raw = Vec::with_capacity(records.len());
        for o in records {
            if o.q != q {
                return Err(Error::Format(format!("orbit of half-degree {} in a q={q} dump", o.q)));
            }
            let conv = |v: Vec<Vec<i32>>| -> Result<Vec<ModeIndex>> {
                v.into_iter()
                    .map(|c| {
                        if c.len() != d {
                            Err(Error::Format(format!("mode with {} components, expected {d}", c.len())))
                        } else {
                            Ok(ModeIndex::new(&c))
                        }
                    })
                    .collect()
            };
            raw.push(((conv(o.k)?, conv(o.l)?), Complex::new(o.re, o.im)));
        }
        make_poly(d, q, raw)
    }

    /// One JSON object per orbit: `{q, k, l, re, im}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for line in self.orbit_records() {
            serde_json::to_writer(&mut w, &line).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Inverse of [`HomPoly::write_jsonl`]; lines starting with `#` are skipped.
    pub fn read_jsonl<R: BufRead>(r: R, d: usize, q: usize) -> Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            records.push(serde_json::from_str(t).map_err(|e| Error::Format(e.to_string()))?);
        }
        Self::from_orbit_records(d, q, records)
    }
}

/// True when every orbit of `p` is zero-momentum (a structural invariant that
/// this checks independently of construction).
pub fn is_momentum_conserving<T: Real>(p: &HomPoly<T>) -> bool {
    p.iter().all(|(pair, _)| momentum(&pair.k) == momentum(&pair.l))
}
