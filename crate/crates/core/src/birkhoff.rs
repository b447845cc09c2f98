//! Birkhoff normal form of `H = Z_2 + P`: staged cohomological solves, Lie
//! transforms, the changes of variables `τ^(0)`, `τ^(1)` and the planner
//! turning an initial size `ε` into `(r, N, ν, ρ, T_ε)`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::FourierState;
use crate::lieflow::{epsilon_chi, lie_transform_with_z2, DiscardLedger, Flow, FlowConfig, LieSeriesBudget};
use crate::polyalg::{
    bracket_with_diagonal, evaluate, resonant_split, Budget, DiagonalQuadratic, HomPoly, OrbitRecord,
};
use crate::potential::FrequencyTable;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPlan {
    /// Initial `H^{s0}` size; absent for plans built at a fixed order.
    pub eps: Option<f64>,
    pub s0: f64,
    pub d: usize,
    pub p: usize,
    pub sigma: f64,
    pub r: usize,
    /// `[|log ε|/(4 log|log ε|), |log ε|/(3 log|log ε|)]`.
    pub r_window: Option<(f64, f64)>,
    pub eta: f64,
    /// `N = 2^log2_n`.
    pub log2_n: u32,
    pub nu: f64,
    pub gamma_tilde: f64,
    /// Radius constant `C` in `ρ = √ν/(C r)`; calibrated by the normal form
    /// when absent.
    pub c_const: Option<f64>,
    pub rho: Option<f64>,
    pub ln_t_eps: Option<f64>,
    pub t_eps: Option<f64>,
    pub warnings: Vec<String>,
}

/// `ν = γ̃ r^{-4} (log_2(2 r N))^{-(2r+1)}`.
pub fn nu_formula(gamma_tilde: f64, r: usize, log2_n: u32) -> f64 {
    let rf = r as f64;
    let l = (2.0 * rf).log2() + log2_n as f64;
    gamma_tilde * rf.powi(-4) * l.powf(-(2.0 * rf + 1.0))
}

/// `T_ε = exp(|log ε|^2 / (4 log|log ε|))`, returned as its logarithm.
pub fn ln_stability_time(eps: f64) -> f64 {
    let l = -eps.ln();
    l * l / (4.0 * l.ln())
}

/// `(Σ_{k ∈ Z^d} <k>^{-2s})^{1/2}` with an integral tail beyond the summed box.
pub fn sobolev_constant_full(d: usize, s: f64) -> Result<f64> {
    if !(1..=3).contains(&d) || !(s > d as f64 / 2.0) {
        return invalid(format!("the sum over Z^{d} needs s > d/2, got s = {s}"));
    }
    let r: i64 = match d {
        1 => 200_000,
        2 => 600,
        _ => 60,
    };
    let range = -r..=r;
    let mut sum = 0.0;
    match d {
        1 => {
            for a in range {
                sum += (1.0 + (a * a) as f64).powf(-s);
            }
        }
        2 => {
            for a in range.clone() {
                for b in range.clone() {
                    sum += (1.0 + (a * a + b * b) as f64).powf(-s);
                }
            }
        }
        _ => {
            for a in range.clone() {
                for b in range.clone() {
                    for c in range.clone() {
                        sum += (1.0 + (a * a + b * b + c * c) as f64).powf(-s);
                    }
                }
            }
        }
    }
    // the sup-norm box contains the ball of radius r
    let area = match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    };
    let df = d as f64;
    sum += area * (r as f64 + 0.5).powf(df - 2.0 * s) / (2.0 * s - df);
    Ok(sum.sqrt())
}

impl ParameterPlan {
    /// Plan for a prescribed order and cut-off, using the same `ν` formula.
    pub fn at_order(r: usize, log2_n: u32, gamma_emp: f64, s0: f64, d: usize, p: usize) -> Result<Self> {
        if r < 2 {
            return invalid(format!("normal form order must be at least 2, got {r}"));
        }
        if !(gamma_emp > 0.0) {
            return invalid("non-resonance constant must be positive");
        }
        if !(s0 > d as f64 / 2.0) {
            return invalid(format!("s0 = {s0} must exceed d/2"));
        }
        if p < 1 {
            return invalid("nonlinearity power p must be at least 1");
        }
        let gamma_tilde = gamma_emp.min(1.0);
        Ok(ParameterPlan {
            eps: None,
            s0,
            d,
            p,
            sigma: 1.0,
            r,
            r_window: None,
            eta: (0.5 * (s0 - d as f64 / 2.0)).min(1.0),
            log2_n,
            nu: nu_formula(gamma_tilde, r, log2_n),
            gamma_tilde,
            c_const: None,
            rho: None,
            ln_t_eps: None,
            t_eps: None,
            warnings: Vec::new(),
        })
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    /// Fix `C`, hence `ρ = √ν/(C r)`.
    pub fn with_constant(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return invalid(format!("radius constant must be positive, got {c}"));
        }
        self.c_const = Some(c);
        self.rho = Some(self.nu.sqrt() / (c * self.r as f64));
        Ok(self)
    }

    /// `N` when it fits in 64 bits.
    pub fn n_cut(&self) -> Option<u64> {
        (self.log2_n < 64).then(|| 1u64 << self.log2_n)
    }

    /// Evaluate both radius constraints with unit placeholders for the
    /// unquantified constants; violations become warnings.
    fn check_constraints(&mut self) -> Result<()> {
        let Some(eps) = self.eps else { return Ok(()) };
        let c = self.c_const.unwrap_or(1.0);
        let rho = self.nu.sqrt() / (c * self.r as f64);
        let k0 = sobolev_constant_full(self.d, self.s0)?;
        if !(k0 * eps < rho) {
            self.warnings.push(format!(
                "radius constraint K_s0*eps = {:.3e} >= rho = {rho:.3e} (placeholder constants G = C = 1)",
                k0 * eps
            ));
        }
        let k1 = sobolev_constant_full(self.d, self.d as f64 / 2.0 + self.eta)?;
        if !(4.0 * c * k1 * eps < rho) {
            self.warnings.push(format!(
                "second radius constraint 4*C*K*eps = {:.3e} >= rho = {rho:.3e} (placeholder constants M = G = C = 1)",
                4.0 * c * k1 * eps
            ));
        }
        Ok(())
    }
}

/// Plan derived from the initial size `eps`.
pub fn plan_parameters(eps: f64, s0: f64, d: usize, p: usize, gamma_emp: f64) -> Result<ParameterPlan> {
    let threshold = (-std::f64::consts::E).exp();
    if !(eps > 0.0 && eps < threshold) {
        return invalid(format!("eps = {eps} must lie in (0, e^-e) = (0, {threshold:.6})"));
    }
    let l = -eps.ln();
    let lo = l / (4.0 * l.ln());
    let hi = l / (3.0 * l.ln());
    let r = hi.floor();
    if r < 2.0 {
        return Err(Error::Infeasible(format!(
            "eps = {eps:e} admits r <= {hi:.4}, but the normal form needs r >= 2"
        )));
    }
    let r = r as usize;
    let mut plan = ParameterPlan::at_order(r, 0, gamma_emp, s0, d, p)?;
    plan.eps = Some(eps);
    plan.r_window = Some((lo, hi));
    if (r as f64) < lo {
        plan.warnings.push(format!(
            "r_below_window: no integer in [{lo:.4}, {hi:.4}], using r = {r}"
        ));
    }
    // largest power of two strictly below ε^{-r/η}
    let log2_x = r as f64 / plan.eta * l / std::f64::consts::LN_2;
    let m = log2_x.ceil() - 1.0;
    if m < 0.0 || m > u32::MAX as f64 {
        return Err(Error::Infeasible(format!("cut-off exponent {m} out of range")));
    }
    plan.log2_n = m as u32;
    if plan.log2_n as f64 + 1.0 < log2_x {
        plan.log2_n += 1;
        plan.warnings.push("N widened by one factor of two to meet the lower bracket".into());
    }
    plan.nu = nu_formula(plan.gamma_tilde, r, plan.log2_n);
    let ln_t = ln_stability_time(eps);
    plan.ln_t_eps = Some(ln_t);
    plan.t_eps = Some(ln_t.exp());
    plan.check_constraints()?;
    Ok(plan)
}

/// Generator `χ` and resonant part of `L`: `χ_{kl} = L_{kl}/Ω(k, l)` where
/// `|Ω| >= ν`, so that `{χ, Z_2} + L = L_res`.
pub fn cohomological_solve<T: Real>(
    l: &HomPoly<T>,
    omega: &FrequencyTable,
    nu: f64,
) -> Result<(HomPoly<T>, HomPoly<T>)> {
    let z2 = DiagonalQuadratic::from_frequencies(omega);
    let (chi, res, _) = solve_with(l, &z2, omega, nu)?;
    Ok((chi, res))
}

fn solve_with<T: Real>(
    l: &HomPoly<T>,
    z2: &DiagonalQuadratic<T>,
    omega: &FrequencyTable,
    nu: f64,
) -> Result<(HomPoly<T>, HomPoly<T>, HomPoly<T>)> {
    let (res, non) = resonant_split(l, omega, nu)?;
    let mut failure = None;
    let two = T::from_f64(2.0);
    // Ω = 2i g, so L/Ω = -i L/(2g)
    let chi = non.map_coeffs(|pair, c| match z2.weight_gap(&pair.k, &pair.l) {
        Ok(g) => {
            let g2 = g * two;
            Complex::new(c.im / g2, -c.re / g2)
        }
        Err(e) => {
            failure = Some(e);
            c
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((chi, res, non))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFormOptions {
    pub budget: Budget,
    /// Audit the first omitted term of every truncated Lie series.
    pub audit: bool,
    pub flow: FlowConfig,
}

impl Default for NormalFormOptions {
    fn default() -> Self {
        NormalFormOptions {
            budget: Budget::default(),
            audit: true,
            flow: FlowConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Real> {
    pub chi: HomPoly<T>,
    pub stage: usize,
    pub eps_chi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCertificate {
    pub stage: usize,
    /// `max |{χ, Z_2} + L - L_res|` over coefficients.
    pub identity_residual: f64,
    pub chi_linf: f64,
    /// `ν^{-1} ‖L^(2𝔯+2)‖_{ℓ^∞}`.
    pub chi_bound: f64,
    pub eps_chi: f64,
    pub removed: usize,
    pub kept: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub stages: Vec<StageCertificate>,
    /// Largest `|Ω|` over all final coefficients (0 when there are none).
    pub max_resonant_omega: f64,
    /// `ν - max |Ω|`; positive when every final part is `ν`-resonant.
    pub resonance_margin: f64,
    /// Fitted `C` in `‖L^(2q)‖ ≤ C^{2q} (q^2/ν)^{q-2}`.
    pub l_size_constant: Option<f64>,
}

impl Certificates {
    pub fn resonant(&self) -> bool {
        self.resonance_margin > 0.0
    }
}

#[derive(Clone, Debug)]
pub struct NormalFormResult<T: Real> {
    pub generators: Vec<Generator<T>>,
    /// `resonant_parts[i]` is `L^(2q)` with `q = i + 2`.
    pub resonant_parts: Vec<HomPoly<T>>,
    pub plan: ParameterPlan,
    pub discard_ledger: DiscardLedger,
    pub certificates: Certificates,
    pub z2: DiagonalQuadratic<T>,
    pub nonlinearity: HomPoly<T>,
    pub flow: FlowConfig,
    pub warnings: Vec<String>,
}

/// Fitted `C_q = (‖L‖ / (q^2/ν)^{q-2})^{1/(2q)}`, maximised over nonzero parts.
pub fn fit_l_size_constant<T: Real>(parts: &[HomPoly<T>], nu: f64) -> Option<f64> {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| {
            let q = p.q() as f64;
            let ln = p.linf().to_f64().ln() - (q - 2.0) * (q * q / nu).ln();
            (ln / (2.0 * q)).exp()
        })
        .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))))
}

/// Normal form of `Z_2 + P` up to degree `2r`.
pub fn normal_form<T: Real>(
    omega: &FrequencyTable,
    p: &HomPoly<T>,
    plan: &ParameterPlan,
    opts: &NormalFormOptions,
) -> Result<NormalFormResult<T>> {
    let r = plan.r;
    if r < 2 {
        return invalid("normal form order must be at least 2");
    }
    if !(plan.nu > 0.0) {
        return invalid("resonance threshold must be positive");
    }
    if p.d() != omega.lattice.d {
        return invalid("nonlinearity and frequencies disagree on the dimension");
    }
    opts.flow.validate()?;
    let d = p.d();
    let z2 = DiagonalQuadratic::<T>::from_frequencies(omega);
    let mut parts: Vec<HomPoly<T>> = (2..=r).map(|q| HomPoly::zero(d, q)).collect();
    if p.q() < 2 {
        return invalid("nonlinearity must have degree at least 4");
    }
    let mut ledger = DiscardLedger::default();
    if p.q() <= r {
        parts[p.q() - 2] = p.clone();
    } else if !p.is_empty() {
        ledger.count += 1;
        ledger.max_linf = p.linf().to_f64();
    }
    let mut generators = Vec::new();
    let mut stages = Vec::new();
    for stage in 1..r {
        let q = stage + 1;
        let l = parts[q - 2].clone();
        let (chi, res, non) = solve_with(&l, &z2, omega, plan.nu)?;
        let identity = bracket_with_diagonal(&chi, &z2)?.add(&l)?.max_abs_diff(&res).to_f64();
        let eps_chi = epsilon_chi(&chi);
        stages.push(StageCertificate {
            stage,
            identity_residual: identity,
            chi_linf: chi.linf().to_f64(),
            chi_bound: l.linf().to_f64() / plan.nu,
            eps_chi,
            removed: non.len(),
            kept: res.len(),
        });
        let mut budget = LieSeriesBudget::new(r, stage);
        budget.audit = opts.audit;
        budget.poly = opts.budget;
        // {χ, Z_2} equals -L_nonres exactly by construction of χ
        let w = non.neg();
        let out = lie_transform_with_z2(&parts, Some(&w), &chi, &budget)?;
        parts = out.parts;
        ledger.merge(out.ledger);
        generators.push(Generator { chi, stage, eps_chi });
    }

    let mut warnings = plan.warnings.clone();
    let mut plan = plan.clone();
    let first = generators.iter().find(|g| g.eps_chi.is_finite());
    if plan.c_const.is_none() {
        let c = match first {
            Some(g) => 14.0 * plan.nu.sqrt() / (r as f64 * g.eps_chi),
            None => 1.0,
        };
        plan = plan.with_constant(c)?;
    }
    let rho = plan.rho.expect("radius set above");
    for g in &generators {
        if g.eps_chi < 2.0 * rho {
            warnings.push(format!(
                "stage {}: eps_chi = {:.3e} is below twice the working radius {rho:.3e}",
                g.stage, g.eps_chi
            ));
        }
    }

    let mut max_omega: f64 = 0.0;
    for part in &parts {
        for (pair, _) in part.iter() {
            max_omega = max_omega.max(2.0 * omega.signed_gap::<f64>(&pair.k, &pair.l).abs());
        }
    }
    let certificates = Certificates {
        stages,
        max_resonant_omega: max_omega,
        resonance_margin: plan.nu - max_omega,
        l_size_constant: fit_l_size_constant(&parts, plan.nu),
    };
    Ok(NormalFormResult {
        generators,
        resonant_parts: parts,
        plan,
        discard_ledger: ledger,
        certificates,
        z2,
        nonlinearity: p.clone(),
        flow: opts.flow,
        warnings,
    })
}

impl<T: Real> NormalFormResult<T> {
    pub fn rho(&self) -> f64 {
        self.plan.rho.unwrap_or(f64::INFINITY)
    }

    pub fn resonant_part(&self, q: usize) -> Option<&HomPoly<T>> {
        q.checked_sub(2).and_then(|i| self.resonant_parts.get(i))
    }

    fn check_radius(&self, u: &FourierState<T>, radius: f64) -> Result<()> {
        let n = u.l1().to_f64();
        if !(n < radius) {
            return Err(Error::NormEscape { norm: n, radius });
        }
        Ok(())
    }

    fn compose(&self, u: &FourierState<T>, forward: bool) -> Result<(FourierState<T>, Vec<Complex<T>>)> {
        let zero = Complex::new(T::zero(), T::zero());
        let mut total = vec![zero; u.amps.len()];
        let mut cur = u.clone();
        let order: Vec<&Generator<T>> = if forward {
            self.generators.iter().rev().collect()
        } else {
            self.generators.iter().collect()
        };
        let cfg = FlowConfig {
            t_final: if forward { 1.0 } else { -1.0 },
            ..self.flow
        };
        for g in order {
            if g.chi.is_empty() {
                continue;
            }
            let delta = Flow::new(&g.chi, &u.lattice).displacement(&cur, &cfg)?;
            for i in 0..total.len() {
                total[i] = total[i] + delta[i];
                cur.amps[i] = u.amps[i] + total[i];
            }
        }
        Ok((cur, total))
    }

    /// `τ^(1) = Φ_{χ_1} ∘ … ∘ Φ_{χ_{r-1}}` at time 1.
    pub fn apply_tau1(&self, v: &FourierState<T>) -> Result<FourierState<T>> {
        self.check_radius(v, 2.0 * self.rho())?;
        Ok(self.compose(v, true)?.0)
    }

    /// `τ^(1)(v) - v`, accumulated without forming `τ^(1)(v)` first.
    pub fn tau1_displacement(&self, v: &FourierState<T>) -> Result<Vec<Complex<T>>> {
        self.check_radius(v, 2.0 * self.rho())?;
        Ok(self.compose(v, true)?.1)
    }

    /// `τ^(0)`: time `-1` flows, first generator first.
    pub fn apply_tau0(&self, u: &FourierState<T>) -> Result<FourierState<T>> {
        self.check_radius(u, self.rho())?;
        Ok(self.compose(u, false)?.0)
    }

    /// `Z_2(v) + Σ_q L^(2q)(v)`.
    pub fn normal_form_value(&self, v: &FourierState<T>) -> T {
        self.resonant_parts
            .iter()
            .fold(self.z2.evaluate(v), |acc, l| acc + evaluate(l, v))
    }

    /// `H(τ^(1)(v)) - Z_2(v) - Σ_q L^(2q)(v)`, with the quadratic part
    /// differenced analytically so that no `O(|v|^2)` cancellation occurs.
    pub fn residual(&self, v: &FourierState<T>) -> Result<T> {
        let delta = self.tau1_displacement(v)?;
        let two = T::from_f64(2.0);
        let mut dz = T::zero();
        for ((w, a), b) in self.z2.weights.iter().zip(&v.amps).zip(&delta) {
            let cross = a.re * b.re + a.im * b.im;
            dz = dz + *w * (two * cross + b.re * b.re + b.im * b.im);
        }
        let u = FourierState::from_amplitudes(
            v.lattice,
            v.amps.iter().zip(&delta).map(|(a, b)| a + b).collect(),
        )?;
        let mut rest = evaluate(&self.nonlinearity, &u);
        for l in &self.resonant_parts {
            rest = rest - evaluate(l, v);
        }
        Ok(dz + rest)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDump {
    pub stage: usize,
    pub eps_chi: f64,
    pub orbits: Vec<OrbitRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartDump {
    pub q: usize,
    pub orbits: Vec<OrbitRecord>,
}

/// JSON form of a normal form; coefficients are rounded to `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFormDump {
    pub d: usize,
    pub plan: ParameterPlan,
    pub generators: Vec<GeneratorDump>,
    pub resonant_parts: Vec<PartDump>,
    pub discard_ledger: DiscardLedger,
    pub certificates: Certificates,
    pub warnings: Vec<String>,
}

impl<T: Real> NormalFormResult<T> {
    pub fn dump(&self) -> NormalFormDump {
        NormalFormDump {
            d: self.nonlinearity.d(),
            plan: self.plan.clone(),
            generators: self
                .generators
                .iter()
                .map(|g| GeneratorDump {
                    stage: g.stage,
                    eps_chi: g.eps_chi,
                    orbits: g.chi.convert::<f64>().orbit_records(),
                })
                .collect(),
            resonant_parts: self
                .resonant_parts
                .iter()
                .map(|l| PartDump {
                    q: l.q(),
                    orbits: l.convert::<f64>().orbit_records(),
                })
                .collect(),
            discard_ledger: self.discard_ledger.clone(),
            certificates: self.certificates.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

impl NormalFormDump {
    pub fn generator_polys(&self) -> Result<Vec<HomPoly<f64>>> {
        self.generators
            .iter()
            .map(|g| HomPoly::from_orbit_records(self.d, g.stage + 1, g.orbits.clone()))
            .collect()
    }

    pub fn resonant_polys(&self) -> Result<Vec<HomPoly<f64>>> {
        self.resonant_parts
            .iter()
            .map(|p| HomPoly::from_orbit_records(self.d, p.q, p.orbits.clone()))
            .collect()
    }
}
