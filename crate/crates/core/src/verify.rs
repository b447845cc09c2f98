//! Property suites run by the command-line `verify` command.
//!
//! Each suite draws its own random inputs from the configured seed and
//! reports the worst observed metric against a fixed tolerance. A fault can be
//! injected into the bracket to confirm that the suites detect it.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::birkhoff::{cohomological_solve, normal_form, plan_parameters, NormalFormOptions, ParameterPlan};
use crate::error::Result;
use crate::lattice::{FourierState, TruncatedLattice};
use crate::lieflow::{epsilon_chi, Flow, FlowConfig};
use crate::polyalg::{
    bracket_at, bracket_with_diagonal, evaluate, gradient, nls_nonlinearity, poisson_bracket, random_poly,
    real_inner, Budget, DiagonalQuadratic, HomPoly,
};
use crate::potential::{frequencies, sample_potential};
use crate::resonance::{gamma_empirical, satisfies_removal, zero_momentum_orbits};
use crate::simulator::{hamiltonian_spectral, simulate, SimConfig, Simulator};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    /// Negate every Poisson bracket produced inside the suites.
    pub flip_bracket_sign: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Random cases per suite.
    pub cases: usize,
    pub fault: Fault,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            cases: 10,
            fault: Fault::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the suite's metric.
    pub metric: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

fn report(name: &str, metric: f64, tolerance: f64, detail: impl Into<String>) -> SuiteReport {
    SuiteReport {
        name: name.into(),
        passed: metric <= tolerance,
        metric,
        tolerance,
        detail: detail.into(),
    }
}

fn bracket(p: &HomPoly, q: &HomPoly, fault: Fault) -> Result<HomPoly> {
    let b = poisson_bracket(p, q)?;
    Ok(if fault.flip_bracket_sign { b.neg() } else { b })
}

fn random_state(lat: TruncatedLattice, l1: f64, rng: &mut ChaCha8Rng) -> FourierState {
    let amps: Vec<Complex<f64>> = (0..lat.len())
        .map(|_| Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let u = FourierState::from_amplitudes(lat, amps).expect("finite amplitudes");
    let s = l1 / u.l1();
    u.scaled(s)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// `evaluate({P, Q}, u)` against `(i∇P(u), ∇Q(u))`.
pub fn suite_bracket_oracle(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lat = TruncatedLattice::new(1, 2)?;
    let mut worst: f64 = 0.0;
    for c in 0..cfg.cases {
        let p = random_poly(&lat, 2 + c % 2, 0.7, &mut rng);
        let q = random_poly(&lat, 2 + (c / 2) % 2, 0.7, &mut rng);
        let b = bracket(&p, &q, cfg.fault)?;
        for _ in 0..10 {
            let u = random_state(lat, 1.0, &mut rng);
            let a = evaluate(&b, &u);
            let o = bracket_at(&p, &q, &u);
            let scale = real_inner(&gradient(&p, &u).amps, &gradient(&p, &u).amps).sqrt()
                * real_inner(&gradient(&q, &u).amps, &gradient(&q, &u).amps).sqrt();
            worst = worst.max((a - o).abs() / scale.max(1e-300));
        }
    }
    Ok(report("bracket_oracle", worst, 1e-10, "relative to |∇P||∇Q|"))
}

/// `‖{P, Q}‖_∞ ≤ 4 q q' ‖P‖_∞ ‖Q‖_∞`.
pub fn suite_bracket_bound(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let lat = TruncatedLattice::new(1, 2)?;
    let mut worst: f64 = 0.0;
    for c in 0..cfg.cases {
        let p = random_poly(&lat, 2 + c % 2, 0.7, &mut rng);
        let q = random_poly(&lat, 2 + (c / 2) % 2, 0.7, &mut rng);
        let b = bracket(&p, &q, cfg.fault)?;
        let bound = 4.0 * (p.q() * q.q()) as f64 * p.linf() * q.linf();
        if bound > 0.0 {
            worst = worst.max(b.linf() / bound);
        }
    }
    Ok(report("bracket_bound", worst, 1.0, "ratio to 4qq'|P||Q|"))
}

/// Gradient against central differences of `evaluate`.
pub fn suite_gradient(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let lat = TruncatedLattice::new(1, 2)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for c in 0..cfg.cases {
        let p = random_poly(&lat, 2 + c % 2, 0.7, &mut rng);
        let u = random_state(lat, 1.0, &mut rng);
        let g = gradient(&p, &u);
        let mut err = 0.0;
        let mut size = 0.0;
        for i in 0..lat.len() {
            for dir in [Complex::new(1.0, 0.0), Complex::new(0.0, 1.0)] {
                let mut up = u.clone();
                let mut dn = u.clone();
                up.amps[i] += dir * h;
                dn.amps[i] -= dir * h;
                let fd = (evaluate(&p, &up) - evaluate(&p, &dn)) / (2.0 * h);
                let an = g.amps[i].re * dir.re + g.amps[i].im * dir.im;
                err += (fd - an).powi(2);
                size += an * an;
            }
        }
        worst = worst.max((err / size.max(1e-300)).sqrt());
    }
    Ok(report("gradient_fd", worst, 1e-6, "relative l2 error"))
}

/// Reversibility, conservation, closeness and symplecticity of RK4 flows.
pub fn suite_flow(cfg: &VerifyConfig) -> Result<Vec<SuiteReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let lat = TruncatedLattice::new(1, 2)?;
    let (mut rev, mut cons, mut close, mut symp): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..cfg.cases {
        let chi = random_poly(&lat, 2 + c % 2, 0.7, &mut rng);
        let eps = epsilon_chi(&chi);
        let flow = Flow::new(&chi, &lat);
        let u = random_state(lat, 0.5 * eps, &mut rng);
        let t = 0.25 + 0.75 * rng.random::<f64>();
        let fwd = flow.apply(&u, &FlowConfig::at(t))?;
        let back = flow.apply(&fwd, &FlowConfig::at(-t))?;
        rev = rev.max(back.l1_distance(&u));
        let c0 = evaluate(&chi, &u);
        cons = cons.max((evaluate(&chi, &fwd) - c0).abs() / (1.0 + c0.abs()));
        let n = u.l1();
        let bound = (n / eps).powi(2 * chi.q() as i32 - 2) * n;
        close = close.max(fwd.l1_distance(&u) - bound);
        let v = random_state(lat, 1.0, &mut rng);
        let w = random_state(lat, 1.0, &mut rng);
        let cfgt = FlowConfig::at(t);
        let (_, dv) = flow.apply_tangent(&u, &v, &cfgt)?;
        let (_, dw) = flow.apply_tangent(&u, &w, &cfgt)?;
        let form = |a: &FourierState, b: &FourierState| {
            let ia: Vec<Complex<f64>> = a.amps.iter().map(|z| Complex::new(-z.im, z.re)).collect();
            real_inner(&ia, &b.amps)
        };
        symp = symp.max((form(&dv, &dw) - form(&v, &w)).abs());
    }
    Ok(vec![
        report("flow_reversibility", rev, 1e-8, "l1 distance after t then -t"),
        report("flow_conservation", cons, 1e-9, "|Δχ|/(1+|χ|)"),
        report("flow_closeness", close, 1e-6, "excess over (|u|/ε_χ)^{2q-2}|u|"),
        report("flow_symplectic", symp, 1e-8, "change of (iv, w)"),
    ])
}

/// `{χ, Z_2} + L = L_res` coefficient-wise.
pub fn suite_cohomological(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4));
    let lat = TruncatedLattice::new(1, 4)?;
    let f = frequencies(&sample_potential(cfg.seed, lat.n_max), &lat)?;
    let z2 = DiagonalQuadratic::<f64>::from_frequencies(&f);
    let mut worst: f64 = 0.0;
    for c in 0..cfg.cases {
        let l = random_poly(&lat, 2 + c % 2, 0.7, &mut rng);
        let nu = 10f64.powf(-3.0 * (c as f64 + 0.5) / cfg.cases as f64);
        let (chi, res) = cohomological_solve(&l, &f, nu)?;
        let mut b = bracket_with_diagonal(&chi, &z2)?;
        if cfg.fault.flip_bracket_sign {
            b = b.neg();
        }
        worst = worst.max(b.add(&l)?.max_abs_diff(&res));
    }
    Ok(report("cohomological_identity", worst, 1e-12, "max coefficient residual"))
}

/// Pairs with equal block multisets have potential-independent divisors.
pub fn suite_small_divisor(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let lat = TruncatedLattice::new(1, 8)?;
    let zero = frequencies(&crate::potential::BlockPotential::zero(lat.n_max), &lat)?;
    let mut worst: f64 = 0.0;
    let mut gamma_min = f64::INFINITY;
    for s in 0..cfg.cases.max(2) as u64 {
        let v = sample_potential(cfg.seed.wrapping_add(s), lat.n_max);
        let f = frequencies(&v, &lat)?;
        for pair in zero_momentum_orbits(&lat, 2) {
            if !satisfies_removal(&pair) {
                let a = f.signed_gap::<f64>(&pair.k, &pair.l);
                let b = zero.signed_gap::<f64>(&pair.k, &pair.l);
                worst = worst.max((a - b).abs());
            }
        }
        gamma_min = gamma_min.min(gamma_empirical(&v, &lat, 2)?);
    }
    let mut r = report("small_divisor_cancellation", worst, 0.0, format!("min gamma_emp {gamma_min:.3e}"));
    r.passed &= gamma_min > 0.0;
    Ok(r)
}

/// Mass conservation and agreement of the two Hamiltonian evaluations.
pub fn suite_simulator(cfg: &VerifyConfig) -> Result<Vec<SuiteReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(5));
    let lat = TruncatedLattice::new(1, 8)?;
    let v = sample_potential(cfg.seed, lat.n_max);
    let sc = SimConfig::new(lat, v, 1, 1.0, 1e-3, 1.0);
    let u0 = random_state(lat, 2.0, &mut rng);
    let rec = simulate(&u0, &sc)?;
    let m0 = rec.samples[0].mass;
    let drift = rec
        .samples
        .iter()
        .map(|s| (s.mass - m0).abs() / m0)
        .fold(0.0, f64::max);
    let mut sim = Simulator::new(sc.clone())?;
    let poly = nls_nonlinearity::<f64>(&lat, 1, 1.0, Budget::default())?;
    let z2 = hamiltonian_spectral(&u0, &sim.freqs, &HomPoly::zero(1, 2));
    let a = sim.hamiltonian(&u0) - z2;
    let b = evaluate(&poly, &u0);
    Ok(vec![
        report("simulator_mass", drift, 1e-10, "relative mass drift over unit time"),
        report("simulator_hamiltonian_routes", rel(a, b), 1e-8, "nonlinear energy, quadrature vs polynomial"),
    ])
}

/// Planner arithmetic at `ε = 1e-12` and infeasibility at `1e-3`.
pub fn suite_planner(_cfg: &VerifyConfig) -> Result<SuiteReport> {
    let plan = plan_parameters(1e-12, 1.0, 1, 1, 1.0)?;
    let l = 12.0 * std::f64::consts::LN_10;
    let lo = l / (4.0 * l.ln());
    let hi = l / (3.0 * l.ln());
    let (plo, phi) = plan.r_window.unwrap_or((f64::NAN, f64::NAN));
    let err = rel(plo, lo).max(rel(phi, hi)).max(rel(plan.eta, 0.25)).max(rel(
        plan.ln_t_eps.unwrap_or(f64::NAN),
        l * l / (4.0 * l.ln()),
    ));
    let infeasible = plan_parameters(1e-3, 1.0, 1, 1, 1.0).is_err();
    let mut r = report("planner", err, 1e-12, format!("r = {}, infeasible at 1e-3: {infeasible}", plan.r));
    r.passed &= infeasible && plan.r == 2;
    Ok(r)
}

/// Resonance certificate of a small normal form.
pub fn suite_normal_form(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let lat = TruncatedLattice::new(1, 4)?;
    let v = sample_potential(cfg.seed, lat.n_max);
    let f = frequencies(&v, &lat)?;
    let gamma = gamma_empirical(&v, &lat, 3)?;
    let p = nls_nonlinearity::<f64>(&lat, 1, 1.0, Budget::default())?;
    let plan = ParameterPlan::at_order(3, lat.n_max as u32, gamma, 1.0, 1, 1)?;
    let nf = normal_form(&f, &p, &plan, &NormalFormOptions::default())?;
    Ok(report(
        "normal_form_resonance",
        nf.certificates.max_resonant_omega / nf.plan.nu,
        1.0 - f64::EPSILON,
        format!("nu = {:.3e}", nf.plan.nu),
    ))
}

pub fn run_property_suites(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut suites = vec![
        suite_bracket_oracle(cfg)?,
        suite_bracket_bound(cfg)?,
        suite_gradient(cfg)?,
    ];
    suites.extend(suite_flow(cfg)?);
    suites.push(suite_cohomological(cfg)?);
    suites.push(suite_small_divisor(cfg)?);
    suites.extend(suite_simulator(cfg)?);
    suites.push(suite_planner(cfg)?);
    suites.push(suite_normal_form(cfg)?);
    Ok(VerifyReport { suites })
}
