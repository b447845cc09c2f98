use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use nls_birkhoff::birkhoff::{normal_form, plan_parameters, NormalFormOptions, ParameterPlan};
use nls_birkhoff::lattice::{FourierState, ObservableSpec, TruncatedLattice};
use nls_birkhoff::lieflow::FlowConfig;
use nls_birkhoff::polyalg::{nls_nonlinearity, Budget, HomPoly};
use nls_birkhoff::potential::{frequencies, sample_potential, BlockPotential};
use nls_birkhoff::resonance::{gamma_empirical, small_divisor_scan_each};
use nls_birkhoff::scalar::{Quad, Real};
use nls_birkhoff::simulator::{
    drift_summary, random_initial_data, read_snapshot, write_snapshot, DriftSummary, SimConfig, Simulator,
    Snapshot, TrajectoryRecord,
};
use nls_birkhoff::verify::{run_property_suites, Fault, VerifyConfig};

use crate::config::{ExperimentConfig, NormalFormConfig, Precision, SimulateConfig};
use crate::output::{create, csv_err, csv_writer, num, write_csv, write_json, Provenance};
use crate::CliError;

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref()
        .ok_or_else(|| CliError::Validation(format!("config has no [{name}] table")))
}

pub fn sample_potential_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sec = section(&cfg.sample_potential, "sample_potential")?;
    let dir = cfg.output_dir()?;
    let n_max = match (sec.n_max, sec.d, sec.k_max) {
        (Some(n), None, None) => n,
        (None, Some(d), Some(k)) => TruncatedLattice::new(d, k)?.n_max,
        _ => {
            return Err(CliError::Validation(
                "give either n_max or both d and k_max in [sample_potential]".into(),
            ))
        }
    };
    let v = sample_potential(cfg.seed, n_max);
    let prov = Provenance::new("sample-potential", cfg.hash());
    write_json(&dir.join("potential.json"), &prov, &json!({ "potential": v }))
}

fn modes_text(m: &[nls_birkhoff::lattice::ModeIndex], d: usize) -> String {
    let parts: Vec<String> = m
        .iter()
        .map(|k| {
            let c: Vec<String> = k.components(d).iter().map(|x| x.to_string()).collect();
            format!("({})", c.join(" "))
        })
        .collect();
    parts.join(" ")
}

pub fn smalldiv_scan_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sec = section(&cfg.smalldiv_scan, "smalldiv_scan")?;
    let dir = cfg.output_dir()?;
    let lat = TruncatedLattice::new(sec.d, sec.k_max)?;
    let v = sample_potential(cfg.seed, lat.n_max);
    let prov = Provenance::new("smalldiv-scan", cfg.hash());
    let mut gamma = f64::INFINITY;
    let (mut pairs, mut removal_pairs) = (0u64, 0u64);
    let mut w = if sec.write_pairs {
        let mut w = csv_writer(&dir.join("smalldiv_scan.csv"), &prov)?;
        w.write_record(["q", "k", "l", "removal", "omega_abs", "gamma_contribution"])
            .map_err(csv_err)?;
        Some(w)
    } else {
        None
    };
    let mut failure = None;
    small_divisor_scan_each(&v, &lat, sec.q_max, |e| {
        pairs += 1;
        removal_pairs += e.removal as u64;
        if let Some(g) = e.gamma_contribution {
            gamma = gamma.min(g);
        }
        if let Some(w) = w.as_mut() {
            let row = [
                e.q.to_string(),
                modes_text(&e.pair.k, lat.d),
                modes_text(&e.pair.l, lat.d),
                e.removal.to_string(),
                num(e.omega_abs),
                e.gamma_contribution.map(num).unwrap_or_default(),
            ];
            if let Err(err) = w.write_record(&row) {
                failure = Some(csv_err(err));
                return Err(nls_birkhoff::Error::Io(std::io::Error::other("csv write failed")));
            }
        }
        Ok(())
    })
    .map_err(|e| failure.take().unwrap_or(e.into()))?;
    if let Some(mut w) = w {
        w.flush()?;
    }
    let gamma_json = if gamma.is_finite() { json!(gamma) } else { json!("inf") };
    write_json(
        &dir.join("smalldiv_summary.json"),
        &prov,
        &json!({
            "lattice": lat,
            "potential": v,
            "q_max": sec.q_max,
            "pairs": pairs,
            "removal_pairs": removal_pairs,
            "gamma_emp": gamma_json,
        }),
    )
}

fn write_poly_jsonl(path: &Path, prov: &Provenance, poly: &HomPoly, what: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "{} part={what} d={} q={}", prov.comment(), poly.d(), poly.q())?;
    poly.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Serialize)]
struct LadderPoint {
    amplitude: f64,
    residual: f64,
}

fn run_normal_form<T: Real>(
    cfg: &ExperimentConfig,
    sec: &NormalFormConfig,
    dir: &Path,
) -> Result<(), CliError> {
    let lat = TruncatedLattice::new(sec.d, sec.k_max)?;
    let v = sample_potential(cfg.seed, lat.n_max);
    let f = frequencies(&v, &lat)?;
    let r_guess = match (sec.r, sec.eps) {
        (Some(r), None) => r,
        (None, Some(eps)) => plan_parameters(eps, sec.s0, sec.d, sec.p, 1.0)?.r,
        _ => {
            return Err(CliError::Validation(
                "give exactly one of r and eps in [normal_form]".into(),
            ))
        }
    };
    let gamma = match sec.gamma {
        Some(g) => g,
        None => {
            let g = gamma_empirical(&v, &lat, r_guess.max(2))?;
            if g.is_finite() { g } else { 1.0 }
        }
    };
    let mut plan = match sec.eps {
        Some(eps) => plan_parameters(eps, sec.s0, sec.d, sec.p, gamma)?,
        None => ParameterPlan::at_order(
            r_guess,
            sec.log2_n.unwrap_or(lat.n_max as u32),
            gamma,
            sec.s0,
            sec.d,
            sec.p,
        )?,
    }
    .with_sigma(sec.sigma);
    if let Some(c) = sec.c_const {
        plan = plan.with_constant(c)?;
    }
    let budget = Budget {
        max_orbits: sec.max_orbits,
    };
    let opts = NormalFormOptions {
        budget,
        audit: sec.audit,
        flow: FlowConfig { dt: sec.dt, t_final: 1.0 },
    };
    let p = nls_nonlinearity::<T>(&lat, sec.p, sec.sigma, budget)?;
    let nf = normal_form(&f, &p, &plan, &opts)?;
    let prov = Provenance::new("normal-form", cfg.hash());

    let mut ladder = Vec::new();
    let mut slope = None;
    if sec.residual_ladder {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let amps = (0..lat.len())
            .map(|_| num_complex::Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let dir_state = FourierState::from_amplitudes(lat, amps)?;
        let dir_state = dir_state.scaled(1.0 / dir_state.l1());
        for j in 6..=10 {
            let a = nf.rho() * 2f64.powi(-j);
            let w: FourierState<T> = dir_state.scaled(a).lift();
            let res = nf.residual(&w)?.to_f64().abs();
            ladder.push(LadderPoint {
                amplitude: a,
                residual: res,
            });
        }
        let pts: Vec<(f64, f64)> = ladder.iter().map(|p| (p.amplitude.ln(), p.residual.ln())).collect();
        slope = Some(fit_slope(&pts));
        let rows: Vec<Vec<String>> = ladder.iter().map(|p| vec![num(p.amplitude), num(p.residual)]).collect();
        write_csv(
            &dir.join("residual_ladder.csv"),
            &prov,
            &["amplitude".to_string(), "residual".to_string()],
            &rows,
        )?;
    }

    write_json(
        &dir.join("normal_form.json"),
        &prov,
        &json!({
            "potential": v,
            "gamma": gamma,
            "precision": sec.precision,
            "normal_form": nf.dump(),
            "residual_ladder": ladder,
            "residual_slope": slope,
        }),
    )?;
    for part in &nf.resonant_parts {
        let path = dir.join(format!("resonant_q{}.jsonl", part.q()));
        write_poly_jsonl(&path, &prov, &part.convert::<f64>(), "resonant")?;
    }
    for g in &nf.generators {
        let path = dir.join(format!("generator_stage{}.jsonl", g.stage));
        write_poly_jsonl(&path, &prov, &g.chi.convert::<f64>(), "generator")?;
    }
    for w in &nf.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn normal_form_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sec = section(&cfg.normal_form, "normal_form")?;
    let dir = cfg.output_dir()?;
    match sec.precision {
        Precision::F64 => run_normal_form::<f64>(cfg, sec, dir),
        Precision::DoubleDouble => run_normal_form::<Quad>(cfg, sec, dir),
    }
}

fn trajectory_rows(rec: &TrajectoryRecord, sec: &SimulateConfig, blocks: usize) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["step", "t", "mass", "hamiltonian"].iter().map(|s| s.to_string()).collect();
    header.extend((0..blocks).map(|n| format!("J_{n}")));
    header.extend(sec.hs.iter().map(|s| format!("H^{s}")));
    if sec.nns_s.is_some() {
        header.push("N_Ns".into());
    }
    let rows = rec
        .samples
        .iter()
        .map(|s| {
            let mut row = vec![s.step.to_string(), num(s.t), num(s.mass), num(s.hamiltonian)];
            row.extend(s.super_actions.iter().map(|&j| num(j)));
            row.extend(s.hs_norms.iter().map(|&(_, h)| num(h)));
            if let Some(n) = s.nns {
                row.push(num(n));
            }
            row
        })
        .collect();
    (header, rows)
}

#[derive(Serialize)]
struct RunReport {
    potential_seed: u64,
    start_step: u64,
    steps: u64,
    dt: f64,
    grid_points: usize,
    aborted: Option<String>,
    drift: DriftSummary,
}

pub fn simulate_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sec = section(&cfg.simulate, "simulate")?;
    let dir = cfg.output_dir()?;
    let lat = TruncatedLattice::new(sec.d, sec.k_max)?;
    if sec.potential_seeds == 0 {
        return Err(CliError::Validation("potential_seeds must be at least 1".into()));
    }
    if (sec.nns_s.is_some()) != (sec.nns_n.is_some()) {
        return Err(CliError::Validation("nns_s and nns_n must be given together".into()));
    }
    if let Some(n) = sec.nns_n {
        nls_birkhoff::lattice::check_power_of_two(n)?;
    }
    if sec.snapshot_every == Some(0) {
        return Err(CliError::Validation("snapshot_every must be at least 1".into()));
    }
    let mut hs = sec.hs.clone();
    if let Some(s) = sec.nns_s {
        if !hs.contains(&s) {
            return Err(CliError::Validation(format!("hs must include nns_s = {s}")));
        }
    }
    hs.dedup();
    let spec = ObservableSpec {
        hs,
        nns: sec.nns_s.zip(sec.nns_n),
    };
    let (u0, start) = match &sec.resume {
        Some(path) => {
            if sec.potential_seeds != 1 {
                return Err(CliError::Validation("resume needs potential_seeds = 1".into()));
            }
            let file = std::fs::File::open(path)
                .map_err(|e| CliError::Validation(format!("cannot open snapshot {}: {e}", path.display())))?;
            let snap = read_snapshot(std::io::BufReader::new(file))?;
            if snap.state.lattice != lat {
                return Err(CliError::Validation("snapshot lattice differs from the configured box".into()));
            }
            (snap.state, snap.step)
        }
        None => {
            let init = &sec.initial;
            let decay = init.decay.unwrap_or(init.s + 1.0);
            (
                random_initial_data(lat, init.s, init.size, decay, sec.data_seed.unwrap_or(cfg.seed))?,
                0,
            )
        }
    };
    let prov = Provenance::new("simulate", cfg.hash());
    let tag = cfg.hash_bytes();
    let seeds: Vec<u64> = (0..sec.potential_seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
    let runs: Vec<RunReport> = seeds
        .par_iter()
        .map(|&seed| -> Result<RunReport, CliError> {
            let v: BlockPotential = sample_potential(seed, lat.n_max);
            let mut sc = SimConfig::new(lat, v, sec.p, sec.sigma, sec.dt, sec.t_final);
            sc.record_every = sec.record_every;
            sc.dealias = sec.dealias;
            sc.observables = spec.clone();
            let mut sim = Simulator::new(sc)?;
            let dt = sim.dt();
            let every = sec.snapshot_every;
            let (rec, _) = sim.run_with(&u0, start, |step, u| {
                if let Some(e) = every {
                    if step % e == 0 {
                        let path = dir.join(format!("snapshot_seed{seed}_step{step:010}.bin"));
                        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
                        write_snapshot(
                            &mut w,
                            &Snapshot {
                                state: u.clone(),
                                step,
                                t: step as f64 * dt,
                                tag,
                            },
                        )?;
                        w.flush()?;
                    }
                }
                Ok(())
            })?;
            let (header, rows) = trajectory_rows(&rec, sec, lat.n_max + 1);
            write_csv(&dir.join(format!("trajectory_seed{seed}.csv")), &prov, &header, &rows)?;
            Ok(RunReport {
                potential_seed: seed,
                start_step: start,
                steps: sim.n_steps(),
                dt,
                grid_points: sim.grid_points(),
                aborted: rec.aborted.clone(),
                drift: drift_summary(&rec, sec.nns_s)?,
            })
        })
        .collect::<Result<_, _>>()?;
    let max_j = runs.iter().map(|r| r.drift.max_super_action_drift).fold(0.0, f64::max);
    let max_m = runs.iter().map(|r| r.drift.max_mass_drift).fold(0.0, f64::max);
    let nns_ok = runs
        .iter()
        .map(|r| r.drift.nns_bounds_held)
        .try_fold(true, |acc, h| h.map(|h| acc && h));
    let aborted: Vec<String> = runs
        .iter()
        .filter_map(|r| r.aborted.as_ref().map(|a| format!("seed {}: {a}", r.potential_seed)))
        .collect();
    write_json(
        &dir.join("drift_report.json"),
        &prov,
        &json!({
            "max_super_action_drift": max_j,
            "max_mass_drift": max_m,
            "nns_bounds_held": nns_ok,
            "runs": runs,
        }),
    )?;
    if !aborted.is_empty() {
        return Err(CliError::Runtime(format!("runs aborted: {}", aborted.join("; "))));
    }
    Ok(())
}

pub fn verify_cmd(cfg: &ExperimentConfig, flip: bool) -> Result<(), CliError> {
    let cases = cfg.verify.as_ref().map_or(10, |v| v.cases);
    let vc = VerifyConfig {
        seed: cfg.seed,
        cases,
        fault: Fault {
            flip_bracket_sign: flip,
        },
    };
    let report = run_property_suites(&vc)?;
    for s in &report.suites {
        println!(
            "[{}] {}: metric {} (tolerance {}) {}",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            num(s.metric),
            num(s.tolerance),
            s.detail
        );
    }
    if cfg.output_dir.is_some() {
        let dir = cfg.output_dir()?;
        let prov = Provenance::new("verify", cfg.hash());
        write_json(&dir.join("verify_report.json"), &prov, &report)?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        Err(CliError::Property(format!("failed suites: {}", failed.join(", "))))
    }
}
