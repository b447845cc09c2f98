use num_complex::Complex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nls_birkhoff::lattice::{nns_weights, FourierState, TruncatedLattice};
use nls_birkhoff::lieflow::epsilon_chi;
use nls_birkhoff::polyalg::{
    bracket_with_diagonal, evaluate, mu2_split, poisson_bracket, random_poly, resonant_split, DiagonalQuadratic,
    HomPoly,
};
use nls_birkhoff::potential::{frequencies, sample_potential};
use nls_birkhoff::resonance::{mu12_squared, zero_momentum_orbits};
use nls_birkhoff::simulator::{read_snapshot, write_snapshot, Snapshot};

fn state(lat: TruncatedLattice, l1: f64, rng: &mut ChaCha8Rng) -> FourierState {
    let amps: Vec<Complex<f64>> = (0..lat.len())
        .map(|_| Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let u = FourierState::from_amplitudes(lat, amps).unwrap();
    let s = l1 / u.l1();
    u.scaled(s)
}

fn same_support(a: &HomPoly, b: &HomPoly) -> bool {
    a.iter().all(|(p, _)| b.iter().any(|(q, _)| p == q))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bracket_is_antisymmetric(seed in any::<u64>(), qa in 2usize..4, qb in 2usize..4) {
        let lat = TruncatedLattice::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_poly(&lat, qa, 0.6, &mut rng);
        let q = random_poly(&lat, qb, 0.6, &mut rng);
        let a = poisson_bracket(&p, &q).unwrap();
        let b = poisson_bracket(&q, &p).unwrap();
        let scale = a.linf().max(1.0);
        prop_assert!(a.add(&b).unwrap().linf() <= 1e-14 * scale);
    }

    #[test]
    fn jacobi_identity(seed in any::<u64>()) {
        let lat = TruncatedLattice::new(1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_poly(&lat, 2, 1.0, &mut rng);
        let q = random_poly(&lat, 2, 1.0, &mut rng);
        let r = random_poly(&lat, 2, 1.0, &mut rng);
        let br = |a: &HomPoly, b: &HomPoly| poisson_bracket(a, b).unwrap();
        let j = br(&p, &br(&q, &r)).add(&br(&q, &br(&r, &p))).unwrap().add(&br(&r, &br(&p, &q))).unwrap();
        let u = state(lat, 0.3, &mut rng);
        prop_assert!(evaluate(&j, &u).abs() <= 1e-9);
    }

    #[test]
    fn brackets_stay_real(seed in any::<u64>()) {
        let lat = TruncatedLattice::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_poly(&lat, 2, 0.6, &mut rng);
        let q = random_poly(&lat, 3, 0.6, &mut rng);
        let b = poisson_bracket(&p, &q).unwrap();
        for (pair, c) in b.iter() {
            let conj = b.coeff(&pair.l, &pair.k);
            prop_assert!((conj - c.conj()).norm() <= 1e-14 * b.linf().max(1.0));
        }
    }

    #[test]
    fn resonant_split_partitions(seed in any::<u64>(), log_nu in -4.0f64..2.0) {
        let lat = TruncatedLattice::new(1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = frequencies(&sample_potential(seed, lat.n_max), &lat).unwrap();
        let p = random_poly(&lat, 2 + (seed % 2) as usize, 0.7, &mut rng);
        let (res, non) = resonant_split(&p, &f, 10f64.powf(log_nu)).unwrap();
        prop_assert_eq!(res.len() + non.len(), p.len());
        prop_assert!(!res.iter().any(|(k, _)| non.iter().any(|(l, _)| k == l)));
        prop_assert_eq!(res.add(&non).unwrap().max_abs_diff(&p), 0.0);
    }

    #[test]
    fn mu2_split_partitions(seed in any::<u64>(), log2_n in 0u32..4) {
        let lat = TruncatedLattice::new(1, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_poly(&lat, 2, 0.7, &mut rng);
        let (low, high) = mu2_split(&p, 1 << log2_n).unwrap();
        prop_assert_eq!(low.len() + high.len(), p.len());
        prop_assert!(same_support(&low, &p) && same_support(&high, &p));
        prop_assert_eq!(low.add(&high).unwrap().max_abs_diff(&p), 0.0);
        let (all, none) = mu2_split(&p, 1 << (lat.n_max + 1)).unwrap();
        prop_assert_eq!(all, p);
        prop_assert!(none.is_empty());
    }

    #[test]
    fn orbit_records_round_trip(seed in any::<u64>(), q in 2usize..4) {
        let lat = TruncatedLattice::new(2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_poly(&lat, q, 0.5, &mut rng);
        let mut buf = Vec::new();
        p.write_jsonl(&mut buf).unwrap();
        let back = HomPoly::read_jsonl(&buf[..], 2, q).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn snapshot_round_trip(seed in any::<u64>(), step in any::<u64>()) {
        let lat = TruncatedLattice::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snap = Snapshot { state: state(lat, 1.0, &mut rng), step, t: step as f64 * 0.01, tag: [seed as u8; 32] };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &snap).unwrap();
        prop_assert_eq!(read_snapshot(&buf[..]).unwrap(), snap);
    }

    #[test]
    fn epsilon_chi_is_homogeneous(seed in any::<u64>(), q in 2usize..4) {
        let lat = TruncatedLattice::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chi = random_poly(&lat, q, 0.7, &mut rng);
        let e = epsilon_chi(&chi);
        let e2 = epsilon_chi(&chi.scale(2f64.powi(2 * q as i32 - 2)));
        prop_assert!((e2 - e / 2.0).abs() <= 1e-14 * e);
    }
}

#[test]
fn second_index_controls_the_first() {
    let lat = TruncatedLattice::new(1, 6).unwrap();
    for q in 2..=3 {
        for pair in zero_momentum_orbits(&lat, q) {
            let (m1sq, m2sq) = mu12_squared(&pair.k, &pair.l);
            let c = (2 * q - 1) as i64;
            assert!(c * c * m2sq >= m1sq, "{pair:?}");
        }
    }
}

#[test]
fn diagonal_bracket_with_nns_weights_matches_the_flow_of_z() {
    let lat = TruncatedLattice::new(1, 3).unwrap();
    let w = nns_weights(&lat, 1.0, 2).unwrap();
    let z = DiagonalQuadratic::from_f64(lat, &w).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_poly(&lat, 2, 0.8, &mut rng);
    let b = bracket_with_diagonal(&p, &z).unwrap();
    for _ in 0..20 {
        let u = state(lat, 1.0, &mut rng);
        let h = 1e-6;
        // the flow of Z rotates u_k by e^{2i g_k t}; d/dt P along it is {Z, P} = -{P, Z}
        let rot = |t: f64| {
            let amps = u
                .amps
                .iter()
                .zip(&w)
                .map(|(a, g)| a * Complex::from_polar(1.0, 2.0 * g * t))
                .collect();
            FourierState::from_amplitudes(lat, amps).unwrap()
        };
        let fd = (evaluate(&p, &rot(h)) - evaluate(&p, &rot(-h))) / (2.0 * h);
        let an = evaluate(&b, &u);
        let scale = fd.abs().max(an.abs()).max(1e-12);
        assert!((fd + an).abs() / scale < 1e-6, "{fd} vs {an}");
    }
}
