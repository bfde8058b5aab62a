//! Structural invariants over random admissible parameter sets.

use affine_hilbert::families::{make_cir, make_heston, random_admissible, random_u, FamilyConstants, FamilySpec};
use affine_hilbert::hilbert::{psd_check, RVec};
use affine_hilbert::params::{check_admissibility, check_existence_side_conditions, check_inward, check_parallel};
use affine_hilbert::riccati::{gronwall_bound, solve_riccati, SolverOpts};
use affine_hilbert::tail::SeqRule;
use affine_hilbert::transform::{check_block_diagonal, transform_params, TransformPack};
use affine_hilbert::AffineParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(seed: u64, max_n: usize) -> (AffineParams, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_n);
    (random_admissible(&mut rng, n).unwrap(), rng)
}

fn cone_point(p: &AffineParams, rng: &mut ChaCha8Rng) -> RVec {
    (0..p.n()).map(|k| if p.partition.is_cone(k) { rng.random_range(0.0..3.0) } else { rng.random_range(-3.0..3.0) }).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volatility_is_psd_on_the_cone(seed in any::<u64>()) {
        let (p, mut rng) = random_set(seed, 10);
        prop_assert!(check_admissibility(&p, 1e-10).overall);
        for _ in 0..100 {
            let x = cone_point(&p, &mut rng);
            let s = p.s_op(&x);
            prop_assert!(psd_check(&s, 1e-10 * (1.0 + s.max_abs())).unwrap());
        }
    }

    #[test]
    fn admissibility_implies_inward_and_parallel(seed in any::<u64>()) {
        let (p, _) = random_set(seed, 10);
        prop_assert!(check_admissibility(&p, 1e-10).overall);
        prop_assert!(check_inward(&p, 1e-10).overall);
        prop_assert!(check_parallel(&p, 1e-10).overall);
    }

    #[test]
    fn lambda_forms_agree_when_parallel(seed in any::<u64>()) {
        let (p, _) = random_set(seed, 10);
        prop_assume!(check_parallel(&p, 1e-12).overall);
        let (norm, _) = p.lambda_kappa();
        prop_assert!(max_diff(&norm, &p.lambda_diag_pairing()) <= 1e-12);
    }

    #[test]
    fn riccati_stays_in_domain_under_gronwall(seed in any::<u64>()) {
        let (p, mut rng) = random_set(seed, 12);
        let u = random_u(&mut rng, &p.partition);
        let t = rng.random_range(0.1..2.0);
        let s = solve_riccati(&p, &u, t, &SolverOpts::default()).unwrap();
        prop_assert!(s.violations.is_empty());
        for c in &s.certificates {
            prop_assert!(c.re_phi <= 1e-8);
            prop_assert!(c.max_re_psi_cone <= 1e-8);
            prop_assert!(c.max_abs_re_psi_free <= 1e-8);
            prop_assert!(c.psi_cone_norm_sq <= c.gronwall + 1e-6);
        }
        // the direct double quadrature is a second route to the same bound
        let direct = gronwall_bound(&p, &u, t, 400).unwrap();
        prop_assert!(s.certificates.last().unwrap().psi_cone_norm_sq <= direct + 1e-6);
    }

    #[test]
    fn shear_preserves_the_cone_and_fixes_free_vectors(seed in any::<u64>()) {
        let (p, mut rng) = random_set(seed, 10);
        let pack = TransformPack::build(&p).unwrap();
        for _ in 0..500 {
            let x = cone_point(&p, &mut rng);
            let y = pack.forward(&x);
            let back = pack.backward(&x);
            for &i in p.partition.cone() {
                prop_assert!(y[i] >= 0.0 && back[i] >= 0.0);
            }
        }
        let mut xj = RVec::zeros(p.n());
        for &j in p.partition.free() {
            xj[j] = rng.random_range(-1.0..1.0);
        }
        prop_assert_eq!(pack.forward(&xj), xj);
    }

    #[test]
    fn transform_roundtrip_and_block_structure(seed in any::<u64>()) {
        let (p, mut rng) = random_set(seed, 10);
        let pack = TransformPack::build(&p).unwrap();
        let back = transform_params(&pack.params_bar, &pack.lambda_inv, &pack.lambda_op);
        prop_assert!(max_diff(&back.m0, &p.m0) <= 1e-12);
        prop_assert!(back.m.sub(&p.m).max_abs() <= 1e-12);
        prop_assert!(back.n0.sub(&p.n0).max_abs() <= 1e-12);
        for (a, b) in back.nk.iter().zip(&p.nk) {
            prop_assert!(a.sub(b).max_abs() <= 1e-12);
        }
        let points: Vec<RVec> = (0..20).map(|_| cone_point(&p, &mut rng)).collect();
        let r = check_block_diagonal(&pack.params_bar, &pack.lambda, &points, 1e-12);
        prop_assert!(r.offdiag <= 1e-12 * (1.0 + points.iter().map(|y| y.norm()).fold(0.0, f64::max)));
        for y in &points {
            let s = pack.params_bar.s_op(y);
            for (a, &i) in p.partition.cone().iter().enumerate() {
                prop_assert!((s[(i, i)] - pack.lambda[a] * y[i]).abs() <= 1e-12 * (1.0 + y.norm()));
            }
        }
        // the cone block of the drift is untouched by the shear
        let cone = p.partition.cone();
        prop_assert!(pack.params_bar.m.submatrix(cone, cone).sub(&p.m.submatrix(cone, cone)).max_abs() <= 1e-13);
    }

    #[test]
    fn commutation_transfers_through_the_shear(c_lambda in 0.2..2.0f64, ratio in 0.01..1.0f64, n_i in 1usize..12) {
        let constants = FamilyConstants {
            lambda: Some(SeqRule::Power { c: c_lambda, p: 2.0 }),
            kappa: Some(SeqRule::Power { c: c_lambda * ratio, p: 3.0 }),
            ..Default::default()
        };
        let p = make_heston(&FamilySpec::Heston { n_i, constants }).unwrap();
        let pack = TransformPack::build(&p).unwrap();
        let before = check_existence_side_conditions(&p, &pack.retraction, 1e-12);
        let after = check_existence_side_conditions(&pack.params_bar, &pack.retraction, 1e-12);
        prop_assert!(before.get("mt_commute").unwrap().passed());
        prop_assert!(after.get("mt_commute").unwrap().passed());
    }
}

#[test]
fn families_pass_inward_and_parallel() {
    for n in [1usize, 2, 10, 50] {
        let c = FamilyConstants::default();
        for p in [
            make_cir(&FamilySpec::Cir { n, constants: c.clone() }).unwrap(),
            make_heston(&FamilySpec::Heston { n_i: n, constants: c.clone() }).unwrap(),
        ] {
            assert!(check_admissibility(&p, 1e-12).overall);
            assert!(check_inward(&p, 1e-12).overall);
            assert!(check_parallel(&p, 1e-12).overall);
        }
    }
}
