mod support {
    pub mod mutations;
}

use affine_hilbert::params::check_admissibility;
use support::mutations::{cir4, heston3, MUTATIONS};

const TOL: f64 = 1e-12;

#[test]
fn unmutated_families_are_admissible() {
    for p in [cir4(), heston3()] {
        let r = check_admissibility(&p, TOL);
        assert!(r.overall, "{:?}", r.failed_ids());
    }
}

#[test]
fn each_mutation_flips_exactly_its_finding() {
    for m in &MUTATIONS {
        let r = check_admissibility(&m.apply(), TOL);
        assert_eq!(r.failed_ids(), vec![m.finding], "{}", m.describe());
    }
}

#[test]
fn every_structural_finding_is_exercised() {
    let mut ids: Vec<&str> = MUTATIONS.iter().map(|m| m.finding).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 9);
}
