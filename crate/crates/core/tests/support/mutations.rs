//! Single-entry mutations of the CIR (n = 4) and Heston (nI = 3) families,
//! each paired with the one admissibility finding it must flip.

use affine_hilbert::families::{make_cir, make_heston, FamilyConstants, FamilySpec};
use affine_hilbert::AffineParams;

#[derive(Clone, Copy, Debug)]
pub enum Target {
    M0(usize),
    M(usize, usize),
    N0(usize, usize),
    Nk(usize, usize, usize),
}

pub struct Mutation {
    pub family: &'static str,
    pub target: Target,
    pub value: f64,
    pub finding: &'static str,
}

pub fn cir4() -> AffineParams {
    make_cir(&FamilySpec::Cir { n: 4, constants: FamilyConstants::default() }).unwrap()
}

pub fn heston3() -> AffineParams {
    make_heston(&FamilySpec::Heston { n_i: 3, constants: FamilyConstants::default() }).unwrap()
}

const fn mu(family: &'static str, target: Target, value: f64, finding: &'static str) -> Mutation {
    Mutation { family, target, value, finding }
}

pub const MUTATIONS: [Mutation; 20] = [
    mu("cir", Target::M0(1), -0.5, "m0_in_state_space"),
    mu("cir", Target::M(0, 1), -0.3, "m_i_offdiag_nonneg"),
    mu("cir", Target::M(2, 0), -0.1, "m_i_offdiag_nonneg"),
    mu("cir", Target::N0(1, 1), 0.5, "n0_II_zero"),
    mu("cir", Target::N0(0, 2), 0.1, "n0_II_zero"),
    mu("cir", Target::Nk(0, 0, 0), -0.5, "n_k_psd"),
    mu("cir", Target::Nk(1, 2, 2), 0.3, "n_i_II_diagonal"),
    mu("cir", Target::Nk(3, 1, 1), 0.2, "n_i_II_diagonal"),
    mu("heston", Target::M0(0), -0.2, "m0_in_state_space"),
    mu("heston", Target::M(1, 2), -0.2, "m_i_offdiag_nonneg"),
    mu("heston", Target::M(0, 3), 0.5, "m_j_in_HJ"),
    mu("heston", Target::M(2, 5), -0.3, "m_j_in_HJ"),
    mu("heston", Target::N0(0, 0), 0.4, "n0_II_zero"),
    mu("heston", Target::N0(1, 4), 0.1, "n0_IJ_zero"),
    mu("heston", Target::N0(5, 2), 0.1, "n0_IJ_zero"),
    mu("heston", Target::N0(3, 3), -0.2, "n0_JJ_psd"),
    mu("heston", Target::Nk(1, 1, 1), -0.3, "n_k_psd"),
    mu("heston", Target::Nk(0, 2, 2), 0.3, "n_i_II_diagonal"),
    mu("heston", Target::Nk(4, 4, 4), 0.5, "n_j_zero"),
    mu("heston", Target::Nk(3, 5, 5), 0.2, "n_j_zero"),
];

impl Mutation {
    pub fn apply(&self) -> AffineParams {
        let mut p = if self.family == "cir" { cir4() } else { heston3() };
        match self.target {
            Target::M0(i) => p.m0[i] = self.value,
            Target::M(r, c) => p.m[(r, c)] = self.value,
            Target::N0(r, c) => p.n0[(r, c)] = self.value,
            Target::Nk(k, r, c) => p.nk[k][(r, c)] = self.value,
        }
        p
    }

    pub fn describe(&self) -> String {
        format!("{} {:?} = {}", self.family, self.target, self.value)
    }
}
