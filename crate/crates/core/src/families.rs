//! Constructors for the Ornstein-Uhlenbeck, CIR and Heston type families, and
//! random admissible parameter sets for property tests.
//!
//! Sequences are given by closed-form rules on 1-based positions, so every
//! constructed family also carries the [`TailDecay`] its certificates need.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hilbert::{IndexPartition, RMat, RVec, CVec};
use crate::params::AffineParams;
use crate::tail::{SeqRule, TailBound, TailDecay};
use crate::C64;

/// Sequence constants shared by all families. Unset fields take defaults:
/// `lambda_i = i^-2`, `kappa_i = 0.5 i^-3`, `rho_i = -i^-2`, `m0_i = i^-2`,
/// `n0_jj = i^-2` and unit noise covariance.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FamilyConstants {
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub lambda: Option<SeqRule>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub kappa: Option<SeqRule>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub nu: Option<SeqRule>,
    /// Mean-reversion speeds; the drift diagonal is `-rho_i`.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub rho: Option<SeqRule>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub m0: Option<SeqRule>,
    /// Diagonal of `n0` on the free block.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub n0_jj: Option<SeqRule>,
    /// Diagonal of the noise covariance over all coordinates.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub sigma_w: Option<SeqRule>,
}

const DEFAULT_LAMBDA: SeqRule = SeqRule::Power { c: 1.0, p: 2.0 };
const DEFAULT_KAPPA: SeqRule = SeqRule::Power { c: 0.5, p: 3.0 };
const DEFAULT_RHO: SeqRule = SeqRule::Power { c: 1.0, p: 2.0 };
const DEFAULT_M0: SeqRule = SeqRule::Power { c: 1.0, p: 2.0 };
const DEFAULT_N0: SeqRule = SeqRule::Power { c: 1.0, p: 2.0 };

impl FamilyConstants {
    pub fn lambda(&self) -> SeqRule {
        self.lambda.unwrap_or(DEFAULT_LAMBDA)
    }
    pub fn kappa(&self) -> SeqRule {
        self.kappa.unwrap_or(DEFAULT_KAPPA)
    }
    pub fn rho(&self) -> SeqRule {
        self.rho.unwrap_or(DEFAULT_RHO)
    }
    pub fn m0(&self) -> SeqRule {
        self.m0.unwrap_or(DEFAULT_M0)
    }
    pub fn n0_jj(&self) -> SeqRule {
        self.n0_jj.unwrap_or(DEFAULT_N0)
    }

    fn sigma_w_diag(&self, n: usize) -> Vec<f64> {
        match self.sigma_w {
            Some(r) => (1..=n).map(|i| r.eval(i)).collect(),
            None => vec![1.0; n],
        }
    }

    fn check_rules(&self) -> Result<()> {
        let all = [self.lambda, self.kappa, self.nu, self.rho, self.m0, self.n0_jj, self.sigma_w];
        if all.iter().flatten().any(|r| !r.is_valid()) {
            return Err(Error::Construction("sequence rules need c > 0 and r > 0".into()));
        }
        Ok(())
    }
}

/// A family description: `{"family": "cir", "n": 10, "constants": {...}}`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "family", rename_all = "lowercase", deny_unknown_fields))]
pub enum FamilySpec {
    Ou {
        n: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        constants: FamilyConstants,
    },
    Cir {
        n: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        constants: FamilyConstants,
    },
    Heston {
        #[cfg_attr(feature = "serde", serde(rename = "nI"))]
        n_i: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        constants: FamilyConstants,
    },
}

impl FamilySpec {
    pub fn constants(&self) -> &FamilyConstants {
        match self {
            FamilySpec::Ou { constants, .. } | FamilySpec::Cir { constants, .. } | FamilySpec::Heston { constants, .. } => {
                constants
            }
        }
    }

    pub fn build(&self) -> Result<AffineParams> {
        match self {
            FamilySpec::Ou { .. } => make_ou(self),
            FamilySpec::Cir { .. } => make_cir(self),
            FamilySpec::Heston { .. } => make_heston(self),
        }
    }
}

/// The named families shipped with the command line tool.
pub fn shipped() -> Vec<(&'static str, FamilySpec)> {
    let cir1 = FamilyConstants {
        lambda: Some(SeqRule::Power { c: 2.0, p: 2.0 }),
        rho: Some(SeqRule::Power { c: 1.0, p: 2.0 }),
        m0: Some(SeqRule::Power { c: 1.0, p: 2.0 }),
        ..Default::default()
    };
    let heston1 = FamilyConstants {
        lambda: Some(SeqRule::Power { c: 0.8, p: 2.0 }),
        kappa: Some(SeqRule::Power { c: 0.2, p: 3.0 }),
        n0_jj: Some(SeqRule::Power { c: 0.3, p: 2.0 }),
        ..Default::default()
    };
    vec![
        ("cir1", FamilySpec::Cir { n: 1, constants: cir1 }),
        ("cir10", FamilySpec::Cir { n: 10, constants: FamilyConstants::default() }),
        ("cir50", FamilySpec::Cir { n: 50, constants: FamilyConstants::default() }),
        ("heston1", FamilySpec::Heston { n_i: 1, constants: heston1 }),
        ("heston10", FamilySpec::Heston { n_i: 10, constants: FamilyConstants::default() }),
        ("ou3", FamilySpec::Ou { n: 3, constants: FamilyConstants::default() }),
    ]
}

fn values(rule: SeqRule, n: usize) -> Vec<f64> {
    (1..=n).map(|i| rule.eval(i)).collect()
}

fn require_finite_tail(name: &str, bound: TailBound) -> Result<()> {
    match bound {
        TailBound::Finite(_) => Ok(()),
        _ => Err(Error::Construction(format!("{name} rule is not summable"))),
    }
}

fn wrong_family(expected: &str) -> Error {
    Error::Precondition(format!("family spec is not of {expected} type"))
}

/// CIR type: `I = {1..n}`, `n_i = lambda_i e_i e_i^T`, `M = diag(-rho)`,
/// `n0 = 0`.
pub fn make_cir(spec: &FamilySpec) -> Result<AffineParams> {
    let FamilySpec::Cir { n, constants: c } = spec else {
        return Err(wrong_family("CIR"));
    };
    let n = *n;
    if n == 0 {
        return Err(Error::Construction("CIR family needs n >= 1".into()));
    }
    c.check_rules()?;
    require_finite_tail("lambda^2", c.lambda().envelope().powf(2.0).tail_sum(n))?;
    require_finite_tail("rho", c.rho().envelope().tail_sum(n))?;

    let lambda = values(c.lambda(), n);
    let rho = values(c.rho(), n);
    let part = IndexPartition::leading_cone(n, n)?;
    let nk = (0..n)
        .map(|i| {
            let mut a = RMat::zeros(n, n);
            a[(i, i)] = lambda[i];
            a
        })
        .collect();
    let m = RMat::from_diag(&rho.iter().map(|r| -r).collect::<Vec<_>>());
    let decay = TailDecay { lambda: Some(c.lambda()), kappa: None, nu: c.nu, rho: Some(c.rho()), m0: Some(c.m0()) };
    AffineParams::new(part, values(c.m0(), n).into(), m, RMat::zeros(n, n), nk, &c.sigma_w_diag(n))?.with_decay(decay)
}

/// Heston type: `I = {1..nI}`, `J = {nI+1..2nI}`, pairing `tau(i) = nI + i`,
/// `n_i = [[lambda_i, kappa_i], [kappa_i, lambda_i]]` on `(i, tau(i))`,
/// `n0` diagonal on `J`, `M = diag(-rho)` on both blocks.
pub fn make_heston(spec: &FamilySpec) -> Result<AffineParams> {
    let FamilySpec::Heston { n_i, constants: c } = spec else {
        return Err(wrong_family("Heston"));
    };
    let ni = *n_i;
    if ni == 0 {
        return Err(Error::Construction("Heston family needs nI >= 1".into()));
    }
    c.check_rules()?;
    let (le, ke) = (c.lambda().envelope(), c.kappa().envelope());
    require_finite_tail("lambda^2", le.powf(2.0).tail_sum(ni))?;
    require_finite_tail("rho", c.rho().envelope().tail_sum(ni))?;
    require_finite_tail("(kappa/lambda)^2", ke.div(&le).powf(2.0).tail_sum(ni))?;

    let lambda = values(c.lambda(), ni);
    let kappa = values(c.kappa(), ni);
    if let Some(i) = (0..ni).find(|&i| kappa[i] > lambda[i]) {
        return Err(Error::Construction(format!("kappa_{0} > lambda_{0}", i + 1)));
    }
    match ke.div(&le).tail_sup(ni) {
        TailBound::Finite(s) if s <= 1.0 => {}
        _ => return Err(Error::Construction("kappa exceeds lambda beyond the truncation".into())),
    }

    let n = 2 * ni;
    let part = IndexPartition::leading_cone(n, ni)?;
    let tau = |i: usize| ni + i;
    let mut nk = vec![RMat::zeros(n, n); n];
    for i in 0..ni {
        let a = &mut nk[i];
        a[(i, i)] = lambda[i];
        a[(tau(i), tau(i))] = lambda[i];
        a[(i, tau(i))] = kappa[i];
        a[(tau(i), i)] = kappa[i];
    }
    let mut n0 = RMat::zeros(n, n);
    let mut m = RMat::zeros(n, n);
    let rho = values(c.rho(), ni);
    let n0v = values(c.n0_jj(), ni);
    for i in 0..ni {
        n0[(tau(i), tau(i))] = n0v[i];
        m[(i, i)] = -rho[i];
        m[(tau(i), tau(i))] = -rho[i];
    }
    let mut m0 = RVec::zeros(n);
    for (i, v) in values(c.m0(), ni).into_iter().enumerate() {
        m0[i] = v;
    }
    let decay = TailDecay { lambda: Some(c.lambda()), kappa: Some(c.kappa()), nu: c.nu, rho: Some(c.rho()), m0: Some(c.m0()) };
    AffineParams::new(part, m0, m, n0, nk, &c.sigma_w_diag(n))?.with_decay(decay)
}

/// Ornstein-Uhlenbeck type: `I` empty, `n_k = 0`, `n0 = diag(n0_jj)`,
/// `M = diag(-rho)`.
pub fn make_ou(spec: &FamilySpec) -> Result<AffineParams> {
    let FamilySpec::Ou { n, constants: c } = spec else {
        return Err(wrong_family("OU"));
    };
    let n = *n;
    if n == 0 {
        return Err(Error::Construction("OU family needs n >= 1".into()));
    }
    c.check_rules()?;
    let part = IndexPartition::new(n, &[], &(0..n).collect::<Vec<_>>())?;
    let m = RMat::from_diag(&values(c.rho(), n).iter().map(|r| -r).collect::<Vec<_>>());
    AffineParams::new(
        part,
        values(c.m0(), n).into(),
        m,
        RMat::from_diag(&values(c.n0_jj(), n)),
        vec![RMat::zeros(n, n); n],
        &c.sigma_w_diag(n),
    )
}

fn sym_psd<R: Rng>(rng: &mut R, support: &[usize], n: usize, rank: usize, scale: f64) -> RMat {
    let mut a = RMat::zeros(n, n);
    for _ in 0..rank {
        let mut v = RVec::zeros(n);
        for &k in support {
            v[k] = scale * rng.random_range(-1.0..1.0);
        }
        a = a.add(&RMat::outer(&v, &v));
    }
    a
}

/// A random admissible parameter set of dimension `n` with a random leading
/// cone. Entries are O(1); no decay rules are attached.
pub fn random_admissible<R: Rng>(rng: &mut R, n: usize) -> Result<AffineParams> {
    if n == 0 {
        return Err(Error::Construction("dimension must be at least 1".into()));
    }
    let n_cone = rng.random_range(0..=n);
    let part = IndexPartition::leading_cone(n, n_cone)?;
    let cone = part.cone().to_vec();
    let free = part.free().to_vec();
    let scale = 1.0 / libm::sqrt(n as f64);

    let mut m0 = RVec::zeros(n);
    for k in 0..n {
        m0[k] = if k < n_cone { rng.random_range(0.0..1.0) } else { rng.random_range(-1.0..1.0) };
    }
    let mut m = RMat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let v = rng.random_range(-1.0..1.0) * scale;
            m[(r, c)] = match (r < n_cone, c < n_cone) {
                (true, true) if r == c => -rng.random_range(0.0..2.0),
                (true, true) => v.abs(),
                (true, false) => 0.0,
                _ => v,
            };
        }
    }
    let n0 = sym_psd(rng, &free, n, 2, scale);
    let mut nk = vec![RMat::zeros(n, n); n];
    for &i in &cone {
        let mut support = vec![i];
        support.extend_from_slice(&free);
        let mut a = sym_psd(rng, &support, n, 2, scale);
        a = a.add(&sym_psd(rng, &free, n, 1, scale));
        nk[i] = a;
    }
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    AffineParams::new(part, m0, m, n0, nk, &sigma)
}

/// A random exponent in the characteristic domain: `Re u_I` in `[-2, 0]`,
/// `u_J` purely imaginary.
pub fn random_u<R: Rng>(rng: &mut R, partition: &IndexPartition) -> CVec {
    (0..partition.n())
        .map(|k| {
            let im = rng.random_range(-2.0..2.0);
            if partition.is_cone(k) {
                C64::new(-rng.random_range(0.0..2.0), im)
            } else {
                C64::new(0.0, im)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{check_admissibility, check_existence_side_conditions, check_inward, check_parallel, check_uniqueness_conditions};
    use crate::transform::TransformPack;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn battery(p: &AffineParams) {
        let tol = 1e-12;
        let pack = TransformPack::build(p).unwrap();
        for r in [
            check_admissibility(p, tol),
            check_inward(p, tol),
            check_parallel(p, tol),
            check_existence_side_conditions(p, &pack.retraction, tol),
            check_uniqueness_conditions(p, tol),
        ] {
            assert!(r.overall, "{:?}", r.failed_ids());
        }
    }

    #[test]
    fn scalar_cir_instance() {
        let (_, spec) = shipped().into_iter().find(|(name, _)| *name == "cir1").unwrap();
        let p = make_cir(&spec).unwrap();
        assert_eq!(p.nk[0][(0, 0)], 2.0);
        assert_eq!(p.m[(0, 0)], -1.0);
        assert_eq!(p.m0[0], 1.0);
        battery(&p);
    }

    #[test]
    fn batteries_over_sizes() {
        for n in [1usize, 2, 10, 50] {
            let c = FamilyConstants::default();
            battery(&make_cir(&FamilySpec::Cir { n, constants: c.clone() }).unwrap());
            battery(&make_heston(&FamilySpec::Heston { n_i: n, constants: c.clone() }).unwrap());
            battery(&make_ou(&FamilySpec::Ou { n, constants: c }).unwrap());
        }
    }

    #[test]
    fn cir_has_identity_transform() {
        let p = make_cir(&FamilySpec::Cir { n: 5, constants: FamilyConstants::default() }).unwrap();
        let pack = TransformPack::build(&p).unwrap();
        assert_eq!(pack.d.max_abs(), 0.0);
        assert_eq!(pack.lambda_op, RMat::identity(5));
        assert_eq!(pack.params_bar, p);
    }

    #[test]
    fn heston_support_pattern() {
        let ni = 4;
        let p = make_heston(&FamilySpec::Heston { n_i: ni, constants: FamilyConstants::default() }).unwrap();
        for i in 0..ni {
            for r in 0..2 * ni {
                for c in 0..2 * ni {
                    let inside = (r == i || r == ni + i) && (c == i || c == ni + i);
                    assert_eq!(p.nk[i][(r, c)] != 0.0, inside, "n_{i} at ({r}, {c})");
                }
            }
        }
    }

    #[test]
    fn heston_pair_shear() {
        let (_, spec) = shipped().into_iter().find(|(name, _)| *name == "heston1").unwrap();
        let p = make_heston(&spec).unwrap();
        let pack = TransformPack::build(&p).unwrap();
        assert_abs_diff_eq!(pack.d[(1, 0)], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn heston_rejects_kappa_above_lambda() {
        let c = FamilyConstants { kappa: Some(SeqRule::Power { c: 2.0, p: 3.0 }), ..Default::default() };
        assert!(matches!(make_heston(&FamilySpec::Heston { n_i: 3, constants: c }), Err(Error::Construction(_))));
        // equal rates: kappa/lambda is not square summable
        let c = FamilyConstants { kappa: Some(SeqRule::Power { c: 0.5, p: 2.0 }), ..Default::default() };
        assert!(make_heston(&FamilySpec::Heston { n_i: 3, constants: c }).is_err());
    }

    #[test]
    fn cir_rejects_non_summable_rho() {
        let c = FamilyConstants { rho: Some(SeqRule::Power { c: 1.0, p: 1.0 }), ..Default::default() };
        assert!(make_cir(&FamilySpec::Cir { n: 3, constants: c }).is_err());
        assert!(make_cir(&FamilySpec::Ou { n: 3, constants: FamilyConstants::default() }).is_err());
    }

    #[test]
    fn ou_volatility_is_constant() {
        let p = make_ou(&FamilySpec::Ou { n: 3, constants: FamilyConstants::default() }).unwrap();
        assert_eq!(p.s_op(&[1.0, -2.0, 5.0]), p.n0);
    }

    #[test]
    fn random_sets_are_admissible() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.random_range(1..=8);
            let p = random_admissible(&mut rng, n).unwrap();
            let r = check_admissibility(&p, 1e-10);
            assert!(r.overall, "{:?}", r.failed_ids());
            assert!(crate::hilbert::in_u(&random_u(&mut rng, &p.partition), &p.partition, 0.0).unwrap());
        }
    }
}
