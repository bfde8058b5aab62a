//! The affine parameter set `(m0, M, n0, (n_k))` and its static checks.
//!
//! `mu(x) = m0 + M x` and `S(x) = n0 + sum_k x_k n_k`. Construction only
//! validates shapes and finiteness; every admissibility condition is reported
//! as a [`Finding`] so that broken parameter sets can still be inspected.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hilbert::{self, IndexPartition, RMat, RVec};
use crate::tail::{combine, Envelope, TailBound, TailDecay};
use crate::transform::Retraction;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AffineParams {
    pub partition: IndexPartition,
    pub m0: RVec,
    pub m: RMat,
    pub n0: RMat,
    /// `n_k = N e_k`, one matrix per coordinate.
    pub nk: Vec<RMat>,
    /// Covariance operator of the driving noise in the fixed basis.
    pub sigma_w: RMat,
    pub decay: Option<TailDecay>,
}

impl AffineParams {
    pub fn new(
        partition: IndexPartition,
        m0: RVec,
        m: RMat,
        n0: RMat,
        nk: Vec<RMat>,
        sigma_w_diag: &[f64],
    ) -> Result<Self> {
        let p = Self {
            partition,
            m0,
            m,
            n0,
            nk,
            sigma_w: RMat::from_diag(sigma_w_diag),
            decay: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Replaces the diagonal noise covariance with a full matrix.
    pub fn with_sigma_w(mut self, sigma_w: RMat) -> Result<Self> {
        self.sigma_w = sigma_w;
        self.validate()?;
        Ok(self)
    }

    pub fn with_decay(mut self, decay: TailDecay) -> Result<Self> {
        self.decay = Some(decay);
        self.validate()?;
        Ok(self)
    }

    /// Shape, finiteness and positivity of the noise covariance diagonal.
    pub fn validate(&self) -> Result<()> {
        let n = self.partition.n();
        let dim = |found: usize| -> Result<()> {
            if found != n {
                Err(Error::DimensionMismatch { expected: n, found })
            } else {
                Ok(())
            }
        };
        dim(self.m0.len())?;
        for a in [&self.m, &self.n0, &self.sigma_w] {
            dim(a.rows())?;
            dim(a.cols())?;
        }
        dim(self.nk.len())?;
        for a in &self.nk {
            dim(a.rows())?;
            dim(a.cols())?;
        }
        if !self.m0.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("m0"));
        }
        if !self.m.is_finite() {
            return Err(Error::NonFinite("M"));
        }
        if !self.n0.is_finite() {
            return Err(Error::NonFinite("n0"));
        }
        if !self.nk.iter().all(RMat::is_finite) {
            return Err(Error::NonFinite("n_k"));
        }
        if !self.sigma_w.is_finite() {
            return Err(Error::NonFinite("sigma_w"));
        }
        if let Some(k) = (0..n).find(|&k| self.sigma_w[(k, k)] <= 0.0) {
            return Err(Error::InvalidConfig(format!("sigma_w diagonal entry {} is not positive", k + 1)));
        }
        if let Some(d) = &self.decay {
            if d.rules().any(|r| !r.is_valid()) {
                return Err(Error::InvalidConfig("decay rules need c > 0, r > 0".into()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.partition.n()
    }

    pub fn sigma_w_diag(&self) -> Vec<f64> {
        (0..self.n()).map(|k| self.sigma_w[(k, k)]).collect()
    }

    /// `m_k = M e_k`.
    pub fn m_col(&self, k: usize) -> RVec {
        (0..self.n()).map(|r| self.m[(r, k)]).collect()
    }

    /// Drift `m0 + M x`.
    pub fn mu(&self, x: &[f64]) -> RVec {
        let mx = self.m.apply(x);
        self.m0.iter().zip(mx.iter()).map(|(a, b)| a + b).collect()
    }

    /// Diffusion operator `n0 + sum_k x_k n_k`.
    pub fn s_op(&self, x: &[f64]) -> RMat {
        let mut s = self.n0.clone();
        for (xk, nk) in x.iter().zip(&self.nk) {
            if *xk != 0.0 {
                s.axpy(*xk, nk);
            }
        }
        s
    }

    /// `(lambda_i, kappa_i)` for `i` in `I` (in `I` order): norms of the
    /// `I`- and `J`-parts of `S(e_i) e_i`.
    pub fn lambda_kappa(&self) -> (Vec<f64>, Vec<f64>) {
        let p = &self.partition;
        let mut lambda = Vec::with_capacity(p.cone().len());
        let mut kappa = Vec::with_capacity(p.cone().len());
        for &i in p.cone() {
            let col = |r: usize| self.n0[(r, i)] + self.nk[i][(r, i)];
            lambda.push(libm::sqrt(p.cone().iter().map(|&r| col(r) * col(r)).sum()));
            kappa.push(libm::sqrt(p.free().iter().map(|&r| col(r) * col(r)).sum()));
        }
        (lambda, kappa)
    }

    /// `lambda_i` by the diagonal pairing `<S(e_i)_II e_i, e_i>`; equals the
    /// norm form whenever the volatility is parallel to the boundary.
    pub fn lambda_diag_pairing(&self) -> Vec<f64> {
        self.partition.cone().iter().map(|&i| self.n0[(i, i)] + self.nk[i][(i, i)]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Status {
    Pass,
    Fail,
    /// Holds at truncation; no decay rule to certify the infinite tail.
    TruncationOnly,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Finding {
    pub id: String,
    pub status: Status,
    /// Worst-case violation, or the certified value for summability findings.
    pub residual: f64,
    pub detail: String,
}

impl Finding {
    fn check(id: &str, residual: f64, tol: f64, detail: String) -> Self {
        let status = if residual <= tol { Status::Pass } else { Status::Fail };
        Finding { id: id.to_string(), status, residual, detail }
    }

    fn with_status(id: &str, status: Status, residual: f64, detail: String) -> Self {
        Finding { id: id.to_string(), status, residual, detail }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// A list of findings; `overall` is false iff some finding failed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdmissibilityReport {
    pub overall: bool,
    pub findings: Vec<Finding>,
}

impl AdmissibilityReport {
    pub fn from_findings(findings: Vec<Finding>) -> Self {
        let overall = findings.iter().all(Finding::passed);
        Self { overall, findings }
    }

    pub fn get(&self, id: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.id == id)
    }

    pub fn failed_ids(&self) -> Vec<&str> {
        self.findings.iter().filter(|f| !f.passed()).map(|f| f.id.as_str()).collect()
    }

    pub fn merge(mut self, other: AdmissibilityReport) -> Self {
        self.findings.extend(other.findings);
        Self::from_findings(self.findings)
    }
}

/// Tolerance scaled to the magnitude of the matrix under test.
fn scaled(tol: f64, a: &RMat) -> f64 {
    tol * (1.0 + a.max_abs())
}

/// `max(asymmetry, -min eigenvalue)`, zero for an empty block.
fn psd_violation(a: &RMat) -> f64 {
    if a.rows() == 0 {
        return 0.0;
    }
    let min = hilbert::min_eigenvalue(a).unwrap_or(f64::NEG_INFINITY);
    hilbert::asymmetry(a).max(-min).max(0.0)
}

fn max_over<I: Iterator<Item = (f64, String)>>(it: I) -> (f64, String) {
    it.fold((0.0, String::new()), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// Finding for an infinite sum or supremum: truncated value plus tail.
fn summability(id: &str, truncated: f64, tail: Option<TailBound>, what: &str) -> Finding {
    match tail {
        None => Finding::with_status(
            id,
            Status::TruncationOnly,
            truncated,
            format!("{what} = {truncated:e} at truncation; no decay rule for the tail"),
        ),
        Some(TailBound::Finite(t)) => Finding::with_status(
            id,
            Status::Pass,
            truncated + t,
            format!("{what} <= {:e} (truncation {truncated:e} + tail {t:e})", truncated + t),
        ),
        Some(TailBound::Divergent) => Finding::with_status(
            id,
            Status::Fail,
            f64::INFINITY,
            format!("{what}: decay rule gives a divergent tail"),
        ),
        Some(TailBound::Inconclusive) => Finding::with_status(
            id,
            Status::TruncationOnly,
            truncated,
            format!("{what} = {truncated:e} at truncation; tail not certifiable at this n"),
        ),
    }
}

fn m0_in_state_space(p: &AffineParams, tol: f64) -> Finding {
    let (worst, at) = max_over(p.partition.cone().iter().map(|&i| (-p.m0[i], format!("m0[{}]", i + 1))));
    Finding::check("m0_in_state_space", worst.max(0.0), tol, format!("most negative cone coordinate {at}"))
}

fn m_i_offdiag_nonneg(p: &AffineParams, tol: f64) -> Finding {
    let cone = p.partition.cone();
    let (worst, at) = max_over(cone.iter().flat_map(|&i| {
        cone.iter()
            .filter(move |&&k| k != i)
            .map(move |&k| (-p.m[(k, i)], format!("M[{}][{}]", k + 1, i + 1)))
    }));
    Finding::check("m_i_offdiag_nonneg", worst.max(0.0), tol, format!("most negative off-diagonal cone entry {at}"))
}

fn m_j_in_hj(p: &AffineParams, tol: f64) -> Finding {
    let part = &p.partition;
    let (worst, at) = max_over(part.cone().iter().flat_map(|&i| {
        part.free().iter().map(move |&j| (p.m[(i, j)].abs(), format!("M[{}][{}]", i + 1, j + 1)))
    }));
    Finding::check("m_j_in_HJ", worst, tol, format!("largest cone component of M e_j: {at}"))
}

fn m_bounded(p: &AffineParams) -> Finding {
    let op = p.m.op_norm().unwrap_or(f64::INFINITY);
    let cone_len = p.partition.cone().len();
    let tail = p.decay.as_ref().and_then(|d| d.rho).map(|r| r.envelope().tail_sup(cone_len));
    match tail {
        Some(TailBound::Finite(s)) => Finding::with_status(
            "M_bounded",
            Status::Pass,
            op.max(s),
            format!("operator norm {op:e} at truncation, tail rows bounded by {s:e}"),
        ),
        other => summability("M_bounded", op, other, "operator norm of M"),
    }
}

fn n_k_psd(p: &AffineParams, tol: f64) -> Finding {
    let mut worst = 0.0;
    let mut at = String::new();
    let mut ok = true;
    for (k, nk) in p.nk.iter().enumerate() {
        let v = psd_violation(nk);
        if v > scaled(tol, nk) {
            ok = false;
        }
        if v > worst {
            worst = v;
            at = format!("n_{}", k + 1);
        }
    }
    let status = if ok { Status::Pass } else { Status::Fail };
    Finding::with_status("n_k_psd", status, worst, format!("largest PSD violation in {at}"))
}

fn n_j_zero(p: &AffineParams, tol: f64) -> Finding {
    let (worst, at) = max_over(p.partition.free().iter().map(|&j| (p.nk[j].max_abs(), format!("n_{}", j + 1))));
    Finding::check("n_j_zero", worst, tol, format!("largest entry of a free-coordinate n_j: {at}"))
}

fn n0_ii_zero(p: &AffineParams, tol: f64) -> Finding {
    let cone = p.partition.cone();
    let worst = p.n0.submatrix(cone, cone).max_abs();
    Finding::check("n0_II_zero", worst, tol, "max |n0| on I x I".into())
}

fn n0_ij_zero(p: &AffineParams, tol: f64) -> Finding {
    let (c, f) = (p.partition.cone(), p.partition.free());
    let worst = p.n0.submatrix(c, f).max_abs().max(p.n0.submatrix(f, c).max_abs());
    Finding::check("n0_IJ_zero", worst, tol, "max |n0| on I x J and J x I".into())
}

fn n0_jj_psd(p: &AffineParams, tol: f64) -> Finding {
    let f = p.partition.free();
    let block = p.n0.submatrix(f, f);
    Finding::check("n0_JJ_psd", psd_violation(&block), scaled(tol, &block), "PSD violation of n0 on J x J".into())
}

fn n_i_ii_diagonal(p: &AffineParams, tol: f64) -> Finding {
    let cone = p.partition.cone();
    let (worst, at) = max_over(cone.iter().flat_map(|&i| {
        cone.iter().flat_map(move |&k| {
            cone.iter()
                .filter(move |&&l| (k, l) != (i, i))
                .map(move |&l| (p.nk[i][(k, l)].abs(), format!("n_{}[{}][{}]", i + 1, k + 1, l + 1)))
        })
    }));
    Finding::check("n_i_II_diagonal", worst, tol, format!("largest off-pattern cone entry {at}"))
}

fn n_i_ij_symmetric(p: &AffineParams, tol: f64) -> Finding {
    let part = &p.partition;
    let (worst, at) = max_over(part.cone().iter().flat_map(|&i| {
        part.cone().iter().flat_map(move |&k| {
            part.free().iter().map(move |&j| {
                ((p.nk[i][(k, j)] - p.nk[i][(j, k)]).abs(), format!("n_{} at ({}, {})", i + 1, k + 1, j + 1))
            })
        })
    }));
    Finding::check("n_i_IJ_symmetric", worst, tol, format!("largest IJ/JI mismatch {at}"))
}

fn n_i_jj_psd(p: &AffineParams, tol: f64) -> Finding {
    let f = p.partition.free();
    let mut worst = 0.0;
    let mut ok = true;
    for &i in p.partition.cone() {
        let block = p.nk[i].submatrix(f, f);
        let v = psd_violation(&block);
        ok &= v <= scaled(tol, &block);
        worst = f64::max(worst, v);
    }
    let status = if ok { Status::Pass } else { Status::Fail };
    Finding::with_status("n_i_JJ_psd", status, worst, "largest PSD violation of n_i on J x J".into())
}

fn n_sq_sum(p: &AffineParams) -> Finding {
    let part = &p.partition;
    let truncated: f64 = part
        .cone()
        .iter()
        .map(|&i| {
            let s = p.nk[i].op_norm().unwrap_or(f64::INFINITY);
            s * s
        })
        .sum();
    if part.cone().is_empty() {
        return Finding::with_status("n_sq_sum", Status::Pass, 0.0, "no cone coordinates".into());
    }
    // ||n_i|| <= lambda_i + kappa_i for the two-by-two coupling pattern
    let tail = p.decay.as_ref().and_then(|d| {
        let lambda = d.lambda?.envelope();
        let kappa = d.kappa_or_zero(part)?;
        let n = part.cone().len();
        Some(match kappa {
            None => lambda.powf(2.0).tail_sum(n),
            Some(k) => {
                let two = Envelope { c: 2.0, p: 0.0, r: 1.0 };
                combine(lambda.powf(2.0).mul(&two).tail_sum(n), k.powf(2.0).mul(&two).tail_sum(n))
            }
        })
    });
    summability("n_sq_sum", truncated, tail, "sum of squared spectral norms of n_i")
}

/// The admissibility conditions, one finding each.
pub fn check_admissibility(p: &AffineParams, tol: f64) -> AdmissibilityReport {
    AdmissibilityReport::from_findings(alloc::vec![
        m0_in_state_space(p, tol),
        m_i_offdiag_nonneg(p, tol),
        m_j_in_hj(p, tol),
        m_bounded(p),
        n_k_psd(p, tol),
        n_j_zero(p, tol),
        n0_ii_zero(p, tol),
        n0_ij_zero(p, tol),
        n0_jj_psd(p, tol),
        n_i_ii_diagonal(p, tol),
        n_i_ij_symmetric(p, tol),
        n_i_jj_psd(p, tol),
        n_sq_sum(p),
    ])
}

/// Inward-pointing drift at the cone boundary.
pub fn check_inward(p: &AffineParams, tol: f64) -> AdmissibilityReport {
    AdmissibilityReport::from_findings(alloc::vec![
        m0_in_state_space(p, tol),
        m_i_offdiag_nonneg(p, tol),
        m_j_in_hj(p, tol),
    ])
}

/// Volatility parallel to the cone boundary.
pub fn check_parallel(p: &AffineParams, tol: f64) -> AdmissibilityReport {
    let n = p.n();
    let cone = p.partition.cone();
    let (w0, at0) = max_over(cone.iter().flat_map(|&i| {
        (0..n).map(move |k| (p.n0[(k, i)].abs().max(p.n0[(i, k)].abs()), format!("n0 at ({}, {})", k + 1, i + 1)))
    }));
    let (w1, at1) = max_over(cone.iter().flat_map(|&i| {
        cone.iter().filter(move |&&j| j != i).flat_map(move |&j| {
            (0..n).map(move |k| {
                (p.nk[i][(k, j)].abs().max(p.nk[i][(j, k)].abs()), format!("n_{} at ({}, {})", i + 1, k + 1, j + 1))
            })
        })
    }));
    AdmissibilityReport::from_findings(alloc::vec![
        Finding::check("n0_annihilates_HI", w0, tol, format!("largest n0 entry touching I: {at0}")),
        n_j_zero(p, tol),
        Finding::check("n_i_e_j_zero", w1, tol, format!("largest n_i e_j entry for i != j in I: {at1}")),
    ])
}

/// Side conditions for strong existence: `(kappa/lambda)` square-summable,
/// `m0_I` in the retracted subspace, `M_II` commuting with `T`, and summable
/// row norms of `M_II`.
pub fn check_existence_side_conditions(p: &AffineParams, t: &Retraction, tol: f64) -> AdmissibilityReport {
    let part = &p.partition;
    let cone = part.cone();
    let n_cone = cone.len();
    let (lambda, kappa) = p.lambda_kappa();
    let decay = p.decay.as_ref();

    let ratio_sq: f64 = lambda
        .iter()
        .zip(&kappa)
        .filter(|(l, _)| **l > 0.0)
        .map(|(l, k)| (k / l) * (k / l))
        .sum();
    let ratio_tail = decay.and_then(|d| {
        let l = d.lambda?.envelope();
        Some(match d.kappa_or_zero(part)? {
            None => TailBound::Finite(0.0),
            Some(k) => k.div(&l).powf(2.0).tail_sum(n_cone),
        })
    });
    let ratio = if n_cone == 0 {
        Finding::with_status("kappa_lambda_l2", Status::Pass, 0.0, "no cone coordinates".into())
    } else {
        summability("kappa_lambda_l2", ratio_sq, ratio_tail, "sum of (kappa_i/lambda_i)^2")
    };

    let member: f64 = cone
        .iter()
        .zip(t.nu())
        .map(|(&i, nu)| (p.m0[i] / nu) * (p.m0[i] / nu))
        .sum();
    let member_tail = decay.and_then(|d| Some(d.m0?.envelope().div(&t.lower_envelope()).powf(2.0).tail_sum(n_cone)));
    let membership = if n_cone == 0 {
        Finding::with_status("m0_membership", Status::Pass, 0.0, "no cone coordinates".into())
    } else {
        summability("m0_membership", member, member_tail, "sum of (m0_i/nu_i)^2")
    };

    let mii = p.m.submatrix(cone, cone);
    let tm = t.matrix();
    let comm = mii.matmul(&tm).sub(&tm.matmul(&mii)).max_abs();
    let commute = Finding::check("mt_commute", comm, scaled(tol, &mii), "max |M_II T - T M_II|".into());

    let rows: f64 = (0..n_cone).map(|a| mii.row_norm(a)).sum();
    let rows_tail = decay.and_then(|d| Some(d.rho?.envelope().tail_sum(n_cone)));
    let row_sum = if n_cone == 0 {
        Finding::with_status("m_II_row_sum", Status::Pass, 0.0, "no cone coordinates".into())
    } else {
        summability("m_II_row_sum", rows, rows_tail, "sum of row norms of M_II")
    };

    AdmissibilityReport::from_findings(alloc::vec![ratio, membership, commute, row_sum])
}

/// Side conditions for pathwise uniqueness, as checkable predicates.
pub fn check_uniqueness_conditions(p: &AffineParams, tol: f64) -> AdmissibilityReport {
    let n = p.n();
    let part = &p.partition;
    let n_cone = part.cone().len();

    let (off, at) = max_over((0..n).flat_map(|i| {
        (0..n).filter(move |&j| j != i).map(move |j| (p.sigma_w[(i, j)].abs(), format!("({}, {})", i + 1, j + 1)))
    }));
    let diag = Finding::check("sigma_w_diagonal", off, tol, format!("largest off-diagonal noise covariance {at}"));

    let lip: f64 = (0..n).map(|i| p.m.row_norm(i)).sum();
    let copies = if part.free().is_empty() { 1.0 } else { 2.0 };
    let lip_tail = p
        .decay
        .as_ref()
        .and_then(|d| Some(d.rho?.envelope().mul(&Envelope { c: copies, p: 0.0, r: 1.0 }).tail_sum(n_cone)));
    let lipschitz = summability("mu_lipschitz_summable", lip, lip_tail, "sum of drift Lipschitz constants");

    let parallel = check_parallel(p, tol);
    let structure = Finding::with_status(
        "volatility_diagonal",
        if parallel.overall { Status::Pass } else { Status::Fail },
        parallel.findings.iter().map(|f| f.residual).fold(0.0, f64::max),
        "transformed volatility is diagonal on the cone block iff the parallel conditions hold".into(),
    );

    let (lambda, _) = p.lambda_kappa();
    let max_lambda = lambda.iter().copied().fold(0.0, f64::max);
    let holder = if n_cone == 0 {
        Finding::with_status("sqrt_holder_modulus", Status::Pass, 0.0, "no cone coordinates".into())
    } else {
        let sup_tail = p.decay.as_ref().and_then(|d| Some(d.lambda?.envelope().tail_sup(n_cone)));
        let detail = |c: f64| format!("|sqrt(l x) - sqrt(l y)| <= {c:e} sqrt|x - y|; integral of rho^-2 diverges at 0");
        match sup_tail {
            Some(TailBound::Finite(s)) => {
                let c = libm::sqrt(max_lambda.max(s));
                Finding::with_status("sqrt_holder_modulus", Status::Pass, c, detail(c))
            }
            Some(TailBound::Divergent) => Finding::with_status(
                "sqrt_holder_modulus",
                Status::Fail,
                f64::INFINITY,
                "lambda unbounded: no uniform Holder constant".into(),
            ),
            _ => {
                let c = libm::sqrt(max_lambda);
                Finding::with_status("sqrt_holder_modulus", Status::TruncationOnly, c, detail(c))
            }
        }
    };

    AdmissibilityReport::from_findings(alloc::vec![diag, lipschitz, structure, holder])
}
