//! The shear `Lambda = Id + D` that decouples cone and free noise, the
//! transformed parameters, and the retraction `T = diag(nu)`.
//!
//! `D e_i = -pi_J S(e_i) e_i / lambda_i` for cone coordinates with
//! `lambda_i > 0`. `D` maps into `H_J` and kills `H_J`, so `D^2 = 0` and
//! `Lambda^{-1} = Id - D`. After the change of variables `Y = Lambda X` the
//! diffusion operator is block diagonal with `S_bar(y)_II = diag(lambda_i y_i)`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hilbert::{self, IndexPartition, RMat, RVec};
use crate::params::{AffineParams, Finding, Status};
use crate::tail::{Envelope, SeqRule, TailBound, TailDecay};

/// Choice of retraction weights.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NuRule {
    /// `nu == 1`: the finite-dimensional choice, `T = Id`.
    Unit,
    /// `nu_i = max(sqrt(lambda_i), i^(-1/4))`.
    SqrtLambdaFloor,
    /// `nu_i` given by a closed-form sequence.
    Sequence(SeqRule),
}

impl NuRule {
    /// The rule used when none is configured: an explicit `nu` rule if the
    /// decay descriptors carry one, the square-root rule if `lambda` has a
    /// tail (the cone is infinite), and `T = Id` otherwise.
    pub fn for_decay(decay: Option<&TailDecay>) -> Self {
        match decay {
            Some(TailDecay { nu: Some(r), .. }) => NuRule::Sequence(*r),
            Some(TailDecay { lambda: Some(_), .. }) => NuRule::SqrtLambdaFloor,
            _ => NuRule::Unit,
        }
    }
}

/// `T = diag(nu)` on the cone coordinates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Retraction {
    cone: Vec<usize>,
    nu: Vec<f64>,
    rule: NuRule,
}

impl Retraction {
    /// Weights in cone order.
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn rule(&self) -> NuRule {
        self.rule
    }

    /// `T` as an `|I| x |I|` diagonal matrix.
    pub fn matrix(&self) -> RMat {
        RMat::from_diag(&self.nu)
    }

    /// A lower envelope for `nu` beyond the truncation.
    pub fn lower_envelope(&self) -> Envelope {
        match self.rule {
            NuRule::Unit => Envelope::ONE,
            NuRule::SqrtLambdaFloor => Envelope { c: 1.0, p: 0.25, r: 1.0 },
            NuRule::Sequence(r) => r.envelope(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.nu.iter().all(|&v| v == 1.0)
    }
}

/// Builds `nu` from the cone `lambda` sequence (cone order).
pub fn build_retraction(partition: &IndexPartition, lambda: &[f64], rule: NuRule) -> Result<Retraction> {
    if lambda.len() != partition.cone().len() {
        return Err(Error::DimensionMismatch { expected: partition.cone().len(), found: lambda.len() });
    }
    let nu = lambda
        .iter()
        .enumerate()
        .map(|(a, &l)| {
            let i = (a + 1) as f64;
            match rule {
                NuRule::Unit => 1.0,
                NuRule::SqrtLambdaFloor => libm::sqrt(l.max(0.0)).max(libm::pow(i, -0.25)),
                NuRule::Sequence(r) => r.eval(a + 1),
            }
        })
        .collect();
    Ok(Retraction { cone: partition.cone().to_vec(), nu, rule })
}

/// Norm of the retracted subspace, `sqrt(sum_i (x_i / nu_i)^2)` over the cone
/// coordinates of `x`.
pub fn h0_norm(t: &Retraction, x: &[f64]) -> f64 {
    libm::sqrt(t.cone.iter().zip(&t.nu).map(|(&i, nu)| (x[i] / nu) * (x[i] / nu)).sum())
}

/// Certificate for `(lambda_i / nu_i)` in `l^2`.
pub fn lambda_nu_certificate(p: &AffineParams, t: &Retraction, lambda: &[f64]) -> Finding {
    let truncated: f64 = lambda.iter().zip(&t.nu).map(|(l, nu)| (l / nu) * (l / nu)).sum();
    let n_cone = lambda.len();
    let lam_rule = p.decay.as_ref().and_then(|d| d.lambda);
    let tail = if n_cone == 0 {
        Some(TailBound::Finite(0.0))
    } else {
        lam_rule.map(|r| {
            let l = r.envelope();
            match t.rule {
                NuRule::Unit => l.powf(2.0).tail_sum(n_cone),
                // (lambda/nu)^2 <= lambda and <= lambda^2 i^(1/2)
                NuRule::SqrtLambdaFloor => {
                    let a = l.tail_sum(n_cone);
                    let b = l.powf(2.0).mul(&Envelope { c: 1.0, p: -0.5, r: 1.0 }).tail_sum(n_cone);
                    match (a, b) {
                        (TailBound::Finite(x), TailBound::Finite(y)) => TailBound::Finite(x.min(y)),
                        (TailBound::Finite(x), _) | (_, TailBound::Finite(x)) => TailBound::Finite(x),
                        (TailBound::Divergent, TailBound::Divergent) => TailBound::Divergent,
                        _ => TailBound::Inconclusive,
                    }
                }
                NuRule::Sequence(nu) => l.div(&nu.envelope()).powf(2.0).tail_sum(n_cone),
            }
        })
    };
    let id = "lambda_nu_l2";
    match tail {
        Some(TailBound::Finite(x)) => Finding {
            id: id.into(),
            status: Status::Pass,
            residual: truncated + x,
            detail: format!("sum (lambda_i/nu_i)^2 <= {:e}", truncated + x),
        },
        Some(TailBound::Divergent) => Finding {
            id: id.into(),
            status: Status::Fail,
            residual: f64::INFINITY,
            detail: "(lambda_i/nu_i) is not square summable under the decay rules".into(),
        },
        _ => Finding {
            id: id.into(),
            status: Status::TruncationOnly,
            residual: truncated,
            detail: format!("sum (lambda_i/nu_i)^2 = {truncated:e} at truncation"),
        },
    }
}

/// `D` from the current parameters; column `i` is zero unless `lambda_i > 0`.
pub fn build_d(p: &AffineParams) -> RMat {
    let n = p.n();
    let (lambda, _) = p.lambda_kappa();
    let mut d = RMat::zeros(n, n);
    for (&i, &l) in p.partition.cone().iter().zip(&lambda) {
        if l > 0.0 {
            for &j in p.partition.free() {
                d[(j, i)] = -(p.n0[(j, i)] + p.nk[i][(j, i)]) / l;
            }
        }
    }
    d
}

/// `(Id + D, Id - D)`, after checking `D^2 = 0`.
pub fn build_lambda_op(d: &RMat) -> Result<(RMat, RMat)> {
    let residual = d.matmul(d).max_abs();
    if residual > 1e-13 {
        return Err(Error::NotNilpotent { residual });
    }
    let id = RMat::identity(d.rows());
    Ok((id.add(d), id.sub(d)))
}

/// Parameters of `Y = Lambda X`: `Lambda m0`, `Lambda M Lambda^{-1}`,
/// `Lambda n0 Lambda^T` and `n_bar_k = sum_l (Lambda^{-1})_{lk} Lambda n_l Lambda^T`.
///
/// Called with the roles of `lambda` and `lambda_inv` swapped this is the
/// inverse transform.
pub fn transform_params(p: &AffineParams, lambda: &RMat, lambda_inv: &RMat) -> AffineParams {
    let n = p.n();
    let lt = lambda.transpose();
    let sandwiched: Vec<Option<RMat>> = p
        .nk
        .iter()
        .map(|nl| if nl.max_abs() == 0.0 { None } else { Some(lambda.matmul(nl).matmul(&lt)) })
        .collect();
    let nk = (0..n)
        .map(|k| {
            let mut acc = RMat::zeros(n, n);
            for (l, s) in sandwiched.iter().enumerate() {
                if let Some(s) = s {
                    let w = lambda_inv[(l, k)];
                    if w != 0.0 {
                        acc.axpy(w, s);
                    }
                }
            }
            acc
        })
        .collect();
    AffineParams {
        partition: p.partition.clone(),
        m0: lambda.apply(&p.m0),
        m: lambda.matmul(&p.m).matmul(lambda_inv),
        n0: lambda.matmul(&p.n0).matmul(&lt),
        nk,
        sigma_w: p.sigma_w.clone(),
        decay: p.decay.clone(),
    }
}

/// Everything the simulator needs from the change of variables.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransformPack {
    pub d: RMat,
    pub lambda_op: RMat,
    pub lambda_inv: RMat,
    pub params_bar: AffineParams,
    /// Cone order.
    pub lambda: Vec<f64>,
    pub kappa: Vec<f64>,
    pub retraction: Retraction,
}

impl TransformPack {
    pub fn build(p: &AffineParams) -> Result<Self> {
        Self::build_with(p, NuRule::for_decay(p.decay.as_ref()))
    }

    pub fn build_with(p: &AffineParams, rule: NuRule) -> Result<Self> {
        let (lambda, kappa) = p.lambda_kappa();
        let d = build_d(p);
        let (lambda_op, lambda_inv) = build_lambda_op(&d)?;
        let params_bar = transform_params(p, &lambda_op, &lambda_inv);
        let retraction = build_retraction(&p.partition, &lambda, rule)?;
        Ok(Self { d, lambda_op, lambda_inv, params_bar, lambda, kappa, retraction })
    }

    /// `y = Lambda x`.
    pub fn forward(&self, x: &[f64]) -> RVec {
        self.lambda_op.apply(x)
    }

    /// `x = Lambda^{-1} y`.
    pub fn backward(&self, y: &[f64]) -> RVec {
        self.lambda_inv.apply(y)
    }
}

/// Worst residuals of the block structure over a battery of cone points.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockDiagonalReport {
    /// `max |S_bar(y)|` on `I x J` and `J x I`.
    pub offdiag: f64,
    /// `max |S_bar(y) - S_bar(y_I)|`.
    pub free_dependence: f64,
    /// `max |S_bar(y)_II - diag(lambda_i y_i)|`.
    pub diag_formula: f64,
    pub pass: bool,
}

pub fn check_block_diagonal(pbar: &AffineParams, lambda: &[f64], points: &[RVec], tol: f64) -> BlockDiagonalReport {
    let part = &pbar.partition;
    let (cone, free) = (part.cone(), part.free());
    let mut rep = BlockDiagonalReport { offdiag: 0.0, free_dependence: 0.0, diag_formula: 0.0, pass: true };
    for y in points {
        let s = pbar.s_op(y);
        rep.offdiag = rep.offdiag.max(s.submatrix(cone, free).max_abs()).max(s.submatrix(free, cone).max_abs());
        let yi = hilbert::project(y, cone).expect("cone indices are in range");
        rep.free_dependence = rep.free_dependence.max(s.sub(&pbar.s_op(&yi)).max_abs());
        let mut expect = RMat::zeros(cone.len(), cone.len());
        for (a, (&i, &l)) in cone.iter().zip(lambda).enumerate() {
            expect[(a, a)] = l * y[i];
        }
        rep.diag_formula = rep.diag_formula.max(s.submatrix(cone, cone).sub(&expect).max_abs());
    }
    rep.pass = rep.offdiag <= tol && rep.free_dependence <= tol && rep.diag_formula <= tol;
    rep
}

fn check_cone_point(part: &IndexPartition, y: &[f64], tol: f64) -> Result<()> {
    match part.cone().iter().find(|&&i| y[i] < -tol) {
        Some(&i) => Err(Error::NegativeState { coordinate: i, value: y[i] }),
        None => Ok(()),
    }
}

/// `sigma_bar_II(y) w`: coordinate `i` of the result is
/// `sqrt(lambda_i y_i) w_i / sqrt(sigma_w_i)`; free coordinates are zero.
pub fn sigma_bar_ii_apply(pbar: &AffineParams, lambda: &[f64], y: &[f64], w: &[f64], tol: f64) -> Result<RVec> {
    let part = &pbar.partition;
    check_cone_point(part, y, tol)?;
    let mut out = RVec::zeros(pbar.n());
    for (&i, &l) in part.cone().iter().zip(lambda) {
        out[i] = libm::sqrt(l * y[i].max(0.0)) * w[i] / libm::sqrt(pbar.sigma_w[(i, i)]);
    }
    Ok(out)
}

/// The same map through `S_bar(y)_II^{1/2} Sigma_W^{-1/2}` with a generic
/// PSD square root.
pub fn sigma_bar_ii_apply_psd(pbar: &AffineParams, y: &[f64], w: &[f64], tol: f64) -> Result<RVec> {
    let part = &pbar.partition;
    check_cone_point(part, y, tol)?;
    let cone = part.cone();
    let yc: Vec<f64> = y.iter().enumerate().map(|(k, &v)| if part.is_cone(k) { v.max(0.0) } else { v }).collect();
    let s = pbar.s_op(&yc).submatrix(cone, cone);
    let root = hilbert::psd_sqrt(&s, 1e-12 * (1.0 + s.max_abs()))?;
    let scaled: Vec<f64> = cone.iter().map(|&i| w[i] / libm::sqrt(pbar.sigma_w[(i, i)])).collect();
    let v = root.apply(&scaled);
    let mut out = RVec::zeros(pbar.n());
    for (&i, vi) in cone.iter().zip(v.iter()) {
        out[i] = *vi;
    }
    Ok(out)
}
