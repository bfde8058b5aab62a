//! The generalized Riccati system
//!
//! ```text
//! d/dt phi   = <m0, psi> + 1/2 <n0 psi, psi>
//! d/dt psi_k = <m_k, psi> + 1/2 <n_k psi, psi>
//! ```
//!
//! with the bilinear pairing of [`hilbert::cpair`], `phi(0) = 0`,
//! `psi(0) = u`. `phi` rides along as an extra state coordinate. The free
//! block solves to `psi_J(t) = exp(t M_JJ^T) u_J` and is propagated in closed
//! form by default; the cone block goes through the integrator.
//!
//! Every accepted step is checked against the domain certificates
//! (`Re phi <= 0`, `Re psi_I <= 0`, `Re psi_J = 0`) and the Gronwall bound on
//! `||psi_I||^2`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hilbert::{self, CVec, RMat};
use crate::params::AffineParams;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CertificateKind {
    RePhi,
    RePsiCone,
    RePsiFree,
    Gronwall,
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Method {
    Rk4 { dt: f64 },
    /// Dormand-Prince 5(4) with error control.
    Dopri5 { atol: f64, rtol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CertMode {
    /// A certificate breach aborts the solve.
    Enforce,
    /// Breaches are collected in [`RiccatiSolution::violations`].
    Warn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FreeBlock {
    ClosedForm,
    /// Integrate the free block with the cone block; a cross-check mode.
    Integrate,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverOpts {
    pub method: Method,
    pub cert_tol: f64,
    /// Slack on the Gronwall certificate.
    pub gronwall_tol: f64,
    pub mode: CertMode,
    pub free_block: FreeBlock,
    /// Keep every k-th accepted step (the final step is always kept).
    pub record_every: usize,
    pub max_steps: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            method: Method::Dopri5 { atol: 1e-9, rtol: 1e-9 },
            cert_tol: 1e-8,
            gronwall_tol: 1e-6,
            mode: CertMode::Enforce,
            free_block: FreeBlock::ClosedForm,
            record_every: 1,
            max_steps: 50_000_000,
        }
    }
}

impl SolverOpts {
    pub fn rk4(dt: f64) -> Self {
        Self { method: Method::Rk4 { dt }, ..Self::default() }
    }

    pub fn dopri5(atol: f64, rtol: f64) -> Self {
        Self { method: Method::Dopri5 { atol, rtol }, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.method {
            Method::Rk4 { dt } => dt > 0.0 && dt.is_finite(),
            Method::Dopri5 { atol, rtol } => atol > 0.0 && rtol >= 0.0 && atol.is_finite() && rtol.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidConfig("step size and tolerances must be positive".into()));
        }
        if self.record_every == 0 || self.cert_tol.is_nan() || self.cert_tol < 0.0 || self.gronwall_tol.is_nan() || self.gronwall_tol < 0.0 {
            return Err(Error::InvalidConfig("record_every >= 1 and nonnegative certificate tolerances".into()));
        }
        Ok(())
    }
}

/// Certificate values at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Certificate {
    pub re_phi: f64,
    /// `max_{i in I} Re psi_i`, `-inf` without cone coordinates.
    pub max_re_psi_cone: f64,
    /// `max_{j in J} |Re psi_j|`, 0 without free coordinates.
    pub max_abs_re_psi_free: f64,
    pub psi_cone_norm_sq: f64,
    pub gronwall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Violation {
    pub kind: CertificateKind,
    pub t: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RiccatiSolution {
    pub grid: Vec<f64>,
    pub phi: Vec<C64>,
    pub psi: Vec<CVec>,
    pub u: CVec,
    pub certificates: Vec<Certificate>,
    pub violations: Vec<Violation>,
    /// Accepted steps (all of them, recorded or not).
    pub steps: usize,
    pub rejected: usize,
}

impl RiccatiSolution {
    pub fn final_phi(&self) -> C64 {
        *self.phi.last().expect("solution has at least one grid point")
    }

    pub fn final_psi(&self) -> &CVec {
        self.psi.last().expect("solution has at least one grid point")
    }

    pub fn final_time(&self) -> f64 {
        *self.grid.last().expect("solution has at least one grid point")
    }
}

/// `psi`-field evaluated coordinate by coordinate through [`hilbert::cpair`].
pub fn rhs_psi(p: &AffineParams, psi: &[C64]) -> Result<CVec> {
    let n = p.n();
    if psi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: psi.len() });
    }
    let mut out = CVec::zeros(n);
    for k in 0..n {
        let mk = p.m_col(k).to_complex();
        let nk_psi = p.nk[k].apply_complex(psi);
        out[k] = hilbert::cpair(&mk, psi)? + hilbert::cpair(&nk_psi, psi)? * 0.5;
    }
    Ok(out)
}

/// Semilinear form `M^T psi + f(psi)`, `f(xi) = 1/2 sum_{i in I} <n_i xi, xi> e_i`.
pub fn rhs_psi_semilinear(p: &AffineParams, psi: &[C64]) -> Result<CVec> {
    let n = p.n();
    if psi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: psi.len() });
    }
    let mut out = p.m.transpose().apply_complex(psi);
    for &i in p.partition.cone() {
        let q: C64 = (0..n)
            .map(|r| psi[r] * (0..n).map(|c| psi[c] * p.nk[i][(r, c)]).sum::<C64>())
            .sum();
        out[i] += q * 0.5;
    }
    Ok(out)
}

/// `phi`-field `<m0, psi> + 1/2 <n0 psi, psi>`.
pub fn rhs_phi(p: &AffineParams, psi: &[C64]) -> Result<C64> {
    let n0_psi = p.n0.apply_complex(psi);
    Ok(hilbert::cpair(&p.m0.to_complex(), psi)? + hilbert::cpair(&n0_psi, psi)? * 0.5)
}

/// `exp(t M_JJ^T) u_J`, on the free coordinates only (length `|J|`).
pub fn psi_j_closed(p: &AffineParams, u_j: &[C64], t: f64) -> Result<CVec> {
    let free = p.partition.free();
    if u_j.len() != free.len() {
        return Err(Error::DimensionMismatch { expected: free.len(), found: u_j.len() });
    }
    let a = p.m.submatrix(free, free).transpose().scale(t);
    Ok(hilbert::expm(&a).apply_complex(u_j))
}

/// Closed-form solution of `g' = C (g^2 - 2 g)`, `g(0) = u0`.
pub fn scalar_riccati(u0: f64, c: f64, t: f64) -> f64 {
    let e = libm::exp(2.0 * c * t);
    2.0 * u0 / (2.0 * e - u0 * (e - 1.0))
}

/// `C = sum_{i in I} ||n_i||^2 + ||M||^2 + 7/2` (spectral norms).
pub fn gronwall_constant(p: &AffineParams) -> f64 {
    let sq = |a: &RMat| {
        let s = a.op_norm().unwrap_or(f64::INFINITY);
        s * s
    };
    p.partition.cone().iter().map(|&i| sq(&p.nk[i])).sum::<f64>() + sq(&p.m) + 3.5
}

/// `h_u(s) = 1 + ||psi_J||^2 + ||psi_J||^4`.
fn h_weight(psi_j: &[C64]) -> f64 {
    let s: f64 = psi_j.iter().map(|z| z.norm_sqr()).sum();
    1.0 + s + s * s
}

fn cone_norm_sq(p: &AffineParams, u: &[C64]) -> f64 {
    p.partition.cone().iter().map(|&i| u[i].norm_sqr()).sum()
}

fn free_part(p: &AffineParams, u: &[C64]) -> Vec<C64> {
    p.partition.free().iter().map(|&j| u[j]).collect()
}

/// `h_u` on a uniform grid of `m + 1` points over `[0, t]`, the free block
/// propagated by a single step matrix.
fn h_on_grid(p: &AffineParams, u: &[C64], t: f64, m: usize) -> Vec<f64> {
    let free = p.partition.free();
    let step = hilbert::expm(&p.m.submatrix(free, free).transpose().scale(t / m as f64));
    let mut v = free_part(p, u);
    let mut out = Vec::with_capacity(m + 1);
    out.push(h_weight(&v));
    for _ in 0..m {
        v = step.apply_complex(&v).into_inner();
        out.push(h_weight(&v));
    }
    out
}

/// Gronwall bound
/// `||u_I||^2 + C (1 + ||u_I||^2) int_0^t h_u(s) exp(C int_s^t h_u) ds`
/// by composite Simpson quadrature on both integrals (`quad_steps` outer
/// panels).
pub fn gronwall_bound(p: &AffineParams, u: &[C64], t: f64, quad_steps: usize) -> Result<f64> {
    check_u(p, u, 0.0)?;
    let ui = cone_norm_sq(p, u);
    if t == 0.0 {
        return Ok(ui);
    }
    let c = gronwall_constant(p);
    let panels = quad_steps.max(1);
    let h = h_on_grid(p, u, t, 4 * panels);
    let d = t / (4 * panels) as f64;
    // inner integral from each even grid point to t, half-panel Simpson
    let halves = 2 * panels;
    let mut g = vec![0.0; halves + 1];
    for j in (0..halves).rev() {
        g[j] = g[j + 1] + d / 3.0 * (h[2 * j] + 4.0 * h[2 * j + 1] + h[2 * j + 2]);
    }
    let f = |j: usize| h[2 * j] * libm::exp(c * g[j]);
    let outer: f64 = (0..panels).map(|k| 2.0 * d / 3.0 * (f(2 * k) + 4.0 * f(2 * k + 1) + f(2 * k + 2))).sum();
    Ok(ui + c * (1.0 + ui) * outer)
}

/// The same bound through the identity
/// `int_0^t h e^{C int_s^t h} ds = (e^{C H(t)} - 1) / C`, `H(t) = int_0^t h`.
pub fn gronwall_bound_reduced(p: &AffineParams, u: &[C64], t: f64, quad_steps: usize) -> Result<f64> {
    check_u(p, u, 0.0)?;
    let ui = cone_norm_sq(p, u);
    let c = gronwall_constant(p);
    let panels = quad_steps.max(1);
    let h = h_on_grid(p, u, t, 2 * panels);
    let d = t / (2 * panels) as f64;
    let big_h: f64 = (0..panels).map(|k| d / 3.0 * (h[2 * k] + 4.0 * h[2 * k + 1] + h[2 * k + 2])).sum();
    Ok(ui + (1.0 + ui) * libm::expm1(c * big_h))
}

fn check_u(p: &AffineParams, u: &[C64], tol: f64) -> Result<()> {
    match hilbert::first_outside_u(u, &p.partition, tol)? {
        None => Ok(()),
        Some(k) => Err(Error::OutsideDomain { coordinate: k, real_part: u[k].re }),
    }
}

/// Applies `exp(t A)` to a complex vector by a scaled Taylor series.
fn expm_apply(a: &RMat, t: f64, v: &[C64]) -> Vec<C64> {
    let norm = (0..a.rows())
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
        * t.abs();
    let mut pieces = 1usize;
    while norm / pieces as f64 > 0.5 {
        pieces *= 2;
    }
    let tau = t / pieces as f64;
    let mut out = v.to_vec();
    for _ in 0..pieces {
        let mut term = out.clone();
        let mut sum = out.clone();
        for k in 1..=30 {
            let next = a.apply_complex(&term);
            let s = tau / k as f64;
            let mut size = 0.0_f64;
            for (tk, nk) in term.iter_mut().zip(next.iter()) {
                *tk = nk * s;
                size = size.max(tk.norm());
            }
            for (sk, tk) in sum.iter_mut().zip(&term) {
                *sk += tk;
            }
            let scale = sum.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
            if size <= f64::EPSILON * 1e-3 * scale.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        out = sum;
    }
    out
}

/// Precomputed pieces of the vector field.
struct System<'a> {
    p: &'a AffineParams,
    n: usize,
    quad: Vec<usize>,
    m_jj_t: RMat,
    closed: bool,
}

impl<'a> System<'a> {
    fn new(p: &'a AffineParams, closed: bool) -> Self {
        let n = p.n();
        let quad = (0..n).filter(|&k| p.nk[k].max_abs() != 0.0).collect();
        let free = p.partition.free();
        Self { p, n, quad, m_jj_t: p.m.submatrix(free, free).transpose(), closed }
    }

    /// Field at state `z = (psi, phi)`; in closed mode the free coordinates of
    /// `z` are overwritten by the closed form (propagated from `base`, the
    /// free block at time `t0`) and their derivatives are zero.
    fn eval(&self, t0: f64, base: &[C64], t: f64, z: &mut [C64], dz: &mut [C64]) {
        let p = self.p;
        let n = self.n;
        if self.closed && !base.is_empty() {
            let v = expm_apply(&self.m_jj_t, t - t0, base);
            for (&j, vj) in p.partition.free().iter().zip(v) {
                z[j] = vj;
            }
        }
        let psi = &z[..n];
        for (k, d) in dz[..n].iter_mut().enumerate() {
            *d = (0..n).map(|r| psi[r] * p.m[(r, k)]).sum();
        }
        for &k in &self.quad {
            let nk = &p.nk[k];
            let mut q = C64::new(0.0, 0.0);
            for r in 0..n {
                let row: C64 = nk.row(r).iter().zip(psi).map(|(&a, &b)| b * a).sum();
                q += psi[r] * row;
            }
            dz[k] += q * 0.5;
        }
        let lin: C64 = p.m0.iter().zip(psi).map(|(&a, &b)| b * a).sum();
        let mut quad0 = C64::new(0.0, 0.0);
        if p.n0.max_abs() != 0.0 {
            for r in 0..n {
                let row: C64 = p.n0.row(r).iter().zip(psi).map(|(&a, &b)| b * a).sum();
                quad0 += psi[r] * row;
            }
        }
        dz[n] = lin + quad0 * 0.5;
        if self.closed {
            for &j in p.partition.free() {
                dz[j] = C64::new(0.0, 0.0);
            }
        }
    }
}

/// Running Gronwall certificate: `H(t)` accumulated by Simpson per step.
struct GronwallTrack {
    c: f64,
    ui: f64,
    big_h: f64,
    m_jj_t: RMat,
}

impl GronwallTrack {
    fn bound(&self) -> f64 {
        self.ui + (1.0 + self.ui) * libm::expm1(self.c * self.big_h)
    }

    /// Advances `H` over a step of length `h` starting from free block `v0`.
    fn advance(&mut self, v0: &[C64], h: f64) -> Vec<C64> {
        let mid = expm_apply(&self.m_jj_t, 0.5 * h, v0);
        let end = expm_apply(&self.m_jj_t, 0.5 * h, &mid);
        self.big_h += h / 6.0 * (h_weight(v0) + 4.0 * h_weight(&mid) + h_weight(&end));
        end
    }
}

struct Recorder<'a> {
    p: &'a AffineParams,
    opts: &'a SolverOpts,
    sol: RiccatiSolution,
}

impl Recorder<'_> {
    fn certificate(&self, z: &[C64], bound: f64) -> Certificate {
        let part = &self.p.partition;
        let n = self.p.n();
        Certificate {
            re_phi: z[n].re,
            max_re_psi_cone: part.cone().iter().map(|&i| z[i].re).fold(f64::NEG_INFINITY, f64::max),
            max_abs_re_psi_free: part.free().iter().map(|&j| z[j].re.abs()).fold(0.0, f64::max),
            psi_cone_norm_sq: cone_norm_sq(self.p, &z[..n]),
            gronwall: bound,
        }
    }

    /// Checks the certificates at `t`; records the point when `keep`.
    fn visit(&mut self, t: f64, z: &[C64], bound: f64, keep: bool) -> Result<()> {
        let cert = self.certificate(z, bound);
        let tol = self.opts.cert_tol;
        let mut breaches: Vec<(CertificateKind, f64)> = Vec::new();
        if !z.iter().all(|w| w.re.is_finite() && w.im.is_finite()) {
            breaches.push((CertificateKind::NonFinite, f64::INFINITY));
        } else {
            if cert.re_phi > tol {
                breaches.push((CertificateKind::RePhi, cert.re_phi));
            }
            if cert.max_re_psi_cone > tol {
                breaches.push((CertificateKind::RePsiCone, cert.max_re_psi_cone));
            }
            if cert.max_abs_re_psi_free > tol {
                breaches.push((CertificateKind::RePsiFree, cert.max_abs_re_psi_free));
            }
            let excess = cert.psi_cone_norm_sq - cert.gronwall;
            if excess > self.opts.gronwall_tol {
                breaches.push((CertificateKind::Gronwall, excess));
            }
        }
        for (kind, residual) in breaches {
            match self.opts.mode {
                CertMode::Enforce => return Err(Error::CertificateViolation { kind, t, residual }),
                CertMode::Warn => self.sol.violations.push(Violation { kind, t, residual }),
            }
        }
        if keep {
            let n = self.p.n();
            self.sol.grid.push(t);
            self.sol.phi.push(z[n]);
            self.sol.psi.push(CVec::from(&z[..n]));
            self.sol.certificates.push(cert);
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrates the Riccati system from `u` to `t_end`.
pub fn solve_riccati(p: &AffineParams, u: &[C64], t_end: f64, opts: &SolverOpts) -> Result<RiccatiSolution> {
    opts.validate()?;
    if !t_end.is_finite() || t_end < 0.0 {
        return Err(Error::InvalidConfig("t_end must be finite and nonnegative".into()));
    }
    if !u.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite("u"));
    }
    check_u(p, u, opts.cert_tol)?;
    let n = p.n();
    let closed = opts.free_block == FreeBlock::ClosedForm;
    let sys = System::new(p, closed);
    let free: Vec<usize> = p.partition.free().to_vec();

    let mut z: Vec<C64> = u.to_vec();
    z.push(C64::new(0.0, 0.0));
    let mut gron = GronwallTrack {
        c: gronwall_constant(p),
        ui: cone_norm_sq(p, u),
        big_h: 0.0,
        m_jj_t: sys.m_jj_t.clone(),
    };
    let mut gron_free = free_part(p, u);
    let mut rec = Recorder {
        p,
        opts,
        sol: RiccatiSolution {
            grid: Vec::new(),
            phi: Vec::new(),
            psi: Vec::new(),
            u: CVec::from(u),
            certificates: Vec::new(),
            violations: Vec::new(),
            steps: 0,
            rejected: 0,
        },
    };
    rec.visit(0.0, &z, gron.bound(), true)?;
    if t_end == 0.0 {
        return Ok(rec.sol);
    }

    let dim = n + 1;
    let base_of = |z: &[C64]| -> Vec<C64> { free.iter().map(|&j| z[j]).collect() };
    match opts.method {
        Method::Rk4 { dt } => {
            let steps = libm::ceil(t_end / dt - 1e-9).max(1.0) as usize;
            if steps > opts.max_steps {
                return Err(Error::InvalidConfig("step count exceeds max_steps".into()));
            }
            let h = t_end / steps as f64;
            let mut k = [vec![C64::new(0.0, 0.0); dim], vec![C64::new(0.0, 0.0); dim], vec![C64::new(0.0, 0.0); dim], vec![C64::new(0.0, 0.0); dim]];
            let mut stage = vec![C64::new(0.0, 0.0); dim];
            for s in 0..steps {
                let t = s as f64 * h;
                let base = base_of(&z);
                let mut z0 = z.clone();
                sys.eval(t, &base, t, &mut z0, &mut k[0]);
                for (ki, ci) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
                    for d in 0..dim {
                        stage[d] = z[d] + k[ki - 1][d] * (ci * h);
                    }
                    let (done, rest) = k.split_at_mut(ki);
                    let _ = done;
                    sys.eval(t, &base, t + ci * h, &mut stage, &mut rest[0]);
                }
                for d in 0..dim {
                    z[d] += (k[0][d] + (k[1][d] + k[2][d]) * 2.0 + k[3][d]) * (h / 6.0);
                }
                if closed {
                    let v = expm_apply(&sys.m_jj_t, h, &base);
                    for (&j, vj) in free.iter().zip(v) {
                        z[j] = vj;
                    }
                }
                gron_free = gron.advance(&gron_free, h);
                rec.sol.steps += 1;
                let last = s + 1 == steps;
                let t_new = if last { t_end } else { (s + 1) as f64 * h };
                rec.visit(t_new, &z, gron.bound(), last || (s + 1) % opts.record_every == 0)?;
            }
        }
        Method::Dopri5 { atol, rtol } => {
            let mut t = 0.0;
            let mut k: Vec<Vec<C64>> = (0..7).map(|_| vec![C64::new(0.0, 0.0); dim]).collect();
            let mut stage = vec![C64::new(0.0, 0.0); dim];
            let mut base = base_of(&z);
            {
                let mut z0 = z.clone();
                sys.eval(t, &base, t, &mut z0, &mut k[0]);
            }
            let sc = |a: C64, b: C64| atol + rtol * a.norm().max(b.norm());
            let rms = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64);
            // initial step after Hairer, Norsett and Wanner
            let mut h = {
                let d0 = rms(&z.iter().map(|a| a.norm() / sc(*a, *a)).collect::<Vec<_>>());
                let d1 = rms(&z.iter().zip(&k[0]).map(|(a, f)| f.norm() / sc(*a, *a)).collect::<Vec<_>>());
                let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
                let h0 = h0.min(t_end);
                let mut z1: Vec<C64> = z.iter().zip(&k[0]).map(|(a, f)| a + f * h0).collect();
                let mut f1 = vec![C64::new(0.0, 0.0); dim];
                sys.eval(t, &base, t + h0, &mut z1, &mut f1);
                let d2 = rms(&z.iter().zip(f1.iter().zip(&k[0])).map(|(a, (x, y))| (x - y).norm() / sc(*a, *a)).collect::<Vec<_>>()) / h0;
                let dm = d1.max(d2);
                let h1 = if dm <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { libm::pow(0.01 / dm, 0.2) };
                (100.0 * h0).min(h1).min(t_end)
            };
            let mut znew = vec![C64::new(0.0, 0.0); dim];
            let mut accepted = 0usize;
            while t < t_end {
                if rec.sol.steps + rec.sol.rejected >= opts.max_steps {
                    return Err(Error::StepUnderflow { t, h });
                }
                let last = t + h >= t_end * (1.0 - 1e-14);
                if last {
                    h = t_end - t;
                }
                if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::StepUnderflow { t, h });
                }
                for s in 1..7 {
                    for d in 0..dim {
                        let mut acc = z[d];
                        for (j, a) in A[s].iter().enumerate().take(s) {
                            if *a != 0.0 {
                                acc += k[j][d] * (a * h);
                            }
                        }
                        stage[d] = acc;
                    }
                    let (head, tail) = k.split_at_mut(s);
                    let _ = head;
                    sys.eval(t, &base, t + C[s] * h, &mut stage, &mut tail[0]);
                    if s == 6 {
                        znew.copy_from_slice(&stage);
                    }
                }
                // error estimate on the integrated coordinates
                let mut err_sq = 0.0;
                for d in 0..dim {
                    let mut e = C64::new(0.0, 0.0);
                    for (j, ej) in E.iter().enumerate() {
                        if *ej != 0.0 {
                            e += k[j][d] * (ej * h);
                        }
                    }
                    let s = sc(z[d], znew[d]);
                    err_sq += (e.norm() / s) * (e.norm() / s);
                }
                let err = libm::sqrt(err_sq / dim as f64);
                if !err.is_finite() {
                    rec.sol.rejected += 1;
                    h *= 0.2;
                    continue;
                }
                if err <= 1.0 {
                    t = if last { t_end } else { t + h };
                    z.copy_from_slice(&znew);
                    // FSAL: stage 7 is the field at the new point
                    let k6 = k[6].clone();
                    k[0].copy_from_slice(&k6);
                    gron_free = gron.advance(&gron_free, h);
                    base = base_of(&z);
                    rec.sol.steps += 1;
                    accepted += 1;
                    let done = t >= t_end;
                    rec.visit(t, &z, gron.bound(), done || accepted.is_multiple_of(opts.record_every))?;
                    let fac = if err == 0.0 { 5.0 } else { (0.9 * libm::pow(err, -0.2)).clamp(0.2, 5.0) };
                    h *= fac;
                } else {
                    rec.sol.rejected += 1;
                    h *= (0.9 * libm::pow(err, -0.2)).max(0.2);
                }
            }
        }
    }
    Ok(rec.sol)
}

/// Semiflow residuals `||psi(s+t, u) - psi(s, psi(t, u))||` and
/// `|phi(s+t, u) - phi(t, u) - phi(s, psi(t, u))|`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SemiflowResidual {
    pub psi: f64,
    pub phi: f64,
}

pub fn semiflow_check(p: &AffineParams, u: &[C64], s: f64, t: f64, opts: &SolverOpts) -> Result<SemiflowResidual> {
    let whole = solve_riccati(p, u, s + t, opts)?;
    let first = solve_riccati(p, u, t, opts)?;
    let second = solve_riccati(p, first.final_psi(), s, opts)?;
    let psi = libm::sqrt(
        whole
            .final_psi()
            .iter()
            .zip(second.final_psi().iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum(),
    );
    let phi = (whole.final_phi() - first.final_phi() - second.final_phi()).norm();
    Ok(SemiflowResidual { psi, phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{IndexPartition, RVec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn scalar_cir(a: f64, rho: f64, lambda: f64) -> AffineParams {
        AffineParams::new(
            IndexPartition::new(1, &[0], &[]).unwrap(),
            vec![a].into(),
            RMat::from_diag(&[rho]),
            RMat::zeros(1, 1),
            vec![RMat::from_diag(&[lambda])],
            &[1.0],
        )
        .unwrap()
    }

    fn ou(rho: &[f64]) -> AffineParams {
        let n = rho.len();
        let free: Vec<usize> = (0..n).collect();
        AffineParams::new(
            IndexPartition::new(n, &[], &free).unwrap(),
            RVec::zeros(n),
            RMat::from_diag(rho),
            RMat::identity(n),
            vec![RMat::zeros(n, n); n],
            &vec![1.0; n],
        )
        .unwrap()
    }

    /// `psi(t) = rho u e^{rho t} / (rho - (lambda/2) u (e^{rho t} - 1))`.
    fn scalar_psi(u: f64, rho: f64, lambda: f64, t: f64) -> f64 {
        let e = libm::exp(rho * t);
        rho * u * e / (rho - 0.5 * lambda * u * (e - 1.0))
    }

    #[test]
    fn rhs_examples() {
        let p = scalar_cir(0.0, -0.5, 2.0);
        assert_abs_diff_eq!(rhs_psi(&p, &[c(-1.0, 0.0)]).unwrap()[0].re, 1.5, epsilon = 1e-15);
        assert_eq!(rhs_psi(&p, &[c(0.0, 0.0)]).unwrap()[0], c(0.0, 0.0));
        let q = ou(&[-1.0, 0.3]);
        let psi = [c(0.0, 2.0), c(0.0, -1.0)];
        let r = rhs_psi(&q, &psi).unwrap();
        assert_eq!(&*r, &[c(0.0, -2.0), c(0.0, -0.3)]);
    }

    #[test]
    fn rhs_phi_examples() {
        let mut p = ou(&[-1.0, -1.0]);
        p.n0 = RMat::zeros(2, 2);
        assert_eq!(rhs_phi(&p, &[c(0.0, 0.0), c(0.0, 0.0)]).unwrap(), c(0.0, 0.0));
        assert_eq!(rhs_phi(&p, &[c(1.0, 3.0), c(0.0, 2.0)]).unwrap(), c(0.0, 0.0));
        p.m0 = vec![1.0, 0.0].into();
        assert_eq!(rhs_phi(&p, &[c(-2.0, 1.0), c(0.0, 5.0)]).unwrap(), c(-2.0, 1.0));
    }

    #[test]
    fn psi_j_closed_examples() {
        let p = ou(&[-1.0, 0.5]);
        let u = [c(0.0, 1.0), c(0.0, -2.0)];
        assert_eq!(&*psi_j_closed(&p, &u, 0.0).unwrap(), &u);
        let v = psi_j_closed(&p, &u, 0.7).unwrap();
        assert_abs_diff_eq!(v[0].im, libm::exp(-0.7), epsilon = 1e-14);
        assert_abs_diff_eq!(v[1].im, -2.0 * libm::exp(0.35), epsilon = 1e-13);
        assert_eq!(v[0].re, 0.0);
        let z = ou(&[0.0, 0.0]);
        assert_eq!(&*psi_j_closed(&z, &u, 3.0).unwrap(), &u);
    }

    #[test]
    fn scalar_riccati_examples() {
        assert_eq!(scalar_riccati(-0.7, 0.0, 5.0), -0.7);
        assert!(scalar_riccati(-1e-12, 1.0, 1.0).abs() < 1e-11);
        assert_abs_diff_eq!(scalar_riccati(-1.0, 0.5, 1.0), -0.279_530_8, epsilon = 1e-6);
    }

    /// RK4 on `g' = C (g^2 - 2g)`.
    fn rk4_scalar(u0: f64, cc: f64, t: f64, steps: usize) -> f64 {
        let f = |g: f64| cc * (g * g - 2.0 * g);
        let h = t / steps as f64;
        let mut g = u0;
        for _ in 0..steps {
            let k1 = f(g);
            let k2 = f(g + 0.5 * h * k1);
            let k3 = f(g + 0.5 * h * k2);
            let k4 = f(g + h * k3);
            g += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        g
    }

    #[test]
    fn scalar_riccati_matches_rk4_oracle() {
        let oracle = rk4_scalar(-1.0, 0.5, 1.0, 1_000_000);
        assert_abs_diff_eq!(scalar_riccati(-1.0, 0.5, 1.0), oracle, epsilon = 1e-12);
        // frozen value of the oracle
        assert_abs_diff_eq!(oracle, -0.279_530_844_388_958_7, epsilon = 1e-12);
    }

    #[test]
    fn scalar_riccati_is_monotone() {
        let g = |u, cc| scalar_riccati(u, cc, 0.8);
        assert!(g(-1.0, 0.5) < g(-0.5, 0.5));
        assert!(g(-1.0, 0.5) < g(-1.0, 1.0));
        assert!(g(-3.0, 2.0) < 0.0);
    }

    #[test]
    fn cir_closed_form_with_both_schemes() {
        let p = scalar_cir(1.0, -1.0, 2.0);
        let exact = scalar_psi(-1.0, -1.0, 2.0, 1.0);
        assert_abs_diff_eq!(exact, -0.225_399_673_560_564_1, epsilon = 1e-15);
        let a = solve_riccati(&p, &[c(-1.0, 0.0)], 1.0, &SolverOpts::default()).unwrap();
        assert_abs_diff_eq!(a.final_psi()[0].re, exact, epsilon = 1e-8);
        let r = solve_riccati(&p, &[c(-1.0, 0.0)], 1.0, &SolverOpts::rk4(1e-3)).unwrap();
        assert_abs_diff_eq!(r.final_psi()[0].re, exact, epsilon = 1e-11);
        assert_eq!(r.grid[0], 0.0);
        assert_eq!(r.phi[0], c(0.0, 0.0));
        assert_eq!(r.psi[0][0], c(-1.0, 0.0));
        assert_eq!(r.final_time(), 1.0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = scalar_cir(1.0, -1.0, 2.0);
        let exact = scalar_psi(-1.5, -1.0, 2.0, 1.0);
        let err = |dt: f64| {
            let s = solve_riccati(&p, &[c(-1.5, 0.0)], 1.0, &SolverOpts::rk4(dt)).unwrap();
            (s.final_psi()[0].re - exact).abs()
        };
        let mut errs = Vec::new();
        let mut dt = 0.1;
        while dt > 0.01 * 0.99 {
            errs.push(err(dt));
            dt /= 2.0;
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn ou_matches_closed_form() {
        let p = ou(&[-1.0, 0.4, -0.2]);
        let u = [c(0.0, 1.0), c(0.0, -0.5), c(0.0, 2.0)];
        for free_block in [FreeBlock::ClosedForm, FreeBlock::Integrate] {
            let opts = SolverOpts { free_block, ..SolverOpts::dopri5(1e-12, 1e-12) };
            let s = solve_riccati(&p, &u, 1.3, &opts).unwrap();
            for (k, rho) in [-1.0, 0.4, -0.2].iter().enumerate() {
                assert_abs_diff_eq!(s.final_psi()[k].im, u[k].im * libm::exp(rho * 1.3), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn origin_is_an_equilibrium() {
        let mut p = scalar_cir(0.0, -1.0, 2.0);
        p.n0 = RMat::zeros(1, 1);
        let s = solve_riccati(&p, &[c(0.0, 0.0)], 2.0, &SolverOpts::default()).unwrap();
        assert!(s.phi.iter().all(|z| *z == c(0.0, 0.0)));
        assert!(s.psi.iter().all(|v| v[0] == c(0.0, 0.0)));
    }

    #[test]
    fn rejects_u_outside_domain() {
        let p = scalar_cir(1.0, -1.0, 2.0);
        let e = solve_riccati(&p, &[c(0.5, 0.0)], 1.0, &SolverOpts::default());
        assert!(matches!(e, Err(Error::OutsideDomain { coordinate: 0, .. })));
    }

    #[test]
    fn gronwall_examples() {
        // u_J = 0: h == 1 and the bound has a closed form
        let p = scalar_cir(1.0, -1.0, 2.0);
        assert_abs_diff_eq!(gronwall_constant(&p), 8.5, epsilon = 1e-12);
        let closed = 1.0 + 2.0 * (libm::exp(0.85) - 1.0);
        assert_abs_diff_eq!(closed, 3.679, epsilon = 1e-3);
        let simpson = gronwall_bound(&p, &[c(-1.0, 0.0)], 0.1, 64).unwrap();
        assert_abs_diff_eq!(simpson, closed, epsilon = 1e-9);
        let reduced = gronwall_bound_reduced(&p, &[c(-1.0, 0.0)], 0.1, 64).unwrap();
        assert_abs_diff_eq!(reduced, closed, epsilon = 1e-12);
        assert_eq!(gronwall_bound(&p, &[c(0.0, 0.0)], 0.0, 8).unwrap(), 0.0);
    }

    #[test]
    fn gronwall_quadratures_agree_with_free_block() {
        let part = IndexPartition::new(3, &[0], &[1, 2]).unwrap();
        let mut m = RMat::from_diag(&[-1.0, -0.3, 0.2]);
        m[(1, 2)] = 0.4;
        m[(1, 0)] = 0.2;
        let n1 = RMat::from_rows(&[vec![1.0, 0.3, 0.0], vec![0.3, 1.0, 0.0], vec![0.0, 0.0, 0.5]]).unwrap();
        let p = AffineParams::new(part, RVec::zeros(3), m, RMat::zeros(3, 3), vec![n1, RMat::zeros(3, 3), RMat::zeros(3, 3)], &[1.0; 3])
            .unwrap();
        let u = [c(-0.5, 0.3), c(0.0, 0.8), c(0.0, -0.4)];
        let a = gronwall_bound(&p, &u, 0.2, 200).unwrap();
        let b = gronwall_bound_reduced(&p, &u, 0.2, 200).unwrap();
        assert!((a - b).abs() <= 1e-8 * b, "{a} vs {b}");
    }

    #[test]
    fn semiflow_examples() {
        let p = scalar_cir(1.0, -1.0, 2.0);
        let u = [c(-1.0, 0.0)];
        let r = semiflow_check(&p, &u, 0.0, 0.7, &SolverOpts::default()).unwrap();
        assert!(r.psi < 1e-15 && r.phi < 1e-15);
        let r = semiflow_check(&p, &u, 0.7, 0.0, &SolverOpts::default()).unwrap();
        assert!(r.psi < 1e-15 && r.phi < 1e-15);
        let r = semiflow_check(&p, &u, 0.5, 0.5, &SolverOpts::rk4(1e-4)).unwrap();
        assert!(r.psi <= 1e-8 && r.phi <= 1e-8, "{r:?}");
    }

    #[test]
    fn scalar_comparison_bound_holds() {
        for (rho, lambda, u0) in [(-1.0, 2.0, -1.0), (0.5, 1.0, -2.0), (-0.2, 4.0, -0.3)] {
            let p = scalar_cir(0.7, rho, lambda);
            let c1 = 0.5 * f64::max(lambda, f64::abs(rho));
            let s = solve_riccati(&p, &[c(u0, 0.4)], 2.0, &SolverOpts::default()).unwrap();
            for (t, psi) in s.grid.iter().zip(&s.psi) {
                assert!(psi[0].re <= scalar_riccati(u0, c1, *t) + 1e-8);
            }
        }
    }

    #[test]
    fn warn_mode_collects_instead_of_failing() {
        // n0 on the cone block drives Re phi positive
        let mut p = scalar_cir(0.0, -1.0, 2.0);
        p.n0 = RMat::from_diag(&[4.0]);
        let e = solve_riccati(&p, &[c(-1.0, 0.0)], 1.0, &SolverOpts::default());
        assert!(matches!(e, Err(Error::CertificateViolation { kind: CertificateKind::RePhi, .. })));
        let opts = SolverOpts { mode: CertMode::Warn, ..SolverOpts::default() };
        let s = solve_riccati(&p, &[c(-1.0, 0.0)], 1.0, &opts).unwrap();
        assert!(s.violations.iter().any(|v| v.kind == CertificateKind::RePhi));
    }

    fn rand_psi(n: usize) -> impl Strategy<Value = Vec<C64>> {
        proptest::collection::vec((-2.0..2.0f64, -2.0..2.0f64), n).prop_map(|v| v.into_iter().map(|(a, b)| c(a, b)).collect())
    }

    proptest! {
        #[test]
        fn rhs_forms_agree(psi in rand_psi(3), entries in proptest::collection::vec(-1.0..1.0f64, 9), lam in 0.0..2.0f64, kap in 0.0..1.0f64) {
            let part = IndexPartition::new(3, &[0], &[1, 2]).unwrap();
            let mut m = RMat::from_row_major(3, 3, entries).unwrap();
            m[(0, 1)] = 0.0;
            m[(0, 2)] = 0.0;
            let kap = kap.min(lam);
            let n1 = RMat::from_rows(&[vec![lam, kap, 0.0], vec![kap, lam, 0.0], vec![0.0, 0.0, lam]]).unwrap();
            let p = AffineParams::new(part, RVec::zeros(3), m, RMat::zeros(3, 3), vec![n1, RMat::zeros(3, 3), RMat::zeros(3, 3)], &[1.0; 3]).unwrap();
            let a = rhs_psi(&p, &psi).unwrap();
            let b = rhs_psi_semilinear(&p, &psi).unwrap();
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).norm() <= 1e-13 * (1.0 + a[k].norm()));
            }
        }
    }
}
