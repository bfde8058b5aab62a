//! Cone-preserving Euler-Maruyama in the transformed coordinates
//! `Y = Lambda X`, exact Ornstein-Uhlenbeck sampling, and the path-level
//! parallelism contract.
//!
//! The noise enters through standardized Brownian coordinates `beta`: the
//! increment covariance of `Y` over a step is `S_bar(Y) dt`, so the noise
//! covariance `Sigma_W` cancels and is never sampled. Each path owns a
//! ChaCha8 stream selected by `(master_seed, path_id)`, which makes an
//! ensemble independent of how paths are scheduled.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hilbert::{self, RMat, RVec};
use crate::params::AffineParams;
use crate::transform::TransformPack;

/// Tolerance on the initial cone coordinates.
const X0_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Scheme {
    /// Coefficients at the positive part, negative excursions kept in the
    /// internal state, stored states clamped at 0.
    FullTruncation,
    /// Coefficients at the state, state clamped at 0 after every step.
    Absorbed,
    /// Coefficients at the positive part, nothing clamped. Diagnostic only:
    /// stored states may leave the cone.
    Unclamped,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Store {
    Terminal,
    /// Every k-th step, plus the start and the terminal step.
    Every(usize),
    /// The grid steps closest to these times (each must lie on the grid).
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: u64,
    pub scheme: Scheme,
    pub master_seed: u64,
    pub store: Store,
    /// Standard normals drawn per coordinate and step; a run at `2 dt` with
    /// two substeps sees exactly the Brownian path of a run at `dt`.
    pub substeps: u32,
    /// Reuse the free-block noise root for this many steps.
    pub freeze_root: u32,
    /// Accumulate the discounted noise sum per path (see [`PathRecord::control`]).
    pub control_variate: bool,
}

impl SimConfig {
    pub fn new(t_end: f64, dt: f64, n_paths: u64, master_seed: u64) -> Self {
        Self {
            t_end,
            dt,
            n_paths,
            scheme: Scheme::FullTruncation,
            master_seed,
            store: Store::Terminal,
            substeps: 1,
            freeze_root: 1,
            control_variate: false,
        }
    }

    /// Number of steps; `dt` must divide `t_end`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.t_end > 0.0 && self.t_end.is_finite() && self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig("t_end and dt must be positive and finite".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
        }
        if self.substeps == 0 || self.freeze_root == 0 {
            return Err(Error::InvalidConfig("substeps and freeze_root must be at least 1".into()));
        }
        let k = libm::round(self.t_end / self.dt);
        if k < 1.0 || (k * self.dt - self.t_end).abs() > 1e-9 * self.t_end {
            return Err(Error::InvalidConfig("dt must divide t_end".into()));
        }
        Ok(k as usize)
    }

    /// Sorted step indices that are stored.
    pub fn stored_steps(&self) -> Result<Vec<usize>> {
        let steps = self.steps()?;
        let mut out: Vec<usize> = match &self.store {
            Store::Terminal => vec![steps],
            Store::Every(k) => {
                if *k == 0 {
                    return Err(Error::InvalidConfig("store interval must be at least 1".into()));
                }
                let mut v: Vec<usize> = (0..=steps).step_by(*k).collect();
                v.push(steps);
                v
            }
            Store::Times(ts) => {
                let mut v = Vec::with_capacity(ts.len());
                for &t in ts {
                    let k = libm::round(t / self.dt);
                    if !(0.0..=steps as f64).contains(&k) || (k * self.dt - t).abs() > 1e-9 * self.t_end {
                        return Err(Error::InvalidConfig(alloc::format!("store time {t} is not on the grid")));
                    }
                    v.push(k as usize);
                }
                v
            }
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn time_of(&self, step: usize, steps: usize) -> f64 {
        if step == steps {
            self.t_end
        } else {
            step as f64 * self.dt
        }
    }
}

/// One simulated path.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathRecord {
    pub path_id: u64,
    /// Stored states in original coordinates, row-major `times x n`.
    pub states: Vec<f64>,
    /// Most negative cone coordinate seen before clamping (0 if none).
    pub min_pre_clamp: f64,
    /// Number of (step, coordinate) pairs that needed clamping.
    pub clamped: u64,
    /// `Lambda^{-1} c_K` with `c_{k+1} = (Id + M_bar dt) c_k + noise_k`: a
    /// mean-zero martingale transform of the increments, so `X_T - control`
    /// has the mean of `X_T` at a fraction of its variance. Empty unless
    /// requested.
    pub control: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathEnsemble {
    pub config: SimConfig,
    pub x0: RVec,
    pub n: usize,
    pub cone: Vec<usize>,
    pub times: Vec<f64>,
    pub paths: Vec<PathRecord>,
}

impl PathEnsemble {
    pub fn state(&self, path: usize, time_index: usize) -> &[f64] {
        &self.paths[path].states[time_index * self.n..(time_index + 1) * self.n]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.times.len() - 1)
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * self.config.t_end.max(1.0))
    }

    /// Stored cone coordinates below `-tol`.
    pub fn stored_cone_violations(&self, tol: f64) -> u64 {
        let mut count = 0;
        for path in &self.paths {
            for row in path.states.chunks(self.n) {
                count += self.cone.iter().filter(|&&i| row[i] < -tol).count() as u64;
            }
        }
        count
    }
}

/// Executes the per-path closure for ids `0..n`, returning results in id order.
pub trait PathRunner {
    fn run<T, F>(&self, n: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send;
}

/// Runs paths one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl PathRunner for Serial {
    fn run<T, F>(&self, n: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// The random stream of one path.
pub fn path_rng(master_seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_id);
    rng
}

/// `n` independent `N(0, dt)` draws.
pub fn wiener_betas<R: Rng>(n: usize, dt: f64, rng: &mut R) -> RVec {
    let s = libm::sqrt(dt);
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            s * z
        })
        .collect()
}

/// Precomputed transformed coefficients for the Euler steps.
#[derive(Debug, Clone)]
pub struct Stepper {
    n: usize,
    cone: Vec<usize>,
    free: Vec<usize>,
    lambda: Vec<f64>,
    m0: Vec<f64>,
    m: RMat,
    n0_jj: RMat,
    ni_jj: Vec<RMat>,
    jj_diagonal: bool,
    lambda_inv: RMat,
}

/// Square root of the free-block noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum FreeRoot {
    Diagonal(Vec<f64>),
    Full(RMat),
}

/// Reusable buffers for one path.
#[derive(Debug, Clone)]
pub struct Scratch {
    yp: Vec<f64>,
    db: Vec<f64>,
}

impl Scratch {
    pub fn new(n: usize) -> Self {
        Self { yp: vec![0.0; n], db: vec![0.0; n] }
    }
}

impl Stepper {
    pub fn new(pack: &TransformPack) -> Self {
        let pb = &pack.params_bar;
        let part = &pb.partition;
        let cone = part.cone().to_vec();
        let free = part.free().to_vec();
        let n0_jj = pb.n0.submatrix(&free, &free);
        let ni_jj: Vec<RMat> = cone.iter().map(|&i| pb.nk[i].submatrix(&free, &free)).collect();
        let diagonal = |a: &RMat| (0..a.rows()).all(|r| (0..a.cols()).all(|c| r == c || a[(r, c)] == 0.0));
        let jj_diagonal = diagonal(&n0_jj) && ni_jj.iter().all(diagonal);
        Self {
            n: pb.n(),
            cone,
            free,
            lambda: pack.lambda.clone(),
            m0: pb.m0.to_vec(),
            m: pb.m.clone(),
            n0_jj,
            ni_jj,
            jj_diagonal,
            lambda_inv: pack.lambda_inv.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn positive_part_into(&self, y: &[f64], yp: &mut [f64]) {
        yp.copy_from_slice(y);
        for &i in &self.cone {
            yp[i] = yp[i].max(0.0);
        }
    }

    /// Cone block of one Euler step: coordinate `i` of `out` becomes
    /// `y_i + (m0_i + M_i y+) dt + sqrt(lambda_i y+_i) dbeta_i`. Admissible
    /// drifts have `M_IJ = 0`, so only the cone block of the row contributes.
    pub fn step_cone(&self, y: &[f64], dbeta: &[f64], dt: f64, out: &mut [f64], scratch: &mut Scratch) {
        self.positive_part_into(y, &mut scratch.yp);
        let yp = &scratch.yp;
        for (a, &i) in self.cone.iter().enumerate() {
            let drift = self.m0[i] + self.m.row(i).iter().zip(yp.iter()).map(|(a, x)| a * x).sum::<f64>();
            out[i] = y[i] + drift * dt + libm::sqrt(self.lambda[a] * yp[i]) * dbeta[i];
        }
    }

    /// `S_bar(y+_I)_JJ^{1/2}`.
    pub fn free_root(&self, y: &[f64]) -> Result<FreeRoot> {
        if self.jj_diagonal {
            let d = (0..self.free.len())
                .map(|b| {
                    let mut v = self.n0_jj[(b, b)];
                    for (&i, nij) in self.cone.iter().zip(&self.ni_jj) {
                        v += y[i].max(0.0) * nij[(b, b)];
                    }
                    libm::sqrt(v.max(0.0))
                })
                .collect();
            return Ok(FreeRoot::Diagonal(d));
        }
        let mut s = self.n0_jj.clone();
        for (&i, nij) in self.cone.iter().zip(&self.ni_jj) {
            let yi = y[i].max(0.0);
            if yi != 0.0 {
                s.axpy(yi, nij);
            }
        }
        Ok(FreeRoot::Full(hilbert::psd_sqrt(&s, 1e-12 * (1.0 + s.max_abs()))?))
    }

    /// Free block of one Euler step with a given noise root:
    /// `y_J + (m0_J + M_J y+) dt + root dbeta_J`.
    pub fn step_free(&self, y: &[f64], dbeta: &[f64], dt: f64, root: &FreeRoot, out: &mut [f64], scratch: &mut Scratch) {
        self.positive_part_into(y, &mut scratch.yp);
        let yp = &scratch.yp;
        let nf = self.free.len();
        let db = &mut scratch.db[..nf];
        for (b, &j) in self.free.iter().enumerate() {
            db[b] = dbeta[j];
        }
        for (b, &j) in self.free.iter().enumerate() {
            let drift = self.m0[j] + self.m.row(j).iter().zip(yp.iter()).map(|(a, x)| a * x).sum::<f64>();
            let noise = match root {
                FreeRoot::Diagonal(d) => d[b] * db[b],
                FreeRoot::Full(r) => r.row(b).iter().zip(db.iter()).map(|(a, x)| a * x).sum(),
            };
            out[j] = y[j] + drift * dt + noise;
        }
    }

    /// `c <- c + M_bar c dt + (next - y - mu_bar(y+) dt)`.
    fn advance_control(&self, y: &[f64], next: &[f64], dt: f64, c: &mut [f64], scratch: &mut Scratch) {
        self.positive_part_into(y, &mut scratch.yp);
        let yp = &scratch.yp;
        let mc = self.m.apply(c);
        for k in 0..self.n {
            let drift = self.m0[k] + self.m.row(k).iter().zip(yp.iter()).map(|(a, x)| a * x).sum::<f64>();
            c[k] += mc[k] * dt + (next[k] - y[k] - drift * dt);
        }
    }

    /// `X = Lambda^{-1} Y`, cone coordinates clamped at 0 when `clamp`.
    fn back_into(&self, y: &[f64], clamp: bool, scratch: &mut Scratch, out: &mut Vec<f64>) {
        if clamp {
            self.positive_part_into(y, &mut scratch.yp);
        } else {
            scratch.yp.copy_from_slice(y);
        }
        out.extend_from_slice(&self.lambda_inv.apply(&scratch.yp));
    }
}

fn finite_or_blowup(v: &[f64], path: u64, step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp { path, step })
    }
}

/// One full-truncation Euler step of the cone block (see [`Stepper::step_cone`]).
pub fn euler_step_i(pack: &TransformPack, y: &[f64], dbeta: &[f64], dt: f64) -> Result<RVec> {
    let st = Stepper::new(pack);
    let mut out = RVec::from(y);
    st.step_cone(y, dbeta, dt, &mut out, &mut Scratch::new(st.n));
    finite_or_blowup(&out, 0, 1)?;
    Ok(out)
}

/// One Euler step of the free block (see [`Stepper::step_free`]).
pub fn euler_step_j(pack: &TransformPack, y: &[f64], dbeta: &[f64], dt: f64) -> Result<RVec> {
    let st = Stepper::new(pack);
    let root = st.free_root(y)?;
    let mut out = RVec::from(y);
    st.step_free(y, dbeta, dt, &root, &mut out, &mut Scratch::new(st.n));
    finite_or_blowup(&out, 0, 1)?;
    Ok(out)
}

fn simulate_one(st: &Stepper, cfg: &SimConfig, steps: usize, keep: &[usize], y0: &[f64], path_id: u64) -> Result<PathRecord> {
    let n = st.n;
    let scheme = cfg.scheme;
    let mut rng = path_rng(cfg.master_seed, path_id);
    let mut scratch = Scratch::new(n);
    let mut y = y0.to_vec();
    let mut next = y.clone();
    let mut dbeta = vec![0.0; n];
    let sub = cfg.substeps as usize;
    let scale = libm::sqrt(cfg.dt / sub as f64);
    let clamp_store = scheme != Scheme::Unclamped;
    let mut rec =
        PathRecord { path_id, states: Vec::with_capacity(keep.len() * n), min_pre_clamp: 0.0, clamped: 0, control: Vec::new() };
    let mut control = if cfg.control_variate { vec![0.0; n] } else { Vec::new() };
    let mut keep_iter = keep.iter().peekable();
    if keep_iter.peek() == Some(&&0) {
        st.back_into(&y, clamp_store, &mut scratch, &mut rec.states);
        keep_iter.next();
    }
    let mut root: Option<FreeRoot> = None;
    for step in 0..steps {
        dbeta.iter_mut().for_each(|b| *b = 0.0);
        for _ in 0..sub {
            for b in dbeta.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *b += z;
            }
        }
        dbeta.iter_mut().for_each(|b| *b *= scale);
        st.step_cone(&y, &dbeta, cfg.dt, &mut next, &mut scratch);
        if !st.free.is_empty() {
            if root.is_none() || step % cfg.freeze_root as usize == 0 {
                root = Some(st.free_root(&y)?);
            }
            st.step_free(&y, &dbeta, cfg.dt, root.as_ref().expect("root computed above"), &mut next, &mut scratch);
        }
        if cfg.control_variate {
            st.advance_control(&y, &next, cfg.dt, &mut control, &mut scratch);
        }
        for &i in &st.cone {
            if next[i] < 0.0 {
                rec.clamped += 1;
                rec.min_pre_clamp = rec.min_pre_clamp.min(next[i]);
                if scheme == Scheme::Absorbed {
                    next[i] = 0.0;
                }
            }
        }
        finite_or_blowup(&next, path_id, step + 1)?;
        core::mem::swap(&mut y, &mut next);
        if keep_iter.peek() == Some(&&(step + 1)) {
            st.back_into(&y, clamp_store, &mut scratch, &mut rec.states);
            keep_iter.next();
        }
    }
    if cfg.control_variate {
        rec.control = st.lambda_inv.apply(&control).into_inner();
    }
    Ok(rec)
}

/// Simulates with a prebuilt transform pack.
pub fn simulate_with_pack<R: PathRunner>(pack: &TransformPack, x0: &[f64], cfg: &SimConfig, runner: &R) -> Result<PathEnsemble> {
    let pb = &pack.params_bar;
    let n = pb.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("x0"));
    }
    if let Some(&i) = pb.partition.cone().iter().find(|&&i| x0[i] < -X0_TOL) {
        return Err(Error::NegativeState { coordinate: i, value: x0[i] });
    }
    let steps = cfg.steps()?;
    let keep = cfg.stored_steps()?;
    let st = Stepper::new(pack);
    let y0 = pack.forward(x0);
    let paths = runner.run(cfg.n_paths, |id| simulate_one(&st, cfg, steps, &keep, &y0, id))?;
    Ok(PathEnsemble {
        config: cfg.clone(),
        x0: RVec::from(x0),
        n,
        cone: pb.partition.cone().to_vec(),
        times: keep.iter().map(|&k| cfg.time_of(k, steps)).collect(),
        paths,
    })
}

/// Simulates `dX = mu(X) dt + sigma(X) dW` through the transformed system.
pub fn simulate_paths_with<R: PathRunner>(p: &AffineParams, x0: &[f64], cfg: &SimConfig, runner: &R) -> Result<PathEnsemble> {
    let pack = TransformPack::build(p)?;
    simulate_with_pack(&pack, x0, cfg, runner)
}

/// [`simulate_paths_with`] on the calling thread.
pub fn simulate_paths(p: &AffineParams, x0: &[f64], cfg: &SimConfig) -> Result<PathEnsemble> {
    simulate_paths_with(p, x0, cfg, &Serial)
}

/// `E[X_t] = e^{Mt} x0 + int_0^t e^{Ms} m0 ds`, the solution of the
/// moment equation `m' = m0 + M m`, from one augmented exponential.
pub fn affine_mean(p: &AffineParams, x0: &[f64], t: f64) -> Result<RVec> {
    let n = p.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
    }
    let mut aug = RMat::zeros(n + 1, n + 1);
    for r in 0..n {
        for c in 0..n {
            aug[(r, c)] = p.m[(r, c)] * t;
        }
        aug[(r, n)] = p.m0[r] * t;
    }
    let mut x = x0.to_vec();
    x.push(1.0);
    Ok(hilbert::expm(&aug).apply(&x).iter().take(n).copied().collect())
}

/// Mean and covariance of the Ornstein-Uhlenbeck law at time `t`:
/// `e^{Mt} x0 + int_0^t e^{Ms} m0 ds` and `int_0^t e^{Ms} n0 e^{M^T s} ds`,
/// both read off block-matrix exponentials.
pub fn ou_moments(p: &AffineParams, x0: &[f64], t: f64) -> Result<(RVec, RMat)> {
    if !p.partition.cone().is_empty() {
        return Err(Error::Precondition("exact sampling needs an empty cone index set".into()));
    }
    let n = p.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
    }
    let mean = affine_mean(p, x0, t)?;
    // Van Loan: exp(t [[-M, Q], [0, M^T]]) = [[., F12], [0, F22]], cov = F22^T F12
    let mut vl = RMat::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            vl[(r, c)] = -p.m[(r, c)] * t;
            vl[(r, n + c)] = p.n0[(r, c)] * t;
            vl[(n + r, n + c)] = p.m[(c, r)] * t;
        }
    }
    let f = hilbert::expm(&vl);
    let top: Vec<usize> = (0..n).collect();
    let bottom: Vec<usize> = (n..2 * n).collect();
    let f12 = f.submatrix(&top, &bottom);
    let f22 = f.submatrix(&bottom, &bottom);
    let mut cov = f22.transpose().matmul(&f12);
    // symmetrize the round-off
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (cov[(r, c)] + cov[(c, r)]);
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    Ok((mean, cov))
}

/// One exact draw of `X_t` for the pure Ornstein-Uhlenbeck case.
pub fn ou_exact<R: Rng>(p: &AffineParams, x0: &[f64], t: f64, rng: &mut R) -> Result<RVec> {
    let (mean, cov) = ou_moments(p, x0, t)?;
    if t == 0.0 {
        return Ok(RVec::from(x0));
    }
    let root = hilbert::psd_sqrt(&cov, 1e-12 * (1.0 + cov.max_abs()))?;
    let z = wiener_betas(p.n(), 1.0, rng);
    let noise = root.apply(&z);
    Ok(mean.iter().zip(noise.iter()).map(|(a, b)| a + b).collect())
}

/// An ensemble of exact Ornstein-Uhlenbeck terminal draws, one stream per path.
pub fn ou_exact_ensemble<R: PathRunner>(p: &AffineParams, x0: &[f64], cfg: &SimConfig, runner: &R) -> Result<PathEnsemble> {
    let (mean, cov) = ou_moments(p, x0, cfg.t_end)?;
    let root = hilbert::psd_sqrt(&cov, 1e-12 * (1.0 + cov.max_abs()))?;
    let n = p.n();
    let paths = runner.run(cfg.n_paths, |id| {
        let mut rng = path_rng(cfg.master_seed, id);
        let z = wiener_betas(n, 1.0, &mut rng);
        let noise = root.apply(&z);
        let states = mean.iter().zip(noise.iter()).map(|(a, b)| a + b).collect();
        Ok(PathRecord { path_id: id, states, min_pre_clamp: 0.0, clamped: 0, control: Vec::new() })
    })?;
    Ok(PathEnsemble {
        config: SimConfig { store: Store::Terminal, ..cfg.clone() },
        x0: RVec::from(x0),
        n,
        cone: Vec::new(),
        times: vec![cfg.t_end],
        paths,
    })
}
