//! Statistical and structural properties of the path simulator.

use affine_hilbert::families::{make_cir, make_heston, random_admissible, shipped, FamilyConstants, FamilySpec};
use affine_hilbert::simulate::{
    euler_step_j, ou_exact_ensemble, ou_moments, path_rng, simulate_paths_with, simulate_with_pack, wiener_betas, Scratch, Stepper,
};
use affine_hilbert::verify::{cone_invariance_test, pairwise_sum, pathwise_uniqueness_test, VerifyConfig};
use affine_hilbert::{AffineParams, PathRunner, RMat, Result, Scheme, Serial, SimConfig, Store, TransformPack};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn family(name: &str) -> AffineParams {
    shipped().into_iter().find(|(n, _)| *n == name).unwrap().1.build().unwrap()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let var = pairwise_sum(&xs.iter().map(|x| (x - mean) * (x - mean)).collect::<Vec<_>>()) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn sample_cov(rows: &[Vec<f64>]) -> (Vec<f64>, RMat) {
    let n = rows[0].len();
    let k = rows.len() as f64;
    let mean: Vec<f64> = (0..n).map(|a| pairwise_sum(&rows.iter().map(|r| r[a]).collect::<Vec<_>>()) / k).collect();
    let mut cov = RMat::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let prods: Vec<f64> = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).collect();
            cov[(a, b)] = pairwise_sum(&prods) / (k - 1.0);
        }
    }
    (mean, cov)
}

/// Standard error of a Gaussian sample covariance entry.
fn cov_se(sigma: &RMat, a: usize, b: usize, k: f64) -> f64 {
    ((sigma[(a, a)] * sigma[(b, b)] + sigma[(a, b)] * sigma[(a, b)]) / k).sqrt()
}

#[test]
fn cir_terminal_mean_matches_moment_equation() {
    let p = family("cir1");
    let dt = 1e-3;
    let e = simulate_paths_with(&p, &[0.0], &SimConfig::new(1.0, dt, 100_000, 17), &Serial).unwrap();
    let xs: Vec<f64> = (0..e.paths.len()).map(|k| e.terminal(k)[0]).collect();
    let (mean, se) = mean_and_se(&xs);
    let exact = 1.0 - (-1.0f64).exp();
    assert!((mean - exact).abs() <= 3.0 * se + dt, "mean {mean}, exact {exact}, se {se}");
}

#[test]
fn free_block_increments_have_the_volatility_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = loop {
        let q = random_admissible(&mut rng, 5).unwrap();
        if q.partition.cone().len() == 2 {
            break q;
        }
    };
    let pack = TransformPack::build(&p).unwrap();
    let y = vec![0.7, 1.3, 0.2, -0.4, 0.9];
    let free = p.partition.free().to_vec();
    let s_jj = pack.params_bar.s_op(&y).submatrix(&free, &free);
    let dt = 0.01;
    let draws = 1_000_000;
    let mut noise = ChaCha8Rng::seed_from_u64(99);
    let rows: Vec<Vec<f64>> = (0..draws)
        .map(|_| {
            let db = wiener_betas(5, dt, &mut noise);
            let next = euler_step_j(&pack, &y, &db, dt).unwrap();
            free.iter().map(|&j| next[j] - y[j]).collect()
        })
        .collect();
    let (_, cov) = sample_cov(&rows);
    let target = s_jj.scale(dt);
    for a in 0..free.len() {
        for b in 0..free.len() {
            let band = 4.0 * cov_se(&target, a, b, draws as f64);
            assert!((cov[(a, b)] - target[(a, b)]).abs() <= band, "entry ({a},{b}): {} vs {}", cov[(a, b)], target[(a, b)]);
        }
    }
    // cone coordinates are left alone by the free step
    let next = euler_step_j(&pack, &y, &[0.3; 5], dt).unwrap();
    assert_eq!(next[0], y[0]);
    assert_eq!(next[1], y[1]);
}

/// Mean and covariance of the Euler chain `x <- x + (m0 + M x) dt + sqrt(n0 dt) z`.
fn euler_ou_moments(p: &AffineParams, x0: &[f64], dt: f64, steps: usize) -> (Vec<f64>, RMat) {
    let n = p.n();
    let step = RMat::identity(n).add(&p.m.scale(dt));
    let mut mean = x0.to_vec();
    let mut cov = RMat::zeros(n, n);
    for _ in 0..steps {
        let mx = step.apply(&mean);
        mean = (0..n).map(|k| mx[k] + p.m0[k] * dt).collect();
        cov = step.matmul(&cov).matmul(&step.transpose()).add(&p.n0.scale(dt));
    }
    (mean, cov)
}

#[test]
fn euler_ou_agrees_with_exact_law() {
    let p = family("ou3");
    let x0 = [1.0, -0.5, 0.25];
    let (t, dt, paths) = (1.0, 1.0 / 256.0, 100_000u64);
    let cfg = SimConfig::new(t, dt, paths, 3);
    let (mean, cov) = ou_moments(&p, &x0, t).unwrap();
    let (e_mean, e_cov) = euler_ou_moments(&p, &x0, dt, 256);

    let euler = simulate_paths_with(&p, &x0, &cfg, &Serial).unwrap();
    let exact = ou_exact_ensemble(&p, &x0, &cfg, &Serial).unwrap();
    for (ens, bias_mean, bias_cov) in [
        (&euler, e_mean.iter().zip(mean.iter()).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>(), e_cov.sub(&cov)),
        (&exact, vec![0.0; 3], RMat::zeros(3, 3)),
    ] {
        let rows: Vec<Vec<f64>> = (0..ens.paths.len()).map(|k| ens.terminal(k).to_vec()).collect();
        let (m, c) = sample_cov(&rows);
        for a in 0..3 {
            let se = (cov[(a, a)] / paths as f64).sqrt();
            assert!((m[a] - mean[a]).abs() <= 4.0 * se + bias_mean[a], "mean {a}: {} vs {}", m[a], mean[a]);
            for b in 0..3 {
                let band = 4.0 * cov_se(&cov, a, b, paths as f64) + bias_cov[(a, b)].abs();
                assert!((c[(a, b)] - cov[(a, b)]).abs() <= band, "cov ({a},{b}): {} vs {}", c[(a, b)], cov[(a, b)]);
            }
        }
    }
}

/// Paired one-dimensional square-root steps on shared noise from ordered
/// internal states. The scalar map `y + (a + rho y) dt + sqrt(lambda y) db`
/// is increasing on `[y, y']` exactly when
/// `db >= -2 (1 + rho dt) sqrt(max(y, 0) / lambda)`.
#[test]
fn shared_noise_coupling_is_ordered_where_the_step_is_monotone() {
    let p = family("cir1");
    let pack = TransformPack::build(&p).unwrap();
    let st = Stepper::new(&pack);
    let (lambda, rho, dt) = (2.0, -1.0, 0.01);
    let mut scratch = Scratch::new(1);
    let (mut monotone_steps, mut flips) = (0u64, 0u64);
    for (lo, hi) in [(0.0, 0.01), (0.5, 0.6), (1.0, 1.0 + 1e-6)] {
        for path in 0..1000u64 {
            let mut rng = path_rng(7, path);
            let (mut y, mut z) = (vec![lo], vec![hi]);
            let (mut ny, mut nz) = (vec![0.0], vec![0.0]);
            for _ in 0..100 {
                let db = wiener_betas(1, dt, &mut rng);
                st.step_cone(&y, &db, dt, &mut ny, &mut scratch);
                st.step_cone(&z, &db, dt, &mut nz, &mut scratch);
                let threshold = -2.0 * (1.0 + rho * dt) * (y[0].max(0.0) / lambda).sqrt();
                if db[0] >= threshold {
                    monotone_steps += 1;
                    assert!(ny[0] <= nz[0], "order lost at y = {}, y' = {}, db = {}", y[0], z[0], db[0]);
                } else if ny[0] > nz[0] {
                    flips += 1;
                }
                // keep the pair ordered so every step starts from y <= y'
                y[0] = ny[0].min(nz[0]);
                z[0] = ny[0].max(nz[0]);
            }
        }
    }
    assert!(monotone_steps > 250_000);
    // the discrete map does flip orders on large negative draws
    assert!(flips > 0);
}

#[test]
fn paired_starts_stay_within_the_gronwall_envelope() {
    let cfg = VerifyConfig { paths: 1000, dt: 0.01, seed: 4, ..VerifyConfig::default() };
    let p = family("cir1");
    let r = pathwise_uniqueness_test(&p, &[0.5], 1.0, 1e-6, &cfg, &Serial).unwrap();
    assert!(r.pass);
    assert!(r.records[0].mean_gap <= 1e-6, "{:?}", r.records[0]);
    let same = pathwise_uniqueness_test(&p, &[0.5], 1.0, 0.0, &cfg, &Serial).unwrap();
    assert!(same.pass);
    assert_eq!(same.records[0].max_gap, 0.0);

    let p10 = family("cir10");
    let x0: Vec<f64> = (1..=10).map(|i| 1.0 / i as f64).collect();
    let r = pathwise_uniqueness_test(&p10, &x0, 1.0, 1e-6, &VerifyConfig { paths: 200, ..cfg.clone() }, &Serial).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn ou_gap_follows_the_linear_flow() {
    let p = family("ou3");
    let cfg = VerifyConfig { paths: 50, dt: 0.01, seed: 8, ..VerifyConfig::default() };
    let eps = 1e-6;
    let r = pathwise_uniqueness_test(&p, &[0.2, 0.1, -0.3], 1.0, eps, &cfg, &Serial).unwrap();
    let step = RMat::identity(3).add(&p.m.scale(0.01));
    for rec in &r.records {
        let mut e = vec![0.0; 3];
        e[rec.coordinate] = eps;
        for _ in 0..100 {
            e = step.apply(&e).to_vec();
        }
        let want = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((rec.mean_gap - want).abs() <= 1e-6 * want, "{} vs {want}", rec.mean_gap);
        assert!((rec.max_gap - want).abs() <= 1e-6 * want);
    }
}

/// Runs ids back to front on one thread.
struct Reversed;

impl PathRunner for Reversed {
    fn run<T, F>(&self, n: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        let mut out: Vec<T> = (0..n).rev().map(f).collect::<Result<_>>()?;
        out.reverse();
        Ok(out)
    }
}

/// Strided ids over scoped threads.
struct Strided(u64);

impl PathRunner for Strided {
    fn run<T, F>(&self, n: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        let k = self.0;
        let f = &f;
        let parts: Vec<Vec<(u64, Result<T>)>> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..k).map(|w| s.spawn(move || (w..n).step_by(k as usize).map(|id| (id, f(id))).collect())).collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut all: Vec<(u64, Result<T>)> = parts.into_iter().flatten().collect();
        all.sort_by_key(|(id, _)| *id);
        all.into_iter().map(|(_, r)| r).collect()
    }
}

#[test]
fn ensembles_do_not_depend_on_execution_order() {
    let p = family("heston1");
    let mut cfg = SimConfig::new(1.0, 0.01, 500, 42);
    cfg.store = Store::Every(10);
    cfg.control_variate = true;
    let a = simulate_paths_with(&p, &[0.5, 0.1], &cfg, &Serial).unwrap();
    let b = simulate_paths_with(&p, &[0.5, 0.1], &cfg, &Reversed).unwrap();
    let c = simulate_paths_with(&p, &[0.5, 0.1], &cfg, &Strided(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    cfg.master_seed = 43;
    assert_ne!(a, simulate_paths_with(&p, &[0.5, 0.1], &cfg, &Serial).unwrap());
}

#[test]
fn stored_states_stay_in_the_cone_across_batteries() {
    let mut excursions = 0;
    for n in [1usize, 2, 10, 50] {
        let c = FamilyConstants::default();
        for p in [
            make_cir(&FamilySpec::Cir { n, constants: c.clone() }).unwrap(),
            make_heston(&FamilySpec::Heston { n_i: n, constants: c.clone() }).unwrap(),
        ] {
            // start on the boundary so the scheme has to clamp
            let x0 = vec![0.0; p.n()];
            let pack = TransformPack::build(&p).unwrap();
            for scheme in [Scheme::FullTruncation, Scheme::Absorbed] {
                let mut cfg = SimConfig::new(1.0, 0.05, 400, n as u64);
                cfg.scheme = scheme;
                cfg.store = Store::Every(1);
                let e = simulate_with_pack(&pack, &x0, &cfg, &Serial).unwrap();
                let r = cone_invariance_test(&e);
                assert!(r.pass, "n = {n}: {r:?}");
                excursions += r.clamped_steps;
            }
        }
    }
    assert!(excursions > 0, "the battery never exercised the clamp");
}

#[test]
fn unclamped_scheme_exposes_excursions() {
    let p = family("cir1");
    let mut cfg = SimConfig::new(1.0, 0.05, 400, 1);
    cfg.scheme = Scheme::Unclamped;
    cfg.store = Store::Every(1);
    let e = simulate_paths_with(&p, &[0.0], &cfg, &Serial).unwrap();
    let r = cone_invariance_test(&e);
    assert!(!r.pass && r.violations > 0);
}
