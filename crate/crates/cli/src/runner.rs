use affine_hilbert::{PathRunner, Result};
use rayon::prelude::*;

pub const THREADS_ENV: &str = "AFFINE_HILBERT_THREADS";

/// Paths spread over a private rayon pool. Each path owns its RNG stream,
/// so the output does not depend on the thread count.
pub struct Rayon {
    pool: rayon::ThreadPool,
}

impl Rayon {
    /// `threads = 0` lets rayon pick.
    pub fn new(threads: usize) -> std::result::Result<Self, rayon::ThreadPoolBuildError> {
        Ok(Self { pool: rayon::ThreadPoolBuilder::new().num_threads(threads).build()? })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl PathRunner for Rayon {
    fn run<T, F>(&self, n: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

/// `--threads`, else the environment variable, else 0.
pub fn resolve_threads(flag: Option<usize>) -> std::result::Result<usize, String> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| format!("{THREADS_ENV}={v} is not a thread count")),
        Err(_) => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use affine_hilbert::families::shipped;
    use affine_hilbert::simulate::simulate_paths_with;
    use affine_hilbert::{Serial, SimConfig, Store};

    #[test]
    fn matches_serial_bit_for_bit() {
        let p = shipped().into_iter().find(|(n, _)| *n == "heston10").unwrap().1.build().unwrap();
        let x0 = vec![0.2; 20];
        let mut cfg = SimConfig::new(0.5, 0.05, 64, 9);
        cfg.store = Store::Every(2);
        let a = simulate_paths_with(&p, &x0, &cfg, &Serial).unwrap();
        for t in [1, 3, 8] {
            assert_eq!(simulate_paths_with(&p, &x0, &cfg, &Rayon::new(t).unwrap()).unwrap(), a);
        }
    }

    #[test]
    fn errors_propagate() {
        let r = Rayon::new(2).unwrap();
        let out: Result<Vec<u64>> =
            r.run(10, |i| if i == 7 { Err(affine_hilbert::Error::BlowUp { path: i, step: 1 }) } else { Ok(i) });
        assert_eq!(out, Err(affine_hilbert::Error::BlowUp { path: 7, step: 1 }));
    }
}
