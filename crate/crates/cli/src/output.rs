//! CSV and JSON artifacts. Floats are written in their shortest
//! round-trip form, lines end in `\n`.

use std::io::Write;
use std::path::Path;

use affine_hilbert::riccati::RiccatiSolution;
use affine_hilbert::verify::{cone_invariance_test, ConeReport};
use affine_hilbert::PathEnsemble;
use serde::Serialize;

use crate::error::CliError;

pub fn float(x: f64) -> String {
    let mut b = ryu::Buffer::new();
    b.format(x).to_string()
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// `t, phi_re, phi_im, psi_1_re, psi_1_im, ...`
pub fn write_riccati_csv<W: Write>(w: W, sol: &RiccatiSolution) -> Result<(), CliError> {
    let mut out = writer(w);
    let n = sol.u.len();
    let mut header = vec!["t".to_string(), "phi_re".into(), "phi_im".into()];
    for k in 1..=n {
        header.push(format!("psi_{k}_re"));
        header.push(format!("psi_{k}_im"));
    }
    out.write_record(&header)?;
    for ((t, phi), psi) in sol.grid.iter().zip(&sol.phi).zip(&sol.psi) {
        let mut row = vec![float(*t), float(phi.re), float(phi.im)];
        for z in psi.iter() {
            row.push(float(z.re));
            row.push(float(z.im));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// `path_id, t, x_1, ..., x_n`, one row per stored state.
pub fn write_paths_csv<W: Write>(w: W, e: &PathEnsemble) -> Result<(), CliError> {
    let mut out = writer(w);
    let mut header = vec!["path_id".to_string(), "t".into()];
    header.extend((1..=e.n).map(|k| format!("x_{k}")));
    out.write_record(&header)?;
    let mut row = Vec::with_capacity(e.n + 2);
    for (p, rec) in e.paths.iter().enumerate() {
        for (ti, t) in e.times.iter().enumerate() {
            row.clear();
            row.push(rec.path_id.to_string());
            row.push(float(*t));
            row.extend(e.state(p, ti).iter().map(|&x| float(x)));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub paths: usize,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub sampler: &'static str,
    pub terminal_mean: Vec<f64>,
    pub terminal_variance: Vec<f64>,
    pub terminal_stderr: Vec<f64>,
    pub cone: ConeReport,
}

pub fn summarize(e: &PathEnsemble, sampler: &'static str) -> Summary {
    use affine_hilbert::verify::pairwise_sum;
    let np = e.paths.len();
    let nf = np as f64;
    let mut mean = Vec::with_capacity(e.n);
    let mut var = Vec::with_capacity(e.n);
    for k in 0..e.n {
        let xs: Vec<f64> = (0..np).map(|p| e.terminal(p)[k]).collect();
        let m = pairwise_sum(&xs) / nf;
        let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
        mean.push(m);
        var.push(if np > 1 { pairwise_sum(&sq) / (nf - 1.0) } else { 0.0 });
    }
    Summary {
        paths: np,
        t_end: e.config.t_end,
        dt: e.config.dt,
        seed: e.config.master_seed,
        sampler,
        terminal_stderr: var.iter().map(|v| (v / nf).sqrt()).collect(),
        terminal_mean: mean,
        terminal_variance: var,
        cone: cone_invariance_test(e),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
