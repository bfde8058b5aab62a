//! The parameter file format.
//!
//! A file is either a family description (`{"family": "cir", ...}`) or an
//! explicit parameter set. Cone indices are 1-based; `nk` has one entry per
//! coordinate and `null` stands for a zero matrix.

use std::path::Path;

use affine_hilbert::{AffineParams, FamilySpec, IndexPartition, RMat, RVec, TailDecay};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaW {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub n: usize,
    /// 1-based cone coordinates; the rest are free.
    pub cone: Vec<usize>,
    pub m0: Vec<f64>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    pub n0: Vec<Vec<f64>>,
    pub nk: Vec<Option<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_w: Option<SigmaW>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<TailDecay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputFile {
    Family(FamilySpec),
    Params(ParamsFile),
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<RMat, CliError> {
    RMat::from_rows(rows).map_err(|e| CliError::Input(format!("{name}: {e}")))
}

impl ParamsFile {
    pub fn to_params(&self) -> Result<AffineParams, CliError> {
        let n = self.n;
        let mut cone = Vec::with_capacity(self.cone.len());
        for &k in &self.cone {
            if k == 0 || k > n {
                return Err(CliError::Input(format!("cone index {k} outside 1..={n}")));
            }
            cone.push(k - 1);
        }
        let free: Vec<usize> = (0..n).filter(|k| !cone.contains(k)).collect();
        let part = IndexPartition::new(n, &cone, &free).map_err(|e| CliError::Input(e.to_string()))?;
        if self.nk.len() != n {
            return Err(CliError::Input(format!("nk has {} entries, expected {n}", self.nk.len())));
        }
        let nk = self
            .nk
            .iter()
            .enumerate()
            .map(|(k, m)| match m {
                Some(rows) => matrix(&format!("nk[{}]", k + 1), rows),
                None => Ok(RMat::zeros(n, n)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let sigma_diag = match &self.sigma_w {
            Some(SigmaW::Diagonal(d)) => d.clone(),
            _ => vec![1.0; n],
        };
        let mut p = AffineParams::new(
            part,
            RVec::from(self.m0.clone()),
            matrix("M", &self.m)?,
            matrix("n0", &self.n0)?,
            nk,
            &sigma_diag,
        )?;
        if let Some(SigmaW::Full(rows)) = &self.sigma_w {
            p = p.with_sigma_w(matrix("sigma_w", rows)?)?;
        }
        if let Some(d) = &self.decay {
            p = p.with_decay(d.clone())?;
        }
        Ok(p)
    }

    pub fn from_params(p: &AffineParams) -> Self {
        let n = p.n();
        let diagonal = (0..n).all(|r| (0..n).all(|c| r == c || p.sigma_w[(r, c)] == 0.0));
        let sigma_w = if diagonal { SigmaW::Diagonal(p.sigma_w_diag()) } else { SigmaW::Full(p.sigma_w.to_rows()) };
        Self {
            n,
            cone: p.partition.cone().iter().map(|k| k + 1).collect(),
            m0: p.m0.to_vec(),
            m: p.m.to_rows(),
            n0: p.n0.to_rows(),
            nk: p.nk.iter().map(|m| if m.max_abs() == 0.0 { None } else { Some(m.to_rows()) }).collect(),
            sigma_w: Some(sigma_w),
            decay: p.decay.clone(),
        }
    }
}

impl InputFile {
    pub fn to_params(&self) -> Result<AffineParams, CliError> {
        match self {
            InputFile::Family(spec) => spec.build().map_err(|e| CliError::Input(e.to_string())),
            InputFile::Params(f) => f.to_params(),
        }
    }
}

/// Parses a parameter file; every failure here is an input error.
pub fn parse_params(text: &str) -> Result<AffineParams, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Input(format!("malformed JSON: {e}")))?;
    // decide the variant by the tag so error messages come from the right schema
    let input = if value.get("family").is_some() {
        InputFile::Family(serde_json::from_value(value).map_err(|e| CliError::Input(format!("family spec: {e}")))?)
    } else {
        InputFile::Params(serde_json::from_value(value).map_err(|e| CliError::Input(format!("parameter file: {e}")))?)
    };
    input.to_params()
}

pub fn load_params(path: &Path) -> Result<AffineParams, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    parse_params(&text)
}

/// `"a,b,c"` as reals; a single value is repeated `n` times.
pub fn parse_reals(s: &str, n: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| CliError::Input(format!("{what}: '{t}': {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    broadcast(v, n, what)
}

/// `"-1, -0.5+2i, 3i"` as complex numbers; a single value is repeated.
pub fn parse_complex(s: &str, n: usize, what: &str) -> Result<Vec<affine_hilbert::C64>, CliError> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<affine_hilbert::C64>().map_err(|e| CliError::Input(format!("{what}: '{t}': {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    broadcast(v, n, what)
}

fn broadcast<T: Clone>(v: Vec<T>, n: usize, what: &str) -> Result<Vec<T>, CliError> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); n]),
        k if k == n => Ok(v),
        k => Err(CliError::Input(format!("{what} has {k} values, expected 1 or {n}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use affine_hilbert::families::shipped;

    #[test]
    fn explicit_file_roundtrips() {
        for (_, spec) in shipped() {
            let p = spec.build().unwrap();
            let file = ParamsFile::from_params(&p);
            let text = serde_json::to_string(&file).unwrap();
            assert_eq!(parse_params(&text).unwrap(), p);
        }
    }

    #[test]
    fn indices_are_one_based_and_null_is_zero() {
        let text = r#"{"n": 2, "cone": [1], "m0": [1, 0], "M": [[-1, 0], [0, -1]],
            "n0": [[0, 0], [0, 1]], "nk": [[[2, 0], [0, 0]], null]}"#;
        let p = parse_params(text).unwrap();
        assert_eq!(p.partition.cone(), &[0]);
        assert_eq!(p.nk[1], RMat::zeros(2, 2));
        assert_eq!(p.sigma_w, RMat::identity(2));
    }

    #[test]
    fn bad_inputs_are_input_errors() {
        for text in ["{", r#"{"n": 1}"#, r#"{"family": "cir"}"#, r#"{"family": "cir", "n": 1, "extra": 1}"#] {
            assert!(matches!(parse_params(text), Err(CliError::Input(_))), "{text}");
        }
        let zero = r#"{"n": 1, "cone": [0], "m0": [0], "M": [[0]], "n0": [[0]], "nk": [null]}"#;
        assert!(matches!(parse_params(zero), Err(CliError::Input(_))));
    }

    #[test]
    fn lists_broadcast() {
        assert_eq!(parse_reals("0.5", 3, "x0").unwrap(), vec![0.5; 3]);
        assert!(parse_reals("1,2", 3, "x0").is_err());
        let u = parse_complex("-1, -0.5+2i, 3i", 3, "u").unwrap();
        assert_eq!(u[1], affine_hilbert::C64::new(-0.5, 2.0));
        assert_eq!(u[2], affine_hilbert::C64::new(0.0, 3.0));
    }
}
