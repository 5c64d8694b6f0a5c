use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean performance under corruption: the mean over corruptions of the mean
/// over severities of `p[c][s]`.
pub fn mpc(p: &[Vec<f64>]) -> Result<f64> {
    let n_s = p.first().map(Vec::len).unwrap_or(0);
    if n_s == 0 {
        return Err(Error::IncompleteMatrix("no corruption/severity cells".into()));
    }
    if let Some(c) = p.iter().position(|row| row.len() != n_s) {
        return Err(Error::IncompleteMatrix(format!("row {c} has {} severities, expected {n_s}", p[c].len())));
    }
    if p.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::IncompleteMatrix("missing (non-finite) cell".into()));
    }
    let row_means: f64 = p.iter().map(|row| row.iter().sum::<f64>() / n_s as f64).sum();
    Ok(row_means / p.len() as f64)
}

/// Standard corruption/severity counts of the public benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpcPreset {
    pub n_c: usize,
    pub n_s: usize,
}

impl MpcPreset {
    /// 15 corruptions at 5 severities.
    pub const CITYSCAPES_C: MpcPreset = MpcPreset { n_c: 15, n_s: 5 };
    /// 4 adverse-weather domains, one severity each.
    pub const DIVERSE_WEATHER: MpcPreset = MpcPreset { n_c: 4, n_s: 1 };
    /// The locally generated suite: 10 corruptions at 5 severities.
    pub const SYNTHETIC: MpcPreset = MpcPreset { n_c: 10, n_s: 5 };
}

/// mAP on clean data and on every (corruption, severity) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corruptions: Vec<String>,
    pub severities: Vec<u8>,
    /// `p[c][s]`: mAP under corruption `c` at severity `severities[s]`.
    pub p: Vec<Vec<f64>>,
    pub n_c: usize,
    pub n_s: usize,
    pub clean_map: f64,
    pub mpc: f64,
}

impl EvalReport {
    pub fn new(corruptions: Vec<String>, severities: Vec<u8>, p: Vec<Vec<f64>>, clean_map: f64) -> Result<Self> {
        if p.len() != corruptions.len() || p.iter().any(|r| r.len() != severities.len()) {
            return Err(Error::IncompleteMatrix("matrix shape does not match labels".into()));
        }
        let mpc = mpc(&p)?;
        Ok(Self { n_c: corruptions.len(), n_s: severities.len(), corruptions, severities, p, clean_map, mpc })
    }

    /// The P matrix as CSV: one row per corruption, one column per severity.
    pub fn matrix_csv(&self) -> String {
        let mut out = String::from("corruption");
        for s in &self.severities {
            out.push_str(&format!(",s{s}"));
        }
        out.push('\n');
        for (name, row) in self.corruptions.iter().zip(&self.p) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
