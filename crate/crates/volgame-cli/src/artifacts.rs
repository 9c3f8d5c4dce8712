//! Trajectory CSV and report serialization. Floats carry 17 significant
//! digits so a parse round-trips bit-exactly; writes go through a temp file
//! and a rename.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::config::ProblemKind;
use crate::CliError;

/// Column blocks of a trajectory file; absent blocks are omitted from the
/// header entirely.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Option<Vec<DVector<f64>>>,
    pub u: Option<Vec<DVector<f64>>>,
    pub v: Option<Vec<DVector<f64>>>,
    pub psi: Option<Vec<RowDVector<f64>>>,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut header = vec!["t".to_string()];
        let block = |prefix: &str, dim: usize| -> Vec<String> {
            (1..=dim).map(|i| format!("{prefix}_{i}")).collect()
        };
        if let Some(y) = &self.y {
            header.extend(block("y", y[0].len()));
        }
        if let Some(u) = &self.u {
            header.extend(block("u", u[0].len()));
        }
        if let Some(v) = &self.v {
            header.extend(block("v", v[0].len()));
        }
        if let Some(psi) = &self.psi {
            header.extend(block("psi", psi[0].len()));
        }
        let mut out = header.join(",");
        out.push('\n');
        for k in 0..self.t.len() {
            let mut row = vec![fmt_f64(self.t[k])];
            if let Some(y) = &self.y {
                row.extend(y[k].iter().map(|&x| fmt_f64(x)));
            }
            if let Some(u) = &self.u {
                row.extend(u[k].iter().map(|&x| fmt_f64(x)));
            }
            if let Some(v) = &self.v {
                row.extend(v[k].iter().map(|&x| fmt_f64(x)));
            }
            if let Some(psi) = &self.psi {
                row.extend(psi[k].iter().map(|&x| fmt_f64(x)));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CliError::validation("trajectory", "empty csv"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(CliError::validation("trajectory", "first column must be t"));
        }
        let count = |prefix: &str| {
            cols.iter()
                .filter(|c| {
                    c.strip_prefix(prefix)
                        .and_then(|s| s.strip_prefix('_'))
                        .map(|s| s.chars().all(|ch| ch.is_ascii_digit()))
                        .unwrap_or(false)
                })
                .count()
        };
        let (py, pu, pv, pp) = (count("y"), count("u"), count("v"), count("psi"));
        let mut t = Vec::new();
        let mut y = Vec::new();
        let mut u = Vec::new();
        let mut v = Vec::new();
        let mut psi = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        CliError::validation(
                            "trajectory",
                            format!("bad float on data row {}", ln + 1),
                        )
                    })
                })
                .collect::<Result<_, _>>()?;
            if vals.len() != 1 + py + pu + pv + pp {
                return Err(CliError::validation(
                    "trajectory",
                    format!("row {} has {} columns, expected {}", ln + 1, vals.len(), 1 + py + pu + pv + pp),
                ));
            }
            let mut it = vals.into_iter();
            t.push(it.next().expect("checked length"));
            let take = |it: &mut std::vec::IntoIter<f64>, n: usize| -> Vec<f64> {
                (0..n).map(|_| it.next().expect("checked length")).collect()
            };
            y.push(DVector::from_vec(take(&mut it, py)));
            u.push(DVector::from_vec(take(&mut it, pu)));
            v.push(DVector::from_vec(take(&mut it, pv)));
            psi.push(RowDVector::from_vec(take(&mut it, pp)));
        }
        Ok(Trajectory {
            t,
            y: (py > 0).then_some(y),
            u: (pu > 0).then_some(u),
            v: (pv > 0).then_some(v),
            psi: (pp > 0).then_some(psi),
        })
    }
}

/// Terminal block serialized with pursuit runs so residuals can be
/// recomputed from artifacts alone.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TerminalRecord {
    pub t1: f64,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub psi_cap: Vec<f64>,
    pub omega: f64,
}

/// Report document mirroring a run: problem echo, certification, residual
/// table, iteration counts, wall time, exit status.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub problem: ProblemKind,
    pub command: String,
    pub config_echo: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certification: Option<volgame::quadform::CertificationReport>,
    /// Residuals recomputed from the serialized artifacts.
    pub residuals: BTreeMap<String, f64>,
    pub iterations: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_gradients: Option<bool>,
    pub wall_time_ms: u64,
    pub exit_status: i32,
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp: PathBuf = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| CliError::Io {
        path: tmp.display().to_string(),
        source: e,
    })?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_trajectory(dir: &Path) -> Result<Trajectory, CliError> {
    let path = dir.join("trajectory.csv");
    let text = std::fs::read_to_string(&path).map_err(|_| CliError::MissingArtifact {
        path: path.display().to_string(),
    })?;
    Trajectory::from_csv(&text)
}

pub fn read_report(dir: &Path) -> Result<RunReport, CliError> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|_| CliError::MissingArtifact {
        path: path.display().to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let t: Vec<f64> = vec![0.0, 1.0 / 3.0, 1.0];
        let u: Vec<DVector<f64>> = t
            .iter()
            .map(|&x| DVector::from_vec(vec![x.sin(), x.exp()]))
            .collect();
        let traj = Trajectory {
            t: t.clone(),
            y: None,
            u: Some(u.clone()),
            v: None,
            psi: None,
        };
        let text = traj.to_csv();
        let back = Trajectory::from_csv(&text).unwrap();
        assert_eq!(back.t.len(), 3);
        for k in 0..3 {
            assert_eq!(back.t[k].to_bits(), t[k].to_bits());
            let bu = back.u.as_ref().unwrap();
            for c in 0..2 {
                assert_eq!(bu[k][c].to_bits(), u[k][c].to_bits());
            }
        }
        assert!(back.y.is_none());
        assert!(back.psi.is_none());
    }
}
