use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ChainState;
use crate::error::{Error, Result};
use crate::model::PathSegment;

/// One line of the JSON-lines trace. Sweep 0 is the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub theta: Vec<f64>,
    pub eps: Vec<f64>,
    /// Fraction of even-pass blocks accepted in this sweep.
    pub acc_even: f64,
    pub acc_odd: f64,
    /// Fraction of parameter proposals accepted; absent when the parameter is fixed.
    pub acc_theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_eps: Option<f64>,
    /// Sum of `log Psi` over the odd-pass blocks at the end of the sweep.
    pub logpsi_total: f64,
}

/// Full path over all observation intervals at one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub sweep: usize,
    pub path: PathSegment,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<SweepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: ChainState,
    /// Parameter proposals rejected because a kernel could not be built.
    pub kernel_failures: usize,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn parse_jsonl(text: &str) -> serde_json::Result<Vec<SweepRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parameter draws after discarding `burn_in` sweeps and keeping every `thin`-th.
    pub fn theta_draws(&self, burn_in: usize, thin: usize) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .filter(|r| r.sweep > burn_in && (r.sweep - burn_in) % thin.max(1) == 0)
            .map(|r| r.theta.clone())
            .collect()
    }

    pub fn mean_acceptance(&self) -> (f64, f64, Option<f64>) {
        let rs: Vec<_> = self.records.iter().filter(|r| r.sweep > 0).collect();
        let n = rs.len().max(1) as f64;
        let even = rs.iter().map(|r| r.acc_even).sum::<f64>() / n;
        let odd = rs.iter().map(|r| r.acc_odd).sum::<f64>() / n;
        let th: Vec<f64> = rs.iter().filter_map(|r| r.acc_theta).collect();
        let theta = (!th.is_empty()).then(|| th.iter().sum::<f64>() / th.len() as f64);
        (even, odd, theta)
    }
}

/// `time,x1,...,xd` rows.
pub fn path_csv(path: &PathSegment) -> String {
    let d = path.values.first().map_or(0, |v| v.len());
    let mut s = String::from("time");
    for j in 1..=d {
        write!(s, ",x{j}").unwrap();
    }
    s.push('\n');
    for (t, x) in path.grid.iter().zip(&path.values) {
        write!(s, "{t}").unwrap();
        for v in x.iter() {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}
