//! Per-epoch training records and evaluation rows as CSV.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricReport;

pub const RUNLOG_SCHEMA: &str = "# latentwave runlog v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub l1_measurement: f64,
    pub l2_measurement: f64,
    pub l1_property: f64,
    pub l2_property: f64,
    pub clipped_steps: usize,
}

impl EpochRecord {
    /// Sum of the logged components.
    pub fn total(&self) -> f64 {
        self.l1_measurement + self.l2_measurement + self.l1_property + self.l2_property
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub head: String,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config_hash: String,
    /// SHA-256 of the experiment file the run was launched from.
    #[serde(default)]
    pub config_file: Option<String>,
    pub epochs: Vec<EpochRecord>,
    pub eval: Vec<EvalRecord>,
    /// Wall-clock seconds; kept out of the CSV so logs compare byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunLog {
    pub fn new(config_hash: String) -> Self {
        RunLog {
            config_hash,
            config_file: None,
            epochs: Vec::new(),
            eval: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.epochs.iter().map(|e| e.steps).sum()
    }

    pub fn clipped_steps(&self) -> usize {
        self.epochs.iter().map(|e| e.clipped_steps).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{RUNLOG_SCHEMA}");
        let _ = writeln!(s, "# config_hash={}", self.config_hash);
        if let Some(f) = &self.config_file {
            let _ = writeln!(s, "# config_file_sha256={f}");
        }
        let _ = writeln!(
            s,
            "record,epoch,steps,lr,loss_total,l1_measurement,l2_measurement,l1_property,l2_property,clipped_steps,head,scale,n,mae,mse,ssim"
        );
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "epoch,{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},,,,,,",
                e.epoch,
                e.steps,
                e.lr,
                e.total(),
                e.l1_measurement,
                e.l2_measurement,
                e.l1_property,
                e.l2_property,
                e.clipped_steps
            );
        }
        for r in &self.eval {
            let scale = match r.report.scale {
                crate::metrics::Scale::Normalized => "normalized",
                crate::metrics::Scale::Denormalized => "denormalized",
            };
            let _ = writeln!(
                s,
                "eval,,,,,,,,,,{},{scale},{},{:e},{:e},{:e}",
                r.head, r.report.n, r.report.mae, r.report.mse, r.report.ssim
            );
        }
        s
    }
}
