//! Evaluation reports as TSV and JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ReportRow;

pub const TSV_HEADER: &str = "dataset\tattack\tsamples\tsmax_top1\tsmax_top5\tregroup_top1\tregroup_top5\tmode\tk\tsmax_secs\tregroup_secs\tconfig_hash";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{:.9}\t{:.9}\t{}",
                r.dataset,
                r.attack,
                r.samples,
                r.smax_top1,
                r.smax_top5,
                r.regroup_top1,
                r.regroup_top5,
                r.mode,
                r.k,
                r.smax_secs,
                r.regroup_secs,
                self.config_hash
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format("report", e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::format("report", e.to_string()))
    }
}

/// Writes `<stem>.tsv` and `<stem>.json`.
pub fn write_report(report: &Report, stem: &Path) -> Result<()> {
    fs::write(stem.with_extension("tsv"), report.to_tsv())?;
    fs::write(stem.with_extension("json"), report.to_json()?)?;
    Ok(())
}
