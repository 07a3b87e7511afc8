//! Per-round records and their CSV and manifest form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Everything recorded at one round boundary. Fields a scenario does not
/// produce stay at their defaults (0 or NaN).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub time: f64,
    pub sites: u64,
    pub tip_count: u64,
    pub tips_per_interval: Vec<u64>,
    pub assortativity: f64,
    /// Population loss of the global model (mean over regions).
    pub loss: f64,
    /// Reference gap of the global model on the RSU test set.
    pub gap: f64,
    pub issued: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub rejected_gap_exceeded: u64,
    pub rejected_invalid_parent: u64,
    pub rejected_other: u64,
    pub issued_total: u64,
    pub accepted_total: u64,
    pub rejected_total: u64,
    pub uploads_total: u64,
    pub bandwidth_mb: f64,
    pub attack_issued_total: u64,
    pub attack_accepted_total: u64,
    pub attack_rejected_gap_total: u64,
    /// Mean verifier gap per style type, in configured order.
    pub type_gaps: Vec<f64>,
    pub region_sites: Vec<u64>,
    pub crossings_total: u64,
}

impl Default for RoundRecord {
    fn default() -> Self {
        RoundRecord {
            round: 0,
            time: 0.0,
            sites: 0,
            tip_count: 0,
            tips_per_interval: Vec::new(),
            assortativity: f64::NAN,
            loss: f64::NAN,
            gap: f64::NAN,
            issued: 0,
            accepted: 0,
            rejected: 0,
            rejected_gap_exceeded: 0,
            rejected_invalid_parent: 0,
            rejected_other: 0,
            issued_total: 0,
            accepted_total: 0,
            rejected_total: 0,
            uploads_total: 0,
            bandwidth_mb: 0.0,
            attack_issued_total: 0,
            attack_accepted_total: 0,
            attack_rejected_gap_total: 0,
            type_gaps: Vec::new(),
            region_sites: Vec::new(),
            crossings_total: 0,
        }
    }
}

/// One variant of a scenario, e.g. a single gate threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub variant: String,
    pub records: Vec<RoundRecord>,
}

impl Series {
    pub fn last(&self) -> Option<&RoundRecord> {
        self.records.last()
    }

    pub fn final_loss(&self) -> f64 {
        self.last().map_or(f64::NAN, |r| r.loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub scenario: String,
    pub seed: u64,
    pub config_digest: String,
    pub interval_count: usize,
    pub type_names: Vec<String>,
    pub series: Vec<Series>,
}

impl EventLog {
    pub fn variant(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.variant == name)
    }
}

/// CSV families. Which ones a scenario writes is fixed per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvFamily {
    Ledger,
    Learning,
    Attack,
    Verification,
    Regions,
}

impl CsvFamily {
    pub fn file_name(self) -> &'static str {
        match self {
            CsvFamily::Ledger => "ledger.csv",
            CsvFamily::Learning => "learning.csv",
            CsvFamily::Attack => "attack.csv",
            CsvFamily::Verification => "verification.csv",
            CsvFamily::Regions => "regions.csv",
        }
    }

    pub fn for_scenario(name: &str) -> &'static [CsvFamily] {
        use CsvFamily::*;
        match name {
            "ledger-convergence" | "dc-ledger" => &[Ledger],
            "verification-loss" => &[Learning, Verification],
            "attack" => &[Learning, Attack],
            _ => &[Learning, Ledger, Regions],
        }
    }

    pub fn columns(self, log: &EventLog) -> Vec<String> {
        let base = ["variant", "round", "time"].map(String::from);
        let mut cols: Vec<String> = base.to_vec();
        match self {
            CsvFamily::Ledger => {
                cols.extend(["sites", "tip_count"].map(String::from));
                cols.extend((0..log.interval_count).map(|k| format!("tips_k{k}")));
                cols.push("assortativity".into());
            }
            CsvFamily::Learning => cols.extend(
                [
                    "loss",
                    "gap",
                    "issued",
                    "accepted",
                    "rejected",
                    "rejected_gap_exceeded",
                    "rejected_invalid_parent",
                    "rejected_other",
                    "issued_total",
                    "accepted_total",
                    "rejected_total",
                    "uploads_total",
                    "bandwidth_mb",
                ]
                .map(String::from),
            ),
            CsvFamily::Attack => cols.extend(
                ["attack_issued_total", "attack_accepted_total", "attack_rejected_gap_total", "loss"].map(String::from),
            ),
            CsvFamily::Verification => cols.extend(log.type_names.iter().map(|n| format!("gap_{n}"))),
            CsvFamily::Regions => cols.extend(["region", "sites", "crossings_total"].map(String::from)),
        }
        cols
    }

    /// Header plus one row per record (per record and region for `Regions`).
    pub fn render(self, log: &EventLog) -> String {
        let mut out = self.columns(log).join(",");
        out.push('\n');
        for s in &log.series {
            for r in &s.records {
                let prefix = format!("{},{},{}", s.variant, r.round, r.time);
                match self {
                    CsvFamily::Ledger => {
                        let _ = write!(out, "{prefix},{},{}", r.sites, r.tip_count);
                        for k in 0..log.interval_count {
                            let _ = write!(out, ",{}", r.tips_per_interval.get(k).copied().unwrap_or(0));
                        }
                        let _ = writeln!(out, ",{}", r.assortativity);
                    }
                    CsvFamily::Learning => {
                        let _ = writeln!(
                            out,
                            "{prefix},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                            r.loss,
                            r.gap,
                            r.issued,
                            r.accepted,
                            r.rejected,
                            r.rejected_gap_exceeded,
                            r.rejected_invalid_parent,
                            r.rejected_other,
                            r.issued_total,
                            r.accepted_total,
                            r.rejected_total,
                            r.uploads_total,
                            r.bandwidth_mb
                        );
                    }
                    CsvFamily::Attack => {
                        let _ = writeln!(
                            out,
                            "{prefix},{},{},{},{}",
                            r.attack_issued_total, r.attack_accepted_total, r.attack_rejected_gap_total, r.loss
                        );
                    }
                    CsvFamily::Verification => {
                        out.push_str(&prefix);
                        for k in 0..log.type_names.len() {
                            let _ = write!(out, ",{}", r.type_gaps.get(k).copied().unwrap_or(f64::NAN));
                        }
                        out.push('\n');
                    }
                    CsvFamily::Regions => {
                        for (g, n) in r.region_sites.iter().enumerate() {
                            let _ = writeln!(out, "{prefix},{g},{n},{}", r.crossings_total);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub rows: usize,
    pub columns: Vec<String>,
}

/// Written next to the CSV files; everything a downstream plotting step
/// needs to locate and interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub seed: u64,
    pub config_digest: String,
    pub version: String,
    pub variants: Vec<String>,
    pub files: Vec<ManifestFile>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the scenario's CSV families and `manifest.json` into `dir`.
pub fn write_outputs(log: &EventLog, dir: &Path) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for &family in CsvFamily::for_scenario(&log.scenario) {
        let text = family.render(log);
        std::fs::write(dir.join(family.file_name()), &text)?;
        files.push(ManifestFile {
            name: family.file_name().into(),
            rows: text.lines().count() - 1,
            columns: family.columns(log),
        });
    }
    let manifest = RunManifest {
        scenario: log.scenario.clone(),
        seed: log.seed,
        config_digest: log.config_digest.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        variants: log.series.iter().map(|s| s.variant.clone()).collect(),
        files,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log() -> EventLog {
        let rec = |round| RoundRecord {
            round,
            tips_per_interval: vec![1, 2, 3],
            type_gaps: vec![0.1, 0.2],
            region_sites: vec![4, 5],
            ..RoundRecord::default()
        };
        EventLog {
            scenario: "adaptive-adl".into(),
            seed: 1,
            config_digest: "abc".into(),
            interval_count: 3,
            type_names: vec!["a".into(), "b".into()],
            series: vec![
                Series { variant: "x".into(), records: vec![rec(1), rec(2)] },
                Series { variant: "y".into(), records: vec![rec(1)] },
            ],
        }
    }

    #[test]
    fn rows_match_header_width() {
        let log = log();
        for f in [CsvFamily::Ledger, CsvFamily::Learning, CsvFamily::Attack, CsvFamily::Verification, CsvFamily::Regions] {
            let text = f.render(&log);
            let width = f.columns(&log).len();
            let expected_rows = if f == CsvFamily::Regions { 6 } else { 3 };
            assert_eq!(text.lines().count() - 1, expected_rows, "{f:?}");
            for line in text.lines() {
                assert_eq!(line.split(',').count(), width, "{f:?}: {line}");
            }
        }
    }

    #[test]
    fn manifest_lists_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_outputs(&log(), dir.path()).unwrap();
        assert_eq!(m.files.len(), 3);
        for f in &m.files {
            assert!(dir.path().join(&f.name).exists());
        }
        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
