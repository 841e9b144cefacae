//! JSON serialization of evaluation reports, gradient-check reports, and
//! training logs (one JSON object per line).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use primfit_core::gradcheck::{CheckStatus, GradcheckReport};
use primfit_core::train::{EvalReport, LogRecord};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReportJson {
    pub nmi: f64,
    pub precision: f64,
    pub recall: f64,
    pub miou: f64,
    pub per_class_iou: BTreeMap<String, f64>,
}

impl From<&EvalReport> for EvalReportJson {
    fn from(r: &EvalReport) -> Self {
        EvalReportJson {
            nmi: r.nmi,
            precision: r.precision,
            recall: r.recall,
            miou: r.miou,
            per_class_iou: r
                .per_class_iou
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        }
    }
}

pub fn write_eval_report(report: &EvalReport, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&EvalReportJson::from(report))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GradcheckEntryJson {
    pub name: String,
    pub max_rel_err: f64,
    pub status: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GradcheckReportJson {
    pub passed: bool,
    pub entries: Vec<GradcheckEntryJson>,
}

impl From<&GradcheckReport> for GradcheckReportJson {
    fn from(r: &GradcheckReport) -> Self {
        GradcheckReportJson {
            passed: r.passed,
            entries: r
                .entries
                .iter()
                .map(|e| GradcheckEntryJson {
                    name: e.name.clone(),
                    max_rel_err: e.max_rel_err,
                    status: match &e.status {
                        CheckStatus::Pass => "pass".to_string(),
                        CheckStatus::Fail => "fail".to_string(),
                        CheckStatus::Skipped(why) => format!("skipped ({why})"),
                    },
                })
                .collect(),
        }
    }
}

pub fn write_gradcheck_report(report: &GradcheckReport, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&GradcheckReportJson::from(report))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LogRecordJson {
    pub step: usize,
    pub shape: String,
    pub supervised: bool,
    pub l1: f64,
    pub l2: f64,
    pub inter: f64,
    pub sym: f64,
    pub ce: f64,
    pub total: f64,
}

pub fn write_training_log(log: &[LogRecord], path: &Path) -> Result<(), CliError> {
    let file = fs::File::create(path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))?;
    let mut w = std::io::BufWriter::new(file);
    for r in log {
        let line = serde_json::to_string(&LogRecordJson {
            step: r.step,
            shape: r.shape.clone(),
            supervised: r.supervised,
            l1: r.l1,
            l2: r.l2,
            inter: r.inter,
            sym: r.sym,
            ce: r.ce,
            total: r.total,
        })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use primfit_core::gradcheck::GradcheckEntry;
    use tempfile::tempdir;

    #[test]
    fn eval_report_schema() {
        let d = tempdir().unwrap();
        let p = d.path().join("r.json");
        let mut per_class = BTreeMap::new();
        per_class.insert(0usize, 1.0);
        per_class.insert(1usize, 0.5);
        let r = EvalReport {
            nmi: 0.8,
            precision: 0.9,
            recall: 0.7,
            miou: 0.75,
            per_class_iou: per_class,
        };
        write_eval_report(&r, &p).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["miou"], 0.75);
        assert_eq!(v["nmi"], 0.8);
        assert_eq!(v["per_class_iou"]["1"], 0.5);
    }

    #[test]
    fn gradcheck_report_one_entry_per_op() {
        let d = tempdir().unwrap();
        let p = d.path().join("g.json");
        let r = GradcheckReport {
            entries: vec![
                GradcheckEntry {
                    name: "add".to_string(),
                    max_rel_err: 1e-9,
                    status: CheckStatus::Pass,
                },
                GradcheckEntry {
                    name: "svd3_degenerate".to_string(),
                    max_rel_err: 0.0,
                    status: CheckStatus::Skipped("condition cutoff".to_string()),
                },
            ],
            passed: true,
        };
        write_gradcheck_report(&r, &p).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["entries"].as_array().unwrap().len(), 2);
        assert_eq!(v["entries"][0]["name"], "add");
        assert!(v["entries"][1]["status"]
            .as_str()
            .unwrap()
            .starts_with("skipped"));
    }

    #[test]
    fn training_log_is_json_lines() {
        let d = tempdir().unwrap();
        let p = d.path().join("log.jsonl");
        let log = vec![
            LogRecord {
                step: 0,
                shape: "a".to_string(),
                supervised: false,
                l1: 1.0,
                l2: 2.0,
                inter: 0.0,
                sym: 3.0,
                ce: 0.0,
                total: 6.0,
            },
            LogRecord {
                step: 0,
                shape: "b".to_string(),
                supervised: true,
                l1: 0.0,
                l2: 0.0,
                inter: 0.0,
                sym: 0.0,
                ce: 1.1,
                total: 1.1,
            },
        ];
        write_training_log(&log, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("step").is_some());
            assert!(v.get("total").is_some());
        }
    }
}
