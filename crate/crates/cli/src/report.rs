//! Machine-readable outputs: per-file JSON reports, experiment CSV tables,
//! and atomic file writes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use wavefuzz_core::eval::ExperimentReport;
use wavefuzz_core::metrics::serialize_db;
use wavefuzz_core::PoisonResult;

/// One row of `report.json` for batch poison/baseline runs. Failed files
/// carry only the error message.
#[derive(Debug, Serialize)]
pub struct FileReport {
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none", serialize_with = "opt_db")]
    pub snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn opt_db<S: serde::Serializer>(
    value: &Option<f64>,
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    serialize_db(value.as_ref().expect("skipped when None"), ser)
}

impl FileReport {
    pub fn success(file: String, result: &PoisonResult) -> Self {
        Self {
            file,
            snr_db: Some(result.snr_db),
            feature_distance: Some(result.feature_distance),
            iterations_used: Some(result.iterations_used),
            converged: Some(result.converged),
            input_l2: Some(result.input_l2),
            error: None,
        }
    }

    pub fn failure(file: String, error: String) -> Self {
        Self {
            file,
            snr_db: None,
            feature_distance: None,
            iterations_used: None,
            converged: None,
            input_l2: None,
            error: Some(error),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialization cannot fail");
    s.push('\n');
    s
}

/// Write via a temp file + rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp: PathBuf = {
        let mut name = path
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_else(|| "out".into());
        name.push(format!(".tmp-{}", std::process::id()));
        path.with_file_name(name)
    };
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Header comments + one CSV row per experiment cell; the analog of the
/// published full-scale comparison tables at desk scale.
pub fn experiment_csv(reports: &[ExperimentReport], reference_comments: &[&str]) -> String {
    let mut out = String::new();
    for line in reference_comments {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(
        "scenario,method,pr_percent,dacc_percent,mean_snr_db,acc_clean_percent,acc_poisoned_percent,epsilon,epsilon_is_relative,alpha\n",
    );
    for r in reports {
        let epsilon = if r.epsilon >= f64::MAX {
            "uncapped".to_string()
        } else {
            format!("{}", r.epsilon)
        };
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{},{},{}\n",
            r.scenario,
            r.method,
            r.pr_percent,
            r.dacc_percent,
            r.mean_snr_db,
            r.acc_clean_percent,
            r.acc_poisoned_percent,
            epsilon,
            r.epsilon_is_relative,
            r.alpha
        ));
    }
    out
}
