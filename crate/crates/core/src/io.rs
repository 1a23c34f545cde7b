//! Dataset ingestion (CSV) and result persistence (JSON).
//!
//! Input files carry a header naming `study`, `events` and `size`; other
//! columns are ignored, as are blank lines and lines starting with `#`.
//!
//! ```text
//! study,events,size
//! # comment
//! a,35,1000
//! b,9,100
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Result, XtremError};
use crate::simulate::{RngInfo, ScenarioSummary, SimScenario};
use crate::types::{Dataset, FitResult, StudyRecord, ThresholdRequest};
use crate::xtrem::ComparisonReport;

/// Version of the result document layout.
pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "xtrem";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Floating-point values in result files keep this many significant digits.
pub const SIGNIFICANT_DIGITS: usize = 12;

const REQUIRED_COLUMNS: [&str; 3] = ["study", "events", "size"];

/// Hex SHA-256 of `bytes`.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_checksum(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| XtremError::io(path, e))?;
    Ok(checksum(&bytes))
}

/// Parses CSV text into a dataset labelled `label`.
pub fn parse_dataset(text: &str, label: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header_err = |reason: String| XtremError::Parse { line: 1, reason };
    let headers = reader
        .headers()
        .map_err(|e| header_err(format!("unreadable header: {e}")))?
        .clone();
    let mut columns = [0usize; 3];
    for (slot, name) in columns.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| header_err(format!("header is missing column '{name}' (need study,events,size)")))?;
    }
    let [study_col, events_col, size_col] = columns;

    let mut studies = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| XtremError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |col: usize, name: &str| {
            record.get(col).ok_or_else(|| XtremError::Parse {
                line,
                reason: format!("missing field '{name}'"),
            })
        };
        let count = |col: usize, name: &str| -> Result<u64> {
            let raw = field(col, name)?;
            raw.parse::<u64>().map_err(|_| XtremError::Parse {
                line,
                reason: format!("field '{name}': expected a non-negative integer, got '{raw}'"),
            })
        };
        let study = field(study_col, "study")?.to_string();
        let events = count(events_col, "events")?;
        let size = count(size_col, "size")?;
        let rec = StudyRecord::labelled(study, events, size).map_err(|e| XtremError::Parse {
            line,
            reason: e.to_string(),
        })?;
        studies.push(rec);
    }
    if studies.is_empty() {
        return Err(XtremError::validation("dataset", "file contains no studies"));
    }
    Dataset::new(label, studies)
}

/// Reads a dataset file; the dataset is labelled with the file stem.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| XtremError::io(path, e))?;
    let label = path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    parse_dataset(&text, &label)
}

/// Reads and validates a JSON scenario file (same fields as [`SimScenario`]).
pub fn read_scenario(path: impl AsRef<Path>) -> Result<SimScenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| XtremError::io(path, e))?;
    let scenario: SimScenario = serde_json::from_str(&text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// What a result document holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResultPayload {
    Fit { fit: FitResult },
    Comparison { report: ComparisonReport, fits: Vec<FitResult> },
    Simulation { scenarios: Vec<ScenarioSummary> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    /// SHA-256 of the input file, when there was one.
    pub input_checksum: Option<String>,
    pub threshold: Option<ThresholdRequest>,
    pub rng: Option<RngInfo>,
    pub payload: ResultPayload,
}

impl ResultDocument {
    pub fn new(payload: ResultPayload) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: TOOL_NAME.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            input_checksum: None,
            threshold: None,
            rng: None,
            payload,
        }
    }

    pub fn fit(fit: FitResult) -> Self {
        Self::new(ResultPayload::Fit { fit })
    }

    pub fn comparison(report: ComparisonReport, fits: Vec<FitResult>) -> Self {
        Self::new(ResultPayload::Comparison { report, fits })
    }

    pub fn simulation(scenarios: Vec<ScenarioSummary>) -> Self {
        Self::new(ResultPayload::Simulation { scenarios })
    }

    pub fn with_input_checksum(mut self, checksum: impl Into<String>) -> Self {
        self.input_checksum = Some(checksum.into());
        self
    }

    pub fn with_threshold(mut self, threshold: ThresholdRequest) -> Self {
        self.threshold = Some(threshold);
        self
    }

    pub fn with_rng(mut self, rng: RngInfo) -> Self {
        self.rng = Some(rng);
        self
    }
}

/// Rounds `v` to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_significant(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v).parse().unwrap_or(v)
}

fn round_value(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_significant).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty-printed JSON with floats rounded to [`SIGNIFICANT_DIGITS`].
pub fn to_json_string(doc: &ResultDocument) -> Result<String> {
    let mut value = serde_json::to_value(doc)?;
    round_value(&mut value);
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn from_json_str(text: &str) -> Result<ResultDocument> {
    let doc: ResultDocument = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(XtremError::validation(
            "schema_version",
            format!("expected {SCHEMA_VERSION}, found {}", doc.schema_version),
        ));
    }
    Ok(doc)
}

pub fn write_result(doc: &ResultDocument, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_json_string(doc)?;
    fs::write(path, text).map_err(|e| XtremError::io(path, e))
}

pub fn read_result(path: impl AsRef<Path>) -> Result<ResultDocument> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| XtremError::io(path, e))?;
    from_json_str(&text)
}
