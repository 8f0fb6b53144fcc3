//! Case corpus: one JSON file per case, each naming its expected gate
//! outcome and, optionally, the expected baseline verdict.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::decision::{DecisionObject, Timestamp};
use crate::dsl::ConstraintSet;
use crate::gate::{evaluate, unknown_class_report, GateError, GateReport, OutcomeKind};
use crate::scoring::{score, ScoringError, ScoringModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedBaseline {
    pub allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusCase {
    pub id: String,
    pub decision: DecisionObject,
    pub expected_gate: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_baseline: Option<ExpectedBaseline>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("IO_FAILURE: {0}")]
    Io(String),
    #[error("MALFORMED_CASE: {file}: {message}")]
    Malformed { file: String, message: String },
    #[error("DUPLICATE_CASE: {0}")]
    DuplicateCase(String),
    #[error("case {case}: {message}")]
    Case { case: String, message: String },
}

/// Load every `*.json` file in `dir` as a case, in file-name order. Other
/// files (such as a README) are ignored.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusCase>, CorpusError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CorpusError::Io(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut cases: Vec<CorpusCase> = Vec::with_capacity(files.len());
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| CorpusError::Io(format!("{}: {e}", f.display())))?;
        let case = parse_case(&bytes).map_err(|message| CorpusError::Malformed {
            file: f.display().to_string(),
            message,
        })?;
        if cases.iter().any(|c| c.id == case.id) {
            return Err(CorpusError::DuplicateCase(case.id));
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Parse one case file. The embedded decision goes through the same
/// validation as a standalone decision file.
pub fn parse_case(bytes: &[u8]) -> Result<CorpusCase, String> {
    let mut v: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let obj = v.as_object_mut().ok_or("case must be a JSON object")?;
    let decision = obj.remove("decision").ok_or("missing field decision")?;
    let decision = DecisionObject::from_value(&decision).map_err(|e| format!("decision: {e}"))?;
    obj.insert("decision".into(), decision.to_value());
    let case: CorpusCase = serde_json::from_value(v).map_err(|e| e.to_string())?;
    if case.id.is_empty() {
        return Err("empty case id".into());
    }
    Ok(case)
}

/// Evaluate `d` against the set for its class; unknown classes escalate.
pub fn gate_for(
    sets: &BTreeMap<String, ConstraintSet>,
    d: &DecisionObject,
    clock: &Timestamp,
) -> Result<GateReport, GateError> {
    match sets.get(&d.decision_class) {
        Some(set) => evaluate(set, d, clock),
        None => Ok(unknown_class_report(d, clock)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub case_id: String,
    pub expected_gate: OutcomeKind,
    pub actual_gate: OutcomeKind,
    pub expected_baseline: Option<bool>,
    pub actual_baseline: Option<bool>,
    pub divergent: bool,
    pub report: GateReport,
}

impl CaseResult {
    pub fn gate_ok(&self) -> bool {
        self.expected_gate == self.actual_gate
    }

    pub fn baseline_ok(&self) -> bool {
        match (self.expected_baseline, self.actual_baseline) {
            (Some(want), Some(got)) => want == got,
            _ => true,
        }
    }

    pub fn passed(&self) -> bool {
        self.gate_ok() && self.baseline_ok()
    }
}

/// Run every case through the gate and, when a model is given, the
/// baseline. The clock for each case comes from `clock_for`.
pub fn run_corpus(
    cases: &[CorpusCase],
    sets: &BTreeMap<String, ConstraintSet>,
    model: Option<&ScoringModel>,
    clock_for: impl Fn(&CorpusCase) -> Timestamp,
) -> Result<Vec<CaseResult>, CorpusError> {
    let tag = |case: &CorpusCase, message: String| CorpusError::Case {
        case: case.id.clone(),
        message,
    };
    cases
        .iter()
        .map(|case| {
            let clock = clock_for(case);
            let report = gate_for(sets, &case.decision, &clock).map_err(|e| tag(case, e.to_string()))?;
            let actual_baseline = match model {
                Some(m) => Some(score(m, &case.decision).map_err(|e: ScoringError| tag(case, e.to_string()))?.allowed),
                None => None,
            };
            let actual_gate = report.outcome.kind;
            Ok(CaseResult {
                case_id: case.id.clone(),
                expected_gate: case.expected_gate,
                actual_gate,
                expected_baseline: case.expected_baseline.map(|b| b.allowed),
                actual_baseline,
                divergent: actual_baseline == Some(true) && !actual_gate.is_allow(),
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE: &str = r#"{
        "id": "suspension",
        "decision": {"decision_class":"account_suspension","operation":"disable_account","target":"u","scope":"single_account","timing":"2026-04-01T12:00:00Z","features":{"a":1}},
        "expected_gate": "ESCALATE",
        "expected_baseline": {"allowed": true},
        "notes": "fixture"
    }"#;

    #[test]
    fn parses_case() {
        let c = parse_case(CASE.as_bytes()).unwrap();
        assert_eq!(c.expected_gate, OutcomeKind::Escalate);
        assert_eq!(c.expected_baseline, Some(ExpectedBaseline { allowed: true }));
    }

    #[test]
    fn rejects_bad_cases() {
        let bad_kind = CASE.replace("\"ESCALATE\"", "\"MAYBE\"");
        assert!(parse_case(bad_kind.as_bytes()).is_err());
        let bad_decision = CASE.replace("\"target\":\"u\",", "");
        assert!(parse_case(bad_decision.as_bytes()).unwrap_err().contains("MISSING_FIELD"));
        let extra = CASE.replace("\"notes\"", "\"extra\": 1, \"notes\"");
        assert!(parse_case(extra.as_bytes()).is_err());
    }

    #[test]
    fn loads_directory_skipping_readme() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("README.md"), "cases").unwrap();
        std::fs::write(dir.path().join("a.json"), CASE).unwrap();
        let cases = load_corpus(dir.path()).unwrap();
        assert_eq!(cases.len(), 1);
        std::fs::write(dir.path().join("b.json"), CASE).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(CorpusError::DuplicateCase(_))));
    }
}
