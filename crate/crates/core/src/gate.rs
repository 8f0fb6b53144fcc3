//! The Right-to-Act decision function.
//!
//! A decision is allowed only when every required constraint of its class
//! passes. Any failure yields a non-action outcome whose kind is the most
//! severe `on_fail` hint among the failed constraints. No score, weight or
//! count of passing constraints can offset a failure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::decision::{decision_hash, DecisionObject, Timestamp};
use crate::dsl::{eval_constraint, ConstraintSet, ConstraintVerdict, OnFail};
use crate::synth::{synthesize, Requirement, DEFAULT_BUDGET};

/// Failure marker used when no constraint set exists for a decision class.
pub const UNKNOWN_CLASS: &str = "UNKNOWN_CLASS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeKind {
    Allow,
    Defer,
    RequestInfo,
    Escalate,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 4] = [
        OutcomeKind::Allow,
        OutcomeKind::Defer,
        OutcomeKind::RequestInfo,
        OutcomeKind::Escalate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Allow => "ALLOW",
            OutcomeKind::Defer => "DEFER",
            OutcomeKind::RequestInfo => "REQUEST_INFO",
            OutcomeKind::Escalate => "ESCALATE",
        }
    }

    pub fn is_allow(self) -> bool {
        self == OutcomeKind::Allow
    }
}

impl From<OnFail> for OutcomeKind {
    fn from(hint: OnFail) -> Self {
        match hint {
            OnFail::Defer => OutcomeKind::Defer,
            OnFail::RequestInfo => OutcomeKind::RequestInfo,
            OnFail::Escalate => OutcomeKind::Escalate,
        }
    }
}

impl std::fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OutcomeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OutcomeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown outcome kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    /// Empty iff `kind` is `ALLOW`.
    pub failed_constraints: Vec<String>,
    pub reasons: Vec<String>,
}

/// Audit-grade result of one gate evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateReport {
    pub decision_hash: String,
    pub verdicts: Vec<ConstraintVerdict>,
    pub outcome: Outcome,
    pub evaluation_clock: Timestamp,
}

impl GateReport {
    /// Canonical JSON encoding.
    pub fn to_canonical_string(&self) -> String {
        String::from_utf8(canonical::to_canonical_bytes(self)).expect("UTF-8")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GateError {
    #[error("CLASS_MISMATCH: constraint set is for {set:?} but decision is {decision:?}")]
    ClassMismatch { set: String, decision: String },
    #[error("NOT_REJECTED: the decision is allowed, so there is no rejection to preserve")]
    NotRejected,
}

/// Most severe hint under escalate > request_info > defer; `None` if empty.
pub fn route_non_action<I: IntoIterator<Item = OnFail>>(hints: I) -> Option<OutcomeKind> {
    hints.into_iter().max().map(OutcomeKind::from)
}

/// Evaluate every constraint of `set` against `d` and apply the decision rule.
pub fn evaluate(set: &ConstraintSet, d: &DecisionObject, clock: &Timestamp) -> Result<GateReport, GateError> {
    if set.decision_class() != d.decision_class {
        return Err(GateError::ClassMismatch {
            set: set.decision_class().to_owned(),
            decision: d.decision_class.clone(),
        });
    }
    // Evaluate all constraints: the report must show every verdict.
    let verdicts: Vec<ConstraintVerdict> = set
        .constraints()
        .iter()
        .map(|c| eval_constraint(c, d, clock))
        .collect();

    let mut failed = Vec::new();
    let mut reasons = Vec::new();
    let mut hints = Vec::new();
    for (c, v) in set.constraints().iter().zip(&verdicts) {
        if !v.passed() {
            failed.push(c.id.clone());
            reasons.push(format!("{}: {}", c.id, v.reason));
            hints.push(c.on_fail);
        }
    }
    let kind = route_non_action(hints).unwrap_or(OutcomeKind::Allow);
    Ok(GateReport {
        decision_hash: decision_hash(d),
        verdicts,
        outcome: Outcome {
            kind,
            failed_constraints: failed,
            reasons,
        },
        evaluation_clock: clock.clone(),
    })
}

/// Report for a decision whose class has no constraint set: escalated,
/// never allowed.
pub fn unknown_class_report(d: &DecisionObject, clock: &Timestamp) -> GateReport {
    GateReport {
        decision_hash: decision_hash(d),
        verdicts: Vec::new(),
        outcome: Outcome {
            kind: OutcomeKind::Escalate,
            failed_constraints: vec![UNKNOWN_CLASS.to_owned()],
            reasons: vec![format!(
                "{UNKNOWN_CLASS}: no constraint set for decision class {:?}",
                d.decision_class
            )],
        },
        evaluation_clock: clock.clone(),
    }
}

/// Outcome of a monotonic-rejection check.
#[derive(Debug, Clone, Default)]
pub struct MonotonicReport {
    /// Derived decisions that were constructed and evaluated.
    pub derived_checked: usize,
    /// (held constraint, repair subset) combinations no field assignment
    /// could realise, e.g. because repairing one constraint necessarily
    /// repairs the held one.
    pub unrealizable: usize,
    /// A derived decision that was allowed while a held constraint failed.
    pub counterexample: Option<DecisionObject>,
}

impl MonotonicReport {
    pub fn holds(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Above this many other constraints, repair subsets are sampled rather
/// than enumerated.
const EXHAUSTIVE_LIMIT: usize = 10;

/// Check that repairing other constraints never admits a decision while a
/// failed constraint stays failed.
///
/// For every failing constraint `j` and every subset `S` of the remaining
/// constraints, a decision is derived from `d` by changing only fields so
/// that each member of `S` passes while `j` still fails; each derived
/// decision must still be rejected.
pub fn monotonic_rejection_report(
    set: &ConstraintSet,
    d: &DecisionObject,
    clock: &Timestamp,
) -> Result<MonotonicReport, GateError> {
    let base = evaluate(set, d, clock)?;
    if base.outcome.kind.is_allow() {
        return Err(GateError::NotRejected);
    }
    let constraints = set.constraints();
    let mut report = MonotonicReport::default();
    for held_id in &base.outcome.failed_constraints {
        let held = set.get(held_id).expect("failed ids come from the set");
        let others: Vec<_> = constraints.iter().filter(|c| c.id != *held_id).collect();
        for subset in repair_subsets(others.len()) {
            let mut reqs = vec![Requirement::fail(held)];
            reqs.extend(
                others
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| subset & (1u64 << i) != 0)
                    .map(|(_, c)| Requirement::pass(c)),
            );
            let Some(derived) = synthesize(d, &reqs, clock, DEFAULT_BUDGET) else {
                report.unrealizable += 1;
                continue;
            };
            debug_assert!(!eval_constraint(held, &derived, clock).passed());
            report.derived_checked += 1;
            let outcome = evaluate(set, &derived, clock)?;
            if outcome.outcome.kind.is_allow() {
                report.counterexample = Some(derived);
                return Ok(report);
            }
        }
    }
    Ok(report)
}

/// `true` iff every realisable derived decision is still rejected.
pub fn check_monotonic_rejection(set: &ConstraintSet, d: &DecisionObject, clock: &Timestamp) -> Result<bool, GateError> {
    monotonic_rejection_report(set, d, clock).map(|r| r.holds())
}

fn repair_subsets(n: usize) -> Vec<u64> {
    if n <= EXHAUSTIVE_LIMIT {
        return (0..1u64 << n).collect();
    }
    // Empty, full, every singleton and every co-singleton.
    let full = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut out = vec![0, full];
    for i in 0..n.min(64) {
        out.push(1 << i);
        out.push(full & !(1 << i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::parse_decision;
    use crate::dsl::{parse_constraint_set, Schema};

    const SET: &str = r#"
decision_class = "account_suspension"
[[constraint]]
id = "context_verified"
on_fail = "escalate"
expr = "exists(context.identity_verified) and context.identity_verified == true"
[[constraint]]
id = "authority_present"
on_fail = "defer"
expr = "exists(context.authority)"
[[constraint]]
id = "proportionality_scoped"
on_fail = "request_info"
expr = "scope == \"single_account\""
"#;

    fn set() -> ConstraintSet {
        parse_constraint_set(SET.as_bytes(), &Schema::default()).unwrap()
    }

    fn decision(context: &str) -> DecisionObject {
        let text = format!(
            r#"{{"decision_class":"account_suspension","operation":"disable_account","target":"u","scope":"single_account","timing":"2026-04-01T12:00:00Z","context":{context}}}"#
        );
        parse_decision(text.as_bytes()).unwrap()
    }

    fn clock() -> Timestamp {
        Timestamp::parse("2026-04-01T12:00:00Z").unwrap()
    }

    #[test]
    fn suspension_escalates() {
        let r = evaluate(&set(), &decision(r#"{"authority":"tns"}"#), &clock()).unwrap();
        assert_eq!(r.outcome.kind, OutcomeKind::Escalate);
        assert_eq!(r.outcome.failed_constraints, ["context_verified"]);
        assert_eq!(r.verdicts.len(), 3);
    }

    #[test]
    fn all_pass_allows() {
        let r = evaluate(
            &set(),
            &decision(r#"{"authority":"tns","identity_verified":true}"#),
            &clock(),
        )
        .unwrap();
        assert_eq!(r.outcome.kind, OutcomeKind::Allow);
        assert!(r.outcome.failed_constraints.is_empty());
        assert!(r.outcome.reasons.is_empty());
    }

    #[test]
    fn no_short_circuit_and_max_severity() {
        let r = evaluate(&set(), &decision("{}"), &clock()).unwrap();
        assert_eq!(r.outcome.failed_constraints, ["authority_present", "context_verified"]);
        assert_eq!(r.outcome.kind, OutcomeKind::Escalate);
    }

    #[test]
    fn class_mismatch_is_an_error() {
        let mut d = decision("{}");
        d.decision_class = "payment_release".into();
        assert!(matches!(evaluate(&set(), &d, &clock()), Err(GateError::ClassMismatch { .. })));
    }

    #[test]
    fn routing() {
        assert_eq!(route_non_action([OnFail::Defer, OnFail::Escalate]), Some(OutcomeKind::Escalate));
        assert_eq!(route_non_action([OnFail::RequestInfo]), Some(OutcomeKind::RequestInfo));
        assert_eq!(route_non_action([OnFail::Defer, OnFail::RequestInfo, OnFail::Defer]), Some(OutcomeKind::RequestInfo));
        assert_eq!(route_non_action([]), None);
    }

    #[test]
    fn monotonic_rejection_three_constraints() {
        let d = decision(r#"{"authority":"tns"}"#);
        let report = monotonic_rejection_report(&set(), &d, &clock()).unwrap();
        assert!(report.holds());
        // One held constraint, 2^2 repair subsets of the other two.
        assert_eq!(report.derived_checked, 4);
    }

    #[test]
    fn monotonic_rejection_single_constraint() {
        let src = "decision_class = \"account_suspension\"\n[[constraint]]\nid = \"a\"\non_fail = \"defer\"\nexpr = \"exists(context.a)\"\n";
        let set = parse_constraint_set(src.as_bytes(), &Schema::default()).unwrap();
        assert_eq!(check_monotonic_rejection(&set, &decision("{}"), &clock()), Ok(true));
        let allowed = decision(r#"{"a":1}"#);
        assert_eq!(check_monotonic_rejection(&set, &allowed, &clock()), Err(GateError::NotRejected));
    }

    #[test]
    fn unknown_class_never_allows() {
        let r = unknown_class_report(&decision("{}"), &clock());
        assert_eq!(r.outcome.kind, OutcomeKind::Escalate);
        assert_eq!(r.outcome.failed_constraints, [UNKNOWN_CLASS]);
    }
}
