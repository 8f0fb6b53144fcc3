//! Reason-then-act gating: decision objects, the constraint language, the
//! gate evaluator, a compensatory scoring baseline, divergence analysis and
//! a hash-chained audit log.

pub mod audit;
pub mod canonical;
pub mod corpus;
pub mod decision;
pub mod divergence;
pub mod dsl;
pub mod gate;
pub mod scoring;
pub mod synth;

pub use canonical::{sha256_hex, to_canonical_bytes, to_canonical_string};
pub use decision::{canonicalize, decision_hash, parse_decision, DecisionError, DecisionObject, Timestamp};
pub use dsl::{
    load_constraint_dir, parse_constraint_set, ConstraintDef, ConstraintSet, ConstraintVerdict, DslError, OnFail,
    Schema, VerdictResult,
};
pub use gate::{evaluate, GateError, GateReport, Outcome, OutcomeKind};
pub use scoring::{score, ScoreReport, ScoringError, ScoringModel};
