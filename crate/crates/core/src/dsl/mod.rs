//! The constraint language: required legitimacy predicates over decisions.
//!
//! A constraint-set file (TOML or JSON) names one decision class and lists
//! its constraints. Every expression is parsed and type-checked at load
//! time, so evaluation never meets a malformed predicate.
//!
//! ```toml
//! decision_class = "account_suspension"
//!
//! [schema.context]
//! identity_verified = "boolean"
//!
//! [[constraint]]
//! id = "context_verified"
//! description = "Independent contextual verification completed"
//! on_fail = "escalate"
//! expr = "exists(context.identity_verified) and context.identity_verified == true"
//! ```

pub mod ast;
pub mod eval;
pub mod parser;
pub mod types;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{CmpOp, Expr, Literal, Path};
pub use eval::{eval_constraint, eval_expr, eval_outcome, ConstraintVerdict, VerdictResult};
pub use parser::{parse_expr, ParseError};
pub use types::{FieldType, Schema, TypeError};

/// Routing hint applied when a constraint fails. Ordered by severity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnFail {
    Defer,
    RequestInfo,
    Escalate,
}

impl OnFail {
    pub const ALL: [OnFail; 3] = [OnFail::Defer, OnFail::RequestInfo, OnFail::Escalate];

    pub fn as_str(self) -> &'static str {
        match self {
            OnFail::Defer => "defer",
            OnFail::RequestInfo => "request_info",
            OnFail::Escalate => "escalate",
        }
    }
}

/// One required predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintDef {
    pub id: String,
    pub description: String,
    pub expr: Expr,
    pub on_fail: OnFail,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("SYNTAX_ERROR at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("UNKNOWN_PATH: {path} (constraint {constraint})")]
    UnknownPath { constraint: String, path: String },
    #[error("TYPE_MISMATCH in constraint {constraint} at `{location}`: {detail}")]
    TypeMismatch {
        constraint: String,
        location: String,
        detail: String,
    },
    #[error("DUPLICATE_ID: {0}")]
    DuplicateId(String),
    #[error("INVALID_ID: {0:?} must match [a-z0-9_]+")]
    InvalidId(String),
    #[error("EMPTY_SET: decision class {0} has no constraints (set allow_empty = true to permit)")]
    EmptySet(String),
    #[error("DUPLICATE_CLASS: {0} is defined by more than one constraint-set file")]
    DuplicateClass(String),
    #[error("IO_FAILURE: {0}")]
    Io(String),
}

impl DslError {
    pub fn code(&self) -> &'static str {
        match self {
            DslError::Syntax { .. } => "SYNTAX_ERROR",
            DslError::UnknownPath { .. } => "UNKNOWN_PATH",
            DslError::TypeMismatch { .. } => "TYPE_MISMATCH",
            DslError::DuplicateId(_) => "DUPLICATE_ID",
            DslError::InvalidId(_) => "INVALID_ID",
            DslError::EmptySet(_) => "EMPTY_SET",
            DslError::DuplicateClass(_) => "DUPLICATE_CLASS",
            DslError::Io(_) => "IO_FAILURE",
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl ConstraintDef {
    /// Parse and type-check a single constraint.
    pub fn new(
        id: &str,
        description: &str,
        on_fail: OnFail,
        expr_src: &str,
        schema: &Schema,
    ) -> Result<Self, DslError> {
        let expr = parse_expr(expr_src).map_err(|e| DslError::Syntax {
            line: e.line,
            column: e.column,
            message: format!("constraint {id}: {}", e.message),
        })?;
        Self::from_expr(id, description, on_fail, expr, schema)
    }

    pub fn from_expr(
        id: &str,
        description: &str,
        on_fail: OnFail,
        expr: Expr,
        schema: &Schema,
    ) -> Result<Self, DslError> {
        if !valid_id(id) {
            return Err(DslError::InvalidId(id.to_owned()));
        }
        types::check_boolean(&expr, schema).map_err(|e| match e {
            TypeError::UnknownPath(p) => DslError::UnknownPath {
                constraint: id.to_owned(),
                path: p.to_string(),
            },
            TypeError::Mismatch { location, detail } => DslError::TypeMismatch {
                constraint: id.to_owned(),
                location,
                detail,
            },
        })?;
        Ok(ConstraintDef {
            id: id.to_owned(),
            description: description.to_owned(),
            expr,
            on_fail,
        })
    }
}

/// The required constraints of one decision class, ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    decision_class: String,
    constraints: Vec<ConstraintDef>,
    schema: Schema,
    allow_empty: bool,
}

impl ConstraintSet {
    pub fn new(
        decision_class: &str,
        mut constraints: Vec<ConstraintDef>,
        schema: Schema,
        allow_empty: bool,
    ) -> Result<Self, DslError> {
        if constraints.is_empty() && !allow_empty {
            return Err(DslError::EmptySet(decision_class.to_owned()));
        }
        let mut seen = BTreeSet::new();
        for c in &constraints {
            if !seen.insert(c.id.as_str()) {
                return Err(DslError::DuplicateId(c.id.clone()));
            }
        }
        constraints.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(ConstraintSet {
            decision_class: decision_class.to_owned(),
            constraints,
            schema,
            allow_empty,
        })
    }

    pub fn decision_class(&self) -> &str {
        &self.decision_class
    }

    pub fn constraints(&self) -> &[ConstraintDef] {
        &self.constraints
    }

    pub fn get(&self, id: &str) -> Option<&ConstraintDef> {
        self.constraints.iter().find(|c| c.id == id)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn allow_empty(&self) -> bool {
        self.allow_empty
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Source form of the set (TOML), parseable by [`parse_constraint_set`].
    pub fn to_toml(&self) -> String {
        let mut file = SetFile {
            decision_class: self.decision_class.clone(),
            allow_empty: self.allow_empty,
            schema: self.schema.clone(),
            constraint: Vec::new(),
        };
        for c in &self.constraints {
            file.constraint.push(ConstraintFile {
                id: c.id.clone(),
                description: c.description.clone(),
                on_fail: c.on_fail,
                expr: c.expr.to_string(),
            });
        }
        toml::to_string(&file).expect("constraint set serializes to TOML")
    }
}

/// On-disk layout. `E` is the expression field: spanned for TOML so syntax
/// errors can point into the file, plain for JSON.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetFile<E> {
    decision_class: String,
    #[serde(default)]
    allow_empty: bool,
    #[serde(default)]
    schema: Schema,
    #[serde(default = "Vec::new")]
    constraint: Vec<ConstraintFile<E>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintFile<E> {
    id: String,
    #[serde(default)]
    description: String,
    on_fail: OnFail,
    expr: E,
}

impl SetFile<String> {
    fn located(self, text: &str) -> SetFile<(String, (usize, usize))> {
        SetFile {
            decision_class: self.decision_class,
            allow_empty: self.allow_empty,
            schema: self.schema,
            constraint: self
                .constraint
                .into_iter()
                .map(|c| {
                    let at = json_expr_position(text, &c.expr);
                    ConstraintFile {
                        id: c.id,
                        description: c.description,
                        on_fail: c.on_fail,
                        expr: (c.expr, at),
                    }
                })
                .collect(),
        }
    }
}

impl SetFile<toml::Spanned<String>> {
    fn located(self, text: &str) -> SetFile<(String, (usize, usize))> {
        SetFile {
            decision_class: self.decision_class,
            allow_empty: self.allow_empty,
            schema: self.schema,
            constraint: self
                .constraint
                .into_iter()
                .map(|c| {
                    // +1 skips the opening quote of the TOML string.
                    let (line, col) = line_col(text, c.expr.span().start);
                    ConstraintFile {
                        id: c.id,
                        description: c.description,
                        on_fail: c.on_fail,
                        expr: (c.expr.into_inner(), (line, col + 1)),
                    }
                })
                .collect(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parse and type-check a constraint-set file. `base` is the decision
/// schema; a `[schema]` table in the file extends it.
pub fn parse_constraint_set(input: &[u8], base: &Schema) -> Result<ConstraintSet, DslError> {
    let text = std::str::from_utf8(input).map_err(|e| DslError::Syntax {
        line: 1,
        column: 1,
        message: format!("invalid UTF-8: {e}"),
    })?;
    let file = if text.trim_start().starts_with('{') {
        let file: SetFile<String> = serde_json::from_str(text).map_err(|e| DslError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.located(text)
    } else {
        let file: SetFile<toml::Spanned<String>> = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            DslError::Syntax {
                line,
                column,
                message: e.message().to_owned(),
            }
        })?;
        file.located(text)
    };

    let schema = base.merged(&file.schema);
    let mut constraints = Vec::with_capacity(file.constraint.len());
    for c in file.constraint {
        let (src, (file_line, file_col)) = c.expr;
        let def = ConstraintDef::new(&c.id, &c.description, c.on_fail, &src, &schema).map_err(|e| match e {
            DslError::Syntax {
                line,
                column,
                message,
            } => DslError::Syntax {
                line: file_line + line - 1,
                column: if line == 1 { file_col + column - 1 } else { column },
                message,
            },
            other => other,
        })?;
        constraints.push(def);
    }
    ConstraintSet::new(&file.decision_class, constraints, schema, file.allow_empty)
}

fn json_expr_position(text: &str, src: &str) -> (usize, usize) {
    let encoded = serde_json::to_string(src).unwrap_or_default();
    match text.find(&encoded) {
        Some(offset) => {
            let (l, c) = line_col(text, offset);
            (l, c + 1)
        }
        None => (1, 1),
    }
}

/// Load every `*.toml` / `*.json` constraint-set file in `dir`, keyed by
/// decision class.
pub fn load_constraint_dir(
    dir: &FsPath,
    base: &Schema,
) -> Result<BTreeMap<String, ConstraintSet>, DslError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DslError::Io(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<std::path::PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file() && matches!(p.extension().and_then(|x| x.to_str()), Some("toml" | "json"))
        })
        .collect();
    files.sort();
    let mut sets = BTreeMap::new();
    for path in files {
        let bytes = std::fs::read(&path).map_err(|e| DslError::Io(format!("{}: {e}", path.display())))?;
        let set = parse_constraint_set(&bytes, base).map_err(|e| match e {
            DslError::Syntax {
                line,
                column,
                message,
            } => DslError::Syntax {
                line,
                column,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        let class = set.decision_class().to_owned();
        if sets.insert(class.clone(), set).is_some() {
            return Err(DslError::DuplicateClass(class));
        }
    }
    Ok(sets)
}
