//! Load-time type checking of constraint expressions against the decision
//! schema.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::{CmpOp, Expr, Literal, Path};
use crate::decision::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    Boolean,
    Number,
    String,
    Timestamp,
    /// Undeclared context data; checked when evaluated.
    Any,
}

impl FieldType {
    fn name(self) -> &'static str {
        match self {
            FieldType::Boolean => "boolean",
            FieldType::Number => "number",
            FieldType::String => "string",
            FieldType::Timestamp => "timestamp",
            FieldType::Any => "any",
        }
    }
}

/// What constraint expressions may read from a decision.
///
/// The fixed decision fields always resolve. `features.<name>` is a number.
/// `context.<path>` takes its declared type when listed in `context`;
/// undeclared context paths are dynamically typed unless `strict_context`
/// is set, in which case they are rejected. `metadata` is never readable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default)]
    pub context: BTreeMap<String, FieldType>,
    #[serde(default)]
    pub strict_context: bool,
}

impl Schema {
    pub fn merged(&self, other: &Schema) -> Schema {
        let mut context = self.context.clone();
        context.extend(other.context.iter().map(|(k, v)| (k.clone(), *v)));
        Schema {
            context,
            strict_context: self.strict_context || other.strict_context,
        }
    }

    /// Static type of a path, or `None` if the path cannot exist.
    pub fn resolve(&self, path: &Path) -> Option<FieldType> {
        let rest = path.rest();
        match path.root() {
            "decision_class" | "operation" | "target" | "scope" if rest.is_empty() => {
                Some(FieldType::String)
            }
            "timing" if rest.is_empty() => Some(FieldType::Timestamp),
            "features" if rest.len() == 1 => Some(FieldType::Number),
            "context" if !rest.is_empty() => match self.context.get(&rest.join(".")) {
                Some(t) => Some(*t),
                None if self.strict_context => None,
                None => Some(FieldType::Any),
            },
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeError {
    UnknownPath(Path),
    Mismatch { location: String, detail: String },
}

fn literal_type(l: &Literal) -> FieldType {
    match l {
        Literal::Str(_) => FieldType::String,
        Literal::Num(_) => FieldType::Number,
        Literal::Bool(_) => FieldType::Boolean,
    }
}

fn is_timestamp_literal(e: &Expr) -> bool {
    matches!(e, Expr::Lit(Literal::Str(s)) if Timestamp::parse(s).is_ok())
}

fn mismatch(at: &Expr, detail: String) -> TypeError {
    TypeError::Mismatch {
        location: at.to_string(),
        detail,
    }
}

/// Check that `expr` is a well-typed boolean expression.
pub fn check_boolean(expr: &Expr, schema: &Schema) -> Result<(), TypeError> {
    match type_of(expr, schema)? {
        FieldType::Boolean | FieldType::Any => Ok(()),
        other => Err(mismatch(expr, format!("constraint must be boolean, found {}", other.name()))),
    }
}

fn operands_compatible(
    op: CmpOp,
    (lt, lhs): (FieldType, &Expr),
    (rt, rhs): (FieldType, &Expr),
) -> bool {
    use FieldType::*;
    let orderable = |t: FieldType| t != Boolean;
    match (lt, rt) {
        (Any, Any) => true,
        (Any, t) | (t, Any) => !op.is_ordering() || orderable(t),
        (Timestamp, String) => is_timestamp_literal(rhs),
        (String, Timestamp) => is_timestamp_literal(lhs),
        (a, b) if a == b => !op.is_ordering() || orderable(a),
        _ => false,
    }
}

fn type_of(expr: &Expr, schema: &Schema) -> Result<FieldType, TypeError> {
    let path_type = |p: &Path| schema.resolve(p).ok_or_else(|| TypeError::UnknownPath(p.clone()));
    match expr {
        Expr::Lit(l) => Ok(literal_type(l)),
        Expr::Path(p) => path_type(p),
        Expr::Exists(p) => path_type(p).map(|_| FieldType::Boolean),
        Expr::AgeSeconds(p) => match path_type(p)? {
            FieldType::Timestamp | FieldType::Any => Ok(FieldType::Number),
            other => Err(mismatch(expr, format!("age_seconds needs a timestamp, found {}", other.name()))),
        },
        Expr::In { path, items } => {
            let pt = path_type(path)?;
            let first = literal_type(&items[0]);
            if let Some(odd) = items.iter().find(|l| literal_type(l) != first) {
                return Err(mismatch(
                    expr,
                    format!("list mixes {} and {}", first.name(), literal_type(odd).name()),
                ));
            }
            let as_path = Expr::Path(path.clone());
            for item in items {
                let lit = Expr::Lit(item.clone());
                if !operands_compatible(CmpOp::Eq, (pt, &as_path), (first, &lit)) {
                    return Err(mismatch(
                        expr,
                        format!("{} is {} but list holds {}", path, pt.name(), first.name()),
                    ));
                }
            }
            Ok(FieldType::Boolean)
        }
        Expr::Cmp { op, lhs, rhs } => {
            let lt = type_of(lhs, schema)?;
            let rt = type_of(rhs, schema)?;
            if !operands_compatible(*op, (lt, lhs), (rt, rhs)) {
                return Err(mismatch(
                    expr,
                    format!("cannot apply '{}' to {} and {}", op.symbol(), lt.name(), rt.name()),
                ));
            }
            Ok(FieldType::Boolean)
        }
        Expr::And(a, b) | Expr::Or(a, b) => {
            for side in [a, b] {
                let t = type_of(side, schema)?;
                if !matches!(t, FieldType::Boolean | FieldType::Any) {
                    return Err(mismatch(side, format!("expected boolean operand, found {}", t.name())));
                }
            }
            Ok(FieldType::Boolean)
        }
        Expr::Not(a) => {
            let t = type_of(a, schema)?;
            if !matches!(t, FieldType::Boolean | FieldType::Any) {
                return Err(mismatch(a, format!("expected boolean operand, found {}", t.name())));
            }
            Ok(FieldType::Boolean)
        }
    }
}
