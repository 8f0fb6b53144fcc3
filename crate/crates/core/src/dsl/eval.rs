//! Fail-closed evaluation of constraint expressions.
//!
//! Every sub-expression is evaluated; any missing field (outside `exists`)
//! or type incident anywhere in the tree makes the verdict `fail`, even
//! where a short-circuiting evaluator would have ignored the operand.

use std::cmp::Ordering;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ast::{CmpOp, Expr, Literal, Path};
use super::ConstraintDef;
use crate::decision::{DecisionObject, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictResult {
    Pass,
    Fail,
}

/// The value of one constraint predicate on one decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintVerdict {
    pub constraint_id: String,
    pub result: VerdictResult,
    pub reason: String,
}

impl ConstraintVerdict {
    pub fn passed(&self) -> bool {
        self.result == VerdictResult::Pass
    }
}

#[derive(Debug, Clone)]
enum Val<'a> {
    Bool(bool),
    Num(f64),
    Str(&'a str),
    Time(DateTime<FixedOffset>),
    /// A list or map from context: present, but not comparable.
    Opaque(&'static str),
}

impl Val<'_> {
    fn kind(&self) -> &'static str {
        match self {
            Val::Bool(_) => "boolean",
            Val::Num(_) => "number",
            Val::Str(_) => "string",
            Val::Time(_) => "timestamp",
            Val::Opaque(k) => k,
        }
    }
}

#[derive(Debug, Clone)]
enum Incident {
    Missing(Path),
    Type(String),
}

impl Incident {
    fn reason(&self) -> String {
        match self {
            Incident::Missing(p) => format!("{p} missing → fail-closed"),
            Incident::Type(msg) => format!("type incident: {msg} → fail-closed"),
        }
    }
}

/// Resolve a path on a decision. `None` means absent or null.
fn lookup<'a>(d: &'a DecisionObject, path: &Path) -> Option<Val<'a>> {
    let rest = path.rest();
    match (path.root(), rest.len()) {
        ("decision_class", 0) => Some(Val::Str(&d.decision_class)),
        ("operation", 0) => Some(Val::Str(&d.operation)),
        ("target", 0) => Some(Val::Str(&d.target)),
        ("scope", 0) => Some(Val::Str(&d.scope)),
        ("timing", 0) => Some(Val::Time(d.timing.instant())),
        ("features", 1) => d.features.get(&rest[0]).map(|x| Val::Num(*x)),
        ("context", n) if n > 0 => {
            let mut node = d.context.get(&rest[0])?;
            for seg in &rest[1..] {
                node = node.as_object()?.get(seg)?;
            }
            match node {
                Value::Null => None,
                Value::Bool(b) => Some(Val::Bool(*b)),
                Value::Number(n) => n.as_f64().map(Val::Num),
                Value::String(s) => Some(Val::Str(s)),
                Value::Array(_) => Some(Val::Opaque("list")),
                Value::Object(_) => Some(Val::Opaque("map")),
            }
        }
        _ => None,
    }
}

fn as_time(v: &Val<'_>) -> Option<DateTime<FixedOffset>> {
    match v {
        Val::Time(t) => Some(*t),
        Val::Str(s) => Timestamp::parse(s).ok().map(|t| t.instant()),
        _ => None,
    }
}

fn compare(op: CmpOp, lhs: &Val<'_>, rhs: &Val<'_>) -> Result<bool, Incident> {
    let ord: Option<Ordering> = match (lhs, rhs) {
        (Val::Num(a), Val::Num(b)) => a.partial_cmp(b),
        (Val::Str(a), Val::Str(b)) => Some(a.cmp(b)),
        (Val::Bool(a), Val::Bool(b)) => {
            if op.is_ordering() {
                return Err(Incident::Type(format!("'{}' on booleans", op.symbol())));
            }
            Some(a.cmp(b))
        }
        (Val::Time(_), _) | (_, Val::Time(_)) => match (as_time(lhs), as_time(rhs)) {
            (Some(a), Some(b)) => Some(a.cmp(&b)),
            _ => None,
        },
        _ => None,
    };
    let Some(ord) = ord else {
        return Err(Incident::Type(format!(
            "cannot apply '{}' to {} and {}",
            op.symbol(),
            lhs.kind(),
            rhs.kind()
        )));
    };
    Ok(match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    })
}

fn literal_val(l: &Literal) -> Val<'_> {
    match l {
        Literal::Str(s) => Val::Str(s),
        Literal::Num(x) => Val::Num(*x),
        Literal::Bool(b) => Val::Bool(*b),
    }
}

struct Evaluator<'a> {
    decision: &'a DecisionObject,
    clock: &'a Timestamp,
}

impl<'a> Evaluator<'a> {
    fn read(&self, path: &Path) -> Result<Val<'a>, Incident> {
        lookup(self.decision, path).ok_or_else(|| Incident::Missing(path.clone()))
    }

    fn boolean(&self, e: &'a Expr) -> Result<bool, Incident> {
        match self.eval(e)? {
            Val::Bool(b) => Ok(b),
            other => Err(Incident::Type(format!("{e} is {}, expected boolean", other.kind()))),
        }
    }

    fn eval(&self, e: &'a Expr) -> Result<Val<'a>, Incident> {
        match e {
            Expr::Lit(l) => Ok(literal_val(l)),
            Expr::Path(p) => self.read(p),
            Expr::Exists(p) => Ok(Val::Bool(lookup(self.decision, p).is_some())),
            Expr::AgeSeconds(p) => {
                let v = self.read(p)?;
                let Some(at) = as_time(&v) else {
                    return Err(Incident::Type(format!("{p} is not a timestamp")));
                };
                let delta = self.clock.instant().signed_duration_since(at);
                let secs = match delta.num_microseconds() {
                    Some(us) => us as f64 / 1e6,
                    None => delta.num_seconds() as f64,
                };
                Ok(Val::Num(secs))
            }
            Expr::In { path, items } => {
                let v = self.read(path)?;
                let mut hit = false;
                for item in items {
                    hit |= compare(CmpOp::Eq, &v, &literal_val(item))?;
                }
                Ok(Val::Bool(hit))
            }
            Expr::Cmp { op, lhs, rhs } => {
                let l = self.eval(lhs);
                let r = self.eval(rhs);
                Ok(Val::Bool(compare(*op, &l?, &r?)?))
            }
            Expr::And(a, b) => {
                let l = self.boolean(a);
                let r = self.boolean(b);
                Ok(Val::Bool(l? & r?))
            }
            Expr::Or(a, b) => {
                let l = self.boolean(a);
                let r = self.boolean(b);
                Ok(Val::Bool(l? | r?))
            }
            Expr::Not(a) => Ok(Val::Bool(!self.boolean(a)?)),
        }
    }
}

/// `Some(value)` of a boolean expression, or `None` on a missing-data or
/// type incident.
pub fn eval_outcome(expr: &Expr, d: &DecisionObject, clock: &Timestamp) -> Option<bool> {
    Evaluator { decision: d, clock }.boolean(expr).ok()
}

/// Evaluate an expression to a verdict `(passed, reason)`.
pub fn eval_expr(expr: &Expr, d: &DecisionObject, clock: &Timestamp) -> (bool, String) {
    let ev = Evaluator { decision: d, clock };
    match ev.boolean(expr) {
        Ok(true) => (true, "satisfied".to_owned()),
        Ok(false) => (false, "evaluated to false".to_owned()),
        Err(incident) => (false, incident.reason()),
    }
}

/// Evaluate one constraint against a decision at the given clock.
pub fn eval_constraint(c: &ConstraintDef, d: &DecisionObject, clock: &Timestamp) -> ConstraintVerdict {
    let (passed, reason) = eval_expr(&c.expr, d, clock);
    ConstraintVerdict {
        constraint_id: c.id.clone(),
        result: if passed {
            VerdictResult::Pass
        } else {
            VerdictResult::Fail
        },
        reason,
    }
}
