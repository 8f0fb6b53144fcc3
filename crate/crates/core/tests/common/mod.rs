//! Random expression and decision generators shared by the property suites.
#![allow(dead_code)]

use proptest::prelude::*;
use rta_core::dsl::{CmpOp, ConstraintDef, Expr, Literal, OnFail, Path};
use rta_core::{parse_decision, ConstraintSet, DecisionObject, Schema};
use serde_json::{json, Value};

pub const PATHS: [&str; 9] = [
    "context.a",
    "context.b",
    "context.n.x",
    "features.f",
    "features.g",
    "scope",
    "operation",
    "timing",
    "target",
];

pub fn path() -> impl Strategy<Value = Path> {
    prop::sample::select(PATHS.to_vec()).prop_map(Path::parse)
}

pub fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![
        any::<bool>().prop_map(Literal::Bool),
        prop::sample::select(vec![0.0, 0.5, 1.0, 2.0, -1.0, 300.0]).prop_map(Literal::Num),
        prop::sample::select(vec!["x", "y", "single_account", "2026-04-01T12:00:00Z"])
            .prop_map(|s| Literal::Str(s.into())),
    ]
}

pub fn op() -> impl Strategy<Value = CmpOp> {
    prop::sample::select(CmpOp::ALL.to_vec())
}

pub fn atom() -> impl Strategy<Value = Expr> {
    prop_oneof![
        literal().prop_map(Expr::Lit),
        path().prop_map(Expr::Exists),
        (op(), path(), literal()).prop_map(|(o, p, l)| Expr::cmp(o, Expr::Path(p), Expr::Lit(l))),
        (op(), path(), path()).prop_map(|(o, p, q)| Expr::cmp(o, Expr::Path(p), Expr::Path(q))),
        (op(), literal()).prop_map(|(o, l)| Expr::cmp(o, Expr::AgeSeconds(Path::parse("timing")), Expr::Lit(l))),
        (path(), prop::collection::vec(literal(), 1..4)).prop_map(|(path, items)| Expr::In { path, items }),
        path().prop_map(Expr::Path),
    ]
}

pub fn expr() -> impl Strategy<Value = Expr> {
    atom().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.and(b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.or(b)),
            inner.prop_map(Expr::negate),
        ]
    })
}

pub fn context_value() -> impl Strategy<Value = Option<Value>> {
    prop_oneof![
        Just(None),
        Just(Some(Value::Null)),
        any::<bool>().prop_map(|b| Some(json!(b))),
        prop::sample::select(vec![0.0, 0.5, 1.0, 2.0]).prop_map(|x| Some(json!(x))),
        prop::sample::select(vec!["x", "y", "2026-04-01T12:00:00Z"]).prop_map(|s| Some(json!(s))),
        Just(Some(json!([1, 2]))),
        Just(Some(json!({"x": 1.0}))),
    ]
}

pub fn decision() -> impl Strategy<Value = DecisionObject> {
    (
        context_value(),
        context_value(),
        context_value(),
        prop::option::of(prop::sample::select(vec![0.0, 0.5, 1.0])),
        prop::option::of(prop::sample::select(vec![0.0, 0.5, 1.0])),
        prop::sample::select(vec!["x", "single_account"]),
        prop::sample::select(vec!["2026-04-01T12:00:00Z", "2026-04-01T12:05:00Z", "2026-04-01T12:10:00+02:00"]),
    )
        .prop_map(|(a, b, n, f, g, scope, timing)| {
            let mut ctx = serde_json::Map::new();
            if let Some(a) = a {
                ctx.insert("a".into(), a);
            }
            if let Some(b) = b {
                ctx.insert("b".into(), b);
            }
            if let Some(n) = n {
                ctx.insert("n".into(), json!({ "x": n }));
            }
            let mut feats = serde_json::Map::new();
            if let Some(f) = f {
                feats.insert("f".into(), json!(f));
            }
            if let Some(g) = g {
                feats.insert("g".into(), json!(g));
            }
            let v = json!({
                "decision_class": "c", "operation": "x", "target": "y", "scope": scope,
                "timing": timing, "context": ctx, "features": feats,
            });
            parse_decision(v.to_string().as_bytes()).unwrap()
        })
}

pub fn on_fail() -> impl Strategy<Value = OnFail> {
    prop::sample::select(OnFail::ALL.to_vec())
}

/// Constraint sets of 1..=max constraints over random expressions. The
/// expressions are not type-checked: evaluation must cope regardless.
pub fn constraint_set(max: usize) -> impl Strategy<Value = ConstraintSet> {
    prop::collection::vec((expr(), on_fail()), 1..=max).prop_map(|items| {
        let defs = items
            .into_iter()
            .enumerate()
            .map(|(i, (expr, on_fail))| ConstraintDef {
                id: format!("k{i}"),
                description: String::new(),
                expr,
                on_fail,
            })
            .collect();
        ConstraintSet::new("c", defs, Schema::default(), false).unwrap()
    })
}

/// Context fields declared for the typed generators.
pub fn typed_schema() -> Schema {
    let mut s = Schema::default();
    for (k, t) in [
        ("ok", rta_core::dsl::FieldType::Boolean),
        ("level", rta_core::dsl::FieldType::Number),
        ("state", rta_core::dsl::FieldType::String),
        ("seen_at", rta_core::dsl::FieldType::Timestamp),
    ] {
        s.context.insert(k.into(), t);
    }
    s
}

pub fn typed_atom() -> impl Strategy<Value = String> {
    let ops = prop::sample::select(vec!["==", "!=", "<", "<=", ">", ">="]);
    prop_oneof![
        prop::sample::select(vec!["ok", "level", "state", "seen_at", "note"]).prop_map(|f| format!("exists(context.{f})")),
        any::<bool>().prop_map(|b| format!("context.ok == {b}")),
        (ops.clone(), 0..4u8).prop_map(|(o, c)| format!("context.level {o} {c}")),
        prop::sample::select(vec![r#"in(context.state, ["open", "held"])"#, r#"context.state == "closed""#]).prop_map(String::from),
        prop::sample::select(vec![r#"scope == "single_account""#, r#"operation == "disable_account""#]).prop_map(String::from),
        (ops.clone(), prop::sample::select(vec!["0.25", "0.5", "0.75"])).prop_map(|(o, c)| format!("features.f {o} {c}")),
        (ops, prop::sample::select(vec!["60", "600"])).prop_map(|(o, c)| format!("age_seconds(timing) {o} {c}")),
        Just("age_seconds(context.seen_at) <= 3600".to_owned()),
    ]
}

pub fn typed_expr() -> impl Strategy<Value = String> {
    (
        prop::collection::vec((typed_atom(), any::<bool>()), 1..=3),
        prop::collection::vec(any::<bool>(), 2),
    )
        .prop_map(|(atoms, joins)| {
            let mut out = String::new();
            for (i, (a, neg)) in atoms.into_iter().enumerate() {
                if i > 0 {
                    out.push_str(if joins[i - 1] { " and " } else { " or " });
                }
                if neg {
                    out.push_str(&format!("not ({a})"));
                } else {
                    out.push_str(&format!("({a})"));
                }
            }
            out
        })
}

/// Well-typed constraint sets of 1..=max constraints.
pub fn typed_constraint_set(max: usize) -> impl Strategy<Value = ConstraintSet> {
    prop::collection::vec((typed_expr(), on_fail()), 1..=max).prop_map(|items| {
        let schema = typed_schema();
        let defs = items
            .into_iter()
            .enumerate()
            .map(|(i, (src, hint))| ConstraintDef::new(&format!("k{i}"), "", hint, &src, &schema).unwrap())
            .collect();
        ConstraintSet::new("c", defs, schema, false).unwrap()
    })
}

pub fn typed_decision() -> impl Strategy<Value = DecisionObject> {
    (
        prop::option::of(any::<bool>()),
        prop::option::of(0..4u8),
        prop::option::of(prop::sample::select(vec!["open", "held", "closed"])),
        prop::option::of(prop::sample::select(vec!["2026-04-01T11:00:00Z", "2026-03-01T00:00:00Z"])),
        prop::option::of(prop::sample::select(vec![0.0, 0.5, 1.0])),
        prop::sample::select(vec!["single_account", "global"]),
        prop::sample::select(vec!["2026-04-01T12:09:30Z", "2026-04-01T11:00:00Z"]),
    )
        .prop_map(|(ok, level, state, seen, f, scope, timing)| {
            let mut ctx = serde_json::Map::new();
            if let Some(v) = ok {
                ctx.insert("ok".into(), json!(v));
            }
            if let Some(v) = level {
                ctx.insert("level".into(), json!(v));
            }
            if let Some(v) = state {
                ctx.insert("state".into(), json!(v));
            }
            if let Some(v) = seen {
                ctx.insert("seen_at".into(), json!(v));
            }
            let mut feats = serde_json::Map::new();
            if let Some(v) = f {
                feats.insert("f".into(), json!(v));
            }
            let v = json!({
                "decision_class": "c", "operation": "disable_account", "target": "u", "scope": scope,
                "timing": timing, "context": ctx, "features": feats,
            });
            parse_decision(v.to_string().as_bytes()).unwrap()
        })
}
