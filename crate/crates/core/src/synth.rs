//! Field-level decision synthesis.
//!
//! Given a base decision and a list of requirements ("constraint A must
//! pass, constraint B must fail"), search for a decision that differs from
//! the base only in fields the constraints read and meets every
//! requirement. Candidate values come from the literals in the constraint
//! expressions plus their immediate neighbours, so the search covers each
//! comparison boundary. The search is a bounded backtracking over paths,
//! checking each requirement as soon as all of its paths are assigned.
//!
//! Used to derive decisions for monotonic-rejection checks and to build
//! divergence witnesses.

use std::collections::BTreeMap;

use chrono::{Duration, SecondsFormat};
use serde_json::{Map, Value};

use crate::decision::{DecisionObject, Timestamp};
use crate::dsl::{eval_constraint, eval_outcome, ConstraintDef, Expr, Literal, Path};

/// Default cap on search nodes per synthesis call.
pub const DEFAULT_BUDGET: usize = 50_000;

#[derive(Debug, Clone, Copy)]
pub struct Requirement<'a> {
    pub constraint: &'a ConstraintDef,
    pub pass: bool,
}

impl<'a> Requirement<'a> {
    pub fn pass(constraint: &'a ConstraintDef) -> Self {
        Requirement { constraint, pass: true }
    }

    pub fn fail(constraint: &'a ConstraintDef) -> Self {
        Requirement {
            constraint,
            pass: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Candidate {
    Keep,
    Remove,
    Json(Value),
    Time(Timestamp),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    FixedString,
    Timing,
    Feature,
    Context,
    Immutable,
}

fn slot(path: &Path) -> Slot {
    match (path.root(), path.rest().len()) {
        ("operation" | "target" | "scope", 0) => Slot::FixedString,
        ("timing", 0) => Slot::Timing,
        ("features", 1) => Slot::Feature,
        ("context", n) if n > 0 => Slot::Context,
        _ => Slot::Immutable,
    }
}

fn shift(t: &Timestamp, seconds: f64) -> Option<Timestamp> {
    let micros = (seconds * 1e6).round();
    if !micros.is_finite() || micros.abs() > 1e17 {
        return None;
    }
    let at = t.instant().checked_add_signed(Duration::microseconds(micros as i64))?;
    Timestamp::parse(&at.to_rfc3339_opts(SecondsFormat::AutoSi, true)).ok()
}

/// Literal-derived probe values for `path` found anywhere in `expr`.
fn probes(expr: &Expr, path: &Path, clock: &Timestamp, out: &mut Vec<Candidate>) {
    let lit_probes = |l: &Literal, out: &mut Vec<Candidate>| match l {
        Literal::Num(x) => {
            for v in [*x, x + 1.0, x - 1.0] {
                out.push(Candidate::Json(Value::from(v)));
            }
        }
        Literal::Str(s) => {
            out.push(Candidate::Json(Value::from(s.clone())));
            out.push(Candidate::Json(Value::from(format!("{s}_other"))));
            if let Ok(t) = Timestamp::parse(s) {
                for delta in [0.0, 1.0, -1.0] {
                    if let Some(t) = shift(&t, delta) {
                        out.push(Candidate::Time(t));
                    }
                }
            }
        }
        Literal::Bool(b) => {
            out.push(Candidate::Json(Value::from(*b)));
            out.push(Candidate::Json(Value::from(!*b)));
        }
    };
    match expr {
        Expr::Cmp { lhs, rhs, .. } => {
            for (a, b) in [(lhs, rhs), (rhs, lhs)] {
                match (a.as_ref(), b.as_ref()) {
                    (Expr::Path(p), Expr::Lit(l)) if p == path => lit_probes(l, out),
                    (Expr::AgeSeconds(p), Expr::Lit(Literal::Num(age))) if p == path => {
                        for delta in [0.0, 1.0, -1.0] {
                            if let Some(t) = shift(clock, -(age + delta)) {
                                out.push(Candidate::Time(t));
                            }
                        }
                    }
                    _ => {}
                }
            }
            probes(lhs, path, clock, out);
            probes(rhs, path, clock, out);
        }
        Expr::In { path: p, items } if p == path => {
            for item in items {
                lit_probes(item, out);
            }
        }
        Expr::And(a, b) | Expr::Or(a, b) => {
            probes(a, path, clock, out);
            probes(b, path, clock, out);
        }
        Expr::Not(a) => probes(a, path, clock, out),
        _ => {}
    }
}

fn domain(path: &Path, reqs: &[Requirement<'_>], clock: &Timestamp) -> Vec<Candidate> {
    let kind = slot(path);
    let mut raw = vec![Candidate::Keep];
    if matches!(kind, Slot::Immutable) {
        return raw;
    }
    if matches!(kind, Slot::Feature | Slot::Context) {
        raw.push(Candidate::Remove);
    }
    for r in reqs {
        probes(&r.constraint.expr, path, clock, &mut raw);
    }
    match kind {
        Slot::Context => {
            for v in [Value::from(true), Value::from(false), Value::from(0), Value::from(1), Value::from("x")] {
                raw.push(Candidate::Json(v));
            }
            raw.push(Candidate::Json(Value::from(clock.as_str())));
        }
        Slot::Feature => {
            raw.push(Candidate::Json(Value::from(0.0)));
            raw.push(Candidate::Json(Value::from(1.0)));
        }
        Slot::FixedString => raw.push(Candidate::Json(Value::from("x"))),
        Slot::Timing => raw.push(Candidate::Time(clock.clone())),
        Slot::Immutable => {}
    }

    // Keep only values the slot can hold, then dedupe preserving order.
    let mut out: Vec<Candidate> = Vec::new();
    for c in raw {
        let fits = match (&c, kind) {
            (Candidate::Keep | Candidate::Remove, _) => true,
            (Candidate::Json(Value::String(s)), Slot::FixedString) => !s.is_empty(),
            (Candidate::Json(Value::Number(n)), Slot::Feature) => n.as_f64().is_some_and(f64::is_finite),
            (Candidate::Json(_), Slot::Context) => true,
            (Candidate::Time(_), Slot::Timing) => true,
            (Candidate::Time(t), Slot::Context) => {
                out.push(Candidate::Json(Value::from(t.as_str())));
                false
            }
            _ => false,
        };
        if fits && !out.contains(&c) {
            out.push(c);
        }
    }
    out.dedup();
    out
}

fn set_context(map: &mut BTreeMap<String, Value>, rest: &[String], value: Option<Value>) {
    let (head, tail) = rest.split_first().expect("context path has a key");
    if tail.is_empty() {
        match value {
            Some(v) => {
                map.insert(head.clone(), v);
            }
            None => {
                map.remove(head);
            }
        }
        return;
    }
    let entry = map.entry(head.clone()).or_insert_with(|| Value::Object(Map::new()));
    if !entry.is_object() {
        if value.is_none() {
            return;
        }
        *entry = Value::Object(Map::new());
    }
    let obj = entry.as_object_mut().expect("object");
    let mut inner: BTreeMap<String, Value> = std::mem::take(obj).into_iter().collect();
    set_context(&mut inner, tail, value);
    *obj = inner.into_iter().collect();
}

fn apply(d: &mut DecisionObject, path: &Path, c: &Candidate) {
    let value = match c {
        Candidate::Keep => return,
        Candidate::Remove => None,
        Candidate::Json(v) => Some(v.clone()),
        Candidate::Time(t) => {
            if slot(path) == Slot::Timing {
                d.timing = t.clone();
                return;
            }
            Some(Value::from(t.as_str()))
        }
    };
    match slot(path) {
        Slot::FixedString => {
            if let Some(Value::String(s)) = value {
                match path.root() {
                    "operation" => d.operation = s,
                    "target" => d.target = s,
                    _ => d.scope = s,
                }
            }
        }
        Slot::Feature => {
            let name = path.rest()[0].clone();
            match value.and_then(|v| v.as_f64()) {
                Some(x) => {
                    d.features.insert(name, x);
                }
                None => {
                    d.features.remove(&name);
                }
            }
        }
        Slot::Context => set_context(&mut d.context, path.rest(), value),
        Slot::Timing | Slot::Immutable => {}
    }
}

/// Verdicts a partially assigned expression can still reach. `poison`
/// means some completion hits a missing-data or type incident.
#[derive(Debug, Clone, Copy)]
struct Possible {
    t: bool,
    f: bool,
    poison: bool,
}

const ANY: Possible = Possible {
    t: true,
    f: true,
    poison: true,
};

fn combine(a: Possible, b: Possible, op: fn(bool, bool) -> bool) -> Possible {
    let mut out = Possible {
        t: false,
        f: false,
        poison: a.poison || b.poison,
    };
    for x in [true, false].into_iter().filter(|&x| if x { a.t } else { a.f }) {
        for y in [true, false].into_iter().filter(|&y| if y { b.t } else { b.f }) {
            if op(x, y) {
                out.t = true;
            } else {
                out.f = true;
            }
        }
    }
    out
}

fn possible(e: &Expr, d: &DecisionObject, clock: &Timestamp, open: &dyn Fn(&Path) -> bool) -> Possible {
    if !e.referenced_paths().iter().any(|(p, _)| open(p)) {
        return match eval_outcome(e, d, clock) {
            Some(v) => Possible {
                t: v,
                f: !v,
                poison: false,
            },
            None => Possible {
                t: false,
                f: false,
                poison: true,
            },
        };
    }
    match e {
        Expr::And(a, b) => combine(possible(a, d, clock, open), possible(b, d, clock, open), |x, y| x && y),
        Expr::Or(a, b) => combine(possible(a, d, clock, open), possible(b, d, clock, open), |x, y| x || y),
        Expr::Not(a) => {
            let p = possible(a, d, clock, open);
            Possible {
                t: p.f,
                f: p.t,
                poison: p.poison,
            }
        }
        Expr::Exists(_) => Possible {
            t: true,
            f: true,
            poison: false,
        },
        _ => ANY,
    }
}

struct Search<'a, 'r> {
    reqs: &'r [Requirement<'a>],
    paths: Vec<Path>,
    domains: Vec<Vec<Candidate>>,
    /// Requirements to check once path `i` is assigned.
    due: Vec<Vec<usize>>,
    /// Requirements still partially open after path `i` is assigned.
    open_reqs: Vec<Vec<usize>>,
    clock: &'r Timestamp,
    budget: usize,
    chosen: Vec<Candidate>,
}

impl Search<'_, '_> {
    fn satisfied(&self, d: &DecisionObject, idx: &[usize]) -> bool {
        idx.iter().all(|&i| {
            let r = &self.reqs[i];
            eval_constraint(r.constraint, d, self.clock).passed() == r.pass
        })
    }

    /// Can every requirement not yet fully assigned still be met?
    fn viable(&self, d: &DecisionObject, level: usize) -> bool {
        let open = |p: &Path| self.paths[level + 1..].contains(p);
        self.open_reqs[level].iter().all(|&i| {
            let r = &self.reqs[i];
            let p = possible(&r.constraint.expr, d, self.clock, &open);
            if r.pass {
                p.t
            } else {
                p.f || p.poison
            }
        })
    }

    fn dfs(&mut self, level: usize, d: &DecisionObject) -> bool {
        if level == self.paths.len() {
            return true;
        }
        for cand in self.domains[level].clone() {
            if self.budget == 0 {
                return false;
            }
            self.budget -= 1;
            let mut next = d.clone();
            apply(&mut next, &self.paths[level], &cand);
            if !self.satisfied(&next, &self.due[level]) || !self.viable(&next, level) {
                continue;
            }
            self.chosen.push(cand);
            if self.dfs(level + 1, &next) {
                return true;
            }
            self.chosen.pop();
        }
        false
    }
}

fn related(a: &Path, b: &Path) -> bool {
    let (a, b) = (a.segments(), b.segments());
    let n = a.len().min(b.len());
    a[..n] == b[..n]
}

/// Group requirements that read overlapping fields. Requirements in
/// different groups can be satisfied independently.
fn components(paths: &[Vec<Path>]) -> Vec<Vec<usize>> {
    let n = paths.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if paths[i].iter().any(|p| paths[j].iter().any(|q| related(p, q))) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

/// Find a decision derived from `base` meeting every requirement, changing
/// only fields the requirements' constraints read. `None` if the search
/// space (bounded by `budget` nodes) holds no such decision.
pub fn synthesize(
    base: &DecisionObject,
    reqs: &[Requirement<'_>],
    clock: &Timestamp,
    budget: usize,
) -> Option<DecisionObject> {
    let req_paths: Vec<Vec<Path>> = reqs
        .iter()
        .map(|r| r.constraint.expr.referenced_paths().into_iter().map(|(p, _)| p).collect())
        .collect();
    let holds = |d: &DecisionObject, r: &Requirement<'_>| eval_constraint(r.constraint, d, clock).passed() == r.pass;

    let mut out = base.clone();
    let mut budget = budget;
    for group in components(&req_paths) {
        if req_paths[group[0]].is_empty() {
            // Reads no field: nothing to change.
            if !holds(base, &reqs[group[0]]) {
                return None;
            }
            continue;
        }
        let local: Vec<Requirement<'_>> = group.iter().map(|&i| reqs[i]).collect();
        let mut paths: Vec<Path> = Vec::new();
        let mut due_at = Vec::with_capacity(local.len());
        for &i in &group {
            let mut last = 0;
            for p in &req_paths[i] {
                let at = match paths.iter().position(|q| q == p) {
                    Some(at) => at,
                    None => {
                        paths.push(p.clone());
                        paths.len() - 1
                    }
                };
                last = last.max(at);
            }
            due_at.push(last);
        }
        let mut due = vec![Vec::new(); paths.len()];
        let mut open_reqs = vec![Vec::new(); paths.len()];
        for (k, &at) in due_at.iter().enumerate() {
            due[at].push(k);
            for level in open_reqs.iter_mut().take(at) {
                level.push(k);
            }
        }
        let domains = paths.iter().map(|p| domain(p, &local, clock)).collect();
        let mut search = Search {
            reqs: &local,
            paths,
            domains,
            due,
            open_reqs,
            clock,
            budget,
            chosen: Vec::new(),
        };
        if !search.dfs(0, base) {
            return None;
        }
        budget = search.budget;
        for (p, c) in search.paths.iter().zip(&search.chosen) {
            apply(&mut out, p, c);
        }
    }
    reqs.iter().all(|r| holds(&out, r)).then_some(out)
}
