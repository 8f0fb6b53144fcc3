use std::fmt;

use crate::canonical::format_f64;

/// A dotted field reference such as `context.identity_verified`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path(Vec<String>);

impl Path {
    pub fn new<I, S>(segments: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Path(segments.into_iter().map(Into::into).collect())
    }

    pub fn parse(dotted: &str) -> Self {
        Path::new(dotted.split('.'))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn root(&self) -> &str {
        &self.0[0]
    }

    /// Segments after the root.
    pub fn rest(&self) -> &[String] {
        &self.0[1..]
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Num(f64),
    Bool(bool),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => {
                f.write_str("\"")?;
                for ch in s.chars() {
                    match ch {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
            Literal::Num(x) => f.write_str(&format_f64(*x)),
            Literal::Bool(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

/// Boolean constraint expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Literal),
    Path(Path),
    Cmp { op: CmpOp, lhs: Box<Expr>, rhs: Box<Expr> },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    /// True iff the path is present and non-null. Never fails closed.
    Exists(Path),
    In { path: Path, items: Vec<Literal> },
    /// Seconds from the timestamp at `path` to the evaluation clock.
    AgeSeconds(Path),
}

impl Expr {
    pub fn cmp(op: CmpOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Cmp {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn and(self, rhs: Expr) -> Expr {
        Expr::And(Box::new(self), Box::new(rhs))
    }

    pub fn or(self, rhs: Expr) -> Expr {
        Expr::Or(Box::new(self), Box::new(rhs))
    }

    pub fn negate(self) -> Expr {
        Expr::Not(Box::new(self))
    }

    /// Every path the expression reads, in first-occurrence order,
    /// each tagged with whether it appears only under `exists`.
    pub fn referenced_paths(&self) -> Vec<(Path, bool)> {
        let mut out: Vec<(Path, bool)> = Vec::new();
        self.collect_paths(&mut out);
        out
    }

    fn collect_paths(&self, out: &mut Vec<(Path, bool)>) {
        let mut note = |p: &Path, guarded: bool| match out.iter_mut().find(|(q, _)| q == p) {
            Some(entry) => entry.1 &= guarded,
            None => out.push((p.clone(), guarded)),
        };
        match self {
            Expr::Lit(_) => {}
            Expr::Path(p) | Expr::AgeSeconds(p) => note(p, false),
            Expr::In { path, .. } => note(path, false),
            Expr::Exists(p) => note(p, true),
            Expr::Cmp { lhs, rhs, .. } | Expr::And(lhs, rhs) | Expr::Or(lhs, rhs) => {
                lhs.collect_paths(out);
                rhs.collect_paths(out);
            }
            Expr::Not(inner) => inner.collect_paths(out),
        }
    }

    /// Paths read outside any `exists(...)`; removing one of these from a
    /// decision must make the expression fail.
    pub fn fail_closed_paths(&self) -> Vec<Path> {
        self.referenced_paths()
            .into_iter()
            .filter(|(_, guarded)| !guarded)
            .map(|(p, _)| p)
            .collect()
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesised source text; parses back to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(l) => write!(f, "{l}"),
            Expr::Path(p) => write!(f, "{p}"),
            Expr::Cmp { op, lhs, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            Expr::And(a, b) => write!(f, "({a} and {b})"),
            Expr::Or(a, b) => write!(f, "({a} or {b})"),
            Expr::Not(a) => write!(f, "(not {a})"),
            Expr::Exists(p) => write!(f, "exists({p})"),
            Expr::In { path, items } => {
                write!(f, "in({path}, [")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("])")
            }
            Expr::AgeSeconds(p) => write!(f, "age_seconds({p})"),
        }
    }
}
