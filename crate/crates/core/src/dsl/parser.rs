//! Recursive-descent parser for constraint expressions.
//!
//! ```text
//! expr     = or_expr ;
//! or_expr  = and_expr { "or" and_expr } ;
//! and_expr = not_expr { "and" not_expr } ;
//! not_expr = "not" not_expr | cmp_expr ;
//! cmp_expr = primary [ ( "==" | "!=" | "<" | "<=" | ">" | ">=" ) primary ] ;
//! primary  = literal | path | "(" expr ")"
//!          | "exists" "(" path ")"
//!          | "in" "(" path "," "[" literal { "," literal } "]" ")"
//!          | "age_seconds" "(" path ")" ;
//! literal  = string | number | "true" | "false" ;
//! path     = ident { "." ident } ;
//! ```

use super::ast::{CmpOp, Expr, Literal, Path};

/// Position-tagged parse failure; line and column are 1-based within the
/// expression text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Op(CmpOp),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut tokens = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    let err = |line, column, message: String| ParseError {
        line,
        column,
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let mut push = |tok: Tok| tokens.push(Token {
            tok,
            line: tl,
            column: tc,
        });
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        match c {
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            '[' => push(Tok::LBracket),
            ']' => push(Tok::RBracket),
            ',' => push(Tok::Comma),
            '.' => push(Tok::Dot),
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let op = match (c, next) {
                    ('=', Some('=')) => CmpOp::Eq,
                    ('!', Some('=')) => CmpOp::Ne,
                    ('<', Some('=')) => CmpOp::Le,
                    ('>', Some('=')) => CmpOp::Ge,
                    ('<', _) => CmpOp::Lt,
                    ('>', _) => CmpOp::Gt,
                    _ => return Err(err(tl, tc, format!("unexpected character {c:?}"))),
                };
                push(Tok::Op(op));
                if next == Some('=') {
                    i += 1;
                }
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err(tl, tc, "unterminated string literal".into())),
                        Some('"') => break,
                        Some('\\') => {
                            let esc = match chars.get(i + 1) {
                                Some('"') => '"',
                                Some('\\') => '\\',
                                Some('n') => '\n',
                                Some('t') => '\t',
                                other => {
                                    return Err(err(
                                        tl,
                                        tc,
                                        format!("unsupported escape {other:?} in string literal"),
                                    ))
                                }
                            };
                            s.push(esc);
                            i += 2;
                        }
                        Some('\n') => {
                            return Err(err(tl, tc, "newline in string literal".into()));
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                push(Tok::Str(s));
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let x: f64 = text
                    .parse()
                    .map_err(|_| err(tl, tc, format!("bad number {text:?}")))?;
                if !x.is_finite() {
                    return Err(err(tl, tc, format!("number {text:?} is out of range")));
                }
                push(Tok::Num(x));
                col += j - i;
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                push(Tok::Ident(chars[i..j].iter().collect()));
                col += j - i;
                i = j;
                continue;
            }
            other => return Err(err(tl, tc, format!("unexpected character {other:?}"))),
        }
        i += 1;
        col += i - start;
    }
    tokens.push(Token {
        tok: Tok::End,
        line,
        column: col,
    });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, message: impl Into<String>) -> ParseError {
        ParseError {
            line: t.line,
            column: t.column,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        let t = self.bump();
        if t.tok == want {
            Ok(())
        } else {
            Err(self.error_at(&t, format!("expected {what}, found {}", describe(&t.tok))))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.is_keyword("or") {
            self.bump();
            lhs = lhs.or(self.and_expr()?);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not_expr()?;
        while self.is_keyword("and") {
            self.bump();
            lhs = lhs.and(self.not_expr()?);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.is_keyword("not") {
            self.bump();
            return Ok(self.not_expr()?.negate());
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.primary()?;
        if let Tok::Op(op) = self.peek().tok {
            self.bump();
            let rhs = self.primary()?;
            if let Tok::Op(_) = self.peek().tok {
                let t = self.peek().clone();
                return Err(self.error_at(&t, "comparisons do not chain; add parentheses"));
            }
            return Ok(Expr::cmp(op, lhs, rhs));
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.bump();
        match t.tok.clone() {
            Tok::Str(s) => Ok(Expr::Lit(Literal::Str(s))),
            Tok::Num(x) => Ok(Expr::Lit(Literal::Num(x))),
            Tok::LParen => {
                let e = self.or_expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "true" => Ok(Expr::Lit(Literal::Bool(true))),
                "false" => Ok(Expr::Lit(Literal::Bool(false))),
                "exists" => {
                    self.expect(Tok::LParen, "'(' after exists")?;
                    let p = self.path()?;
                    self.expect(Tok::RParen, "')'")?;
                    Ok(Expr::Exists(p))
                }
                "age_seconds" => {
                    self.expect(Tok::LParen, "'(' after age_seconds")?;
                    let p = self.path()?;
                    self.expect(Tok::RParen, "')'")?;
                    Ok(Expr::AgeSeconds(p))
                }
                "in" => {
                    self.expect(Tok::LParen, "'(' after in")?;
                    let path = self.path()?;
                    self.expect(Tok::Comma, "','")?;
                    self.expect(Tok::LBracket, "'['")?;
                    let mut items = vec![self.literal()?];
                    while self.peek().tok == Tok::Comma {
                        self.bump();
                        items.push(self.literal()?);
                    }
                    self.expect(Tok::RBracket, "']'")?;
                    self.expect(Tok::RParen, "')'")?;
                    Ok(Expr::In { path, items })
                }
                "and" | "or" | "not" => {
                    Err(self.error_at(&t, format!("unexpected keyword '{name}'")))
                }
                _ => {
                    self.pos -= 1;
                    Ok(Expr::Path(self.path()?))
                }
            },
            other => Err(self.error_at(&t, format!("expected an operand, found {}", describe(&other)))),
        }
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let t = self.bump();
        match t.tok.clone() {
            Tok::Str(s) => Ok(Literal::Str(s)),
            Tok::Num(x) => Ok(Literal::Num(x)),
            Tok::Ident(ref s) if s == "true" => Ok(Literal::Bool(true)),
            Tok::Ident(ref s) if s == "false" => Ok(Literal::Bool(false)),
            other => Err(self.error_at(&t, format!("expected a literal, found {}", describe(&other)))),
        }
    }

    fn path(&mut self) -> Result<Path, ParseError> {
        let mut segments = Vec::new();
        loop {
            let t = self.bump();
            match t.tok.clone() {
                Tok::Ident(s) => segments.push(s),
                other => {
                    return Err(self.error_at(&t, format!("expected a field name, found {}", describe(&other))))
                }
            }
            if self.peek().tok != Tok::Dot {
                break;
            }
            self.bump();
        }
        Ok(Path::new(segments))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Str(s) => format!("string {s:?}"),
        Tok::Num(x) => format!("number {x}"),
        Tok::Op(op) => format!("'{}'", op.symbol()),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::LBracket => "'['".into(),
        Tok::RBracket => "']'".into(),
        Tok::Comma => "','".into(),
        Tok::Dot => "'.'".into(),
        Tok::End => "end of expression".into(),
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let tokens = lex(src)?;
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.or_expr()?;
    let t = parser.peek().clone();
    if t.tok != Tok::End {
        return Err(parser.error_at(&t, format!("unexpected {} after expression", describe(&t.tok))));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = parse_expr("not a.x == 1 or b.y and true").unwrap();
        assert_eq!(e.to_string(), "((not (a.x == 1)) or (b.y and true))");
    }

    #[test]
    fn builtins() {
        let e = parse_expr(r#"in(scope, ["single_account", "x"]) and age_seconds(timing) <= -3.5e2"#).unwrap();
        assert_eq!(
            e.to_string(),
            r#"(in(scope, ["single_account", "x"]) and (age_seconds(timing) <= -350))"#
        );
    }

    #[test]
    fn keywords_allowed_after_dot() {
        let e = parse_expr("exists(context.in) and context.not == false").unwrap();
        assert_eq!(e.to_string(), "(exists(context.in) and (context.not == false))");
    }

    #[test]
    fn reports_position() {
        let err = parse_expr("exists(context.a) and\n  context.b == ").unwrap_err();
        assert_eq!((err.line, err.column), (2, 16));
        let err = parse_expr("a == 1 == 2").unwrap_err();
        assert_eq!((err.line, err.column), (1, 8));
        let err = parse_expr("context.x ~ 1").unwrap_err();
        assert_eq!((err.line, err.column), (1, 11));
    }

    #[test]
    fn display_round_trips() {
        for src in [
            "true",
            r#"context.a.b != "q\"uote""#,
            "not not (x.y >= 0.25)",
            "in(features.x, [1, 2.5, -3])",
        ] {
            let e = parse_expr(src).unwrap();
            assert_eq!(parse_expr(&e.to_string()).unwrap(), e, "{src}");
        }
    }
}
