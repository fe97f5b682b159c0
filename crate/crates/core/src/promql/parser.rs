//! Lexer and recursive-descent parser.
//!
//! Precedence, lowest first: `and`, comparisons, `+ -`, `* /`, unary minus,
//! atoms. All binary operators are left-associative. Type checking runs
//! alongside parsing because that is where the spans are known.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{AggregateOp, BinaryOp, Expr, Function, Grouping, GroupingKind, ValueType};
use crate::duration::Duration;
use crate::metrics::{is_valid_label_name, is_valid_metric_name, LabelMatcher, MatchOp, SeriesMatcher};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// A located problem in a query string. `span` is a half-open byte range.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub span: (usize, usize),
    pub message: String,
    pub severity: Severity,
}

impl Diagnostic {
    fn error(span: (usize, usize), message: impl Into<String>) -> Self {
        Diagnostic { span, message: message.into(), severity: Severity::Error }
    }

    fn warning(span: (usize, usize), message: impl Into<String>) -> Self {
        Diagnostic { span, message: message.into(), severity: Severity::Warning }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} at {}..{}: {}", self.span.0, self.span.1, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Duration(Duration),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Assign,
    Neq,
    ReMatch,
    ReNoMatch,
    EqEq,
    Gt,
    Lt,
    Ge,
    Le,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Duration(d) => format!("duration {d}"),
            Tok::Str(_) => "string".into(),
            Tok::Eof => "end of input".into(),
            other => format!("{:?}", other).to_lowercase(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: (usize, usize),
}

fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let two = |a: u8, b: u8| c == a && bytes.get(i + 1) == Some(&b);
        let (tok, len) = if two(b'!', b'=') {
            (Tok::Neq, 2)
        } else if two(b'=', b'~') {
            (Tok::ReMatch, 2)
        } else if two(b'!', b'~') {
            (Tok::ReNoMatch, 2)
        } else if two(b'=', b'=') {
            (Tok::EqEq, 2)
        } else if two(b'>', b'=') {
            (Tok::Ge, 2)
        } else if two(b'<', b'=') {
            (Tok::Le, 2)
        } else {
            match c {
                b'(' => (Tok::LParen, 1),
                b')' => (Tok::RParen, 1),
                b'{' => (Tok::LBrace, 1),
                b'}' => (Tok::RBrace, 1),
                b'[' => (Tok::LBracket, 1),
                b']' => (Tok::RBracket, 1),
                b',' => (Tok::Comma, 1),
                b'=' => (Tok::Assign, 1),
                b'>' => (Tok::Gt, 1),
                b'<' => (Tok::Lt, 1),
                b'+' => (Tok::Plus, 1),
                b'-' => (Tok::Minus, 1),
                b'*' => (Tok::Star, 1),
                b'/' => (Tok::Slash, 1),
                b'"' | b'\'' => {
                    let (s, len) = lex_string(src, i)?;
                    (Tok::Str(s), len)
                }
                b'0'..=b'9' | b'.' => lex_number(src, i)?,
                c if c.is_ascii_alphabetic() || c == b'_' || c == b':' => {
                    let mut j = i;
                    while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b':') {
                        j += 1;
                    }
                    (Tok::Ident(src[i..j].to_string()), j - i)
                }
                _ => {
                    let ch = src[i..].chars().next().unwrap();
                    return Err(Diagnostic::error((i, i + ch.len_utf8()), format!("unexpected character {ch:?}")));
                }
            }
        };
        i += len;
        out.push(Token { tok, span: (start, i) });
    }
    out.push(Token { tok: Tok::Eof, span: (src.len(), src.len()) });
    Ok(out)
}

fn lex_string(src: &str, start: usize) -> Result<(String, usize), Diagnostic> {
    let quote = src.as_bytes()[start] as char;
    let mut out = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((off, c)) = chars.next() {
        match c {
            c if c == quote => return Ok((out, off + 2)),
            '\\' => match chars.next() {
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, '\\')) => out.push('\\'),
                Some((_, '"')) => out.push('"'),
                Some((_, '\'')) => out.push('\''),
                Some((eoff, e)) => {
                    let at = start + 1 + eoff;
                    return Err(Diagnostic::error((at - 1, at + e.len_utf8()), format!("unknown escape \\{e}")));
                }
                None => break,
            },
            c => out.push(c),
        }
    }
    Err(Diagnostic::error((start, src.len()), "unterminated string literal"))
}

fn lex_number(src: &str, start: usize) -> Result<(Tok, usize), Diagnostic> {
    let bytes = src.as_bytes();
    let mut j = start;
    while j < bytes.len() && bytes[j].is_ascii_digit() {
        j += 1;
    }
    let int_end = j;
    // duration literal: digits immediately followed by a unit letter
    if int_end > start && j < bytes.len() && matches!(bytes[j], b's' | b'm' | b'h' | b'd') {
        let after = bytes.get(j + 1).copied();
        if !after.map(|b| b.is_ascii_alphanumeric() || b == b'_').unwrap_or(false) {
            let d: Duration = src[start..j + 1]
                .parse()
                .map_err(|_| Diagnostic::error((start, j + 1), "duration out of range"))?;
            return Ok((Tok::Duration(d), j + 1 - start));
        }
    }
    if j < bytes.len() && bytes[j] == b'.' {
        j += 1;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
    }
    if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
        let mut k = j + 1;
        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
            k += 1;
        }
        if k < bytes.len() && bytes[k].is_ascii_digit() {
            while k < bytes.len() && bytes[k].is_ascii_digit() {
                k += 1;
            }
            j = k;
        }
    }
    let text = &src[start..j];
    let n: f64 = text.parse().map_err(|_| Diagnostic::error((start, j.max(start + 1)), format!("invalid number {text:?}")))?;
    Ok((Tok::Number(n), j - start))
}

pub(crate) struct Parsed {
    pub expr: Expr,
    pub ty: ValueType,
    /// Findings that do not stop parsing: warnings and validation-only errors.
    pub lints: Vec<Diagnostic>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    lints: Vec<Diagnostic>,
}

type PResult<T> = Result<T, Diagnostic>;

/// One parsed node with its static type and source span.
struct Node {
    expr: Expr,
    ty: ValueType,
    span: (usize, usize),
}

pub(crate) fn parse_full(src: &str) -> Result<Parsed, Vec<Diagnostic>> {
    let toks = lex(src).map_err(|d| vec![d])?;
    let mut p = Parser { toks, pos: 0, lints: Vec::new() };
    let node = p.expr().map_err(|d| vec![d])?;
    if p.peek() != &Tok::Eof {
        let t = p.cur();
        return Err(vec![Diagnostic::error(t.span, format!("unexpected {} after expression", t.tok.describe()))]);
    }
    Ok(Parsed { expr: node.expr, ty: node.ty, lints: p.lints })
}

impl Parser {
    fn cur(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> PResult<Token> {
        if *self.peek() == want {
            Ok(self.bump())
        } else {
            let t = self.cur();
            Err(Diagnostic::error(t.span, format!("expected {what}, found {}", t.tok.describe())))
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expr(&mut self) -> PResult<Node> {
        let mut lhs = self.comparison()?;
        while self.peek_keyword("and") {
            self.bump();
            let rhs = self.comparison()?;
            lhs = self.binary(BinaryOp::And, lhs, rhs, false)?;
        }
        Ok(lhs)
    }

    fn comparison(&mut self) -> PResult<Node> {
        let mut lhs = self.additive()?;
        loop {
            let op = match self.peek() {
                Tok::Gt => BinaryOp::Gt,
                Tok::Lt => BinaryOp::Lt,
                Tok::Ge => BinaryOp::Ge,
                Tok::Le => BinaryOp::Le,
                Tok::EqEq => BinaryOp::Eq,
                Tok::Neq => BinaryOp::Ne,
                _ => return Ok(lhs),
            };
            self.bump();
            let bool_modifier = if self.peek_keyword("bool") {
                self.bump();
                true
            } else {
                false
            };
            let rhs = self.additive()?;
            lhs = self.binary(op, lhs, rhs, bool_modifier)?;
        }
    }

    fn additive(&mut self) -> PResult<Node> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = self.binary(op, lhs, rhs, false)?;
        }
    }

    fn multiplicative(&mut self) -> PResult<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = self.binary(op, lhs, rhs, false)?;
        }
    }

    fn unary(&mut self) -> PResult<Node> {
        if *self.peek() == Tok::Minus {
            let start = self.bump().span.0;
            let inner = self.unary()?;
            if inner.ty == ValueType::Matrix {
                return Err(Diagnostic::error(inner.span, "unary minus is not defined for range vectors"));
            }
            let span = (start, inner.span.1);
            return Ok(Node { expr: Expr::Neg(Box::new(inner.expr)), ty: inner.ty, span });
        }
        if *self.peek() == Tok::Plus {
            // unary plus is a no-op
            self.bump();
            return self.unary();
        }
        self.atom()
    }

    fn binary(&mut self, op: BinaryOp, lhs: Node, rhs: Node, bool_modifier: bool) -> PResult<Node> {
        let span = (lhs.span.0, rhs.span.1);
        for side in [&lhs, &rhs] {
            if side.ty == ValueType::Matrix {
                return Err(Diagnostic::error(side.span, format!("range vector operand not allowed for '{}'", op.symbol())));
            }
        }
        if bool_modifier && !op.is_comparison() {
            return Err(Diagnostic::error(span, "bool modifier is only allowed on comparisons"));
        }
        let ty = match (lhs.ty, rhs.ty) {
            (ValueType::Scalar, ValueType::Scalar) => {
                if op == BinaryOp::And {
                    return Err(Diagnostic::error(span, "'and' requires vector operands"));
                }
                if op.is_comparison() && !bool_modifier {
                    return Err(Diagnostic::error(span, "comparisons between scalars must use the bool modifier"));
                }
                ValueType::Scalar
            }
            (ValueType::Vector, ValueType::Vector) => ValueType::Vector,
            _ => {
                if op == BinaryOp::And {
                    return Err(Diagnostic::error(span, "'and' requires vector operands"));
                }
                ValueType::Vector
            }
        };
        Ok(Node {
            expr: Expr::Binary { op, lhs: Box::new(lhs.expr), rhs: Box::new(rhs.expr), bool_modifier },
            ty,
            span,
        })
    }

    fn atom(&mut self) -> PResult<Node> {
        let t = self.cur().clone();
        match &t.tok {
            Tok::Number(n) => {
                self.bump();
                Ok(Node { expr: Expr::Number(*n), ty: ValueType::Scalar, span: t.span })
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                let close = self.expect(Tok::RParen, "')'")?;
                Ok(Node { expr: Expr::Paren(Box::new(inner.expr)), ty: inner.ty, span: (t.span.0, close.span.1) })
            }
            Tok::LBrace => self.selector(None, t.span.0),
            Tok::Ident(name) => {
                let name = name.clone();
                if let Some(op) = AggregateOp::from_name(&name) {
                    if matches!(self.toks.get(self.pos + 1).map(|t| &t.tok), Some(Tok::LParen) | Some(Tok::Ident(_))) {
                        return self.aggregate(op);
                    }
                }
                if let Some(func) = Function::from_name(&name) {
                    if matches!(self.toks.get(self.pos + 1).map(|t| &t.tok), Some(Tok::LParen)) {
                        return self.call(func);
                    }
                }
                if matches!(self.toks.get(self.pos + 1).map(|t| &t.tok), Some(Tok::LParen)) {
                    return Err(Diagnostic::error(t.span, format!("unknown function {name:?}")));
                }
                if matches!(name.as_str(), "by" | "without" | "bool" | "and") {
                    return Err(Diagnostic::error(t.span, format!("unexpected keyword {name:?}")));
                }
                if !is_valid_metric_name(&name) {
                    return Err(Diagnostic::error(t.span, format!("invalid metric name {name:?}")));
                }
                self.bump();
                self.selector(Some(name), t.span.0)
            }
            other => Err(Diagnostic::error(t.span, format!("unexpected {}", other.describe()))),
        }
    }

    fn selector(&mut self, name: Option<String>, start: usize) -> PResult<Node> {
        let mut matcher = SeriesMatcher { metric_name: name, matchers: Vec::new() };
        let mut end = self.toks[self.pos.saturating_sub(1)].span.1;
        if *self.peek() == Tok::LBrace {
            self.bump();
            loop {
                if *self.peek() == Tok::RBrace {
                    end = self.bump().span.1;
                    break;
                }
                let lt = self.cur().clone();
                let lname = match &lt.tok {
                    Tok::Ident(s) if is_valid_label_name(s) => s.clone(),
                    _ => return Err(Diagnostic::error(lt.span, format!("expected label name, found {}", lt.tok.describe()))),
                };
                self.bump();
                let ot = self.bump();
                let op = match ot.tok {
                    Tok::Assign => MatchOp::Equal,
                    Tok::Neq => MatchOp::NotEqual,
                    Tok::ReMatch => MatchOp::Regex,
                    Tok::ReNoMatch => MatchOp::NotRegex,
                    other => {
                        return Err(Diagnostic::error(ot.span, format!("expected label match operator, found {}", other.describe())))
                    }
                };
                let vt = self.bump();
                let value = match vt.tok {
                    Tok::Str(s) => s,
                    other => return Err(Diagnostic::error(vt.span, format!("expected string, found {}", other.describe()))),
                };
                let m = LabelMatcher::new(lname, op, value).map_err(|e| Diagnostic::error(vt.span, e.to_string()))?;
                matcher.matchers.push(m);
                match self.peek() {
                    Tok::Comma => {
                        self.bump();
                    }
                    Tok::RBrace => {
                        end = self.bump().span.1;
                        break;
                    }
                    _ => {
                        let t = self.cur();
                        return Err(Diagnostic::error(t.span, format!("expected ',' or '}}', found {}", t.tok.describe())));
                    }
                }
            }
        }
        if matcher.metric_name.is_none() && matcher.matchers.iter().all(|m| m.matches(Some(""))) {
            return Err(Diagnostic::error((start, end), "selector must contain a metric name or a non-empty matcher"));
        }
        if *self.peek() == Tok::LBracket {
            self.bump();
            let dt = self.bump();
            let window = match dt.tok {
                Tok::Duration(d) if d.as_millis() > 0 => d,
                Tok::Duration(_) => return Err(Diagnostic::error(dt.span, "range window must be positive")),
                other => return Err(Diagnostic::error(dt.span, format!("expected duration, found {}", other.describe()))),
            };
            let close = self.expect(Tok::RBracket, "']'")?;
            return Ok(Node { expr: Expr::Range { selector: matcher, window }, ty: ValueType::Matrix, span: (start, close.span.1) });
        }
        Ok(Node { expr: Expr::Vector(matcher), ty: ValueType::Vector, span: (start, end) })
    }

    fn grouping(&mut self) -> PResult<Option<Grouping>> {
        let kind = if self.peek_keyword("by") {
            GroupingKind::By
        } else if self.peek_keyword("without") {
            GroupingKind::Without
        } else {
            return Ok(None);
        };
        self.bump();
        self.expect(Tok::LParen, "'('")?;
        let mut labels = Vec::new();
        loop {
            let t = self.bump();
            match t.tok {
                Tok::RParen => break,
                Tok::Ident(s) if is_valid_label_name(&s) => {
                    labels.push(s);
                    match self.peek() {
                        Tok::Comma => {
                            self.bump();
                        }
                        Tok::RParen => {
                            self.bump();
                            break;
                        }
                        _ => {
                            let t = self.cur();
                            return Err(Diagnostic::error(t.span, format!("expected ',' or ')', found {}", t.tok.describe())));
                        }
                    }
                }
                other => return Err(Diagnostic::error(t.span, format!("expected label name, found {}", other.describe()))),
            }
        }
        Ok(Some(Grouping { kind, labels }))
    }

    fn aggregate(&mut self, op: AggregateOp) -> PResult<Node> {
        let start = self.bump().span.0;
        let mut grouping = self.grouping()?;
        self.expect(Tok::LParen, "'('")?;
        let arg = self.expr()?;
        let close = self.expect(Tok::RParen, "')'")?;
        let mut end = close.span.1;
        if grouping.is_none() {
            grouping = self.grouping()?;
            if grouping.is_some() {
                end = self.toks[self.pos - 1].span.1;
            }
        }
        if arg.ty != ValueType::Vector {
            return Err(Diagnostic::error(arg.span, format!("{}() expects an instant vector", op.name())));
        }
        Ok(Node { expr: Expr::Aggregate { op, grouping, arg: Box::new(arg.expr) }, ty: ValueType::Vector, span: (start, end) })
    }

    fn call(&mut self, func: Function) -> PResult<Node> {
        let name_tok = self.bump();
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                args.push(self.expr()?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        let close = self.expect(Tok::RParen, "')'")?;
        let span = (name_tok.span.0, close.span.1);
        let expected: &[ValueType] = match func {
            Function::Rate | Function::Increase => &[ValueType::Matrix],
            Function::HistogramQuantile => &[ValueType::Scalar, ValueType::Vector],
            Function::ClampMin | Function::ClampMax => &[ValueType::Vector, ValueType::Scalar],
        };
        if args.len() != expected.len() {
            return Err(Diagnostic::error(
                span,
                format!("{}() takes {} argument(s), got {}", func.name(), expected.len(), args.len()),
            ));
        }
        for (a, want) in args.iter().zip(expected) {
            if a.ty != *want {
                let kind = match want {
                    ValueType::Scalar => "a scalar",
                    ValueType::Vector => "an instant vector",
                    ValueType::Matrix => "a range vector",
                };
                return Err(Diagnostic::error(a.span, format!("{}() expects {kind} here", func.name())));
            }
        }
        match func {
            Function::Rate | Function::Increase => {
                if let Expr::Range { selector, .. } = &args[0].expr {
                    let counter_like = selector
                        .metric_name
                        .as_deref()
                        .map(|n| ["_total", "_count", "_bucket", "_sum"].iter().any(|s| n.ends_with(s)))
                        .unwrap_or(false);
                    if !counter_like {
                        self.lints.push(Diagnostic::warning(
                            args[0].span,
                            format!("metric kind is unknown statically; {}() assumes a counter", func.name()),
                        ));
                    }
                }
            }
            Function::HistogramQuantile => {
                if let Expr::Number(q) = args[0].expr {
                    if !(0.0..=1.0).contains(&q) {
                        self.lints.push(Diagnostic::error(args[0].span, format!("quantile {q} is outside [0, 1]")));
                    }
                }
            }
            _ => {}
        }
        Ok(Node { expr: Expr::Call { func, args: args.into_iter().map(|n| n.expr).collect() }, ty: ValueType::Vector, span })
    }
}
