use std::fmt;

use serde::{Deserialize, Serialize};

use crate::duration::Duration;
use crate::metrics::{format_value, SeriesMatcher};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Function {
    Rate,
    Increase,
    HistogramQuantile,
    ClampMin,
    ClampMax,
}

impl Function {
    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "rate" => Function::Rate,
            "increase" => Function::Increase,
            "histogram_quantile" => Function::HistogramQuantile,
            "clamp_min" => Function::ClampMin,
            "clamp_max" => Function::ClampMax,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Function::Rate => "rate",
            Function::Increase => "increase",
            Function::HistogramQuantile => "histogram_quantile",
            Function::ClampMin => "clamp_min",
            Function::ClampMax => "clamp_max",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggregateOp {
    Sum,
    Avg,
    Min,
    Max,
    Count,
}

impl AggregateOp {
    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sum" => AggregateOp::Sum,
            "avg" => AggregateOp::Avg,
            "min" => AggregateOp::Min,
            "max" => AggregateOp::Max,
            "count" => AggregateOp::Count,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            AggregateOp::Sum => "sum",
            AggregateOp::Avg => "avg",
            AggregateOp::Min => "min",
            AggregateOp::Max => "max",
            AggregateOp::Count => "count",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Gt,
    Lt,
    Ge,
    Le,
    Eq,
    Ne,
    /// Set intersection: keeps left elements whose label set appears on the right.
    And,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Gt => ">",
            BinaryOp::Lt => "<",
            BinaryOp::Ge => ">=",
            BinaryOp::Le => "<=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::And => "and",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Gt | BinaryOp::Lt | BinaryOp::Ge | BinaryOp::Le | BinaryOp::Eq | BinaryOp::Ne)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupingKind {
    By,
    Without,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    pub kind: GroupingKind,
    pub labels: Vec<String>,
}

/// Query syntax tree. Spans are not stored, so two parses of equivalent text
/// compare equal.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Number(f64),
    Vector(SeriesMatcher),
    Range { selector: SeriesMatcher, window: Duration },
    Call { func: Function, args: Vec<Expr> },
    Aggregate { op: AggregateOp, grouping: Option<Grouping>, arg: Box<Expr> },
    Binary { op: BinaryOp, lhs: Box<Expr>, rhs: Box<Expr>, bool_modifier: bool },
    Neg(Box<Expr>),
    Paren(Box<Expr>),
}

/// Static result kind of an expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueType {
    Scalar,
    Vector,
    Matrix,
}

impl Expr {
    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), bool_modifier: false }
    }

    pub fn paren(e: Expr) -> Expr {
        Expr::Paren(Box::new(e))
    }

    pub fn call(func: Function, args: Vec<Expr>) -> Expr {
        Expr::Call { func, args }
    }

    pub fn sum(arg: Expr) -> Expr {
        Expr::Aggregate { op: AggregateOp::Sum, grouping: None, arg: Box::new(arg) }
    }

    /// Replace the window of every range selector.
    pub fn with_range_window(&self, window: Duration) -> Expr {
        self.map_ranges(&|sel, _| Expr::Range { selector: sel.clone(), window })
    }

    fn map_ranges(&self, f: &dyn Fn(&SeriesMatcher, Duration) -> Expr) -> Expr {
        match self {
            Expr::Range { selector, window } => f(selector, *window),
            Expr::Number(_) | Expr::Vector(_) => self.clone(),
            Expr::Call { func, args } => Expr::Call { func: *func, args: args.iter().map(|a| a.map_ranges(f)).collect() },
            Expr::Aggregate { op, grouping, arg } => {
                Expr::Aggregate { op: *op, grouping: grouping.clone(), arg: Box::new(arg.map_ranges(f)) }
            }
            Expr::Binary { op, lhs, rhs, bool_modifier } => Expr::Binary {
                op: *op,
                lhs: Box::new(lhs.map_ranges(f)),
                rhs: Box::new(rhs.map_ranges(f)),
                bool_modifier: *bool_modifier,
            },
            Expr::Neg(e) => Expr::Neg(Box::new(e.map_ranges(f))),
            Expr::Paren(e) => Expr::Paren(Box::new(e.map_ranges(f))),
        }
    }

    /// Every selector (instant or range) in the tree, left to right.
    pub fn selectors(&self) -> Vec<&SeriesMatcher> {
        let mut out = Vec::new();
        self.collect_selectors(&mut out);
        out
    }

    fn collect_selectors<'a>(&'a self, out: &mut Vec<&'a SeriesMatcher>) {
        match self {
            Expr::Vector(s) | Expr::Range { selector: s, .. } => out.push(s),
            Expr::Number(_) => {}
            Expr::Call { args, .. } => args.iter().for_each(|a| a.collect_selectors(out)),
            Expr::Aggregate { arg, .. } | Expr::Neg(arg) | Expr::Paren(arg) => arg.collect_selectors(out),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.collect_selectors(out);
                rhs.collect_selectors(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(n) => f.write_str(&format_value(*n)),
            Expr::Vector(sel) => write!(f, "{sel}"),
            Expr::Range { selector, window } => write!(f, "{selector}[{window}]"),
            Expr::Call { func, args } => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Aggregate { op, grouping, arg } => {
                f.write_str(op.name())?;
                if let Some(g) = grouping {
                    let kw = match g.kind {
                        GroupingKind::By => "by",
                        GroupingKind::Without => "without",
                    };
                    write!(f, " {kw} ({}) ", g.labels.join(", "))?;
                }
                write!(f, "({arg})")
            }
            Expr::Binary { op, lhs, rhs, bool_modifier } => {
                let b = if *bool_modifier { " bool" } else { "" };
                write!(f, "{lhs} {}{b} {rhs}", op.symbol())
            }
            Expr::Neg(e) => write!(f, "-{e}"),
            Expr::Paren(e) => write!(f, "({e})"),
        }
    }
}
