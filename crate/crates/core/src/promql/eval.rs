use std::collections::{BTreeMap, HashMap};

use super::ast::{AggregateOp, BinaryOp, Expr, Function, Grouping, GroupingKind};
use crate::duration::Duration;
use crate::metrics::{SeriesKey, SeriesMatcher, StoreReader, TimeSeriesStore, Timestamp, DEFAULT_LOOKBACK};

pub type Sample = (Timestamp, f64);

#[derive(Clone, Debug, PartialEq)]
pub enum QueryValue {
    Scalar(f64),
    /// Sorted by key; keys are unique.
    Vector(Vec<(SeriesKey, f64)>),
    Matrix(BTreeMap<SeriesKey, Vec<Sample>>),
}

impl QueryValue {
    pub fn as_vector(&self) -> Option<&[(SeriesKey, f64)]> {
        match self {
            QueryValue::Vector(v) => Some(v),
            _ => None,
        }
    }

    /// The single value of a scalar or one-element vector.
    pub fn single(&self) -> Option<f64> {
        match self {
            QueryValue::Scalar(x) => Some(*x),
            QueryValue::Vector(v) if v.len() == 1 => Some(v[0].1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("duplicate series {0} in result")]
    DuplicateSeries(String),
    #[error("invalid range: start {start} > end {end} or non-positive step")]
    InvalidRange { start: Timestamp, end: Timestamp },
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    /// How far back an instant selector looks for the newest sample.
    pub lookback: Duration,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { lookback: DEFAULT_LOOKBACK }
    }
}

/// Evaluate at one instant against a fresh read snapshot of `store`.
pub fn eval_instant(expr: &Expr, t: Timestamp, store: &TimeSeriesStore) -> Result<QueryValue, EvalError> {
    Evaluator::new(&store.read(), EvalOptions::default()).instant(expr, t)
}

/// Evaluate at `start, start+step, ..., <= end` and assemble per series.
pub fn eval_range(
    expr: &Expr,
    start: Timestamp,
    end: Timestamp,
    step: Duration,
    store: &TimeSeriesStore,
) -> Result<BTreeMap<SeriesKey, Vec<Sample>>, EvalError> {
    Evaluator::new(&store.read(), EvalOptions::default()).range(expr, start, end, step)
}

/// Stateless evaluator over one consistent store view.
pub struct Evaluator<'r, 's> {
    reader: &'r StoreReader<'s>,
    opts: EvalOptions,
}

impl<'r, 's> Evaluator<'r, 's> {
    pub fn new(reader: &'r StoreReader<'s>, opts: EvalOptions) -> Self {
        Evaluator { reader, opts }
    }

    pub fn instant(&self, expr: &Expr, t: Timestamp) -> Result<QueryValue, EvalError> {
        match expr {
            Expr::Number(n) => Ok(QueryValue::Scalar(*n)),
            Expr::Paren(e) => self.instant(e, t),
            Expr::Vector(sel) => Ok(QueryValue::Vector(self.select_instant(sel, t))),
            Expr::Range { selector, window } => Ok(QueryValue::Matrix(self.select_window(selector, *window, t))),
            Expr::Neg(e) => match self.instant(e, t)? {
                QueryValue::Scalar(x) => Ok(QueryValue::Scalar(-x)),
                QueryValue::Vector(v) => Ok(QueryValue::Vector(v.into_iter().map(|(k, x)| (k.without_name(), -x)).collect())),
                QueryValue::Matrix(_) => Err(EvalError::TypeMismatch("unary minus on a range vector".into())),
            },
            Expr::Call { func, args } => self.call(*func, args, t),
            Expr::Aggregate { op, grouping, arg } => {
                let v = self.vector(arg, t, op.name())?;
                Ok(QueryValue::Vector(aggregate(*op, grouping.as_ref(), v)))
            }
            Expr::Binary { op, lhs, rhs, bool_modifier } => {
                let l = self.instant(lhs, t)?;
                let r = self.instant(rhs, t)?;
                binary(*op, *bool_modifier, l, r)
            }
        }
    }

    pub fn range(
        &self,
        expr: &Expr,
        start: Timestamp,
        end: Timestamp,
        step: Duration,
    ) -> Result<BTreeMap<SeriesKey, Vec<Sample>>, EvalError> {
        if start > end || step.as_millis() == 0 {
            return Err(EvalError::InvalidRange { start, end });
        }
        let mut out: BTreeMap<SeriesKey, Vec<Sample>> = BTreeMap::new();
        let mut t = start;
        while t <= end {
            match self.instant(expr, t)? {
                QueryValue::Scalar(x) => out.entry(SeriesKey::unnamed(BTreeMap::new())).or_default().push((t, x)),
                QueryValue::Vector(v) => {
                    for (k, x) in v {
                        out.entry(k).or_default().push((t, x));
                    }
                }
                QueryValue::Matrix(_) => {
                    return Err(EvalError::TypeMismatch("range query over a range vector expression".into()))
                }
            }
            t += step.as_millis_i64();
        }
        Ok(out)
    }

    fn vector(&self, e: &Expr, t: Timestamp, ctx: &str) -> Result<Vec<(SeriesKey, f64)>, EvalError> {
        match self.instant(e, t)? {
            QueryValue::Vector(v) => Ok(v),
            other => Err(EvalError::TypeMismatch(format!("{ctx} expects an instant vector, got {}", kind(&other)))),
        }
    }

    fn scalar(&self, e: &Expr, t: Timestamp, ctx: &str) -> Result<f64, EvalError> {
        match self.instant(e, t)? {
            QueryValue::Scalar(x) => Ok(x),
            other => Err(EvalError::TypeMismatch(format!("{ctx} expects a scalar, got {}", kind(&other)))),
        }
    }

    /// Newest sample per series with `t - lookback < ts <= t`.
    fn select_instant(&self, sel: &SeriesMatcher, t: Timestamp) -> Vec<(SeriesKey, f64)> {
        let mut out = Vec::new();
        let from = t - self.opts.lookback.as_millis_i64() + 1;
        self.reader.for_each_in_range(sel, from, t, |k, samples| {
            if let Some(&(_, v)) = samples.last() {
                out.push((k.clone(), v));
            }
        });
        out
    }

    /// Samples with `t - window <= ts <= t`.
    fn select_window(&self, sel: &SeriesMatcher, window: Duration, t: Timestamp) -> BTreeMap<SeriesKey, Vec<Sample>> {
        let mut out = BTreeMap::new();
        self.reader.for_each_in_range(sel, t - window.as_millis_i64(), t, |k, samples| {
            out.insert(k.clone(), samples.to_vec());
        });
        out
    }

    fn call(&self, func: Function, args: &[Expr], t: Timestamp) -> Result<QueryValue, EvalError> {
        let arity = match func {
            Function::Rate | Function::Increase => 1,
            _ => 2,
        };
        if args.len() != arity {
            return Err(EvalError::TypeMismatch(format!("{}() takes {arity} argument(s)", func.name())));
        }
        match func {
            Function::Rate | Function::Increase => {
                let (selector, window) = match &args[0] {
                    Expr::Range { selector, window } => (selector, *window),
                    _ => return Err(EvalError::TypeMismatch(format!("{}() expects a range vector", func.name()))),
                };
                let secs = window.as_secs_f64();
                let mut out = Vec::new();
                self.reader.for_each_in_range(selector, t - window.as_millis_i64(), t, |k, samples| {
                    if let Some(r) = counter_rate(samples, secs) {
                        let v = if func == Function::Rate { r } else { r * secs };
                        out.push((k.without_name(), v));
                    }
                });
                dedup_check(&mut out)?;
                Ok(QueryValue::Vector(out))
            }
            Function::HistogramQuantile => {
                let q = self.scalar(&args[0], t, "histogram_quantile")?;
                let v = self.vector(&args[1], t, "histogram_quantile")?;
                Ok(QueryValue::Vector(histogram_quantile(q, v)))
            }
            Function::ClampMin | Function::ClampMax => {
                let v = self.vector(&args[0], t, func.name())?;
                let bound = self.scalar(&args[1], t, func.name())?;
                let out = v
                    .into_iter()
                    .map(|(k, x)| {
                        let y = if func == Function::ClampMin { x.max(bound) } else { x.min(bound) };
                        (k.without_name(), if x.is_nan() { x } else { y })
                    })
                    .collect();
                Ok(QueryValue::Vector(out))
            }
        }
    }
}

fn kind(v: &QueryValue) -> &'static str {
    match v {
        QueryValue::Scalar(_) => "scalar",
        QueryValue::Vector(_) => "instant vector",
        QueryValue::Matrix(_) => "range vector",
    }
}

fn dedup_check(v: &mut Vec<(SeriesKey, f64)>) -> Result<(), EvalError> {
    v.sort_by(|a, b| a.0.cmp(&b.0));
    for w in v.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(EvalError::DuplicateSeries(w[0].0.to_string()));
        }
    }
    Ok(())
}

/// Per-second increase over the window without boundary extrapolation.
///
/// A negative step between consecutive samples is a counter reset; the step
/// then contributes the post-reset value. Fewer than two samples yield no result.
pub fn counter_rate(samples: &[Sample], window_secs: f64) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let total: f64 = samples
        .windows(2)
        .map(|w| {
            let d = w[1].1 - w[0].1;
            if d < 0.0 {
                w[1].1
            } else {
                d
            }
        })
        .sum();
    Some(total / window_secs)
}

fn group_key(key: &SeriesKey, grouping: Option<&Grouping>) -> SeriesKey {
    let labels = match grouping {
        None => BTreeMap::new(),
        Some(Grouping { kind: GroupingKind::By, labels }) => {
            key.labels.iter().filter(|(k, _)| labels.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect()
        }
        Some(Grouping { kind: GroupingKind::Without, labels }) => {
            key.labels.iter().filter(|(k, _)| !labels.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect()
        }
    };
    SeriesKey::unnamed(labels)
}

fn aggregate(op: AggregateOp, grouping: Option<&Grouping>, input: Vec<(SeriesKey, f64)>) -> Vec<(SeriesKey, f64)> {
    let mut groups: BTreeMap<SeriesKey, Vec<f64>> = BTreeMap::new();
    for (k, v) in input {
        if v.is_nan() {
            continue;
        }
        groups.entry(group_key(&k, grouping)).or_default().push(v);
    }
    groups
        .into_iter()
        .map(|(k, vals)| {
            let sum: f64 = vals.iter().sum();
            let v = match op {
                AggregateOp::Sum => sum,
                AggregateOp::Avg => sum / vals.len() as f64,
                AggregateOp::Count => vals.len() as f64,
                AggregateOp::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                AggregateOp::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            (k, v)
        })
        .collect()
}

fn parse_le(s: &str) -> Option<f64> {
    match s {
        "+Inf" | "Inf" | "inf" | "+inf" => Some(f64::INFINITY),
        other => other.parse().ok(),
    }
}

fn histogram_quantile(q: f64, input: Vec<(SeriesKey, f64)>) -> Vec<(SeriesKey, f64)> {
    let mut groups: BTreeMap<SeriesKey, Vec<(f64, f64)>> = BTreeMap::new();
    for (k, v) in input {
        let Some(le) = k.label("le").and_then(parse_le) else { continue };
        let mut labels = k.labels.clone();
        labels.remove("le");
        groups.entry(SeriesKey::unnamed(labels)).or_default().push((le, v));
    }
    groups.into_iter().map(|(k, buckets)| (k, bucket_quantile(q, buckets))).collect()
}

/// Quantile from cumulative `(upper_bound, count)` buckets, interpolating
/// linearly inside the bucket that contains the target rank.
pub fn bucket_quantile(q: f64, mut buckets: Vec<(f64, f64)>) -> f64 {
    if q.is_nan() {
        return f64::NAN;
    }
    if q < 0.0 {
        return f64::NEG_INFINITY;
    }
    if q > 1.0 {
        return f64::INFINITY;
    }
    buckets.sort_by(|a, b| a.0.total_cmp(&b.0));
    if buckets.len() < 2 || buckets.last().map(|b| b.0) != Some(f64::INFINITY) {
        return f64::NAN;
    }
    // enforce monotone cumulative counts
    let mut running = f64::NEG_INFINITY;
    for b in buckets.iter_mut() {
        running = running.max(b.1);
        b.1 = running;
    }
    let total = buckets.last().unwrap().1;
    if total <= 0.0 || total.is_nan() {
        return f64::NAN;
    }
    let rank = q * total;
    let idx = buckets.iter().position(|b| b.1 >= rank).unwrap_or(buckets.len() - 1);
    if idx == buckets.len() - 1 {
        return buckets[buckets.len() - 2].0;
    }
    let (upper, count) = buckets[idx];
    let (lower, prev_count) = if idx == 0 {
        if upper <= 0.0 {
            return upper;
        }
        (0.0, 0.0)
    } else {
        buckets[idx - 1]
    };
    let in_bucket = count - prev_count;
    if in_bucket <= 0.0 {
        return upper;
    }
    lower + (upper - lower) * ((rank - prev_count) / in_bucket)
}

fn apply(op: BinaryOp, a: f64, b: f64) -> Option<f64> {
    Some(match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
        BinaryOp::Gt => (a > b) as u8 as f64,
        BinaryOp::Lt => (a < b) as u8 as f64,
        BinaryOp::Ge => (a >= b) as u8 as f64,
        BinaryOp::Le => (a <= b) as u8 as f64,
        BinaryOp::Eq => (a == b) as u8 as f64,
        BinaryOp::Ne => (a != b) as u8 as f64,
        BinaryOp::And => return None,
    })
}

fn binary(op: BinaryOp, bool_modifier: bool, l: QueryValue, r: QueryValue) -> Result<QueryValue, EvalError> {
    use QueryValue::*;
    let cmp = op.is_comparison();
    match (l, r) {
        (Scalar(a), Scalar(b)) => match apply(op, a, b) {
            Some(x) => Ok(Scalar(x)),
            None => Err(EvalError::TypeMismatch("'and' requires vector operands".into())),
        },
        (Vector(v), Scalar(s)) => vector_scalar(op, bool_modifier, v, s, false),
        (Scalar(s), Vector(v)) => vector_scalar(op, bool_modifier, v, s, true),
        (Vector(lv), Vector(rv)) => {
            let mut rhs: HashMap<SeriesKey, f64> = HashMap::with_capacity(rv.len());
            for (k, x) in rv {
                if rhs.insert(k.without_name(), x).is_some() {
                    return Err(EvalError::DuplicateSeries(format!("{} on right-hand side", k.without_name())));
                }
            }
            let mut out = Vec::new();
            for (k, a) in lv {
                let mk = k.without_name();
                let Some(&b) = rhs.get(&mk) else { continue };
                if op == BinaryOp::And {
                    out.push((k, a));
                } else if cmp && !bool_modifier {
                    if apply(op, a, b) == Some(1.0) {
                        out.push((k, a));
                    }
                } else {
                    out.push((mk, apply(op, a, b).unwrap()));
                }
            }
            dedup_check(&mut out)?;
            Ok(Vector(out))
        }
        (Matrix(_), _) | (_, Matrix(_)) => Err(EvalError::TypeMismatch(format!("range vector operand for '{}'", op.symbol()))),
    }
}

fn vector_scalar(
    op: BinaryOp,
    bool_modifier: bool,
    v: Vec<(SeriesKey, f64)>,
    s: f64,
    scalar_left: bool,
) -> Result<QueryValue, EvalError> {
    if op == BinaryOp::And {
        return Err(EvalError::TypeMismatch("'and' requires vector operands".into()));
    }
    let mut out = Vec::with_capacity(v.len());
    for (k, x) in v {
        let (a, b) = if scalar_left { (s, x) } else { (x, s) };
        let y = apply(op, a, b).unwrap();
        if op.is_comparison() && !bool_modifier {
            if y == 1.0 {
                out.push((k, x));
            }
        } else {
            out.push((k.without_name(), y));
        }
    }
    dedup_check(&mut out)?;
    Ok(QueryValue::Vector(out))
}
