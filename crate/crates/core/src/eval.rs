//! Output equivalence, task metrics and corpus statistics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{OperatorKind, PipelineProgram};
use crate::interp::{execute_program, ExecutionLimits, TraceEntry};
use crate::synth::Difficulty;
use crate::table::{ColumnType, Table, Value};
use crate::task::TaskInstance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceOptions {
    pub tolerance: f64,
    pub row_order_invariant: bool,
    pub column_order_invariant: bool,
}

impl Default for EquivalenceOptions {
    fn default() -> Self {
        EquivalenceOptions {
            tolerance: 1e-5,
            row_order_invariant: true,
            column_order_invariant: true,
        }
    }
}

/// Above this row count the tolerant fallback matching is skipped.
const FALLBACK_MAX_ROWS: usize = 5_000;

fn types_compatible(a: ColumnType, b: ColumnType) -> bool {
    a == b || (a.is_numeric() && b.is_numeric())
}

fn cells_match(a: &Value, b: &Value, tol: f64) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Null, Value::Null) => true,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) if !matches!(a, Value::Bool(_)) && !matches!(b, Value::Bool(_)) => {
                if x.is_nan() || y.is_nan() {
                    return x.is_nan() && y.is_nan();
                }
                (x - y).abs() <= tol * 1f64.max(x.abs()).max(y.abs())
            }
            _ => a == b,
        },
    }
}

/// Sort key for one cell: numbers on a rounded grid, then bools, text, nulls.
fn cell_cmp(a: &Value, b: &Value, grid: f64) -> Ordering {
    fn rank(v: &Value) -> u8 {
        match v {
            Value::Int(_) | Value::Real(_) => 0,
            Value::Bool(_) => 1,
            Value::Text(_) => 2,
            Value::Null => 3,
        }
    }
    match (a, b) {
        (Value::Int(_) | Value::Real(_), Value::Int(_) | Value::Real(_)) => {
            let q = |v: &Value| (v.as_f64().expect("numeric") / grid).round();
            q(a).total_cmp(&q(b))
        }
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
}

fn aligned_rows(t: &Table, order: &[usize]) -> Vec<Vec<Value>> {
    t.rows()
        .iter()
        .map(|r| order.iter().map(|&i| r[i].clone()).collect())
        .collect()
}

fn rows_match(a: &[Value], b: &[Value], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| cells_match(x, y, tol))
}

/// Equivalence up to row order, column order and float tolerance.
pub fn canonical_equal(a: &Table, b: &Table, opts: &EquivalenceOptions) -> bool {
    if a.num_columns() != b.num_columns() || a.num_rows() != b.num_rows() {
        return false;
    }
    let names = |t: &Table| t.columns().iter().map(|c| c.name.clone()).collect::<Vec<_>>();
    let (an, bn) = (names(a), names(b));
    let unique = |v: &[String]| v.iter().collect::<BTreeSet<_>>().len() == v.len();
    if !unique(&an) || !unique(&bn) {
        return false;
    }
    let (a_order, b_order): (Vec<usize>, Vec<usize>) = if opts.column_order_invariant {
        let mut sorted = an.clone();
        sorted.sort();
        let mut bo = Vec::new();
        for n in &sorted {
            match b.column_index(n) {
                Some(i) => bo.push(i),
                None => return false,
            }
        }
        (sorted.iter().map(|n| a.column_index(n).expect("own column")).collect(), bo)
    } else {
        if an != bn {
            return false;
        }
        ((0..an.len()).collect(), (0..bn.len()).collect())
    };
    for (&i, &j) in a_order.iter().zip(&b_order) {
        if !types_compatible(a.columns()[i].ty, b.columns()[j].ty) {
            return false;
        }
    }
    let mut ra = aligned_rows(a, &a_order);
    let mut rb = aligned_rows(b, &b_order);
    let tol = opts.tolerance;
    if !opts.row_order_invariant {
        return ra.iter().zip(&rb).all(|(x, y)| rows_match(x, y, tol));
    }
    let grid = tol / 10.0;
    let cmp = |x: &Vec<Value>, y: &Vec<Value>| {
        x.iter()
            .zip(y)
            .map(|(p, q)| cell_cmp(p, q, grid))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    };
    ra.sort_by(cmp);
    rb.sort_by(cmp);
    if ra.iter().zip(&rb).all(|(x, y)| rows_match(x, y, tol)) {
        return true;
    }
    // Grid rounding can split near-equal values across buckets and misalign
    // otherwise equal rows; retry with tolerant one-to-one matching.
    if ra.len() > FALLBACK_MAX_ROWS {
        return false;
    }
    let mut used = vec![false; rb.len()];
    'rows: for x in &ra {
        for (k, y) in rb.iter().enumerate() {
            if !used[k] && rows_match(x, y, tol) {
                used[k] = true;
                continue 'rows;
            }
        }
        return false;
    }
    true
}

/// Set-based operator accuracy: |kinds(pred) ∩ kinds(gold)| / |kinds(gold)|.
pub fn operator_accuracy(pred: &PipelineProgram, gold: &PipelineProgram) -> f64 {
    let g: BTreeSet<OperatorKind> = gold.kinds().into_iter().collect();
    if g.is_empty() {
        return 0.0;
    }
    let p: BTreeSet<OperatorKind> = pred.kinds().into_iter().collect();
    p.intersection(&g).count() as f64 / g.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub id: String,
    pub difficulty: Difficulty,
    pub ea: bool,
    pub pv: bool,
    pub oa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Score one prediction. `pred` is `None` when it failed to parse.
pub fn score_task(
    pred: Option<&PipelineProgram>,
    task: &TaskInstance,
    opts: &EquivalenceOptions,
    limits: ExecutionLimits,
) -> TaskOutcome {
    let mut out = TaskOutcome {
        id: task.id.clone(),
        difficulty: task.difficulty,
        ea: false,
        pv: false,
        oa: 0.0,
        error: None,
    };
    let Some(pred) = pred else {
        out.error = Some("ParseError".into());
        return out;
    };
    out.oa = operator_accuracy(pred, &task.program);
    let inputs = match task.input_set() {
        Ok(i) => i,
        Err(e) => {
            out.error = Some(format!("InvalidInputs: {e}"));
            return out;
        }
    };
    let program = pred
        .clone()
        .with_sources(task.inputs.iter().map(|t| t.name().to_string()).collect());
    match execute_program(&inputs, &program, limits) {
        Ok(res) => {
            out.pv = true;
            out.ea = canonical_equal(&res.table, &task.output, opts);
        }
        Err(e) => out.error = Some(e.category.as_str().to_string()),
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    /// Percentages in [0, 100].
    pub ea: f64,
    pub pv: f64,
    pub oa: f64,
}

impl Aggregate {
    fn of<'a>(items: impl Iterator<Item = &'a TaskOutcome>) -> Self {
        let (mut n, mut ea, mut pv, mut oa) = (0usize, 0usize, 0usize, 0.0f64);
        for t in items {
            n += 1;
            ea += t.ea as usize;
            pv += t.pv as usize;
            oa += t.oa;
        }
        if n == 0 {
            return Aggregate::default();
        }
        let pct = |x: f64| 100.0 * x / n as f64;
        Aggregate {
            n,
            ea: pct(ea as f64),
            pv: pct(pv as f64),
            oa: pct(oa),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskOutcome>,
    /// Keyed by "easy", "medium", "hard" and "overall".
    pub aggregates: IndexMap<String, Aggregate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn from_outcomes(tasks: Vec<TaskOutcome>, warnings: Vec<String>) -> Self {
        let mut aggregates = IndexMap::new();
        for d in Difficulty::ALL {
            aggregates.insert(
                d.as_str().to_string(),
                Aggregate::of(tasks.iter().filter(|t| t.difficulty == d)),
            );
        }
        aggregates.insert("overall".to_string(), Aggregate::of(tasks.iter()));
        EvalReport {
            tasks,
            aggregates,
            warnings,
        }
    }

    pub fn overall(&self) -> Aggregate {
        self.aggregates["overall"]
    }

    /// One row per model: EA, PV and OA, each by easy/medium/hard/overall.
    pub fn to_csv(&self, model: &str) -> String {
        let tiers = ["easy", "medium", "hard", "overall"];
        let mut header = vec!["model".to_string()];
        let mut row = vec![model.to_string()];
        for (metric, get) in [
            ("ea", (|a: &Aggregate| a.ea) as fn(&Aggregate) -> f64),
            ("pv", |a: &Aggregate| a.pv),
            ("oa", |a: &Aggregate| a.oa),
        ] {
            for t in tiers {
                header.push(format!("{metric}_{t}"));
                row.push(format!("{:.2}", get(&self.aggregates[t])));
            }
        }
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

/// EA over (prediction, task) pairs; unparseable predictions score 0.
pub fn execution_accuracy(
    tasks: &[(Option<PipelineProgram>, TaskInstance)],
    opts: &EquivalenceOptions,
) -> f64 {
    mean_of(tasks, |o| o.ea as u8 as f64, opts)
}

pub fn program_validity(
    tasks: &[(Option<PipelineProgram>, TaskInstance)],
    opts: &EquivalenceOptions,
) -> f64 {
    mean_of(tasks, |o| o.pv as u8 as f64, opts)
}

fn mean_of(
    tasks: &[(Option<PipelineProgram>, TaskInstance)],
    f: impl Fn(&TaskOutcome) -> f64,
    opts: &EquivalenceOptions,
) -> f64 {
    if tasks.is_empty() {
        return 0.0;
    }
    tasks
        .iter()
        .map(|(p, t)| f(&score_task(p.as_ref(), t, opts, ExecutionLimits::default())))
        .sum::<f64>()
        / tasks.len() as f64
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("corpus has no {0}-grams")]
    NoNgrams(usize),
    #[error("n must be at least 1")]
    ZeroN,
    #[error("self-BLEU needs at least two texts, got {0}")]
    CorpusTooSmall(usize),
}

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn ngrams<'a>(toks: &[&'a str], n: usize) -> Vec<Vec<&'a str>> {
    if toks.len() < n {
        return Vec::new();
    }
    toks.windows(n).map(|w| w.to_vec()).collect()
}

/// Unique n-grams over total n-grams across the whole corpus.
pub fn distinct_n<S: AsRef<str>>(corpus: &[S], n: usize) -> Result<f64, StatsError> {
    if n == 0 {
        return Err(StatsError::ZeroN);
    }
    let mut total = 0usize;
    let mut unique = BTreeSet::new();
    for text in corpus {
        let toks = tokens(text.as_ref());
        for g in ngrams(&toks, n) {
            total += 1;
            unique.insert(g);
        }
    }
    if total == 0 {
        return Err(StatsError::NoNgrams(n));
    }
    Ok(unique.len() as f64 / total as f64)
}

fn counts<'a>(toks: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut m = HashMap::new();
    for g in ngrams(toks, n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Sentence BLEU with uniform weights up to `max_n`, multi-reference clipping
/// and the closest-reference brevity penalty. No smoothing.
pub fn sentence_bleu(hyp: &str, refs: &[&str], max_n: usize) -> f64 {
    let h = tokens(hyp);
    let rs: Vec<Vec<&str>> = refs.iter().map(|r| tokens(r)).collect();
    if h.is_empty() || rs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hc = counts(&h, n);
        let total: usize = hc.values().sum();
        if total == 0 {
            return 0.0;
        }
        let mut max_ref: HashMap<&Vec<&str>, usize> = HashMap::new();
        let ref_counts: Vec<_> = rs.iter().map(|r| counts(r, n)).collect();
        for g in hc.keys() {
            let m = ref_counts.iter().map(|rc| *rc.get(g).unwrap_or(&0)).max().unwrap_or(0);
            max_ref.insert(g, m);
        }
        let clipped: usize = hc.iter().map(|(g, &c)| c.min(max_ref[g])).sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln() / max_n as f64;
    }
    let c = h.len() as i64;
    let r = rs
        .iter()
        .map(|r| r.len() as i64)
        .min_by_key(|&l| ((l - c).abs(), l))
        .expect("non-empty refs");
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * log_sum.exp()
}

/// Mean BLEU of each text against all the others.
///
/// Equal to averaging [`sentence_bleu`] with every other text as a reference,
/// but n-grams are counted once: for each n-gram the two largest per-text
/// counts are kept, so the clip for text `i` is the largest count outside `i`.
pub fn self_bleu<S: AsRef<str>>(corpus: &[S], max_n: usize) -> Result<f64, StatsError> {
    if corpus.len() < 2 {
        return Err(StatsError::CorpusTooSmall(corpus.len()));
    }
    let toks: Vec<Vec<&str>> = corpus.iter().map(|t| tokens(t.as_ref())).collect();
    let lens: Vec<i64> = toks.iter().map(|t| t.len() as i64).collect();
    let mut log_sums = vec![0.0f64; toks.len()];
    let mut dead = vec![false; toks.len()];
    for (i, t) in toks.iter().enumerate() {
        dead[i] = t.is_empty();
    }
    for n in 1..=max_n {
        let per_text: Vec<HashMap<Vec<&str>, usize>> = toks.iter().map(|t| counts(t, n)).collect();
        // n-gram -> (best count, text holding it, runner-up count)
        let mut top: HashMap<&Vec<&str>, (usize, usize, usize)> = HashMap::new();
        for (i, m) in per_text.iter().enumerate() {
            for (g, &c) in m {
                let e = top.entry(g).or_insert((0, usize::MAX, 0));
                if c > e.0 {
                    *e = (c, i, e.0);
                } else if c > e.2 {
                    e.2 = c;
                }
            }
        }
        for (i, m) in per_text.iter().enumerate() {
            if dead[i] {
                continue;
            }
            let total: usize = m.values().sum();
            let clipped: usize = m
                .iter()
                .map(|(g, &c)| {
                    let (best, who, second) = top[g];
                    c.min(if who == i { second } else { best })
                })
                .sum();
            if total == 0 || clipped == 0 {
                dead[i] = true;
                continue;
            }
            log_sums[i] += (clipped as f64 / total as f64).ln() / max_n as f64;
        }
    }
    let mut sum = 0.0;
    for i in 0..toks.len() {
        if dead[i] {
            continue;
        }
        let c = lens[i];
        let r = lens
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, &l)| l)
            .min_by_key(|&l| ((l - c).abs(), l))
            .expect("at least two texts");
        let bp = if c > r {
            1.0
        } else {
            (1.0 - r as f64 / c as f64).exp()
        };
        sum += bp * log_sums[i].exp();
    }
    Ok(sum / toks.len() as f64)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub count: usize,
    pub trimmed: usize,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
    pub mean: f64,
}

/// Per-kind duration summary in seconds with the slowest 5% of samples dropped.
pub fn timing_stats(traces: &[TraceEntry]) -> BTreeMap<String, TimingSummary> {
    let mut by_kind: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for t in traces {
        by_kind
            .entry(t.kind.name().to_string())
            .or_default()
            .push(t.duration.as_secs_f64());
    }
    by_kind
        .into_iter()
        .map(|(k, v)| (k, summarize(v)))
        .collect()
}

pub fn summarize(mut v: Vec<f64>) -> TimingSummary {
    v.sort_by(f64::total_cmp);
    let drop = v.len() * 5 / 100;
    v.truncate(v.len() - drop);
    TimingSummary {
        count: v.len(),
        trimmed: drop,
        min: v[0],
        p25: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        p75: quantile(&v, 0.75),
        max: v[v.len() - 1],
        mean: v.iter().sum::<f64>() / v.len() as f64,
    }
}

pub fn durations_to_secs(d: &[Duration]) -> Vec<f64> {
    d.iter().map(Duration::as_secs_f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;

    fn t(cols: &[(&str, ColumnType)], rows: Vec<Vec<Value>>) -> Table {
        Table::new(
            "t",
            cols.iter().map(|(n, ty)| Column::new(*n, *ty)).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn equivalence_basics() {
        use ColumnType::*;
        let a = t(
            &[("x", Integer), ("y", Real), ("z", Text)],
            vec![
                vec![Value::Int(1), Value::Real(0.5), Value::Text("a".into())],
                vec![Value::Int(2), Value::Null, Value::Text("b".into())],
            ],
        );
        let b = t(
            &[("z", Text), ("x", Integer), ("y", Real)],
            vec![
                vec![Value::Text("b".into()), Value::Int(2), Value::Null],
                vec![Value::Text("a".into()), Value::Int(1), Value::Real(0.5 + 1e-7)],
            ],
        );
        let o = EquivalenceOptions::default();
        assert!(canonical_equal(&a, &b, &o));
        let c = t(
            &[("z", Text), ("x", Integer), ("y", Real)],
            vec![
                vec![Value::Text("b".into()), Value::Int(2), Value::Null],
                vec![Value::Text("a".into()), Value::Int(1), Value::Real(0.5 + 1e-3)],
            ],
        );
        assert!(!canonical_equal(&a, &c, &o));
        let renamed = t(
            &[("x", Integer), ("y", Real), ("w", Text)],
            a.rows().to_vec(),
        );
        assert!(!canonical_equal(&a, &renamed, &o));
    }

    #[test]
    fn numeric_types_are_compatible() {
        let a = t(&[("x", ColumnType::Integer)], vec![vec![Value::Int(2)]]);
        let b = t(&[("x", ColumnType::Real)], vec![vec![Value::Real(2.0)]]);
        assert!(canonical_equal(&a, &b, &EquivalenceOptions::default()));
        let c = t(&[("x", ColumnType::Text)], vec![vec![Value::Text("2".into())]]);
        assert!(!canonical_equal(&a, &c, &EquivalenceOptions::default()));
    }

    #[test]
    fn distinct_examples() {
        assert!((distinct_n(&["a b a"], 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(distinct_n(&["hello"], 1).unwrap(), 1.0);
        let same = ["the cat sat", "the cat sat"];
        assert_eq!(distinct_n(&same, 2).unwrap(), 0.5);
        assert!(distinct_n(&["one"], 2).is_err());
    }

    #[test]
    fn self_bleu_extremes() {
        let same = ["a b c d e", "a b c d e", "a b c d e"];
        assert!((self_bleu(&same, 4).unwrap() - 1.0).abs() < 1e-12);
        let disjoint = ["a b c d", "e f g h", "i j k l"];
        assert_eq!(self_bleu(&disjoint, 4).unwrap(), 0.0);
        assert!(self_bleu(&["solo"], 4).is_err());
    }

    #[test]
    fn timing_quantiles_on_known_sample() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summarize(v);
        assert_eq!(s.trimmed, 5);
        assert_eq!(s.count, 95);
        assert_eq!(s.max, 95.0);
        assert_eq!(s.median, 48.0);
        assert_eq!(s.p25, 24.5);
        assert_eq!(s.p75, 71.5);
        assert!(timing_stats(&[]).is_empty());
    }
}
