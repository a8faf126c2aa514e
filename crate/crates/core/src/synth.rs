//! Operator-chain synthesis: a Markov proposer over operator kinds, with
//! every proposal bound and checked against the schema before it is kept.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{OperatorCall, OperatorKind, PipelineProgram};
use crate::interp::{ExecContext, ExecutionLimits, TraceEntry};
use crate::spm::{self, validate_and_bind, BindingOutcome};
use crate::table::{ingest_csv, CurationOptions, Table, TableError, TableSet, Value};

pub const NUM_KINDS: usize = 16;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_MEAN_LENGTH: f64 = 4.24;
pub const FIRST_OP_REDRAWS: usize = 64;

/// Per-kind operator frequencies used as a stationary stand-in for mined
/// transition counts, in [`OperatorKind::ALL`] order.
pub const PROXY_FREQUENCIES: [u64; NUM_KINDS] = [
    8876, 3925, 7065, 3888, 3643, 2198, 9271, 2933, 4365, 2135, 2271, 588, 8588, 4074, 5762,
    5937,
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("negative transition count {count} for {from} -> {to}")]
    NegativeCount {
        from: OperatorKind,
        to: OperatorKind,
        count: i64,
    },
    #[error("smoothing constant must be positive, got {0}")]
    BadAlpha(f64),
    #[error("invalid transitions file: {0}")]
    BadFile(String),
    #[error("no operator could be bound after {0} draws")]
    NoBindableOperator(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Row-stochastic operator transition probabilities with Laplace smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub alpha: f64,
    pub probs: Vec<Vec<f64>>,
}

/// On-disk form: `{alpha, kinds: [...16 names...], counts: [[...]]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionsFile {
    pub alpha: f64,
    pub kinds: Vec<String>,
    pub counts: Vec<Vec<i64>>,
}

impl TransitionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, alpha: f64) -> Result<Self, SynthError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(SynthError::BadAlpha(alpha));
        }
        if counts.len() != NUM_KINDS || counts.iter().any(|r| r.len() != NUM_KINDS) {
            return Err(SynthError::BadFile("counts must be 16x16".into()));
        }
        let probs = counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                let denom = n as f64 + NUM_KINDS as f64 * alpha;
                row.iter().map(|&c| (c as f64 + alpha) / denom).collect()
            })
            .collect();
        Ok(TransitionMatrix {
            counts,
            alpha,
            probs,
        })
    }

    /// Every row equal to the proxy frequency vector.
    pub fn proxy() -> Self {
        let counts = vec![PROXY_FREQUENCIES.to_vec(); NUM_KINDS];
        TransitionMatrix::from_counts(counts, DEFAULT_ALPHA).expect("static counts are valid")
    }

    pub fn prob(&self, from: OperatorKind, to: OperatorKind) -> f64 {
        self.probs[from.index()][to.index()]
    }

    pub fn row(&self, from: OperatorKind) -> &[f64] {
        &self.probs[from.index()]
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, from: OperatorKind, rng: &mut R) -> OperatorKind {
        sample_index(self.row(from), rng)
    }

    /// Mean probability, over source rows, of proposing a join or union.
    pub fn multi_table_mass(&self) -> f64 {
        let j = OperatorKind::Join.index();
        let u = OperatorKind::Union.index();
        self.probs.iter().map(|r| r[j] + r[u]).sum::<f64>() / NUM_KINDS as f64
    }

    pub fn to_file(&self) -> TransitionsFile {
        TransitionsFile {
            alpha: self.alpha,
            kinds: OperatorKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            counts: self
                .counts
                .iter()
                .map(|r| r.iter().map(|&c| c as i64).collect())
                .collect(),
        }
    }

    pub fn from_file(f: &TransitionsFile) -> Result<Self, SynthError> {
        if f.kinds.len() != NUM_KINDS || f.counts.len() != NUM_KINDS {
            return Err(SynthError::BadFile("expected 16 kinds and 16 count rows".into()));
        }
        let kinds = f
            .kinds
            .iter()
            .map(|k| {
                OperatorKind::from_name(k)
                    .ok_or_else(|| SynthError::BadFile(format!("unknown kind '{k}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut pairs = Vec::new();
        for (i, row) in f.counts.iter().enumerate() {
            if row.len() != NUM_KINDS {
                return Err(SynthError::BadFile(format!("row {i} does not have 16 counts")));
            }
            for (j, &c) in row.iter().enumerate() {
                pairs.push((kinds[i], kinds[j], c));
            }
        }
        build_transition_matrix(&pairs, f.alpha)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let f: TransitionsFile =
            serde_json::from_str(&text).map_err(|e| SynthError::BadFile(e.to_string()))?;
        TransitionMatrix::from_file(&f)
    }
}

/// Accumulate `(from, to, count)` triples and smooth them into probabilities.
pub fn build_transition_matrix(
    pairs: &[(OperatorKind, OperatorKind, i64)],
    alpha: f64,
) -> Result<TransitionMatrix, SynthError> {
    let mut counts = vec![vec![0u64; NUM_KINDS]; NUM_KINDS];
    for &(from, to, count) in pairs {
        if count < 0 {
            return Err(SynthError::NegativeCount { from, to, count });
        }
        counts[from.index()][to.index()] += count as u64;
    }
    TransitionMatrix::from_counts(counts, alpha)
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> OperatorKind {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return OperatorKind::ALL[i];
        }
    }
    OperatorKind::ALL[weights.len() - 1]
}

/// Geometric distribution truncated to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub p: f64,
    pub lo: usize,
    pub hi: usize,
}

impl Default for LengthDistribution {
    fn default() -> Self {
        LengthDistribution::fit_mean(DEFAULT_MEAN_LENGTH, 1, 8)
    }
}

impl LengthDistribution {
    pub fn new(p: f64) -> Self {
        LengthDistribution { p, lo: 1, hi: 8 }
    }

    fn weight(&self, k: usize) -> f64 {
        (1.0 - self.p).powi((k - self.lo) as i32) * self.p
    }

    pub fn pmf(&self, k: usize) -> f64 {
        if k < self.lo || k > self.hi {
            return 0.0;
        }
        let z: f64 = (self.lo..=self.hi).map(|j| self.weight(j)).sum();
        self.weight(k) / z
    }

    pub fn mean(&self) -> f64 {
        (self.lo..=self.hi).map(|k| k as f64 * self.pmf(k)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for k in self.lo..=self.hi {
            acc += self.pmf(k);
            if u < acc {
                return k;
            }
        }
        self.hi
    }

    /// The `p` whose truncated mean equals `target`, found by bisection.
    /// The mean falls from the midpoint of the range toward `lo` as `p`
    /// grows, so targets outside that interval are clamped.
    pub fn fit_mean(target: f64, lo: usize, hi: usize) -> Self {
        let mean_at = |p: f64| LengthDistribution { p, lo, hi }.mean();
        let (mut a, mut b) = (1e-9, 1.0 - 1e-9);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mean_at(mid) > target {
                a = mid;
            } else {
                b = mid;
            }
        }
        LengthDistribution {
            p: 0.5 * (a + b),
            lo,
            hi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn from_len(k: usize) -> Self {
        match k {
            0..=3 => Difficulty::Easy,
            4..=6 => Difficulty::Medium,
            _ => Difficulty::Hard,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

pub fn classify_difficulty(p: &PipelineProgram) -> Difficulty {
    Difficulty::from_len(p.len())
}

/// One proposal made during synthesis, accepted or not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Proposal {
    pub step: usize,
    pub prev: Option<OperatorKind>,
    pub kind: OperatorKind,
    pub accepted: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SynthesizedChain {
    pub program: PipelineProgram,
    pub target_length: usize,
    pub output: Table,
    pub trace: Vec<TraceEntry>,
    pub proposals: Vec<Proposal>,
}

/// Why a bound candidate was rejected after execution.
fn try_step(
    ctx: &mut ExecContext,
    call: &OperatorCall,
    index: usize,
) -> Result<(), String> {
    let state = ctx.schema_state();
    let predicted = spm::propagate(call, &state).map_err(|v| v.to_string())?;
    let mut trial = ctx.clone();
    let out = trial.execute_op(index, call).map_err(|e| e.to_string())?;
    if out.num_rows() == 0 || out.num_columns() == 0 {
        return Err("empty result".into());
    }
    let schema = predicted
        .current_schema()
        .ok_or_else(|| "prediction lost the current table".to_string())?;
    if !schema.covers(out.columns()) {
        log::warn!(
            "schema prediction for {} does not cover realized columns",
            call.kind()
        );
        return Err("predicted schema does not cover realized schema".into());
    }
    *ctx = trial;
    Ok(())
}

/// Build one chain over `data` (Algorithm: sample a length, draw the first
/// kind uniformly until one binds, then follow the matrix; discarded
/// proposals still use up their step).
pub fn synthesize_chain<R: Rng + ?Sized>(
    data: &TableSet,
    m: &TransitionMatrix,
    d: &LengthDistribution,
    rng: &mut R,
) -> Result<SynthesizedChain, SynthError> {
    if data.is_empty() {
        return Err(SynthError::EmptyCorpus);
    }
    let k = d.sample(rng);
    let mut ctx = ExecContext::with_limits(data.clone(), ExecutionLimits::default());
    let mut ops: Vec<OperatorCall> = Vec::new();
    let mut proposals = Vec::new();

    let attempt = |ctx: &mut ExecContext,
                       ops: &mut Vec<OperatorCall>,
                       proposals: &mut Vec<Proposal>,
                       step: usize,
                       prev: Option<OperatorKind>,
                       kind: OperatorKind,
                       rng: &mut R|
     -> bool {
        let state = ctx.schema_state();
        let outcome = validate_and_bind(kind, &state, rng, ctx.tables());
        let result = match &outcome {
            BindingOutcome::Bound(call) => try_step(ctx, call, ops.len()).map(|_| call.clone()),
            BindingOutcome::Unbindable(r) => Err(r.clone()),
        };
        let accepted = result.is_ok();
        proposals.push(Proposal {
            step,
            prev,
            kind,
            accepted,
            reason: result.as_ref().err().cloned(),
        });
        if let Ok(call) = result {
            ops.push(call);
        }
        accepted
    };

    let mut first_ok = false;
    for _ in 0..FIRST_OP_REDRAWS {
        let kind = *OperatorKind::ALL.choose(rng).expect("non-empty");
        if attempt(&mut ctx, &mut ops, &mut proposals, 1, None, kind, rng) {
            first_ok = true;
            break;
        }
    }
    if !first_ok {
        log::warn!("no operator bindable after {FIRST_OP_REDRAWS} draws");
        return Err(SynthError::NoBindableOperator(FIRST_OP_REDRAWS));
    }
    for step in 2..=k {
        let prev = ops.last().expect("first op accepted").kind();
        let kind = m.sample_next(prev, rng);
        attempt(&mut ctx, &mut ops, &mut proposals, step, Some(prev), kind, rng);
    }
    let trace = ctx.trace().to_vec();
    let output = ctx.into_current().expect("current table is live");
    Ok(SynthesizedChain {
        program: PipelineProgram::new(ops).with_sources(data.names().map(String::from).collect()),
        target_length: k,
        output,
        trace,
        proposals,
    })
}

/// A directory of curated source tables.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub tables: Vec<Table>,
    join_pairs: Vec<(usize, usize)>,
    union_pairs: Vec<(usize, usize)>,
}

impl Corpus {
    pub fn new(tables: Vec<Table>) -> Result<Self, SynthError> {
        if tables.is_empty() {
            return Err(SynthError::EmptyCorpus);
        }
        let mut join_pairs = Vec::new();
        let mut union_pairs = Vec::new();
        for a in 0..tables.len() {
            for b in 0..tables.len() {
                if a == b {
                    continue;
                }
                if tables[a].columns() == tables[b].columns() {
                    union_pairs.push((a, b));
                }
                if key_compatible(&tables[a], &tables[b]) {
                    join_pairs.push((a, b));
                }
            }
        }
        Ok(Corpus {
            tables,
            join_pairs,
            union_pairs,
        })
    }

    /// Load every `*.csv` in `dir`, sorted by file name, skipping irregular files.
    pub fn load_dir(dir: &Path, opts: &CurationOptions) -> Result<Self, SynthError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|source| SynthError::Io {
                path: dir.display().to_string(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        let mut tables = Vec::new();
        for p in paths {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            match ingest_csv(&p, &name, opts) {
                Ok(t) if t.num_rows() > 0 => tables.push(t),
                Ok(_) => log::info!("skipping empty table {}", p.display()),
                Err(e) => log::warn!("skipping {}: {e}", p.display()),
            }
        }
        Corpus::new(tables)
    }

    pub fn has_pairs(&self) -> bool {
        !self.join_pairs.is_empty() || !self.union_pairs.is_empty()
    }

    /// Input tables for one task, renamed `table_1` (and `table_2`), with
    /// the source names they came from.
    pub fn draw_inputs<R: Rng + ?Sized>(
        &self,
        multi_prob: f64,
        rng: &mut R,
    ) -> (TableSet, Vec<String>) {
        let pairs: Vec<&(usize, usize)> =
            self.join_pairs.iter().chain(&self.union_pairs).collect();
        if !pairs.is_empty() && rng.random_bool(multi_prob.clamp(0.0, 1.0)) {
            let &&(a, b) = pairs.choose(rng).expect("non-empty");
            let set = TableSet::from_tables([
                self.tables[a].clone().with_name("table_1"),
                self.tables[b].clone().with_name("table_2"),
            ])
            .expect("distinct names");
            return (
                set,
                vec![
                    self.tables[a].name().to_string(),
                    self.tables[b].name().to_string(),
                ],
            );
        }
        let t = self.tables.choose(rng).expect("corpus non-empty");
        (
            TableSet::from_tables([t.clone().with_name("table_1")]).expect("single table"),
            vec![t.name().to_string()],
        )
    }
}

fn key_compatible(a: &Table, b: &Table) -> bool {
    for (ai, ac) in a.columns().iter().enumerate() {
        let av: std::collections::HashSet<&Value> =
            a.column_values(ai).filter(|v| !v.is_null()).collect();
        for (bi, bc) in b.columns().iter().enumerate() {
            if ac.ty == bc.ty && b.column_values(bi).any(|v| !v.is_null() && av.contains(v)) {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub matrix: TransitionMatrix,
    pub length: LengthDistribution,
    /// Chance of starting from two tables; defaults to the matrix's
    /// join+union mass.
    pub multi_table_prob: Option<f64>,
    pub max_input_redraws: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            matrix: TransitionMatrix::proxy(),
            length: LengthDistribution::default(),
            multi_table_prob: None,
            max_input_redraws: 16,
        }
    }
}

impl SynthConfig {
    pub fn multi_prob(&self) -> f64 {
        self.multi_table_prob
            .unwrap_or_else(|| self.matrix.multi_table_mass())
    }
}

/// Independent random stream for task `index` under `seed`.
pub fn task_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone)]
pub struct SynthesizedTask {
    pub inputs: TableSet,
    pub sources: Vec<String>,
    pub chain: SynthesizedChain,
}

/// Draw inputs and synthesize one chain for task `index`.
pub fn synthesize_task(
    corpus: &Corpus,
    cfg: &SynthConfig,
    seed: u64,
    index: u64,
) -> Result<SynthesizedTask, SynthError> {
    let mut rng = task_rng(seed, index);
    let mut last_err = SynthError::EmptyCorpus;
    for _ in 0..cfg.max_input_redraws.max(1) {
        let (inputs, sources) = corpus.draw_inputs(cfg.multi_prob(), &mut rng);
        match synthesize_chain(&inputs, &cfg.matrix, &cfg.length, &mut rng) {
            Ok(chain) => {
                return Ok(SynthesizedTask {
                    inputs,
                    sources,
                    chain,
                })
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}
