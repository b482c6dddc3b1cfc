//! Batch experiment suites and their summary tables.
//!
//! A suite is the cross product of policies, user parameters, prior pairs,
//! objective functions and prior samples. Each episode writes one trace file;
//! the flat metrics file is rebuilt from the traces in a fixed order, so a
//! rerun, an interrupted run that is resumed, or a run with a different number
//! of workers all produce the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::PolicyKind;
use crate::error::{Error, Result};
use crate::game::{run_episode, GameConfig, GameTrace};
use crate::gp::DEFAULT_MAX_SAMPLES;
use crate::grid::{ObjectiveSpec, PriorKind};
use crate::planner::RewardConfig;
use crate::rng::derive_seed;
use crate::stats::mean_sd;
use crate::user_model::{UserParams, DEFAULT_SIGMA};

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACES_DIR: &str = "traces";
pub const TABLES_DIR: &str = "tables";

/// Number of distinct standard objectives.
pub const MAX_FUNCTIONS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorPair {
    pub ai: PriorKind,
    pub user: PriorKind,
}

impl PriorPair {
    pub const fn new(ai: PriorKind, user: PriorKind) -> Self {
        Self { ai, user }
    }

    /// `"G/L"` style label, AI first.
    pub fn label(&self) -> String {
        format!("{}/{}", self.ai.short(), self.user.short())
    }
}

fn kind_rank(k: PriorKind) -> u8 {
    match k {
        PriorKind::Global => 0,
        PriorKind::Local => 1,
        PriorKind::None => 2,
    }
}

/// The four user types of the experiment grid.
pub fn standard_users() -> Vec<UserParams> {
    [(0.1, 0.2), (0.6, 0.2), (0.1, 0.7), (0.6, 0.7)]
        .into_iter()
        .map(|(alpha, beta)| UserParams {
            alpha,
            beta,
            sigma: DEFAULT_SIGMA,
        })
        .collect()
}

/// The seven prior pairs of the experiment grid.
pub fn standard_prior_pairs() -> Vec<PriorPair> {
    use PriorKind::*;
    vec![
        PriorPair::new(Global, Global),
        PriorPair::new(Global, Local),
        PriorPair::new(Global, None),
        PriorPair::new(Local, Global),
        PriorPair::new(Local, Local),
        PriorPair::new(Local, None),
        PriorPair::new(None, None),
    ]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}
fn default_functions() -> usize {
    2
}
fn default_samples() -> usize {
    5
}
fn default_rounds() -> usize {
    20
}
fn default_prior_points() -> usize {
    5
}
fn default_spread() -> f64 {
    0.05
}
fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}
fn default_entropy_samples() -> usize {
    DEFAULT_MAX_SAMPLES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default = "standard_users")]
    pub users: Vec<UserParams>,
    #[serde(default = "standard_prior_pairs")]
    pub prior_pairs: Vec<PriorPair>,
    #[serde(default = "default_functions")]
    pub n_functions: usize,
    #[serde(default = "default_samples")]
    pub n_prior_samples: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub planner: RewardConfig,
    #[serde(default = "default_sigma")]
    pub model_sigma: f64,
    #[serde(default = "default_entropy_samples")]
    pub entropy_samples: usize,
    #[serde(default = "default_prior_points")]
    pub prior_points: usize,
    #[serde(default = "default_spread")]
    pub prior_spread: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

impl SuiteConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Three functions and ten prior samples per cell.
    pub fn paper_scale(mut self) -> Self {
        self.n_functions = 3;
        self.n_prior_samples = 10;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(Error::Config(format!("{what} must not be empty")));
        if self.policies.is_empty() {
            return empty("policies");
        }
        if self.users.is_empty() {
            return empty("users");
        }
        if self.prior_pairs.is_empty() {
            return empty("prior_pairs");
        }
        if self.n_functions < 1 || self.n_functions > MAX_FUNCTIONS {
            return Err(Error::Config(format!("n_functions = {} outside [1, {MAX_FUNCTIONS}]", self.n_functions)));
        }
        if self.n_prior_samples < 1 {
            return Err(Error::Config("n_prior_samples must be >= 1".into()));
        }
        for ep in self.episodes().iter().take(1) {
            self.game_config(ep).validate()?;
        }
        for u in &self.users {
            u.validate()?;
        }
        Ok(())
    }

    /// Every episode of the suite in canonical order.
    pub fn episodes(&self) -> Vec<Episode> {
        let mut out = Vec::new();
        for &policy in &self.policies {
            for (ui, &user) in self.users.iter().enumerate() {
                for (pi, &prior) in self.prior_pairs.iter().enumerate() {
                    for function in 0..self.n_functions {
                        for sample in 0..self.n_prior_samples {
                            // shared by every policy so comparisons are paired
                            let seed = derive_seed(self.seed, &[function as u64, sample as u64, ui as u64, pi as u64]);
                            out.push(Episode {
                                id: episode_id(policy, user, prior, function, sample),
                                policy,
                                user,
                                prior,
                                function,
                                sample,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn game_config(&self, ep: &Episode) -> GameConfig {
        GameConfig {
            objective: ObjectiveSpec::standard(ep.function),
            rounds: self.rounds,
            policy: ep.policy,
            user: ep.user,
            ai_prior: ep.prior.ai,
            user_prior: ep.prior.user,
            prior_points: self.prior_points,
            prior_spread: self.prior_spread,
            planner: self.planner,
            model_sigma: self.model_sigma,
            entropy_samples: self.entropy_samples,
            seed: ep.seed,
        }
    }
}

fn episode_id(policy: PolicyKind, user: UserParams, prior: PriorPair, function: usize, sample: usize) -> String {
    format!(
        "{}-a{}-b{}-{}{}-f{}-s{}",
        policy.key(),
        user.alpha,
        user.beta,
        prior.ai.short(),
        prior.user.short(),
        function,
        sample
    )
}

/// One cell of the suite.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: String,
    pub policy: PolicyKind,
    pub user: UserParams,
    pub prior: PriorPair,
    pub function: usize,
    pub sample: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuiteSummary {
    pub dir: PathBuf,
    pub episodes: usize,
    /// Episodes whose stored trace was reused.
    pub reused: usize,
    pub metrics: PathBuf,
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn load_trace(path: &Path) -> Result<GameTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn trace_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(TRACES_DIR).join(format!("{id}.json"))
}

pub fn run_suite(cfg: &SuiteConfig, jobs: Option<usize>) -> Result<SuiteSummary> {
    run_suite_with(cfg, jobs, &|_, _, _| {})
}

/// Runs the suite, calling `progress(done, total, id)` after each episode.
/// Stored traces made from the same episode configuration are reused.
pub fn run_suite_with(cfg: &SuiteConfig, jobs: Option<usize>, progress: &(dyn Fn(usize, usize, &str) + Sync)) -> Result<SuiteSummary> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let traces = dir.join(TRACES_DIR);
    fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
    let echo = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&dir.join("suite.toml"), echo.as_bytes())?;

    let episodes = cfg.episodes();
    let total = episodes.len();
    let done = AtomicUsize::new(0);
    let reused = AtomicUsize::new(0);
    let run_one = |ep: &Episode| -> Result<GameTrace> {
        let game_cfg = cfg.game_config(ep);
        let path = trace_path(&dir, &ep.id);
        let stored = path.exists().then(|| load_trace(&path)).and_then(|r| r.ok());
        let trace = match stored {
            Some(t) if t.config == game_cfg && t.rounds.len() == game_cfg.rounds => {
                reused.fetch_add(1, Ordering::Relaxed);
                t
            }
            _ => {
                let t = run_episode(&game_cfg)?;
                write_atomic(&path, serde_json::to_string_pretty(&t)?.as_bytes())?;
                t
            }
        };
        progress(done.fetch_add(1, Ordering::Relaxed) + 1, total, &ep.id);
        Ok(trace)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<GameTrace>> = pool.install(|| episodes.par_iter().map(run_one).collect());

    let mut rows = Vec::with_capacity(total);
    for (ep, res) in episodes.iter().zip(results) {
        rows.push(MetricRow::from_trace(ep, &res?));
    }
    let metrics = dir.join(METRICS_FILE);
    write_atomic(&metrics, &metrics_csv(&rows, cfg.rounds)?)?;
    Ok(SuiteSummary {
        dir,
        episodes: total,
        reused: reused.into_inner(),
        metrics,
    })
}

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub policy: PolicyKind,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub prior: PriorPair,
    pub function: usize,
    pub sample: usize,
    pub seed: u64,
    pub final_score: f64,
    pub initial_entropy: Option<f64>,
    pub final_entropy: Option<f64>,
    /// Laplace MAP of `(α, β)` before each AI move, strategic policy only.
    pub map_history: Vec<[f64; 2]>,
    /// Optimization score after each round.
    pub scores: Vec<f64>,
}

impl MetricRow {
    pub fn from_trace(ep: &Episode, trace: &GameTrace) -> Self {
        let entropy_at = |round: usize| trace.entropy.iter().find(|e| e.round == round).and_then(|e| e.nats);
        Self {
            id: ep.id.clone(),
            policy: ep.policy,
            alpha: ep.user.alpha,
            beta: ep.user.beta,
            sigma: ep.user.sigma,
            prior: ep.prior,
            function: ep.function,
            sample: ep.sample,
            seed: ep.seed,
            final_score: trace.final_score().unwrap_or(f64::NAN),
            initial_entropy: entropy_at(0),
            final_entropy: trace.final_entropy(),
            map_history: trace.posteriors.iter().map(|p| p.posterior.map).collect(),
            scores: trace.scores.clone(),
        }
    }
}

const FIXED_COLUMNS: [&str; 15] = [
    "id",
    "policy",
    "alpha",
    "beta",
    "sigma",
    "ai_prior",
    "user_prior",
    "function",
    "sample",
    "seed",
    "final_score",
    "initial_entropy",
    "final_entropy",
    "final_map_alpha",
    "final_map_beta",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_csv(rows: &[MetricRow], rounds: usize) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.push("map_history".into());
    header.extend((1..=rounds).map(|t| format!("score_{t}")));
    w.write_record(&header)?;
    for r in rows {
        let last = r.map_history.last();
        let history = r
            .map_history
            .iter()
            .map(|m| format!("{:.4}:{:.4}", m[0], m[1]))
            .collect::<Vec<_>>()
            .join(";");
        let mut rec = vec![
            r.id.clone(),
            r.policy.key().to_string(),
            r.alpha.to_string(),
            r.beta.to_string(),
            r.sigma.to_string(),
            r.prior.ai.to_string(),
            r.prior.user.to_string(),
            r.function.to_string(),
            r.sample.to_string(),
            r.seed.to_string(),
            r.final_score.to_string(),
            opt(r.initial_entropy),
            opt(r.final_entropy),
            opt(last.map(|m| m[0])),
            opt(last.map(|m| m[1])),
            history,
        ];
        rec.extend(r.scores.iter().map(|s| s.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

/// Reads the metrics file of a results directory.
pub fn read_metrics(dir: &Path) -> Result<Vec<MetricRow>> {
    let path = dir.join(METRICS_FILE);
    if !path.exists() {
        return Err(Error::EmptyResults(dir.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(&path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedTrace(format!("{} lacks column {name}", path.display())))
    };
    let idx: Vec<usize> = FIXED_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let hist = col("map_history")?;
    let score_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("score_"))
        .map(|(i, _)| i)
        .collect();
    let bad = |what: &str, v: &str| Error::MalformedTrace(format!("bad {what} value {v:?} in {}", path.display()));
    let num = |v: &str, what: &str| v.parse::<f64>().map_err(|_| bad(what, v));
    let opt_num = |v: &str, what: &str| if v.is_empty() { Ok(None) } else { num(v, what).map(Some) };
    let int = |v: &str, what: &str| v.parse::<u64>().map_err(|_| bad(what, v));

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("");
        let map_history = rec
            .get(hist)
            .unwrap_or("")
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| {
                let (a, b) = s.split_once(':').ok_or_else(|| bad("map_history", s))?;
                Ok([num(a, "map_history")?, num(b, "map_history")?])
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(MetricRow {
            id: f(0).to_string(),
            policy: PolicyKind::from_str(f(1))?,
            alpha: num(f(2), "alpha")?,
            beta: num(f(3), "beta")?,
            sigma: num(f(4), "sigma")?,
            prior: PriorPair::new(f(5).parse()?, f(6).parse()?),
            function: int(f(7), "function")? as usize,
            sample: int(f(8), "sample")? as usize,
            seed: int(f(9), "seed")?,
            final_score: num(f(10), "final_score")?,
            initial_entropy: opt_num(f(11), "initial_entropy")?,
            final_entropy: opt_num(f(12), "final_entropy")?,
            map_history,
            scores: score_cols
                .iter()
                .map(|&i| num(rec.get(i).unwrap_or(""), "score"))
                .collect::<Result<_>>()?,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyResults(dir.to_path_buf()));
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Table {
    ScoresByUser,
    ScoresByPrior,
    EntropyByUser,
    ScoreCurves,
}

impl Table {
    pub const ALL: [Table; 4] = [Table::ScoresByUser, Table::ScoresByPrior, Table::EntropyByUser, Table::ScoreCurves];

    pub fn name(self) -> &'static str {
        match self {
            Table::ScoresByUser => "scores_by_user",
            Table::ScoresByPrior => "scores_by_prior",
            Table::EntropyByUser => "entropy_by_user",
            Table::ScoreCurves => "score_curves",
        }
    }
}

impl FromStr for Table {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Table::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown table {s:?}")))
    }
}

/// Mean and population standard deviation of a group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellStat {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl CellStat {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let (mean, sd) = mean_sd(xs);
        Some(Self { n: xs.len(), mean, sd })
    }
}

/// A policies-by-columns table of cell statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTable {
    pub columns: Vec<String>,
    pub rows: Vec<(PolicyKind, Vec<Option<CellStat>>)>,
}

fn policies_present(rows: &[MetricRow]) -> Vec<PolicyKind> {
    PolicyKind::ALL
        .into_iter()
        .filter(|p| rows.iter().any(|r| r.policy == *p))
        .collect()
}

fn user_columns(rows: &[MetricRow]) -> Vec<(f64, f64)> {
    let mut cols: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if !cols.iter().any(|&(b, a)| b == r.beta && a == r.alpha) {
            cols.push((r.beta, r.alpha));
        }
    }
    cols.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    cols
}

fn pivot<K: PartialEq + Copy>(
    rows: &[MetricRow],
    policies: &[PolicyKind],
    keys: &[K],
    key_of: impl Fn(&MetricRow) -> K,
    value: impl Fn(&MetricRow) -> Option<f64>,
) -> Vec<(PolicyKind, Vec<Option<CellStat>>)> {
    policies
        .iter()
        .map(|&p| {
            let cells = keys
                .iter()
                .map(|&k| {
                    let xs: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.policy == p && key_of(r) == k)
                        .filter_map(&value)
                        .collect();
                    CellStat::of(&xs)
                })
                .collect();
            (p, cells)
        })
        .collect()
}

/// Final scores with rows = policies and columns = `(β, α)` user types.
pub fn scores_by_user(rows: &[MetricRow]) -> SummaryTable {
    let cols = user_columns(rows);
    SummaryTable {
        columns: cols.iter().map(|(b, a)| format!("b={b} a={a}")).collect(),
        rows: pivot(rows, &policies_present(rows), &cols, |r| (r.beta, r.alpha), |r| Some(r.final_score)),
    }
}

/// Final scores with rows = policies and columns = prior pairs (AI/user).
pub fn scores_by_prior(rows: &[MetricRow]) -> SummaryTable {
    let mut pairs: Vec<PriorPair> = Vec::new();
    for r in rows {
        if !pairs.contains(&r.prior) {
            pairs.push(r.prior);
        }
    }
    pairs.sort_by_key(|p| (kind_rank(p.ai), kind_rank(p.user)));
    SummaryTable {
        columns: pairs.iter().map(PriorPair::label).collect(),
        rows: pivot(rows, &policies_present(rows), &pairs, |r| r.prior, |r| Some(r.final_score)),
    }
}

/// Final user-certainty entropy for policies with a partner. Episodes whose
/// entropy is minus infinity are left out.
pub fn entropy_by_user(rows: &[MetricRow]) -> SummaryTable {
    let cols = user_columns(rows);
    let policies: Vec<PolicyKind> = policies_present(rows).into_iter().filter(|p| !p.is_single_agent()).collect();
    SummaryTable {
        columns: cols.iter().map(|(b, a)| format!("b={b} a={a}")).collect(),
        rows: pivot(rows, &policies, &cols, |r| (r.beta, r.alpha), |r| r.final_entropy),
    }
}

/// Per-round score statistics of each policy over every episode.
pub fn score_curves(rows: &[MetricRow]) -> Vec<(PolicyKind, Vec<CellStat>)> {
    policies_present(rows)
        .into_iter()
        .map(|p| {
            let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.policy == p).collect();
            let t_max = mine.iter().map(|r| r.scores.len()).min().unwrap_or(0);
            let curve = (0..t_max)
                .filter_map(|t| CellStat::of(&mine.iter().map(|r| r.scores[t]).collect::<Vec<_>>()))
                .collect();
            (p, curve)
        })
        .collect()
}

fn stat_text(s: &Option<CellStat>) -> String {
    match s {
        Some(s) => format!("{:.2} ± {:.2}", s.mean, s.sd),
        None => "-".into(),
    }
}

fn summary_csv(t: &SummaryTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["policy".to_string()];
    for c in &t.columns {
        header.push(format!("{c} mean"));
        header.push(format!("{c} sd"));
        header.push(format!("{c} n"));
    }
    w.write_record(&header)?;
    for (p, cells) in &t.rows {
        let mut rec = vec![p.label().to_string()];
        for c in cells {
            match c {
                Some(s) => rec.extend([format!("{:.6}", s.mean), format!("{:.6}", s.sd), s.n.to_string()]),
                None => rec.extend([String::new(), String::new(), "0".into()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

fn summary_text(title: &str, t: &SummaryTable) -> String {
    let label_w = t.rows.iter().map(|(p, _)| p.label().len()).max().unwrap_or(6).max(6);
    let cells: Vec<Vec<String>> = t.rows.iter().map(|(_, c)| c.iter().map(stat_text).collect()).collect();
    let col_w: Vec<usize> = (0..t.columns.len())
        .map(|j| {
            cells
                .iter()
                .map(|r| r[j].chars().count())
                .chain([t.columns[j].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = format!("{title}\n\n{:label_w$}", "");
    for (c, w) in t.columns.iter().zip(&col_w) {
        let _ = write!(out, "  {c:>w$}");
    }
    out.push('\n');
    for ((p, _), row) in t.rows.iter().zip(&cells) {
        let _ = write!(out, "{:label_w$}", p.label());
        for (c, w) in row.iter().zip(&col_w) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    out
}

fn curves_csv(curves: &[(PolicyKind, Vec<CellStat>)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["policy", "round", "mean", "sd", "n"])?;
    for (p, curve) in curves {
        for (t, s) in curve.iter().enumerate() {
            w.write_record([
                p.label().to_string(),
                (t + 1).to_string(),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.sd),
                s.n.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

fn curves_text(curves: &[(PolicyKind, Vec<CellStat>)]) -> String {
    let t_max = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    let mut out = String::from("Mean optimization score by round\n\nround");
    for (p, _) in curves {
        let _ = write!(out, "  {:>13}", p.label());
    }
    out.push('\n');
    for t in 0..t_max {
        let _ = write!(out, "{:>5}", t + 1);
        for (_, c) in curves {
            match c.get(t) {
                Some(s) => {
                    let _ = write!(out, "  {:>13.2}", s.mean);
                }
                None => {
                    let _ = write!(out, "  {:>13}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `tables/<name>.csv` and `tables/<name>.txt` from the metrics file
/// and returns both paths.
pub fn aggregate(dir: &Path, table: Table) -> Result<[PathBuf; 2]> {
    let rows = read_metrics(dir)?;
    let (csv_bytes, text) = match table {
        Table::ScoresByUser => {
            let t = scores_by_user(&rows);
            (summary_csv(&t)?, summary_text("Final optimization score by user type (mean ± sd)", &t))
        }
        Table::ScoresByPrior => {
            let t = scores_by_prior(&rows);
            (summary_csv(&t)?, summary_text("Final optimization score by prior pair, AI/user (mean ± sd)", &t))
        }
        Table::EntropyByUser => {
            let t = entropy_by_user(&rows);
            (summary_csv(&t)?, summary_text("Final user certainty in nats by user type (mean ± sd)", &t))
        }
        Table::ScoreCurves => {
            let c = score_curves(&rows);
            (curves_csv(&c)?, curves_text(&c))
        }
    };
    let out = dir.join(TABLES_DIR);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let csv_path = out.join(format!("{}.csv", table.name()));
    let txt_path = out.join(format!("{}.txt", table.name()));
    write_atomic(&csv_path, &csv_bytes)?;
    write_atomic(&txt_path, text.as_bytes())?;
    Ok([csv_path, txt_path])
}

/// Mean final score of each policy over all of its episodes.
pub fn mean_final_scores(rows: &[MetricRow]) -> BTreeMap<PolicyKind, f64> {
    policies_present(rows)
        .into_iter()
        .map(|p| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.policy == p).map(|r| r.final_score).collect();
            (p, mean_sd(&xs).0)
        })
        .collect()
}
