//! End-to-end workflows behind the command-line tool: generating search
//! trees and datasets, training a prior, prior-guided search, and the
//! transfer experiment comparing search conditions on `logreg`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::actions::{apply, Action, ActionError, TargetSpec};
use crate::bench::BenchmarkId;
use crate::cost::{CostParams, Evaluator, SimEvaluator};
use crate::features::DEFAULT_MAX_PAIRS;
use crate::ir::Program;
use crate::model::{accuracy, make_prior, train, Example, ModelError, ModelParams, TrainConfig};
use crate::search::{
    dataset_from_jsonl, dataset_to_jsonl, export_dataset_with, export_tree, run_search, DatasetRecord, Prior,
    SearchConfig, SearchError, SearchMode, SearchReport,
};

/// Default quantile of `q_mean` above which a state counts as outsized.
pub const DEFAULT_CUTOFF: f64 = 0.9;

/// Default share of a dataset held out from training.
pub const DEFAULT_HOLDOUT: f64 = 0.2;

/// A search budget no tree reaches: the search runs until every state
/// within the depth cap has been expanded. A complete tree's visit counts
/// do not depend on the search seed, and its `q_mean`s only up to the
/// rounding of the order they were summed in.
pub const FULL_TREE: usize = usize::MAX;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("{0}")]
    Invalid(String),
}

pub fn read_file(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Result of building one search tree for training data.
#[derive(Debug, Clone)]
pub struct Generated {
    pub report: SearchReport,
    pub dataset: Vec<DatasetRecord>,
}

impl Generated {
    pub fn summary(&self) -> String {
        let tree = &self.report.tree;
        let best = tree.fastest_node();
        let mut out = format!(
            "nodes: {}\nevaluations: {}\nroot metric: {:.3} min\nbest metric: {:.3} min\nbest alterations: {}\n",
            tree.len(),
            self.report.evaluations,
            self.report.root_metric,
            tree.node(best).metric_minutes,
            format_path(&tree.path_actions(best)),
        );
        let positives = self.dataset.iter().filter(|r| r.label == 1).count();
        let _ = writeln!(out, "dataset: {} records, {positives} positive", self.dataset.len());
        out
    }
}

fn format_path(path: &[Action]) -> String {
    if path.is_empty() {
        "(none)".to_string()
    } else {
        path.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
    }
}

/// Search in `uct` mode (whatever `config.mode` says) and label the tree.
pub fn generate(
    program: &Program,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
    cutoff: f64,
    max_pairs: usize,
) -> Result<Generated, PipelineError> {
    let config = SearchConfig {
        mode: SearchMode::Uct,
        ..config.clone()
    };
    let report = run_search(program, evaluator, &config, None, None)?;
    if let Some(e) = &report.error {
        return Err(PipelineError::Evaluation(e.clone()));
    }
    let dataset = export_dataset_with(&report.tree, cutoff, max_pairs)?;
    Ok(Generated { report, dataset })
}

/// [`generate`], writing the tree and dataset files. Returns the summary.
pub fn cmd_generate(
    program: &Program,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
    cutoff: f64,
    tree_out: Option<&Path>,
    dataset_out: Option<&Path>,
) -> Result<String, PipelineError> {
    let g = generate(program, evaluator, config, cutoff, DEFAULT_MAX_PAIRS)?;
    if let Some(p) = tree_out {
        write_file(p, &export_tree(&g.report.tree))?;
    }
    if let Some(p) = dataset_out {
        write_file(p, &dataset_to_jsonl(&g.dataset))?;
    }
    Ok(g.summary())
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, PipelineError> {
    let text = read_file(path)?;
    dataset_from_jsonl(&text).map_err(|e| PipelineError::Dataset {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn to_examples(records: &[DatasetRecord]) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example::from_features(&r.features, r.label == 1))
        .collect()
}

/// Seeded shuffle, then the last `holdout` fraction (rounded down) is held out.
pub fn split_holdout<T: Clone>(items: &[T], holdout: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((items.len() as f64) * holdout.clamp(0.0, 1.0)).floor() as usize;
    let cut = items.len() - held;
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect();
    (pick(&idx[..cut]), pick(&idx[cut..]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_records: usize,
    pub heldout_records: usize,
    pub positives: usize,
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
    /// NaN when nothing was held out.
    pub heldout_accuracy: f64,
}

impl TrainSummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "records: {} train, {} held out ({} positive overall)",
            self.train_records, self.heldout_records, self.positives
        );
        let _ = writeln!(out, "loss trace:");
        let n = self.loss_trace.len();
        for (i, l) in self.loss_trace.iter().enumerate() {
            // First ten epochs, then every tenth, then the last.
            if i < 10 || (i + 1) % 10 == 0 || i + 1 == n {
                let _ = writeln!(out, "  epoch {:>4}: {l:.6}", i + 1);
            }
        }
        let _ = writeln!(out, "train accuracy: {:.3}", self.train_accuracy);
        if self.heldout_accuracy.is_nan() {
            let _ = writeln!(out, "held-out accuracy: n/a");
        } else {
            let _ = writeln!(out, "held-out accuracy: {:.3}", self.heldout_accuracy);
        }
        out
    }
}

/// Train on the concatenated records, holding out a seeded fraction.
pub fn train_on(
    records: &[DatasetRecord],
    config: &TrainConfig,
    holdout: f64,
) -> Result<(ModelParams, TrainSummary), PipelineError> {
    if records.is_empty() {
        return Err(ModelError::EmptyDataset.into());
    }
    let width = records[0].features.len();
    if let Some(r) = records.iter().find(|r| r.features.len() != width) {
        return Err(ModelError::Shape {
            got: r.features.len(),
            want: width,
        }
        .into());
    }
    let positives = records.iter().filter(|r| r.label == 1).count();
    if positives == 0 {
        return Err(PipelineError::Invalid(
            "dataset has no positive labels; nothing to learn".into(),
        ));
    }
    let examples = to_examples(records);
    let (fit, held) = split_holdout(&examples, holdout, config.seed);
    let outcome = train(&fit, config)?;
    let summary = TrainSummary {
        train_records: fit.len(),
        heldout_records: held.len(),
        positives,
        train_accuracy: accuracy(&outcome.params, &fit)?,
        heldout_accuracy: accuracy(&outcome.params, &held)?,
        loss_trace: outcome.loss_trace,
    };
    Ok((outcome.params, summary))
}

/// Load and concatenate datasets, train, write the model file.
pub fn cmd_train(
    datasets: &[PathBuf],
    config: &TrainConfig,
    holdout: f64,
    model_out: &Path,
) -> Result<TrainSummary, PipelineError> {
    if datasets.is_empty() {
        return Err(PipelineError::Invalid("at least one dataset file is required".into()));
    }
    let mut records = Vec::new();
    for p in datasets {
        records.extend(load_dataset(p)?);
    }
    let (params, summary) = train_on(&records, config, holdout)?;
    write_file(model_out, &params.to_model_file())?;
    Ok(summary)
}

pub fn load_model(path: &Path) -> Result<ModelParams, PipelineError> {
    Ok(ModelParams::from_model_file(&read_file(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub mode: SearchMode,
    pub seed: u64,
    pub budget: usize,
    pub evaluations: usize,
    pub nodes: usize,
    pub steps_to_target: Option<usize>,
    pub root_metric: f64,
    pub best_metric: f64,
    pub best_actions: Vec<String>,
    pub best_q_mean: f64,
    pub valid: bool,
    pub error: Option<String>,
}

impl SearchSummary {
    pub fn from_report(report: &SearchReport, config: &SearchConfig) -> Self {
        let tree = &report.tree;
        let fastest = tree.fastest_node();
        SearchSummary {
            mode: config.mode,
            seed: config.seed,
            budget: config.budget,
            evaluations: report.evaluations,
            nodes: tree.len(),
            steps_to_target: report.steps_to_target,
            root_metric: report.root_metric,
            best_metric: tree.node(fastest).metric_minutes,
            best_actions: tree.path_actions(fastest).iter().map(|a| a.to_string()).collect(),
            best_q_mean: tree.node(report.best_node).q_mean(),
            valid: report.valid,
            error: report.error.clone(),
        }
    }

    /// Human-readable recommendation.
    pub fn render(&self, has_target: bool) -> String {
        let mut out = String::new();
        if has_target {
            let steps = match self.steps_to_target {
                Some(s) => s.to_string(),
                None => format!("> {}", self.budget),
            };
            let _ = writeln!(out, "steps to target: {steps}");
        }
        let _ = writeln!(out, "evaluations: {} ({} nodes)", self.evaluations, self.nodes);
        if self.best_actions.is_empty() {
            let _ = writeln!(
                out,
                "no alteration improves on the original ({:.3} min)",
                self.root_metric
            );
        } else {
            let _ = writeln!(out, "recommended alterations:");
            for (i, a) in self.best_actions.iter().enumerate() {
                let _ = writeln!(out, "  {}. {a}", i + 1);
            }
            let _ = writeln!(
                out,
                "projected metric: {:.3} min -> {:.3} min ({:.2}x)",
                self.root_metric,
                self.best_metric,
                self.root_metric / self.best_metric
            );
        }
        if let Some(e) = &self.error {
            let _ = writeln!(out, "search stopped early: {e}");
        }
        out
    }
}

/// Run a search; a model is required exactly when `config.mode` is `prior`.
pub fn cmd_search(
    program: &Program,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
    target: Option<&TargetSpec>,
    model: Option<ModelParams>,
) -> Result<(SearchReport, SearchSummary), PipelineError> {
    match (config.mode, &model) {
        (SearchMode::Prior, None) => {
            return Err(PipelineError::Invalid("prior mode needs a model (--model)".into()))
        }
        (SearchMode::Uct | SearchMode::Uniform, Some(_)) => {
            return Err(PipelineError::Invalid(format!(
                "a model is only used in prior mode, not {}",
                config.mode
            )))
        }
        _ => {}
    }
    let prior = model.map(make_prior);
    let report = run_search(program, evaluator, config, target, prior.as_ref().map(|p| p as &dyn Prior))?;
    let summary = SearchSummary::from_report(&report, config);
    Ok((report, summary))
}

/// Probability 1 on the states along a fixed alteration path, 0 elsewhere.
#[derive(Debug, Clone)]
pub struct OraclePrior {
    on_path: HashSet<String>,
}

impl OraclePrior {
    pub fn new(root: &Program, path: &[Action]) -> Result<Self, ActionError> {
        let mut on_path = HashSet::new();
        let mut s = root.clone();
        for a in path {
            s = apply(&s, a)?;
            on_path.insert(s.content_hash());
        }
        Ok(OraclePrior { on_path })
    }
}

impl Prior for OraclePrior {
    fn probability(&self, program: &Program) -> f64 {
        if self.on_path.contains(&program.content_hash()) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// One search per seed and condition.
    pub seeds: Vec<u64>,
    pub budget: usize,
    /// Budget of each source tree used for training data. The default,
    /// [`FULL_TREE`], builds every tree to completion.
    pub source_budget: usize,
    /// Seeds of the source trees; their datasets are concatenated.
    pub source_seeds: Vec<u64>,
    pub max_depth: usize,
    pub c_uct: f64,
    pub c_prior: f64,
    pub gamma: f64,
    pub cutoff: f64,
    pub holdout: f64,
    pub train: TrainConfig,
    pub params: CostParams,
    /// Concurrent searches; 0 means one per core. Has no effect on results.
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        ExperimentConfig {
            seeds: (0..20).collect(),
            budget: 300,
            source_budget: FULL_TREE,
            source_seeds: vec![0],
            max_depth: search.max_depth,
            c_uct: search.c_uct,
            c_prior: search.c_prior,
            gamma: search.gamma,
            cutoff: DEFAULT_CUTOFF,
            holdout: DEFAULT_HOLDOUT,
            train: TrainConfig::default(),
            params: CostParams::default(),
            jobs: 0,
        }
    }
}

impl ExperimentConfig {
    fn search_config(&self, mode: SearchMode, budget: usize, seed: u64) -> SearchConfig {
        SearchConfig {
            mode,
            c_uct: self.c_uct,
            c_prior: self.c_prior,
            gamma: self.gamma,
            max_depth: self.max_depth,
            budget,
            seed,
            ..SearchConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub benchmark: String,
    pub nodes: usize,
    pub records: usize,
    pub positives: usize,
    pub best_metric: f64,
    pub final_loss: f64,
    pub heldout_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub condition: String,
    /// `None` when the target was not found within the budget.
    pub steps: Vec<Option<usize>>,
}

impl ConditionRow {
    pub fn censored(&self) -> usize {
        self.steps.iter().filter(|s| s.is_none()).count()
    }

    /// Median with censored runs ranked above every found one; `None` when
    /// the median falls on a censored run.
    pub fn median(&self) -> Option<f64> {
        median_censored(&self.steps)
    }
}

pub fn median_censored(steps: &[Option<usize>]) -> Option<f64> {
    if steps.is_empty() {
        return None;
    }
    let mut v: Vec<Option<usize>> = steps.to_vec();
    v.sort_by_key(|s| s.unwrap_or(usize::MAX));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].map(|x| x as f64)
    } else {
        match (v[n / 2 - 1], v[n / 2]) {
            (Some(a), Some(b)) => Some((a + b) as f64 / 2.0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub sources: Vec<SourceSummary>,
    pub rows: Vec<ConditionRow>,
    pub checks: Vec<InvariantCheck>,
}

pub const CONDITIONS: [&str; 6] = [
    "uniform",
    "uct-unaided",
    "prior(logreg)",
    "prior(kmeans)",
    "prior(etl)",
    "oracle",
];

impl ExperimentReport {
    pub fn row(&self, condition: &str) -> Option<&ConditionRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn steps_cell(&self, s: Option<usize>) -> String {
        match s {
            Some(s) => s.to_string(),
            None => format!("> {}", self.config.budget),
        }
    }

    fn median_cell(&self, m: Option<f64>) -> String {
        match m {
            Some(m) => format!("{m}"),
            None => format!("> {}", self.config.budget),
        }
    }

    /// Machine-readable form: a config line, one line per source, condition
    /// and check.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![json!({ "kind": "config", "config": self.config })];
        for s in &self.sources {
            lines.push(json!({ "kind": "source", "source": s }));
        }
        for r in &self.rows {
            let steps: Vec<serde_json::Value> = r
                .steps
                .iter()
                .map(|s| match s {
                    Some(v) => json!(v),
                    None => json!(self.steps_cell(None)),
                })
                .collect();
            let median = match r.median() {
                Some(m) => json!(m),
                None => json!(self.median_cell(None)),
            };
            lines.push(json!({
                "kind": "condition",
                "condition": r.condition,
                "steps": steps,
                "median": median,
                "censored": r.censored(),
            }));
        }
        for c in &self.checks {
            lines.push(json!({ "kind": "check", "check": c }));
        }
        let mut out = String::new();
        for l in lines {
            out.push_str(&l.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "steps to the logreg target over {} seeds (budget {})",
            self.config.seeds.len(),
            self.config.budget
        );
        let _ = writeln!(out, "{:<16} {:>10} {:>9}  per seed", "condition", "median", "censored");
        for r in &self.rows {
            let cells: Vec<String> = r.steps.iter().map(|s| self.steps_cell(*s)).collect();
            let _ = writeln!(
                out,
                "{:<16} {:>10} {:>9}  {}",
                r.condition,
                self.median_cell(r.median()),
                r.censored(),
                cells.join(" ")
            );
        }
        let _ = writeln!(out);
        for s in &self.sources {
            let _ = writeln!(
                out,
                "source {:<7} nodes {:>5}  records {:>5}  positive {:>4}  best {:.3} min  loss {:.4}  held-out acc {:.3}",
                s.benchmark, s.nodes, s.records, s.positives, s.best_metric, s.final_loss, s.heldout_accuracy
            );
        }
        let _ = writeln!(out);
        for c in &self.checks {
            let _ = writeln!(
                out,
                "[{}] {}: {}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        out
    }
}

/// Build a source tree, label it and train a prior on it.
pub fn train_source(
    id: BenchmarkId,
    config: &ExperimentConfig,
) -> Result<(ModelParams, SourceSummary), PipelineError> {
    let evaluator = SimEvaluator::new(config.params.clone());
    let program = id.program();
    let mut records = Vec::new();
    let mut nodes = 0;
    let mut best_metric = f64::INFINITY;
    for &seed in &config.source_seeds {
        let sc = config.search_config(SearchMode::Uct, config.source_budget, seed);
        let g = generate(&program, &evaluator, &sc, config.cutoff, DEFAULT_MAX_PAIRS)?;
        nodes += g.report.tree.len();
        let fastest = g.report.tree.fastest_node();
        best_metric = best_metric.min(g.report.tree.node(fastest).metric_minutes);
        records.extend(g.dataset);
    }
    let (params, ts) = train_on(&records, &config.train, config.holdout)?;
    Ok((
        params,
        SourceSummary {
            benchmark: id.name().to_string(),
            nodes,
            records: records.len(),
            positives: ts.positives,
            best_metric,
            final_loss: ts.loss_trace.last().copied().unwrap_or(f64::NAN),
            heldout_accuracy: ts.heldout_accuracy,
        },
    ))
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::Invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// The full transfer experiment on `logreg`: train a prior per source
/// benchmark, then search under every condition for every seed.
pub fn cmd_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, PipelineError> {
    if config.seeds.is_empty() || config.source_seeds.is_empty() {
        return Err(PipelineError::Invalid("seed lists must be non-empty".into()));
    }
    let target_id = BenchmarkId::Logreg;
    let program = target_id.program();
    let target = target_id.target().expect("logreg has a target");
    let path = target_id.known_path().expect("logreg has a known path");
    let oracle = OraclePrior::new(&program, &path)?;
    let evaluator = SimEvaluator::new(config.params.clone());

    in_pool(config.jobs, || {
        let trained: Vec<(ModelParams, SourceSummary)> = BenchmarkId::ALL
            .par_iter()
            .map(|&id| train_source(id, config))
            .collect::<Result<_, _>>()?;
        let priors: Vec<_> = trained.iter().map(|(p, _)| make_prior(p.clone())).collect();

        let runs: Vec<(usize, u64)> = (0..CONDITIONS.len())
            .flat_map(|c| config.seeds.iter().map(move |&s| (c, s)))
            .collect();
        let steps: Vec<Option<usize>> = runs
            .par_iter()
            .map(|&(c, seed)| {
                let (mode, prior): (SearchMode, Option<&dyn Prior>) = match CONDITIONS[c] {
                    "uniform" => (SearchMode::Uniform, None),
                    "uct-unaided" => (SearchMode::Uct, None),
                    "prior(logreg)" => (SearchMode::Prior, Some(&priors[0])),
                    "prior(kmeans)" => (SearchMode::Prior, Some(&priors[1])),
                    "prior(etl)" => (SearchMode::Prior, Some(&priors[2])),
                    _ => (SearchMode::Prior, Some(&oracle)),
                };
                let sc = config.search_config(mode, config.budget, seed);
                let report = run_search(&program, &evaluator, &sc, Some(&target), prior)?;
                Ok(report.steps_to_target)
            })
            .collect::<Result<_, PipelineError>>()?;

        let rows: Vec<ConditionRow> = CONDITIONS
            .iter()
            .enumerate()
            .map(|(c, name)| ConditionRow {
                condition: name.to_string(),
                steps: steps[c * config.seeds.len()..(c + 1) * config.seeds.len()].to_vec(),
            })
            .collect();
        let checks = invariant_checks(&rows, path.len(), config.seeds.len());
        Ok(ExperimentReport {
            config: config.clone(),
            sources: trained.into_iter().map(|(_, s)| s).collect(),
            rows,
            checks,
        })
    })?
}

fn invariant_checks(rows: &[ConditionRow], depth: usize, seeds: usize) -> Vec<InvariantCheck> {
    let oracle = rows.iter().find(|r| r.condition == "oracle");
    let oracle_ok = oracle.is_some_and(|r| r.steps.iter().all(|s| *s == Some(depth)));
    let too_fast: Vec<String> = rows
        .iter()
        .filter(|r| r.steps.iter().any(|s| s.is_some_and(|v| v < depth)))
        .map(|r| r.condition.clone())
        .collect();
    let counts_ok = rows.iter().all(|r| r.steps.len() == seeds);
    vec![
        InvariantCheck {
            name: "oracle-optimum".into(),
            passed: oracle_ok,
            detail: format!("oracle prior reaches the target in exactly {depth} steps on every seed"),
        },
        InvariantCheck {
            name: "depth-lower-bound".into(),
            passed: too_fast.is_empty(),
            detail: if too_fast.is_empty() {
                format!("no condition reaches the target in fewer than {depth} steps")
            } else {
                format!("below {depth} steps: {}", too_fast.join(", "))
            },
        },
        InvariantCheck {
            name: "seed-count".into(),
            passed: counts_ok,
            detail: format!("every condition ran {seeds} seeds"),
        },
    ]
}
