//! Deterministic execution-time surrogate for dataflow programs, and the
//! evaluator contract the search engine consumes.
//!
//! The model charges, in abstract cost units:
//!
//! * `load`: `alpha * bytes`
//! * `map`: `mu * bytes(source) * cost_factor`
//! * `join`: `mu * (l + r)` compute plus `sigma * (l + r)` shuffle, the
//!   shuffle waived when both sides are partition aliases with equal keys
//! * `bjoin`: `beta * bytes(small) * workers` broadcast plus `mu * bytes(large)`;
//!   a persisted small side is broadcast once per materialization
//! * `partition`: `sigma * bytes(source)`
//!
//! Every statement runs once per iteration of its enclosing loops. The first
//! read of a freshly computed entity is pipelined with its computation;
//! every later read either re-runs the entity's whole lineage or, for a
//! persisted entity, costs `rho * bytes` (`sigma * bytes` when the persisted
//! set exceeds the memory budget).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::ir::{serialize_program, EntityId, Program, Statement};

/// Calibrated defaults, shipped as a key=value file.
pub const DEFAULT_PARAMS_TEXT: &str = include_str!("../config/cost_params.conf");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Load cost per byte.
    pub alpha: f64,
    /// Compute cost per byte per unit of `cost_factor`.
    pub mu: f64,
    /// Shuffle cost per byte.
    pub sigma: f64,
    /// Broadcast cost per byte per worker.
    pub beta: f64,
    /// Cached read cost per byte.
    pub rho: f64,
    pub workers: u32,
    /// Minutes per cost unit.
    pub kappa: f64,
    pub memory_budget_bytes: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing parameter `{0}`")]
    Missing(&'static str),
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

impl CostParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        let rates = [
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("beta", self.beta),
            ("rho", self.rho),
            ("kappa", self.kappa),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ParamsError::Invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if self.workers < 1 {
            return Err(ParamsError::Invalid("workers must be >= 1".into()));
        }
        if self.rho >= self.sigma {
            return Err(ParamsError::Invalid(
                "rho must be strictly below sigma".into(),
            ));
        }
        if let Some(b) = self.memory_budget_bytes {
            if !(b.is_finite() && b >= 0.0) {
                return Err(ParamsError::Invalid(
                    "memory_budget_bytes must be finite and >= 0".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "alpha = {}\nmu = {}\nsigma = {}\nbeta = {}\nrho = {}\nworkers = {}\nkappa = {}\n",
            self.alpha, self.mu, self.sigma, self.beta, self.rho, self.workers, self.kappa
        );
        if let Some(b) = self.memory_budget_bytes {
            s.push_str(&format!("memory_budget_bytes = {b}\n"));
        }
        s
    }
}

impl Default for CostParams {
    fn default() -> Self {
        DEFAULT_PARAMS_TEXT
            .parse()
            .expect("shipped cost parameters are valid")
    }
}

impl FromStr for CostParams {
    type Err = ParamsError;

    /// `key = value` lines; `#` comments. `memory_budget_bytes` may be
    /// omitted or set to `none`.
    fn from_str(text: &str) -> Result<Self, ParamsError> {
        let mut values: HashMap<String, String> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or(ParamsError::Syntax {
                line,
                message: "expected `key = value`".into(),
            })?;
            let key = k.trim().to_string();
            if !matches!(
                key.as_str(),
                "alpha" | "mu" | "sigma" | "beta" | "rho" | "workers" | "kappa" | "memory_budget_bytes"
            ) {
                return Err(ParamsError::Syntax {
                    line,
                    message: format!("unknown parameter `{key}`"),
                });
            }
            values.insert(key, v.trim().to_string());
        }
        let num = |name: &'static str| -> Result<f64, ParamsError> {
            let v = values.get(name).ok_or(ParamsError::Missing(name))?;
            v.parse::<f64>()
                .map_err(|_| ParamsError::Invalid(format!("{name}: not a number: `{v}`")))
        };
        let workers_text = values.get("workers").ok_or(ParamsError::Missing("workers"))?;
        let workers = workers_text
            .parse::<u32>()
            .map_err(|_| ParamsError::Invalid(format!("workers: not a count: `{workers_text}`")))?;
        let memory_budget_bytes = match values.get("memory_budget_bytes").map(String::as_str) {
            None | Some("none") => None,
            Some(_) => Some(num("memory_budget_bytes")?),
        };
        let params = CostParams {
            alpha: num("alpha")?,
            mu: num("mu")?,
            sigma: num("sigma")?,
            beta: num("beta")?,
            rho: num("rho")?,
            workers,
            kappa: num("kappa")?,
            memory_budget_bytes,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// Pre-order statement position (loop headers counted).
    pub position: usize,
    pub statement: String,
    /// Cost units, summed over every execution of the statement.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub metric_minutes: f64,
    pub breakdown: Vec<LedgerEntry>,
}

impl EvaluationResult {
    pub fn total_units(&self) -> f64 {
        self.breakdown.iter().map(|e| e.cost).sum()
    }
}

/// Static per-program facts the interpreter consults.
struct Facts<'p> {
    bytes: HashMap<&'p EntityId, f64>,
    defs: HashMap<&'p EntityId, &'p Statement>,
    persisted: HashSet<&'p EntityId>,
    alias_key: HashMap<&'p EntityId, &'p str>,
    small: BTreeSet<EntityId>,
    read_rate: f64,
}

impl<'p> Facts<'p> {
    fn new(p: &'p Program, params: &CostParams) -> Self {
        let mut bytes: HashMap<&EntityId, f64> = HashMap::new();
        let mut defs = HashMap::new();
        let mut persisted = HashSet::new();
        let mut alias_key = HashMap::new();
        for v in p.walk() {
            let s = v.statement;
            if let Some(t) = s.defines() {
                defs.insert(t, s);
            }
            let b = match s {
                Statement::Load {
                    records,
                    record_bytes,
                    ..
                } => Some(*records as f64 * *record_bytes as f64),
                Statement::Map { source, .. } => Some(bytes[source]),
                Statement::PartitionBy { source, key, target } => {
                    alias_key.insert(target, key.as_str());
                    Some(bytes[source])
                }
                Statement::Join { left, right, .. } | Statement::BroadcastJoin { left, right, .. } => {
                    Some(bytes[left] + bytes[right])
                }
                Statement::Persist { target } => {
                    persisted.insert(target);
                    None
                }
                Statement::Loop { .. } => None,
            };
            if let (Some(t), Some(b)) = (s.defines(), b) {
                bytes.insert(t, b);
            }
        }
        let persisted_bytes: f64 = persisted.iter().map(|e| bytes[*e]).sum();
        let spill = params
            .memory_budget_bytes
            .is_some_and(|budget| persisted_bytes > budget);
        Facts {
            bytes,
            defs,
            persisted,
            alias_key,
            small: crate::actions::small_entities(p),
            read_rate: if spill { params.sigma } else { params.rho },
        }
    }

    fn co_partitioned(&self, l: &EntityId, r: &EntityId) -> bool {
        match (self.alias_key.get(l), self.alias_key.get(r)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    /// (broadcast side, large side) of a broadcast join.
    fn broadcast_sides<'e>(&self, l: &'e EntityId, r: &'e EntityId) -> (&'e EntityId, &'e EntityId) {
        match (self.small.contains(l), self.small.contains(r)) {
            (true, false) => (l, r),
            (false, true) => (r, l),
            _ if self.bytes[l] < self.bytes[r] => (l, r),
            _ => (r, l),
        }
    }

    /// Cost of the statement's own work, excluding reads of its inputs.
    /// `broadcast_charged` is consulted for a persisted broadcast side.
    fn own_cost(&self, s: &Statement, params: &CostParams, broadcast_charged: bool) -> f64 {
        match s {
            Statement::Load { target, .. } => params.alpha * self.bytes[target],
            Statement::Map {
                source,
                cost_factor,
                ..
            } => params.mu * self.bytes[source] * cost_factor,
            Statement::Join { left, right, .. } => {
                let moved = self.bytes[left] + self.bytes[right];
                let shuffle = if self.co_partitioned(left, right) {
                    0.0
                } else {
                    params.sigma * moved
                };
                params.mu * moved + shuffle
            }
            Statement::BroadcastJoin { left, right, .. } => {
                let (small, large) = self.broadcast_sides(left, right);
                let broadcast = if broadcast_charged {
                    0.0
                } else {
                    params.beta * self.bytes[small] * params.workers as f64
                };
                broadcast + params.mu * self.bytes[large]
            }
            Statement::PartitionBy { source, .. } => params.sigma * self.bytes[source],
            Statement::Persist { .. } | Statement::Loop { .. } => 0.0,
        }
    }
}

struct Interpreter<'p, 'c> {
    facts: Facts<'p>,
    params: &'c CostParams,
    uses: HashMap<&'p EntityId, u64>,
    broadcast_done: HashSet<&'p EntityId>,
    lineage_memo: HashMap<&'p EntityId, f64>,
    ledger: Vec<f64>,
}

impl<'p> Interpreter<'p, '_> {
    /// Full recomputation cost of `e` from its nearest persisted ancestors.
    fn lineage(&mut self, e: &'p EntityId) -> f64 {
        if let Some(c) = self.lineage_memo.get(e) {
            return *c;
        }
        let def = self.facts.defs[e];
        let persisted_small = match def {
            Statement::BroadcastJoin { left, right, .. } => {
                let (small, _) = self.facts.broadcast_sides(left, right);
                self.facts.persisted.contains(small)
            }
            _ => false,
        };
        let mut cost = self.facts.own_cost(def, self.params, persisted_small);
        for src in def.sources() {
            cost += self.fetch_stale(src);
        }
        self.lineage_memo.insert(e, cost);
        cost
    }

    /// Cost of reading `e` when it is not fresh off its own computation.
    fn fetch_stale(&mut self, e: &'p EntityId) -> f64 {
        if self.facts.persisted.contains(e) {
            self.facts.read_rate * self.facts.bytes[e]
        } else {
            self.lineage(e)
        }
    }

    fn run(&mut self, stmts: &'p [Statement], position: &mut usize) {
        for s in stmts {
            let here = *position;
            *position += 1;
            if let Statement::Loop { iterations, body } = s {
                let start = *position;
                for _ in 0..*iterations {
                    *position = start;
                    self.run(body, position);
                }
                continue;
            }
            let mut cost = match s {
                Statement::BroadcastJoin { left, right, .. } => {
                    let (small, _) = self.facts.broadcast_sides(left, right);
                    let charged = self.facts.persisted.contains(small)
                        && !self.broadcast_done.insert(small);
                    self.facts.own_cost(s, self.params, charged)
                }
                Statement::Persist { .. } => 0.0,
                _ => self.facts.own_cost(s, self.params, false),
            };
            if !matches!(s, Statement::Persist { .. }) {
                for src in s.sources() {
                    let n = self.uses.entry(src).or_insert(0);
                    if *n > 0 {
                        cost += self.fetch_stale(src);
                    }
                    *self.uses.entry(src).or_insert(0) += 1;
                }
            }
            if let Some(t) = s.defines() {
                self.uses.insert(t, 0);
                self.broadcast_done.remove(t);
            }
            self.ledger[here] += cost;
        }
    }
}

fn count_positions(stmts: &[Statement]) -> usize {
    stmts
        .iter()
        .map(|s| match s {
            Statement::Loop { body, .. } => 1 + count_positions(body),
            _ => 1,
        })
        .sum()
}

/// Simulated execution time of `s`. Pure in `(s, params)`.
pub fn evaluate(s: &Program, params: &CostParams) -> EvaluationResult {
    let mut interp = Interpreter {
        facts: Facts::new(s, params),
        params,
        uses: HashMap::new(),
        broadcast_done: HashSet::new(),
        lineage_memo: HashMap::new(),
        ledger: vec![0.0; count_positions(s.statements())],
    };
    let mut position = 0;
    interp.run(s.statements(), &mut position);

    let breakdown: Vec<LedgerEntry> = s
        .walk()
        .into_iter()
        .map(|v| LedgerEntry {
            position: v.position,
            statement: statement_label(v.statement),
            cost: interp.ledger[v.position],
        })
        .collect();
    let total: f64 = breakdown.iter().map(|e| e.cost).sum();
    EvaluationResult {
        metric_minutes: params.kappa * total,
        breakdown,
    }
}

fn statement_label(s: &Statement) -> String {
    let single = Program::from_parts_unchecked(String::new(), vec![s.clone()]);
    serialize_program(&single).trim_end().to_string()
}

/// `evaluate` with the metric scaled by a seeded draw from
/// `Uniform[1 - noise_rel, 1 + noise_rel]`. The ledger is scaled alike.
pub fn evaluate_noisy(s: &Program, params: &CostParams, noise_rel: f64, seed: u64) -> EvaluationResult {
    assert!(
        (0.0..1.0).contains(&noise_rel),
        "noise_rel must lie in [0, 1), got {noise_rel}"
    );
    let mut r = evaluate(s, params);
    if noise_rel == 0.0 {
        return r;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factor = 1.0 + rng.gen_range(-noise_rel..=noise_rel);
    r.metric_minutes *= factor;
    for e in &mut r.breakdown {
        e.cost *= factor;
    }
    r
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("failed to run evaluator command `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("evaluator command `{command}` exited with {status}: {stderr}")]
    Failed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("evaluator command `{command}` timed out after {timeout:?}")]
    Timeout { command: String, timeout: Duration },
    #[error("evaluator output is not a single decimal metric: `{0}`")]
    Unparseable(String),
    #[error("evaluator returned a non-positive or non-finite metric {0}")]
    BadMetric(f64),
}

/// Anything that can put a number on a program. Implementations must be
/// callable from several threads at once.
pub trait Evaluator: Sync {
    fn evaluate(&self, program: &Program) -> Result<EvaluationResult, EvalError>;
}

#[derive(Debug, Clone, Default)]
pub struct SimEvaluator {
    pub params: CostParams,
}

impl SimEvaluator {
    pub fn new(params: CostParams) -> Self {
        SimEvaluator { params }
    }
}

impl Evaluator for SimEvaluator {
    fn evaluate(&self, program: &Program) -> Result<EvaluationResult, EvalError> {
        Ok(evaluate(program, &self.params))
    }
}

/// Noisy simulator. The noise draw for a program is seeded from the run seed
/// and the program's content hash, so revisiting a program reproduces it.
#[derive(Debug, Clone)]
pub struct NoisySimEvaluator {
    pub params: CostParams,
    pub noise_rel: f64,
    pub seed: u64,
}

impl Evaluator for NoisySimEvaluator {
    fn evaluate(&self, program: &Program) -> Result<EvaluationResult, EvalError> {
        let h = u64::from_str_radix(&program.content_hash(), 16).unwrap_or(0);
        Ok(evaluate_noisy(
            program,
            &self.params,
            self.noise_rel,
            self.seed ^ h,
        ))
    }
}

/// Counting semaphore capping concurrent subprocesses.
#[derive(Debug)]
struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Runs a shell command per evaluation: the serialized program goes to its
/// stdin and a single decimal (minutes) is read from its stdout.
#[derive(Debug)]
pub struct ExternalEvaluator {
    command: String,
    timeout: Duration,
    limiter: Limiter,
}

impl ExternalEvaluator {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalEvaluator::with_limits(command, Duration::from_secs(600), 4)
    }

    pub fn with_limits(command: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Self {
        ExternalEvaluator {
            command: command.into(),
            timeout,
            limiter: Limiter {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                max: max_in_flight.max(1),
            },
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, program: &Program) -> Result<EvaluationResult, EvalError> {
        evaluate_external_inner(program, &self.command, self.timeout, &self.limiter)
    }
}

/// One-shot external evaluation with a 10 minute timeout.
pub fn evaluate_external(s: &Program, command: &str) -> Result<EvaluationResult, EvalError> {
    ExternalEvaluator::new(command).evaluate(s)
}

fn evaluate_external_inner(
    s: &Program,
    command: &str,
    timeout: Duration,
    limiter: &Limiter,
) -> Result<EvaluationResult, EvalError> {
    let _slot = limiter.acquire();
    let spawn_err = |source| EvalError::Spawn {
        command: command.to_string(),
        source,
    };
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(spawn_err)?;

    let input = serialize_program(s);
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = std::thread::spawn(move || {
        // A command that ignores its input may close the pipe early.
        let _ = stdin.write_all(input.as_bytes());
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stdout.read_to_string(&mut buf);
        buf
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let err_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });

    let status = match child.wait_timeout(timeout).map_err(spawn_err)? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(EvalError::Timeout {
                command: command.to_string(),
                timeout,
            });
        }
    };
    let _ = writer.join();
    let out = reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(EvalError::Failed {
            command: command.to_string(),
            status: status.to_string(),
            stderr: err.trim().to_string(),
        });
    }
    let text = out.trim();
    let metric: f64 = text
        .parse()
        .map_err(|_| EvalError::Unparseable(text.to_string()))?;
    if !(metric.is_finite() && metric > 0.0) {
        return Err(EvalError::BadMetric(metric));
    }
    Ok(EvaluationResult {
        metric_minutes: metric,
        breakdown: Vec::new(),
    })
}

/// Which evaluator the CLI should build: `sim`, `sim-noisy`, or
/// `extern:<command>`.
#[derive(Debug, Clone, PartialEq)]
pub enum EvaluatorSpec {
    Sim,
    SimNoisy,
    External(String),
}

impl FromStr for EvaluatorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(EvaluatorSpec::Sim),
            "sim-noisy" => Ok(EvaluatorSpec::SimNoisy),
            _ => match s.strip_prefix("extern:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(EvaluatorSpec::External(cmd.to_string())),
                _ => Err(format!(
                    "unknown evaluator `{s}` (expected sim, sim-noisy, or extern:<cmd>)"
                )),
            },
        }
    }
}

impl fmt::Display for EvaluatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvaluatorSpec::Sim => f.write_str("sim"),
            EvaluatorSpec::SimNoisy => f.write_str("sim-noisy"),
            EvaluatorSpec::External(c) => write!(f, "extern:{c}"),
        }
    }
}
