//! One PASS/FAIL line per acceptance criterion. Tolerances are pinned here.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see
//! the lines; the full transfer experiment takes minutes.

mod common;

use std::collections::{BTreeMap, VecDeque};

use dataflow_mcts::actions::{apply, legal_actions, Action};
use dataflow_mcts::bench::BenchmarkId;
use dataflow_mcts::cost::{evaluate, CostParams, SimEvaluator};
use dataflow_mcts::features::pair_sequence;
use dataflow_mcts::ir::{parse_program, Program};
use dataflow_mcts::model::{grad_check, grad_check_with, gradient, ModelParams, FILTERS, KERNEL};
use dataflow_mcts::pipeline::{cmd_experiment, ExperimentConfig, OraclePrior};
use dataflow_mcts::search::{run_search, select_prior_with, SearchConfig, SearchMode, SearchTree};

const RATIO_RANGE: (f64, f64) = (4.0, 5.0);
const ORACLE_SEEDS: u64 = 20;
const TARGET_DEPTH: usize = 4;
const UNIFORM_CENSORED_FRACTION: f64 = 0.5;
const KMEANS_SPEEDUP: f64 = 5.0;
const BRUTE_FORCE_BUDGET: usize = 500;
const BRUTE_FORCE_DEPTH: usize = 3;
const GRAD_TOL: f64 = 1e-4;
const GRAD_DRAWS: u64 = 10;
const MUTATION_FLOOR: f64 = 1e-2;
const PROPERTY_CASES: u64 = 200;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn calibration() -> Outcome {
    let params = CostParams::default();
    let root = evaluate(&BenchmarkId::Logreg.program(), &params).metric_minutes;
    let mut target = BenchmarkId::Logreg.program();
    for a in BenchmarkId::Logreg.known_path().unwrap() {
        target = apply(&target, &a).unwrap();
    }
    let fast = evaluate(&target, &params).metric_minutes;
    let ratio = root / fast;
    outcome(
        (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&ratio),
        format!("root {root:.3} min, target {fast:.3} min, ratio {ratio:.3}"),
    )
}

fn oracle_optimum() -> Outcome {
    let program = BenchmarkId::Logreg.program();
    let target = BenchmarkId::Logreg.target().unwrap();
    let oracle = OraclePrior::new(&program, &BenchmarkId::Logreg.known_path().unwrap()).unwrap();
    let evaluator = SimEvaluator::new(CostParams::default());
    let steps: Vec<Option<usize>> = (0..ORACLE_SEEDS)
        .map(|seed| {
            let config = SearchConfig {
                mode: SearchMode::Prior,
                budget: 300,
                seed,
                ..SearchConfig::default()
            };
            run_search(&program, &evaluator, &config, Some(&target), Some(&oracle))
                .unwrap()
                .steps_to_target
        })
        .collect();
    outcome(
        steps.iter().all(|s| *s == Some(TARGET_DEPTH)),
        format!("steps per seed {steps:?}"),
    )
}

/// Censored medians (`None`) compare above every finite one and equal to
/// each other, so `a < b` never holds between two censored values.
fn le(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a <= b,
        (_, None) => true,
        (None, Some(_)) => false,
    }
}

fn lt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        (None, _) => false,
    }
}

fn show(m: Option<f64>, budget: usize) -> String {
    m.map(|m| m.to_string()).unwrap_or_else(|| format!("> {budget}"))
}

fn transfer_ordering() -> Outcome {
    let config = ExperimentConfig::default();
    let report = cmd_experiment(&config).unwrap();
    let median = |c: &str| report.row(c).unwrap().median();
    let (own, kmeans, etl, uct) = (
        median("prior(logreg)"),
        median("prior(kmeans)"),
        median("prior(etl)"),
        median("uct-unaided"),
    );
    let uniform = report.row("uniform").unwrap();
    let censored = uniform.censored() as f64 / uniform.steps.len() as f64;
    let ordered = le(own, kmeans) && le(kmeans, etl) && lt(etl, uct);
    // A censored uct median is only known to exceed the budget, which is
    // then the largest value the bound may assume.
    let speedup = match (kmeans, uct) {
        (Some(k), Some(u)) => k <= u / KMEANS_SPEEDUP,
        (Some(k), None) => k <= config.budget as f64 / KMEANS_SPEEDUP,
        (None, _) => false,
    };
    let b = config.budget;
    outcome(
        ordered && censored >= UNIFORM_CENSORED_FRACTION && speedup,
        format!(
            "medians self {} kmeans {} etl {} uct {}; uniform censored {:.0}%; ordering {}, kmeans 5x {}",
            show(own, b),
            show(kmeans, b),
            show(etl, b),
            show(uct, b),
            100.0 * censored,
            ordered,
            speedup
        ),
    )
}

/// Every state reachable in at most `depth` alterations, deduplicated.
fn reachable(root: &Program, depth: usize) -> Vec<Program> {
    let mut seen = BTreeMap::new();
    let mut queue = VecDeque::from([(root.clone(), 0)]);
    while let Some((p, d)) = queue.pop_front() {
        let key = dataflow_mcts::ir::serialize_program(&p);
        if seen.contains_key(&key) {
            continue;
        }
        seen.insert(key, p.clone());
        if d < depth {
            for a in legal_actions(&p) {
                queue.push_back((apply(&p, &a).unwrap(), d + 1));
            }
        }
    }
    seen.into_values().collect()
}

fn brute_force() -> Outcome {
    let program = parse_program("load a 1000000 100 big\nloop 10 {\n  map b a 1.0\n}\n").unwrap();
    assert_eq!(program.entities().len(), 2);
    let params = CostParams::default();
    let states = reachable(&program, BRUTE_FORCE_DEPTH);
    let optimum = states
        .iter()
        .map(|s| evaluate(s, &params).metric_minutes)
        .fold(f64::INFINITY, f64::min);
    let config = SearchConfig {
        budget: BRUTE_FORCE_BUDGET,
        max_depth: BRUTE_FORCE_DEPTH,
        ..SearchConfig::default()
    };
    let report = run_search(&program, &SimEvaluator::new(params), &config, None, None).unwrap();
    let found = report.tree.node(report.best_node).metric_minutes;
    let fastest = report.tree.node(report.tree.fastest_node()).metric_minutes;
    outcome(
        found == optimum,
        format!(
            "{} states, optimum {optimum} min, best node {found} min (fastest node {fastest} min)",
            states.len()
        ),
    )
}

fn bandit_invariants() -> Outcome {
    let program = BenchmarkId::Logreg.program();
    let evaluator = SimEvaluator::new(CostParams::default());
    let mut failures = Vec::new();

    // Bookkeeping after every iteration: replay prefixes of one seeded run.
    for k in 1..=60 {
        let config = SearchConfig {
            budget: k,
            seed: 9,
            ..SearchConfig::default()
        };
        let tree = run_search(&program, &evaluator, &config, None, None).unwrap().tree;
        for n in tree.nodes() {
            let q = n.q_mean();
            if !(0.0..=1.0).contains(&n.own_reward) || !(0.0..=1.0).contains(&q) {
                failures.push(format!("reward out of range at node {} after {k}", n.id));
            }
            let below: u64 = n.child_ids().map(|c| tree.node(c).visits).sum();
            if n.visits != 1 + below {
                failures.push(format!("visit identity fails at node {} after {k}", n.id));
            }
            let visited_child = n.child_ids().any(|c| tree.node(c).visits > 1);
            if visited_child && !n.untried().is_empty() {
                failures.push(format!("node {} descended with untried actions after {k}", n.id));
            }
        }
    }

    // Worked example for the prior rule, q + c P / (1 + N), over the four
    // root actions of a two-load program.
    let p = parse_program("load a 10 10 big\nload b 10 10 big").unwrap();
    let mut tree = SearchTree::new(p.clone(), 1.0, 4);
    let priors = [0.1, 0.9, 0.3, 0.0];
    if select_prior_with(&tree, 0, 1.0, &priors).unwrap() != 1 {
        failures.push("prior argmax over fresh children".into());
    }
    let second = legal_actions(&p)[1].clone();
    let id = tree.add_child(0, 1, apply(&p, &second).unwrap(), 1.0, 0.05);
    tree.node_mut(id).q_sum = 0.5;
    tree.node_mut(id).visits = 10;
    // Scores 0.1, 0.05 + 0.9 / 11 = 0.132, 0.3, 0.0.
    if select_prior_with(&tree, 0, 1.0, &priors).unwrap() != 2 {
        failures.push("prior argmax after ten visits".into());
    }
    // Without exploration only the visited child scores above zero.
    if select_prior_with(&tree, 0, 0.0, &priors).unwrap() != 1 {
        failures.push("prior argmax with c = 0".into());
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "rewards in [0,1], visit identity, unvisited-first, prior worked example".into()
        } else {
            failures.join("; ")
        },
    )
}

fn gradient_check() -> Outcome {
    let max_pairs = 16;
    let mut worst: f64 = 0.0;
    for draw in 0..GRAD_DRAWS {
        let params = ModelParams::random(max_pairs, 100 + draw);
        let x = common::random_input(max_pairs, 200 + draw);
        worst = worst.max(grad_check(&params, &x, (draw % 2) as f64));
    }
    let params = ModelParams::random(max_pairs, 7);
    let x = common::random_input(max_pairs, 8);
    let mutated = grad_check_with(&params, &x, 1.0, |p, x, y| {
        let mut g = gradient(p, x, y);
        for v in &mut g[..FILTERS * KERNEL] {
            *v *= 0.5;
        }
        g
    });
    outcome(
        worst < GRAD_TOL && mutated > MUTATION_FLOOR,
        format!("max relative error {worst:.2e} over {GRAD_DRAWS} draws, corrupted gradient {mutated:.2e}"),
    )
}

fn features() -> Outcome {
    let mut failures = Vec::new();
    for id in BenchmarkId::ALL {
        let p = id.program();
        let e = p.entities().len();
        let len = pair_sequence(&p).flatten().len();
        if len != 6 * e * (e - 1) / 2 {
            failures.push(format!("{id}: {len} values for {e} entities"));
        }
    }
    for seed in 0..PROPERTY_CASES {
        let p = common::random_program(seed, 12);
        let before = pair_sequence(&p);
        for e in p.entities() {
            let Ok(q) = apply(&p, &Action::Persist(e.clone())) else {
                continue;
            };
            let after = pair_sequence(&q);
            let changed_binary = before
                .vectors
                .iter()
                .zip(&after.vectors)
                .any(|(a, b)| a[..4] != b[..4]);
            if before.len() != after.len() || changed_binary {
                failures.push(format!("persist {e} on random program {seed}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("pair lengths match on all benchmarks; persist touches only unary slots on {PROPERTY_CASES} programs")
        } else {
            failures.join("; ")
        },
    )
}

fn determinism() -> Outcome {
    let config = ExperimentConfig {
        seeds: vec![0, 1, 2],
        budget: 60,
        source_budget: 300,
        ..ExperimentConfig::default()
    };
    let a = cmd_experiment(&config).unwrap().to_jsonl();
    let b = cmd_experiment(&config).unwrap().to_jsonl();
    outcome(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 calibration anchor", calibration),
        ("2 oracle-prior optimum", oracle_optimum),
        ("3 transfer ordering", transfer_ordering),
        ("4 brute-force equivalence", brute_force),
        ("5 bandit invariants", bandit_invariants),
        ("6 gradient check", gradient_check),
        ("7 feature shape and coupling", features),
        ("8 determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
