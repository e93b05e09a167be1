//! Random well-formed programs for property tests.

#![allow(dead_code)]

use dataflow_mcts::ir::{parse_program, Program};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Builder {
    rng: ChaCha8Rng,
    lines: Vec<String>,
    entities: Vec<String>,
    persisted: Vec<String>,
    next: usize,
}

impl Builder {
    fn fresh(&mut self) -> String {
        self.next += 1;
        format!("e{}", self.next)
    }

    fn pick(&mut self) -> String {
        self.entities.choose(&mut self.rng).cloned().expect("non-empty")
    }

    fn statement(&mut self, indent: &str, in_loop: bool) {
        let roll = self.rng.gen_range(0..10);
        if self.entities.is_empty() || (!in_loop && roll < 2) {
            if in_loop {
                return;
            }
            let e = self.fresh();
            let records = self.rng.gen_range(1..5_000_000u64);
            let bytes = self.rng.gen_range(1..2_000u64);
            let size = if self.rng.gen_bool(0.3) { "small" } else { "big" };
            self.lines.push(format!("{indent}load {e} {records} {bytes} {size}"));
            self.entities.push(e);
        } else if roll < 5 {
            let (e, s) = (self.fresh(), self.pick());
            let factor = self.rng.gen_range(0..30) as f64 / 10.0;
            self.lines.push(format!("{indent}map {e} {s} {factor}"));
            self.entities.push(e);
        } else if roll < 7 {
            let (e, l, r) = (self.fresh(), self.pick(), self.pick());
            let op = if self.rng.gen_bool(0.2) { "bjoin" } else { "join" };
            self.lines.push(format!("{indent}{op} {e} {l} {r}"));
            self.entities.push(e);
        } else if roll < 8 {
            let (e, s) = (self.fresh(), self.pick());
            let key = if self.rng.gen_bool(0.7) { "k0" } else { "k1" };
            self.lines.push(format!("{indent}partition {e} {s} {key}"));
            self.entities.push(e);
        } else if roll < 9 {
            let e = self.pick();
            if !self.persisted.contains(&e) {
                self.lines.push(format!("{indent}persist {e}"));
                self.persisted.push(e);
            }
        } else if !in_loop {
            let n = self.rng.gen_range(1..6);
            self.lines.push(format!("{indent}loop {n} {{"));
            let body = self.rng.gen_range(1..4);
            let before = self.lines.len();
            for _ in 0..body {
                self.statement("  ", true);
            }
            if self.lines.len() == before {
                let (e, s) = (self.fresh(), self.pick());
                self.lines.push(format!("  map {e} {s} 1"));
                self.entities.push(e);
            }
            self.lines.push("}".to_string());
        }
    }
}

/// Program text with up to `max_statements` top-level statements.
pub fn random_program_text(seed: u64, max_statements: usize) -> String {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        lines: Vec::new(),
        entities: Vec::new(),
        persisted: Vec::new(),
        next: 0,
    };
    let n = b.rng.gen_range(1..=max_statements);
    for _ in 0..n {
        b.statement("", false);
    }
    let mut text = b.lines.join("\n");
    text.push('\n');
    text
}

pub fn random_program(seed: u64, max_statements: usize) -> Program {
    let text = random_program_text(seed, max_statements);
    parse_program(&text).unwrap_or_else(|e| panic!("generator produced invalid program ({e}):\n{text}"))
}

/// A binary model input with every pair slot drawn at density 0.3.
pub fn random_input(pairs: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs * dataflow_mcts::features::PAIR_WIDTH)
        .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
        .collect()
}
