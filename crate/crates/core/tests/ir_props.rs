mod common;

use std::collections::BTreeSet;

use dataflow_mcts::bench::BenchmarkId;
use dataflow_mcts::ir::{parse_program, serialize_program, EntityId, Program, Statement};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn flat_program(seed: u64) -> Program {
    // Top-level statements only, so any permutation is a candidate program.
    loop_free(common::random_program(seed, 10))
}

fn loop_free(p: Program) -> Program {
    fn inline(stmts: Vec<Statement>, out: &mut Vec<Statement>) {
        for s in stmts {
            match s {
                Statement::Loop { body, .. } => inline(body, out),
                s => out.push(s),
            }
        }
    }
    let mut stmts = Vec::new();
    inline(p.into_statements(), &mut stmts);
    Program::new("", stmts).unwrap()
}

/// Independent definition-order check over a flat statement list.
fn uses_before_definition(stmts: &[Statement]) -> bool {
    let mut defined: BTreeSet<&EntityId> = BTreeSet::new();
    for s in stmts {
        let used: Vec<&EntityId> = match s {
            Statement::Load { .. } | Statement::Loop { .. } => vec![],
            Statement::Map { source, .. } | Statement::PartitionBy { source, .. } => vec![source],
            Statement::Join { left, right, .. } | Statement::BroadcastJoin { left, right, .. } => vec![left, right],
            Statement::Persist { target } => vec![target],
        };
        if used.iter().any(|u| !defined.contains(u)) {
            return true;
        }
        if let Some(t) = s.defines() {
            defined.insert(t);
        }
    }
    false
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialize_then_parse_is_identity(seed in any::<u64>()) {
        let p = common::random_program(seed, 12);
        let text = serialize_program(&p);
        prop_assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn entities_are_the_distinct_mentions(seed in any::<u64>()) {
        let p = common::random_program(seed, 12);
        let ents = p.entities();
        let distinct: BTreeSet<EntityId> = p.walk().iter().flat_map(|v| v.statement.mentions()).cloned().collect();
        let listed: BTreeSet<EntityId> = ents.iter().cloned().collect();
        prop_assert_eq!(ents.len(), listed.len());
        prop_assert_eq!(listed, distinct);
    }

    #[test]
    fn permuted_statements_are_rejected_iff_a_use_precedes_its_definition(seed in any::<u64>(), shuffle in any::<u64>()) {
        let p = flat_program(seed);
        let mut stmts = p.statements().to_vec();
        stmts.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let bad = uses_before_definition(&stmts);
        prop_assert_eq!(Program::new("", stmts).is_err(), bad);
    }
}

#[test]
fn nested_loop_round_trip() {
    let text = "load a 10 10 big\nloop 3 {\n  map b a 1\n  loop 2 {\n    map c b 0.5\n  }\n}\n";
    let p = parse_program(text).unwrap();
    assert_eq!(serialize_program(&p), text);
    assert_eq!(parse_program(&serialize_program(&p)).unwrap(), p);
}

#[test]
fn benchmarks_round_trip() {
    for id in BenchmarkId::ALL {
        let p = id.program();
        assert_eq!(parse_program(&serialize_program(&p)).unwrap(), p);
    }
}

#[test]
fn logreg_entities_in_file_order() {
    let p = BenchmarkId::Logreg.program();
    // First-occurrence scan of the shipped text, independent of the parser.
    let mut order: Vec<String> = Vec::new();
    for line in BenchmarkId::Logreg.source().lines() {
        let t: Vec<&str> = line.split_whitespace().collect();
        let names: &[&str] = match t.first() {
            Some(&"load") | Some(&"persist") => &t[1..2],
            Some(&"map") | Some(&"partition") => &t[1..3],
            Some(&"join") | Some(&"bjoin") => &t[1..4],
            _ => &[],
        };
        for n in names {
            if !order.iter().any(|o| o == n) {
                order.push(n.to_string());
            }
        }
    }
    let got: Vec<String> = p.entities().iter().map(|e| e.to_string()).collect();
    assert_eq!(got, order);
    let set: BTreeSet<&str> = got.iter().map(String::as_str).collect();
    assert_eq!(set, BTreeSet::from(["data", "labels", "weights", "joined", "grads"]));
}
