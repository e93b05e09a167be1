//! Legal program alterations and the deterministic transition they induce.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{EntityId, Program, Statement};

/// The partition key every program may use.
pub const DEFAULT_KEY: &str = "k0";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Persist(EntityId),
    Partition { entity: EntityId, key: String },
    /// Rewrite the `Join` at this pre-order statement position (loop
    /// headers counted) into a broadcast join.
    Broadcast { join: usize },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Persist(e) => write!(f, "persist {e}"),
            Action::Partition { entity, key } => write!(f, "partition {entity} {key}"),
            Action::Broadcast { join } => write!(f, "broadcast {join}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ActionError {
    #[error("illegal action `{action}`: {reason}")]
    Illegal { action: String, reason: String },
    #[error("target refers to unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("target line {line}: {message}")]
    TargetSyntax { line: usize, message: String },
    #[error("target spec is empty")]
    EmptyTarget,
}

/// Candidate partition keys: the default key followed by any other key
/// already used by a `PartitionBy` in the program, sorted.
pub fn key_vocabulary(p: &Program) -> Vec<String> {
    let mut extra = BTreeSet::new();
    for v in p.walk() {
        if let Statement::PartitionBy { key, .. } = v.statement {
            if key != DEFAULT_KEY {
                extra.insert(key.clone());
            }
        }
    }
    std::iter::once(DEFAULT_KEY.to_string())
        .chain(extra)
        .collect()
}

/// An entity is small if it derives, through maps and partitions only, from
/// a load flagged `small`.
pub fn small_entities(p: &Program) -> BTreeSet<EntityId> {
    let mut small = BTreeSet::new();
    for v in p.walk() {
        match v.statement {
            Statement::Load {
                target,
                small: true,
                ..
            } => {
                small.insert(target.clone());
            }
            Statement::Map { target, source, .. } | Statement::PartitionBy { target, source, .. }
                if small.contains(source) =>
            {
                small.insert(target.clone());
            }
            _ => {}
        }
    }
    small
}

/// Canonical, duplicate-free list: persists by appearance order, then
/// partitions by (entity appearance, key), then broadcasts by position.
pub fn legal_actions(s: &Program) -> Vec<Action> {
    let entities = s.entities();
    let keys = key_vocabulary(s);
    let walk = s.walk();

    let mut persisted = BTreeSet::new();
    // (source, key) pairs already partitioned, and alias -> key.
    let mut partitioned_from = BTreeSet::new();
    let mut alias_key: HashMap<&EntityId, &str> = HashMap::new();
    for v in &walk {
        match v.statement {
            Statement::Persist { target } => {
                persisted.insert(target.clone());
            }
            Statement::PartitionBy {
                target,
                source,
                key,
            } => {
                partitioned_from.insert((source.clone(), key.clone()));
                alias_key.insert(target, key.as_str());
            }
            _ => {}
        }
    }

    let mut out = Vec::new();
    for e in &entities {
        if !persisted.contains(e) {
            out.push(Action::Persist(e.clone()));
        }
    }
    for e in &entities {
        for k in &keys {
            let is_alias_with_key = alias_key.get(e).is_some_and(|ak| *ak == k.as_str());
            if !is_alias_with_key && !partitioned_from.contains(&(e.clone(), k.clone())) {
                out.push(Action::Partition {
                    entity: e.clone(),
                    key: k.clone(),
                });
            }
        }
    }
    let small = small_entities(s);
    for v in &walk {
        if let Statement::Join { left, right, .. } = v.statement {
            if small.contains(left) || small.contains(right) {
                out.push(Action::Broadcast { join: v.position });
            }
        }
    }
    out
}

/// Name of the alias introduced by partitioning `entity` by `key`.
pub fn alias_name(p: &Program, entity: &EntityId, key: &str) -> EntityId {
    let base = if key == DEFAULT_KEY {
        format!("{entity}_p")
    } else {
        format!("{entity}_p_{key}")
    };
    let taken: BTreeSet<EntityId> = p.entities().into_iter().collect();
    let mut candidate = EntityId::new(base.clone());
    let mut n = 2;
    while taken.contains(&candidate) {
        candidate = EntityId::new(format!("{base}_{n}"));
        n += 1;
    }
    candidate
}

/// Apply `a` to `s`, returning the successor program. `s` is untouched.
pub fn apply(s: &Program, a: &Action) -> Result<Program, ActionError> {
    if !legal_actions(s).contains(a) {
        return Err(ActionError::Illegal {
            action: a.to_string(),
            reason: "not in the legal action set of this program".into(),
        });
    }
    let mut stmts = s.statements().to_vec();
    match a {
        Action::Persist(e) => {
            let persist = Statement::Persist { target: e.clone() };
            Program::insert_after_definition(&mut stmts, e, persist, false)
                .map_err(|_| illegal(a, "entity has no definition"))?;
        }
        Action::Partition { entity, key } => {
            let alias = alias_name(s, entity, key);
            let part = Statement::PartitionBy {
                target: alias.clone(),
                source: entity.clone(),
                key: key.clone(),
            };
            Program::insert_after_definition(&mut stmts, entity, part, true)
                .map_err(|_| illegal(a, "entity has no definition"))?;
            Program::rewrite_uses_after(&mut stmts, &alias, entity, &alias);
        }
        Action::Broadcast { join } => {
            let mut position = 0;
            if !to_broadcast(&mut stmts, *join, &mut position) {
                return Err(illegal(a, "no join at that position"));
            }
        }
    }
    // Legal actions keep programs well formed; re-validate anyway so a bug
    // here surfaces as an error instead of a corrupt search tree.
    Program::new(s.name(), stmts).map_err(|e| illegal(a, &e.to_string()))
}

fn illegal(a: &Action, reason: &str) -> ActionError {
    ActionError::Illegal {
        action: a.to_string(),
        reason: reason.to_string(),
    }
}

fn to_broadcast(stmts: &mut [Statement], at: usize, position: &mut usize) -> bool {
    for s in stmts.iter_mut() {
        let here = *position;
        *position += 1;
        if let Statement::Loop { body, .. } = s {
            if to_broadcast(body, at, position) {
                return true;
            }
            continue;
        }
        if here == at {
            if let Statement::Join {
                target,
                left,
                right,
            } = s
            {
                *s = Statement::BroadcastJoin {
                    target: target.clone(),
                    left: left.clone(),
                    right: right.clone(),
                };
                return true;
            }
            return false;
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyPattern {
    Literal(String),
    /// Shared variable, written `$NAME`; all occurrences must bind equally.
    Wildcard(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fact {
    Persisted(EntityId),
    Partitioned(EntityId, KeyPattern),
    /// The join defining this entity is a broadcast join.
    Broadcast(EntityId),
}

impl Fact {
    fn entity(&self) -> &EntityId {
        match self {
            Fact::Persisted(e) | Fact::Partitioned(e, _) | Fact::Broadcast(e) => e,
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fact::Persisted(e) => write!(f, "persisted {e}"),
            Fact::Partitioned(e, KeyPattern::Literal(k)) => write!(f, "partitioned {e} {k}"),
            Fact::Partitioned(e, KeyPattern::Wildcard(k)) => write!(f, "partitioned {e} ${k}"),
            Fact::Broadcast(e) => write!(f, "broadcast {e}"),
        }
    }
}

/// A conjunction of facts a program must exhibit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    facts: Vec<Fact>,
}

impl TargetSpec {
    pub fn new(facts: Vec<Fact>) -> Result<Self, ActionError> {
        if facts.is_empty() {
            return Err(ActionError::EmptyTarget);
        }
        Ok(TargetSpec { facts })
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    /// Parse the one-fact-per-line text format (`#` comments allowed).
    pub fn parse(text: &str) -> Result<Self, ActionError> {
        let mut facts = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = content.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let err = |message: &str| ActionError::TargetSyntax {
                line,
                message: message.to_string(),
            };
            let fact = match (tokens[0], tokens.len()) {
                ("persisted", 2) => Fact::Persisted(EntityId::new(tokens[1])),
                ("broadcast", 2) => Fact::Broadcast(EntityId::new(tokens[1])),
                ("partitioned", 3) => {
                    let key = match tokens[2].strip_prefix('$') {
                        Some("") => return Err(err("empty wildcard name")),
                        Some(w) => KeyPattern::Wildcard(w.to_string()),
                        None => KeyPattern::Literal(tokens[2].to_string()),
                    };
                    Fact::Partitioned(EntityId::new(tokens[1]), key)
                }
                ("persisted" | "broadcast" | "partitioned", _) => {
                    return Err(err("wrong number of arguments"))
                }
                _ => return Err(err(&format!("unknown fact `{}`", tokens[0]))),
            };
            facts.push(fact);
        }
        TargetSpec::new(facts)
    }

    pub fn to_text(&self) -> String {
        self.facts.iter().map(|f| format!("{f}\n")).collect()
    }
}

/// True iff every fact holds in `s`, with wildcard keys bound consistently.
///
/// A fact may name an entity `s` does not define yet, as long as the name is
/// an alias derivable from one of its entities (`data_p` from `data`); such
/// facts are simply false. Any other unknown name is an error.
pub fn satisfies(s: &Program, t: &TargetSpec) -> Result<bool, ActionError> {
    let entities = s.entities();
    for f in t.facts() {
        let e = f.entity();
        if !entities.contains(e) && !is_derivable_alias(e, &entities) {
            return Err(ActionError::UnknownEntity(e.to_string()));
        }
    }

    let mut bindings: HashMap<&str, &str> = HashMap::new();
    let walk = s.walk();
    for f in t.facts() {
        let holds = match f {
            Fact::Persisted(e) => s.is_persisted(e),
            Fact::Broadcast(e) => walk.iter().any(
                |v| matches!(v.statement, Statement::BroadcastJoin { target, .. } if target == e),
            ),
            Fact::Partitioned(e, pattern) => {
                let key = walk.iter().find_map(|v| match v.statement {
                    Statement::PartitionBy { target, key, .. } if target == e => {
                        Some(key.as_str())
                    }
                    _ => None,
                });
                match (key, pattern) {
                    (None, _) => false,
                    (Some(k), KeyPattern::Literal(want)) => k == want,
                    (Some(k), KeyPattern::Wildcard(var)) => match bindings.get(var.as_str()) {
                        Some(bound) => *bound == k,
                        None => {
                            bindings.insert(var.as_str(), k);
                            true
                        }
                    },
                }
            }
        };
        if !holds {
            return Ok(false);
        }
    }
    Ok(true)
}

fn is_derivable_alias(name: &EntityId, entities: &[EntityId]) -> bool {
    entities.iter().any(|base| {
        name.as_str()
            .strip_prefix(base.as_str())
            .is_some_and(|rest| rest.starts_with("_p"))
    })
}
