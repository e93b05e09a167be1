//! Program representation: an ordered list of dataflow statements over
//! symbolic entities, plus its line-oriented text format.
//!
//! ```text
//! # program: example
//! load points 1000000 400 big
//! load centroids 100 400 small
//! loop 10 {
//!   join assigned points centroids
//!   map sums assigned 1.5
//! }
//! ```

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A symbolic dataflow entity (an RDD in Spark terms).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(name: impl Into<String>) -> Self {
        EntityId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        EntityId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Statement {
    Load {
        target: EntityId,
        records: u64,
        record_bytes: u64,
        small: bool,
    },
    Map {
        target: EntityId,
        source: EntityId,
        cost_factor: f64,
    },
    Join {
        target: EntityId,
        left: EntityId,
        right: EntityId,
    },
    BroadcastJoin {
        target: EntityId,
        left: EntityId,
        right: EntityId,
    },
    PartitionBy {
        target: EntityId,
        source: EntityId,
        key: String,
    },
    Persist {
        target: EntityId,
    },
    Loop {
        iterations: u64,
        body: Vec<Statement>,
    },
}

impl Statement {
    /// The entity this statement defines, if any. `Persist` and `Loop`
    /// define nothing.
    pub fn defines(&self) -> Option<&EntityId> {
        match self {
            Statement::Load { target, .. }
            | Statement::Map { target, .. }
            | Statement::Join { target, .. }
            | Statement::BroadcastJoin { target, .. }
            | Statement::PartitionBy { target, .. } => Some(target),
            Statement::Persist { .. } | Statement::Loop { .. } => None,
        }
    }

    /// Entities read by this statement (a `Persist` reads its target).
    pub fn sources(&self) -> Vec<&EntityId> {
        match self {
            Statement::Load { .. } | Statement::Loop { .. } => vec![],
            Statement::Map { source, .. } | Statement::PartitionBy { source, .. } => vec![source],
            Statement::Join { left, right, .. } | Statement::BroadcastJoin { left, right, .. } => {
                vec![left, right]
            }
            Statement::Persist { target } => vec![target],
        }
    }

    /// Every entity mentioned, definition first.
    pub fn mentions(&self) -> Vec<&EntityId> {
        let mut out: Vec<&EntityId> = self.defines().into_iter().collect();
        for s in self.sources() {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }

    fn rename_sources(&mut self, from: &EntityId, to: &EntityId) {
        let swap = |e: &mut EntityId| {
            if e == from {
                *e = to.clone();
            }
        };
        match self {
            Statement::Map { source, .. } | Statement::PartitionBy { source, .. } => swap(source),
            Statement::Join { left, right, .. } | Statement::BroadcastJoin { left, right, .. } => {
                swap(left);
                swap(right);
            }
            Statement::Loop { body, .. } => {
                for s in body {
                    s.rename_sources(from, to);
                }
            }
            Statement::Load { .. } | Statement::Persist { .. } => {}
        }
    }
}

/// A statement reached during a flattened walk, with the product of the
/// iteration counts of every enclosing loop.
#[derive(Debug, Clone, Copy)]
pub struct Visit<'a> {
    pub statement: &'a Statement,
    pub position: usize,
    pub multiplicity: u64,
    pub in_loop: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum IrError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: entity `{entity}` used before definition")]
    UndefinedEntity { line: usize, entity: String },
    #[error("line {line}: entity `{entity}` defined more than once")]
    DuplicateDefinition { line: usize, entity: String },
    #[error("line {line}: entity `{entity}` persisted more than once")]
    DuplicatePersist { line: usize, entity: String },
    #[error("line {line}: load statements are not allowed inside a loop")]
    LoadInLoop { line: usize },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

/// A validated program. Construct through [`Program::new`] or
/// [`parse_program`]; both reject ill-formed statement lists.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Program {
    name: String,
    statements: Vec<Statement>,
}

impl Program {
    pub fn new(name: impl Into<String>, statements: Vec<Statement>) -> Result<Self, IrError> {
        validate(&statements, None)?;
        Ok(Program {
            name: name.into(),
            statements,
        })
    }

    pub fn empty() -> Self {
        Program::default()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn into_statements(self) -> Vec<Statement> {
        self.statements
    }

    /// Pre-order walk over all non-loop statements, loop bodies flattened in
    /// place. Positions count every statement including loop headers.
    pub fn walk(&self) -> Vec<Visit<'_>> {
        let mut out = Vec::new();
        let mut position = 0;
        walk_into(&self.statements, 1, false, &mut position, &mut out);
        out
    }

    /// Entities in order of first appearance.
    pub fn entities(&self) -> Vec<EntityId> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for v in self.walk() {
            for e in v.statement.mentions() {
                if seen.insert(e.clone()) {
                    out.push(e.clone());
                }
            }
        }
        out
    }

    pub fn defining_statement(&self, entity: &EntityId) -> Option<&Statement> {
        self.walk()
            .into_iter()
            .map(|v| v.statement)
            .find(|s| s.defines() == Some(entity))
    }

    pub fn is_persisted(&self, entity: &EntityId) -> bool {
        self.walk()
            .iter()
            .any(|v| matches!(v.statement, Statement::Persist { target } if target == entity))
    }

    pub fn contains_loop(&self) -> bool {
        self.statements
            .iter()
            .any(|s| matches!(s, Statement::Loop { .. }))
    }

    /// Hex digest of the canonical statement text (the name is excluded, so
    /// identical programs from different sources hash alike).
    pub fn content_hash(&self) -> String {
        let mut body = String::new();
        write_statements(&self.statements, 0, &mut body);
        let digest = Sha256::digest(body.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Insert `stmt` immediately after the statement defining `entity`,
    /// skipping over a directly following `Persist` of the same entity when
    /// `after_persist` is set. Hands the statement back when `entity` is
    /// undefined.
    pub(crate) fn insert_after_definition(
        statements: &mut Vec<Statement>,
        entity: &EntityId,
        stmt: Statement,
        after_persist: bool,
    ) -> Result<(), Statement> {
        let mut pending = Some(stmt);
        insert_rec(statements, entity, &mut pending, after_persist);
        match pending {
            None => Ok(()),
            Some(s) => Err(s),
        }
    }

    /// Rewrite every use of `from` that appears after the statement defining
    /// `alias` (in flattened order) to `to`. Other partitions of `from` keep
    /// reading the original.
    pub(crate) fn rewrite_uses_after(
        statements: &mut [Statement],
        alias: &EntityId,
        from: &EntityId,
        to: &EntityId,
    ) {
        let mut seen = false;
        rewrite_rec(statements, alias, from, to, &mut seen);
    }

    pub(crate) fn from_parts_unchecked(name: String, statements: Vec<Statement>) -> Self {
        Program { name, statements }
    }
}

fn walk_into<'a>(
    stmts: &'a [Statement],
    multiplicity: u64,
    in_loop: bool,
    position: &mut usize,
    out: &mut Vec<Visit<'a>>,
) {
    for s in stmts {
        let here = *position;
        *position += 1;
        match s {
            Statement::Loop { iterations, body } => {
                walk_into(body, multiplicity * iterations, true, position, out);
            }
            _ => out.push(Visit {
                statement: s,
                position: here,
                multiplicity,
                in_loop,
            }),
        }
    }
}

fn insert_rec(
    stmts: &mut Vec<Statement>,
    entity: &EntityId,
    pending: &mut Option<Statement>,
    after_persist: bool,
) {
    let mut i = 0;
    while i < stmts.len() {
        if pending.is_none() {
            return;
        }
        if let Statement::Loop { body, .. } = &mut stmts[i] {
            insert_rec(body, entity, pending, after_persist);
        } else if stmts[i].defines() == Some(entity) {
            let mut at = i + 1;
            if after_persist {
                if let Some(Statement::Persist { target }) = stmts.get(at) {
                    if target == entity {
                        at += 1;
                    }
                }
            }
            stmts.insert(at, pending.take().unwrap());
            return;
        }
        i += 1;
    }
}

fn rewrite_rec(
    stmts: &mut [Statement],
    alias: &EntityId,
    from: &EntityId,
    to: &EntityId,
    seen: &mut bool,
) {
    for s in stmts.iter_mut() {
        if let Statement::Loop { body, .. } = s {
            rewrite_rec(body, alias, from, to, seen);
            continue;
        }
        let sibling_partition =
            matches!(s, Statement::PartitionBy { source, .. } if source == from);
        if *seen && !sibling_partition {
            s.rename_sources(from, to);
        }
        if s.defines() == Some(alias) {
            *seen = true;
        }
    }
}

/// Check definition order, uniqueness, and loop restrictions. `lines` maps
/// pre-order statement positions (loop headers included) to source lines;
/// without it, errors report the 1-based statement position.
fn validate(stmts: &[Statement], lines: Option<&[usize]>) -> Result<(), IrError> {
    struct Ctx<'l> {
        defined: HashSet<EntityId>,
        persisted: HashSet<EntityId>,
        position: usize,
        lines: Option<&'l [usize]>,
    }
    impl Ctx<'_> {
        fn line(&self, pos: usize) -> usize {
            self.lines
                .and_then(|l| l.get(pos).copied())
                .unwrap_or(pos + 1)
        }
    }
    fn check_name(ctx: &Ctx<'_>, pos: usize, name: &str) -> Result<(), IrError> {
        if name.is_empty() || !name.chars().all(is_ident_char) {
            return Err(IrError::Invalid {
                line: ctx.line(pos),
                message: format!("invalid identifier `{name}`"),
            });
        }
        Ok(())
    }
    fn rec(stmts: &[Statement], in_loop: bool, ctx: &mut Ctx<'_>) -> Result<(), IrError> {
        for s in stmts {
            let pos = ctx.position;
            ctx.position += 1;
            match s {
                Statement::Loop { iterations, body } => {
                    if *iterations < 1 {
                        return Err(IrError::Invalid {
                            line: ctx.line(pos),
                            message: "loop iteration count must be at least 1".into(),
                        });
                    }
                    rec(body, true, ctx)?;
                    continue;
                }
                Statement::Load { .. } if in_loop => {
                    return Err(IrError::LoadInLoop {
                        line: ctx.line(pos),
                    })
                }
                Statement::Map { cost_factor, .. }
                    if !(cost_factor.is_finite() && *cost_factor >= 0.0) =>
                {
                    return Err(IrError::Invalid {
                        line: ctx.line(pos),
                        message: format!("cost factor must be finite and >= 0, got {cost_factor}"),
                    });
                }
                Statement::PartitionBy { key, .. } => check_name(ctx, pos, key)?,
                _ => {}
            }
            for src in s.sources() {
                check_name(ctx, pos, src.as_str())?;
                if !ctx.defined.contains(src) {
                    return Err(IrError::UndefinedEntity {
                        line: ctx.line(pos),
                        entity: src.to_string(),
                    });
                }
            }
            if let Statement::Persist { target } = s {
                if !ctx.persisted.insert(target.clone()) {
                    return Err(IrError::DuplicatePersist {
                        line: ctx.line(pos),
                        entity: target.to_string(),
                    });
                }
            }
            if let Some(t) = s.defines() {
                check_name(ctx, pos, t.as_str())?;
                if !ctx.defined.insert(t.clone()) {
                    return Err(IrError::DuplicateDefinition {
                        line: ctx.line(pos),
                        entity: t.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
    let mut ctx = Ctx {
        defined: HashSet::new(),
        persisted: HashSet::new(),
        position: 0,
        lines,
    };
    rec(stmts, false, &mut ctx)
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '\'' | '.' | '-')
}

const NAME_HEADER: &str = "# program:";

/// Parse the line-oriented IR format. A leading `# program: <name>` comment
/// sets the program name; every other `#` starts a comment.
pub fn parse_program(text: &str) -> Result<Program, IrError> {
    struct Frame {
        iterations: u64,
        body: Vec<Statement>,
        line: usize,
    }
    let mut name = String::new();
    let mut top: Vec<Statement> = Vec::new();
    let mut stack: Vec<Frame> = Vec::new();
    // Source line per pre-order position. Loop headers take their slot when
    // opened, so positions line up with `validate`'s walk.
    let mut lines: Vec<usize> = Vec::new();
    let mut seen_statement = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed_raw = raw.trim();
        if !seen_statement && name.is_empty() {
            if let Some(rest) = trimmed_raw.strip_prefix(NAME_HEADER) {
                name = rest.trim().to_string();
                continue;
            }
        }
        let content = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        seen_statement = true;
        let syntax = |message: String| IrError::Syntax { line, message };

        if tokens == ["}"] {
            let frame = stack
                .pop()
                .ok_or_else(|| syntax("unmatched `}`".into()))?;
            let stmt = Statement::Loop {
                iterations: frame.iterations,
                body: frame.body,
            };
            match stack.last_mut() {
                Some(parent) => parent.body.push(stmt),
                None => top.push(stmt),
            }
            continue;
        }

        let arity = |n: usize| -> Result<(), IrError> {
            if tokens.len() != n {
                Err(IrError::Syntax {
                    line,
                    message: format!(
                        "`{}` expects {} argument(s), found {}",
                        tokens[0],
                        n - 1,
                        tokens.len() - 1
                    ),
                })
            } else {
                Ok(())
            }
        };
        let ident = |tok: &str| -> Result<EntityId, IrError> {
            if tok.chars().all(is_ident_char) {
                Ok(EntityId::new(tok))
            } else {
                Err(IrError::Syntax {
                    line,
                    message: format!("invalid identifier `{tok}`"),
                })
            }
        };
        let count = |tok: &str, what: &str| -> Result<u64, IrError> {
            tok.parse::<u64>().map_err(|_| IrError::Syntax {
                line,
                message: format!("expected {what} count, found `{tok}`"),
            })
        };

        let stmt = match tokens[0] {
            "load" => {
                arity(5)?;
                let small = match tokens[4] {
                    "big" => false,
                    "small" => true,
                    other => return Err(syntax(format!("expected `big` or `small`, found `{other}`"))),
                };
                Statement::Load {
                    target: ident(tokens[1])?,
                    records: count(tokens[2], "record")?,
                    record_bytes: count(tokens[3], "byte")?,
                    small,
                }
            }
            "map" => {
                arity(4)?;
                let cost_factor = tokens[3]
                    .parse::<f64>()
                    .map_err(|_| syntax(format!("expected cost factor, found `{}`", tokens[3])))?;
                Statement::Map {
                    target: ident(tokens[1])?,
                    source: ident(tokens[2])?,
                    cost_factor,
                }
            }
            "join" | "bjoin" => {
                arity(4)?;
                let (target, left, right) = (ident(tokens[1])?, ident(tokens[2])?, ident(tokens[3])?);
                if tokens[0] == "join" {
                    Statement::Join { target, left, right }
                } else {
                    Statement::BroadcastJoin { target, left, right }
                }
            }
            "partition" => {
                arity(4)?;
                Statement::PartitionBy {
                    target: ident(tokens[1])?,
                    source: ident(tokens[2])?,
                    key: tokens[3].to_string(),
                }
            }
            "persist" => {
                arity(2)?;
                Statement::Persist {
                    target: ident(tokens[1])?,
                }
            }
            "loop" => {
                if tokens.len() != 3 || tokens[2] != "{" {
                    return Err(syntax("expected `loop <N> {`".into()));
                }
                let iterations = count(tokens[1], "iteration")?;
                lines.push(line);
                stack.push(Frame {
                    iterations,
                    body: Vec::new(),
                    line,
                });
                continue;
            }
            other => return Err(syntax(format!("unknown statement `{other}`"))),
        };
        lines.push(line);
        match stack.last_mut() {
            Some(frame) => frame.body.push(stmt),
            None => top.push(stmt),
        }
    }
    if let Some(frame) = stack.pop() {
        return Err(IrError::Syntax {
            line: frame.line,
            message: "loop block is never closed".into(),
        });
    }
    validate(&top, Some(&lines))?;
    Ok(Program {
        name,
        statements: top,
    })
}

/// Canonical text form. Loop bodies are indented two spaces per level.
pub fn serialize_program(p: &Program) -> String {
    let mut out = String::new();
    if !p.name.is_empty() {
        out.push_str(NAME_HEADER);
        out.push(' ');
        out.push_str(&p.name);
        out.push('\n');
    }
    write_statements(&p.statements, 0, &mut out);
    out
}

fn write_statements(stmts: &[Statement], depth: usize, out: &mut String) {
    use std::fmt::Write;
    let pad = "  ".repeat(depth);
    for s in stmts {
        out.push_str(&pad);
        match s {
            Statement::Load {
                target,
                records,
                record_bytes,
                small,
            } => {
                let size = if *small { "small" } else { "big" };
                let _ = writeln!(out, "load {target} {records} {record_bytes} {size}");
            }
            Statement::Map {
                target,
                source,
                cost_factor,
            } => {
                let _ = writeln!(out, "map {target} {source} {cost_factor}");
            }
            Statement::Join { target, left, right } => {
                let _ = writeln!(out, "join {target} {left} {right}");
            }
            Statement::BroadcastJoin { target, left, right } => {
                let _ = writeln!(out, "bjoin {target} {left} {right}");
            }
            Statement::PartitionBy { target, source, key } => {
                let _ = writeln!(out, "partition {target} {source} {key}");
            }
            Statement::Persist { target } => {
                let _ = writeln!(out, "persist {target}");
            }
            Statement::Loop { iterations, body } => {
                let _ = writeln!(out, "loop {iterations} {{");
                write_statements(body, depth + 1, out);
                out.push_str(&pad);
                out.push_str("}\n");
            }
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_program(self))
    }
}
