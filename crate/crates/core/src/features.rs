//! Relational encoding of a program: four entity-by-entity relation matrices
//! and a persisted flag per entity, folded into one length-6 vector per
//! unordered entity pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{EntityId, Program, Statement};

/// Slots per pair vector: assign, partition, join, broadcast, unary_i, unary_j.
pub const PAIR_WIDTH: usize = 6;

pub const DEFAULT_MAX_PAIRS: usize = 64;

pub type PairVector = [u8; PAIR_WIDTH];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTensor {
    pub entities: Vec<EntityId>,
    /// `assign[i][j]`: entity i is reachable from entity j through map and
    /// partition assignments.
    pub assign: Vec<Vec<u8>>,
    /// `partition[i][j]`: entity i is the partitioned alias of entity j.
    pub partition: Vec<Vec<u8>>,
    pub join: Vec<Vec<u8>>,
    pub broadcast: Vec<Vec<u8>>,
    pub unary: Vec<u8>,
}

impl RelationTensor {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairVectorSequence {
    pub vectors: Vec<PairVector>,
}

impl PairVectorSequence {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Pair-major flattening.
    pub fn flatten(&self) -> Vec<u8> {
        self.vectors.iter().flat_map(|v| v.iter().copied()).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("pair sequence of length {len} exceeds max_pairs = {max}")]
pub struct PadError {
    pub len: usize,
    pub max: usize,
}

pub fn extract_relations(s: &Program) -> RelationTensor {
    let entities = s.entities();
    let n = entities.len();
    let index = |e: &EntityId| entities.iter().position(|x| x == e).expect("known entity");
    let mut assign = vec![vec![0u8; n]; n];
    let mut partition = vec![vec![0u8; n]; n];
    let mut join = vec![vec![0u8; n]; n];
    let mut broadcast = vec![vec![0u8; n]; n];
    let mut unary = vec![0u8; n];

    for v in s.walk() {
        match v.statement {
            Statement::Map { target, source, .. } => {
                assign[index(target)][index(source)] = 1;
            }
            Statement::PartitionBy { target, source, .. } => {
                let (t, src) = (index(target), index(source));
                assign[t][src] = 1;
                partition[t][src] = 1;
            }
            Statement::Join { left, right, .. } => {
                let (l, r) = (index(left), index(right));
                join[l][r] = 1;
                join[r][l] = 1;
            }
            Statement::BroadcastJoin { left, right, .. } => {
                let (l, r) = (index(left), index(right));
                broadcast[l][r] = 1;
                broadcast[r][l] = 1;
            }
            Statement::Persist { target } => unary[index(target)] = 1,
            Statement::Load { .. } | Statement::Loop { .. } => {}
        }
    }

    // Transitive closure of the assignment edges (Warshall).
    for k in 0..n {
        for i in 0..n {
            if assign[i][k] == 1 {
                for j in 0..n {
                    if assign[k][j] == 1 {
                        assign[i][j] = 1;
                    }
                }
            }
        }
    }

    RelationTensor {
        entities,
        assign,
        partition,
        join,
        broadcast,
        unary,
    }
}

/// One vector per pair `(i, j)`, `i < j`, lexicographic. Directional
/// relations are collapsed by OR-ing both cells.
pub fn synthesize_pairs(t: &RelationTensor) -> PairVectorSequence {
    let n = t.len();
    let either = |m: &Vec<Vec<u8>>, i: usize, j: usize| m[i][j] | m[j][i];
    let mut vectors = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            vectors.push([
                either(&t.assign, i, j),
                either(&t.partition, i, j),
                either(&t.join, i, j),
                either(&t.broadcast, i, j),
                t.unary[i],
                t.unary[j],
            ]);
        }
    }
    PairVectorSequence { vectors }
}

/// Append zero vectors up to `max_pairs`.
pub fn pad_sequence(p: &PairVectorSequence, max_pairs: usize) -> Result<PairVectorSequence, PadError> {
    if p.len() > max_pairs {
        return Err(PadError {
            len: p.len(),
            max: max_pairs,
        });
    }
    let mut vectors = p.vectors.clone();
    vectors.resize(max_pairs, [0; PAIR_WIDTH]);
    Ok(PairVectorSequence { vectors })
}

pub fn pair_sequence(s: &Program) -> PairVectorSequence {
    synthesize_pairs(&extract_relations(s))
}

/// Extract, pair, pad and flatten: the model's input row.
pub fn featurize(s: &Program, max_pairs: usize) -> Result<Vec<u8>, PadError> {
    Ok(pad_sequence(&pair_sequence(s), max_pairs)?.flatten())
}
