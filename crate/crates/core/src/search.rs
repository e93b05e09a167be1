//! Monte Carlo tree search over program alterations.
//!
//! Each iteration walks down from the root with a tree policy, adds one new
//! node, evaluates its program, and back-propagates the normalized reward.
//! There are no random playouts: the new node's own evaluation is the
//! sample. Three tree policies are available:
//!
//! * `uct`: expand a uniformly random untried action while any remain,
//!   otherwise descend to the child maximizing
//!   `q_mean + 2 c sqrt(2 ln n / n_j)`.
//! * `prior`: every legal action competes in one argmax of
//!   `q_mean + c prior(T(s, a)) / (1 + N(s, a))` (unvisited: `q_mean = 0`,
//!   `N = 0`); an unvisited winner is expanded, a visited one descended into.
//! * `uniform`: choose uniformly among untried actions and expandable
//!   children at each level.
//!
//! Nodes at the depth cap, and nodes whose whole subtree has been built,
//! are exhausted and never selected again, so every iteration produces
//! exactly one evaluation until the reachable space runs out.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{apply, legal_actions, satisfies, Action, ActionError, TargetSpec};
use crate::cost::{EvalError, Evaluator};
use crate::features::{featurize, PadError, DEFAULT_MAX_PAIRS};
use crate::ir::Program;

/// A probability over programs, used as `P(s, a) = prior(T(s, a))`.
pub trait Prior: Sync {
    fn probability(&self, program: &Program) -> f64;
}

impl<F> Prior for F
where
    F: Fn(&Program) -> f64 + Sync,
{
    fn probability(&self, program: &Program) -> f64 {
        self(program)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Uct,
    Prior,
    Uniform,
}

impl FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uct" => Ok(SearchMode::Uct),
            "prior" => Ok(SearchMode::Prior),
            "uniform" => Ok(SearchMode::Uniform),
            _ => Err(format!("unknown mode `{s}` (expected uct, prior, or uniform)")),
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::Uct => "uct",
            SearchMode::Prior => "prior",
            SearchMode::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RewardNormalization {
    /// `(t_root - t) / t_root`.
    RelativeImprovement,
    /// `(t_root / t - 1) / (cap - 1)`: speedup ratio, saturating at `cap`.
    SpeedupRatio { cap: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub mode: SearchMode,
    pub c_uct: f64,
    pub c_prior: f64,
    pub gamma: f64,
    pub max_depth: usize,
    /// Maximum number of node evaluations, the root's excluded.
    pub budget: usize,
    pub seed: u64,
    pub reward_floor: f64,
    pub reward_cap: f64,
    pub normalization: RewardNormalization,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            mode: SearchMode::Uct,
            c_uct: 0.5,
            c_prior: 1.0,
            gamma: 1.0,
            max_depth: 4,
            budget: 300,
            seed: 0,
            reward_floor: 0.0,
            reward_cap: 1.0,
            normalization: RewardNormalization::RelativeImprovement,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.to_string()));
        if self.budget < 1 {
            return bad("budget must be >= 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.c_uct.is_finite() && self.c_uct >= 0.0) {
            return bad("c_uct must be finite and >= 0");
        }
        if !(self.c_prior.is_finite() && self.c_prior >= 0.0) {
            return bad("c_prior must be finite and >= 0");
        }
        if !(0.0 <= self.reward_floor && self.reward_floor < self.reward_cap && self.reward_cap <= 1.0) {
            return bad("reward bounds must satisfy 0 <= floor < cap <= 1");
        }
        if let RewardNormalization::SpeedupRatio { cap } = self.normalization {
            if !(cap > 1.0 && cap.is_finite()) {
                return bad("speedup cap must be finite and > 1");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("prior mode requires a prior")]
    MissingPrior,
    #[error("node {0} has no selectable children")]
    NoChildren(NodeId),
    #[error("metric must be positive, got {0}")]
    NonPositiveMetric(f64),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error("root evaluation failed: {0}")]
    RootEvaluation(EvalError),
    #[error("tree has {0} visited node(s); at least 2 are needed")]
    TooSmall(usize),
    #[error(transparent)]
    Pad(#[from] PadError),
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub state: Program,
    pub incoming_action: Option<Action>,
    pub metric_minutes: f64,
    /// Normalized reward of this node's own evaluation.
    pub own_reward: f64,
    pub q_sum: f64,
    pub visits: u64,
    /// Legal actions in canonical order; empty at the depth cap.
    pub actions: Vec<Action>,
    /// Child per action, aligned with `actions`; `None` means untried.
    pub children: Vec<Option<NodeId>>,
    pub exhausted: bool,
}

impl SearchNode {
    pub fn q_mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.q_sum / self.visits as f64
        }
    }

    pub fn untried(&self) -> Vec<usize> {
        (0..self.actions.len())
            .filter(|&i| self.children[i].is_none())
            .collect()
    }

    pub fn child_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children.iter().flatten().copied()
    }
}

/// Arena of search nodes; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
    max_depth: usize,
}

impl SearchTree {
    /// A tree holding only `root`, already evaluated once with reward 0.
    pub fn new(root: Program, root_metric: f64, max_depth: usize) -> Self {
        let actions = if max_depth == 0 {
            Vec::new()
        } else {
            legal_actions(&root)
        };
        let exhausted = actions.is_empty();
        SearchTree {
            nodes: vec![SearchNode {
                id: 0,
                parent: None,
                depth: 0,
                state: root,
                incoming_action: None,
                metric_minutes: root_metric,
                own_reward: 0.0,
                q_sum: 0.0,
                visits: 1,
                children: vec![None; actions.len()],
                actions,
                exhausted,
            }],
            max_depth,
        }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Attach the successor reached by `parent.actions[action_index]`.
    /// Statistics start at zero; call [`backprop`] afterwards.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        action_index: usize,
        state: Program,
        metric_minutes: f64,
        own_reward: f64,
    ) -> NodeId {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        let actions = if depth >= self.max_depth {
            Vec::new()
        } else {
            legal_actions(&state)
        };
        let exhausted = actions.is_empty();
        let incoming = self.nodes[parent].actions[action_index].clone();
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            depth,
            state,
            incoming_action: Some(incoming),
            metric_minutes,
            own_reward,
            q_sum: 0.0,
            visits: 0,
            children: vec![None; actions.len()],
            actions,
            exhausted,
        });
        self.nodes[parent].children[action_index] = Some(id);
        self.refresh_exhaustion(parent);
        id
    }

    fn refresh_exhaustion(&mut self, mut id: NodeId) {
        loop {
            let n = &self.nodes[id];
            let done = n
                .children
                .iter()
                .all(|c| c.is_some_and(|c| self.nodes[c].exhausted));
            if !done || n.exhausted {
                return;
            }
            self.nodes[id].exhausted = true;
            match self.nodes[id].parent {
                Some(p) => id = p,
                None => return,
            }
        }
    }

    /// Actions from the root to `id`.
    pub fn path_actions(&self, id: NodeId) -> Vec<Action> {
        let mut out = Vec::new();
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(self.nodes[cur].incoming_action.clone().expect("non-root"));
            cur = p;
        }
        out.reverse();
        out
    }

    /// Node with the largest `q_mean` among visited nodes (lowest id on ties).
    pub fn best_node(&self) -> NodeId {
        let mut best = 0;
        for n in &self.nodes {
            if n.visits >= 1 && n.q_mean() > self.nodes[best].q_mean() {
                best = n.id;
            }
        }
        best
    }

    /// Node with the smallest measured metric (lowest id on ties).
    pub fn fastest_node(&self) -> NodeId {
        let mut best = 0;
        for n in &self.nodes {
            if n.metric_minutes < self.nodes[best].metric_minutes {
                best = n.id;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub tree: SearchTree,
    /// 1-based evaluation index at which a target-satisfying node was first
    /// created.
    pub steps_to_target: Option<usize>,
    pub best_node: NodeId,
    /// Evaluator calls after the root's.
    pub evaluations: usize,
    pub root_metric: f64,
    /// False when an evaluation failed and the search stopped early.
    pub valid: bool,
    pub error: Option<String>,
}

impl SearchReport {
    /// `steps_to_target`, or `"> budget"` when not found.
    pub fn steps_display(&self, budget: usize) -> String {
        match self.steps_to_target {
            Some(s) => s.to_string(),
            None => format!("> {budget}"),
        }
    }
}

/// Map a measured metric to a unit-interval reward relative to the root.
pub fn normalize_reward(metric_minutes: f64, root_metric_minutes: f64) -> Result<f64, SearchError> {
    normalize_with(
        metric_minutes,
        root_metric_minutes,
        RewardNormalization::RelativeImprovement,
        0.0,
        1.0,
    )
}

pub fn normalize_with(
    metric: f64,
    root: f64,
    scheme: RewardNormalization,
    floor: f64,
    cap: f64,
) -> Result<f64, SearchError> {
    for m in [metric, root] {
        if !(m > 0.0 && m.is_finite()) {
            return Err(SearchError::NonPositiveMetric(m));
        }
    }
    let raw = match scheme {
        RewardNormalization::RelativeImprovement => (root - metric) / root,
        RewardNormalization::SpeedupRatio { cap: s } => (root / metric - 1.0) / (s - 1.0),
    };
    Ok(raw.clamp(floor, cap))
}

/// Index (into `node.actions`) of the child maximizing the UCB1 score.
/// Exhausted children are skipped; ties go to the lowest index.
pub fn select_uct(tree: &SearchTree, node: NodeId, c: f64) -> Result<usize, SearchError> {
    let n = tree.node(node);
    let ln_n = (n.visits.max(1) as f64).ln();
    let mut best: Option<(usize, f64)> = None;
    for (i, child) in n.children.iter().enumerate() {
        let Some(cid) = child else { continue };
        let ch = tree.node(*cid);
        if ch.exhausted {
            continue;
        }
        let score = if ch.visits == 0 {
            f64::INFINITY
        } else {
            ch.q_mean() + 2.0 * c * (2.0 * ln_n / ch.visits as f64).sqrt()
        };
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i).ok_or(SearchError::NoChildren(node))
}

/// Index of the action maximizing `q_mean + c * prior / (1 + N)` over all
/// selectable actions of `node`, given each action's prior.
pub fn select_prior_with(tree: &SearchTree, node: NodeId, c: f64, priors: &[f64]) -> Result<usize, SearchError> {
    let n = tree.node(node);
    let mut best: Option<(usize, f64)> = None;
    for (i, child) in n.children.iter().enumerate() {
        let (q, visits) = match child {
            Some(cid) => {
                let ch = tree.node(*cid);
                if ch.exhausted {
                    continue;
                }
                (ch.q_mean(), ch.visits)
            }
            None => (0.0, 0),
        };
        let score = q + c * priors[i] / (1.0 + visits as f64);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i).ok_or(SearchError::NoChildren(node))
}

/// [`select_prior_with`], computing `prior(T(s, a))` for every action.
pub fn select_prior(tree: &SearchTree, node: NodeId, c: f64, prior: &dyn Prior) -> Result<usize, SearchError> {
    let priors = successor_priors(tree, node, prior)?;
    select_prior_with(tree, node, c, &priors)
}

fn successor_priors(tree: &SearchTree, node: NodeId, prior: &dyn Prior) -> Result<Vec<f64>, SearchError> {
    let n = tree.node(node);
    n.actions
        .iter()
        .zip(&n.children)
        .map(|(a, child)| match child {
            Some(cid) => Ok(prior.probability(&tree.node(*cid).state)),
            None => Ok(prior.probability(&apply(&n.state, a)?)),
        })
        .collect()
}

/// Add `reward` at `leaf` and `gamma^k * reward` at its k-th ancestor;
/// every node on the path gains one visit.
pub fn backprop(tree: &mut SearchTree, leaf: NodeId, reward: f64, gamma: f64) {
    let mut value = reward;
    let mut cur = Some(leaf);
    while let Some(id) = cur {
        let n = tree.node_mut(id);
        n.q_sum += value;
        n.visits += 1;
        value *= gamma;
        cur = n.parent;
    }
}

/// Run the search from `root_program`. An evaluator failure after the root
/// ends the search early with `valid = false`.
pub fn run_search(
    root_program: &Program,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
    target: Option<&TargetSpec>,
    prior: Option<&dyn Prior>,
) -> Result<SearchReport, SearchError> {
    config.validate()?;
    if config.mode == SearchMode::Prior && prior.is_none() {
        return Err(SearchError::MissingPrior);
    }
    if let Some(t) = target {
        // Surfaces unknown-entity errors before any evaluation.
        satisfies(root_program, t)?;
    }
    let root_metric = evaluator
        .evaluate(root_program)
        .map_err(SearchError::RootEvaluation)?
        .metric_minutes;
    if !(root_metric > 0.0 && root_metric.is_finite()) {
        return Err(SearchError::NonPositiveMetric(root_metric));
    }

    let mut tree = SearchTree::new(root_program.clone(), root_metric, config.max_depth);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut prior_memo: HashMap<NodeId, Vec<f64>> = HashMap::new();
    let mut evaluations = 0;
    let mut steps_to_target = None;
    let mut error = None;

    while evaluations < config.budget && !tree.root().exhausted {
        let (parent, idx) = descend(&tree, config, &mut rng, prior, &mut prior_memo)?;
        let state = apply(&tree.node(parent).state, &tree.node(parent).actions[idx])?;
        let metric = match evaluator.evaluate(&state) {
            Ok(r) => r.metric_minutes,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let reward = match normalize_with(
            metric,
            root_metric,
            config.normalization,
            config.reward_floor,
            config.reward_cap,
        ) {
            Ok(r) => r,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        evaluations += 1;
        if steps_to_target.is_none() {
            if let Some(t) = target {
                if satisfies(&state, t)? {
                    steps_to_target = Some(evaluations);
                }
            }
        }
        let child = tree.add_child(parent, idx, state, metric, reward);
        backprop(&mut tree, child, reward, config.gamma);
    }

    Ok(SearchReport {
        best_node: tree.best_node(),
        tree,
        steps_to_target,
        evaluations,
        root_metric,
        valid: error.is_none(),
        error,
    })
}

/// Walk the tree policy down to the (node, action index) to expand.
fn descend(
    tree: &SearchTree,
    config: &SearchConfig,
    rng: &mut ChaCha8Rng,
    prior: Option<&dyn Prior>,
    prior_memo: &mut HashMap<NodeId, Vec<f64>>,
) -> Result<(NodeId, usize), SearchError> {
    let mut node = 0;
    loop {
        let n = tree.node(node);
        let idx = match config.mode {
            SearchMode::Uct => {
                let untried = n.untried();
                if !untried.is_empty() {
                    return Ok((node, untried[rng.gen_range(0..untried.len())]));
                }
                select_uct(tree, node, config.c_uct)?
            }
            SearchMode::Prior => {
                let prior = prior.ok_or(SearchError::MissingPrior)?;
                if !prior_memo.contains_key(&node) {
                    prior_memo.insert(node, successor_priors(tree, node, prior)?);
                }
                select_prior_with(tree, node, config.c_prior, &prior_memo[&node])?
            }
            SearchMode::Uniform => {
                let options: Vec<usize> = (0..n.actions.len())
                    .filter(|&i| n.children[i].is_none_or(|c| !tree.node(c).exhausted))
                    .collect();
                if options.is_empty() {
                    return Err(SearchError::NoChildren(node));
                }
                options[rng.gen_range(0..options.len())]
            }
        };
        match n.children[idx] {
            None => return Ok((node, idx)),
            Some(child) => node = child,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub node: NodeId,
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub action: Option<String>,
    pub program_hash: String,
    pub metric: f64,
    pub q_sum: f64,
    pub visits: u64,
}

/// One JSON object per line, in node-id order.
pub fn export_tree(tree: &SearchTree) -> String {
    let mut out = String::new();
    for n in tree.nodes() {
        let rec = TreeRecord {
            node: n.id,
            parent: n.parent,
            depth: n.depth,
            action: n.incoming_action.as_ref().map(|a| a.to_string()),
            program_hash: n.state.content_hash(),
            metric: n.metric_minutes,
            q_sum: n.q_sum,
            visits: n.visits,
        };
        out.push_str(&serde_json::to_string(&rec).expect("serializable"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// Flattened padded pair-vector sequence (0/1), pair-major.
    pub features: Vec<u8>,
    pub q_mean: f64,
    pub label: u8,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// One record per visited node. A node is labelled 1 when its `q_mean`
/// reaches the `percentile_cutoff` quantile of all `q_mean`s and exceeds
/// their minimum.
pub fn export_dataset(tree: &SearchTree, percentile_cutoff: f64) -> Result<Vec<DatasetRecord>, SearchError> {
    export_dataset_with(tree, percentile_cutoff, DEFAULT_MAX_PAIRS)
}

pub fn export_dataset_with(
    tree: &SearchTree,
    percentile_cutoff: f64,
    max_pairs: usize,
) -> Result<Vec<DatasetRecord>, SearchError> {
    let visited: Vec<&SearchNode> = tree.nodes().iter().filter(|n| n.visits >= 1).collect();
    if visited.len() < 2 {
        return Err(SearchError::TooSmall(visited.len()));
    }
    let qs: Vec<f64> = visited.iter().map(|n| n.q_mean()).collect();
    let cutoff = quantile(&qs, percentile_cutoff);
    let min = qs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        log::warn!("all {} q-values equal {min}; every label is 0", qs.len());
    }
    visited
        .iter()
        .zip(&qs)
        .map(|(n, &q)| {
            Ok(DatasetRecord {
                features: featurize(&n.state, max_pairs)?,
                q_mean: q,
                label: u8::from(q >= cutoff && q > min),
            })
        })
        .collect()
}

pub fn dataset_to_jsonl(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn dataset_from_jsonl(text: &str) -> Result<Vec<DatasetRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostParams, SimEvaluator};
    use crate::ir::parse_program;

    fn star(children: &[(f64, u64)]) -> SearchTree {
        // Root with one load per child so there are enough legal actions.
        let text: String = (0..children.len())
            .map(|i| format!("load e{i} 10 10 big\n"))
            .collect();
        let root = parse_program(&text).unwrap();
        let mut tree = SearchTree::new(root.clone(), 1.0, 3);
        for (i, (q, n)) in children.iter().enumerate() {
            let id = tree.add_child(0, i, root.clone(), 1.0, 0.0);
            let node = tree.node_mut(id);
            node.visits = *n;
            node.q_sum = q * *n as f64;
        }
        tree.node_mut(0).visits = 1 + children.iter().map(|c| c.1).sum::<u64>();
        tree
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_reward(18.0, 18.0).unwrap(), 0.0);
        assert!((normalize_reward(4.0, 18.0).unwrap() - 14.0 / 18.0).abs() < 1e-15);
        assert_eq!(normalize_reward(36.0, 18.0).unwrap(), 0.0);
        assert!(normalize_reward(0.0, 18.0).is_err());
        assert!(normalize_reward(1.0, -1.0).is_err());
        let r = normalize_with(6.0, 18.0, RewardNormalization::SpeedupRatio { cap: 5.0 }, 0.0, 1.0)
            .unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uct_prefers_less_visited_on_equal_means() {
        let tree = star(&[(0.5, 1), (0.5, 5)]);
        assert_eq!(select_uct(&tree, 0, 0.5).unwrap(), 0);
    }

    #[test]
    fn uct_pure_exploitation() {
        let tree = star(&[(0.2, 3), (0.9, 3)]);
        assert_eq!(select_uct(&tree, 0, 0.0).unwrap(), 1);
    }

    #[test]
    fn uct_hand_scores() {
        // n = 10: a = 0.5 + sqrt(2 ln 10 / 3) = 1.738..., b = 0.4 + sqrt(2 ln 10) = 2.546...
        let mut tree = star(&[(0.5, 3), (0.4, 1)]);
        tree.node_mut(0).visits = 10;
        let a = 0.5 + 2.0 * 0.5 * (2.0 * 10f64.ln() / 3.0).sqrt();
        let b = 0.4 + 2.0 * 0.5 * (2.0 * 10f64.ln() / 1.0).sqrt();
        assert!((a - 1.7390).abs() < 1e-3 && (b - 2.5460).abs() < 1e-3);
        assert_eq!(select_uct(&tree, 0, 0.5).unwrap(), 1);
    }

    #[test]
    fn uct_without_children_is_an_error() {
        let tree = SearchTree::new(parse_program("load a 1 1 big").unwrap(), 1.0, 2);
        assert!(matches!(select_uct(&tree, 0, 0.5), Err(SearchError::NoChildren(0))));
    }

    #[test]
    fn prior_picks_mode_then_decays() {
        let root = parse_program("load a 1 1 big\nload b 1 1 big\nload c 1 1 big\n").unwrap();
        let mut tree = SearchTree::new(root.clone(), 1.0, 3);
        let priors = vec![0.1, 0.9, 0.3, 0.0, 0.0, 0.0];
        assert_eq!(select_prior_with(&tree, 0, 1.0, &priors).unwrap(), 1);

        let id = tree.add_child(0, 1, root, 1.0, 0.05);
        tree.node_mut(id).visits = 10;
        tree.node_mut(id).q_sum = 0.5;
        // scores: 0.1, 0.05 + 0.9 / 11 = 0.1318, 0.3
        assert_eq!(select_prior_with(&tree, 0, 1.0, &priors).unwrap(), 2);
    }

    #[test]
    fn zero_prior_is_greedy() {
        let mut tree = star(&[(0.2, 2), (0.7, 2), (0.7, 1)]);
        let zeros = vec![0.0; tree.root().actions.len()];
        assert_eq!(select_prior_with(&tree, 0, 1.0, &zeros).unwrap(), 1);
        for id in [1, 2, 3] {
            tree.node_mut(id).q_sum = 0.0;
        }
        assert_eq!(select_prior_with(&tree, 0, 1.0, &zeros).unwrap(), 0);
    }

    #[test]
    fn backprop_with_decay() {
        let p = parse_program("load a 1 1 big\nload b 1 1 big").unwrap();
        let mut tree = SearchTree::new(p.clone(), 1.0, 3);
        let c1 = tree.add_child(0, 0, p.clone(), 1.0, 0.0);
        backprop(&mut tree, c1, 0.0, 0.5);
        let c2 = tree.add_child(c1, 0, p, 1.0, 0.8);
        backprop(&mut tree, c2, 0.8, 0.5);
        assert!((tree.node(c2).q_sum - 0.8).abs() < 1e-15);
        assert!((tree.node(c1).q_sum - 0.4).abs() < 1e-15);
        assert!((tree.node(0).q_sum - 0.2).abs() < 1e-15);
        assert_eq!(
            [tree.node(0).visits, tree.node(c1).visits, tree.node(c2).visits],
            [3, 2, 1]
        );
    }

    #[test]
    fn backprop_zero_reward_only_counts() {
        let p = parse_program("load a 1 1 big").unwrap();
        let mut tree = SearchTree::new(p.clone(), 1.0, 3);
        let c = tree.add_child(0, 0, p, 1.0, 0.0);
        backprop(&mut tree, c, 0.0, 1.0);
        assert_eq!(tree.node(0).q_sum, 0.0);
        assert_eq!(tree.node(0).visits, 2);
    }

    #[test]
    fn budget_one_expands_one_root_child() {
        let p = parse_program("load a 1000 100 big\nloop 3 {\n  map b a 1\n}\n").unwrap();
        let eval = SimEvaluator::new(CostParams::default());
        for mode in [SearchMode::Uct, SearchMode::Uniform] {
            let cfg = SearchConfig {
                budget: 1,
                mode,
                ..SearchConfig::default()
            };
            let r = run_search(&p, &eval, &cfg, None, None).unwrap();
            assert_eq!(r.evaluations, 1);
            assert_eq!(r.tree.len(), 2);
            assert_eq!(r.tree.node(1).parent, Some(0));
        }
    }

    #[test]
    fn prior_mode_needs_prior() {
        let p = parse_program("load a 1 1 big").unwrap();
        let eval = SimEvaluator::new(CostParams::default());
        let cfg = SearchConfig {
            mode: SearchMode::Prior,
            ..SearchConfig::default()
        };
        assert!(matches!(
            run_search(&p, &eval, &cfg, None, None),
            Err(SearchError::MissingPrior)
        ));
    }

    #[test]
    fn exhaustive_space_stops_early() {
        let p = parse_program("load a 1000 100 big\n").unwrap();
        let eval = SimEvaluator::new(CostParams::default());
        let cfg = SearchConfig {
            budget: 1000,
            max_depth: 2,
            ..SearchConfig::default()
        };
        let r = run_search(&p, &eval, &cfg, None, None).unwrap();
        assert!(r.tree.root().exhausted);
        // depth 1: persist a, partition a; depth 2 below persist: partition a;
        // below partition: persist a, persist a_p, partition a_p? (illegal) -> 2
        assert_eq!(r.evaluations, 2 + 1 + 2);
        assert!(r.valid);
    }

    #[test]
    fn config_validation() {
        let mut c = SearchConfig::default();
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        c = SearchConfig {
            budget: 0,
            ..SearchConfig::default()
        };
        assert!(c.validate().is_err());
        c = SearchConfig {
            reward_floor: 0.5,
            reward_cap: 0.5,
            ..SearchConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert!((quantile(&[0.0, 0.7], 0.9) - 0.63).abs() < 1e-12);
        assert_eq!(quantile(&[3.0], 0.5), 3.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
    }

    #[test]
    fn dataset_labels_two_nodes() {
        let p = parse_program("load a 1 1 big").unwrap();
        let mut tree = SearchTree::new(p.clone(), 1.0, 3);
        let c = tree.add_child(0, 0, p, 1.0, 0.7);
        tree.node_mut(c).visits = 1;
        tree.node_mut(c).q_sum = 0.7;
        let recs = export_dataset(&tree, 0.9).unwrap();
        assert_eq!(recs.iter().map(|r| r.label).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(recs[0].features.len(), 6 * DEFAULT_MAX_PAIRS);
        assert_eq!(dataset_from_jsonl(&dataset_to_jsonl(&recs)).unwrap(), recs);
    }

    #[test]
    fn dataset_degenerate_and_too_small() {
        let p = parse_program("load a 1 1 big").unwrap();
        let mut tree = SearchTree::new(p.clone(), 1.0, 3);
        assert!(matches!(export_dataset(&tree, 0.9), Err(SearchError::TooSmall(1))));
        let c = tree.add_child(0, 0, p, 1.0, 0.0);
        tree.node_mut(c).visits = 1;
        let recs = export_dataset(&tree, 0.9).unwrap();
        assert!(recs.iter().all(|r| r.label == 0));
    }
}
