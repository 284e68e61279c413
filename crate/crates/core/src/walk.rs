//! Reinforced nearest-neighbour walks on the infinite rooted `b`-ary tree.
//!
//! The root has `b` neighbours; every other vertex has one parent and `b`
//! children. Every edge starts at weight 1. Each traversal bumps a per-edge
//! counter and a [`Scheme`] maps that counter to the edge's current weight;
//! a step from vertex `v` moves across an incident edge chosen with
//! probability proportional to its weight.
//!
//! Only the visited part of the tree is materialised. Vertices live in an
//! arena indexed by creation order, and the not-yet-traversed children of a
//! vertex are treated as one exchangeable block of weight-1 edges: they are
//! statistically indistinguishable until first traversed, so the sampler
//! draws the block first and only then assigns a uniformly random unused
//! child index. This keeps the per-step cost independent of `b` (only
//! traversed edges are enumerated) and the memory proportional to the number
//! of distinct vertices seen, which is at most `horizon + 1`.
//!
//! Determinism contract: a run is a pure function of `(WalkConfig, stream)`.
//! Replicas use one `ChaCha8` generator per `(seed, stream)` pair, so replica
//! farms can be evaluated in any order — or in parallel — without changing
//! any result.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

/// Index of the root vertex in the arena.
const ROOT: u32 = 0;

/// Errors from configuration validation or resource limits.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("branching factor must be at least 2, got {0}")]
    BranchingTooSmall(u32),
    #[error("reinforcement parameter must be finite and at least 1, got {0}")]
    BadReinforcement(f64),
    #[error("traversal cap k_max must be at least 1")]
    BadTraversalCap,
    #[error("edge budget of {budget} entries exhausted after {steps} steps")]
    EdgeBudgetExceeded { budget: u64, steps: u64 },
}

/// Reinforcement rule: maps an edge's traversal count `k` to its weight.
///
/// All rules give weight 1 to a never-traversed edge, and all weights are
/// non-decreasing in `k` whenever `c >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Scheme {
    /// `w(k) = 1 + k (c - 1)`: every traversal adds `c - 1`.
    Linear { c: f64 },
    /// `w(k) = c` for `k >= 1`, else 1: the first traversal does all the work.
    Once { c: f64 },
    /// `w(k) = 1 + min(k, k_max) (c - 1)`: linear up to the cap, then frozen.
    /// `KTimes { c, k_max: 1 }` coincides with `Once { c }` for every count.
    KTimes { c: f64, k_max: u32 },
}

impl Scheme {
    pub fn linear(c: f64) -> Result<Self, WalkError> {
        let s = Scheme::Linear { c };
        s.validate()?;
        Ok(s)
    }

    pub fn once(c: f64) -> Result<Self, WalkError> {
        let s = Scheme::Once { c };
        s.validate()?;
        Ok(s)
    }

    pub fn k_times(c: f64, k_max: u32) -> Result<Self, WalkError> {
        let s = Scheme::KTimes { c, k_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), WalkError> {
        let c = self.reinforcement();
        if !c.is_finite() || c < 1.0 {
            return Err(WalkError::BadReinforcement(c));
        }
        if let Scheme::KTimes { k_max, .. } = self {
            if *k_max == 0 {
                return Err(WalkError::BadTraversalCap);
            }
        }
        Ok(())
    }

    /// The reinforcement parameter `c`.
    pub fn reinforcement(&self) -> f64 {
        match *self {
            Scheme::Linear { c } | Scheme::Once { c } | Scheme::KTimes { c, .. } => c,
        }
    }

    /// Weight of an edge after `count` traversals.
    #[inline]
    pub fn weight_after(&self, count: u32) -> f64 {
        match *self {
            Scheme::Linear { c } => 1.0 + count as f64 * (c - 1.0),
            Scheme::Once { c } => {
                if count == 0 {
                    1.0
                } else {
                    c
                }
            }
            Scheme::KTimes { c, k_max } => 1.0 + count.min(k_max) as f64 * (c - 1.0),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Linear { .. } => "linear",
            Scheme::Once { .. } => "once",
            Scheme::KTimes { .. } => "ktimes",
        }
    }
}

/// Full description of one walk: tree, reinforcement, length, and seed.
///
/// Two runs with equal configs and equal streams produce bit-identical
/// traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Branching factor (`>= 2`); the root has `b` neighbours.
    pub b: u32,
    pub scheme: Scheme,
    /// Number of steps to simulate. A horizon of 0 yields the trivial trace.
    pub horizon: u64,
    pub seed: u64,
    /// Optional cap on the number of edge-table entries (distinct traversed
    /// edges). `None` means only the intrinsic `horizon` bound applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_budget: Option<u64>,
}

impl WalkConfig {
    pub fn new(b: u32, scheme: Scheme, horizon: u64, seed: u64) -> Result<Self, WalkError> {
        let cfg = WalkConfig { b, scheme, horizon, seed, edge_budget: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), WalkError> {
        if self.b < 2 {
            return Err(WalkError::BranchingTooSmall(self.b));
        }
        self.scheme.validate()
    }
}

/// A vertex named by its child-index path from the root (empty path = root).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct VertexId {
    path: Vec<u16>,
}

impl VertexId {
    pub fn root() -> Self {
        VertexId { path: Vec::new() }
    }

    pub fn from_path(path: Vec<u16>) -> Self {
        VertexId { path }
    }

    pub fn depth(&self) -> u32 {
        self.path.len() as u32
    }

    pub fn path(&self) -> &[u16] {
        &self.path
    }

    /// The `index`-th child of this vertex.
    pub fn child(&self, index: u16) -> VertexId {
        let mut path = self.path.clone();
        path.push(index);
        VertexId { path }
    }

    pub fn parent(&self) -> Option<VertexId> {
        if self.path.is_empty() {
            None
        } else {
            Some(VertexId { path: self.path[..self.path.len() - 1].to_vec() })
        }
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            return write!(f, "/");
        }
        for ix in &self.path {
            write!(f, "/{ix}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    parent: u32,
    /// Which child of `parent` this vertex is.
    child_index: u16,
    depth: u32,
    /// Traversal count of the edge towards `parent` (unused for the root).
    edge_count: u32,
    /// Materialised (traversed-to) children, in creation order.
    children: SmallVec<[u32; 2]>,
}

/// One traversed edge, identified by the arena index of its lower vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeInfo {
    /// Arena index of the vertex below the edge (depth >= 1).
    pub vertex: u32,
    /// Arena index of its parent.
    pub parent: u32,
    /// Child slot of `vertex` under `parent`.
    pub child_index: u16,
    /// Depth of `vertex` (= number of edges from the root).
    pub depth: u32,
    /// Traversal count.
    pub count: u32,
}

/// Sparse per-edge traversal counts for the visited subtree.
///
/// An edge is identified with the vertex below it; counts for edges that
/// were never traversed are implicitly zero (weight 1). Entries never exceed
/// the number of steps taken plus one vertex for the root.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeightTable {
    scheme: Scheme,
    nodes: Vec<Node>,
}

impl EdgeWeightTable {
    /// Number of traversed edges (= materialised non-root vertices).
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Traversal count of the edge above the vertex at `id`, or `None` if
    /// that vertex was never reached (or `id` is the root, which has no
    /// parent edge).
    pub fn traversal_count(&self, id: &VertexId) -> Option<u32> {
        if id.path().is_empty() {
            return None;
        }
        let node = self.locate(id)?;
        Some(self.nodes[node as usize].edge_count)
    }

    /// Current weight of the edge above `id` under the table's scheme.
    /// Never-traversed edges report the initial weight 1.
    pub fn weight(&self, id: &VertexId) -> Option<f64> {
        if id.path().is_empty() {
            return None;
        }
        Some(self.scheme.weight_after(self.traversal_count(id).unwrap_or(0)))
    }

    fn locate(&self, id: &VertexId) -> Option<u32> {
        let mut at = ROOT;
        for &ix in id.path() {
            let next = self.nodes[at as usize]
                .children
                .iter()
                .copied()
                .find(|&ch| self.nodes[ch as usize].child_index == ix)?;
            at = next;
        }
        Some(at)
    }

    /// Sum of all traversal counts; equals the number of steps taken.
    pub fn total_traversals(&self) -> u64 {
        self.nodes.iter().skip(1).map(|n| n.edge_count as u64).sum()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = EdgeInfo> + '_ {
        self.nodes.iter().enumerate().skip(1).map(|(i, n)| EdgeInfo {
            vertex: i as u32,
            parent: n.parent,
            child_index: n.child_index,
            depth: n.depth,
            count: n.edge_count,
        })
    }

    /// Reconstruct the child-index path of an arena vertex.
    pub fn path_of(&self, vertex: u32) -> VertexId {
        let mut path = Vec::new();
        let mut at = vertex;
        while at != ROOT {
            let n = &self.nodes[at as usize];
            path.push(n.child_index);
            at = n.parent;
        }
        path.reverse();
        VertexId::from_path(path)
    }
}

/// Everything a finished run exposes: the height sequence, per-level first
/// and last visit steps (maintained online), and the final edge table.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    heights: Vec<u32>,
    first_visit: Vec<u64>,
    last_visit: Vec<u64>,
    edges: EdgeWeightTable,
}

impl TraceSummary {
    /// Height after each step; `heights()[0] == 0` and the length is
    /// `steps() + 1`.
    pub fn heights(&self) -> &[u32] {
        &self.heights
    }

    pub fn steps(&self) -> u64 {
        (self.heights.len() - 1) as u64
    }

    pub fn final_height(&self) -> u32 {
        *self.heights.last().unwrap()
    }

    pub fn max_height(&self) -> u32 {
        (self.first_visit.len() - 1) as u32
    }

    /// Step of the first visit to each level `0..=max_height`.
    pub fn first_visit_steps(&self) -> &[u64] {
        &self.first_visit
    }

    /// Step of the last visit to each level `0..=max_height`.
    pub fn last_visit_steps(&self) -> &[u64] {
        &self.last_visit
    }

    pub fn weight_table(&self) -> &EdgeWeightTable {
        &self.edges
    }
}

/// Live walk state; step it manually or use [`run`] / [`run_with_stream`].
#[derive(Debug, Clone)]
pub struct WalkState {
    b: u32,
    scheme: Scheme,
    edge_budget: Option<u64>,
    nodes: Vec<Node>,
    current: u32,
    steps: u64,
    heights: Vec<u32>,
    first_visit: Vec<u64>,
    last_visit: Vec<u64>,
    log_likelihood_ratio: f64,
}

impl WalkState {
    pub fn new(config: &WalkConfig) -> Result<Self, WalkError> {
        config.validate()?;
        let root = Node {
            parent: ROOT,
            child_index: 0,
            depth: 0,
            edge_count: 0,
            children: SmallVec::new(),
        };
        Ok(WalkState {
            b: config.b,
            scheme: config.scheme,
            edge_budget: config.edge_budget,
            nodes: vec![root],
            current: ROOT,
            steps: 0,
            heights: vec![0],
            first_visit: vec![0],
            last_visit: vec![0],
            log_likelihood_ratio: 0.0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn current_height(&self) -> u32 {
        self.nodes[self.current as usize].depth
    }

    pub fn heights(&self) -> &[u32] {
        &self.heights
    }

    /// Accumulated log of `target density / sampling density` over all
    /// biased steps so far; exactly 0 while only unbiased steps were taken.
    pub fn log_likelihood_ratio(&self) -> f64 {
        self.log_likelihood_ratio
    }

    /// Take one step under the walk's own law.
    #[inline]
    pub fn step<R: Rng>(&mut self, rng: &mut R) -> Result<u32, WalkError> {
        self.step_biased(rng, 1.0)
    }

    /// Take one step under a tilted proposal that multiplies every
    /// child-edge weight (traversed or fresh) by `child_multiplier` before
    /// normalising; the parent edge keeps its target weight. The exact
    /// per-step likelihood ratio is accumulated in log space, making
    /// weighted averages over biased replicas unbiased for the target law.
    ///
    /// `child_multiplier = 1` reproduces [`WalkState::step`] exactly,
    /// consuming the identical random-number stream.
    pub fn step_biased<R: Rng>(
        &mut self,
        rng: &mut R,
        child_multiplier: f64,
    ) -> Result<u32, WalkError> {
        debug_assert!(child_multiplier > 0.0 && child_multiplier.is_finite());
        let cur = self.current;
        let parent_weight = if cur == ROOT {
            0.0
        } else {
            self.scheme.weight_after(self.nodes[cur as usize].edge_count)
        };
        // Traversed child edges, then the exchangeable block of fresh ones.
        // All weights here are small integers for integer c, and their f64
        // sums stay exact far beyond any realistic horizon (< 2^53).
        let mut visited_weight = 0.0;
        for i in 0..self.nodes[cur as usize].children.len() {
            let ch = self.nodes[cur as usize].children[i];
            visited_weight += self.scheme.weight_after(self.nodes[ch as usize].edge_count);
        }
        let fresh_count = self.b - self.nodes[cur as usize].children.len() as u32;
        let child_weight = visited_weight + fresh_count as f64;
        let target_total = parent_weight + child_weight;
        let proposal_total = parent_weight + child_multiplier * child_weight;

        let mut u: f64 = rng.random::<f64>() * proposal_total;
        let next = if u < parent_weight {
            // Step towards the root.
            self.log_likelihood_ratio += (proposal_total / target_total).ln();
            let node = &mut self.nodes[cur as usize];
            node.edge_count += 1;
            node.parent
        } else {
            self.log_likelihood_ratio +=
                (proposal_total / (child_multiplier * target_total)).ln();
            u -= parent_weight;
            let mut chosen: Option<u32> = None;
            for i in 0..self.nodes[cur as usize].children.len() {
                let ch = self.nodes[cur as usize].children[i];
                let w = child_multiplier
                    * self.scheme.weight_after(self.nodes[ch as usize].edge_count);
                if u < w {
                    chosen = Some(ch);
                    break;
                }
                u -= w;
            }
            match chosen {
                Some(ch) => {
                    self.nodes[ch as usize].edge_count += 1;
                    ch
                }
                // Fresh block: assign a uniformly random unused child index.
                None => self.materialise_fresh_child(cur, fresh_count, rng)?,
            }
        };

        self.current = next;
        self.steps += 1;
        let h = self.nodes[next as usize].depth;
        self.heights.push(h);
        if h as usize == self.first_visit.len() {
            self.first_visit.push(self.steps);
            self.last_visit.push(self.steps);
        } else {
            self.last_visit[h as usize] = self.steps;
        }
        Ok(h)
    }

    fn materialise_fresh_child<R: Rng>(
        &mut self,
        cur: u32,
        fresh_count: u32,
        rng: &mut R,
    ) -> Result<u32, WalkError> {
        if let Some(budget) = self.edge_budget {
            if self.nodes.len() as u64 > budget {
                return Err(WalkError::EdgeBudgetExceeded { budget, steps: self.steps });
            }
        }
        // r-th unused child index, mapped over the (few) used ones.
        let r = rng.random_range(0..fresh_count) as u16;
        let mut used: SmallVec<[u16; 8]> = self.nodes[cur as usize]
            .children
            .iter()
            .map(|&ch| self.nodes[ch as usize].child_index)
            .collect();
        used.sort_unstable();
        let mut index = r;
        for &u_ix in &used {
            if u_ix <= index {
                index += 1;
            }
        }
        let id = self.nodes.len() as u32;
        let depth = self.nodes[cur as usize].depth + 1;
        self.nodes.push(Node {
            parent: cur,
            child_index: index,
            depth,
            edge_count: 1,
            children: SmallVec::new(),
        });
        self.nodes[cur as usize].children.push(id);
        Ok(id)
    }

    /// Exact one-step law from the current position: `(vertex, probability)`
    /// for every incident edge — the parent edge (absent at the root) and
    /// all `b` child edges, fresh ones listed individually with weight 1.
    pub fn neighbor_distribution(&self) -> Vec<(VertexId, f64)> {
        let cur = self.current;
        let node = &self.nodes[cur as usize];
        let here = self.path_of(cur);
        let parent_weight = if cur == ROOT {
            0.0
        } else {
            self.scheme.weight_after(node.edge_count)
        };
        let mut child_weights = vec![1.0; self.b as usize];
        for &ch in &node.children {
            let c = &self.nodes[ch as usize];
            child_weights[c.child_index as usize] = self.scheme.weight_after(c.edge_count);
        }
        let total = parent_weight + child_weights.iter().sum::<f64>();
        let mut out = Vec::with_capacity(self.b as usize + 1);
        if cur != ROOT {
            out.push((here.parent().unwrap(), parent_weight / total));
        }
        for (ix, w) in child_weights.iter().enumerate() {
            out.push((here.child(ix as u16), w / total));
        }
        out
    }

    fn path_of(&self, vertex: u32) -> VertexId {
        let mut path = Vec::new();
        let mut at = vertex;
        while at != ROOT {
            let n = &self.nodes[at as usize];
            path.push(n.child_index);
            at = n.parent;
        }
        path.reverse();
        VertexId::from_path(path)
    }

    pub fn into_summary(self) -> TraceSummary {
        TraceSummary {
            heights: self.heights,
            first_visit: self.first_visit,
            last_visit: self.last_visit,
            edges: EdgeWeightTable { scheme: self.scheme, nodes: self.nodes },
        }
    }
}

/// Deterministic per-replica generator: one ChaCha8 stream per
/// `(seed, stream)` pair. Distinct streams are independent, so replica `i`
/// of a farm conventionally uses stream `base + i`.
pub fn replica_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulate `config.horizon` steps on stream 0.
pub fn run(config: &WalkConfig) -> Result<TraceSummary, WalkError> {
    run_with_stream(config, 0)
}

/// Simulate `config.horizon` steps on the given replica stream.
pub fn run_with_stream(config: &WalkConfig, stream: u64) -> Result<TraceSummary, WalkError> {
    let mut rng = replica_rng(config.seed, stream);
    let mut state = WalkState::new(config)?;
    for _ in 0..config.horizon {
        state.step(&mut rng)?;
    }
    Ok(state.into_summary())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(b: u32, scheme: Scheme, horizon: u64, seed: u64) -> WalkConfig {
        WalkConfig::new(b, scheme, horizon, seed).unwrap()
    }

    #[test]
    fn weight_after_pinned_values() {
        assert_eq!(Scheme::linear(2.0).unwrap().weight_after(3), 4.0);
        assert_eq!(Scheme::once(3.0).unwrap().weight_after(0), 1.0);
        assert_eq!(Scheme::once(3.0).unwrap().weight_after(1), 3.0);
        assert_eq!(Scheme::once(3.0).unwrap().weight_after(7), 3.0);
        assert_eq!(Scheme::linear(1.0).unwrap().weight_after(99), 1.0);
        assert_eq!(Scheme::k_times(2.0, 2).unwrap().weight_after(5), 3.0);
        assert_eq!(Scheme::k_times(2.0, 2).unwrap().weight_after(1), 2.0);
    }

    #[test]
    fn scheme_validation() {
        assert!(Scheme::linear(0.5).is_err());
        assert!(Scheme::once(f64::NAN).is_err());
        assert!(Scheme::linear(f64::INFINITY).is_err());
        assert!(Scheme::k_times(2.0, 0).is_err());
        assert!(WalkConfig::new(1, Scheme::linear(2.0).unwrap(), 10, 0).is_err());
        assert!(WalkConfig::new(2, Scheme::linear(1.0).unwrap(), 10, 0).is_ok());
    }

    #[test]
    fn k_times_with_cap_one_matches_once() {
        let once = Scheme::once(2.5).unwrap();
        let capped = Scheme::k_times(2.5, 1).unwrap();
        for count in 0..50 {
            assert_eq!(once.weight_after(count), capped.weight_after(count));
        }
        // Same weights everywhere implies bit-identical traces.
        let a = run(&cfg(3, once, 400, 9)).unwrap();
        let b = run(&cfg(3, capped, 400, 9)).unwrap();
        assert_eq!(a.heights(), b.heights());
    }

    #[test]
    fn c_equal_one_collapses_all_schemes_to_the_simple_walk() {
        let l = run(&cfg(2, Scheme::linear(1.0).unwrap(), 500, 7)).unwrap();
        let o = run(&cfg(2, Scheme::once(1.0).unwrap(), 500, 7)).unwrap();
        let k = run(&cfg(2, Scheme::k_times(1.0, 5).unwrap(), 500, 7)).unwrap();
        assert_eq!(l.heights(), o.heights());
        assert_eq!(l.heights(), k.heights());
    }

    #[test]
    fn first_step_from_root_always_goes_up() {
        for scheme in [
            Scheme::linear(2.0).unwrap(),
            Scheme::once(4.0).unwrap(),
            Scheme::k_times(3.0, 2).unwrap(),
        ] {
            for seed in 0..20 {
                let t = run(&cfg(2, scheme, 1, seed)).unwrap();
                assert_eq!(t.heights(), &[0, 1]);
            }
        }
    }

    #[test]
    fn root_distribution_is_uniform_when_fresh() {
        let state = WalkState::new(&cfg(4, Scheme::linear(2.0).unwrap(), 0, 0)).unwrap();
        let dist = state.neighbor_distribution();
        assert_eq!(dist.len(), 4);
        for (id, p) in dist {
            assert_eq!(id.depth(), 1);
            assert_relative_eq!(p, 0.25);
        }
    }

    #[test]
    fn depth_one_distribution_after_one_step() {
        // One step in: parent edge has weight c = 2, both children weight 1.
        let config = cfg(2, Scheme::linear(2.0).unwrap(), 0, 0);
        let mut rng = replica_rng(0, 0);
        let mut state = WalkState::new(&config).unwrap();
        state.step(&mut rng).unwrap();
        let dist = state.neighbor_distribution();
        assert_eq!(dist.len(), 3);
        assert_eq!(dist[0].0, VertexId::root());
        assert_relative_eq!(dist[0].1, 0.5);
        assert_relative_eq!(dist[1].1, 0.25);
        assert_relative_eq!(dist[2].1, 0.25);

        // Identical for the once-reinforced rule: first traversal sets c.
        let mut state = WalkState::new(&cfg(2, Scheme::once(2.0).unwrap(), 0, 0)).unwrap();
        state.step(&mut rng).unwrap();
        let dist = state.neighbor_distribution();
        assert_relative_eq!(dist[0].1, 0.5);
    }

    #[test]
    fn neighbor_distribution_is_normalised_mid_walk() {
        let config = cfg(3, Scheme::linear(1.7).unwrap(), 0, 0);
        let mut rng = replica_rng(42, 0);
        let mut state = WalkState::new(&config).unwrap();
        for _ in 0..200 {
            state.step(&mut rng).unwrap();
            let dist = state.neighbor_distribution();
            let sum: f64 = dist.iter().map(|(_, p)| p).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(dist.iter().all(|&(_, p)| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn two_step_return_probability_is_one_half() {
        // b = 2, linear c = 2: after the forced first step the parent edge
        // has weight 2 against two fresh children, so P(h(X_2) = 0) = 1/2.
        let mut returns = 0u32;
        let replicas = 20_000u32;
        for rep in 0..replicas {
            let t = run(&cfg(2, Scheme::linear(2.0).unwrap(), 2, 1000 + rep as u64)).unwrap();
            if t.final_height() == 0 {
                returns += 1;
            }
        }
        let p = returns as f64 / replicas as f64;
        let se = (0.25f64 / replicas as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * se, "p = {p}, se = {se}");
    }

    #[test]
    fn traversal_counts_sum_to_steps() {
        for scheme in [
            Scheme::linear(2.0).unwrap(),
            Scheme::once(3.0).unwrap(),
            Scheme::k_times(1.5, 3).unwrap(),
        ] {
            let t = run(&cfg(3, scheme, 257, 5)).unwrap();
            assert_eq!(t.weight_table().total_traversals(), 257);
            assert_eq!(t.steps(), 257);
        }
    }

    #[test]
    fn horizon_zero_is_the_trivial_trace() {
        let t = run(&cfg(2, Scheme::linear(2.0).unwrap(), 0, 0)).unwrap();
        assert_eq!(t.heights(), &[0]);
        assert_eq!(t.weight_table().len(), 0);
        assert_eq!(t.final_height(), 0);
        assert_eq!(t.max_height(), 0);
    }

    #[test]
    fn equal_configs_give_bit_identical_traces() {
        let config = cfg(3, Scheme::once(2.0).unwrap(), 1000, 31);
        let a = run(&config).unwrap();
        let b = run(&config).unwrap();
        assert_eq!(a.heights(), b.heights());
        let ea: Vec<_> = a.weight_table().iter().collect();
        let eb: Vec<_> = b.weight_table().iter().collect();
        assert_eq!(ea, eb);
        // A different stream decorrelates immediately.
        let c = run_with_stream(&config, 1).unwrap();
        assert_ne!(a.heights(), c.heights());
    }

    #[test]
    fn edge_budget_is_enforced() {
        let mut config = cfg(2, Scheme::linear(1.0).unwrap(), 10, 0);
        config.edge_budget = Some(0);
        assert_eq!(
            run(&config),
            Err(WalkError::EdgeBudgetExceeded { budget: 0, steps: 0 })
        );
        // A transient walk must keep materialising vertices eventually.
        let mut config = cfg(2, Scheme::linear(1.0).unwrap(), 10_000, 3);
        config.edge_budget = Some(10);
        match run(&config) {
            Err(WalkError::EdgeBudgetExceeded { budget: 10, .. }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn online_visit_tables_match_height_replay() {
        let t = run(&cfg(2, Scheme::linear(2.0).unwrap(), 2000, 17)).unwrap();
        let heights = t.heights();
        let max = *heights.iter().max().unwrap() as usize;
        let mut first = vec![u64::MAX; max + 1];
        let mut last = vec![0u64; max + 1];
        for (step, &h) in heights.iter().enumerate() {
            let h = h as usize;
            if first[h] == u64::MAX {
                first[h] = step as u64;
            }
            last[h] = step as u64;
        }
        assert_eq!(t.first_visit_steps(), &first[..]);
        assert_eq!(t.last_visit_steps(), &last[..]);
        assert_eq!(t.max_height() as usize, max);
    }

    #[test]
    fn weight_table_lookup_by_path() {
        let config = cfg(2, Scheme::linear(2.0).unwrap(), 50, 11);
        let t = run(&config).unwrap();
        let table = t.weight_table();
        // Every materialised edge is findable by its reconstructed path and
        // reports a weight consistent with its count.
        for e in table.iter() {
            let id = table.path_of(e.vertex);
            assert_eq!(id.depth(), e.depth);
            assert_eq!(table.traversal_count(&id), Some(e.count));
            assert_eq!(
                table.weight(&id).unwrap(),
                config.scheme.weight_after(e.count)
            );
            assert!(e.count >= 1);
        }
        // A never-visited deep vertex: no count, initial weight.
        let probe = VertexId::from_path(vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0]);
        if table.traversal_count(&probe).is_none() {
            assert_eq!(table.weight(&probe), Some(1.0));
        }
        assert_eq!(table.weight(&VertexId::root()), None);
    }

    #[test]
    fn unbiased_step_has_zero_log_likelihood_ratio() {
        let config = cfg(3, Scheme::linear(2.0).unwrap(), 0, 0);
        let mut rng = replica_rng(8, 0);
        let mut state = WalkState::new(&config).unwrap();
        for _ in 0..500 {
            state.step(&mut rng).unwrap();
        }
        assert_eq!(state.log_likelihood_ratio(), 0.0);
    }

    #[test]
    fn biased_monotone_path_matches_hand_likelihood_ratio() {
        // b = 2, linear c = 2, multiplier m: step 1 is from the root where
        // every edge is a child edge, so its ratio is 1; each later forward
        // step has target probability 2/4 and proposal 2m/(2 + 2m), giving a
        // per-step ratio (2 + 2m) / (4m).
        let m = 0.5f64.exp();
        let config = cfg(2, Scheme::linear(2.0).unwrap(), 0, 0);
        let mut found = false;
        for seed in 0..200 {
            let mut rng = replica_rng(seed, 0);
            let mut state = WalkState::new(&config).unwrap();
            for _ in 0..3 {
                state.step_biased(&mut rng, m).unwrap();
            }
            if state.heights() == [0, 1, 2, 3] {
                let expected = 2.0 * ((2.0 + 2.0 * m) / (4.0 * m)).ln();
                assert_relative_eq!(state.log_likelihood_ratio(), expected, epsilon = 1e-12);
                found = true;
                break;
            }
        }
        assert!(found, "no monotone 3-step path found under forward bias");
    }

    #[test]
    fn biased_and_unbiased_steps_share_the_random_stream() {
        // multiplier = 1 must consume randomness identically to step().
        let config = cfg(3, Scheme::once(2.0).unwrap(), 0, 0);
        let mut rng_a = replica_rng(5, 3);
        let mut rng_b = replica_rng(5, 3);
        let mut a = WalkState::new(&config).unwrap();
        let mut b = WalkState::new(&config).unwrap();
        for _ in 0..300 {
            a.step(&mut rng_a).unwrap();
            b.step_biased(&mut rng_b, 1.0).unwrap();
        }
        assert_eq!(a.heights(), b.heights());
        assert_eq!(b.log_likelihood_ratio(), 0.0);
    }

    proptest! {
        #[test]
        fn weights_are_monotone_in_count(c in 1.0f64..8.0, k_max in 1u32..6, count in 0u32..40) {
            for scheme in [
                Scheme::linear(c).unwrap(),
                Scheme::once(c).unwrap(),
                Scheme::k_times(c, k_max).unwrap(),
            ] {
                let w0 = scheme.weight_after(count);
                let w1 = scheme.weight_after(count + 1);
                prop_assert!(w0 >= 1.0);
                prop_assert!(w1 >= w0);
            }
            prop_assert_eq!(Scheme::linear(c).unwrap().weight_after(0), 1.0);
        }

        #[test]
        fn short_runs_respect_structural_invariants(
            b in 2u32..6,
            c in 1.0f64..4.0,
            horizon in 0u64..120,
            seed in 0u64..500,
        ) {
            let t = run(&cfg(b, Scheme::linear(c).unwrap(), horizon, seed)).unwrap();
            prop_assert_eq!(t.heights().len() as u64, horizon + 1);
            // Heights move by exactly one per step and stay non-negative.
            for w in t.heights().windows(2) {
                prop_assert_eq!(w[0].abs_diff(w[1]), 1);
            }
            // Edge-table size can never exceed steps + 1 vertices total.
            prop_assert!(t.weight_table().len() as u64 <= horizon);
            prop_assert_eq!(t.weight_table().total_traversals(), horizon);
        }
    }
}
