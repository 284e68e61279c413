//! Exact small-horizon reference computations by weighted path enumeration.
//!
//! For a handful of steps the walk's law can be computed exactly: enumerate
//! every distinguishable move sequence, multiplying exact per-step
//! probabilities. Two symmetries keep this tractable:
//!
//! * **Exchangeability of fresh children.** Until first traversed, the
//!   children of a vertex are statistically identical, so the enumeration
//!   treats them as a single aggregated move of weight `b - k` (with `k`
//!   traversed child edges). The branching factor then only enters through
//!   that aggregate weight, which makes `b = 70` exactly as cheap as
//!   `b = 2`.
//! * **Exact rationals.** Every `f64` reinforcement parameter is exactly a
//!   rational number, so all probabilities are computed in `BigRational`
//!   with no rounding anywhere; conversions to `f64` happen only at the
//!   API boundary.
//!
//! [`exact_distribution_uncollapsed`] re-enumerates without the
//! exchangeability collapse — a second, dumber oracle used to cross-check
//! the collapsed one on tiny instances.
//!
//! The enumerator refuses horizons beyond [`OracleOptions::n_max`] instead
//! of silently truncating: work grows exponentially with the horizon.

use num::rational::BigRational;
use num::{BigInt, One, ToPrimitive, Zero};
use thiserror::Error;

use crate::walk::{Scheme, WalkConfig};

/// Default largest horizon [`exact_distribution`] accepts.
pub const DEFAULT_N_MAX: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("horizon {n} exceeds the enumeration cap {n_max}; raise OracleOptions::n_max explicitly if the exponential cost is acceptable")]
    HorizonTooLarge { n: u64, n_max: u64 },
    #[error("uncollapsed enumeration is capped at horizon {cap}, got {n}")]
    UncollapsedTooLarge { n: u64, cap: u64 },
    #[error("reinforcement parameter {0} is not a finite number")]
    BadReinforcement(f64),
}

/// Tuning knobs for the enumerator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Refuse horizons above this; enumeration cost is exponential in `n`.
    pub n_max: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { n_max: DEFAULT_N_MAX }
    }
}

/// Exact weight of an edge after `count` traversals, as a rational.
fn weight_rational(scheme: &Scheme, count: u32) -> Result<BigRational, OracleError> {
    let c = scheme.reinforcement();
    if !c.is_finite() {
        return Err(OracleError::BadReinforcement(c));
    }
    // Every finite f64 is exactly rational; c = 2.0 becomes 2/1, not an
    // approximation.
    let c = BigRational::from_float(c).ok_or(OracleError::BadReinforcement(f64::NAN))?;
    let one = BigRational::one();
    let surplus = &c - &one;
    let effective = match *scheme {
        Scheme::Linear { .. } => count,
        Scheme::Once { .. } => count.min(1),
        Scheme::KTimes { k_max, .. } => count.min(k_max),
    };
    Ok(one + surplus * BigRational::from_integer(BigInt::from(effective)))
}

/// Visited subtree under the collapsed (exchangeable-children) view.
struct CollapsedArena {
    parent: Vec<usize>,
    depth: Vec<u32>,
    edge_count: Vec<u32>,
    children: Vec<Vec<usize>>,
}

impl CollapsedArena {
    fn new() -> Self {
        CollapsedArena {
            parent: vec![0],
            depth: vec![0],
            edge_count: vec![0],
            children: vec![Vec::new()],
        }
    }
}

enum Move {
    Parent,
    Child(usize),
    Fresh,
}

/// Depth-first enumeration over collapsed states; calls `sink` once per
/// leaf with the full height path `h(X_0), ..., h(X_n)` and its exact
/// probability.
fn enumerate_collapsed(
    b: u32,
    scheme: &Scheme,
    n: u64,
    sink: &mut dyn FnMut(&[u32], &BigRational),
) -> Result<(), OracleError> {
    let mut arena = CollapsedArena::new();
    let mut heights = vec![0u32];
    let prob = BigRational::one();
    descend(b, scheme, n, &mut arena, 0, &mut heights, prob, sink)
}

#[allow(clippy::too_many_arguments)]
fn descend(
    b: u32,
    scheme: &Scheme,
    remaining: u64,
    arena: &mut CollapsedArena,
    at: usize,
    heights: &mut Vec<u32>,
    prob: BigRational,
    sink: &mut dyn FnMut(&[u32], &BigRational),
) -> Result<(), OracleError> {
    if remaining == 0 {
        sink(heights, &prob);
        return Ok(());
    }

    // Move weights at the current vertex.
    let mut moves: Vec<(Move, BigRational)> = Vec::new();
    let mut total = BigRational::zero();
    if at != 0 {
        let w = weight_rational(scheme, arena.edge_count[at])?;
        total += &w;
        moves.push((Move::Parent, w));
    }
    for i in 0..arena.children[at].len() {
        let ch = arena.children[at][i];
        let w = weight_rational(scheme, arena.edge_count[ch])?;
        total += &w;
        moves.push((Move::Child(ch), w));
    }
    let fresh = b - arena.children[at].len() as u32;
    if fresh > 0 {
        let w = BigRational::from_integer(BigInt::from(fresh));
        total += &w;
        moves.push((Move::Fresh, w));
    }

    for (mv, w) in moves {
        let p = &prob * &w / &total;
        match mv {
            Move::Parent => {
                arena.edge_count[at] += 1;
                let up = arena.parent[at];
                heights.push(arena.depth[up]);
                descend(b, scheme, remaining - 1, arena, up, heights, p, sink)?;
                heights.pop();
                arena.edge_count[at] -= 1;
            }
            Move::Child(ch) => {
                arena.edge_count[ch] += 1;
                heights.push(arena.depth[ch]);
                descend(b, scheme, remaining - 1, arena, ch, heights, p, sink)?;
                heights.pop();
                arena.edge_count[ch] -= 1;
            }
            Move::Fresh => {
                // Materialise one representative of the exchangeable block.
                let ch = arena.parent.len();
                arena.parent.push(at);
                arena.depth.push(arena.depth[at] + 1);
                arena.edge_count.push(1);
                arena.children.push(Vec::new());
                arena.children[at].push(ch);
                heights.push(arena.depth[ch]);
                descend(b, scheme, remaining - 1, arena, ch, heights, p, sink)?;
                heights.pop();
                arena.children[at].pop();
                arena.parent.pop();
                arena.depth.pop();
                arena.edge_count.pop();
                arena.children.pop();
            }
        }
    }
    Ok(())
}

/// Exact law of `h(X_n)`: index `h` of the result holds `P(h(X_n) = h)`
/// for `h = 0..=n`. The entries sum to exactly 1, and entries whose parity
/// differs from `n` are exactly zero.
///
/// `config.horizon` and `config.seed` are ignored; only `b` and the scheme
/// matter.
pub fn exact_distribution(
    config: &WalkConfig,
    n: u64,
    options: &OracleOptions,
) -> Result<Vec<BigRational>, OracleError> {
    if n > options.n_max {
        return Err(OracleError::HorizonTooLarge { n, n_max: options.n_max });
    }
    let mut acc = vec![BigRational::zero(); n as usize + 1];
    enumerate_collapsed(config.b, &config.scheme, n, &mut |heights, p| {
        let h = *heights.last().unwrap() as usize;
        acc[h] += p;
    })?;
    Ok(acc)
}

/// [`exact_distribution`] converted to `f64` at the boundary.
pub fn exact_distribution_f64(
    config: &WalkConfig,
    n: u64,
    options: &OracleOptions,
) -> Result<Vec<f64>, OracleError> {
    Ok(exact_distribution(config, n, options)?
        .iter()
        .map(|p| p.to_f64().unwrap_or(f64::NAN))
        .collect())
}

/// Exact probability of any event measurable from the height path: the
/// predicate receives `h(X_0), ..., h(X_n)` (length `n + 1`) once per
/// distinguishable path and its exact probabilities are summed.
///
/// Cut-level events are height-path events: level `l` is a cut level within
/// the horizon exactly when the path visits height `l` once.
pub fn exact_event_prob(
    config: &WalkConfig,
    n: u64,
    options: &OracleOptions,
    mut predicate: impl FnMut(&[u32]) -> bool,
) -> Result<BigRational, OracleError> {
    if n > options.n_max {
        return Err(OracleError::HorizonTooLarge { n, n_max: options.n_max });
    }
    let mut acc = BigRational::zero();
    enumerate_collapsed(config.b, &config.scheme, n, &mut |heights, p| {
        if predicate(heights) {
            acc += p;
        }
    })?;
    Ok(acc)
}

/// Cap on the deliberately-naive enumeration below.
pub const UNCOLLAPSED_N_CAP: u64 = 5;

/// Exact law of `h(X_n)` by brute-force enumeration over *individual*
/// child indices, ignoring exchangeability entirely. Exponential in `b` as
/// well as `n`, hence capped at [`UNCOLLAPSED_N_CAP`] steps. Exists purely
/// as an independent cross-check of the collapsed enumerator.
pub fn exact_distribution_uncollapsed(
    config: &WalkConfig,
    n: u64,
) -> Result<Vec<BigRational>, OracleError> {
    if n > UNCOLLAPSED_N_CAP {
        return Err(OracleError::UncollapsedTooLarge { n, cap: UNCOLLAPSED_N_CAP });
    }
    struct UArena {
        parent: Vec<usize>,
        depth: Vec<u32>,
        edge_count: Vec<u32>,
        /// One slot per child index; `usize::MAX` = never materialised.
        slots: Vec<Vec<usize>>,
    }
    fn go(
        b: u32,
        scheme: &Scheme,
        remaining: u64,
        arena: &mut UArena,
        at: usize,
        prob: BigRational,
        acc: &mut [BigRational],
    ) -> Result<(), OracleError> {
        if remaining == 0 {
            acc[arena.depth[at] as usize] += prob;
            return Ok(());
        }
        let mut total = BigRational::zero();
        let parent_w = if at != 0 {
            let w = weight_rational(scheme, arena.edge_count[at])?;
            total += &w;
            Some(w)
        } else {
            None
        };
        let mut child_ws = Vec::with_capacity(b as usize);
        for ix in 0..b as usize {
            let slot = arena.slots[at][ix];
            let count = if slot == usize::MAX { 0 } else { arena.edge_count[slot] };
            let w = weight_rational(scheme, count)?;
            total += &w;
            child_ws.push(w);
        }
        if let Some(w) = parent_w {
            let p = &prob * &w / &total;
            arena.edge_count[at] += 1;
            let up = arena.parent[at];
            go(b, scheme, remaining - 1, arena, up, p, acc)?;
            arena.edge_count[at] -= 1;
        }
        for (ix, w) in child_ws.iter().enumerate() {
            let p = &prob * w / &total;
            let existing = arena.slots[at][ix];
            if existing != usize::MAX {
                arena.edge_count[existing] += 1;
                go(b, scheme, remaining - 1, arena, existing, p, acc)?;
                arena.edge_count[existing] -= 1;
            } else {
                let ch = arena.parent.len();
                arena.parent.push(at);
                arena.depth.push(arena.depth[at] + 1);
                arena.edge_count.push(1);
                arena.slots.push(vec![usize::MAX; b as usize]);
                arena.slots[at][ix] = ch;
                go(b, scheme, remaining - 1, arena, ch, p, acc)?;
                arena.slots[at][ix] = usize::MAX;
                arena.parent.pop();
                arena.depth.pop();
                arena.edge_count.pop();
                arena.slots.pop();
            }
        }
        Ok(())
    }

    let mut arena = UArena {
        parent: vec![0],
        depth: vec![0],
        edge_count: vec![0],
        slots: vec![vec![usize::MAX; config.b as usize]],
    };
    let mut acc = vec![BigRational::zero(); n as usize + 1];
    go(config.b, &config.scheme, n, &mut arena, 0, BigRational::one(), &mut acc)?;
    Ok(acc)
}

/// Rational helper: `p` as an `f64` plus a guard that the conversion error
/// is negligible (used in tests and the oracle-check experiment).
pub fn rational_to_f64(p: &BigRational) -> f64 {
    p.to_f64().unwrap_or(f64::NAN)
}

/// Exact distribution of the *simple* walk's height via the birth-death
/// chain on heights: up with probability `b/(b+1)` (1 from the root), down
/// otherwise. Valid only for `c = 1`, where the tree walk's height is
/// Markov; serves as an independent derivation path for that special case.
pub fn simple_walk_height_distribution(b: u32, n: u64) -> Vec<BigRational> {
    let b_big = BigRational::from_integer(BigInt::from(b));
    let denom = BigRational::from_integer(BigInt::from(b + 1));
    let up = &b_big / &denom;
    let down = BigRational::one() / &denom;
    let mut dist = vec![BigRational::zero(); n as usize + 2];
    dist[0] = BigRational::one();
    for _ in 0..n {
        let mut next = vec![BigRational::zero(); dist.len()];
        for (h, p) in dist.iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            if h == 0 {
                next[1] += p;
            } else {
                next[h + 1] += p * &up;
                next[h - 1] += p * &down;
            }
        }
        dist = next;
    }
    dist.truncate(n as usize + 1);
    dist
}
