//! Regeneration structure of a transient walk: level visit times, cut
//! times, and the i.i.d. block increments between them.
//!
//! A level `k` is *cut* when the walk visits height `k` exactly once — it
//! arrives and never crosses that height again. The step of that single
//! visit is a cut time; between consecutive cut times the walk's future is
//! independent of its past, so the per-block (duration, height-gain) pairs
//! form an i.i.d. sequence and carry all the information needed for
//! ratio-type speed estimates and tail fits.
//!
//! Two finite-horizon complications are handled explicitly:
//!
//! * **Censoring.** Whether a level is cut can be overturned by steps the
//!   simulation never took. A record is therefore only `confirmed` once the
//!   walk has climbed *strictly more than* `margin` levels past it; the
//!   trailing unconfirmed records (including everything at the final
//!   height) are kept but excluded from increment extraction. The margin
//!   should be large enough that a later return across it is negligible —
//!   see [`default_margin`].
//! * **The conventional first record.** Step 0 is always recorded, whether
//!   or not level 0 is genuinely cut, so the first block (the walk's
//!   pre-regeneration prefix) is measurable. That first block is *not* an
//!   i.i.d. copy of the others; [`iid_increments`] drops it whenever the
//!   leading record exists only by convention.


use serde::{Deserialize, Serialize};

use crate::stats;
use crate::walk::{Scheme, TraceSummary};

/// First- and last-visit steps for every level the walk reached.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTimes {
    first: Vec<u64>,
    last: Vec<u64>,
}

impl LevelTimes {
    /// Recompute from the raw height sequence (`heights[0]` must be 0).
    pub fn from_heights(heights: &[u32]) -> Self {
        assert!(!heights.is_empty() && heights[0] == 0, "height path must start at the root");
        let max = *heights.iter().max().unwrap() as usize;
        let mut first = vec![u64::MAX; max + 1];
        let mut last = vec![0u64; max + 1];
        for (step, &h) in heights.iter().enumerate() {
            if first[h as usize] == u64::MAX {
                first[h as usize] = step as u64;
            }
            last[h as usize] = step as u64;
        }
        LevelTimes { first, last }
    }

    /// Copy of the visit tables a trace maintained online during the run.
    pub fn from_trace(trace: &TraceSummary) -> Self {
        LevelTimes {
            first: trace.first_visit_steps().to_vec(),
            last: trace.last_visit_steps().to_vec(),
        }
    }

    pub fn max_level(&self) -> u32 {
        (self.first.len() - 1) as u32
    }

    /// Step of the first visit to `level` (the hitting time).
    pub fn first_visit(&self, level: u32) -> Option<u64> {
        self.first.get(level as usize).copied()
    }

    /// Step of the last visit to `level` within the horizon.
    pub fn last_visit(&self, level: u32) -> Option<u64> {
        self.last.get(level as usize).copied()
    }
}

/// Level first/last visit times recomputed from a finished trace.
///
/// First-visit times are strictly increasing in the level: the walk must
/// cross every lower level first.
pub fn level_times(trace: &TraceSummary) -> LevelTimes {
    LevelTimes::from_heights(trace.heights())
}

/// One cut-time record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegenRecord {
    /// Step of the level's only visit.
    pub step: u64,
    /// The cut level itself (= the walk's height at `step`).
    pub level: u32,
    /// True once the walk has climbed strictly more than `margin` levels
    /// above `level`, so a later return that overturns the record would
    /// have to cross the whole margin.
    pub confirmed: bool,
    /// True for the step-0 record when level 0 is *not* genuinely cut: the
    /// record then exists only to anchor the first block.
    pub by_convention: bool,
}

/// All cut-time records of a trace, in increasing step order, starting
/// with the (possibly conventional) step-0 record.
///
/// `horizon` must equal the trace length that produced `times`; it guards
/// against mixing tables from different runs.
pub fn cut_times(times: &LevelTimes, horizon: u64, margin: u32) -> Vec<RegenRecord> {
    let max_level = times.max_level();
    debug_assert!(
        (0..=max_level).all(|l| times.last_visit(l).unwrap() <= horizon),
        "level times inconsistent with horizon"
    );
    let confirmed = |level: u32| max_level - level > margin;
    let mut records = Vec::new();
    let root_is_cut = times.last_visit(0) == Some(0);
    records.push(RegenRecord {
        step: 0,
        level: 0,
        confirmed: confirmed(0),
        by_convention: !root_is_cut,
    });
    for level in 1..=max_level {
        let first = times.first_visit(level).unwrap();
        if first == times.last_visit(level).unwrap() {
            records.push(RegenRecord {
                step: first,
                level,
                confirmed: confirmed(level),
                by_convention: false,
            });
        }
    }
    records
}

/// Duration and height gain of one regeneration block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Increment {
    pub duration: u64,
    pub height_gain: u32,
}

/// Consecutive differences over the *confirmed* records: one
/// `(duration, height gain)` pair per block between neighbouring confirmed
/// cut times. The censored block after the last confirmed record never
/// forms a pair, and fewer than two confirmed records yield nothing.
///
/// The pair anchored at a conventional step-0 record is included here (it
/// is a well-defined block); use [`iid_increments`] for statistics that
/// require identically-distributed copies.
pub fn increments(records: &[RegenRecord]) -> Vec<Increment> {
    let confirmed: Vec<&RegenRecord> = records.iter().filter(|r| r.confirmed).collect();
    confirmed
        .windows(2)
        .map(|w| Increment {
            duration: w[1].step - w[0].step,
            height_gain: w[1].level - w[0].level,
        })
        .collect()
}

/// [`increments`] restricted to i.i.d. blocks: when the leading confirmed
/// record exists only by convention, the first pair (the pre-regeneration
/// prefix, whose law differs from the rest) is dropped.
pub fn iid_increments(records: &[RegenRecord]) -> Vec<Increment> {
    let mut pairs = increments(records);
    let leading_conventional = records
        .iter()
        .find(|r| r.confirmed)
        .is_some_and(|r| r.by_convention);
    if leading_conventional && !pairs.is_empty() {
        pairs.remove(0);
    }
    pairs
}

/// Height at the last cut time up to step `n`: the largest level the walk
/// visited exactly once (over the whole recorded trace) with that visit
/// happening by step `n`; 0 when no level is cut by then (the step-0
/// convention). This is the regeneration-skeleton height — it telescopes
/// to the level of the most recent cut record — and sits below the raw
/// height pathwise: `cut_height_at(times, n) <= heights[n]`.
///
/// `times` should come from a trace extending well past `n`, so that
/// levels near the top have had a chance to be revisited.
pub fn cut_height_at(times: &LevelTimes, n: u64) -> u32 {
    let mut best = 0;
    // A single-visit level doesn't count while the walk sits below it (a
    // recrossing is forced, the window just hasn't seen it): some lower
    // level would have a later visit, so track their latest one.
    let mut below_last = times.last_visit(0).unwrap();
    for level in 1..=times.max_level() {
        let first = times.first_visit(level).unwrap();
        let last = times.last_visit(level).unwrap();
        if first <= n && first == last && below_last < first {
            best = level;
        }
        below_last = below_last.max(last);
    }
    best
}

/// Truncation and censoring parameters for block statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationParams {
    /// Keep only blocks with `height_gain <= height_cap` ("short" blocks).
    pub height_cap: Option<u32>,
    /// Keep only blocks with `duration <= duration_cap` ("tight" blocks).
    pub duration_cap: Option<u64>,
    /// Confirmation margin for [`cut_times`].
    pub margin: u32,
}

impl TruncationParams {
    /// No truncation, margin chosen by [`default_margin`].
    pub fn untruncated(b: u32, scheme: &Scheme) -> Self {
        TruncationParams {
            height_cap: None,
            duration_cap: None,
            margin: default_margin(b, scheme),
        }
    }
}

/// Margin heuristic: returns across `d` fresh levels cost roughly a factor
/// `c / (c + b)` per level (one reinforced parent edge against `b` fresh
/// children), so pick the smallest `d` with `(c / (c + b))^d <= 1e-4`,
/// clamped to `[8, 64]`. The clamp floor guards small-`c`/large-`b`
/// combinations where the one-level heuristic is most optimistic; the
/// ceiling keeps the usable horizon prefix large. The margin is a
/// parameter everywhere it matters, so callers can always override.
pub fn default_margin(b: u32, scheme: &Scheme) -> u32 {
    let c = scheme.reinforcement();
    let per_level = c / (c + b as f64);
    let needed = (1e-4f64.ln() / per_level.ln()).ceil() as u32;
    needed.clamp(8, 64)
}

/// Result of truncating a block sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredIncrements {
    pub kept: Vec<Increment>,
    /// Blocks dropped for exceeding the height cap (alone).
    pub dropped_tall: usize,
    /// Blocks dropped for exceeding the duration cap (alone).
    pub dropped_slow: usize,
    /// Blocks dropped for exceeding both caps.
    pub dropped_both: usize,
}

impl FilteredIncrements {
    pub fn dropped(&self) -> usize {
        self.dropped_tall + self.dropped_slow + self.dropped_both
    }
}

/// Keep the short (`height_gain <= height_cap`) and tight
/// (`duration <= duration_cap`) blocks; absent caps never drop anything.
pub fn filter_short_tight(pairs: &[Increment], params: &TruncationParams) -> FilteredIncrements {
    let mut out = FilteredIncrements {
        kept: Vec::with_capacity(pairs.len()),
        dropped_tall: 0,
        dropped_slow: 0,
        dropped_both: 0,
    };
    for &p in pairs {
        let tall = params.height_cap.is_some_and(|cap| p.height_gain > cap);
        let slow = params.duration_cap.is_some_and(|cap| p.duration > cap);
        match (tall, slow) {
            (false, false) => out.kept.push(p),
            (true, false) => out.dropped_tall += 1,
            (false, true) => out.dropped_slow += 1,
            (true, true) => out.dropped_both += 1,
        }
    }
    out
}

/// Total height climbed across the given blocks; 0 for an empty sample.
pub fn truncated_height_sum(pairs: &[Increment]) -> u64 {
    pairs.iter().map(|p| p.height_gain as u64).sum()
}

/// Number of autocorrelation lags checked by [`iid_diagnostics`].
pub const DIAGNOSTIC_LAGS: usize = 5;

/// Minimum sample size for the diagnostics to be meaningful.
pub const MIN_DIAGNOSTIC_PAIRS: usize = 30;

/// Two-sample distance between the halves of one component series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsCheck {
    pub statistic: f64,
    pub p_value: f64,
}

/// Independence diagnostics for a block sample; see [`iid_diagnostics`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IidReport {
    pub pairs: usize,
    /// Fewer than [`MIN_DIAGNOSTIC_PAIRS`] blocks: numbers are reported
    /// but `consistent_with_iid` is forced false.
    pub insufficient_data: bool,
    /// Half-width of the per-coefficient 95% band, `1.96 / sqrt(pairs)`.
    pub band_halfwidth: f64,
    /// Sample autocorrelations of the durations at lags `1..=5`.
    pub duration_autocorr: Vec<f64>,
    /// Sample autocorrelations of the height gains at lags `1..=5`.
    pub height_autocorr: Vec<f64>,
    /// The duration series is constant; its autocorrelations read as 0.
    pub duration_zero_variance: bool,
    pub height_zero_variance: bool,
    /// How many of the (up to 10) coefficients fall outside the band.
    pub band_exceedances: usize,
    /// Omnibus verdict: sufficient data and at most 3 band exceedances.
    /// Under a true i.i.d. law the coefficients are approximately
    /// independent N(0, 1/pairs), so 4 or more exceedances of the 95% band
    /// among 10 has probability ~1e-3 — a 0.1%-level test.
    pub consistent_with_iid: bool,
    /// KS distance between the first and second halves of the durations,
    /// with a permutation p-value (1000 shuffles).
    pub duration_halves: KsCheck,
    pub height_halves: KsCheck,
}

const KS_PERMUTATIONS: usize = 1000;

/// Check a block sample against the i.i.d. hypothesis: lag-1..5
/// autocorrelations of each component with 95% bands, plus a first-half
/// vs second-half KS distance with a permutation p-value. Deterministic
/// given `(pairs, seed)`.
///
/// Degenerate (constant) components are flagged, never NaN: their
/// autocorrelations report as 0 and their KS check as (0, 1).
pub fn iid_diagnostics(pairs: &[Increment], seed: u64) -> IidReport {
    let m = pairs.len();
    let durations: Vec<f64> = pairs.iter().map(|p| p.duration as f64).collect();
    let heights: Vec<f64> = pairs.iter().map(|p| p.height_gain as f64).collect();
    let band = if m > 0 { 1.96 / (m as f64).sqrt() } else { f64::INFINITY };

    let series_autocorr = |xs: &[f64]| -> (Vec<f64>, bool) {
        let mut rs = Vec::with_capacity(DIAGNOSTIC_LAGS);
        let mut degenerate = false;
        for lag in 1..=DIAGNOSTIC_LAGS {
            match stats::autocorrelation(xs, lag) {
                Some(r) => rs.push(r),
                None => {
                    degenerate = xs.len() >= lag + 2;
                    rs.push(0.0);
                }
            }
        }
        (rs, degenerate)
    };
    let (duration_autocorr, duration_zero_variance) = series_autocorr(&durations);
    let (height_autocorr, height_zero_variance) = series_autocorr(&heights);
    let band_exceedances = duration_autocorr
        .iter()
        .chain(&height_autocorr)
        .filter(|r| r.abs() > band)
        .count();

    let mut rng = crate::walk::replica_rng(seed, u64::MAX);
    let ks_halves = |xs: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> KsCheck {
        if xs.len() < 2 {
            return KsCheck { statistic: 0.0, p_value: 1.0 };
        }
        let (a, b) = xs.split_at(xs.len() / 2);
        let statistic = stats::ks_statistic(a, b);
        if statistic == 0.0 {
            return KsCheck { statistic: 0.0, p_value: 1.0 };
        }
        KsCheck {
            statistic,
            p_value: stats::ks_permutation_pvalue(a, b, KS_PERMUTATIONS, rng),
        }
    };
    let duration_halves = ks_halves(&durations, &mut rng);
    let height_halves = ks_halves(&heights, &mut rng);

    let insufficient_data = m < MIN_DIAGNOSTIC_PAIRS;
    IidReport {
        pairs: m,
        insufficient_data,
        band_halfwidth: band,
        duration_autocorr,
        height_autocorr,
        duration_zero_variance,
        height_zero_variance,
        band_exceedances,
        consistent_with_iid: !insufficient_data && band_exceedances <= 3,
        duration_halves,
        height_halves,
    }
}
