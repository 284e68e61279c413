//! Estimation layer: speed, regeneration-block moments, tail
//! probabilities (naive and exponentially tilted), rate curves with a
//! subadditivity audit, decay classification, and increment tail fits.
//!
//! # Replica farms and determinism
//!
//! Sampling functions fan replicas out over the current rayon thread pool.
//! Replica `i` draws from the deterministic stream `stream_base + i` of
//! the run's seed, and results are collected into replica order before any
//! reduction, so every estimate is byte-stable regardless of scheduling or
//! worker count. Samplers keep only what the estimator needs per replica
//! (final heights, skeleton heights, log-weights, increment pairs) — never
//! whole weight tables — so replica counts in the millions stay cheap.
//!
//! Callers running several phases on the same configuration should give
//! each phase a disjoint `stream_base` so phases see independent
//! randomness.
//!
//! # Importance sampling contract
//!
//! Tilted estimators bias every child edge by `e^tilt` during the first
//! `n` steps and carry the exact per-path likelihood ratio in log space;
//! the weighted indicator mean is unbiased for the target probability at
//! any tilt. Positive tilts push the walk up (upper tails), negative ones
//! hold it down (lower tails). At `tilt = 0` the code path, the random
//! stream, and the estimate coincide exactly with naive Monte Carlo.

use rayon::prelude::*;
use serde::Serialize;

use crate::regen::{self, Increment, LevelTimes, TruncationParams};
use crate::stats;
use crate::walk::{self, TraceSummary, WalkConfig, WalkError, WalkState};

/// Default tilt grid for rare-event runs; pick by effective sample size.
pub const DEFAULT_TILT_GRID: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

/// Minimum replicas for a direct speed estimate.
pub const MIN_SPEED_REPLICAS: usize = 2;

/// Minimum confirmed increment pairs for a ratio speed estimate.
pub const MIN_RATIO_PAIRS: usize = 30;

/// Minimum increment pairs for a tail fit.
pub const MIN_TAIL_FIT_PAIRS: usize = 100;

/// An importance-sampled estimate with fewer effective hits than this is
/// flagged degenerate.
pub const DEGENERATE_ESS: f64 = 10.0;

/// Extra unbiased steps run past the event horizon so that skeleton
/// heights near the top are settled (a later return would have to cross
/// everything climbed during the buffer).
pub const DEFAULT_CONFIRM_BUFFER: u64 = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("need at least {needed} replicas, got {got}")]
    InsufficientReplicas { needed: usize, got: usize },
    #[error("replica traces disagree on the horizon")]
    MismatchedHorizons,
    #[error("speed needs a horizon of at least 1 step")]
    ZeroHorizon,
    #[error("need at least {needed} increment pairs, got {got}")]
    InsufficientPairs { needed: usize, got: usize },
    #[error("tilt {tilt} is outside this estimator's allowed range")]
    BadTilt { tilt: f64 },
    #[error("need at least {needed} usable points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("point grid spans a {got:.2}x range, need at least {needed:.0}x")]
    InsufficientSpan { needed: f64, got: f64 },
    #[error("no usable points (every p_hat was nonpositive or nonfinite)")]
    NoUsablePoints,
    #[error(transparent)]
    Walk(#[from] WalkError),
}

// ---------------------------------------------------------------------------
// Replica farms
// ---------------------------------------------------------------------------

/// Run `replicas` full traces in parallel, replica `i` on stream `i`.
///
/// Each trace retains its weight table; prefer the lean samplers below
/// when only heights or increments are needed at scale.
pub fn run_replicas(
    config: &WalkConfig,
    replicas: usize,
) -> Result<Vec<TraceSummary>, EstimatorError> {
    (0..replicas)
        .into_par_iter()
        .map(|i| walk::run_with_stream(config, i as u64).map_err(EstimatorError::from))
        .collect()
}

/// Heights-only replica: drives the walk and drops the arena immediately.
/// Biases child edges by `multiplier` for the first `biased_steps` steps
/// (the remainder run unbiased on the same stream) and returns the height
/// path plus the accumulated log likelihood ratio.
fn lean_trace(
    config: &WalkConfig,
    stream: u64,
    biased_steps: u64,
    multiplier: f64,
) -> Result<(Vec<u32>, f64), WalkError> {
    let mut rng = walk::replica_rng(config.seed, stream);
    let mut state = WalkState::new(config)?;
    for j in 0..config.horizon {
        if multiplier != 1.0 && j < biased_steps {
            state.step_biased(&mut rng, multiplier)?;
        } else {
            state.step(&mut rng)?;
        }
    }
    Ok((state.heights().to_vec(), state.log_likelihood_ratio()))
}

/// Final height of each replica at the configured horizon.
pub fn sample_final_heights(
    config: &WalkConfig,
    replicas: usize,
    stream_base: u64,
) -> Result<Vec<u32>, EstimatorError> {
    config.validate()?;
    (0..replicas)
        .into_par_iter()
        .map(|i| {
            let (heights, _) = lean_trace(config, stream_base + i as u64, 0, 1.0)?;
            Ok(*heights.last().unwrap())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Speed
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedMethod {
    Direct,
    Ratio,
}

/// Point estimate of the escape speed `lim h(X_n)/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub method: SpeedMethod,
    /// Replicas (direct) or increment pairs (ratio).
    pub replicas: usize,
    /// Common horizon (direct) or total block duration (ratio).
    pub horizon: u64,
}

/// Mean and standard error of `h(X_n)/n` across replicas at a common
/// horizon. Needs at least two replicas on the same nonzero horizon.
pub fn speed_direct(traces: &[TraceSummary]) -> Result<SpeedEstimate, EstimatorError> {
    if traces.len() < MIN_SPEED_REPLICAS {
        return Err(EstimatorError::InsufficientReplicas {
            needed: MIN_SPEED_REPLICAS,
            got: traces.len(),
        });
    }
    let horizon = traces[0].steps();
    if traces.iter().any(|t| t.steps() != horizon) {
        return Err(EstimatorError::MismatchedHorizons);
    }
    let finals: Vec<u32> = traces.iter().map(|t| t.final_height()).collect();
    speed_direct_from_heights(&finals, horizon)
}

/// [`speed_direct`] on bare final heights (the lean sampler's output).
pub fn speed_direct_from_heights(
    final_heights: &[u32],
    horizon: u64,
) -> Result<SpeedEstimate, EstimatorError> {
    if final_heights.len() < MIN_SPEED_REPLICAS {
        return Err(EstimatorError::InsufficientReplicas {
            needed: MIN_SPEED_REPLICAS,
            got: final_heights.len(),
        });
    }
    if horizon == 0 {
        return Err(EstimatorError::ZeroHorizon);
    }
    let xs: Vec<f64> = final_heights.iter().map(|&h| h as f64 / horizon as f64).collect();
    let (mean, stderr) = stats::mean_stderr(&xs);
    Ok(SpeedEstimate {
        estimate: mean,
        stderr,
        method: SpeedMethod::Direct,
        replicas: final_heights.len(),
        horizon,
    })
}

/// Direct speed estimate from freshly sampled replicas (lean path).
pub fn sample_speed(
    config: &WalkConfig,
    replicas: usize,
    stream_base: u64,
) -> Result<SpeedEstimate, EstimatorError> {
    let finals = sample_final_heights(config, replicas, stream_base)?;
    speed_direct_from_heights(&finals, config.horizon)
}

/// Ratio speed estimate: mean height gain over mean duration across
/// i.i.d. regeneration blocks, with a delta-method standard error.
pub fn speed_ratio(pairs: &[Increment]) -> Result<SpeedEstimate, EstimatorError> {
    if pairs.len() < MIN_RATIO_PAIRS {
        return Err(EstimatorError::InsufficientPairs {
            needed: MIN_RATIO_PAIRS,
            got: pairs.len(),
        });
    }
    let m = pairs.len() as f64;
    let d: Vec<f64> = pairs.iter().map(|p| p.duration as f64).collect();
    let h: Vec<f64> = pairs.iter().map(|p| p.height_gain as f64).collect();
    let d_mean = stats::mean(&d);
    let h_mean = stats::mean(&h);
    let ratio = h_mean / d_mean;
    // First-order expansion of h_mean/d_mean around the means.
    let var = (stats::sample_variance(&h) - 2.0 * ratio * stats::sample_covariance(&h, &d)
        + ratio * ratio * stats::sample_variance(&d))
        / (m * d_mean * d_mean);
    Ok(SpeedEstimate {
        estimate: ratio,
        stderr: var.max(0.0).sqrt(),
        method: SpeedMethod::Ratio,
        replicas: pairs.len(),
        horizon: pairs.iter().map(|p| p.duration).sum(),
    })
}

// ---------------------------------------------------------------------------
// Regeneration-block harvesting and moments
// ---------------------------------------------------------------------------

/// I.i.d. increment pairs collected from parallel replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementHarvest {
    /// One i.i.d. pair list per replica, in replica order.
    pub per_replica: Vec<Vec<Increment>>,
    /// All pairs concatenated in replica order.
    pub pooled: Vec<Increment>,
    pub margin: u32,
    pub horizon: u64,
}

/// Run replicas and keep only their confirmed i.i.d. increment pairs.
pub fn harvest_increments(
    config: &WalkConfig,
    replicas: usize,
    margin: u32,
    stream_base: u64,
) -> Result<IncrementHarvest, EstimatorError> {
    config.validate()?;
    let per_replica: Vec<Vec<Increment>> = (0..replicas)
        .into_par_iter()
        .map(|i| -> Result<Vec<Increment>, WalkError> {
            let (heights, _) = lean_trace(config, stream_base + i as u64, 0, 1.0)?;
            let times = LevelTimes::from_heights(&heights);
            let records = regen::cut_times(&times, config.horizon, margin);
            Ok(regen::iid_increments(&records))
        })
        .collect::<Result<_, _>>()?;
    let pooled = per_replica.iter().flatten().copied().collect();
    Ok(IncrementHarvest { per_replica, pooled, margin, horizon: config.horizon })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentMoments {
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
}

fn component_moments(xs: &[f64]) -> ComponentMoments {
    let (mean, stderr) = stats::mean_stderr(xs);
    ComponentMoments { mean, variance: stats::sample_variance(xs), stderr }
}

/// Sample moments of the regeneration blocks: mean block duration, mean
/// height gain, and optionally the same after short/tight truncation.
/// Both means are at least 1 for real walk data (every block takes a step
/// and climbs a level).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegenMoments {
    pub pairs: usize,
    pub duration: ComponentMoments,
    pub height: ComponentMoments,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated: Option<TruncatedRegenMoments>,
}

/// Moments over the blocks surviving a short/tight truncation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedRegenMoments {
    pub height_cap: Option<u32>,
    pub duration_cap: Option<u64>,
    pub kept: usize,
    pub dropped: usize,
    pub duration: ComponentMoments,
    pub height: ComponentMoments,
}

/// Block moments from i.i.d. pairs; needs at least two pairs (and two
/// surviving pairs under any requested truncation).
pub fn regen_moments(
    pairs: &[Increment],
    truncation: Option<&TruncationParams>,
) -> Result<RegenMoments, EstimatorError> {
    if pairs.len() < 2 {
        return Err(EstimatorError::InsufficientPairs { needed: 2, got: pairs.len() });
    }
    let d: Vec<f64> = pairs.iter().map(|p| p.duration as f64).collect();
    let h: Vec<f64> = pairs.iter().map(|p| p.height_gain as f64).collect();
    let truncated = match truncation {
        None => None,
        Some(params) => {
            let filtered = regen::filter_short_tight(pairs, params);
            if filtered.kept.len() < 2 {
                return Err(EstimatorError::InsufficientPairs {
                    needed: 2,
                    got: filtered.kept.len(),
                });
            }
            let kd: Vec<f64> = filtered.kept.iter().map(|p| p.duration as f64).collect();
            let kh: Vec<f64> = filtered.kept.iter().map(|p| p.height_gain as f64).collect();
            Some(TruncatedRegenMoments {
                height_cap: params.height_cap,
                duration_cap: params.duration_cap,
                kept: filtered.kept.len(),
                dropped: filtered.dropped(),
                duration: component_moments(&kd),
                height: component_moments(&kh),
            })
        }
    };
    Ok(RegenMoments {
        pairs: pairs.len(),
        duration: component_moments(&d),
        height: component_moments(&h),
        truncated,
    })
}

// ---------------------------------------------------------------------------
// Tail probabilities
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TailMethod {
    Naive,
    Tilted,
    Exact,
}

/// A tail-probability estimate for one `(n, threshold)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub n: u64,
    /// Threshold height (upper events) or ceiling level (lower events).
    pub threshold: u32,
    pub p_hat: f64,
    pub stderr: f64,
    pub method: TailMethod,
    pub replicas: usize,
    pub tilt: f64,
    /// Effective sample size of the hitting replicas' weights (the hit
    /// count itself for naive sampling).
    pub ess: f64,
    /// No replica hit the event. For naive sampling `p_hat` is then the
    /// rule-of-three 95% upper bound `3/replicas` (with `stderr` set to
    /// the same bound), not a point estimate.
    pub zero_hit: bool,
    /// Fewer than [`DEGENERATE_ESS`] effective hits.
    pub degenerate_ess: bool,
}

impl TailEstimate {
    /// An exactly known probability (trivial threshold or oracle value).
    pub fn exact(n: u64, threshold: u32, p: f64) -> Self {
        TailEstimate {
            n,
            threshold,
            p_hat: p,
            stderr: 0.0,
            method: TailMethod::Exact,
            replicas: 0,
            tilt: 0.0,
            ess: f64::INFINITY,
            zero_hit: false,
            degenerate_ess: false,
        }
    }
}

/// Which functional of the trace a tail estimate looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailEvent {
    /// `{h(X_n) >= threshold}` — the raw height at step `n`.
    FinalAtLeast(u32),
    /// `{h(X_n) <= level}`.
    FinalAtMost(u32),
    /// `{skeleton height at n >= threshold}` — the height of the last cut
    /// time before `n` (see [`regen::cut_height_at`]); sits below the raw
    /// height pathwise, so its upper tails are thinner.
    CutHeightAtLeast(u32),
}

/// Sampling knobs shared by the tail estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSettings {
    pub replicas: usize,
    /// Log bias applied to child edges during the first `n` steps.
    pub tilt: f64,
    /// Unbiased steps run past `n` to settle skeleton heights.
    pub confirm_buffer: u64,
    pub stream_base: u64,
}

impl Default for TailSettings {
    fn default() -> Self {
        TailSettings {
            replicas: 10_000,
            tilt: 0.0,
            confirm_buffer: DEFAULT_CONFIRM_BUFFER,
            stream_base: 0,
        }
    }
}

/// Per-replica functionals retained by the tail sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaSample {
    /// `h(X_n)`.
    pub final_height: u32,
    /// Skeleton height at `n`, settled over the buffered trace.
    pub cut_height: u32,
    /// Log likelihood ratio of the first `n` steps (0 when unbiased).
    pub log_weight: f64,
}

/// A shared replica set: one simulation pass, any number of event
/// estimates evaluated pathwise on it (so, e.g., tail probabilities are
/// monotone across thresholds by construction).
#[derive(Debug, Clone, PartialEq)]
pub struct TailSampleSet {
    pub n: u64,
    pub tilt: f64,
    pub confirm_buffer: u64,
    samples: Vec<ReplicaSample>,
}

/// Run the walk to `n + confirm_buffer` steps per replica (tilting only
/// the first `n`) and retain the per-replica functionals.
pub fn sample_tail_set(
    config: &WalkConfig,
    n: u64,
    settings: &TailSettings,
) -> Result<TailSampleSet, EstimatorError> {
    if settings.replicas == 0 {
        return Err(EstimatorError::InsufficientReplicas { needed: 1, got: 0 });
    }
    if !settings.tilt.is_finite() {
        return Err(EstimatorError::BadTilt { tilt: settings.tilt });
    }
    let mut run_config = config.clone();
    run_config.horizon = n + settings.confirm_buffer;
    run_config.validate()?;
    let multiplier = settings.tilt.exp();
    let samples: Vec<ReplicaSample> = (0..settings.replicas)
        .into_par_iter()
        .map(|i| -> Result<ReplicaSample, WalkError> {
            let (heights, log_weight) =
                lean_trace(&run_config, settings.stream_base + i as u64, n, multiplier)?;
            let times = LevelTimes::from_heights(&heights);
            Ok(ReplicaSample {
                final_height: heights[n as usize],
                cut_height: regen::cut_height_at(&times, n),
                log_weight,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(TailSampleSet { n, tilt: settings.tilt, confirm_buffer: settings.confirm_buffer, samples })
}

impl TailSampleSet {
    pub fn replicas(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[ReplicaSample] {
        &self.samples
    }

    /// Estimate one event probability on this replica set.
    pub fn estimate(&self, event: TailEvent) -> TailEstimate {
        let hit = |s: &ReplicaSample| match event {
            TailEvent::FinalAtLeast(t) => s.final_height >= t,
            TailEvent::FinalAtMost(l) => s.final_height <= l,
            TailEvent::CutHeightAtLeast(t) => s.cut_height >= t,
        };
        let threshold = match event {
            TailEvent::FinalAtLeast(t)
            | TailEvent::FinalAtMost(t)
            | TailEvent::CutHeightAtLeast(t) => t,
        };
        let r = self.samples.len();
        // Replica order is fixed, so these folds are scheduling-independent.
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        let mut hits = 0usize;
        for s in &self.samples {
            if hit(s) {
                let w = s.log_weight.exp();
                sum += w;
                sum_sq += w * w;
                hits += 1;
            }
        }
        let naive = self.tilt == 0.0;
        let ess = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
        let mut p_hat = sum / r as f64;
        let mut stderr = if naive {
            stats::binomial_stderr(p_hat, r as u64)
        } else {
            // Sample stderr of the weighted indicators.
            let var = (sum_sq - r as f64 * p_hat * p_hat) / (r as f64 - 1.0);
            (var.max(0.0) / r as f64).sqrt()
        };
        let zero_hit = hits == 0;
        if zero_hit && naive {
            p_hat = 3.0 / r as f64;
            stderr = p_hat;
        }
        TailEstimate {
            n: self.n,
            threshold,
            p_hat,
            stderr,
            method: if naive { TailMethod::Naive } else { TailMethod::Tilted },
            replicas: r,
            tilt: self.tilt,
            ess,
            zero_hit,
            degenerate_ess: ess < DEGENERATE_ESS,
        }
    }

    /// Weighted empirical distribution of `h(X_n)`: one `(height, p_hat,
    /// stderr)` atom per height value `0..=n`, summing to 1 for naive
    /// sampling (and in expectation for tilted).
    pub fn height_distribution(&self) -> Vec<AtomEstimate> {
        let r = self.samples.len() as f64;
        let mut sums = vec![0.0f64; self.n as usize + 1];
        let mut sq = vec![0.0f64; self.n as usize + 1];
        for s in &self.samples {
            let w = s.log_weight.exp();
            sums[s.final_height as usize] += w;
            sq[s.final_height as usize] += w * w;
        }
        (0..=self.n as usize)
            .map(|h| {
                let p = sums[h] / r;
                let stderr = if self.tilt == 0.0 {
                    stats::binomial_stderr(p, self.samples.len() as u64)
                } else {
                    let var = (sq[h] - r * p * p) / (r - 1.0);
                    (var.max(0.0) / r).sqrt()
                };
                AtomEstimate { height: h as u32, p_hat: p, stderr }
            })
            .collect()
    }
}

/// One atom of an empirical height distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomEstimate {
    pub height: u32,
    pub p_hat: f64,
    pub stderr: f64,
}

/// Threshold for the upper-tail event `{h(X_n) >= (speed + epsilon) n}`,
/// as a possibly out-of-range integer.
pub fn upper_threshold(speed: f64, epsilon: f64, n: u64) -> i64 {
    ((speed + epsilon) * n as f64).ceil() as i64
}

/// Naive Monte Carlo for the upper tail `{h(X_n) >= (speed + epsilon) n}`.
/// Estimate the speed first. Thresholds at or below 0 (resp. above `n`)
/// short-circuit to the exact probability 1 (resp. 0) without sampling.
pub fn tail_upper(
    config: &WalkConfig,
    speed: f64,
    epsilon: f64,
    n: u64,
    settings: &TailSettings,
) -> Result<TailEstimate, EstimatorError> {
    if settings.tilt != 0.0 {
        return Err(EstimatorError::BadTilt { tilt: settings.tilt });
    }
    tail_upper_tilted(config, speed, epsilon, n, settings)
}

/// Importance-sampled upper tail; `tilt >= 0` (0 recovers [`tail_upper`]
/// exactly, same streams and all).
pub fn tail_upper_tilted(
    config: &WalkConfig,
    speed: f64,
    epsilon: f64,
    n: u64,
    settings: &TailSettings,
) -> Result<TailEstimate, EstimatorError> {
    if settings.tilt < 0.0 || !settings.tilt.is_finite() {
        return Err(EstimatorError::BadTilt { tilt: settings.tilt });
    }
    let t = upper_threshold(speed, epsilon, n);
    if t <= 0 {
        return Ok(TailEstimate::exact(n, 0, 1.0));
    }
    if t > n as i64 {
        return Ok(TailEstimate::exact(n, t.min(u32::MAX as i64) as u32, 0.0));
    }
    let set = sample_tail_set(config, n, settings)?;
    Ok(set.estimate(TailEvent::FinalAtLeast(t as u32)))
}

/// Naive Monte Carlo for the lower tail `{h(X_n) <= level}`. A level at
/// or above `n` short-circuits to the exact probability 1.
pub fn tail_lower(
    config: &WalkConfig,
    level: u32,
    n: u64,
    settings: &TailSettings,
) -> Result<TailEstimate, EstimatorError> {
    if settings.tilt != 0.0 {
        return Err(EstimatorError::BadTilt { tilt: settings.tilt });
    }
    tail_lower_tilted(config, level, n, settings)
}

/// Importance-sampled lower tail; `tilt <= 0` (the proposal holds the
/// walk down, the likelihood ratio corrects it).
pub fn tail_lower_tilted(
    config: &WalkConfig,
    level: u32,
    n: u64,
    settings: &TailSettings,
) -> Result<TailEstimate, EstimatorError> {
    if settings.tilt > 0.0 || !settings.tilt.is_finite() {
        return Err(EstimatorError::BadTilt { tilt: settings.tilt });
    }
    if level as u64 >= n {
        return Ok(TailEstimate::exact(n, level, 1.0));
    }
    let set = sample_tail_set(config, n, settings)?;
    Ok(set.estimate(TailEvent::FinalAtMost(level)))
}

/// Level for the lower-tail event `{h(X_n) <= (speed - epsilon) n}`,
/// clamped at 0.
pub fn lower_level(speed: f64, epsilon: f64, n: u64) -> u32 {
    (((speed - epsilon) * n as f64).floor().max(0.0)) as u32
}

// ---------------------------------------------------------------------------
// Rate curves and the subadditivity audit
// ---------------------------------------------------------------------------

/// One usable grid point of a rate curve: `rate = -log(p_hat) / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub n: u64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// An empirical decay-rate curve with a plateau fit over the largest-n
/// third. `spread` is the (min, max) of the pointwise rates — reported
/// instead of any convergence claim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCurve {
    pub points: Vec<RatePoint>,
    pub plateau: Option<f64>,
    pub plateau_ci: Option<(f64, f64)>,
    pub spread: Option<(f64, f64)>,
    /// Fewer than 4 usable points: the fit is reported but untrustworthy.
    pub too_few_points: bool,
}

fn usable_for_rates(e: &TailEstimate) -> bool {
    e.p_hat > 0.0 && e.p_hat.is_finite() && e.stderr.is_finite() && !e.zero_hit
}

/// Log standard error of an estimate, by the delta method.
fn log_stderr(e: &TailEstimate) -> f64 {
    e.stderr / e.p_hat
}

/// Turn tail estimates over an n-grid into a rate curve. Zero-hit and
/// nonpositive estimates are skipped; per-point CIs are delta-method 95%
/// intervals; the plateau is the mean of the largest-n third of the
/// points with a percentile bootstrap CI (deterministic in `seed`).
pub fn rate_curve(estimates: &[TailEstimate], seed: u64) -> RateCurve {
    let mut usable: Vec<&TailEstimate> = estimates.iter().filter(|e| usable_for_rates(e)).collect();
    usable.sort_by_key(|e| e.n);
    let points: Vec<RatePoint> = usable
        .iter()
        .map(|e| {
            let a = -e.p_hat.ln();
            let sigma = log_stderr(e);
            RatePoint {
                n: e.n,
                rate: a / e.n as f64,
                ci_lo: (a - 1.96 * sigma) / e.n as f64,
                ci_hi: (a + 1.96 * sigma) / e.n as f64,
            }
        })
        .collect();
    let too_few_points = points.len() < 4;
    let (plateau, plateau_ci, spread) = if points.is_empty() {
        (None, None, None)
    } else {
        let top = points.len().div_ceil(3).max(1);
        let tail_rates: Vec<f64> =
            points[points.len() - top..].iter().map(|p| p.rate).collect();
        let mut rng = walk::replica_rng(seed, u64::MAX - 1);
        let ci = stats::bootstrap_mean_ci(&tail_rates, 1000, &mut rng);
        let lo = points.iter().map(|p| p.rate).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.rate).fold(f64::NEG_INFINITY, f64::max);
        (Some(stats::mean(&tail_rates)), Some(ci), Some((lo, hi)))
    };
    RateCurve { points, plateau, plateau_ci, spread, too_few_points }
}

/// One checked instance of the approximate-subadditivity inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditPair {
    pub n: u64,
    pub m: u64,
    /// The composite index `n + m + 1`.
    pub target: u64,
    /// `a_{n+m+1}`.
    pub lhs: f64,
    /// `a_n + a_m + log(min(n,m)) + cap·log 2 + log(b+1) + 3·combined MC
    /// error`.
    pub rhs: f64,
    pub satisfied: bool,
}

/// Result of auditing a tail grid for approximate subadditivity of
/// `a_n = -log p_hat(n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub pairs: Vec<AuditPair>,
    pub checked: usize,
    pub satisfied: usize,
    pub all_satisfied: bool,
    /// Root-visit cap entering the slack term as `cap·log 2`.
    pub visits_cap: u32,
}

/// Check every grid pair `(n, m)` with `n + m + 1` also on the grid
/// against `a_{n+m+1} <= a_n + a_m + log(min(n,m)) + cap·log 2 +
/// log(b+1) + 3·err`, where `err` combines the three delta-method log
/// errors in quadrature. Subadditive-with-slack decay families satisfy
/// this with room to spare; a super-exponential kink fails it.
pub fn subadditivity_audit(estimates: &[TailEstimate], b: u32, visits_cap: u32) -> AuditReport {
    let usable: Vec<&TailEstimate> = estimates.iter().filter(|e| usable_for_rates(e)).collect();
    let lookup = |n: u64| usable.iter().find(|e| e.n == n);
    let slack_const = (visits_cap as f64) * std::f64::consts::LN_2 + ((b + 1) as f64).ln();
    let mut pairs = Vec::new();
    for (i, en) in usable.iter().enumerate() {
        for em in &usable[i..] {
            let Some(et) = lookup(en.n + em.n + 1) else { continue };
            let a = |e: &TailEstimate| -e.p_hat.ln();
            let err = (log_stderr(en).powi(2) + log_stderr(em).powi(2)
                + log_stderr(et).powi(2))
            .sqrt();
            let lhs = a(et);
            let rhs = a(en) + a(em)
                + (en.n.min(em.n) as f64).ln()
                + slack_const
                + 3.0 * err;
            pairs.push(AuditPair {
                n: en.n,
                m: em.n,
                target: et.n,
                lhs,
                rhs,
                satisfied: lhs <= rhs,
            });
        }
    }
    let checked = pairs.len();
    let satisfied = pairs.iter().filter(|p| p.satisfied).count();
    AuditReport { pairs, checked, satisfied, all_satisfied: satisfied == checked, visits_cap }
}

// ---------------------------------------------------------------------------
// Decay classification
// ---------------------------------------------------------------------------

/// One `(n, p_hat, stderr)` observation for [`decay_classify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayPoint {
    pub n: f64,
    pub p: f64,
    pub stderr: f64,
}

impl DecayPoint {
    pub fn from_estimate(e: &TailEstimate) -> Self {
        DecayPoint { n: e.n as f64, p: e.p_hat, stderr: e.stderr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayClass {
    Polynomial,
    Exponential,
    Inconclusive,
}

/// A weighted line fit in one of the two decay models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitReport {
    /// Slope in the model's coordinates: `d log p / d log n` (polynomial)
    /// or `d log p / d n` (exponential).
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub weighted_rss: f64,
    pub points: usize,
}

impl From<stats::LineFit> for FitReport {
    fn from(f: stats::LineFit) -> Self {
        FitReport {
            slope: f.slope,
            intercept: f.intercept,
            slope_stderr: f.slope_stderr,
            r_squared: f.r_squared,
            weighted_rss: f.weighted_rss,
            points: f.points,
        }
    }
}

/// Polynomial-vs-exponential verdict with both fits and the
/// information-criterion gap that decided it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub class: DecayClass,
    pub polynomial: Option<FitReport>,
    pub exponential: Option<FitReport>,
    /// IC(polynomial) − IC(exponential); above +2 the exponential model
    /// wins, below −2 the polynomial one, otherwise inconclusive.
    pub ic_gap: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Minimum usable points for [`decay_classify`].
pub const MIN_DECAY_POINTS: usize = 5;

/// Required multiplicative span of the n-grid for [`decay_classify`].
pub const MIN_DECAY_SPAN: f64 = 4.0;

/// Classify a decaying point set as polynomial (`log p` linear in
/// `log n`) or exponential (`log p` linear in `n`) by weighted least
/// squares in both models and an information-criterion gap with decision
/// threshold 2. Nonpositive or nonfinite `p` values are excluded.
pub fn decay_classify(points: &[DecayPoint]) -> Result<DecayReport, EstimatorError> {
    let usable: Vec<&DecayPoint> = points
        .iter()
        .filter(|p| p.p > 0.0 && p.p.is_finite() && p.n > 0.0 && p.stderr.is_finite())
        .collect();
    let excluded = points.len() - usable.len();
    if usable.is_empty() {
        return Err(EstimatorError::NoUsablePoints);
    }
    if usable.len() < MIN_DECAY_POINTS {
        return Err(EstimatorError::InsufficientPoints {
            needed: MIN_DECAY_POINTS,
            got: usable.len(),
        });
    }
    let n_min = usable.iter().map(|p| p.n).fold(f64::INFINITY, f64::min);
    let n_max = usable.iter().map(|p| p.n).fold(0.0, f64::max);
    if n_max / n_min < MIN_DECAY_SPAN {
        return Err(EstimatorError::InsufficientSpan {
            needed: MIN_DECAY_SPAN,
            got: n_max / n_min,
        });
    }
    let y: Vec<f64> = usable.iter().map(|p| p.p.ln()).collect();
    // Delta-method weights on the log scale; exact points get a floor.
    let w: Vec<f64> = usable
        .iter()
        .map(|p| {
            let sigma = (p.stderr / p.p).max(1e-9);
            1.0 / (sigma * sigma)
        })
        .collect();
    let x_poly: Vec<f64> = usable.iter().map(|p| p.n.ln()).collect();
    let x_expo: Vec<f64> = usable.iter().map(|p| p.n).collect();
    let poly = stats::weighted_least_squares(&x_poly, &y, &w);
    let expo = stats::weighted_least_squares(&x_expo, &y, &w);
    // The per-point errors are known, so the Gaussian likelihood is fully
    // specified and the IC is chi² + 2·params; the weighted RSS already is
    // that chi², and the parameter penalties cancel between the models.
    let ic_gap = match (&poly, &expo) {
        (Some(p), Some(e)) => p.weighted_rss - e.weighted_rss,
        _ => 0.0,
    };
    let class = if ic_gap > 2.0 {
        DecayClass::Exponential
    } else if ic_gap < -2.0 {
        DecayClass::Polynomial
    } else {
        DecayClass::Inconclusive
    };
    Ok(DecayReport {
        class,
        polynomial: poly.map(FitReport::from),
        exponential: expo.map(FitReport::from),
        ic_gap,
        used: usable.len(),
        excluded,
    })
}

// ---------------------------------------------------------------------------
// Increment tail fits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IncrementComponent {
    Duration,
    Height,
}

/// One point of an empirical survival function `P(X >= m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalPoint {
    pub m: u64,
    pub survival: f64,
    pub stderr: f64,
}

/// Comparison of the empirical survival against a geometric bound
/// `base^k` at `k = 1..=5`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub base: f64,
    pub rows: Vec<BoundCheckRow>,
    pub violated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheckRow {
    pub k: u32,
    pub survival: f64,
    pub stderr: f64,
    pub bound: f64,
    /// `survival > bound + 3·stderr`.
    pub exceeds: bool,
}

/// Exponential-tail fit of one block component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementTailFit {
    pub component: IncrementComponent,
    pub pairs: usize,
    pub survival: Vec<SurvivalPoint>,
    /// Fitted decay rate of `log P(X >= m)` per unit `m` (positive).
    pub rate: Option<f64>,
    pub rate_ci: Option<(f64, f64)>,
    /// Too few strictly-interior survival points (< 3) to fit a rate —
    /// e.g. a constant component whose survival jumps from 1 to 0.
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_check: Option<BoundCheck>,
}

/// Survival function `P(X >= m)` of a positive integer sample over
/// `m = 1..=max`, with binomial standard errors.
fn survival_points(values: &[u64]) -> Vec<SurvivalPoint> {
    let count = values.len() as f64;
    let max = *values.iter().max().unwrap();
    let mut at_least = vec![0u64; max as usize + 2];
    for &v in values {
        at_least[v as usize] += 1;
    }
    // Suffix-sum the value histogram into survival counts.
    for m in (0..=max as usize).rev() {
        at_least[m] += at_least[m + 1];
    }
    (1..=max)
        .map(|m| {
            let s = at_least[m as usize] as f64 / count;
            SurvivalPoint { m, survival: s, stderr: stats::binomial_stderr(s, values.len() as u64) }
        })
        .collect()
}

/// Weighted log-linear fit over the strictly interior survival points;
/// `None` when fewer than 3 of them exist.
fn interior_rate_fit(survival: &[SurvivalPoint]) -> Option<stats::LineFit> {
    let interior: Vec<&SurvivalPoint> =
        survival.iter().filter(|p| p.survival > 0.0 && p.survival < 1.0).collect();
    if interior.len() < 3 {
        return None;
    }
    let x: Vec<f64> = interior.iter().map(|p| p.m as f64).collect();
    let y: Vec<f64> = interior.iter().map(|p| p.survival.ln()).collect();
    let w: Vec<f64> = interior
        .iter()
        .map(|p| {
            let sigma = (p.stderr / p.survival).max(1e-9);
            1.0 / (sigma * sigma)
        })
        .collect();
    stats::weighted_least_squares(&x, &y, &w)
}

/// Empirical survival function of block durations or height gains with a
/// log-linear rate fit; needs at least 100 pairs. The rate CI comes from
/// a delete-one-group jackknife over the pairs. Pass a geometric base
/// (0.115 for the reinforced-regime height bound) to also compare the
/// survival against `base^k + 3·stderr` at `k <= 5`.
pub fn increment_tail_fit(
    pairs: &[Increment],
    component: IncrementComponent,
    geometric_bound: Option<f64>,
) -> Result<IncrementTailFit, EstimatorError> {
    if pairs.len() < MIN_TAIL_FIT_PAIRS {
        return Err(EstimatorError::InsufficientPairs {
            needed: MIN_TAIL_FIT_PAIRS,
            got: pairs.len(),
        });
    }
    let values: Vec<u64> = pairs
        .iter()
        .map(|p| match component {
            IncrementComponent::Duration => p.duration,
            IncrementComponent::Height => p.height_gain as u64,
        })
        .collect();
    let survival = survival_points(&values);
    let full_fit = interior_rate_fit(&survival);
    let degenerate = full_fit.is_none();
    let (rate, rate_ci) = match full_fit {
        None => (None, None),
        Some(fit) => {
            let rate = -fit.slope;
            // Survival points are nested and so strongly correlated; the
            // per-point WLS stderr undercovers. Jackknife the whole
            // survival-plus-fit pipeline over pair groups instead.
            let groups = 50.min(values.len());
            let mut rates = Vec::with_capacity(groups);
            for g in 0..groups {
                let subset: Vec<u64> = values
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % groups != g)
                    .map(|(_, &v)| v)
                    .collect();
                if let Some(f) = interior_rate_fit(&survival_points(&subset)) {
                    rates.push(-f.slope);
                }
            }
            if rates.len() < 2 {
                (Some(rate), None)
            } else {
                let g = rates.len() as f64;
                let mean = stats::mean(&rates);
                let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() * (g - 1.0) / g;
                let se = var.sqrt();
                (Some(rate), Some((rate - 1.96 * se, rate + 1.96 * se)))
            }
        }
    };
    let bound_check = geometric_bound.map(|base| {
        let rows: Vec<BoundCheckRow> = (1..=5u32)
            .map(|k| {
                let (s, se) = survival
                    .get(k as usize - 1)
                    .map(|p| (p.survival, p.stderr))
                    .unwrap_or((0.0, 0.0));
                let bound = base.powi(k as i32);
                BoundCheckRow { k, survival: s, stderr: se, bound, exceeds: s > bound + 3.0 * se }
            })
            .collect();
        let violated = rows.iter().any(|r| r.exceeds);
        BoundCheck { base, rows, violated }
    });
    Ok(IncrementTailFit {
        component,
        pairs: pairs.len(),
        survival,
        rate,
        rate_ci,
        degenerate,
        bound_check,
    })
}
