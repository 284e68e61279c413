//! Acceptance suite: ten numbered checks covering the toolkit's core
//! claims, each printed as one PASS/FAIL line (`--nocapture` shows them
//! on success too).
//!
//! Criterion 5 is expected to FAIL and is reported that way on purpose:
//! it checks the block height gains against the literal geometric bound
//! `0.115^k` at `k = 1..=5`, and that bound is unsatisfiable at `k = 1`
//! because every regeneration block climbs at least one level, making
//! `P(H >= 1) = 1`. The empirical survival also clears the bound at
//! `k = 2..=5` by far more than Monte Carlo error. The suite treats that
//! documented red as expected; any other failure fails the test.

use std::time::Instant;

use rand::Rng;
use rrwalk::estimators::{
    self, DecayClass, DecayPoint, IncrementComponent, SpeedEstimate, TailSettings,
};
use rrwalk::oracle::{self, OracleOptions};
use rrwalk::regen;
use rrwalk::walk::{self, Scheme, WalkConfig};

struct Outcome {
    criterion: usize,
    title: &'static str,
    pass: bool,
    expected_red: bool,
    seconds: f64,
    detail: String,
}

/// Disjoint RNG stream ranges: criterion `c`, slot `s` owns
/// `[c<<40 | s<<20, c<<40 | (s+1)<<20)` — ample for any replica count
/// used here and non-overlapping across criteria.
fn stream(criterion: u64, slot: u64) -> u64 {
    (criterion << 40) | (slot << 20)
}

fn binom_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn agreement_sigma(a: &SpeedEstimate, b: &SpeedEstimate) -> f64 {
    (a.estimate - b.estimate).abs() / (a.stderr * a.stderr + b.stderr * b.stderr).sqrt()
}

// ---------------------------------------------------------------------------
// 1. Oracle equivalence
// ---------------------------------------------------------------------------

type SchemeCtor = fn(f64) -> Scheme;

fn c1_oracle_equivalence() -> Outcome {
    let t = Instant::now();
    const REPLICAS: usize = 100_000;
    let schemes: [(&str, SchemeCtor); 3] = [
        ("linear", |c| Scheme::linear(c).unwrap()),
        ("once", |c| Scheme::once(c).unwrap()),
        ("2-times", |c| Scheme::k_times(c, 2).unwrap()),
    ];
    let mut atoms = 0usize;
    let mut slot = 0u64;
    let mut failures = Vec::new();
    for (name, make) in schemes {
        for b in [2u32, 3, 4] {
            for c in [1.0f64, 2.0] {
                for n in [2u64, 4, 6] {
                    let config = WalkConfig::new(b, make(c), n, 101).unwrap();
                    let exact =
                        oracle::exact_distribution_f64(&config, n, &OracleOptions::default())
                            .unwrap();
                    let finals =
                        estimators::sample_final_heights(&config, REPLICAS, stream(1, slot))
                            .unwrap();
                    slot += 1;
                    let mut counts = vec![0u64; exact.len()];
                    for &h in &finals {
                        counts[h as usize] += 1;
                    }
                    for (h, &p) in exact.iter().enumerate() {
                        let mc = counts[h] as f64 / REPLICAS as f64;
                        let se = binom_se(p, REPLICAS);
                        atoms += 1;
                        // Zero-variance atoms (structurally impossible
                        // heights) must agree exactly.
                        let ok =
                            if se == 0.0 { mc == p } else { (mc - p).abs() <= 3.0 * se };
                        if !ok {
                            failures.push(format!(
                                "{name} b={b} c={c} n={n} h={h}: mc {mc:.5} vs exact {p:.5} (se {se:.1e})"
                            ));
                        }
                    }
                }
            }
        }
    }
    let seconds = t.elapsed().as_secs_f64();
    Outcome {
        criterion: 1,
        title: "oracle equivalence (3 schemes x b in 2..4 x c in 1..2 x n in 2..6, 1e5 replicas)",
        pass: failures.is_empty() && seconds < 120.0,
        expected_red: false,
        seconds,
        detail: if failures.is_empty() {
            format!("{atoms}/{atoms} atoms within 3 binomial stderr over 54 configurations")
        } else {
            format!("{} of {atoms} atoms off: {}", failures.len(), failures.join("; "))
        },
    }
}

// ---------------------------------------------------------------------------
// 2. Simple-walk speed calibration
// ---------------------------------------------------------------------------

fn c2_simple_walk_speed() -> Outcome {
    let t = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for (slot, b) in [2u32, 3].into_iter().enumerate() {
        // Birth-death drift of the height chain: up b/(b+1), down 1/(b+1).
        let truth = (b as f64 - 1.0) / (b as f64 + 1.0);
        let config = WalkConfig::new(b, Scheme::linear(1.0).unwrap(), 100_000, 102).unwrap();
        let est = estimators::sample_speed(&config, 100, stream(2, slot as u64)).unwrap();
        let sigma = (est.estimate - truth).abs() / est.stderr;
        pass &= sigma <= 3.0;
        details.push(format!(
            "b={b}: {:.6} vs {truth:.6} ({sigma:.2} stderr)",
            est.estimate
        ));
    }
    let seconds = t.elapsed().as_secs_f64();
    Outcome {
        criterion: 2,
        title: "simple-walk speed matches (b-1)/(b+1) (c=1, 100 x 1e5 steps)",
        pass: pass && seconds < 60.0,
        expected_red: false,
        seconds,
        detail: details.join("; "),
    }
}

// ---------------------------------------------------------------------------
// 3./4. Speed upper bounds for the two reinforced models
// ---------------------------------------------------------------------------

fn c3_linear_speed_bound() -> (Outcome, SpeedEstimate) {
    let t = Instant::now();
    let config = WalkConfig::new(70, Scheme::linear(2.0).unwrap(), 100_000, 103).unwrap();
    let est = estimators::sample_speed(&config, 100, stream(3, 0)).unwrap();
    let bound = 70.0 / 72.0;
    let upper = est.estimate + 3.0 * est.stderr;
    let seconds = t.elapsed().as_secs_f64();
    let outcome = Outcome {
        criterion: 3,
        title: "linear c=2, b=70: speed + 3 stderr below b/(b+2)",
        pass: upper < bound && seconds < 300.0,
        expected_red: false,
        seconds,
        detail: format!("{:.6} + 3x{:.1e} = {upper:.6} < {bound:.6}", est.estimate, est.stderr),
    };
    (outcome, est)
}

fn c4_once_speed_bound() -> (Outcome, SpeedEstimate) {
    let t = Instant::now();
    let config = WalkConfig::new(2, Scheme::once(2.0).unwrap(), 100_000, 104).unwrap();
    let est = estimators::sample_speed(&config, 100, stream(4, 0)).unwrap();
    let bound = 0.5;
    let upper = est.estimate + 3.0 * est.stderr;
    let seconds = t.elapsed().as_secs_f64();
    let outcome = Outcome {
        criterion: 4,
        title: "once c=2, b=2: speed + 3 stderr below b/(b+c)",
        pass: upper < bound && seconds < 120.0,
        expected_red: false,
        seconds,
        detail: format!("{:.6} + 3x{:.1e} = {upper:.6} < {bound:.6}", est.estimate, est.stderr),
    };
    (outcome, est)
}

// ---------------------------------------------------------------------------
// 5. Geometric height-gain bound (documented red)
// ---------------------------------------------------------------------------

fn c5_height_gain_bound() -> (Outcome, Vec<regen::Increment>) {
    let t = Instant::now();
    let config = WalkConfig::new(70, Scheme::linear(2.0).unwrap(), 5_000, 105).unwrap();
    let harvest = estimators::harvest_increments(&config, 8, 8, stream(5, 0)).unwrap();
    let pairs = harvest.pooled.clone();
    assert!(
        pairs.len() >= 10_000,
        "criterion 5 needs at least 1e4 confirmed increments, harvested {}",
        pairs.len()
    );
    let fit =
        estimators::increment_tail_fit(&pairs, IncrementComponent::Height, Some(0.115)).unwrap();
    let check = fit.bound_check.clone().unwrap();
    let exceeded: Vec<String> = check
        .rows
        .iter()
        .filter(|r| r.exceeds)
        .map(|r| format!("k={}: {:.4} > {:.4}+3x{:.1e}", r.k, r.survival, r.bound, r.stderr))
        .collect();
    let seconds = t.elapsed().as_secs_f64();
    let outcome = Outcome {
        criterion: 5,
        title: "block height-gain survival within 0.115^k + 3 stderr at k=1..5 (b=70)",
        pass: !check.violated && seconds < 600.0,
        expected_red: true,
        seconds,
        detail: if check.violated {
            format!(
                "expected red — every block climbs >= 1 level so survival(1) = 1; {} pairs; exceeded at {}",
                pairs.len(),
                exceeded.join(", ")
            )
        } else {
            format!("bound holds on {} pairs", pairs.len())
        },
    };
    (outcome, pairs)
}

// ---------------------------------------------------------------------------
// 6. Ratio vs direct speed agreement
// ---------------------------------------------------------------------------

fn c6_speed_estimator_agreement(
    direct70: &SpeedEstimate,
    pairs70: &[regen::Increment],
    direct_once: &SpeedEstimate,
) -> Outcome {
    let t = Instant::now();
    let ratio70 = estimators::speed_ratio(pairs70).unwrap();
    let config = WalkConfig::new(2, Scheme::once(2.0).unwrap(), 25_000, 104).unwrap();
    let harvest = estimators::harvest_increments(&config, 8, 14, stream(6, 0)).unwrap();
    let ratio_once = estimators::speed_ratio(&harvest.pooled).unwrap();
    let s70 = agreement_sigma(direct70, &ratio70);
    let s_once = agreement_sigma(direct_once, &ratio_once);
    let seconds = t.elapsed().as_secs_f64();
    Outcome {
        criterion: 6,
        title: "ratio and direct speed estimators agree within 3 combined stderr (both models)",
        pass: s70 <= 3.0 && s_once <= 3.0,
        expected_red: false,
        seconds,
        detail: format!(
            "linear b=70: {:.6} vs {:.6} ({s70:.2} stderr, {} blocks); once b=2: {:.6} vs {:.6} ({s_once:.2} stderr, {} blocks)",
            direct70.estimate,
            ratio70.estimate,
            ratio70.replicas,
            direct_once.estimate,
            ratio_once.estimate,
            ratio_once.replicas
        ),
    }
}

// ---------------------------------------------------------------------------
// 7. Stay-low decay dichotomy
// ---------------------------------------------------------------------------

fn c7_decay_dichotomy() -> Outcome {
    let t = Instant::now();
    // Prerequisite gate: the classifier itself must be >= 95% accurate on
    // randomized synthetic curves at 1% noise.
    let grid = [10.0, 20.0, 40.0, 80.0, 160.0];
    let mut rng = walk::replica_rng(424242, 0);
    let mut correct = 0;
    for trial in 0..100 {
        let expo = trial % 2 == 0;
        let rate = 0.05 + 0.25 * rng.random::<f64>();
        let s = 1.0 + 2.0 * rng.random::<f64>();
        let c = 0.5 + 10.0 * rng.random::<f64>();
        let points: Vec<DecayPoint> = grid
            .iter()
            .map(|&n| {
                let clean = if expo { (-rate * n).exp() } else { c * n.powf(-s) };
                let noisy = clean * (1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0));
                DecayPoint { n, p: noisy, stderr: 0.01 * noisy }
            })
            .collect();
        let got = estimators::decay_classify(&points).unwrap().class;
        let want = if expo { DecayClass::Exponential } else { DecayClass::Polynomial };
        if got == want {
            correct += 1;
        }
    }
    let gate = correct >= 95;

    // The walk event {h(X_n) <= 1} on a doubling n-grid, tilted toward
    // the root for the deep points.
    let mut verdicts = Vec::new();
    let mut pass = gate;
    for (slot, scheme, want) in [
        (0u64, Scheme::linear(2.0).unwrap(), DecayClass::Polynomial),
        (1, Scheme::once(2.0).unwrap(), DecayClass::Exponential),
    ] {
        let config = WalkConfig::new(2, scheme, 1, 31).unwrap();
        let mut points = Vec::new();
        for (i, n) in [10u64, 20, 40, 80, 160].into_iter().enumerate() {
            let settings = TailSettings {
                replicas: 20_000,
                tilt: if n == 10 { 0.0 } else { -0.5 },
                confirm_buffer: 0,
                stream_base: stream(7, slot * 8 + i as u64),
            };
            let est = estimators::tail_lower_tilted(&config, 1, n, &settings).unwrap();
            points.push(DecayPoint::from_estimate(&est));
        }
        let report = estimators::decay_classify(&points).unwrap();
        pass &= report.class == want;
        verdicts.push(format!(
            "{}: {:?} (ic gap {:+.1}, want {want:?})",
            if slot == 0 { "linear" } else { "once" },
            report.class,
            report.ic_gap
        ));
    }
    let seconds = t.elapsed().as_secs_f64();
    Outcome {
        criterion: 7,
        title: "stay-low decay dichotomy: polynomial for linear, exponential for once",
        pass: pass && seconds < 900.0,
        expected_red: false,
        seconds,
        detail: format!("classifier gate {correct}/100; {}", verdicts.join("; ")),
    }
}

// ---------------------------------------------------------------------------
// 8. Upper-tail rate positivity and subadditivity audit
// ---------------------------------------------------------------------------

fn c8_upper_rate_positivity() -> Outcome {
    let t = Instant::now();
    let grid: Vec<u64> = (0..16).map(|k| 10 + 11 * k).collect();
    let mut details = Vec::new();
    let mut pass = true;
    for (slot, scheme, hint, audited) in [
        (0u64, Scheme::linear(2.0).unwrap(), 0.042, true),
        (1, Scheme::once(2.0).unwrap(), 0.139, false),
    ] {
        let config = WalkConfig::new(2, scheme, 1, 37).unwrap();
        let mut points = Vec::new();
        for (i, &n) in grid.iter().enumerate() {
            let settings = TailSettings {
                replicas: 20_000,
                tilt: 0.3,
                confirm_buffer: 0,
                stream_base: stream(8, slot * 32 + i as u64),
            };
            points
                .push(estimators::tail_upper_tilted(&config, hint, 0.1, n, &settings).unwrap());
        }
        let curve = estimators::rate_curve(&points, 99);
        let positive = curve.points.len() == grid.len()
            && curve.points.iter().all(|p| p.rate > 0.0 && p.ci_lo > 0.0);
        pass &= positive;
        let name = if slot == 0 { "linear" } else { "once" };
        details.push(format!(
            "{name}: {}/{} rate CIs exclude 0, plateau {}",
            curve.points.iter().filter(|p| p.ci_lo > 0.0).count(),
            grid.len(),
            curve
                .plateau
                .map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "n/a".to_string()),
        ));
        if audited {
            let audit = estimators::subadditivity_audit(&points, 2, 12);
            pass &= audit.checked >= 10 && audit.all_satisfied;
            details.push(format!(
                "audit {}/{} pairs satisfied",
                audit.satisfied, audit.checked
            ));
        }
    }
    let seconds = t.elapsed().as_secs_f64();
    Outcome {
        criterion: 8,
        title: "upper-tail rates positive at every grid point (eps=0.1) + subadditivity audit",
        pass: pass && seconds < 900.0,
        expected_red: false,
        seconds,
        detail: details.join("; "),
    }
}

// ---------------------------------------------------------------------------
// 9. Block independence diagnostics
// ---------------------------------------------------------------------------

fn c9_iid_diagnostics() -> Outcome {
    let t = Instant::now();
    let config = WalkConfig::new(2, Scheme::linear(2.0).unwrap(), 25_000, 109).unwrap();
    let mut consistent = 0usize;
    let mut exceedances = 0usize;
    let mut short = 0usize;
    for run in 0..50u64 {
        let harvest = estimators::harvest_increments(&config, 8, 14, stream(9, run)).unwrap();
        let report = regen::iid_diagnostics(&harvest.pooled, run);
        if report.insufficient_data {
            short += 1;
            continue;
        }
        if report.consistent_with_iid {
            consistent += 1;
        }
        exceedances += report.band_exceedances;
    }
    let seconds = t.elapsed().as_secs_f64();
    Outcome {
        criterion: 9,
        title: "lag 1..5 autocorrelations of (duration, height gain) within 95% bands in >= 45/50 runs",
        pass: consistent >= 45 && short == 0,
        expected_red: false,
        seconds,
        detail: format!(
            "{consistent}/50 runs consistent; pooled band exceedances {exceedances}/500 ({:.1}%)",
            100.0 * exceedances as f64 / 500.0
        ),
    }
}

// ---------------------------------------------------------------------------
// 10. Tilted-estimator unbiasedness at an exactly known point
// ---------------------------------------------------------------------------

fn c10_tilted_unbiasedness() -> Outcome {
    let t = Instant::now();
    let config = WalkConfig::new(2, Scheme::linear(2.0).unwrap(), 6, 43).unwrap();
    let dist = oracle::exact_distribution_f64(&config, 6, &OracleOptions::default()).unwrap();
    let exact: f64 = dist[4..].iter().sum();
    let mut details = Vec::new();
    let mut pass = true;
    let mut slot = 0u64;
    for tilt in [0.0, 0.25, 0.5] {
        let mut sum = 0.0;
        let mut var_sum = 0.0;
        for _ in 0..200 {
            let settings =
                TailSettings { replicas: 500, tilt, confirm_buffer: 0, stream_base: stream(10, slot) };
            slot += 1;
            // speed 0.5, eps 0.1 pins the threshold at ceil(0.6 * 6) = 4.
            let est = estimators::tail_upper_tilted(&config, 0.5, 0.1, 6, &settings).unwrap();
            assert_eq!(est.threshold, 4);
            sum += est.p_hat;
            var_sum += est.stderr * est.stderr;
        }
        let mean = sum / 200.0;
        let pooled = var_sum.sqrt() / 200.0;
        let sigma = (mean - exact).abs() / pooled;
        pass &= sigma <= 3.0;
        details.push(format!("tilt {tilt}: mean {mean:.5} ({sigma:.2} pooled stderr)"));
    }
    let seconds = t.elapsed().as_secs_f64();
    Outcome {
        criterion: 10,
        title: "tilted estimator unbiased at n=6 vs exact survival (200 reps x 500 replicas)",
        pass,
        expected_red: false,
        seconds,
        detail: format!("exact P(h >= 4) = {exact:.5}; {}", details.join("; ")),
    }
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let mut outcomes = Vec::new();
    outcomes.push(c1_oracle_equivalence());
    outcomes.push(c2_simple_walk_speed());
    let (o3, direct70) = c3_linear_speed_bound();
    outcomes.push(o3);
    let (o4, direct_once) = c4_once_speed_bound();
    outcomes.push(o4);
    let (o5, pairs70) = c5_height_gain_bound();
    outcomes.push(o5);
    outcomes.push(c6_speed_estimator_agreement(&direct70, &pairs70, &direct_once));
    outcomes.push(c7_decay_dichotomy());
    outcomes.push(c8_upper_rate_positivity());
    outcomes.push(c9_iid_diagnostics());
    outcomes.push(c10_tilted_unbiasedness());

    let mut unexpected = Vec::new();
    for o in &outcomes {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {:>2}  {verdict}  ({:6.1}s)  {} — {}",
            o.criterion, o.seconds, o.title, o.detail
        );
        if !o.pass && !o.expected_red {
            unexpected.push(o.criterion);
        }
    }
    assert!(
        unexpected.is_empty(),
        "unexpected acceptance failures: criteria {unexpected:?} (see lines above)"
    );
}
