use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rrwalk::cli::{self, CliError, KindResults};

#[derive(Parser)]
#[command(name = "rrwalk", version, about = "Reinforced-random-walk experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Spec file path, or the name of a built-in preset (see `list`).
    spec: String,
    /// Worker threads (default: spec, then $RRWALK_WORKERS, then all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: spec, then ./rrwalk-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the spec's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write its result bundle.
    Run(RunArgs),
    /// List the built-in experiment presets.
    List,
    /// Compare Monte Carlo sampling against the exact small-horizon law.
    OracleCheck(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => execute(&args, false),
        Command::OracleCheck(args) => execute(&args, true),
        Command::List => {
            for preset in cli::PRESETS {
                println!("{:<20} {}", preset.name, preset.about);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &RunArgs, force_oracle_check: bool) -> Result<(), CliError> {
    let text = cli::load_spec_text(&args.spec)?;
    let mut raw = cli::parse_spec(&text)?;
    if force_oracle_check {
        raw.kind = Some("oracle-check".to_string());
    }
    let spec = cli::resolve_spec(&raw, args.seed)?;

    let workers = args
        .workers
        .or(raw.workers)
        .or_else(|| {
            std::env::var(cli::WORKERS_ENV).ok().and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    let out_dir = args
        .out
        .clone()
        .or_else(|| raw.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(cli::DEFAULT_OUT_DIR));

    let outcome = cli::run_experiment(&spec, &out_dir, workers)?;
    report(&outcome);
    Ok(())
}

/// Console recap; the bundle on disk is the real product.
fn report(outcome: &cli::RunOutcome) {
    let summary = &outcome.summary;
    println!("spec hash  {}", summary.spec_hash);
    println!("seed       {}", summary.seed);
    match &summary.results {
        KindResults::Speed { direct, ratio, agreement_sigma, pairs, .. } => {
            println!(
                "speed      direct {:.6} (stderr {:.2e}), ratio {:.6} (stderr {:.2e})",
                direct.estimate, direct.stderr, ratio.estimate, ratio.stderr
            );
            println!("agreement  {agreement_sigma:.2} combined stderr over {pairs} blocks");
        }
        KindResults::UpperTail { speed_used, points, curve, audit, .. } => {
            println!("speed used {speed_used:.4}");
            for p in points {
                println!(
                    "n {:>6}  threshold {:>4}  p_hat {:.6e}  stderr {:.2e}",
                    p.n, p.threshold, p.p_hat, p.stderr
                );
            }
            match curve.plateau {
                Some(rate) => {
                    let (lo, hi) = curve.plateau_ci.unwrap_or((f64::NAN, f64::NAN));
                    println!("rate plateau {rate:.4} (95% CI {lo:.4}..{hi:.4})");
                }
                None => println!("rate plateau unavailable (too few usable points)"),
            }
            if let Some(a) = audit {
                println!(
                    "audit      {}/{} subadditivity pairs satisfied",
                    a.satisfied, a.checked
                );
            }
        }
        KindResults::LowerTail { points, decay, .. } => {
            for p in points {
                println!(
                    "n {:>6}  level {:>4}  p_hat {:.6e}  stderr {:.2e}",
                    p.n, p.threshold, p.p_hat, p.stderr
                );
            }
            match decay {
                Some(d) => println!("decay class {:?} (ic gap {:.2})", d.class, d.ic_gap),
                None => println!("decay class unavailable"),
            }
        }
        KindResults::RegenStats { pairs, margin, ratio, moments, height_fit, iid, .. } => {
            println!("pairs      {pairs} (confirmation margin {margin})");
            println!(
                "duration   mean {:.3} (stderr {:.2e});  height gain mean {:.3} (stderr {:.2e})",
                moments.duration.mean,
                moments.duration.stderr,
                moments.height.mean,
                moments.height.stderr
            );
            println!("speed      ratio {:.6} (stderr {:.2e})", ratio.estimate, ratio.stderr);
            if let Some(check) = &height_fit.bound_check {
                println!(
                    "bound      geometric base {} {}",
                    check.base,
                    if check.violated { "EXCEEDED by the empirical survival" } else { "holds" }
                );
            }
            println!(
                "iid        {}",
                if iid.consistent_with_iid {
                    "consistent with independent identically distributed blocks"
                } else {
                    "diagnostics flag possible dependence"
                }
            );
        }
        KindResults::OracleCheck { tables, all_within } => {
            for t in tables {
                println!(
                    "n {:>3}  {} atoms  {}",
                    t.n,
                    t.atoms.len(),
                    if t.all_within { "all within 3 stderr" } else { "DEVIATION past 3 stderr" }
                );
            }
            println!("overall    {}", if *all_within { "PASS" } else { "FAIL" });
        }
    }
    for note in &summary.notes {
        println!("note: {note}");
    }
    println!("bundle     {}  ({:.1}s)", outcome.out_dir.display(), outcome.wall_seconds);
}
