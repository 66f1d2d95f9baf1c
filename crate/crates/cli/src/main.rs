//! `hspi` — heralded single-pixel imaging simulator CLI.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hspi_core::kv::KvFile;
use hspi_core::pattern::{read_order_csv, Ordering, PatternSet, TargetProfile};
use hspi_core::photon::{Mode, OpticalConfig, Scheme};
use hspi_core::report::{report, write_summary_csv};
use hspi_core::scenario::{run_single_cell, run_sweep, Scenario, SweepAxis};
use hspi_core::seed::derive_rng;
use hspi_core::timetag::{correlate, generate_stream, StreamParams, TagStream};
use hspi_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "hspi",
    about = "Simulate classical and heralded single-pixel imaging under noise and loss",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the Hadamard pattern basis and export it.
    Patterns(PatternsArgs),
    /// Simulate one measurement cell (one noise level, transmittance, seed).
    Simulate(SimulateArgs),
    /// Run a noise or loss sweep from a scenario file.
    Sweep(SweepArgs),
    /// Generate and/or analyze photon time-tag streams.
    Correlate(CorrelateArgs),
    /// Aggregate a run directory into a median/IQR summary table.
    Report(ReportArgs),
}

#[derive(Args)]
struct PatternsArgs {
    /// Image edge length (power of two).
    #[arg(long, default_value_t = 32)]
    side: usize,
    /// Significance ordering: walsh, natural, or file:<order.csv>.
    #[arg(long, default_value = "walsh")]
    ordering: String,
    /// Keep only the leading pairs under the ordering.
    #[arg(long)]
    pairs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write one PGM per active pattern.
    #[arg(long)]
    pgm: bool,
    /// Write the packed bitset file.
    #[arg(long)]
    packed: bool,
    /// Write the ordering as CSV.
    #[arg(long)]
    order_csv: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Optical config file (key = value; defaults to reference parameters).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    side: usize,
    #[arg(long, default_value_t = 350)]
    pairs: usize,
    #[arg(long, default_value_t = 1)]
    guard: usize,
    /// walsh, natural, or file:<order.csv>.
    #[arg(long, default_value = "walsh")]
    ordering: String,
    /// Target: `stealth` or `csv:<mask.csv>`.
    #[arg(long, default_value = "stealth")]
    target: String,
    /// Detected-noise to no-loss-signal ratio.
    #[arg(long, default_value_t = 0.0)]
    noise_level: f64,
    /// Target transmittance in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    eta_e: f64,
    /// expectation, sampled, or event.
    #[arg(long, default_value = "sampled")]
    mode: String,
    /// classical, heralded, or both.
    #[arg(long, default_value = "both")]
    scheme: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 42)]
    root_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario file (key = value).
    #[arg(long)]
    scenario: PathBuf,
    /// Run directory (manifest, metrics.csv, images/).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Existing tag file to analyze; omit to synthesize a stream.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Histogram bin width, ps.
    #[arg(long, default_value_t = 100)]
    bin_width: u64,
    /// Histogram half-span, ps.
    #[arg(long, default_value_t = 50_000)]
    max_delay: u64,
    /// Coincidence window, ps.
    #[arg(long, default_value_t = 650)]
    t_c: u64,
    /// Write the histogram as CSV.
    #[arg(long)]
    out_hist: Option<PathBuf>,
    /// Save the (synthesized) stream as a tag file.
    #[arg(long)]
    save_tags: Option<PathBuf>,

    /// Photon-pair rate for synthesis, counts/s.
    #[arg(long, default_value_t = 50_000.0)]
    pair_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    signal_loss: f64,
    #[arg(long, default_value_t = 0.0)]
    idler_loss: f64,
    /// Background rate on the signal channel, counts/s.
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    /// Detector jitter (1 sigma), ps.
    #[arg(long, default_value_t = 300.0)]
    jitter: f64,
    /// Signal-path delay, ps.
    #[arg(long, default_value_t = 10_000.0)]
    delay: f64,
    /// Stream duration, seconds.
    #[arg(long, default_value_t = 1.5)]
    duration: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing metrics.csv.
    #[arg(long)]
    run: PathBuf,
    /// Summary CSV path (defaults to `summary.csv` inside the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_ordering(spec: &str, side: usize) -> Result<Ordering> {
    match spec {
        "walsh" => Ok(Ordering::Walsh2d),
        "natural" => Ok(Ordering::Natural),
        s if s.starts_with("file:") => Ok(Ordering::External(read_order_csv(
            std::path::Path::new(&s[5..]),
            side * side,
        )?)),
        other => Err(Error::invalid(format!("unknown ordering `{other}`"))),
    }
}

fn parse_target(spec: &str, side: usize, eta_e: f64) -> Result<TargetProfile> {
    match spec {
        "stealth" => TargetProfile::stealth(side).with_eta_e(eta_e),
        s if s.starts_with("csv:") => {
            TargetProfile::from_csv_mask(std::path::Path::new(&s[4..]), eta_e)
        }
        other => Err(Error::invalid(format!("unknown target `{other}`"))),
    }
}

fn cmd_patterns(args: PatternsArgs) -> Result<()> {
    let mut set = PatternSet::build(args.side, parse_ordering(&args.ordering, args.side)?)?;
    if let Some(pairs) = args.pairs {
        set = set.select_subset(pairs)?;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    println!(
        "basis: side {}, {} active patterns ({} pairs)",
        set.side(),
        set.subset_size(),
        set.pairs()
    );
    if args.pgm {
        set.write_pgm_dir(&args.out.join("pgm"))?;
        println!("wrote {} PGMs to {}", set.subset_size(), args.out.join("pgm").display());
    }
    if args.packed {
        let path = args.out.join("patterns.spip");
        set.write_packed(&path)?;
        println!("wrote packed bitset {}", path.display());
    }
    if args.order_csv {
        let path = args.out.join("order.csv");
        set.write_order_csv(&path)?;
        println!("wrote ordering {}", path.display());
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => OpticalConfig::from_file(path)?,
        None => OpticalConfig::from_kv(&KvFile::default())?,
    };
    let mode = Mode::parse(&args.mode)?;
    let schemes = match args.scheme.as_str() {
        "both" => vec![Scheme::Classical, Scheme::Heralded],
        s => vec![Scheme::parse(s)?],
    };
    let target = parse_target(&args.target, args.side, args.eta_e)?;
    let scenario = Scenario {
        config,
        target,
        side: args.side,
        pairs: args.pairs,
        guard: args.guard,
        ordering: parse_ordering(&args.ordering, args.side)?,
        axis: SweepAxis::Noise {
            levels: vec![args.noise_level],
            eta_e: args.eta_e,
        },
        seeds: vec![args.seed],
        schemes,
        modes: vec![Mode::Sampled],
        root_seed: args.root_seed,
        pattern_switch_s: 1.0,
    };
    let cell = run_single_cell(
        &scenario,
        mode,
        args.noise_level,
        args.eta_e,
        args.seed,
        &args.out,
    )?;
    let r = &cell.report;
    println!(
        "cell: mode {mode}, noise level {}, eta_e {}, seed {}",
        r.noise_level, r.eta_e, r.seed
    );
    if let Some(c) = r.classical {
        println!("  classical SNR {:.6}", c.snr);
    }
    if let Some(q) = r.heralded {
        println!("  heralded  SNR {:.6}", q.snr);
    }
    match r.cef {
        Some(cef) => println!("  CEF {cef:.4}"),
        None => println!("  CEF undefined"),
    }
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let scenario = Scenario::from_file(&args.scenario)?;
    let summary = run_sweep(&scenario, &args.out)?;
    println!(
        "sweep complete: {} cells run, {} skipped (already in manifest)",
        summary.cells_run, summary.cells_skipped
    );
    println!("metrics: {}", summary.metrics_path.display());
    Ok(())
}

fn cmd_correlate(args: CorrelateArgs) -> Result<()> {
    let stream: TagStream = match &args.input {
        Some(path) => TagStream::read_spit(path)?,
        None => {
            if args.t_c as f64 > 0.0 && (args.t_c as f64) < 2.0 * args.jitter {
                eprintln!(
                    "warning: coincidence window {} ps is below twice the detector jitter {} ps; \
                     true pairs will leak out of the window",
                    args.t_c, args.jitter
                );
            }
            let params = StreamParams {
                pair_rate_cps: args.pair_rate,
                signal_loss_prob: args.signal_loss,
                idler_loss_prob: args.idler_loss,
                noise_rate_cps: args.noise_rate,
                jitter_sigma_ps: args.jitter,
                path_delay_ps: args.delay,
                duration_s: args.duration,
            };
            let mut rng = derive_rng(args.seed, &[]);
            generate_stream(&params, &mut rng)?
        }
    };
    println!(
        "stream: {} tags over {} ps ({} signal, {} idler)",
        stream.tags.len(),
        stream.duration_ps,
        stream.singles(hspi_core::timetag::Channel::Signal),
        stream.singles(hspi_core::timetag::Channel::Idler),
    );
    if let Some(path) = &args.save_tags {
        stream.write_spit(path)?;
        println!("saved tags to {}", path.display());
    }
    let hist = correlate(&stream, args.bin_width, args.max_delay)?;
    match hist.peak {
        Some(peak) => {
            println!("peak: {} counts at {} ps", peak.counts, peak.delay_ps);
            let window = hist.coincidences_in_window(args.t_c)?;
            println!("coincidences in {} ps window: {window}", args.t_c);
        }
        None => println!("no correlation peak (empty histogram)"),
    }
    if let Some(path) = &args.out_hist {
        hist.write_csv(path)?;
        println!("histogram written to {}", path.display());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let out = report(&args.run)?;
    for err in &out.row_errors {
        eprintln!("warning: skipped row: {err}");
    }
    let path = args
        .out
        .unwrap_or_else(|| args.run.join("summary.csv"));
    write_summary_csv(&out.rows, &path)?;
    println!(
        "{:<10} {:<12} {:>11} {:>6} {:>3} {:>12} {:>12} {:>12}",
        "scheme", "mode", "noise_level", "eta_e", "n", "snr_median", "cef_median", "cef_iqr"
    );
    for r in &out.rows {
        let cef = r
            .cef_median
            .map(|c| format!("{c:.4}"))
            .unwrap_or_else(|| "NA".into());
        let iqr = match (r.cef_q1, r.cef_q3) {
            (Some(a), Some(b)) => format!("{a:.3}..{b:.3}"),
            _ => "NA".into(),
        };
        println!(
            "{:<10} {:<12} {:>11} {:>6} {:>3} {:>12.6} {:>12} {:>12}",
            r.scheme, r.mode, r.noise_level, r.eta_e, r.n, r.snr_median, cef, iqr
        );
    }
    println!("summary written to {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Patterns(args) => cmd_patterns(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Correlate(args) => cmd_correlate(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
