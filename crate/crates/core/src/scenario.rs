//! Config-driven sweep orchestration.
//!
//! A scenario pins the optical config, target, pattern subset, sweep axis
//! (noise level or target transmittance), seeds, schemes, and modes. Cells
//! run deterministically: every pattern measurement draws from a private RNG
//! stream derived from the root seed and the cell coordinates, so identical
//! scenario + root seed reproduce byte-identical outputs regardless of
//! execution order. A manifest records completed cells; rerunning a
//! partially completed sweep skips them.
//!
//! The noise axis is the detected-count ratio: `n̄_b` is solved from the
//! requested level against the no-loss full-aperture signal, so in loss
//! sweeps the absolute background stays fixed while η_e drops.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::kv::KvFile;
use crate::metrics::{snr, MetricsReport, RegionSpec, SnrStats};
use crate::pattern::{read_order_csv, Ordering, PatternSet, TargetProfile};
use crate::photon::{classical_count, heralded_count, CountRecord, Mode, OpticalConfig, Scheme};
use crate::reconstruct::{reconstruct, ImageResult};
use crate::seed::{derive_rng, f64_word};
use crate::timetag::{correlate, generate_stream, StreamParams, TagStream};
use crate::Result;

/// What the sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Noise levels at fixed target transmittance.
    Noise { levels: Vec<f64>, eta_e: f64 },
    /// Target transmittances at a fixed noise level.
    Loss { eta_e_values: Vec<f64>, noise_level: f64 },
}

/// A fully specified simulation campaign.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: OpticalConfig,
    pub target: TargetProfile,
    pub side: usize,
    pub pairs: usize,
    pub guard: usize,
    pub ordering: Ordering,
    pub axis: SweepAxis,
    pub seeds: Vec<u64>,
    pub schemes: Vec<Scheme>,
    pub modes: Vec<Mode>,
    pub root_seed: u64,
    /// Device settling time between patterns, seconds. Wall-clock metadata
    /// only; it never enters the statistics.
    pub pattern_switch_s: f64,
}

impl Scenario {
    /// Scenario-file keys beyond the optical-config block.
    pub const KEYS: [&'static str; 14] = [
        "side",
        "pairs",
        "guard",
        "ordering",
        "target",
        "eta_e",
        "sweep",
        "noise_levels",
        "eta_e_values",
        "fixed_noise_level",
        "seeds",
        "schemes",
        "modes",
        "pattern_switch_time",
    ];

    pub fn from_file(path: &Path) -> Result<Self> {
        let kv = KvFile::load(path)?;
        let mut known: Vec<&str> = Self::KEYS.to_vec();
        known.extend_from_slice(&OpticalConfig::KEYS);
        known.push("root_seed");
        kv.check_known(&known)?;
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let config = OpticalConfig::from_kv(kv)?;
        let side = kv.get_usize("side")?.unwrap_or(32);
        let pairs = kv.get_usize("pairs")?.unwrap_or(350);
        let guard = kv.get_usize("guard")?.unwrap_or(1);
        let eta_e = kv.get_f64("eta_e")?.unwrap_or(1.0);

        let ordering = match kv.get("ordering").unwrap_or("walsh") {
            "walsh" => Ordering::Walsh2d,
            "natural" => Ordering::Natural,
            spec if spec.starts_with("file:") => {
                let path = PathBuf::from(&spec[5..]);
                Ordering::External(read_order_csv(&path, side * side)?)
            }
            other => return Err(Error::invalid(format!("unknown ordering `{other}`"))),
        };

        let target = match kv.get("target").unwrap_or("stealth") {
            "stealth" => TargetProfile::stealth(side),
            spec if spec.starts_with("csv:") => {
                TargetProfile::from_csv_mask(Path::new(&spec[4..]), 1.0)?
            }
            other => return Err(Error::invalid(format!("unknown target `{other}`"))),
        }
        .with_eta_e(eta_e)?;

        let axis = match kv.get("sweep").unwrap_or("noise") {
            "noise" => SweepAxis::Noise {
                levels: kv
                    .get_f64_list("noise_levels")?
                    .unwrap_or_else(default_noise_levels),
                eta_e,
            },
            "loss" => SweepAxis::Loss {
                eta_e_values: kv
                    .get_f64_list("eta_e_values")?
                    .unwrap_or_else(|| vec![1.0, 0.75, 0.5, 0.25, 0.1]),
                noise_level: kv
                    .get_f64("fixed_noise_level")?
                    .ok_or_else(|| Error::invalid("loss sweep needs fixed_noise_level"))?,
            },
            other => return Err(Error::invalid(format!("unknown sweep `{other}`"))),
        };

        let seeds: Vec<u64> = (0..kv.get_u64("seeds")?.unwrap_or(10)).collect();
        let schemes = match kv.get("schemes") {
            None => vec![Scheme::Classical, Scheme::Heralded],
            Some(list) => list
                .split(',')
                .map(|s| Scheme::parse(s.trim()))
                .collect::<Result<_>>()?,
        };
        let modes = match kv.get("modes") {
            None => vec![Mode::Sampled],
            Some(list) => list
                .split(',')
                .map(|s| Mode::parse(s.trim()))
                .collect::<Result<_>>()?,
        };
        let root_seed = kv.get_u64("root_seed")?.unwrap_or(42);
        let pattern_switch_s = kv.get_f64("pattern_switch_time")?.unwrap_or(1.0);

        let scenario = Scenario {
            config,
            target,
            side,
            pairs,
            guard,
            ordering,
            axis,
            seeds,
            schemes,
            modes,
            root_seed,
            pattern_switch_s,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.target.side() != self.side {
            return Err(Error::invalid("target side does not match scenario side"));
        }
        let empty = match &self.axis {
            SweepAxis::Noise { levels, .. } => levels.is_empty(),
            SweepAxis::Loss { eta_e_values, .. } => eta_e_values.is_empty(),
        };
        if empty {
            return Err(Error::invalid("sweep list must be non-empty"));
        }
        if self.schemes.is_empty() || self.modes.is_empty() {
            return Err(Error::invalid("schemes and modes must be non-empty"));
        }
        if self.modes.contains(&Mode::EventLevel) {
            return Err(Error::invalid(
                "event-level mode is too costly for sweeps; run single cells via `simulate`",
            ));
        }
        let needs_seeds = self.modes.contains(&Mode::Sampled);
        if needs_seeds && self.seeds.is_empty() {
            return Err(Error::invalid("sampled mode needs a non-empty seed list"));
        }
        Ok(())
    }
}

/// Default sweep axis: linear 0..10, logarithmic 10..1000.
pub fn default_noise_levels() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 4.6, 10.0, 50.0, 70.0, 100.0, 500.0, 1000.0]
}

pub const METRICS_HEADER: &str = "scheme,mode,noise_level,eta_e,seed,snr,cef,mu_t,sigma_t,mu_b,sigma_b";

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn cell_key(mode: Mode, level: f64, eta_e: f64, seed: u64) -> String {
    format!("mode={mode} level={} eta={} seed={seed}", fmt(level), fmt(eta_e))
}

fn image_name(scheme: Scheme, mode: Mode, level: f64, eta_e: f64, seed: u64) -> String {
    format!("{scheme}_{mode}_L{}_E{}_S{seed}.pgm", fmt(level), fmt(eta_e))
}

/// Results of one sweep run.
#[derive(Debug)]
pub struct RunSummary {
    pub reports: Vec<MetricsReport>,
    pub cells_run: usize,
    pub cells_skipped: usize,
    pub metrics_path: PathBuf,
}

/// One measured cell: both requested schemes reconstructed and scored.
pub struct CellOutput {
    pub report: MetricsReport,
    pub images: Vec<(Scheme, ImageResult)>,
}

/// Run every cell of the scenario, appending to `out_dir/metrics.csv` and
/// `out_dir/manifest`, writing one normalized PGM per image. Cells already
/// listed in the manifest are skipped.
pub fn run_sweep(scenario: &Scenario, out_dir: &Path) -> Result<RunSummary> {
    scenario.validate()?;
    std::fs::create_dir_all(out_dir.join("images"))
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    // Wall-clock metadata a physical run would incur (switching time is
    // never simulated; acquisition statistics don't depend on it).
    let meta_path = out_dir.join("run_meta.txt");
    if !meta_path.exists() {
        let acquisitions = 2 * scenario.pairs;
        let per_cell =
            acquisitions as f64 * (scenario.config.tau + scenario.pattern_switch_s);
        std::fs::write(
            &meta_path,
            format!(
                "acquisitions_per_cell = {acquisitions}\ntau = {}\npattern_switch_time = {}\nphysical_cell_wallclock_s = {}\n",
                fmt(scenario.config.tau),
                fmt(scenario.pattern_switch_s),
                fmt(per_cell),
            ),
        )
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    }

    let manifest_path = out_dir.join("manifest");
    let metrics_path = out_dir.join("metrics.csv");
    let done: std::collections::BTreeSet<String> = match std::fs::read_to_string(&manifest_path) {
        Ok(text) => text.lines().map(|l| l.to_string()).collect(),
        Err(_) => Default::default(),
    };
    if !metrics_path.exists() {
        std::fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))
            .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    }
    let mut metrics = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    let mut manifest = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;

    let basis = PatternSet::build(scenario.side, scenario.ordering.clone())?
        .select_subset(scenario.pairs)?;
    let overlaps = precompute_overlaps(&basis, &scenario.target)?;
    let regions = RegionSpec::from_target(&scenario.target, scenario.guard)?;

    let cells: Vec<(f64, f64)> = match &scenario.axis {
        SweepAxis::Noise { levels, eta_e } => levels.iter().map(|&l| (l, *eta_e)).collect(),
        SweepAxis::Loss {
            eta_e_values,
            noise_level,
        } => eta_e_values.iter().map(|&e| (*noise_level, e)).collect(),
    };

    let mut summary = RunSummary {
        reports: Vec::new(),
        cells_run: 0,
        cells_skipped: 0,
        metrics_path,
    };

    for &mode in &scenario.modes {
        // Expectation mode is deterministic; one cell stands for all seeds.
        let seeds: &[u64] = match mode {
            Mode::Expectation => &[0],
            _ => &scenario.seeds,
        };
        for &(level, eta_e) in &cells {
            for &seed in seeds {
                let key = cell_key(mode, level, eta_e, seed);
                if done.contains(&key) {
                    summary.cells_skipped += 1;
                    continue;
                }
                let cell = run_cell(scenario, &basis, &overlaps, &regions, mode, level, eta_e, seed)?;
                for (scheme, img) in &cell.images {
                    let path = out_dir
                        .join("images")
                        .join(image_name(*scheme, mode, level, eta_e, seed));
                    img.write_pgm16(&path)?;
                }
                write_rows(&mut metrics, &cell.report)?;
                writeln!(manifest, "{key}").map_err(|e| Error::io("manifest", e))?;
                summary.reports.push(cell.report);
                summary.cells_run += 1;
            }
        }
    }
    Ok(summary)
}

/// Noise sweep entry point; the scenario axis must be noise levels.
pub fn run_noise_sweep(scenario: &Scenario, out_dir: &Path) -> Result<RunSummary> {
    match scenario.axis {
        SweepAxis::Noise { .. } => run_sweep(scenario, out_dir),
        _ => Err(Error::invalid("scenario axis is not a noise sweep")),
    }
}

/// Loss sweep entry point; the scenario axis must be η_e values.
pub fn run_loss_sweep(scenario: &Scenario, out_dir: &Path) -> Result<RunSummary> {
    match scenario.axis {
        SweepAxis::Loss { .. } => run_sweep(scenario, out_dir),
        _ => Err(Error::invalid("scenario axis is not a loss sweep")),
    }
}

/// Simulate one `(mode, level, eta_e, seed)` cell and persist its outputs
/// under `out_dir` (metrics row, normalized PGM, raw CSV matrix per scheme).
///
/// This is the spot-check entry point: unlike sweeps it accepts
/// [`Mode::EventLevel`], where every pattern measurement runs the full
/// timestamp simulation.
pub fn run_single_cell(
    scenario: &Scenario,
    mode: Mode,
    level: f64,
    eta_e: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<CellOutput> {
    scenario.config.validate()?;
    std::fs::create_dir_all(out_dir.join("images"))
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let basis = PatternSet::build(scenario.side, scenario.ordering.clone())?
        .select_subset(scenario.pairs)?;
    let overlaps = precompute_overlaps(&basis, &scenario.target)?;
    let regions = RegionSpec::from_target(&scenario.target, scenario.guard)?;
    let cell = run_cell(scenario, &basis, &overlaps, &regions, mode, level, eta_e, seed)?;

    let metrics_path = out_dir.join("metrics.csv");
    if !metrics_path.exists() {
        std::fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))
            .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    }
    let mut metrics = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    write_rows(&mut metrics, &cell.report)?;
    for (scheme, img) in &cell.images {
        let stem = image_name(*scheme, mode, level, eta_e, seed);
        img.write_pgm16(&out_dir.join("images").join(&stem))?;
        img.write_csv(&out_dir.join("images").join(stem.replace(".pgm", ".csv")))?;
    }

    if mode == Mode::EventLevel {
        // Representative g2 histogram: replay the first pattern's stream.
        let hist_dir = out_dir.join("histograms");
        std::fs::create_dir_all(&hist_dir)
            .map_err(|e| Error::io(hist_dir.display().to_string(), e))?;
        let mut cfg = scenario.config.clone();
        cfg.set_noise_level(level);
        let target = scenario.target.clone().with_eta_e(eta_e)?;
        let &(k, chi) = &overlaps[0];
        let scheme = scenario.schemes[0];
        let mut rng = derive_rng(
            scenario.root_seed,
            &[
                mode as u64,
                f64_word(level),
                f64_word(target.eta_e()),
                seed,
                scheme as u64,
                k as u64,
            ],
        );
        let stream = event_level_stream(&cfg, &target, chi, &mut rng)?;
        let hist = correlate(&stream, EVENT_BIN_WIDTH_PS, EVENT_MAX_DELAY_PS)?;
        hist.write_csv(&hist_dir.join(format!(
            "g2_L{}_E{}_S{seed}_k{k}.csv",
            fmt(level),
            fmt(eta_e)
        )))?;
    }
    Ok(cell)
}

pub(crate) fn precompute_overlaps(
    basis: &PatternSet,
    target: &TargetProfile,
) -> Result<Vec<(usize, f64)>> {
    basis
        .active()
        .iter()
        .map(|&k| Ok((k, basis.overlap_fraction(k, target)?)))
        .collect()
}

/// Simulate and score one `(mode, level, eta_e, seed)` cell.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    scenario: &Scenario,
    basis: &PatternSet,
    overlaps: &[(usize, f64)],
    regions: &RegionSpec,
    mode: Mode,
    level: f64,
    eta_e: f64,
    seed: u64,
) -> Result<CellOutput> {
    let mut cfg = scenario.config.clone();
    cfg.set_noise_level(level); // referenced to the no-loss signal
    let target = scenario.target.clone().with_eta_e(eta_e)?;

    let mut stats: [Option<SnrStats>; 2] = [None, None];
    let mut images = Vec::new();
    for &scheme in &scenario.schemes {
        let records =
            measure_patterns(&cfg, &target, overlaps, scheme, mode, scenario.root_seed, level, seed)?;
        let img = reconstruct(basis, &records)?;
        let s = snr(&img, regions)?;
        stats[matches!(scheme, Scheme::Heralded) as usize] = Some(s);
        images.push((scheme, img));
    }
    let report = MetricsReport::from_stats(mode, level, eta_e, seed, stats[0], stats[1]);
    Ok(CellOutput { report, images })
}

/// Per-pattern counts for one scheme. Each pattern owns an RNG stream derived
/// from `(root_seed, mode, level, eta_e, seed, scheme, k)`, so cells replay
/// identically under any execution order and the η_e = 1 cell of a loss sweep
/// coincides with the matching noise-sweep cell.
#[allow(clippy::too_many_arguments)]
pub fn measure_patterns(
    cfg: &OpticalConfig,
    target: &TargetProfile,
    overlaps: &[(usize, f64)],
    scheme: Scheme,
    mode: Mode,
    root_seed: u64,
    level: f64,
    seed: u64,
) -> Result<Vec<CountRecord>> {
    overlaps
        .iter()
        .map(|&(k, chi)| {
            let mut rng = derive_rng(
                root_seed,
                &[
                    mode as u64,
                    f64_word(level),
                    f64_word(target.eta_e()),
                    seed,
                    scheme as u64,
                    k as u64,
                ],
            );
            match (scheme, mode) {
                (Scheme::Classical, Mode::Expectation | Mode::Sampled) => {
                    classical_count(cfg, target, k, chi, mode, &mut rng)
                }
                (Scheme::Heralded, Mode::Expectation | Mode::Sampled) => {
                    heralded_count(cfg, target, k, chi, mode, &mut rng)
                }
                (_, Mode::EventLevel) => event_level_count(cfg, target, k, chi, scheme, &mut rng),
            }
        })
        .collect()
}

/// Signal-path delay used by event-level cells; 50 ps bin-center aligned.
const EVENT_PATH_DELAY_PS: f64 = 8_025.0;
const EVENT_BIN_WIDTH_PS: u64 = 50;
const EVENT_MAX_DELAY_PS: u64 = 50_000;

/// Event-level oracle for one pattern: build the timestamp streams implied by
/// the optical config, correlate, and count.
///
/// The pair component carries the signal-channel survival
/// `η_s·η_o·η_e·χ̃` and idler survival `η_i·η_h` (so detected coincidences
/// match the heralded model's first term); the idlers whose partners fall
/// outside the heralded mode, `η_i·(1 − η_h)` of the source rate, enter as an
/// idler-only component and contribute accidentals. Detector jitter is zero
/// here so the window captures every true pair; jitter studies live in the
/// time-tag API. The classical count is the signal-channel singles total,
/// the heralded count the windowed coincidences at T_c.
pub fn event_level_count(
    cfg: &OpticalConfig,
    target: &TargetProfile,
    k: usize,
    chi_tilde: f64,
    scheme: Scheme,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<CountRecord> {
    let stream = event_level_stream(cfg, target, chi_tilde, rng)?;

    let (count, mu) = match scheme {
        Scheme::Classical => {
            let singles = stream.singles(crate::timetag::Channel::Signal) as f64;
            let mu = cfg.eta_s * target.eta_e() * cfg.eta_o * chi_tilde * cfg.n_s_bar * cfg.l_s()
                + cfg.eta_s * cfg.n_b_bar * cfg.l_b();
            (singles, mu)
        }
        Scheme::Heralded => {
            let hist = correlate(&stream, EVENT_BIN_WIDTH_PS, EVENT_MAX_DELAY_PS)?;
            let coincidences = match hist.peak {
                Some(_) => hist.coincidences_in_window((cfg.t_c * 1e12).round() as u64)? as f64,
                None => 0.0,
            };
            let mu = cfg.eta_h
                * (cfg.eta_s * cfg.eta_i * target.eta_e() * cfg.eta_o * chi_tilde * cfg.n_s_bar
                    * cfg.l_s())
                + (cfg.eta_i * cfg.n_s_bar * cfg.l_s())
                    * (cfg.eta_s * cfg.n_b_bar * cfg.l_b())
                    * cfg.t_c
                    / cfg.tau;
            (coincidences, mu)
        }
    };
    Ok(CountRecord {
        k,
        chi_tilde,
        scheme,
        mode: Mode::EventLevel,
        count,
        mu,
        n_s_prime: f64::NAN,
        n_b_prime: f64::NAN,
        n_i_prime: None,
    })
}

/// Merged timestamp stream for one pattern measurement.
pub fn event_level_stream(
    cfg: &OpticalConfig,
    target: &TargetProfile,
    chi_tilde: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<TagStream> {
    cfg.validate()?;
    let source_rate = cfg.n_s_bar * cfg.l_s() / cfg.tau;
    let noise_rate = cfg.eta_s * cfg.n_b_bar * cfg.l_b() / cfg.tau;
    let paired = StreamParams {
        pair_rate_cps: source_rate,
        signal_loss_prob: 1.0 - cfg.eta_s * cfg.eta_o * target.eta_e() * chi_tilde,
        idler_loss_prob: 1.0 - cfg.eta_i * cfg.eta_h,
        noise_rate_cps: noise_rate,
        jitter_sigma_ps: 0.0,
        path_delay_ps: EVENT_PATH_DELAY_PS,
        duration_s: cfg.tau,
    };
    let unpaired_idler = StreamParams {
        pair_rate_cps: source_rate * cfg.eta_i * (1.0 - cfg.eta_h),
        signal_loss_prob: 1.0,
        idler_loss_prob: 0.0,
        noise_rate_cps: 0.0,
        jitter_sigma_ps: 0.0,
        path_delay_ps: 0.0,
        duration_s: cfg.tau,
    };
    Ok(generate_stream(&paired, rng)?.merge(&generate_stream(&unpaired_idler, rng)?))
}

fn write_rows(out: &mut impl Write, report: &MetricsReport) -> Result<()> {
    let cef_field = match report.cef {
        Some(c) => fmt(c),
        None => "NA".to_string(),
    };
    for (scheme, stats) in [
        (Scheme::Classical, &report.classical),
        (Scheme::Heralded, &report.heralded),
    ] {
        if let Some(s) = stats {
            writeln!(
                out,
                "{scheme},{},{},{},{},{},{cef_field},{},{},{},{}",
                report.mode,
                fmt(report.noise_level),
                fmt(report.eta_e),
                report.seed,
                fmt(s.snr),
                fmt(s.mu_t),
                fmt(s.sigma_t),
                fmt(s.mu_b),
                fmt(s.sigma_b),
            )
            .map_err(|e| Error::io("metrics.csv", e))?;
        }
    }
    Ok(())
}
