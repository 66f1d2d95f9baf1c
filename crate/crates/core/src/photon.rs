//! Per-pattern detected counts for the classical and heralded schemes.
//!
//! Detection is modeled in two stages. Source photons are thermal, so the
//! photon number integrated over the acquisition time is a sum of `L = τ/τ_coh`
//! i.i.d. Bose-Einstein bins with per-bin mean `N̄`; by the CLT that sum is
//! drawn as `Normal(L·N̄, L·(N̄ + N̄²))`, truncated at zero. The photoelectric
//! stage then draws the recorded count as `Poisson(μ)` conditioned on the
//! integrated photon number.
//!
//! Classical channel: `μ_C = n'_s + n'_b` with per-bin detected means
//! `N̄_s = η_s·η_e·η_o·χ̃·n̄_s` and `N̄_b = η_s·n̄_b`.
//!
//! Heralded channel: `μ_Q = η_h·n'_s + n'_i·n'_b·T_c/τ`, where the signal
//! draw carries `η_s·η_i·η_e·η_o·χ̃`, the idler draw is
//! `Normal(L_s·η_i·n̄_s, L_s·(η_i·n̄_s + (η_i·n̄_s)²))`, and the noise draw is
//! the classical one. The second term is the accidental-coincidence
//! contribution, suppressed by the window-to-acquisition ratio `T_c/τ`.
//!
//! Users normally parametrize brightness by the detected full-aperture signal
//! count rate (`rate_s`, counts/s at χ̃ = 1, η_e = 1); the per-bin source mean
//! is derived as `n̄_s = rate_s·τ_s/(η_s·η_o)` and the mapping is invertible.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use std::fmt;
use std::path::Path;

use crate::error::Error;
use crate::kv::KvFile;
use crate::pattern::TargetProfile;
use crate::Result;

/// How a count is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Deterministic means; the exact expectation of sampled mode.
    Expectation,
    /// CLT-normal source integration compounded with Poisson detection.
    Sampled,
    /// Explicit timestamp simulation (handled by the time-tag engine).
    EventLevel,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Expectation => write!(f, "expectation"),
            Mode::Sampled => write!(f, "sampled"),
            Mode::EventLevel => write!(f, "event"),
        }
    }
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expectation" => Ok(Mode::Expectation),
            "sampled" => Ok(Mode::Sampled),
            "event" | "event-level" => Ok(Mode::EventLevel),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

/// Which detection scheme produced a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Non-time-gated single-detector counting.
    Classical,
    /// Coincidence counting gated by the idler channel.
    Heralded,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Classical => write!(f, "classical"),
            Scheme::Heralded => write!(f, "heralded"),
        }
    }
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Scheme::Classical),
            "heralded" => Ok(Scheme::Heralded),
            other => Err(Error::invalid(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Rates, efficiencies, and timing of the optical chain.
///
/// Config-file keys match the field names; see [`OpticalConfig::from_kv`].
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalConfig {
    /// Mean signal photons per coherence bin at the source.
    pub n_s_bar: f64,
    /// Mean noise photons per coherence bin at the source.
    pub n_b_bar: f64,
    /// Acquisition time per pattern, seconds.
    pub tau: f64,
    /// Signal coherence time, seconds.
    pub tau_s: f64,
    /// Noise coherence time, seconds.
    pub tau_b: f64,
    /// Signal-detector efficiency.
    pub eta_s: f64,
    /// Idler-detector efficiency.
    pub eta_i: f64,
    /// Signal-channel efficiency (losses before the target).
    pub eta_o: f64,
    /// Heralding efficiency: coincidence rate over single rate at the source.
    pub eta_h: f64,
    /// Coincidence window, seconds.
    pub t_c: f64,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self::reference_defaults()
    }
}

impl OpticalConfig {
    /// Reference configuration: η_o = 5%, η_s = η_i = 60%, η_h = 14%,
    /// T_c = 650 ps, τ = 1.5 s, detected signal rate 7 800 cps, no noise,
    /// coherence times 1 ns.
    pub fn reference_defaults() -> Self {
        let mut cfg = OpticalConfig {
            n_s_bar: 0.0,
            n_b_bar: 0.0,
            tau: 1.5,
            tau_s: 1e-9,
            tau_b: 1e-9,
            eta_s: 0.6,
            eta_i: 0.6,
            eta_o: 0.05,
            eta_h: 0.14,
            t_c: 650e-12,
        };
        cfg.set_rate_s(7800.0);
        cfg
    }

    /// Number of signal coherence bins, `L_s = τ/τ_s`.
    pub fn l_s(&self) -> f64 {
        self.tau / self.tau_s
    }

    /// Number of noise coherence bins, `L_b = τ/τ_b`.
    pub fn l_b(&self) -> f64 {
        self.tau / self.tau_b
    }

    /// Detected full-aperture signal count rate (χ̃ = 1, η_e = 1), counts/s.
    pub fn rate_s(&self) -> f64 {
        self.eta_s * self.eta_o * self.n_s_bar / self.tau_s
    }

    /// Set the source brightness from a detected signal count rate.
    pub fn set_rate_s(&mut self, rate_cps: f64) {
        self.n_s_bar = rate_cps * self.tau_s / (self.eta_s * self.eta_o);
    }

    /// Set `n̄_b` so that detected noise counts are `level` times the detected
    /// full-aperture no-loss signal counts (the noise-level axis).
    pub fn set_noise_level(&mut self, level: f64) {
        // eta_s * n_b_bar * L_b = level * eta_s * eta_o * n_s_bar * L_s
        self.n_b_bar = level * self.eta_o * self.n_s_bar * self.tau_b / self.tau_s;
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_s", self.eta_s),
            ("eta_i", self.eta_i),
            ("eta_o", self.eta_o),
            ("eta_h", self.eta_h),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.tau_s > 0.0 && self.tau_s <= self.tau) {
            return Err(Error::invalid(format!(
                "tau_s must satisfy 0 < tau_s <= tau, got {}",
                self.tau_s
            )));
        }
        if !(self.tau_b > 0.0 && self.tau_b <= self.tau) {
            return Err(Error::invalid(format!(
                "tau_b must satisfy 0 < tau_b <= tau, got {}",
                self.tau_b
            )));
        }
        if !(self.t_c > 0.0) {
            return Err(Error::invalid(format!("t_c must be > 0, got {}", self.t_c)));
        }
        if self.t_c / self.tau >= 1e-3 {
            return Err(Error::invalid(format!(
                "t_c must be << tau (t_c/tau < 1e-3), got ratio {}",
                self.t_c / self.tau
            )));
        }
        if self.n_s_bar < 0.0 || self.n_b_bar < 0.0 {
            return Err(Error::invalid("photon-number means must be >= 0"));
        }
        Ok(())
    }

    /// Keys accepted in config and scenario files.
    pub const KEYS: [&'static str; 12] = [
        "rate_s", "noise_level", "n_s_bar", "n_b_bar", "tau", "tau_s", "tau_b", "eta_s", "eta_i",
        "eta_o", "eta_h", "t_c",
    ];

    /// Overlay values from a parsed key-value file onto the defaults.
    ///
    /// Times are seconds. Brightness: give `rate_s` (detected cps) or a raw
    /// `n_s_bar`; noise: give `noise_level` (relative to the no-loss signal)
    /// or a raw `n_b_bar`, not both.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut cfg = OpticalConfig::reference_defaults();
        if let Some(v) = kv.get_f64("tau")? {
            cfg.tau = v;
        }
        if let Some(v) = kv.get_f64("tau_s")? {
            cfg.tau_s = v;
        }
        if let Some(v) = kv.get_f64("tau_b")? {
            cfg.tau_b = v;
        }
        if let Some(v) = kv.get_f64("eta_s")? {
            cfg.eta_s = v;
        }
        if let Some(v) = kv.get_f64("eta_i")? {
            cfg.eta_i = v;
        }
        if let Some(v) = kv.get_f64("eta_o")? {
            cfg.eta_o = v;
        }
        if let Some(v) = kv.get_f64("eta_h")? {
            cfg.eta_h = v;
        }
        if let Some(v) = kv.get_f64("t_c")? {
            cfg.t_c = v;
        }
        match (kv.get_f64("rate_s")?, kv.get_f64("n_s_bar")?) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid("give rate_s or n_s_bar, not both"))
            }
            (Some(rate), None) => cfg.set_rate_s(rate),
            (None, Some(n)) => cfg.n_s_bar = n,
            (None, None) => cfg.set_rate_s(7800.0),
        }
        match (kv.get_f64("noise_level")?, kv.get_f64("n_b_bar")?) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid("give noise_level or n_b_bar, not both"))
            }
            (Some(level), None) => cfg.set_noise_level(level),
            (None, Some(n)) => cfg.n_b_bar = n,
            (None, None) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let kv = KvFile::load(path)?;
        kv.check_known(&Self::KEYS)?;
        Self::from_kv(&kv)
    }
}

/// One simulated pattern measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    /// 1-based pattern index.
    pub k: usize,
    /// Overlap fraction χ̃ between the pattern and the target.
    pub chi_tilde: f64,
    pub scheme: Scheme,
    pub mode: Mode,
    /// Detected count I; integer-valued in sampled mode, real in expectation.
    pub count: f64,
    /// Conditional Poisson mean (μ_C or μ_Q).
    pub mu: f64,
    /// Integrated signal photon number behind the detection draw.
    pub n_s_prime: f64,
    /// Integrated noise photon number.
    pub n_b_prime: f64,
    /// Integrated idler photon number (heralded scheme only).
    pub n_i_prime: Option<f64>,
}

/// Integrated photon number over `bins` coherence bins of per-bin mean
/// `mean_per_bin`: `Normal(L·N̄, L·(N̄ + N̄²))` truncated at 0 in sampled
/// mode, exactly `L·N̄` in expectation mode.
pub fn integrated_source_draw(
    mean_per_bin: f64,
    bins: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<f64> {
    if !(mean_per_bin >= 0.0) {
        return Err(Error::invalid(format!(
            "mean_per_bin must be >= 0, got {mean_per_bin}"
        )));
    }
    if !(bins >= 1.0) {
        return Err(Error::invalid(format!("bins must be >= 1, got {bins}")));
    }
    let mean = bins * mean_per_bin;
    match mode {
        Mode::Expectation => Ok(mean),
        Mode::Sampled => {
            if mean_per_bin == 0.0 {
                return Ok(0.0);
            }
            let sd = (bins * (mean_per_bin + mean_per_bin * mean_per_bin)).sqrt();
            let normal = Normal::new(mean, sd)
                .map_err(|e| Error::invalid(format!("normal draw: {e}")))?;
            // Photon numbers are nonnegative: resample negatives, clamp as a
            // last resort (vanishingly rare at realistic parameters).
            for _ in 0..100 {
                let x = normal.sample(rng);
                if x >= 0.0 {
                    return Ok(x);
                }
            }
            Ok(0.0)
        }
        Mode::EventLevel => Err(Error::invalid(
            "event-level mode is served by the time-tag engine, not the count model",
        )),
    }
}

fn poisson_count(mu: f64, rng: &mut impl Rng) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    let dist = Poisson::new(mu).expect("mu > 0 and finite");
    dist.sample(rng)
}

fn check_chi_tilde(chi_tilde: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&chi_tilde) {
        return Err(Error::invalid(format!(
            "chi_tilde must be in [0,1], got {chi_tilde}"
        )));
    }
    Ok(())
}

/// Classical single-detector count for pattern `k` with overlap `chi_tilde`.
pub fn classical_count(
    cfg: &OpticalConfig,
    target: &TargetProfile,
    k: usize,
    chi_tilde: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<CountRecord> {
    cfg.validate()?;
    check_chi_tilde(chi_tilde)?;
    let n_bar_s = cfg.eta_s * target.eta_e() * cfg.eta_o * chi_tilde * cfg.n_s_bar;
    let n_bar_b = cfg.eta_s * cfg.n_b_bar;
    let n_s_prime = integrated_source_draw(n_bar_s, cfg.l_s(), mode, rng)?;
    let n_b_prime = integrated_source_draw(n_bar_b, cfg.l_b(), mode, rng)?;
    let mu = n_s_prime + n_b_prime;
    let count = match mode {
        Mode::Expectation => mu,
        Mode::Sampled => poisson_count(mu, rng),
        Mode::EventLevel => unreachable!("rejected by integrated_source_draw"),
    };
    Ok(CountRecord {
        k,
        chi_tilde,
        scheme: Scheme::Classical,
        mode,
        count,
        mu,
        n_s_prime,
        n_b_prime,
        n_i_prime: None,
    })
}

/// Heralded coincidence count for pattern `k` with overlap `chi_tilde`.
pub fn heralded_count(
    cfg: &OpticalConfig,
    target: &TargetProfile,
    k: usize,
    chi_tilde: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<CountRecord> {
    cfg.validate()?;
    check_chi_tilde(chi_tilde)?;
    let n_bar_q = cfg.eta_s * cfg.eta_i * target.eta_e() * cfg.eta_o * chi_tilde * cfg.n_s_bar;
    let n_bar_i = cfg.eta_i * cfg.n_s_bar;
    let n_bar_b = cfg.eta_s * cfg.n_b_bar;
    let n_s_prime = integrated_source_draw(n_bar_q, cfg.l_s(), mode, rng)?;
    let n_i_prime = integrated_source_draw(n_bar_i, cfg.l_s(), mode, rng)?;
    let n_b_prime = integrated_source_draw(n_bar_b, cfg.l_b(), mode, rng)?;
    let mu = cfg.eta_h * n_s_prime + n_i_prime * n_b_prime * cfg.t_c / cfg.tau;
    let count = match mode {
        Mode::Expectation => mu,
        Mode::Sampled => poisson_count(mu, rng),
        Mode::EventLevel => unreachable!("rejected by integrated_source_draw"),
    };
    Ok(CountRecord {
        k,
        chi_tilde,
        scheme: Scheme::Heralded,
        mode,
        count,
        mu,
        n_s_prime,
        n_b_prime,
        n_i_prime: Some(n_i_prime),
    })
}

/// Ratio of detected mean noise counts to detected mean full-aperture signal
/// counts in the classical channel (the noise-level axis of the sweeps).
///
/// Uses the target's η_e; sweep construction inverts this at η_e = 1 so the
/// absolute noise stays fixed as the target transmittance drops.
pub fn noise_level(cfg: &OpticalConfig, target: &TargetProfile) -> Result<f64> {
    cfg.validate()?;
    let signal = cfg.eta_s * cfg.eta_o * target.eta_e() * cfg.n_s_bar * cfg.l_s();
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(cfg.eta_s * cfg.n_b_bar * cfg.l_b() / signal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    fn full_target() -> TargetProfile {
        TargetProfile::full_aperture(32)
    }

    #[test]
    fn rate_parametrization_round_trips() {
        let cfg = OpticalConfig::reference_defaults();
        assert!((cfg.rate_s() - 7800.0).abs() < 1e-9);
        // Detected full-aperture counts over tau: rate * tau = 11_700.
        let detected = cfg.eta_s * cfg.eta_o * cfg.n_s_bar * cfg.l_s();
        assert!((detected - 11_700.0).abs() < 1e-6);
    }

    #[test]
    fn draw_vacuum_is_exactly_zero() {
        let mut rng = derive_rng(1, &[]);
        for mode in [Mode::Expectation, Mode::Sampled] {
            assert_eq!(integrated_source_draw(0.0, 1e9, mode, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn draw_expectation_is_l_times_mean() {
        let mut rng = derive_rng(1, &[]);
        let v = integrated_source_draw(0.01, 1e9, Mode::Expectation, &mut rng).unwrap();
        assert_eq!(v, 1e7);
    }

    #[test]
    fn draw_rejects_bad_inputs() {
        let mut rng = derive_rng(1, &[]);
        assert!(integrated_source_draw(-0.1, 10.0, Mode::Sampled, &mut rng).is_err());
        assert!(integrated_source_draw(1.0, 0.5, Mode::Sampled, &mut rng).is_err());
        assert!(integrated_source_draw(1.0, 10.0, Mode::EventLevel, &mut rng).is_err());
    }

    #[test]
    fn draw_moments_match_bose_einstein_sum() {
        // Oracle: sum of L i.i.d. Bose-Einstein bins has mean L*N and
        // variance L*(N + N^2); here 2e4 and 6e4.
        let (n_bar, bins, draws) = (2.0, 1e4, 100_000usize);
        let mut rng = derive_rng(99, &[7]);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let x = integrated_source_draw(n_bar, bins, Mode::Sampled, &mut rng).unwrap();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / draws as f64;
        let var = sumsq / draws as f64 - mean * mean;
        let (mean_oracle, var_oracle) = (2e4, 6e4);
        let se_mean = (var_oracle / draws as f64).sqrt();
        assert!((mean - mean_oracle).abs() < 3.0 * se_mean, "mean {mean}");
        let se_var = var_oracle * (2.0 / (draws as f64 - 1.0)).sqrt();
        assert!((var - var_oracle).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn draw_truncates_at_zero() {
        // Mean 0.01, sd ~0.1: negatives are common before truncation.
        let mut rng = derive_rng(3, &[]);
        for _ in 0..2000 {
            let x = integrated_source_draw(0.01, 1.0, Mode::Sampled, &mut rng).unwrap();
            assert!(x >= 0.0);
        }
    }

    #[test]
    fn classical_full_aperture_count_is_11700() {
        let cfg = OpticalConfig::reference_defaults();
        let mut rng = derive_rng(1, &[]);
        let rec =
            classical_count(&cfg, &full_target(), 1, 1.0, Mode::Expectation, &mut rng).unwrap();
        assert!((rec.count - 11_700.0).abs() < 1e-6, "count {}", rec.count);
        let rec =
            classical_count(&cfg, &full_target(), 1, 0.5, Mode::Expectation, &mut rng).unwrap();
        assert!((rec.count - 5_850.0).abs() < 1e-6);
    }

    #[test]
    fn no_light_no_counts() {
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.n_s_bar = 0.0;
        cfg.n_b_bar = 0.0;
        let mut rng = derive_rng(1, &[]);
        for mode in [Mode::Expectation, Mode::Sampled] {
            let c = classical_count(&cfg, &full_target(), 1, 0.7, mode, &mut rng).unwrap();
            assert_eq!(c.count, 0.0);
            let q = heralded_count(&cfg, &full_target(), 1, 0.7, mode, &mut rng).unwrap();
            assert_eq!(q.count, 0.0);
        }
    }

    #[test]
    fn classical_sampled_is_super_poissonian_with_noise() {
        // Law of total variance oracle: Var(I) = E[mu] + Var(mu).
        // Configure strong bunching: N_b = 10 per bin over L_b = 1e4 bins.
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.tau = 1.0;
        cfg.tau_b = 1e-4;
        cfg.n_s_bar = 0.0;
        cfg.n_b_bar = 10.0 / cfg.eta_s;
        let n_b = 10.0;
        let l_b = cfg.l_b();
        let e_mu = l_b * n_b;
        let var_mu = l_b * (n_b + n_b * n_b);
        let var_oracle = e_mu + var_mu;

        let mut rng = derive_rng(17, &[0]);
        let reps = 10_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for k in 0..reps {
            let rec =
                classical_count(&cfg, &full_target(), k + 1, 0.0, Mode::Sampled, &mut rng).unwrap();
            sum += rec.count;
            sumsq += rec.count * rec.count;
        }
        let mean = sum / reps as f64;
        let var = sumsq / reps as f64 - mean * mean;
        assert!(var > 5.0 * mean, "super-Poissonian margin: var {var} mean {mean}");
        assert!((var / var_oracle - 1.0).abs() < 0.1, "var {var} oracle {var_oracle}");
    }

    #[test]
    fn heralded_noise_free_is_eta_h_eta_i_times_classical() {
        let cfg = OpticalConfig::reference_defaults();
        let mut rng = derive_rng(1, &[]);
        let t = full_target();
        let chi = 0.37;
        let c = classical_count(&cfg, &t, 1, chi, Mode::Expectation, &mut rng).unwrap();
        let q = heralded_count(&cfg, &t, 1, chi, Mode::Expectation, &mut rng).unwrap();
        let expected = cfg.eta_h * cfg.eta_i * c.count;
        assert!((q.count - expected).abs() < 1e-9 * expected, "{} vs {expected}", q.count);
    }

    #[test]
    fn heralded_signal_off_leaves_closed_form_accidentals() {
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.set_noise_level(1000.0);
        let mut rng = derive_rng(1, &[]);
        // chi = 0: no pattern overlap, pure accidentals.
        let q = heralded_count(&cfg, &full_target(), 1, 0.0, Mode::Expectation, &mut rng).unwrap();
        let accidental = (cfg.eta_i * cfg.n_s_bar * cfg.l_s())
            * (cfg.eta_s * cfg.n_b_bar * cfg.l_b())
            * cfg.t_c
            / cfg.tau;
        assert!((q.count - accidental).abs() < 1e-9 * accidental);
        // n_s_bar = 0 kills both signal and idler: nothing at all.
        cfg.n_s_bar = 0.0;
        let q = heralded_count(&cfg, &full_target(), 1, 0.0, Mode::Expectation, &mut rng).unwrap();
        assert_eq!(q.count, 0.0);
    }

    #[test]
    fn expectation_is_mean_of_sampled() {
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.set_noise_level(70.0);
        let t = full_target();
        let chi = 0.4;
        let mut rng = derive_rng(5, &[2]);
        for scheme in [Scheme::Classical, Scheme::Heralded] {
            let run = |mode, rng: &mut _| match scheme {
                Scheme::Classical => classical_count(&cfg, &t, 1, chi, mode, rng).unwrap().count,
                Scheme::Heralded => heralded_count(&cfg, &t, 1, chi, mode, rng).unwrap().count,
            };
            let expect = run(Mode::Expectation, &mut rng);
            let reps = 10_000usize;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..reps {
                let x = run(Mode::Sampled, &mut rng);
                sum += x;
                sumsq += x * x;
            }
            let mean = sum / reps as f64;
            let sd = (sumsq / reps as f64 - mean * mean).sqrt();
            let se = sd / (reps as f64).sqrt();
            assert!(
                (mean - expect).abs() < 4.0 * se,
                "{scheme}: mean {mean} expectation {expect} se {se}"
            );
        }
    }

    #[test]
    fn expectation_counts_are_monotone() {
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.set_noise_level(3.0);
        let mut rng = derive_rng(1, &[]);
        let mut count = |chi: f64, eta_e: f64, scale: f64, scheme: Scheme| {
            let mut c = cfg.clone();
            c.n_s_bar *= scale;
            let t = TargetProfile::full_aperture(32).with_eta_e(eta_e).unwrap();
            match scheme {
                Scheme::Classical => {
                    classical_count(&c, &t, 1, chi, Mode::Expectation, &mut rng).unwrap().count
                }
                Scheme::Heralded => {
                    heralded_count(&c, &t, 1, chi, Mode::Expectation, &mut rng).unwrap().count
                }
            }
        };
        for scheme in [Scheme::Classical, Scheme::Heralded] {
            let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
            for w in grid.windows(2) {
                let (lo, hi) = (count(w[0], 1.0, 1.0, scheme), count(w[1], 1.0, 1.0, scheme));
                assert!(lo <= hi, "{scheme}: not monotone in chi");
                let (lo, hi) = (count(0.5, w[0], 1.0, scheme), count(0.5, w[1], 1.0, scheme));
                assert!(lo <= hi, "{scheme}: not monotone in eta_e");
                let (lo, hi) = (
                    count(0.5, 1.0, 1.0 + w[0], scheme),
                    count(0.5, 1.0, 1.0 + w[1], scheme),
                );
                assert!(lo <= hi, "{scheme}: not monotone in n_s_bar");
            }
        }
    }

    #[test]
    fn accidental_term_scales_linearly() {
        let mut base = OpticalConfig::reference_defaults();
        base.set_noise_level(10.0);
        let mut rng = derive_rng(1, &[]);
        let mut acc = |cfg: &OpticalConfig| {
            heralded_count(cfg, &full_target(), 1, 0.0, Mode::Expectation, &mut rng)
                .unwrap()
                .count
        };
        let a0 = acc(&base);

        let mut c = base.clone();
        c.n_b_bar *= 2.0;
        assert!((acc(&c) / a0 - 2.0).abs() < 1e-12);

        let mut c = base.clone();
        c.n_s_bar *= 3.0; // enters through the idler arm
        assert!((acc(&c) / a0 - 3.0).abs() < 1e-12);

        let mut c = base.clone();
        c.t_c *= 2.0;
        assert!((acc(&c) / a0 - 2.0).abs() < 1e-12);

        // Inverse in tau at fixed integrated idler/noise photon numbers:
        // double tau while halving the per-bin means.
        let mut c = base.clone();
        c.tau *= 2.0;
        c.n_s_bar /= 2.0;
        c.n_b_bar /= 2.0;
        assert!((acc(&c) / a0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heralded_noise_suppression_ratio_is_closed_form() {
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.set_noise_level(50.0);
        let mut rng = derive_rng(1, &[]);
        let t = full_target();
        // Noise-only terms: chi = 0 isolates the noise path in both schemes.
        let c = classical_count(&cfg, &t, 1, 0.0, Mode::Expectation, &mut rng).unwrap();
        let q = heralded_count(&cfg, &t, 1, 0.0, Mode::Expectation, &mut rng).unwrap();
        let idler_counts = cfg.eta_i * cfg.n_s_bar * cfg.l_s();
        let expected = idler_counts * cfg.t_c / cfg.tau;
        let ratio = q.count / c.count;
        assert!((ratio / expected - 1.0).abs() < 1e-12, "ratio {ratio} vs {expected}");
    }

    #[test]
    fn noise_level_matches_brute_force_ratio() {
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.set_noise_level(70.0);
        let t = full_target();
        assert!((noise_level(&cfg, &t).unwrap() - 70.0).abs() < 1e-9);

        // Arbitrary config: ratio of expectation counts with chi=1 (signal
        // only) and with n_s_bar = 0 (noise only).
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.n_b_bar = 3.7e-4;
        cfg.tau_b = 2e-6;
        let t = TargetProfile::full_aperture(32).with_eta_e(0.6).unwrap();
        let mut rng = derive_rng(1, &[]);
        let mut signal_only = cfg.clone();
        signal_only.n_b_bar = 0.0;
        let s = classical_count(&signal_only, &t, 1, 1.0, Mode::Expectation, &mut rng).unwrap();
        let mut noise_only = cfg.clone();
        noise_only.n_s_bar = 0.0;
        let n = classical_count(&noise_only, &t, 1, 1.0, Mode::Expectation, &mut rng).unwrap();
        let brute = n.count / s.count;
        assert!((noise_level(&cfg, &t).unwrap() / brute - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_level_zero_signal_is_distinct_error() {
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.n_s_bar = 0.0;
        match noise_level(&cfg, &full_target()) {
            Err(Error::ZeroSignal) => {}
            other => panic!("expected ZeroSignal, got {other:?}"),
        }
        assert_eq!(noise_level(&OpticalConfig::reference_defaults(), &full_target()).unwrap(), 0.0);
    }

    #[test]
    fn config_file_parsing() {
        let kv = KvFile::parse_str(
            "rate_s = 7800\nnoise_level = 70\ntau_b = 5e-6\neta_h = 0.14\n",
            "t",
        )
        .unwrap();
        let cfg = OpticalConfig::from_kv(&kv).unwrap();
        assert!((cfg.rate_s() - 7800.0).abs() < 1e-9);
        assert!(
            (noise_level(&cfg, &TargetProfile::full_aperture(32)).unwrap() - 70.0).abs() < 1e-9
        );

        let bad = KvFile::parse_str("rate_s = 1\nn_s_bar = 2", "t").unwrap();
        assert!(OpticalConfig::from_kv(&bad).is_err());
        let bad = KvFile::parse_str("noise_level = 1\nn_b_bar = 2", "t").unwrap();
        assert!(OpticalConfig::from_kv(&bad).is_err());
    }

    #[test]
    fn validation_rejects_window_comparable_to_tau() {
        let mut cfg = OpticalConfig::reference_defaults();
        cfg.t_c = 0.01;
        assert!(cfg.validate().is_err());
        cfg = OpticalConfig::reference_defaults();
        cfg.eta_h = 1.3;
        assert!(cfg.validate().is_err());
        cfg = OpticalConfig::reference_defaults();
        cfg.tau_s = 2.0;
        assert!(cfg.validate().is_err());
    }
}
