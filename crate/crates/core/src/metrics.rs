//! Region-based SNR and the correlation-induced enhancement factor.
//!
//! `SNR = |μ_T − μ_B|² / (2·(σ_T + σ_B)²)` over disjoint target and
//! background pixel regions, with population standard deviations (no Bessel
//! correction). The enhancement factor CEF is the heralded-to-classical SNR
//! ratio. The formula is invariant under any affine transform of the image,
//! so normalization for export never affects metrics.

use crate::error::Error;
use crate::pattern::TargetProfile;
use crate::photon::Mode;
use crate::reconstruct::ImageResult;
use crate::Result;

/// Disjoint target/background pixel masks with a guard band between them.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    side: usize,
    target: Vec<bool>,
    background: Vec<bool>,
    guard: usize,
}

impl RegionSpec {
    pub fn new(side: usize, target: Vec<bool>, background: Vec<bool>, guard: usize) -> Result<Self> {
        if target.len() != side * side || background.len() != side * side {
            return Err(Error::invalid("region masks must match the image extent"));
        }
        if target.iter().zip(&background).any(|(&t, &b)| t && b) {
            return Err(Error::invalid("target and background masks overlap"));
        }
        if !target.contains(&true) || !background.contains(&true) {
            return Err(Error::invalid("both regions must be non-empty"));
        }
        Ok(RegionSpec {
            side,
            target,
            background,
            guard,
        })
    }

    /// Default construction: target = χ=1 pixels, background = χ=0 pixels
    /// outside a `guard`-pixel morphological band around the target boundary
    /// (8-neighborhood dilation). The band absorbs edge-pixel ambiguity from
    /// finite basis truncation.
    pub fn from_target(target: &TargetProfile, guard: usize) -> Result<Self> {
        let side = target.side();
        let t: Vec<bool> = target.chi().iter().map(|&b| b == 1).collect();
        let mut dilated = t.clone();
        for _ in 0..guard {
            let prev = dilated.clone();
            for r in 0..side {
                for c in 0..side {
                    if prev[r * side + c] {
                        continue;
                    }
                    let touch = (-1i64..=1).any(|dr| {
                        (-1i64..=1).any(|dc| {
                            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                            nr >= 0
                                && nr < side as i64
                                && nc >= 0
                                && nc < side as i64
                                && prev[(nr * side as i64 + nc) as usize]
                        })
                    });
                    if touch {
                        dilated[r * side + c] = true;
                    }
                }
            }
        }
        let background: Vec<bool> = dilated.iter().map(|&d| !d).collect();
        RegionSpec::new(side, t, background, guard)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn guard(&self) -> usize {
        self.guard
    }

    pub fn target_mask(&self) -> &[bool] {
        &self.target
    }

    pub fn background_mask(&self) -> &[bool] {
        &self.background
    }

    /// Swap target and background labels (the SNR is symmetric under this).
    pub fn swapped(&self) -> RegionSpec {
        RegionSpec {
            side: self.side,
            target: self.background.clone(),
            background: self.target.clone(),
            guard: self.guard,
        }
    }
}

/// SNR with its region statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrStats {
    pub snr: f64,
    pub mu_t: f64,
    pub mu_b: f64,
    pub sigma_t: f64,
    pub sigma_b: f64,
    /// Set when σ_T + σ_B = 0 (noise-free degenerate image); `snr` is +∞.
    pub infinite: bool,
}

fn region_stats(img: &ImageResult, mask: &[bool]) -> (f64, f64) {
    let mut n = 0.0;
    let mut sum = 0.0;
    for (v, &m) in img.g2.iter().zip(mask) {
        if m {
            n += 1.0;
            sum += v;
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for (v, &m) in img.g2.iter().zip(mask) {
        if m {
            ss += (v - mean) * (v - mean);
        }
    }
    (mean, (ss / n).sqrt())
}

/// `|μ_T − μ_B|² / (2·(σ_T + σ_B)²)` with population standard deviations.
pub fn snr(img: &ImageResult, regions: &RegionSpec) -> Result<SnrStats> {
    if img.side != regions.side {
        return Err(Error::invalid(format!(
            "image side {} does not match region side {}",
            img.side, regions.side
        )));
    }
    let (mu_t, sigma_t) = region_stats(img, &regions.target);
    let (mu_b, sigma_b) = region_stats(img, &regions.background);
    let spread = sigma_t + sigma_b;
    let (snr, infinite) = if spread == 0.0 {
        (f64::INFINITY, true)
    } else {
        let d = mu_t - mu_b;
        (d * d / (2.0 * spread * spread), false)
    };
    Ok(SnrStats {
        snr,
        mu_t,
        mu_b,
        sigma_t,
        sigma_b,
        infinite,
    })
}

/// Correlation-induced enhancement factor, `SNR_Q / SNR_C`.
///
/// `None` when the ratio is undefined (zero classical SNR, or both infinite).
pub fn cef(snr_q: f64, snr_c: f64) -> Option<f64> {
    if snr_c == 0.0 || snr_c.is_nan() || snr_q.is_nan() {
        return None;
    }
    if snr_q.is_infinite() && snr_c.is_infinite() {
        return None;
    }
    Some(snr_q / snr_c)
}

/// Full metrics for one sweep cell (one noise level / transmittance / seed).
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub mode: Mode,
    pub noise_level: f64,
    pub eta_e: f64,
    pub seed: u64,
    pub classical: Option<SnrStats>,
    pub heralded: Option<SnrStats>,
    pub cef: Option<f64>,
}

impl MetricsReport {
    pub fn from_stats(
        mode: Mode,
        noise_level: f64,
        eta_e: f64,
        seed: u64,
        classical: Option<SnrStats>,
        heralded: Option<SnrStats>,
    ) -> Self {
        let cef = match (&heralded, &classical) {
            (Some(q), Some(c)) => cef(q.snr, c.snr),
            _ => None,
        };
        MetricsReport {
            mode,
            noise_level,
            eta_e,
            seed,
            classical,
            heralded,
            cef,
        }
    }
}
