//! Event-level photon time-tag simulation and coincidence analysis.
//!
//! This is the ground-truth oracle for the count model: photon-pair emission
//! is a homogeneous Poisson process, each arm is thinned by its survival
//! probability, tags get detector jitter and a signal-path delay, and an
//! independent Poisson background lands on the signal channel. Analysis
//! builds the cross-correlation histogram of signal−idler time differences
//! with a linear two-pointer sweep, locates its peak, and counts
//! coincidences inside a window `T_c` centered on the peak — so the result
//! does not depend on the path length difference between the arms.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::Error;
use crate::Result;

/// Detector channel of a time tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum Channel {
    Signal = 0,
    Idler = 1,
}

impl Channel {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Channel::Signal),
            1 => Ok(Channel::Idler),
            other => Err(Error::invalid(format!("unknown channel byte {other}"))),
        }
    }
}

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeTag {
    /// Picoseconds from stream start.
    pub time_ps: u64,
    pub channel: Channel,
}

/// Time-ordered detection record for one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct TagStream {
    pub duration_ps: u64,
    /// Sorted ascending by `(time_ps, channel)`.
    pub tags: Vec<TimeTag>,
}

/// Generation parameters for [`generate_stream`].
#[derive(Debug, Clone)]
pub struct StreamParams {
    /// Photon-pair emission rate, counts/s.
    pub pair_rate_cps: f64,
    /// Probability that a pair's signal tag is lost.
    pub signal_loss_prob: f64,
    /// Probability that a pair's idler tag is lost.
    pub idler_loss_prob: f64,
    /// Uncorrelated background rate on the signal channel, counts/s.
    pub noise_rate_cps: f64,
    /// Gaussian detector jitter applied to every tag, ps (1σ).
    pub jitter_sigma_ps: f64,
    /// Signal-path delay relative to the idler path, ps.
    pub path_delay_ps: f64,
    /// Acquisition length, seconds.
    pub duration_s: f64,
}

impl StreamParams {
    fn validate(&self) -> Result<()> {
        if !(self.pair_rate_cps >= 0.0) || !(self.noise_rate_cps >= 0.0) {
            return Err(Error::invalid("rates must be >= 0"));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::invalid("duration must be > 0"));
        }
        if !(self.jitter_sigma_ps >= 0.0) {
            return Err(Error::invalid("jitter_sigma must be >= 0"));
        }
        for (name, p) in [
            ("signal_loss_prob", self.signal_loss_prob),
            ("idler_loss_prob", self.idler_loss_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if !self.path_delay_ps.is_finite() {
            return Err(Error::invalid("path_delay must be finite"));
        }
        let dur_ps = self.duration_s * 1e12;
        if dur_ps >= i64::MAX as f64 {
            return Err(Error::invalid("duration exceeds the 64-bit picosecond range"));
        }
        Ok(())
    }
}

/// Arrival times of a homogeneous Poisson process over `[0, duration)`.
fn poisson_arrivals(rate_cps: f64, duration_s: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut times = Vec::new();
    if rate_cps <= 0.0 {
        return times;
    }
    let exp = Exp::new(rate_cps).expect("rate > 0");
    let mut t = 0.0f64;
    loop {
        t += exp.sample(rng);
        if t >= duration_s {
            return times;
        }
        times.push(t);
    }
}

/// Simulate one acquisition.
pub fn generate_stream(params: &StreamParams, rng: &mut impl Rng) -> Result<TagStream> {
    params.validate()?;
    let duration_ps = (params.duration_s * 1e12).round() as u64;
    let mut tags: Vec<TimeTag> = Vec::new();

    let push = |t_ps: f64, channel: Channel, tags: &mut Vec<TimeTag>| {
        if t_ps >= 0.0 && t_ps < duration_ps as f64 {
            tags.push(TimeTag {
                time_ps: t_ps as u64,
                channel,
            });
        }
    };

    for t in poisson_arrivals(params.pair_rate_cps, params.duration_s, rng) {
        let base_ps = t * 1e12;
        let keep_idler = rng.gen::<f64>() >= params.idler_loss_prob;
        let keep_signal = rng.gen::<f64>() >= params.signal_loss_prob;
        if keep_idler {
            let jitter: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            push(base_ps + params.jitter_sigma_ps * jitter, Channel::Idler, &mut tags);
        }
        if keep_signal {
            let jitter: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            push(
                base_ps + params.path_delay_ps + params.jitter_sigma_ps * jitter,
                Channel::Signal,
                &mut tags,
            );
        }
    }
    for t in poisson_arrivals(params.noise_rate_cps, params.duration_s, rng) {
        // Background tags carry jitter too, but a jittered Poisson process is
        // statistically identical, so they are emitted as-is.
        push(t * 1e12, Channel::Signal, &mut tags);
    }

    tags.sort_unstable_by_key(|t| (t.time_ps, t.channel as u8));
    Ok(TagStream { duration_ps, tags })
}

impl TagStream {
    pub fn singles(&self, channel: Channel) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }

    /// Merge two streams into one sorted record.
    pub fn merge(&self, other: &TagStream) -> TagStream {
        let mut tags = Vec::with_capacity(self.tags.len() + other.tags.len());
        let (mut a, mut b) = (self.tags.iter().peekable(), other.tags.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&x), Some(&&y)) => {
                    if (x.time_ps, x.channel as u8) <= (y.time_ps, y.channel as u8) {
                        tags.push(x);
                        a.next();
                    } else {
                        tags.push(y);
                        b.next();
                    }
                }
                (Some(&&x), None) => {
                    tags.push(x);
                    a.next();
                }
                (None, Some(&&y)) => {
                    tags.push(y);
                    b.next();
                }
                (None, None) => break,
            }
        }
        TagStream {
            duration_ps: self.duration_ps.max(other.duration_ps),
            tags,
        }
    }

    /// Binary tag file: magic `SPIT`, u32 LE version, u64 LE duration_ps,
    /// then 9-byte records (u64 LE timestamp_ps, u8 channel).
    pub fn write_spit(&self, path: &Path) -> Result<()> {
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut res = || -> std::io::Result<()> {
            out.write_all(b"SPIT")?;
            out.write_all(&SPIT_VERSION.to_le_bytes())?;
            out.write_all(&self.duration_ps.to_le_bytes())?;
            for tag in &self.tags {
                out.write_all(&tag.time_ps.to_le_bytes())?;
                out.write_all(&[tag.channel as u8])?;
            }
            out.flush()
        };
        res().map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_spit(path: &Path) -> Result<TagStream> {
        let name = path.display().to_string();
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(name.clone(), e))?;
        if buf.len() < 16 || &buf[..4] != b"SPIT" {
            return Err(Error::parse(name, "missing SPIT magic"));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != SPIT_VERSION {
            return Err(Error::parse(name, format!("unsupported version {version}")));
        }
        let duration_ps = u64::from_le_bytes(buf[8..16].try_into().unwrap());
        let body = &buf[16..];
        if body.len() % 9 != 0 {
            return Err(Error::parse(name, "truncated tag record"));
        }
        let mut tags = Vec::with_capacity(body.len() / 9);
        let mut last = None;
        for rec in body.chunks_exact(9) {
            let time_ps = u64::from_le_bytes(rec[..8].try_into().unwrap());
            let channel = Channel::from_u8(rec[8])?;
            if time_ps >= duration_ps {
                return Err(Error::parse(name, "timestamp beyond stream duration"));
            }
            if let Some(prev) = last {
                if time_ps < prev {
                    return Err(Error::parse(name, "timestamps not sorted"));
                }
            }
            last = Some(time_ps);
            tags.push(TimeTag { time_ps, channel });
        }
        Ok(TagStream { duration_ps, tags })
    }
}

const SPIT_VERSION: u32 = 1;

/// Located histogram peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub bin: usize,
    /// Bin-center delay, ps.
    pub delay_ps: f64,
    pub counts: u64,
}

/// Cross-correlation histogram of signal−idler time differences.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    /// Histogram covers delays in `[-half_span, +half_span)`.
    pub half_span_ps: i64,
    pub counts: Vec<u64>,
    /// None when the stream produced no pairs at all.
    pub peak: Option<Peak>,
    pub duration_ps: u64,
    pub n_signal: u64,
    pub n_idler: u64,
}

/// Histogram signal−idler delays over `[-max_delay, +max_delay)`, the span
/// rounded up to whole bins.
///
/// Linear in the number of tags (two-pointer sweep over the sorted stream).
pub fn correlate(ts: &TagStream, bin_width_ps: u64, max_delay_ps: u64) -> Result<CorrelationHistogram> {
    if bin_width_ps == 0 {
        return Err(Error::invalid("bin_width must be > 0"));
    }
    if max_delay_ps < bin_width_ps {
        return Err(Error::invalid("max_delay must be >= bin_width"));
    }
    let half_bins = max_delay_ps.div_ceil(bin_width_ps);
    let n_bins = (2 * half_bins) as usize;
    let half_span = (half_bins * bin_width_ps) as i64;
    let mut counts = vec![0u64; n_bins];

    let signal: Vec<i64> = ts
        .tags
        .iter()
        .filter(|t| t.channel == Channel::Signal)
        .map(|t| t.time_ps as i64)
        .collect();
    let idler: Vec<i64> = ts
        .tags
        .iter()
        .filter(|t| t.channel == Channel::Idler)
        .map(|t| t.time_ps as i64)
        .collect();

    let w = bin_width_ps as i64;
    let mut lo = 0usize;
    for &s in &signal {
        while lo < idler.len() && idler[lo] <= s - half_span {
            lo += 1;
        }
        for &i in &idler[lo..] {
            let delta = s - i;
            if delta < -half_span {
                break; // idler too far in the future; later idlers only more so
            }
            if delta < half_span {
                counts[((delta + half_span) / w) as usize] += 1;
            }
        }
    }

    let mut hist = CorrelationHistogram {
        bin_width_ps,
        half_span_ps: half_span,
        counts,
        peak: None,
        duration_ps: ts.duration_ps,
        n_signal: signal.len() as u64,
        n_idler: idler.len() as u64,
    };
    hist.peak = hist.find_peak();
    Ok(hist)
}

impl CorrelationHistogram {
    pub fn bin_center_ps(&self, bin: usize) -> f64 {
        -(self.half_span_ps as f64) + (bin as f64 + 0.5) * self.bin_width_ps as f64
    }

    /// Max-count bin; ties break toward the smallest |delay|, then the lower
    /// bin index, so peak location is deterministic.
    fn find_peak(&self) -> Option<Peak> {
        let best = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .min_by(|(i, a), (j, b)| {
                b.cmp(a)
                    .then_with(|| {
                        self.bin_center_ps(*i)
                            .abs()
                            .partial_cmp(&self.bin_center_ps(*j).abs())
                            .unwrap()
                    })
                    .then_with(|| i.cmp(j))
            })?;
        Some(Peak {
            bin: best.0,
            delay_ps: self.bin_center_ps(best.0),
            counts: *best.1,
        })
    }

    /// Coincidences inside a window of total width `t_c_ps` centered on the
    /// histogram peak.
    pub fn coincidences_in_window(&self, t_c_ps: u64) -> Result<u64> {
        let peak = self.peak.ok_or_else(|| {
            Error::NoPeak("histogram is empty; no coincidence peak to window".into())
        })?;
        if t_c_ps < self.bin_width_ps {
            return Err(Error::invalid("t_c must be >= bin_width"));
        }
        Ok(self.window_counts_at_bin(peak.bin, t_c_ps))
    }

    /// Window sum around an explicit delay (ps) rather than the found peak.
    /// This is the oracle entry point for accidental-rate checks, where a
    /// flat histogram has no meaningful peak.
    pub fn window_counts_at(&self, center_ps: i64, t_c_ps: u64) -> Result<u64> {
        if t_c_ps < self.bin_width_ps {
            return Err(Error::invalid("t_c must be >= bin_width"));
        }
        if center_ps < -self.half_span_ps || center_ps >= self.half_span_ps {
            return Err(Error::invalid("window center outside histogram span"));
        }
        let bin = ((center_ps + self.half_span_ps) / self.bin_width_ps as i64) as usize;
        Ok(self.window_counts_at_bin(bin, t_c_ps))
    }

    /// Sum of the `2·floor((T_c − w) / 2w) + 1` bins centered on `bin`: bins
    /// fully inside the window. Exact when `T_c` is an odd multiple of the
    /// bin width (e.g. 650 ps over 50 ps bins).
    fn window_counts_at_bin(&self, bin: usize, t_c_ps: u64) -> u64 {
        let max_off = ((t_c_ps - self.bin_width_ps) / (2 * self.bin_width_ps)) as usize;
        let lo = bin.saturating_sub(max_off);
        let hi = (bin + max_off).min(self.counts.len() - 1);
        self.counts[lo..=hi].iter().sum()
    }

    /// CSV rows `delay_ps,counts` with bin-center delays.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("delay_ps,counts\n");
        for (i, &c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:.1},{c}\n", self.bin_center_ps(i)));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}
