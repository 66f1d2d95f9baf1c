//! Aggregation of sweep outputs into median / interquartile summary tables.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Error;
use crate::scenario::METRICS_HEADER;
use crate::Result;

/// Median and quartiles over the seed axis for one `(scheme, mode, level, η_e)` group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: String,
    pub mode: String,
    pub noise_level: f64,
    pub eta_e: f64,
    pub n: usize,
    pub snr_q1: f64,
    pub snr_median: f64,
    pub snr_q3: f64,
    /// Absent when no row in the group carried a defined CEF.
    pub cef_q1: Option<f64>,
    pub cef_median: Option<f64>,
    pub cef_q3: Option<f64>,
}

/// Aggregated table plus itemized row-level parse failures.
#[derive(Debug)]
pub struct ReportOutput {
    pub rows: Vec<SummaryRow>,
    pub row_errors: Vec<String>,
}

/// Linear-interpolation quantile of an ascending-sorted, non-empty slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = h - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Median of an unsorted list (consumes the buffer order).
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile(values, 0.5)
}

/// Aggregate `run_dir/metrics.csv` across seeds.
///
/// Malformed rows are reported in [`ReportOutput::row_errors`] and skipped;
/// the table is built from whatever parsed.
pub fn report(run_dir: &Path) -> Result<ReportOutput> {
    let path = run_dir.join("metrics.csv");
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == METRICS_HEADER => {}
        _ => {
            return Err(Error::parse(
                path.display().to_string(),
                format!("missing header `{METRICS_HEADER}`"),
            ))
        }
    }

    type Key = (String, String, u64, u64); // scheme, mode, level bits, eta bits
    let mut groups: BTreeMap<Key, (f64, f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut row_errors = Vec::new();

    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line) {
            Ok((scheme, mode, level, eta, snr, cef)) => {
                let key = (scheme, mode, level.to_bits(), eta.to_bits());
                let entry = groups
                    .entry(key)
                    .or_insert_with(|| (level, eta, Vec::new(), Vec::new()));
                entry.2.push(snr);
                if let Some(c) = cef {
                    entry.3.push(c);
                }
            }
            Err(reason) => row_errors.push(format!("line {}: {reason}", idx + 1)),
        }
    }

    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((scheme, mode, _, _), (level, eta, mut snrs, mut cefs))| {
            snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cefs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cef_stats = if cefs.is_empty() {
                (None, None, None)
            } else {
                (
                    Some(quantile(&cefs, 0.25)),
                    Some(quantile(&cefs, 0.5)),
                    Some(quantile(&cefs, 0.75)),
                )
            };
            SummaryRow {
                scheme,
                mode,
                noise_level: level,
                eta_e: eta,
                n: snrs.len(),
                snr_q1: quantile(&snrs, 0.25),
                snr_median: quantile(&snrs, 0.5),
                snr_q3: quantile(&snrs, 0.75),
                cef_q1: cef_stats.0,
                cef_median: cef_stats.1,
                cef_q3: cef_stats.2,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.mode, &a.scheme)
            .cmp(&(&b.mode, &b.scheme))
            .then(a.noise_level.partial_cmp(&b.noise_level).unwrap())
            .then(a.eta_e.partial_cmp(&b.eta_e).unwrap())
    });
    Ok(ReportOutput { rows, row_errors })
}

/// (scheme, mode, noise_level, eta_e, snr, cef) from one metrics row.
type ParsedRow = (String, String, f64, f64, f64, Option<f64>);

fn parse_row(line: &str) -> std::result::Result<ParsedRow, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 11 {
        return Err(format!("expected 11 fields, got {}", fields.len()));
    }
    let parse = |name: &str, v: &str| -> std::result::Result<f64, String> {
        v.parse::<f64>().map_err(|_| format!("{name} `{v}` is not a number"))
    };
    let level = parse("noise_level", fields[2])?;
    let eta = parse("eta_e", fields[3])?;
    let snr = parse("snr", fields[5])?;
    if snr.is_nan() {
        return Err("snr is NaN".into());
    }
    let cef = match fields[6] {
        "NA" => None,
        v => Some(parse("cef", v)?),
    };
    Ok((fields[0].to_string(), fields[1].to_string(), level, eta, snr, cef))
}

pub const SUMMARY_HEADER: &str =
    "scheme,mode,noise_level,eta_e,n,snr_q1,snr_median,snr_q3,cef_q1,cef_median,cef_q3";

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = format!("{SUMMARY_HEADER}\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_else(|| "NA".into());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.scheme,
            r.mode,
            r.noise_level,
            r.eta_e,
            r.n,
            r.snr_q1,
            r.snr_median,
            r.snr_q3,
            opt(r.cef_q1),
            opt(r.cef_median),
            opt(r.cef_q3),
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
