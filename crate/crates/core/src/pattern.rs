//! Hadamard-derived binary illumination patterns and target profiles.
//!
//! The modulation basis is built from the Sylvester Hadamard matrix of order
//! `M = side²`: pattern `k` (1-based, `k ≤ M`) is the k-th Hadamard column
//! reshaped column-major into a `side × side` {0,1} matrix via
//! `P(k) = (J + H(k)) / 2`, and pattern `k + M` is its complement
//! `J − P(k)`. A display device that can only reflect or block needs both
//! members of each pair, so a full acquisition uses `2M` patterns.
//!
//! Compressive runs keep only the leading pairs under a significance
//! ordering; the default orders patterns by ascending total sign-change count
//! over rows and columns of the ±1 matrix (2D Walsh ordering), which front-
//! loads low spatial frequencies.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use crate::error::Error;
use crate::Result;

/// Significance ordering for compressive pattern selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ordering {
    /// Ascending sign-change count over rows + columns of the ±1 pattern.
    Walsh2d,
    /// Sylvester column order, k = 1..M.
    Natural,
    /// Caller-supplied permutation of 1..=M (most significant first).
    External(Vec<usize>),
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ordering::Walsh2d => write!(f, "walsh"),
            Ordering::Natural => write!(f, "natural"),
            Ordering::External(_) => write!(f, "external"),
        }
    }
}

#[derive(Debug)]
struct PatternData {
    side: usize,
    m: usize,
    /// 2M patterns, each `m` bytes of {0,1}, row-major, concatenated.
    cells: Vec<u8>,
    /// Original pattern indices (1-based) from most to least significant.
    order_map: Vec<usize>,
}

/// Ordered set of binary illumination patterns with complementary pairs.
///
/// Cheap to clone: pattern storage is shared. Immutable after construction,
/// safe for concurrent reads.
#[derive(Debug, Clone)]
pub struct PatternSet {
    data: Arc<PatternData>,
    /// Active pattern indices, 1-based into the full 2M list.
    active: Vec<usize>,
    /// Number of active original/inverse pairs.
    pairs: usize,
}

/// Parity of `popcount(i & j)` gives the Sylvester Hadamard entry sign.
#[inline]
fn hadamard_sign(i: usize, j: usize) -> i32 {
    if (i & j).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

impl PatternSet {
    /// Build the full `2M`-pattern basis for a `side × side` image.
    ///
    /// `side` must be an even power of two (the Sylvester construction needs
    /// a power-of-two order and a display pattern needs at least 2×2).
    pub fn build(side: usize, ordering: Ordering) -> Result<Self> {
        if side < 2 || !side.is_power_of_two() {
            return Err(Error::invalid(format!(
                "side must be a power of two >= 2, got {side}"
            )));
        }
        let m = side * side;
        let mut cells = vec![0u8; 2 * m * m];
        for k in 0..m {
            let (orig, inv) = cells[k * m..].split_at_mut(m);
            let inv = &mut inv[(m - 1) * m..]; // pattern k+M lives m-1 patterns later
            for r in 0..side {
                for c in 0..side {
                    // Column-major reshape of Hadamard column k.
                    let flat = c * side + r;
                    let bit = (hadamard_sign(flat, k) > 0) as u8;
                    orig[r * side + c] = bit;
                    inv[r * side + c] = 1 - bit;
                }
            }
        }

        let order_map = match ordering {
            Ordering::Natural => (1..=m).collect(),
            Ordering::Walsh2d => {
                let mut keyed: Vec<(usize, usize)> = (1..=m)
                    .map(|k| (sign_changes(&cells[(k - 1) * m..k * m], side), k))
                    .collect();
                keyed.sort(); // stable in value; ties break by index
                keyed.into_iter().map(|(_, k)| k).collect()
            }
            Ordering::External(perm) => {
                validate_permutation(&perm, m)?;
                perm
            }
        };

        let active = (1..=2 * m).collect();
        Ok(PatternSet {
            data: Arc::new(PatternData {
                side,
                m,
                cells,
                order_map,
            }),
            active,
            pairs: m,
        })
    }

    /// View keeping the first `pairs` originals under the significance
    /// ordering plus their matching inverses.
    pub fn select_subset(&self, pairs: usize) -> Result<Self> {
        let m = self.data.m;
        if pairs == 0 || pairs > m {
            return Err(Error::invalid(format!(
                "pairs must be in 1..={m}, got {pairs}"
            )));
        }
        let mut active = Vec::with_capacity(2 * pairs);
        active.extend_from_slice(&self.data.order_map[..pairs]);
        active.extend(self.data.order_map[..pairs].iter().map(|&k| k + m));
        Ok(PatternSet {
            data: Arc::clone(&self.data),
            active,
            pairs,
        })
    }

    /// Overlap fraction χ̃ between active pattern `k` and the target:
    /// `(1/M) Σ P(k)(i,j) · χ(i,j)`, in `[0, 1]`.
    pub fn overlap_fraction(&self, k: usize, target: &TargetProfile) -> Result<f64> {
        if !self.active.contains(&k) {
            return Err(Error::invalid(format!("pattern index {k} is not active")));
        }
        if target.side != self.data.side {
            return Err(Error::invalid(format!(
                "target side {} does not match pattern side {}",
                target.side, self.data.side
            )));
        }
        let p = self.pattern_cells(k)?;
        let sum: u64 = p
            .iter()
            .zip(target.chi.iter())
            .map(|(&a, &b)| (a & b) as u64)
            .sum();
        Ok(sum as f64 / self.data.m as f64)
    }

    /// Raw {0,1} cells of pattern `k` (1-based, row-major, any of the 2M).
    pub fn pattern_cells(&self, k: usize) -> Result<&[u8]> {
        let m = self.data.m;
        if k == 0 || k > 2 * m {
            return Err(Error::invalid(format!(
                "pattern index {k} out of range 1..={}",
                2 * m
            )));
        }
        Ok(&self.data.cells[(k - 1) * m..k * m])
    }

    pub fn side(&self) -> usize {
        self.data.side
    }

    /// Pixel count M = side².
    pub fn m(&self) -> usize {
        self.data.m
    }

    /// Active pattern indices, 1-based.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn subset_size(&self) -> usize {
        self.active.len()
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    /// Significance ordering over original patterns, most significant first.
    pub fn order_map(&self) -> &[usize] {
        &self.data.order_map
    }

    /// One binary PGM per active pattern (`pattern_0001.pgm`, values 0/255).
    pub fn write_pgm_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let side = self.data.side;
        for &k in &self.active {
            let path = dir.join(format!("pattern_{k:04}.pgm"));
            let mut out = Vec::with_capacity(self.data.m + 16);
            out.extend_from_slice(format!("P5\n{side} {side}\n255\n").as_bytes());
            out.extend(self.pattern_cells(k)?.iter().map(|&b| b * 255));
            std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    /// Packed bitset export: magic `SPIP`, then u16 LE side, u16 LE version,
    /// u32 LE pattern count, then for each active pattern its cells packed
    /// row-major, LSB-first, padded to a byte boundary.
    pub fn write_packed(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(b"SPIP");
        out.extend_from_slice(&(self.data.side as u16).to_le_bytes());
        out.extend_from_slice(&PACKED_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.active.len() as u32).to_le_bytes());
        let stride = self.data.m.div_ceil(8);
        for &k in &self.active {
            let cells = self.pattern_cells(k)?;
            let mut row = vec![0u8; stride];
            for (i, &bit) in cells.iter().enumerate() {
                row[i / 8] |= bit << (i % 8);
            }
            out.extend_from_slice(&row);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Export the significance ordering as CSV (`rank,pattern`, 1-based).
    pub fn write_order_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("rank,pattern\n");
        for (rank, &k) in self.data.order_map.iter().enumerate() {
            out.push_str(&format!("{rank},{k}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

const PACKED_VERSION: u16 = 1;

/// Read back a packed bitset file: `(side, patterns)`.
pub fn read_packed(path: &Path) -> Result<(usize, Vec<Vec<u8>>)> {
    let mut file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let name = path.display().to_string();
    if buf.len() < 12 || &buf[..4] != b"SPIP" {
        return Err(Error::parse(name, "missing SPIP magic"));
    }
    let side = u16::from_le_bytes([buf[4], buf[5]]) as usize;
    let version = u16::from_le_bytes([buf[6], buf[7]]);
    if version != PACKED_VERSION {
        return Err(Error::parse(name, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes([buf[8], buf[9], buf[10], buf[11]]) as usize;
    let m = side * side;
    let stride = m.div_ceil(8);
    if buf.len() != 12 + count * stride {
        return Err(Error::parse(name, "truncated pattern payload"));
    }
    let mut patterns = Vec::with_capacity(count);
    for p in 0..count {
        let row = &buf[12 + p * stride..12 + (p + 1) * stride];
        patterns.push((0..m).map(|i| (row[i / 8] >> (i % 8)) & 1).collect());
    }
    Ok((side, patterns))
}

/// Read a significance ordering exported by [`PatternSet::write_order_csv`].
///
/// Accepts a bare single column or `rank,pattern` rows (with or without a
/// header); the last field of each line is the 1-based pattern index.
pub fn read_order_csv(path: &Path, m: usize) -> Result<Vec<usize>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let name = path.display().to_string();
    let mut perm = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap().trim();
        match last.parse::<usize>() {
            Ok(k) => perm.push(k),
            Err(_) if i == 0 => continue, // header row
            Err(_) => {
                return Err(Error::parse(name, format!("line {}: `{last}` is not an index", i + 1)))
            }
        }
    }
    validate_permutation(&perm, m)?;
    Ok(perm)
}

fn validate_permutation(perm: &[usize], m: usize) -> Result<()> {
    if perm.len() != m {
        return Err(Error::invalid(format!(
            "ordering has {} entries, expected {m}",
            perm.len()
        )));
    }
    let mut seen = vec![false; m + 1];
    for &k in perm {
        if k == 0 || k > m || seen[k] {
            return Err(Error::invalid(format!(
                "ordering is not a permutation of 1..={m} (offending entry {k})"
            )));
        }
        seen[k] = true;
    }
    Ok(())
}

/// Sign changes along rows and columns of the ±1 matrix `2P − J`.
fn sign_changes(cells: &[u8], side: usize) -> usize {
    let mut changes = 0;
    for r in 0..side {
        for c in 0..side - 1 {
            changes += (cells[r * side + c] != cells[r * side + c + 1]) as usize;
        }
    }
    for c in 0..side {
        for r in 0..side - 1 {
            changes += (cells[r * side + c] != cells[(r + 1) * side + c]) as usize;
        }
    }
    changes
}

/// Binary transmission mask χ(i,j) with a controllable transmittance η_e.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetProfile {
    side: usize,
    chi: Vec<u8>,
    eta_e: f64,
}

impl TargetProfile {
    pub fn new(side: usize, chi: Vec<u8>, eta_e: f64) -> Result<Self> {
        if chi.len() != side * side {
            return Err(Error::invalid(format!(
                "mask has {} cells, expected {}",
                chi.len(),
                side * side
            )));
        }
        if chi.iter().any(|&b| b > 1) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        if !(0.0..=1.0).contains(&eta_e) {
            return Err(Error::invalid(format!("eta_e must be in [0,1], got {eta_e}")));
        }
        Ok(TargetProfile { side, chi, eta_e })
    }

    /// Full aperture, χ = J.
    pub fn full_aperture(side: usize) -> Self {
        TargetProfile {
            side,
            chi: vec![1; side * side],
            eta_e: 1.0,
        }
    }

    /// Built-in stealth-aircraft-shaped test aperture (fill ≈ 0.49 at 32×32).
    ///
    /// Designed on a 32×32 grid; other sides sample it nearest-neighbor.
    pub fn stealth(side: usize) -> Self {
        let mut base = vec![0u8; 32 * 32];
        for r in 3..29usize {
            let w = (r - 3) * 3 / 4 + 2;
            let lo = 16usize.saturating_sub(w);
            let hi = (16 + w).min(32);
            for c in lo..hi {
                base[r * 32 + c] = 1;
            }
        }
        for r in 27..29 {
            for c in 0..9 {
                base[r * 32 + c] = 0;
            }
            for c in 23..32 {
                base[r * 32 + c] = 0;
            }
        }
        let chi = (0..side * side)
            .map(|i| {
                let (r, c) = (i / side, i % side);
                base[(r * 32 / side) * 32 + c * 32 / side]
            })
            .collect();
        TargetProfile { side, chi, eta_e: 1.0 }
    }

    /// Load a mask from CSV rows of comma-separated 0/1 values.
    pub fn from_csv_mask(path: &Path, eta_e: f64) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let name = path.display().to_string();
        let mut rows: Vec<Vec<u8>> = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<u8>, _> =
                line.split(',').map(|v| v.trim().parse::<u8>()).collect();
            rows.push(row.map_err(|_| Error::parse(&name, "mask entries must be 0 or 1"))?);
        }
        let side = rows.len();
        if side == 0 || rows.iter().any(|r| r.len() != side) {
            return Err(Error::parse(name, "mask must be square and non-empty"));
        }
        TargetProfile::new(side, rows.concat(), eta_e)
    }

    pub fn with_eta_e(mut self, eta_e: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta_e) {
            return Err(Error::invalid(format!("eta_e must be in [0,1], got {eta_e}")));
        }
        self.eta_e = eta_e;
        Ok(self)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn chi(&self) -> &[u8] {
        &self.chi
    }

    pub fn eta_e(&self) -> f64 {
        self.eta_e
    }

    /// Fraction of transmitting pixels, Σχ / M.
    pub fn fill(&self) -> f64 {
        self.chi.iter().map(|&b| b as u64).sum::<u64>() as f64 / (self.side * self.side) as f64
    }

    /// Σχ over all pixels.
    pub fn pixel_sum(&self) -> u64 {
        self.chi.iter().map(|&b| b as u64).sum()
    }

    pub fn write_csv_mask(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in 0..self.side {
            let row: Vec<String> = (0..self.side)
                .map(|c| self.chi[r * self.side + c].to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}
