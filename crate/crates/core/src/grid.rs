//! Resource-grid dimensions, complex grids and pilot allocation patterns.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Subcarriers per base pattern block.
pub const BLOCK_SC: usize = 24;
/// Symbols per subframe.
pub const SUBFRAME_SYMBOLS: usize = 14;

/// Dense pattern: pilot-bearing symbols, grouped in pairs.
pub const DENSE_SYMBOLS: [usize; 8] = [2, 3, 5, 6, 8, 9, 11, 12];
/// Dense pattern: Tx antennas per block.
pub const DENSE_MAX_TX: usize = 12;
/// Sparse pattern: symbol pair per group of 8 Tx antennas.
pub const SPARSE_SYMBOLS: [(usize, usize); 4] = [(3, 10), (4, 11), (2, 9), (5, 12)];
/// Sparse pattern: Tx antennas per block.
pub const SPARSE_MAX_TX: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridDims {
    pub n_sc: usize,
    pub n_symb: usize,
    pub n_rx: usize,
    pub n_tx: usize,
}

impl GridDims {
    pub fn new(n_sc: usize, n_symb: usize, n_rx: usize, n_tx: usize) -> Result<Self> {
        let d = GridDims {
            n_sc,
            n_symb,
            n_rx,
            n_tx,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sc == 0 || self.n_symb == 0 || self.n_rx == 0 || self.n_tx == 0 {
            return Err(Error::Dims(format!("all extents must be at least 1, got {self}")));
        }
        if self.n_sc % 12 != 0 {
            return Err(Error::Dims(format!(
                "n_sc = {} is not a whole number of 12-subcarrier resource blocks",
                self.n_sc
            )));
        }
        Ok(())
    }

    /// Resource elements per antenna.
    pub fn n_re(&self) -> usize {
        self.n_sc * self.n_symb
    }
}

impl std::fmt::Display for GridDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{} grid, {}x{} MIMO", self.n_sc, self.n_symb, self.n_rx, self.n_tx)
    }
}

/// Complex samples over `(subcarrier, symbol, antenna)`, antenna fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaGrid {
    pub n_sc: usize,
    pub n_symb: usize,
    pub n_ant: usize,
    pub data: Vec<Complex64>,
}

/// Transmitted symbols `X`, one column per Tx antenna.
pub type TxGrid = AntennaGrid;
/// Received samples `Y`, one column per Rx antenna.
pub type RxGrid = AntennaGrid;
/// Additive noise `W`.
pub type NoiseGrid = AntennaGrid;

impl AntennaGrid {
    pub fn zeros(n_sc: usize, n_symb: usize, n_ant: usize) -> Self {
        AntennaGrid {
            n_sc,
            n_symb,
            n_ant,
            data: vec![Complex64::new(0.0, 0.0); n_sc * n_symb * n_ant],
        }
    }

    #[inline]
    pub fn idx(&self, f: usize, s: usize, a: usize) -> usize {
        (f * self.n_symb + s) * self.n_ant + a
    }

    #[inline]
    pub fn get(&self, f: usize, s: usize, a: usize) -> Complex64 {
        self.data[self.idx(f, s, a)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, s: usize, a: usize, v: Complex64) {
        let i = self.idx(f, s, a);
        self.data[i] = v;
    }

    /// All antennas at one RE.
    pub fn at(&self, f: usize, s: usize) -> &[Complex64] {
        let i = self.idx(f, s, 0);
        &self.data[i..i + self.n_ant]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Dense,
    Sparse,
    /// Loaded from a file.
    Custom,
}

impl PatternKind {
    pub fn id(self) -> u8 {
        match self {
            PatternKind::Dense => 0,
            PatternKind::Sparse => 1,
            PatternKind::Custom => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(PatternKind::Dense),
            1 => Ok(PatternKind::Sparse),
            2 => Ok(PatternKind::Custom),
            _ => Err(Error::Pattern(format!("unknown pattern id {id}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Dense => "dense",
            PatternKind::Sparse => "sparse",
            PatternKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dense" => Ok(PatternKind::Dense),
            "sparse" => Ok(PatternKind::Sparse),
            _ => Err(Error::Pattern(format!("unknown built-in pattern {s:?} (expected dense or sparse)"))),
        }
    }
}

/// Pilot positions `(f, s)` and values per Tx antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct RsPattern {
    pub kind: PatternKind,
    positions: Vec<Vec<(usize, usize)>>,
    pilot_values: Vec<Vec<Complex64>>,
}

impl RsPattern {
    /// Builds and checks a pattern against `dims`.
    pub fn new(
        kind: PatternKind,
        positions: Vec<Vec<(usize, usize)>>,
        pilot_values: Vec<Vec<Complex64>>,
        dims: &GridDims,
    ) -> Result<Self> {
        let p = RsPattern {
            kind,
            positions,
            pilot_values,
        };
        p.validate(dims)?;
        Ok(p)
    }

    pub fn n_tx(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self, tx: usize) -> &[(usize, usize)] {
        &self.positions[tx]
    }

    pub fn pilot_values(&self, tx: usize) -> &[Complex64] {
        &self.pilot_values[tx]
    }

    /// Pilot REs summed over Tx antennas.
    pub fn total(&self) -> usize {
        self.positions.iter().map(Vec::len).sum()
    }

    /// Checks bounds, exclusivity and unit modulus.
    pub fn validate(&self, dims: &GridDims) -> Result<()> {
        if self.positions.len() != dims.n_tx || self.pilot_values.len() != dims.n_tx {
            return Err(Error::Pattern(format!(
                "pattern covers {} Tx antennas, grid has {}",
                self.positions.len(),
                dims.n_tx
            )));
        }
        let mut owner = vec![usize::MAX; dims.n_re()];
        for (t, (pos, vals)) in self.positions.iter().zip(&self.pilot_values).enumerate() {
            if pos.len() != vals.len() {
                return Err(Error::Pattern(format!(
                    "Tx {t} has {} positions but {} pilot values",
                    pos.len(),
                    vals.len()
                )));
            }
            for (&(f, s), v) in pos.iter().zip(vals) {
                if f >= dims.n_sc || s >= dims.n_symb {
                    return Err(Error::Pattern(format!(
                        "Tx {t} pilot at (f={f}, s={s}) lies outside the {}x{} grid",
                        dims.n_sc, dims.n_symb
                    )));
                }
                let o = &mut owner[f * dims.n_symb + s];
                if *o != usize::MAX {
                    return Err(Error::Pattern(format!(
                        "RE (f={f}, s={s}) is claimed by Tx {} and Tx {t}",
                        *o
                    )));
                }
                *o = t;
                if !v.re.is_finite() || !v.im.is_finite() || (v.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::Pattern(format!(
                        "Tx {t} pilot at (f={f}, s={s}) has modulus {} (must be 1)",
                        v.norm()
                    )));
                }
            }
        }
        Ok(())
    }

    /// `true` at every RE that carries a pilot of any Tx, indexed `f * n_symb + s`.
    pub fn pilot_mask(&self, dims: &GridDims) -> Vec<bool> {
        let mut mask = vec![false; dims.n_re()];
        for pos in &self.positions {
            for &(f, s) in pos {
                mask[f * dims.n_symb + s] = true;
            }
        }
        mask
    }

    /// Transmit grid with pilots only.
    pub fn pilot_grid(&self, dims: &GridDims) -> TxGrid {
        let mut x = TxGrid::zeros(dims.n_sc, dims.n_symb, dims.n_tx);
        for t in 0..self.n_tx() {
            for (&(f, s), &v) in self.positions[t].iter().zip(&self.pilot_values[t]) {
                x.set(f, s, t, v);
            }
        }
        x
    }

    /// Plain-text form: `dims n_sc n_symb n_rx n_tx`, then `tx f s re im` per pilot.
    pub fn to_text(&self, dims: &GridDims) -> String {
        let mut out = format!("dims {} {} {} {}\n", dims.n_sc, dims.n_symb, dims.n_rx, dims.n_tx);
        for t in 0..self.n_tx() {
            for (&(f, s), v) in self.positions[t].iter().zip(&self.pilot_values[t]) {
                let _ = writeln!(out, "{t} {f} {s} {:?} {:?}", v.re, v.im);
            }
        }
        out
    }

    /// Parses [`RsPattern::to_text`] output. Blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<(GridDims, Self)> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, header) = lines
            .next()
            .ok_or_else(|| Error::Pattern("empty pattern file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "dims" {
            return Err(Error::Pattern(format!(
                "line {ln}: expected `dims n_sc n_symb n_rx n_tx`, got {header:?}"
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Pattern(format!("line {ln}: {s:?}: {e}")))
        };
        let dims = GridDims::new(num(fields[1])?, num(fields[2])?, num(fields[3])?, num(fields[4])?)?;
        let mut positions = vec![Vec::new(); dims.n_tx];
        let mut values = vec![Vec::new(); dims.n_tx];
        for (ln, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(Error::Pattern(format!("line {ln}: expected `tx f s re im`, got {line:?}")));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::Pattern(format!("line {ln}: {s:?}: {e}")))
            };
            let real = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Pattern(format!("line {ln}: {s:?}: {e}")))
            };
            let t = int(f[0])?;
            if t >= dims.n_tx {
                return Err(Error::Pattern(format!(
                    "line {ln}: Tx {t} out of range for {} antennas",
                    dims.n_tx
                )));
            }
            positions[t].push((int(f[1])?, int(f[2])?));
            values[t].push(Complex64::new(real(f[3])?, real(f[4])?));
        }
        let p = RsPattern::new(PatternKind::Custom, positions, values, &dims)?;
        Ok((dims, p))
    }
}

fn check_block(dims: &GridDims, max_tx: usize, name: &str) -> Result<()> {
    dims.validate()?;
    if dims.n_sc % BLOCK_SC != 0 || dims.n_symb < SUBFRAME_SYMBOLS {
        return Err(Error::Dims(format!(
            "{name} pattern tiles a {BLOCK_SC}x{SUBFRAME_SYMBOLS} block: need n_sc a multiple of {BLOCK_SC} \
             and n_symb >= {SUBFRAME_SYMBOLS}, got {}x{}",
            dims.n_sc, dims.n_symb
        )));
    }
    if dims.n_tx > max_tx {
        return Err(Error::Dims(format!(
            "{name} pattern supports at most {max_tx} Tx antennas, got {}",
            dims.n_tx
        )));
    }
    Ok(())
}

/// Seeded QPSK pilots, Tx by Tx in position order.
fn qpsk_pilots(positions: &[Vec<(usize, usize)>], seed: u64) -> Vec<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = std::f64::consts::FRAC_1_SQRT_2;
    positions
        .iter()
        .map(|p| {
            p.iter()
                .map(|_| {
                    let b: u8 = rng.random_range(0..4);
                    let re = if b & 1 == 0 { a } else { -a };
                    let im = if b & 2 == 0 { a } else { -a };
                    Complex64::new(re, im)
                })
                .collect()
        })
        .collect()
}

/// Tiles a per-block layout across frequency.
fn tile(dims: &GridDims, block: impl Fn(usize) -> Vec<(usize, usize)>) -> Vec<Vec<(usize, usize)>> {
    (0..dims.n_tx)
        .map(|t| {
            let base = block(t);
            let mut pos: Vec<(usize, usize)> = (0..dims.n_sc / BLOCK_SC)
                .flat_map(|b| base.iter().map(move |&(f, s)| (f + b * BLOCK_SC, s)))
                .collect();
            pos.sort_unstable();
            pos
        })
        .collect()
}

/// Dense allocation: 16 pilots per Tx per 24-subcarrier block.
///
/// Tx `t` uses subcarriers `c` and `c + 12` on each of the eight symbols in
/// [`DENSE_SYMBOLS`], with `c = t` on the first symbol of a pair and
/// `c = (t + 6) mod 12` on the second.
pub fn build_dense_pattern(dims: GridDims, seed: u64) -> Result<RsPattern> {
    check_block(&dims, DENSE_MAX_TX, "dense")?;
    let positions = tile(&dims, |t| {
        let mut v = Vec::with_capacity(16);
        for (j, &s) in DENSE_SYMBOLS.iter().enumerate() {
            let c = (t + 6 * (j % 2)) % 12;
            v.push((c, s));
            v.push((c + 12, s));
        }
        v
    });
    let values = qpsk_pilots(&positions, seed);
    RsPattern::new(PatternKind::Dense, positions, values, &dims)
}

/// Sparse allocation: 6 pilots per Tx per 24-subcarrier block.
///
/// Tx `t` belongs to group `t / 8`, which owns one symbol pair of
/// [`SPARSE_SYMBOLS`]. Within the group, `u = t mod 8` takes subcarriers
/// `u, u + 8, u + 16` on the first symbol and `(u + 4) mod 8` plus the same
/// offsets on the second.
pub fn build_sparse_pattern(dims: GridDims, seed: u64) -> Result<RsPattern> {
    check_block(&dims, SPARSE_MAX_TX, "sparse")?;
    let positions = tile(&dims, |t| {
        let (s0, s1) = SPARSE_SYMBOLS[t / 8];
        let u = t % 8;
        let mut v = Vec::with_capacity(6);
        for k in 0..3 {
            v.push((u + 8 * k, s0));
            v.push(((u + 4) % 8 + 8 * k, s1));
        }
        v
    });
    let values = qpsk_pilots(&positions, seed);
    RsPattern::new(PatternKind::Sparse, positions, values, &dims)
}

/// Builds a built-in pattern by kind.
pub fn build_pattern(kind: PatternKind, dims: GridDims, seed: u64) -> Result<RsPattern> {
    match kind {
        PatternKind::Dense => build_dense_pattern(dims, seed),
        PatternKind::Sparse => build_sparse_pattern(dims, seed),
        PatternKind::Custom => Err(Error::Pattern("custom patterns are loaded from a file".into())),
    }
}

/// Fraction of REs that carry a pilot of some Tx.
pub fn overhead(pattern: &RsPattern, dims: &GridDims) -> f64 {
    pattern.total() as f64 / dims.n_re() as f64
}
