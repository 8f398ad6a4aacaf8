//! CEDS dataset files.
//!
//! Layout, little endian throughout:
//!
//! ```text
//! magic "CEDS" | version u16 | n_sc n_symb n_rx n_tx u32 | count u32
//! pattern kind u8 | pattern seed u64
//! subcarrier spacing f64 | symbol duration f64 | delay spread f64
//! per Tx: pilot count u32, then (f u16, s u16) per pilot
//! per sample:
//!   fading u8 | correlation u8 | doppler f64 | snr f64 | seed u64
//!   H       (f, s, rx, tx) order, f32 re/im interleaved
//!   Y       per Tx, per pilot, per Rx, f32 re/im
//!   pilots  per Tx, per pilot, f32 re/im
//! ```

use std::io::{Read, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sim::{Physics, SweepAxes};
use crate::channel::{gen_channel, transmit, ChannelConfig, ChannelTensor, CorrelationLevel, FadingModel};
use crate::classical::LsGrid;
use crate::grid::{build_pattern, GridDims, PatternKind, RsPattern};
use crate::{file_err, seed, Error, Result};

pub const CEDS_MAGIC: &[u8; 4] = b"CEDS";
pub const CEDS_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub dims: GridDims,
    pub pattern_kind: PatternKind,
    pub pattern_seed: u64,
    pub physics: Physics,
    pub positions: Vec<Vec<(usize, usize)>>,
}

impl DatasetHeader {
    pub fn n_pilots(&self) -> usize {
        self.positions.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub fading: FadingModel,
    pub correlation: CorrelationLevel,
    pub doppler_hz: f64,
    pub snr_db: f64,
    pub seed: u64,
    pub h: Vec<Complex32>,
    pub y_pilots: Vec<Complex32>,
    pub pilot_values: Vec<Complex32>,
}

impl Sample {
    pub fn config(&self, physics: &Physics) -> ChannelConfig {
        physics.config(self.fading, self.correlation, self.doppler_hz, self.snr_db, self.seed)
    }

    pub fn channel(&self, header: &DatasetHeader) -> ChannelTensor {
        ChannelTensor {
            dims: header.dims,
            data: self.h.iter().map(|v| Complex64::new(v.re as f64, v.im as f64)).collect(),
        }
    }

    /// LS estimates from the stored pilot observations.
    pub fn ls_grid(&self, header: &DatasetHeader) -> Result<LsGrid> {
        let d = header.dims;
        let mut values = ChannelTensor::zeros(d);
        let mut mask = vec![false; values.data.len()];
        let mut k = 0;
        for (t, pos) in header.positions.iter().enumerate() {
            let base = header.positions[..t].iter().map(Vec::len).sum::<usize>();
            for (p, &(f, s)) in pos.iter().enumerate() {
                let x = self.pilot_values[base + p];
                let x = Complex64::new(x.re as f64, x.im as f64);
                if x.norm() < crate::classical::MIN_PILOT {
                    return Err(Error::Estimation(format!("stored pilot of Tx {t} at (f={f}, s={s}) is zero")));
                }
                for r in 0..d.n_rx {
                    let y = self.y_pilots[k];
                    k += 1;
                    let i = values.idx(f, s, r, t);
                    values.data[i] = Complex64::new(y.re as f64, y.im as f64) / x;
                    mask[i] = true;
                }
            }
        }
        Ok(LsGrid { values, mask })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

fn c32(v: Complex64) -> Complex32 {
    Complex32::new(v.re as f32, v.im as f32)
}

/// Draws `n` samples uniformly over the sweep cells and optionally writes them to `path`.
///
/// Sample `i` gets its own seed derived from `(seed, i)`, which fixes both its
/// cell and its channel/noise realization independently of the others.
pub fn generate_dataset(
    axes: &SweepAxes,
    n: usize,
    dims: GridDims,
    pattern_kind: PatternKind,
    seed: u64,
    physics: Physics,
    path: Option<&Path>,
) -> Result<Dataset> {
    dims.validate()?;
    axes.validate(true)?;
    let pattern_seed = seed::derive(seed, seed::PILOTS);
    let pattern = build_pattern(pattern_kind, dims, pattern_seed)?;
    let header = DatasetHeader {
        dims,
        pattern_kind,
        pattern_seed,
        physics,
        positions: (0..dims.n_tx).map(|t| pattern.positions(t).to_vec()).collect(),
    };
    let x = pattern.pilot_grid(&dims);
    let base = seed::derive(seed, seed::SAMPLE);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let sample_seed = seed::derive(base, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let (fading, correlation, doppler_hz, snr_db) = axes.cell(rng.random_range(0..axes.n_cells()));
        let cfg = physics.config(fading, correlation, doppler_hz, snr_db, sample_seed);
        samples.push(make_sample(&cfg, &dims, &pattern, &x)?);
    }
    let ds = Dataset { header, samples };
    if let Some(p) = path {
        ds.save(p)?;
    }
    Ok(ds)
}

fn make_sample(cfg: &ChannelConfig, dims: &GridDims, pattern: &RsPattern, x: &crate::grid::TxGrid) -> Result<Sample> {
    let h = gen_channel(cfg, dims)?;
    let y = transmit(&h, x, cfg.snr_db, cfg.seed)?;
    let mut y_pilots = Vec::with_capacity(pattern.total() * dims.n_rx);
    let mut pilot_values = Vec::with_capacity(pattern.total());
    for t in 0..dims.n_tx {
        for (&(f, s), &v) in pattern.positions(t).iter().zip(pattern.pilot_values(t)) {
            pilot_values.push(c32(v));
            for r in 0..dims.n_rx {
                y_pilots.push(c32(y.get(f, s, r)));
            }
        }
    }
    Ok(Sample {
        fading: cfg.fading,
        correlation: cfg.correlation,
        doppler_hz: cfg.doppler_hz,
        snr_db: cfg.snr_db,
        seed: cfg.seed,
        h: h.data.iter().map(|&v| c32(v)).collect(),
        y_pilots,
        pilot_values,
    })
}

fn put_c32s(w: &mut Vec<u8>, v: &[Complex32]) {
    for z in v {
        w.extend_from_slice(&z.re.to_le_bytes());
        w.extend_from_slice(&z.im.to_le_bytes());
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit the file format")))
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit the file format")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("file truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn c32s(&mut self, n: usize) -> Result<Vec<Complex32>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| {
                Complex32::new(
                    f32::from_le_bytes(c[..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..].try_into().unwrap()),
                )
            })
            .collect())
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The header's pilot pattern with the first sample's pilot values.
    pub fn pattern(&self) -> Result<RsPattern> {
        let h = &self.header;
        if h.pattern_kind != PatternKind::Custom {
            return build_pattern(h.pattern_kind, h.dims, h.pattern_seed);
        }
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Format("custom-pattern dataset has no samples to take pilots from".into()))?;
        let mut values = Vec::with_capacity(h.dims.n_tx);
        let mut k = 0;
        for pos in &h.positions {
            values.push(
                first.pilot_values[k..k + pos.len()]
                    .iter()
                    .map(|v| {
                        // stored as f32; restore unit modulus
                        let c = Complex64::new(v.re as f64, v.im as f64);
                        c / c.norm()
                    })
                    .collect(),
            );
            k += pos.len();
        }
        RsPattern::new(PatternKind::Custom, h.positions.clone(), values, &h.dims)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let d = h.dims;
        let n_h = d.n_re() * d.n_rx * d.n_tx;
        let n_p = h.n_pilots();
        let mut w = Vec::with_capacity(128 + self.samples.len() * (34 + 8 * (n_h + n_p * (d.n_rx + 1))));
        w.extend_from_slice(CEDS_MAGIC);
        w.extend_from_slice(&CEDS_VERSION.to_le_bytes());
        for (v, name) in [(d.n_sc, "n_sc"), (d.n_symb, "n_symb"), (d.n_rx, "n_rx"), (d.n_tx, "n_tx")] {
            w.extend_from_slice(&to_u32(v, name)?.to_le_bytes());
        }
        w.extend_from_slice(&to_u32(self.samples.len(), "sample count")?.to_le_bytes());
        w.push(h.pattern_kind.id());
        w.extend_from_slice(&h.pattern_seed.to_le_bytes());
        for v in [h.physics.subcarrier_spacing_hz, h.physics.symbol_duration_s, h.physics.delay_spread_ns] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        if h.positions.len() != d.n_tx {
            return Err(Error::Format("header pilot table does not match n_tx".into()));
        }
        for pos in &h.positions {
            w.extend_from_slice(&to_u32(pos.len(), "pilot count")?.to_le_bytes());
            for &(f, s) in pos {
                w.extend_from_slice(&to_u16(f, "pilot subcarrier")?.to_le_bytes());
                w.extend_from_slice(&to_u16(s, "pilot symbol")?.to_le_bytes());
            }
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.h.len() != n_h || s.y_pilots.len() != n_p * d.n_rx || s.pilot_values.len() != n_p {
                return Err(Error::Format(format!("sample {i} does not match the header dimensions")));
            }
            w.push(s.fading.id());
            w.push(s.correlation.id());
            w.extend_from_slice(&s.doppler_hz.to_le_bytes());
            w.extend_from_slice(&s.snr_db.to_le_bytes());
            w.extend_from_slice(&s.seed.to_le_bytes());
            put_c32s(&mut w, &s.h);
            put_c32s(&mut w, &s.y_pilots);
            put_c32s(&mut w, &s.pilot_values);
        }
        Ok(w)
    }

    /// Header only; samples are left empty and the count is returned.
    pub fn read_header(bytes: &[u8]) -> Result<(DatasetHeader, usize)> {
        let mut r = Reader { buf: bytes, pos: 0 };
        Self::header_from(&mut r)
    }

    fn header_from(r: &mut Reader<'_>) -> Result<(DatasetHeader, usize)> {
        if r.take(4).map_err(|_| Error::Format("not a CEDS file (too short)".into()))? != CEDS_MAGIC {
            return Err(Error::Format("not a CEDS file (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != CEDS_VERSION {
            return Err(Error::Format(format!("unsupported CEDS version {version}")));
        }
        let dims = GridDims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize)
            .map_err(|e| Error::Format(e.to_string()))?;
        let count = r.u32()? as usize;
        let pattern_kind = PatternKind::from_id(r.u8()?).map_err(|e| Error::Format(e.to_string()))?;
        let pattern_seed = r.u64()?;
        let physics = Physics {
            subcarrier_spacing_hz: r.f64()?,
            symbol_duration_s: r.f64()?,
            delay_spread_ns: r.f64()?,
        };
        // every Tx needs at least its 4-byte pilot count
        if dims.n_tx > (r.buf.len() - r.pos) / 4 {
            return Err(Error::Format(format!("{} Tx announced but the file is too short", dims.n_tx)));
        }
        let mut positions = Vec::with_capacity(dims.n_tx);
        for _ in 0..dims.n_tx {
            let n = r.u32()? as usize;
            if n > dims.n_re() || n > (r.buf.len() - r.pos) / 4 {
                return Err(Error::Format(format!("pilot count {n} exceeds the grid")));
            }
            let mut pos = Vec::with_capacity(n);
            for _ in 0..n {
                let (f, s) = (r.u16()? as usize, r.u16()? as usize);
                if f >= dims.n_sc || s >= dims.n_symb {
                    return Err(Error::Format(format!("pilot ({f}, {s}) outside the grid")));
                }
                pos.push((f, s));
            }
            positions.push(pos);
        }
        Ok((
            DatasetHeader {
                dims,
                pattern_kind,
                pattern_seed,
                physics,
                positions,
            },
            count,
        ))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let (header, count) = Self::header_from(&mut r)?;
        let d = header.dims;
        let n_p = header.n_pilots();
        let sizes = d
            .n_re()
            .checked_mul(d.n_rx)
            .and_then(|v| v.checked_mul(d.n_tx))
            .and_then(|n_h| Some((n_h, n_p.checked_mul(d.n_rx + 1)?)))
            .and_then(|(n_h, n_y)| n_h.checked_add(n_y)?.checked_mul(8)?.checked_add(26))
            .and_then(|per| Some((per, count.checked_mul(per)?)));
        let Some((per_sample, body)) = sizes else {
            return Err(Error::Format("header dimensions overflow".into()));
        };
        let n_h = d.n_re() * d.n_rx * d.n_tx;
        if (bytes.len() - r.pos) != body {
            return Err(Error::Format(format!(
                "header announces {count} samples of {per_sample} bytes, body has {} bytes",
                bytes.len() - r.pos
            )));
        }
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let fading = FadingModel::from_id(r.u8()?).map_err(|e| Error::Format(e.to_string()))?;
            let correlation = CorrelationLevel::from_id(r.u8()?).map_err(|e| Error::Format(e.to_string()))?;
            samples.push(Sample {
                fading,
                correlation,
                doppler_hz: r.f64()?,
                snr_db: r.f64()?,
                seed: r.u64()?,
                h: r.c32s(n_h)?,
                y_pilots: r.c32s(n_p * d.n_rx)?,
                pilot_values: r.c32s(n_p)?,
            });
        }
        Ok(Dataset { header, samples })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(file_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(file_err(path))?;
        Self::from_bytes(&bytes)
    }
}
