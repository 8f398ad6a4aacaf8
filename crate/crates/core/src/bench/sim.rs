//! One simulated subframe: channel, pilots plus QPSK data, received grid.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{gen_channel, transmit, ChannelConfig, ChannelTensor, CorrelationLevel, FadingModel};
use crate::detect::QPSK;
use crate::grid::{GridDims, RsPattern, RxGrid, TxGrid};
use crate::{seed, Error, Result};

/// Numerology shared by every sample of a dataset or sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physics {
    pub subcarrier_spacing_hz: f64,
    pub symbol_duration_s: f64,
    pub delay_spread_ns: f64,
}

impl Default for Physics {
    fn default() -> Self {
        let c = ChannelConfig::default();
        Physics {
            subcarrier_spacing_hz: c.subcarrier_spacing_hz,
            symbol_duration_s: c.symbol_duration_s,
            delay_spread_ns: c.delay_spread_ns,
        }
    }
}

impl Physics {
    pub fn config(
        &self,
        fading: FadingModel,
        correlation: CorrelationLevel,
        doppler_hz: f64,
        snr_db: f64,
        seed: u64,
    ) -> ChannelConfig {
        ChannelConfig {
            fading,
            doppler_hz,
            correlation,
            snr_db,
            seed,
            subcarrier_spacing_hz: self.subcarrier_spacing_hz,
            symbol_duration_s: self.symbol_duration_s,
            delay_spread_ns: self.delay_spread_ns,
        }
    }
}

/// Channel-condition grid; cells are the cross product in field order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub fading: Vec<FadingModel>,
    pub correlation: Vec<CorrelationLevel>,
    pub doppler_hz: Vec<f64>,
    pub snr_db: Vec<f64>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        SweepAxes {
            fading: FadingModel::ALL.to_vec(),
            correlation: CorrelationLevel::ALL.to_vec(),
            doppler_hz: vec![0.0, 30.0, 60.0, 90.0, 120.0],
            snr_db: vec![-10.0, 0.0, 10.0, 20.0, 30.0],
        }
    }
}

impl SweepAxes {
    /// Rejects empty axes and, unless `allow_extrapolation`, values outside
    /// Doppler 0..=120 Hz and SNR −10..=30 dB.
    pub fn validate(&self, allow_extrapolation: bool) -> Result<()> {
        if self.fading.is_empty() || self.correlation.is_empty() || self.doppler_hz.is_empty() || self.snr_db.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        for &d in &self.doppler_hz {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::Config(format!("Doppler {d} Hz is not a finite non-negative value")));
            }
            if d > 120.0 && !allow_extrapolation {
                return Err(Error::Config(format!(
                    "Doppler {d} Hz is outside 0..=120 Hz; set allow_extrapolation to use it"
                )));
            }
        }
        for &s in &self.snr_db {
            if s.is_nan() {
                return Err(Error::Config("SNR is NaN".into()));
            }
            if !(-10.0..=30.0).contains(&s) && !allow_extrapolation {
                return Err(Error::Config(format!(
                    "SNR {s} dB is outside -10..=30 dB; set allow_extrapolation to use it"
                )));
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.fading.len() * self.correlation.len() * self.doppler_hz.len() * self.snr_db.len()
    }

    /// Cell `i` in `fading × correlation × doppler × snr` order, SNR fastest.
    pub fn cell(&self, i: usize) -> (FadingModel, CorrelationLevel, f64, f64) {
        let ns = self.snr_db.len();
        let nd = self.doppler_hz.len();
        let nc = self.correlation.len();
        (
            self.fading[i / (ns * nd * nc)],
            self.correlation[(i / (ns * nd)) % nc],
            self.doppler_hz[(i / ns) % nd],
            self.snr_db[i % ns],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub h: ChannelTensor,
    pub x: TxGrid,
    pub y: RxGrid,
    /// Data REs `(f, s)` in grid order.
    pub data_res: Vec<(usize, usize)>,
    /// Two bits per Tx per data RE, RE-major.
    pub bits: Vec<u8>,
}

/// Draws a channel, fills every non-pilot RE of every Tx with QPSK data and
/// passes the grid through the channel. Noise depends only on `cfg.seed`, so
/// pilot observations match a pilot-only transmission of the same config.
pub fn simulate(cfg: &ChannelConfig, dims: &GridDims, pattern: &RsPattern, with_data: bool) -> Result<Realization> {
    let h = gen_channel(cfg, dims)?;
    let mut x = pattern.pilot_grid(dims);
    let mut data_res = Vec::new();
    let mut bits = Vec::new();
    if with_data {
        let mask = pattern.pilot_mask(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::DATA));
        for f in 0..dims.n_sc {
            for s in 0..dims.n_symb {
                if mask[f * dims.n_symb + s] {
                    continue;
                }
                data_res.push((f, s));
                for t in 0..dims.n_tx {
                    let k: usize = rng.random_range(0..4);
                    bits.push((k >> 1) as u8);
                    bits.push((k & 1) as u8);
                    x.set(f, s, t, QPSK[k]);
                }
            }
        }
    }
    let y = transmit(&h, &x, cfg.snr_db, cfg.seed)?;
    Ok(Realization { h, x, y, data_res, bits })
}

impl Realization {
    /// Received vector at one RE.
    pub fn y_at(&self, f: usize, s: usize) -> nalgebra::DVector<Complex64> {
        nalgebra::DVector::from_column_slice(self.y.at(f, s))
    }
}
