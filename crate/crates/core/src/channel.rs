//! Tapped-delay-line MIMO channel generation and the per-RE link `Y = H·X + W`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::{GridDims, RxGrid, TxGrid};
use crate::{seed, Error, Result};

/// Sinusoids per tap in the Doppler process.
pub const SINUSOIDS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FadingModel {
    TdlA,
    TdlB,
    TdlC,
    TdlD,
    TdlE,
}

impl FadingModel {
    pub const ALL: [FadingModel; 5] = [
        FadingModel::TdlA,
        FadingModel::TdlB,
        FadingModel::TdlC,
        FadingModel::TdlD,
        FadingModel::TdlE,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unknown fading model id {id}")))
    }

    pub fn name(self) -> &'static str {
        ["TDL-A", "TDL-B", "TDL-C", "TDL-D", "TDL-E"][self as usize]
    }

    /// The shipped profile for this model.
    pub fn profile(self) -> &'static TdlProfile {
        use std::sync::OnceLock;
        static PROFILES: OnceLock<Vec<TdlProfile>> = OnceLock::new();
        let all = PROFILES.get_or_init(|| {
            [
                include_str!("../data/tdl/tdl_a.txt"),
                include_str!("../data/tdl/tdl_b.txt"),
                include_str!("../data/tdl/tdl_c.txt"),
                include_str!("../data/tdl/tdl_d.txt"),
                include_str!("../data/tdl/tdl_e.txt"),
            ]
            .iter()
            .map(|t| TdlProfile::parse(t).expect("built-in TDL profile"))
            .collect()
        });
        &all[self as usize]
    }
}

impl std::str::FromStr for FadingModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        let key = key.strip_prefix("TDL-").or_else(|| key.strip_prefix("TDL")).unwrap_or(&key);
        match key {
            "A" => Ok(FadingModel::TdlA),
            "B" => Ok(FadingModel::TdlB),
            "C" => Ok(FadingModel::TdlC),
            "D" => Ok(FadingModel::TdlD),
            "E" => Ok(FadingModel::TdlE),
            _ => Err(Error::Invalid(format!("unknown fading model {s:?} (expected TDL-A..TDL-E)"))),
        }
    }
}

impl std::fmt::Display for FadingModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorrelationLevel {
    Low,
    Medium,
    High,
}

impl CorrelationLevel {
    pub const ALL: [CorrelationLevel; 3] = [CorrelationLevel::Low, CorrelationLevel::Medium, CorrelationLevel::High];

    /// Adjacent-element coefficient of the exponential model.
    pub fn coefficient(self) -> f64 {
        match self {
            CorrelationLevel::Low => 0.0,
            CorrelationLevel::Medium => 0.3,
            CorrelationLevel::High => 0.9,
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unknown correlation level id {id}")))
    }

    pub fn name(self) -> &'static str {
        ["low", "medium", "high"][self as usize]
    }
}

impl std::str::FromStr for CorrelationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(CorrelationLevel::Low),
            "medium" => Ok(CorrelationLevel::Medium),
            "high" => Ok(CorrelationLevel::High),
            _ => Err(Error::Invalid(format!("unknown correlation level {s:?} (expected low, medium or high)"))),
        }
    }
}

impl std::fmt::Display for CorrelationLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay_ns: f64,
    pub power_db: f64,
    /// Line-of-sight component: deterministic amplitude, Doppler-shifted phase.
    pub los: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdlProfile {
    pub name: String,
    /// RMS delay spread the listed delays correspond to.
    pub delay_spread_ns: f64,
    pub taps: Vec<Tap>,
}

impl TdlProfile {
    /// Parses `profile NAME`, optional `delay_spread_ns X`, then `tap delay_ns power_db [los]` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut spread = 100.0;
        let mut taps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::Invalid(format!("TDL profile line {}: {m}: {line:?}", i + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[0] {
                "profile" if f.len() == 2 => name = Some(f[1].to_string()),
                "delay_spread_ns" if f.len() == 2 => {
                    spread = f[1].parse().map_err(|_| bad("bad delay spread"))?;
                }
                _ if f.len() == 3 || (f.len() == 4 && f[3] == "los") => {
                    f[0].parse::<usize>().map_err(|_| bad("bad tap index"))?;
                    let delay_ns: f64 = f[1].parse().map_err(|_| bad("bad delay"))?;
                    let power_db: f64 = f[2].parse().map_err(|_| bad("bad power"))?;
                    if !(delay_ns >= 0.0) || !power_db.is_finite() {
                        return Err(bad("delay must be >= 0 and power finite"));
                    }
                    taps.push(Tap {
                        delay_ns,
                        power_db,
                        los: f.len() == 4,
                    });
                }
                _ => return Err(bad("expected `tap delay_ns power_db [los]`")),
            }
        }
        let name = name.ok_or_else(|| Error::Invalid("TDL profile has no `profile` header".into()))?;
        if taps.is_empty() {
            return Err(Error::Invalid(format!("TDL profile {name} has no taps")));
        }
        if !(spread > 0.0) {
            return Err(Error::Invalid(format!("TDL profile {name}: delay spread must be positive")));
        }
        Ok(TdlProfile {
            name,
            delay_spread_ns: spread,
            taps,
        })
    }

    /// Linear tap powers summing to one.
    pub fn normalized_powers(&self) -> Vec<f64> {
        let lin: Vec<f64> = self.taps.iter().map(|t| 10f64.powf(t.power_db / 10.0)).collect();
        let total: f64 = lin.iter().sum();
        lin.into_iter().map(|p| p / total).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub fading: FadingModel,
    pub doppler_hz: f64,
    pub correlation: CorrelationLevel,
    pub snr_db: f64,
    pub seed: u64,
    pub subcarrier_spacing_hz: f64,
    pub symbol_duration_s: f64,
    pub delay_spread_ns: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            fading: FadingModel::TdlA,
            doppler_hz: 0.0,
            correlation: CorrelationLevel::Low,
            snr_db: 10.0,
            seed: 0,
            subcarrier_spacing_hz: 15e3,
            symbol_duration_s: 1e-3 / 14.0,
            delay_spread_ns: 100.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.doppler_hz >= 0.0) || !self.doppler_hz.is_finite() {
            return Err(Error::Invalid(format!("doppler_hz must be finite and >= 0, got {}", self.doppler_hz)));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Invalid("snr_db is NaN".into()));
        }
        for (name, v) in [
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("symbol_duration_s", self.symbol_duration_s),
            ("delay_spread_ns", self.delay_spread_ns),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Complex `n × n` matrix.
pub type CMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPair {
    pub r_rx: CMatrix,
    pub r_tx: CMatrix,
}

/// Exponential-model Rx correlation `a^{|i−j|}`; Tx side is the identity.
pub fn correlation_matrices(level: CorrelationLevel, n_rx: usize, n_tx: usize) -> CorrelationPair {
    let a = level.coefficient();
    let r_rx = CMatrix::from_fn(n_rx, n_rx, |i, j| Complex64::new(a.powi(i.abs_diff(j) as i32), 0.0));
    CorrelationPair {
        r_rx,
        r_tx: CMatrix::identity(n_tx, n_tx),
    }
}

/// Hermitian PSD square root by eigendecomposition, clamping eigenvalues at zero.
pub fn matrix_sqrt(r: &CMatrix) -> Result<CMatrix> {
    if !r.is_square() {
        return Err(Error::Invalid(format!("matrix_sqrt needs a square matrix, got {}x{}", r.nrows(), r.ncols())));
    }
    let scale = r.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    let asym = (r - r.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
    if !(asym <= 1e-12 * scale) {
        return Err(Error::Invalid(format!("matrix_sqrt input is not Hermitian (max |R − Rᴴ| = {asym:.3e})")));
    }
    let eig = r.clone().symmetric_eigen();
    if let Some(min) = eig.eigenvalues.iter().copied().reduce(f64::min) {
        if min < -1e-10 * scale {
            return Err(Error::Invalid(format!("matrix_sqrt input is not PSD (eigenvalue {min:.3e})")));
        }
    }
    let root = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    let v = &eig.eigenvectors;
    Ok(v * CMatrix::from_diagonal(&root) * v.adjoint())
}

/// Channel response over `(subcarrier, symbol, rx, tx)`, Tx fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    pub dims: GridDims,
    pub data: Vec<Complex64>,
}

impl ChannelTensor {
    pub fn zeros(dims: GridDims) -> Self {
        ChannelTensor {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims.n_re() * dims.n_rx * dims.n_tx],
        }
    }

    /// Fills every entry from `f(subcarrier, symbol, rx, tx)`.
    pub fn from_fn(dims: GridDims, mut f: impl FnMut(usize, usize, usize, usize) -> Complex64) -> Self {
        let mut h = Self::zeros(dims);
        for fi in 0..dims.n_sc {
            for s in 0..dims.n_symb {
                for r in 0..dims.n_rx {
                    for t in 0..dims.n_tx {
                        let i = h.idx(fi, s, r, t);
                        h.data[i] = f(fi, s, r, t);
                    }
                }
            }
        }
        h
    }

    #[inline]
    pub fn idx(&self, f: usize, s: usize, r: usize, t: usize) -> usize {
        ((f * self.dims.n_symb + s) * self.dims.n_rx + r) * self.dims.n_tx + t
    }

    #[inline]
    pub fn get(&self, f: usize, s: usize, r: usize, t: usize) -> Complex64 {
        self.data[self.idx(f, s, r, t)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, s: usize, r: usize, t: usize, v: Complex64) {
        let i = self.idx(f, s, r, t);
        self.data[i] = v;
    }

    /// `n_rx × n_tx` matrix at one RE.
    pub fn matrix(&self, f: usize, s: usize) -> CMatrix {
        let n = self.dims.n_rx * self.dims.n_tx;
        let i = self.idx(f, s, 0, 0);
        CMatrix::from_row_slice(self.dims.n_rx, self.dims.n_tx, &self.data[i..i + n])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

fn cn(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// One tap's fading process: `g(t) = Σ_n a_n exp(j 2π f_d cos(α_n) t)`.
struct TapProcess {
    amps: Vec<Complex64>,
    freqs: Vec<f64>,
}

impl TapProcess {
    fn draw(rng: &mut ChaCha8Rng, power: f64, los: bool, doppler_hz: f64) -> Self {
        let two_pi = std::f64::consts::TAU;
        if los {
            let phase = rng.random_range(0.0..two_pi);
            let angle = rng.random_range(0.0..two_pi);
            return TapProcess {
                amps: vec![Complex64::from_polar(power.sqrt(), phase)],
                freqs: vec![doppler_hz * angle.cos()],
            };
        }
        let mut amps = Vec::with_capacity(SINUSOIDS);
        let mut freqs = Vec::with_capacity(SINUSOIDS);
        for _ in 0..SINUSOIDS {
            amps.push(cn(rng, power / SINUSOIDS as f64));
            freqs.push(doppler_hz * rng.random_range(0.0..two_pi).cos());
        }
        TapProcess { amps, freqs }
    }

    fn at(&self, t: f64) -> Complex64 {
        let two_pi = std::f64::consts::TAU;
        self.amps
            .iter()
            .zip(&self.freqs)
            .map(|(&a, &fd)| a * Complex64::cis(two_pi * fd * t))
            .sum()
    }
}

/// Generates one channel realization from the configured built-in profile.
pub fn gen_channel(cfg: &ChannelConfig, dims: &GridDims) -> Result<ChannelTensor> {
    gen_channel_with_profile(cfg, dims, cfg.fading.profile())
}

/// Generates one channel realization from an explicit profile.
///
/// Each Rx/Tx pair gets independent tap processes; taps become a frequency
/// response through `Σ_l g_l(t) e^{−j2π f Δf τ_l}`, and the Rx correlation
/// is applied per RE as `R_R^{1/2} H R_T^{1/2}`.
pub fn gen_channel_with_profile(cfg: &ChannelConfig, dims: &GridDims, profile: &TdlProfile) -> Result<ChannelTensor> {
    cfg.validate()?;
    dims.validate()?;
    let powers = profile.normalized_powers();
    let scale = cfg.delay_spread_ns / profile.delay_spread_ns * 1e-9;
    let n_taps = profile.taps.len();
    // phase[f][l] = exp(−j 2π f Δf τ_l)
    let phase: Vec<Complex64> = (0..dims.n_sc)
        .flat_map(|f| {
            profile.taps.iter().map(move |tap| {
                Complex64::cis(-std::f64::consts::TAU * f as f64 * cfg.subcarrier_spacing_hz * tap.delay_ns * scale)
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::CHANNEL));
    let mut h = ChannelTensor::zeros(*dims);
    let mut gains = vec![Complex64::new(0.0, 0.0); dims.n_symb * n_taps];
    for r in 0..dims.n_rx {
        for t in 0..dims.n_tx {
            for (l, tap) in profile.taps.iter().enumerate() {
                let proc = TapProcess::draw(&mut rng, powers[l], tap.los, cfg.doppler_hz);
                for s in 0..dims.n_symb {
                    gains[s * n_taps + l] = proc.at(s as f64 * cfg.symbol_duration_s);
                }
            }
            for f in 0..dims.n_sc {
                let ph = &phase[f * n_taps..(f + 1) * n_taps];
                for s in 0..dims.n_symb {
                    let g = &gains[s * n_taps..(s + 1) * n_taps];
                    let v: Complex64 = g.iter().zip(ph).map(|(&a, &b)| a * b).sum();
                    h.set(f, s, r, t, v);
                }
            }
        }
    }

    let corr = correlation_matrices(cfg.correlation, dims.n_rx, dims.n_tx);
    apply_correlation(&mut h, &corr)?;
    Ok(h)
}

/// Replaces every `H_{f,s}` by `R_R^{1/2} H_{f,s} R_T^{1/2}`.
pub fn apply_correlation(h: &mut ChannelTensor, corr: &CorrelationPair) -> Result<()> {
    let d = h.dims;
    if corr.r_rx.nrows() != d.n_rx || corr.r_tx.nrows() != d.n_tx {
        return Err(Error::Shape(format!(
            "correlation matrices are {}x{} / {}x{} for a {}x{} channel",
            corr.r_rx.nrows(),
            corr.r_rx.ncols(),
            corr.r_tx.nrows(),
            corr.r_tx.ncols(),
            d.n_rx,
            d.n_tx
        )));
    }
    let is_identity = |m: &CMatrix| *m == CMatrix::identity(m.nrows(), m.ncols());
    let rx = (!is_identity(&corr.r_rx)).then(|| matrix_sqrt(&corr.r_rx)).transpose()?;
    let tx = (!is_identity(&corr.r_tx)).then(|| matrix_sqrt(&corr.r_tx)).transpose()?;
    if rx.is_none() && tx.is_none() {
        return Ok(());
    }
    let n = d.n_rx * d.n_tx;
    for f in 0..d.n_sc {
        for s in 0..d.n_symb {
            let mut m = h.matrix(f, s);
            if let Some(a) = &rx {
                m = a * m;
            }
            if let Some(b) = &tx {
                m *= b;
            }
            let i = h.idx(f, s, 0, 0);
            for (k, v) in h.data[i..i + n].iter_mut().enumerate() {
                *v = m[(k / d.n_tx, k % d.n_tx)];
            }
        }
    }
    Ok(())
}

/// Noise variance per complex sample: SNR is per Rx antenna, per unit-power stream.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// Draws `W` with i.i.d. `CN(0, noise_variance(snr_db))` entries.
pub fn noise_grid(n_sc: usize, n_symb: usize, n_rx: usize, snr_db: f64, seed: u64) -> RxGrid {
    let var = noise_variance(snr_db);
    let mut w = RxGrid::zeros(n_sc, n_symb, n_rx);
    if var > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, seed::NOISE));
        for v in &mut w.data {
            *v = cn(&mut rng, var);
        }
    }
    w
}

/// `Y = H·X + W` per RE. `snr_db = +∞` disables the noise.
pub fn transmit(h: &ChannelTensor, x: &TxGrid, snr_db: f64, seed: u64) -> Result<RxGrid> {
    let d = h.dims;
    if x.n_sc != d.n_sc || x.n_symb != d.n_symb || x.n_ant != d.n_tx {
        return Err(Error::Shape(format!(
            "transmit grid is {}x{}x{}, channel expects {}x{}x{}",
            x.n_sc, x.n_symb, x.n_ant, d.n_sc, d.n_symb, d.n_tx
        )));
    }
    if snr_db.is_nan() {
        return Err(Error::Invalid("snr_db is NaN".into()));
    }
    let mut y = noise_grid(d.n_sc, d.n_symb, d.n_rx, snr_db, seed);
    for f in 0..d.n_sc {
        for s in 0..d.n_symb {
            let xs = x.at(f, s);
            let base = h.idx(f, s, 0, 0);
            for r in 0..d.n_rx {
                let row = &h.data[base + r * d.n_tx..base + (r + 1) * d.n_tx];
                let hx: Complex64 = row.iter().zip(xs).map(|(&a, &b)| a * b).sum();
                let i = y.idx(f, s, r);
                y.data[i] += hx;
            }
        }
    }
    Ok(y)
}
