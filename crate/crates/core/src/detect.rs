//! Gray-mapped QPSK and the ML, ZF and V-BLAST MIMO detectors.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::channel::CMatrix;
use crate::{Error, Result};

/// Largest Tx count for exhaustive ML search.
pub const ML_MAX_TX: usize = 8;
/// Singular-value ratio below which a channel matrix counts as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

const A: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// QPSK points in lexicographic bit order `00, 01, 10, 11`.
pub const QPSK: [Complex64; 4] = [
    Complex64::new(A, A),
    Complex64::new(A, -A),
    Complex64::new(-A, A),
    Complex64::new(-A, -A),
];

/// `(b0, b1) → ((1 − 2·b0) + j(1 − 2·b1)) / √2`.
pub fn qpsk_mod(bits: &[u8]) -> Result<Vec<Complex64>> {
    if bits.len() % 2 != 0 {
        return Err(Error::Invalid(format!("QPSK needs an even number of bits, got {}", bits.len())));
    }
    bits.chunks_exact(2)
        .map(|p| match (p[0], p[1]) {
            (b0 @ 0..=1, b1 @ 0..=1) => Ok(QPSK[(b0 * 2 + b1) as usize]),
            _ => Err(Error::Invalid(format!("bits must be 0 or 1, got {p:?}"))),
        })
        .collect()
}

/// Hard decisions, two bits per symbol.
pub fn qpsk_demod(symbols: &[Complex64]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|z| [u8::from(z.re < 0.0), u8::from(z.im < 0.0)])
        .collect()
}

/// Nearest QPSK point.
pub fn slice(z: Complex64) -> Complex64 {
    Complex64::new(if z.re < 0.0 { -A } else { A }, if z.im < 0.0 { -A } else { A })
}

/// Fraction of positions where the streams differ.
pub fn ber(tx_bits: &[u8], rx_bits: &[u8]) -> Result<f64> {
    if tx_bits.len() != rx_bits.len() {
        return Err(Error::Invalid(format!(
            "bit streams differ in length: {} vs {}",
            tx_bits.len(),
            rx_bits.len()
        )));
    }
    if tx_bits.is_empty() {
        return Ok(0.0);
    }
    let errors = tx_bits.iter().zip(rx_bits).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / tx_bits.len() as f64)
}

fn check_shapes(y: &DVector<Complex64>, h: &CMatrix) -> Result<()> {
    if y.len() != h.nrows() || h.ncols() == 0 {
        return Err(Error::Shape(format!(
            "received vector has {} entries for a {}x{} channel",
            y.len(),
            h.nrows(),
            h.ncols()
        )));
    }
    Ok(())
}

/// Exhaustive search over all `4^{n_tx}` candidates; the first minimizer wins.
pub fn ml_detect(y: &DVector<Complex64>, h: &CMatrix) -> Result<Vec<Complex64>> {
    check_shapes(y, h)?;
    let (n_rx, n_tx) = h.shape();
    if n_tx > ML_MAX_TX {
        return Err(Error::Invalid(format!(
            "ML search over {n_tx} Tx antennas (4^{n_tx} candidates) exceeds the limit of {ML_MAX_TX}; use ZF or V-BLAST"
        )));
    }
    let cols: Vec<Vec<Complex64>> = (0..n_tx).map(|t| h.column(t).iter().copied().collect()).collect();
    // Odometer over candidates, last Tx fastest; residual r = y − H·x kept incrementally.
    let mut digits = vec![0usize; n_tx];
    let mut resid: Vec<Complex64> = y.iter().copied().collect();
    for col in &cols {
        for (r, &hv) in resid.iter_mut().zip(col) {
            *r -= hv * QPSK[0];
        }
    }
    let mut best = f64::INFINITY;
    let mut best_digits = digits.clone();
    loop {
        let d: f64 = resid.iter().map(|v| v.norm_sqr()).sum();
        if d < best {
            best = d;
            best_digits.copy_from_slice(&digits);
        }
        let mut t = n_tx;
        loop {
            if t == 0 {
                return Ok(best_digits.iter().map(|&k| QPSK[k]).collect());
            }
            t -= 1;
            let old = QPSK[digits[t]];
            digits[t] = (digits[t] + 1) % 4;
            let delta = QPSK[digits[t]] - old;
            for r in 0..n_rx {
                resid[r] -= cols[t][r] * delta;
            }
            if digits[t] != 0 {
                break;
            }
        }
    }
}

/// Moore-Penrose pseudo-inverse via SVD, rejecting rank-deficient matrices.
pub fn pinv(h: &CMatrix) -> Result<CMatrix> {
    let svd = h.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    let full = h.nrows().min(h.ncols());
    if h.nrows() < h.ncols() || !(smax > 0.0) || smin < RANK_TOL * smax || svd.singular_values.len() < full {
        return Err(Error::RankDeficient(if smax > 0.0 { smin / smax } else { 0.0 }));
    }
    svd.pseudo_inverse(0.0).map_err(|e| Error::Invalid(e.to_string()))
}

/// Zero forcing: slice `H⁺·y` per stream.
pub fn zf_detect(y: &DVector<Complex64>, h: &CMatrix) -> Result<Vec<Complex64>> {
    check_shapes(y, h)?;
    let x = pinv(h)? * y;
    Ok(x.iter().map(|&z| slice(z)).collect())
}

/// Ordered successive interference cancellation with ZF nulling.
///
/// Each stage detects the stream with the largest post-nulling SNR
/// `1 / (noise_var · ‖g_k‖²)`, i.e. the smallest pseudo-inverse row norm,
/// cancels it and deflates `H`.
pub fn vblast_detect(y: &DVector<Complex64>, h: &CMatrix, noise_var: f64) -> Result<Vec<Complex64>> {
    check_shapes(y, h)?;
    if !(noise_var >= 0.0) {
        return Err(Error::Invalid(format!("noise variance must be >= 0, got {noise_var}")));
    }
    let n_tx = h.ncols();
    let nv = noise_var.max(f64::MIN_POSITIVE);
    let mut remaining: Vec<usize> = (0..n_tx).collect();
    let mut resid = y.clone();
    let mut out = vec![Complex64::new(0.0, 0.0); n_tx];
    while !remaining.is_empty() {
        let sub = h.select_columns(&remaining);
        let g = pinv(&sub)?;
        let (pick, _) = (0..remaining.len())
            .map(|i| (i, 1.0 / (nv * g.row(i).norm_squared())))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let z = (g.row(pick) * &resid)[(0, 0)];
        let x = slice(z);
        let t = remaining.remove(pick);
        out[t] = x;
        resid -= h.column(t) * x;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    Ml,
    Zf,
    Vblast,
}

impl Detector {
    pub const ALL: [Detector; 3] = [Detector::Ml, Detector::Zf, Detector::Vblast];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Ml => "ml",
            Detector::Zf => "zf",
            Detector::Vblast => "vblast",
        }
    }

    pub fn detect(self, y: &DVector<Complex64>, h: &CMatrix, noise_var: f64) -> Result<Vec<Complex64>> {
        match self {
            Detector::Ml => ml_detect(y, h),
            Detector::Zf => zf_detect(y, h),
            Detector::Vblast => vblast_detect(y, h, noise_var),
        }
    }
}

impl std::str::FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml" => Ok(Detector::Ml),
            "zf" => Ok(Detector::Zf),
            "vblast" | "v-blast" => Ok(Detector::Vblast),
            _ => Err(Error::Invalid(format!("unknown detector {s:?} (expected ml, zf or vblast)"))),
        }
    }
}

impl std::fmt::Display for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub detector: Detector,
    pub estimator: String,
    pub bit_errors: u64,
    pub bits: u64,
    pub symbol_errors: u64,
    /// Data REs detected.
    pub res: u64,
    /// REs whose channel estimate was rank deficient; their bits count as errors.
    pub erasures: u64,
}

impl DetectionReport {
    pub fn new(detector: Detector, estimator: impl Into<String>) -> Self {
        DetectionReport {
            detector,
            estimator: estimator.into(),
            bit_errors: 0,
            bits: 0,
            symbol_errors: 0,
            res: 0,
            erasures: 0,
        }
    }

    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits as f64
        }
    }

    /// Standard error of the BER estimate.
    pub fn std_error(&self) -> f64 {
        let p = self.ber();
        if self.bits == 0 {
            0.0
        } else {
            (p * (1.0 - p) / self.bits as f64).sqrt()
        }
    }

    /// Detects one RE and tallies errors against the transmitted bits.
    pub fn record(&mut self, y: &DVector<Complex64>, h_est: &CMatrix, noise_var: f64, tx_bits: &[u8]) -> Result<()> {
        let n_tx = h_est.ncols();
        if tx_bits.len() != 2 * n_tx {
            return Err(Error::Shape(format!("{} bits for {n_tx} streams", tx_bits.len())));
        }
        self.res += 1;
        self.bits += tx_bits.len() as u64;
        match self.detector.detect(y, h_est, noise_var) {
            Ok(x) => {
                let rx = qpsk_demod(&x);
                self.bit_errors += tx_bits.iter().zip(&rx).filter(|(a, b)| a != b).count() as u64;
                self.symbol_errors += tx_bits
                    .chunks_exact(2)
                    .zip(rx.chunks_exact(2))
                    .filter(|(a, b)| a != b)
                    .count() as u64;
            }
            Err(Error::RankDeficient(_)) => {
                self.erasures += 1;
                self.bit_errors += tx_bits.len() as u64;
                self.symbol_errors += n_tx as u64;
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Adds another report's counts.
    pub fn merge(&mut self, other: &DetectionReport) {
        self.bit_errors += other.bit_errors;
        self.bits += other.bits;
        self.symbol_errors += other.symbol_errors;
        self.res += other.res;
        self.erasures += other.erasures;
    }
}
