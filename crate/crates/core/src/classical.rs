//! Per-pilot LS estimation and the LI, DFTI and DFTLI interpolators.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::channel::ChannelTensor;
use crate::grid::{GridDims, RsPattern, RxGrid};
use crate::{Error, Result};

/// Smallest pilot modulus LS will divide by.
pub const MIN_PILOT: f64 = 1e-9;

/// Sparse LS estimates, same layout as [`ChannelTensor`]; entries off the mask are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LsGrid {
    pub values: ChannelTensor,
    pub mask: Vec<bool>,
}

impl LsGrid {
    pub fn dims(&self) -> GridDims {
        self.values.dims
    }

    #[inline]
    pub fn is_pilot(&self, f: usize, s: usize, r: usize, t: usize) -> bool {
        self.mask[self.values.idx(f, s, r, t)]
    }

    /// Defined `(f, s, value)` entries for one antenna pair, in `(f, s)` order.
    pub fn pilots(&self, r: usize, t: usize) -> Vec<(usize, usize, Complex64)> {
        let d = self.dims();
        let mut out = Vec::new();
        for f in 0..d.n_sc {
            for s in 0..d.n_symb {
                let i = self.values.idx(f, s, r, t);
                if self.mask[i] {
                    out.push((f, s, self.values.data[i]));
                }
            }
        }
        out
    }

    /// LS grid holding `h` at every RE where `pattern` has a pilot of the matching Tx.
    pub fn sample(h: &ChannelTensor, pattern: &RsPattern) -> Result<Self> {
        let d = h.dims;
        pattern.validate(&d)?;
        let mut values = ChannelTensor::zeros(d);
        let mut mask = vec![false; values.data.len()];
        for t in 0..d.n_tx {
            for &(f, s) in pattern.positions(t) {
                for r in 0..d.n_rx {
                    let i = values.idx(f, s, r, t);
                    values.data[i] = h.data[i];
                    mask[i] = true;
                }
            }
        }
        Ok(LsGrid { values, mask })
    }
}

/// `Ĥ[f_p, s_p, r, t] = y[f_p, s_p, r] / x_t(f_p, s_p)` at every pilot.
pub fn ls_estimate(y: &RxGrid, pattern: &RsPattern) -> Result<LsGrid> {
    let dims = GridDims {
        n_sc: y.n_sc,
        n_symb: y.n_symb,
        n_rx: y.n_ant,
        n_tx: pattern.n_tx(),
    };
    pattern.validate(&dims)?;
    let mut values = ChannelTensor::zeros(dims);
    let mut mask = vec![false; values.data.len()];
    for t in 0..dims.n_tx {
        for (&(f, s), &x) in pattern.positions(t).iter().zip(pattern.pilot_values(t)) {
            if !(x.norm() >= MIN_PILOT) {
                return Err(Error::Estimation(format!(
                    "pilot of Tx {t} at (f={f}, s={s}) has modulus {:.3e}",
                    x.norm()
                )));
            }
            for r in 0..dims.n_rx {
                let i = values.idx(f, s, r, t);
                values.data[i] = y.get(f, s, r) / x;
                mask[i] = true;
            }
        }
    }
    Ok(LsGrid { values, mask })
}

/// Piecewise-linear interpolation through sorted `(position, value)` knots,
/// holding the end values outside them.
pub fn interp_linear(knots: &[(usize, Complex64)], n: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for x in 0..n {
        while k + 1 < knots.len() && knots[k + 1].0 <= x {
            k += 1;
        }
        let (x0, v0) = knots[k];
        let v = if x <= x0 || k + 1 == knots.len() {
            v0
        } else {
            let (x1, v1) = knots[k + 1];
            let w = (x - x0) as f64 / (x1 - x0) as f64;
            v0 + (v1 - v0) * w
        };
        out.push(v);
    }
    out
}

/// Averages the given pilots per subcarrier and interpolates over frequency.
fn freq_profile(pilots: &[(usize, usize, Complex64)], n_sc: usize, r: usize, t: usize) -> Result<Vec<Complex64>> {
    let mut knots: Vec<(usize, Complex64)> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for &(f, _, v) in pilots {
        match knots.last_mut() {
            Some((lf, acc)) if *lf == f => {
                *acc += v;
                *counts.last_mut().unwrap() += 1;
            }
            _ => {
                knots.push((f, v));
                counts.push(1);
            }
        }
    }
    if knots.len() < 2 {
        return Err(Error::Estimation(format!(
            "Rx {r} / Tx {t} has {} distinct pilot subcarrier(s), interpolation needs at least 2",
            knots.len()
        )));
    }
    for ((_, v), &c) in knots.iter_mut().zip(&counts) {
        *v /= c as f64;
    }
    Ok(interp_linear(&knots, n_sc))
}

fn write_replicated(h: &mut ChannelTensor, r: usize, t: usize, column: &[Complex64]) {
    for (f, &v) in column.iter().enumerate() {
        for s in 0..h.dims.n_symb {
            h.set(f, s, r, t, v);
        }
    }
}

/// Keeps delay taps `0..max_delay_taps` of a frequency vector.
struct DelayTruncation {
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    keep: usize,
}

impl DelayTruncation {
    fn new(n_sc: usize, max_delay_taps: usize) -> Result<Self> {
        if max_delay_taps == 0 || max_delay_taps >= n_sc {
            return Err(Error::Invalid(format!(
                "max_delay_taps must be in 1..{n_sc} (n_sc), got {max_delay_taps}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(DelayTruncation {
            fwd: planner.plan_fft_forward(n_sc),
            inv: planner.plan_fft_inverse(n_sc),
            keep: max_delay_taps,
        })
    }

    fn apply(&self, v: &mut [Complex64]) {
        let n = v.len() as f64;
        self.inv.process(v);
        for (k, x) in v.iter_mut().enumerate() {
            *x = if k < self.keep { *x / n } else { Complex64::new(0.0, 0.0) };
        }
        self.fwd.process(v);
    }
}

/// Default delay cutoff, `n_sc / 8`.
pub fn default_max_delay_taps(n_sc: usize) -> usize {
    (n_sc / 8).max(1)
}

/// LI: time-average the pilots per subcarrier, interpolate linearly in
/// frequency, hold at the edges, replicate over symbols.
pub fn li_interpolate(ls: &LsGrid) -> Result<ChannelTensor> {
    let d = ls.dims();
    let mut h = ChannelTensor::zeros(d);
    for r in 0..d.n_rx {
        for t in 0..d.n_tx {
            let col = freq_profile(&ls.pilots(r, t), d.n_sc, r, t)?;
            write_replicated(&mut h, r, t, &col);
        }
    }
    Ok(h)
}

/// DFTI: LI over frequency, then zero every delay tap at or beyond `max_delay_taps`.
pub fn dfti(ls: &LsGrid, max_delay_taps: usize) -> Result<ChannelTensor> {
    let d = ls.dims();
    let trunc = DelayTruncation::new(d.n_sc, max_delay_taps)?;
    let mut h = ChannelTensor::zeros(d);
    for r in 0..d.n_rx {
        for t in 0..d.n_tx {
            let mut col = freq_profile(&ls.pilots(r, t), d.n_sc, r, t)?;
            trunc.apply(&mut col);
            write_replicated(&mut h, r, t, &col);
        }
    }
    Ok(h)
}

/// DFTLI: DFTI on each pilot-bearing symbol separately, then linear
/// interpolation over time with edge hold.
pub fn dftli(ls: &LsGrid, max_delay_taps: usize) -> Result<ChannelTensor> {
    let d = ls.dims();
    let trunc = DelayTruncation::new(d.n_sc, max_delay_taps)?;
    let mut h = ChannelTensor::zeros(d);
    for r in 0..d.n_rx {
        for t in 0..d.n_tx {
            let mut pilots = ls.pilots(r, t);
            pilots.sort_by_key(|&(f, s, _)| (s, f));
            let mut symbols: Vec<(usize, Vec<Complex64>)> = Vec::new();
            for chunk in pilots.chunk_by(|a, b| a.1 == b.1) {
                let mut col = freq_profile(chunk, d.n_sc, r, t)?;
                trunc.apply(&mut col);
                symbols.push((chunk[0].1, col));
            }
            if symbols.is_empty() {
                return Err(Error::Estimation(format!("Rx {r} / Tx {t} has no pilot-bearing symbol")));
            }
            for f in 0..d.n_sc {
                let knots: Vec<(usize, Complex64)> = symbols.iter().map(|(s, col)| (*s, col[f])).collect();
                for (s, v) in interp_linear(&knots, d.n_symb).into_iter().enumerate() {
                    h.set(f, s, r, t, v);
                }
            }
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_sparse_pattern, PatternKind, TxGrid};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_pair(n_sc: usize, pilots: &[(usize, usize, Complex64)]) -> LsGrid {
        let d = GridDims::new(n_sc, 14, 1, 1).unwrap();
        let mut values = ChannelTensor::zeros(d);
        let mut mask = vec![false; values.data.len()];
        for &(f, s, v) in pilots {
            let i = values.idx(f, s, 0, 0);
            values.data[i] = v;
            mask[i] = true;
        }
        LsGrid { values, mask }
    }

    #[test]
    fn ls_scalar_division() {
        let d = GridDims::new(24, 14, 1, 1).unwrap();
        let p = RsPattern::new(PatternKind::Custom, vec![vec![(3, 4)]], vec![vec![c(1.0, 0.0)]], &d).unwrap();
        let mut y = RxGrid::zeros(24, 14, 1);
        y.set(3, 4, 0, c(2.0, 2.0));
        let ls = ls_estimate(&y, &p).unwrap();
        assert_eq!(ls.values.get(3, 4, 0, 0), c(2.0, 2.0));
        assert_eq!(ls.mask.iter().filter(|&&m| m).count(), 1);
        let zero = ls_estimate(&RxGrid::zeros(24, 14, 1), &p).unwrap();
        assert!(zero.values.data.iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn ls_mask_matches_pattern() {
        let d = GridDims::new(48, 14, 2, 4).unwrap();
        let p = build_sparse_pattern(d, 1).unwrap();
        let ls = ls_estimate(&RxGrid::zeros(48, 14, 2), &p).unwrap();
        for t in 0..4 {
            for r in 0..2 {
                let got: Vec<(usize, usize)> = ls.pilots(r, t).iter().map(|&(f, s, _)| (f, s)).collect();
                assert_eq!(got, p.positions(t));
            }
        }
        let _ = TxGrid::zeros(1, 1, 1);
    }

    #[test]
    fn li_midpoint_and_constant() {
        let ls = single_pair(12, &[(0, 3, c(0.0, 0.0)), (10, 3, c(10.0, 0.0))]);
        let h = li_interpolate(&ls).unwrap();
        for s in 0..14 {
            assert!((h.get(5, s, 0, 0) - c(5.0, 0.0)).norm() < 1e-12);
            assert_eq!(h.get(11, s, 0, 0), c(10.0, 0.0));
        }
        let k = c(0.3, -0.7);
        let ls = single_pair(24, &[(2, 1, k), (9, 5, k), (17, 5, k), (17, 9, k)]);
        assert!(li_interpolate(&ls).unwrap().data.iter().all(|v| (v - k).norm() < 1e-15));
    }

    #[test]
    fn li_rejects_single_subcarrier() {
        let ls = single_pair(12, &[(4, 1, c(1.0, 0.0)), (4, 8, c(1.0, 0.0))]);
        assert!(li_interpolate(&ls).is_err());
    }

    #[test]
    fn dfti_flat_and_cutoff_guard() {
        let k = c(0.8, 0.6);
        let ls = single_pair(24, &[(1, 2, k), (9, 2, k), (17, 2, k)]);
        let h = dfti(&ls, 3).unwrap();
        assert!(h.data.iter().all(|v| (v - k).norm() < 1e-10));
        assert!(dfti(&ls, 24).is_err());
        assert!(dfti(&ls, 0).is_err());
        assert!(dftli(&ls, 30).is_err());
    }

    #[test]
    fn dftli_time_midpoint() {
        let (a, b) = (c(1.0, 2.0), c(3.0, -2.0));
        let ls = single_pair(24, &[(0, 2, a), (12, 2, a), (0, 12, b), (12, 12, b)]);
        let h = dftli(&ls, 3).unwrap();
        for f in 0..24 {
            assert!((h.get(f, 7, 0, 0) - (a + b) / 2.0).norm() < 1e-10);
            assert!((h.get(f, 0, 0, 0) - a).norm() < 1e-10);
            assert!((h.get(f, 13, 0, 0) - b).norm() < 1e-10);
        }
        let single = single_pair(24, &[(0, 4, a), (12, 4, a)]);
        let h = dftli(&single, 3).unwrap();
        assert!(h.data.iter().all(|v| (v - a).norm() < 1e-10));
    }

    #[test]
    fn interp_hold_edges() {
        let v = interp_linear(&[(2, c(1.0, 0.0)), (4, c(3.0, 0.0))], 7);
        let re: Vec<f64> = v.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![1.0, 1.0, 1.0, 2.0, 3.0, 3.0, 3.0]);
    }
}
