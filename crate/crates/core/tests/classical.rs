//! Exactness oracles for LS and the three interpolators.

use std::f64::consts::PI;

use cebench_core::bench::{nmse, simulate};
use cebench_core::channel::{ChannelConfig, ChannelTensor};
use cebench_core::classical::{default_max_delay_taps, dfti, dftli, li_interpolate, ls_estimate, LsGrid};
use cebench_core::grid::{build_dense_pattern, build_sparse_pattern, GridDims, PatternKind, RsPattern};
use cebench_core::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Single-Tx pattern with a unit pilot at every `(f, s)` listed.
fn custom(dims: &GridDims, positions: Vec<(usize, usize)>) -> RsPattern {
    let values = vec![c(1.0, 0.0); positions.len()];
    RsPattern::new(PatternKind::Custom, vec![positions], vec![values], dims).unwrap()
}

fn comb(dims: &GridDims, symbols: &[usize]) -> RsPattern {
    let pos = symbols.iter().flat_map(|&s| (0..dims.n_sc).map(move |f| (f, s))).collect();
    custom(dims, pos)
}

fn pilot_span(pattern: &RsPattern, t: usize) -> (usize, usize) {
    let fs = pattern.positions(t).iter().map(|p| p.0);
    (fs.clone().min().unwrap(), fs.max().unwrap())
}

#[test]
fn ls_exact_at_pilots_noiseless() {
    for (dims, pattern) in [
        {
            let d = GridDims::new(72, 14, 2, 2).unwrap();
            (d, build_sparse_pattern(d, 5).unwrap())
        },
        {
            let d = GridDims::new(48, 14, 4, 4).unwrap();
            (d, build_dense_pattern(d, 6).unwrap())
        },
    ] {
        let cfg = ChannelConfig {
            snr_db: f64::INFINITY,
            doppler_hz: 90.0,
            seed: 11,
            ..Default::default()
        };
        let real = simulate(&cfg, &dims, &pattern, true).unwrap();
        let ls = ls_estimate(&real.y, &pattern).unwrap();
        for t in 0..dims.n_tx {
            for r in 0..dims.n_rx {
                for (f, s, v) in ls.pilots(r, t) {
                    let h = real.h.get(f, s, r, t);
                    assert!((v - h).norm() < 1e-12 * h.norm().max(1.0), "r{r} t{t} f{f} s{s}");
                }
            }
        }
    }
}

#[test]
fn li_exact_on_frequency_affine_channel() {
    let dims = GridDims::new(72, 14, 2, 2).unwrap();
    let pattern = build_sparse_pattern(dims, 2).unwrap();
    let h = ChannelTensor::from_fn(dims, |f, _s, r, t| {
        c(0.3 + r as f64, -0.2 * t as f64) + c(0.01, -0.02 * (1 + r + t) as f64) * f as f64
    });
    let est = li_interpolate(&LsGrid::sample(&h, &pattern).unwrap()).unwrap();
    for t in 0..dims.n_tx {
        let (lo, hi) = pilot_span(&pattern, t);
        for f in lo..=hi {
            for s in 0..dims.n_symb {
                for r in 0..dims.n_rx {
                    assert!((est.get(f, s, r, t) - h.get(f, s, r, t)).norm() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn li_midpoint_between_two_pilots() {
    let dims = GridDims::new(12, 14, 1, 1).unwrap();
    let pattern = custom(&dims, vec![(0, 3), (10, 3)]);
    let h = ChannelTensor::from_fn(dims, |f, _, _, _| c(f as f64, 0.0));
    let est = li_interpolate(&LsGrid::sample(&h, &pattern).unwrap()).unwrap();
    for s in 0..14 {
        assert!((est.get(5, s, 0, 0) - c(5.0, 0.0)).norm() < 1e-12);
        assert!((est.get(11, s, 0, 0) - c(10.0, 0.0)).norm() < 1e-12);
    }
}

/// Periodic channel whose delay taps all sit in `[0, taps)`.
fn band_limited(dims: GridDims, taps: usize, seed: u64) -> ChannelTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps: Vec<Complex64> = (0..taps)
        .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let n = dims.n_sc as f64;
    ChannelTensor::from_fn(dims, |f, _, _, _| {
        amps.iter()
            .enumerate()
            .map(|(l, a)| a * Complex64::from_polar(1.0, -2.0 * PI * (f * l) as f64 / n))
            .sum()
    })
}

#[test]
fn dfti_round_trip_on_band_limited_channel() {
    let dims = GridDims::new(72, 14, 1, 1).unwrap();
    let pattern = comb(&dims, &[3, 10]);
    let taps = default_max_delay_taps(72);
    for seed in 0..5 {
        let h = band_limited(dims, taps, seed);
        let ls = LsGrid::sample(&h, &pattern).unwrap();
        let est = dfti(&ls, taps).unwrap();
        assert!(nmse(&h, &est).unwrap() < -40.0);
        let again = dfti(&LsGrid::sample(&est, &pattern).unwrap(), taps).unwrap();
        assert!(nmse(&est, &again).unwrap() < -40.0);
    }
}

#[test]
fn dfti_keeps_an_eighth_of_white_noise() {
    let dims = GridDims::new(96, 14, 1, 1).unwrap();
    let pattern = comb(&dims, &[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut e_in, mut e_out) = (0.0, 0.0);
    for _ in 0..200 {
        let h = ChannelTensor::from_fn(dims, |_, _, _, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        let est = dfti(&LsGrid::sample(&h, &pattern).unwrap(), default_max_delay_taps(96)).unwrap();
        for f in 0..96 {
            e_in += h.get(f, 0, 0, 0).norm_sqr();
            e_out += est.get(f, 0, 0, 0).norm_sqr();
        }
    }
    let ratio = e_out / e_in;
    assert!((ratio - 0.125).abs() < 0.125 * 0.2, "ratio {ratio}");
}

#[test]
fn dftli_time_midpoint() {
    let dims = GridDims::new(24, 14, 1, 1).unwrap();
    let pattern = comb(&dims, &[2, 12]);
    let (a, b) = (c(1.0, -2.0), c(-0.5, 3.0));
    let h = ChannelTensor::from_fn(dims, |_, s, _, _| if s <= 7 { a } else { b });
    let est = dftli(&LsGrid::sample(&h, &pattern).unwrap(), 3).unwrap();
    for f in 0..24 {
        assert!((est.get(f, 7, 0, 0) - (a + b) / 2.0).norm() < 1e-12);
        assert!((est.get(f, 0, 0, 0) - a).norm() < 1e-12);
        assert!((est.get(f, 13, 0, 0) - b).norm() < 1e-12);
    }
}

#[test]
fn dftli_equals_dfti_on_time_constant_input() {
    // same pilot subcarriers on every pilot symbol
    let dims = GridDims::new(72, 14, 2, 1).unwrap();
    let pos = [3, 10].iter().flat_map(|&s| (0..72).step_by(4).map(move |f| (f, s))).collect();
    let pattern = custom(&dims, pos);
    let cfg = ChannelConfig {
        doppler_hz: 0.0,
        seed: 3,
        ..Default::default()
    };
    let h = cebench_core::channel::gen_channel(&cfg, &dims).unwrap();
    let ls = LsGrid::sample(&h, &pattern).unwrap();
    let a = dfti(&ls, 9).unwrap();
    let b = dftli(&ls, 9).unwrap();
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x - y).norm() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interpolators_are_linear(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let dims = GridDims::new(48, 14, 2, 2).unwrap();
        let pattern = build_sparse_pattern(dims, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_h = || ChannelTensor::from_fn(dims, |_, _, _, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let (h1, h2) = (rand_h(), rand_h());
        let mix = ChannelTensor::from_fn(dims, |f, s, r, t| h1.get(f, s, r, t) * alpha + h2.get(f, s, r, t) * beta);
        type Interp = fn(&LsGrid) -> cebench_core::Result<ChannelTensor>;
        let ops: [Interp; 3] = [li_interpolate, |l| dfti(l, 6), |l| dftli(l, 6)];
        for op in ops {
            let e1 = op(&LsGrid::sample(&h1, &pattern).unwrap()).unwrap();
            let e2 = op(&LsGrid::sample(&h2, &pattern).unwrap()).unwrap();
            let em = op(&LsGrid::sample(&mix, &pattern).unwrap()).unwrap();
            for i in 0..em.data.len() {
                let want = e1.data[i] * alpha + e2.data[i] * beta;
                prop_assert!((em.data[i] - want).norm() < 1e-10);
            }
        }
    }
}
