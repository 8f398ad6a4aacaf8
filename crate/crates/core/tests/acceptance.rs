//! Acceptance criteria 1–9. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cebench_core::bench::{
    generate_dataset, nmse, run_experiment, Dataset, ExperimentConfig, ExperimentReport, Physics, SweepAxes,
};
use cebench_core::channel::{gen_channel, transmit, ChannelConfig, ChannelTensor, CorrelationLevel, FadingModel};
use cebench_core::classical::{dfti, dftli, li_interpolate, ls_estimate, LsGrid};
use cebench_core::detect::{Detector, QPSK};
use cebench_core::estimators::{examples, train, Architecture, Example, NetKind, TrainConfig};
use cebench_core::grid::{build_sparse_pattern, GridDims, PatternKind, RsPattern, TxGrid};
use cebench_core::{bench::simulate, Complex64};
use cebench_nn::{
    build_2du, build_3dff, conv_forward, count_macs, read_checkpoint, write_checkpoint, Activation, Connectivity,
    Graph, LayerSpec, Model, ModelSpec, Skip, SkipKind, Tensor,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn parameter_counts() -> Outcome {
    let u = build_2du().param_count();
    let f = build_3dff().param_count();
    let mu = Model::<f32>::init(build_2du(), 0).map_err(|e| e.to_string())?.param_count();
    let mf = Model::<f32>::init(build_3dff(), 0).map_err(|e| e.to_string())?.param_count();
    check(u == 25_287 && mu == u, format!("2DU has {u} parameters ({mu} allocated)"))?;
    check(f == 93_837 && mf == f, format!("3DFF has {f} parameters ({mf} allocated)"))?;
    Ok(format!("2DU {u}, 3DFF {f}"))
}

fn mac_counts() -> Outcome {
    let u = count_macs(&build_2du(), &[1320, 14]);
    let rel = (u as f64 - 467e6).abs() / 467e6;
    let f = count_macs(&build_3dff(), &[8, 1320, 14]);
    check(rel < 0.005, format!("2DU on 1320x14 is {u} MACs ({:.3}% off 467M)", rel * 100.0))?;
    Ok(format!("2DU {u} MACs ({:.3}% off 467M); 3DFF on 8 Rx {f} MACs", rel * 100.0))
}

fn grad_spec(rank: usize) -> ModelSpec {
    let k: &[usize] = if rank == 2 { &[3, 5] } else { &[3, 3, 3] };
    ModelSpec {
        layers: vec![
            LayerSpec::new(k, 2, 3, Activation::Gelu),
            LayerSpec::new(k, 3, 4, Activation::Gelu),
            LayerSpec::new(k, 7, 2, Activation::None),
        ],
        connectivity: Connectivity::UNet,
        skips: vec![Skip { from: 1, to: 3, kind: SkipKind::Concat }],
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn loss_of(model: &Model<f64>, x: &Tensor<f64>, t: &Tensor<f64>, lambda: f64) -> f64 {
    let mut g = Graph::new();
    let p = model.param_vars(&mut g);
    let (xv, tv) = (g.leaf(x.clone()), g.leaf(t.clone()));
    let y = model.forward(&mut g, &p, xv).unwrap();
    let l = g.mse_l2_loss(y, tv, &p.weights, lambda).unwrap();
    g.value(l).data()[0]
}

/// Returns the worst relative error over `probes` central-difference probes.
fn gradient_probes(rank: usize, seed: u64, probes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::<f64>::init(grad_spec(rank), seed).unwrap();
    for l in model.layers_mut() {
        for b in l.bias.data_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let shape = if rank == 2 { vec![2, 7, 6] } else { vec![2, 3, 5, 4] };
    let x = random_tensor(&mut rng, shape.clone());
    let t = random_tensor(&mut rng, shape);
    let lambda = 0.03;
    let mut g = Graph::new();
    let p = model.param_vars(&mut g);
    let (xv, tv) = (g.leaf(x.clone()), g.leaf(t.clone()));
    let y = model.forward(&mut g, &p, xv).unwrap();
    let l = g.mse_l2_loss(y, tv, &p.weights, lambda).unwrap();
    g.backward(l).unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..probes {
        let (fd, analytic) = if k % 5 == 4 {
            let j = rng.random_range(0..x.numel());
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[j] += h;
            xm.data_mut()[j] -= h;
            let fd = (loss_of(&model, &xp, &t, lambda) - loss_of(&model, &xm, &t, lambda)) / (2.0 * h);
            (fd, g.grad(xv).unwrap()[j])
        } else {
            let li = rng.random_range(0..model.layers().len());
            let bias = rng.random_bool(0.3);
            let var = if bias { p.biases[li] } else { p.weights[li] };
            let j = rng.random_range(0..g.value(var).numel());
            let (mut mp, mut mm) = (model.clone(), model.clone());
            let (lp, lm) = (&mut mp.layers_mut()[li], &mut mm.layers_mut()[li]);
            let (vp, vm) = if bias { (&mut lp.bias, &mut lm.bias) } else { (&mut lp.weight, &mut lm.weight) };
            vp.data_mut()[j] += h;
            vm.data_mut()[j] -= h;
            let fd = (loss_of(&mp, &x, &t, lambda) - loss_of(&mm, &x, &t, lambda)) / (2.0 * h);
            (fd, g.grad(var).unwrap()[j])
        };
        worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6));
    }
    worst
}

fn autodiff() -> Outcome {
    let worst = gradient_probes(2, 31, 50).max(gradient_probes(3, 32, 50));
    check(worst < 1e-4, format!("worst relative error {worst:.2e} over 100 probes"))?;
    Ok(format!("100 probes, worst relative error {worst:.2e}"))
}

fn naive_conv(x: &[f64], xs: &[usize], w: &[f64], ws: &[usize], b: &[f64]) -> Vec<f64> {
    let rank = xs.len() - 1;
    let (mut e, mut k) = ([1usize; 3], [1usize; 3]);
    for i in 0..rank {
        e[i + 3 - rank] = xs[i + 1];
        k[i + 3 - rank] = ws[i + 2];
    }
    let (cin, cout) = (xs[0], ws[0]);
    let npos = e[0] * e[1] * e[2];
    let kv = k[0] * k[1] * k[2];
    let mut out = vec![0.0; cout * npos];
    for co in 0..cout {
        for p in 0..npos {
            let i = [p / (e[1] * e[2]), (p / e[2]) % e[1], p % e[2]];
            let mut acc = b[co];
            for ci in 0..cin {
                for q in 0..kv {
                    let d = [q / (k[1] * k[2]), (q / k[2]) % k[1], q % k[2]];
                    let s: Vec<isize> = (0..3).map(|a| i[a] as isize + d[a] as isize - (k[a] / 2) as isize).collect();
                    if (0..3).any(|a| s[a] < 0 || s[a] >= e[a] as isize) {
                        continue;
                    }
                    let xi = ci * npos + (s[0] as usize * e[1] + s[1] as usize) * e[2] + s[2] as usize;
                    acc += w[(co * cin + ci) * kv + q] * x[xi];
                }
            }
            out[co * npos + p] = acc;
        }
    }
    out
}

fn convolution() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let rank = if case % 2 == 0 { 2 } else { 3 };
        let cin = rng.random_range(1..4);
        let cout = rng.random_range(1..4);
        let mut xs = vec![cin];
        let mut ws = vec![cout, cin];
        for _ in 0..rank {
            xs.push(rng.random_range(1..10));
            ws.push(2 * rng.random_range(0..4) + 1);
        }
        let x = random_tensor(&mut rng, xs.clone());
        let w = random_tensor(&mut rng, ws.clone());
        let b = random_tensor(&mut rng, vec![cout]);
        let y = conv_forward(&x, &w, &b).map_err(|e| e.to_string())?;
        let want = naive_conv(x.data(), &xs, w.data(), &ws, b.data());
        let scale = want.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        for (&got, &r) in y.data().iter().zip(&want) {
            worst = worst.max((got - r).abs() / scale);
        }
    }
    check(worst < 1e-6, format!("worst relative error {worst:.2e}"))?;
    Ok(format!("50 cases (25 2D, 25 3D), worst relative error {worst:.2e}"))
}

fn single_tx(dims: &GridDims, positions: Vec<(usize, usize)>) -> RsPattern {
    let n = positions.len();
    RsPattern::new(PatternKind::Custom, vec![positions], vec![vec![c(1.0, 0.0); n]], dims).unwrap()
}

fn classical() -> Outcome {
    // LS at pilots, noiseless
    let dims = GridDims::new(72, 14, 2, 2).unwrap();
    let pattern = build_sparse_pattern(dims, 1).unwrap();
    let cfg = ChannelConfig {
        snr_db: f64::INFINITY,
        doppler_hz: 120.0,
        fading: FadingModel::TdlC,
        seed: 5,
        ..Default::default()
    };
    let real = simulate(&cfg, &dims, &pattern, true).map_err(|e| e.to_string())?;
    let ls = ls_estimate(&real.y, &pattern).map_err(|e| e.to_string())?;
    let mut ls_err = 0.0f64;
    for r in 0..2 {
        for t in 0..2 {
            for (f, s, v) in ls.pilots(r, t) {
                ls_err = ls_err.max((v - real.h.get(f, s, r, t)).norm());
            }
        }
    }
    check(ls_err < 1e-12, format!("LS pilot error {ls_err:.2e}"))?;

    // LI on a frequency-affine channel, between the outermost pilots
    let h = ChannelTensor::from_fn(dims, |f, _, r, t| c(0.5 - 0.1 * r as f64, 0.2 * t as f64) + c(-0.01, 0.015) * f as f64);
    let li = li_interpolate(&LsGrid::sample(&h, &pattern).unwrap()).unwrap();
    let mut li_err = 0.0f64;
    for t in 0..2 {
        let fs: Vec<usize> = pattern.positions(t).iter().map(|p| p.0).collect();
        let (lo, hi) = (*fs.iter().min().unwrap(), *fs.iter().max().unwrap());
        for f in lo..=hi {
            for s in 0..14 {
                for r in 0..2 {
                    li_err = li_err.max((li.get(f, s, r, t) - h.get(f, s, r, t)).norm());
                }
            }
        }
    }
    check(li_err < 1e-10, format!("LI affine error {li_err:.2e}"))?;

    // DFTI round trip on channels built from taps inside the cutoff
    let one = GridDims::new(72, 14, 1, 1).unwrap();
    let comb = single_tx(&one, [3, 10].iter().flat_map(|&s| (0..72).map(move |f| (f, s))).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut dfti_worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        let amps: Vec<Complex64> = (0..9).map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        let h = ChannelTensor::from_fn(one, |f, _, _, _| {
            amps.iter()
                .enumerate()
                .map(|(l, a)| a * Complex64::from_polar(1.0, -2.0 * PI * (f * l) as f64 / 72.0))
                .sum()
        });
        let est = dfti(&LsGrid::sample(&h, &comb).unwrap(), 9).unwrap();
        dfti_worst = dfti_worst.max(nmse(&h, &est).unwrap());
    }
    check(dfti_worst < -40.0, format!("DFTI round trip NMSE {dfti_worst:.1} dB"))?;

    // DFTLI midpoint in time
    let small = GridDims::new(24, 14, 1, 1).unwrap();
    let two = single_tx(&small, [2, 12].iter().flat_map(|&s| (0..24).map(move |f| (f, s))).collect());
    let (a, b) = (c(0.7, 0.1), c(-1.3, 2.0));
    let h = ChannelTensor::from_fn(small, |_, s, _, _| if s < 7 { a } else { b });
    let est = dftli(&LsGrid::sample(&h, &two).unwrap(), 3).unwrap();
    let mid = (0..24).map(|f| (est.get(f, 7, 0, 0) - (a + b) / 2.0).norm()).fold(0.0, f64::max);
    check(mid < 1e-12, format!("DFTLI midpoint error {mid:.2e}"))?;
    Ok(format!(
        "LS {ls_err:.1e}, LI {li_err:.1e}, DFTI worst {dfti_worst:.1} dB, DFTLI midpoint {mid:.1e}"
    ))
}

fn channel_statistics() -> Outcome {
    let dims = GridDims::new(72, 14, 2, 2).unwrap();
    for fading in FadingModel::ALL {
        for correlation in CorrelationLevel::ALL {
            let cfg = ChannelConfig {
                fading,
                correlation,
                doppler_hz: 0.0,
                seed: 3,
                ..Default::default()
            };
            let h = gen_channel(&cfg, &dims).map_err(|e| e.to_string())?;
            for f in 0..72 {
                for s in 1..14 {
                    check(h.matrix(f, s) == h.matrix(f, 0), format!("{fading}/{correlation} varies at f={f} s={s}"))?;
                }
            }
        }
    }

    let rx = GridDims::new(12, 1, 4, 2).unwrap();
    let mut rhos = Vec::new();
    for level in CorrelationLevel::ALL {
        let (mut cross, mut p0, mut p1) = (c(0.0, 0.0), 0.0, 0.0);
        for seed in 0..2000 {
            let cfg = ChannelConfig {
                correlation: level,
                fading: FadingModel::ALL[seed as usize % 5],
                seed,
                ..Default::default()
            };
            let h = gen_channel(&cfg, &rx).map_err(|e| e.to_string())?;
            for f in 0..12 {
                for t in 0..2 {
                    for r in 0..3 {
                        let (x, y) = (h.get(f, 0, r, t), h.get(f, 0, r + 1, t));
                        cross += x * y.conj();
                        p0 += x.norm_sqr();
                        p1 += y.norm_sqr();
                    }
                }
            }
        }
        let rho = (cross / (p0 * p1).sqrt()).re;
        check(
            (rho - level.coefficient()).abs() < 0.05,
            format!("{level}: adjacent-Rx correlation {rho:.3}"),
        )?;
        rhos.push(rho);
    }

    let grid = GridDims::new(7200, 14, 1, 1).unwrap();
    let ident = ChannelTensor::from_fn(grid, |_, _, _, _| c(1.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x = TxGrid::zeros(7200, 14, 1);
    for v in &mut x.data {
        *v = QPSK[rng.random_range(0..4)];
    }
    let mut worst = 0.0f64;
    for snr in [-10.0, 0.0, 10.0, 20.0, 30.0] {
        let y = transmit(&ident, &x, snr, 9).map_err(|e| e.to_string())?;
        let pn: f64 = y.data.iter().zip(&x.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        let ps: f64 = x.data.iter().map(|v| v.norm_sqr()).sum();
        worst = worst.max((10.0 * (ps / pn).log10() - snr).abs());
    }
    check(worst < 0.2, format!("empirical SNR off by {worst:.3} dB"))?;
    Ok(format!(
        "Doppler-0 constant; correlation {:.3}/{:.3}/{:.3}; SNR within {worst:.3} dB over 100800 REs",
        rhos[0], rhos[1], rhos[2]
    ))
}

// 5k pair grids each: 1250 2x2 subframes, or 625 4x2 subframes giving 1250 4-Rx slabs
const TRAIN_SUBFRAMES_2D: usize = 1250;
const TRAIN_SUBFRAMES_3D: usize = 625;
const TEST_SUBFRAMES_2D: usize = 250;
const TEST_SUBFRAMES_3D: usize = 150;

// one recipe for both networks
const EPOCHS: usize = 14;
const BATCH: usize = 4;
const LR: f64 = 1e-3;
const LR_MIN: f64 = 1e-5;

struct Trained {
    dir: tempfile::TempDir,
    u2d: Option<PathBuf>,
    f3d: Option<PathBuf>,
}

fn collect(ds: &Dataset, arch: Architecture) -> Result<Vec<Example>, String> {
    let mut out = Vec::new();
    for s in &ds.samples {
        let ls = s.ls_grid(&ds.header).map_err(|e| e.to_string())?;
        out.extend(examples(arch, &ls, &s.channel(&ds.header)).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn train_to(path: &Path, kind: NetKind, ex: &[Example], seed: u64) -> Result<String, String> {
    let cfg = TrainConfig {
        epochs: EPOCHS,
        batch_size: BATCH,
        lr: LR,
        lr_min: Some(LR_MIN),
        lambda: 1e-4,
        val_fraction: 0.05,
        seed,
        ..Default::default()
    };
    let out = train(kind.spec(), ex, &cfg).map_err(|e| e.to_string())?;
    let file = std::fs::File::create(path).map_err(|e| e.to_string())?;
    write_checkpoint(&out.model, std::io::BufWriter::new(file)).map_err(|e| e.to_string())?;
    let last = out.history.last().unwrap();
    Ok(format!("val loss {:.1} -> {:.1}", out.initial_val_loss, last.val_loss))
}

fn evaluate(trained: &Trained, dataset: &Path, dims: GridDims, estimators: &[&str]) -> Result<ExperimentReport, String> {
    let mut cfg = ExperimentConfig::new(dims);
    cfg.estimators = estimators.iter().map(|s| s.to_string()).collect();
    cfg.dataset = Some(dataset.to_path_buf());
    for (name, p) in [("2du", &trained.u2d), ("3dff", &trained.f3d)] {
        if let Some(p) = p {
            cfg.checkpoints.insert(name.into(), p.clone());
        }
    }
    let rep = run_experiment(&cfg).map_err(|e| e.to_string())?;
    check(rep.skipped.is_empty(), format!("skipped: {:?}", rep.skipped))?;
    Ok(rep)
}

fn estimator_ordering(trained: &mut Trained) -> Outcome {
    let start = Instant::now();
    let d2 = GridDims::new(72, 14, 2, 2).unwrap();
    let physics = Physics::default();
    let train_set = generate_dataset(&SweepAxes::default(), TRAIN_SUBFRAMES_2D, d2, PatternKind::Sparse, 101, physics, None)
        .map_err(|e| e.to_string())?;
    let ex = collect(&train_set, Architecture::Pair2d)?;
    let u2d = trained.dir.path().join("2du.mcnn");
    let log2 = train_to(&u2d, NetKind::U2d, &ex, 7)?;
    trained.u2d = Some(u2d);
    drop(ex);

    let test_axes = SweepAxes {
        snr_db: vec![0.0, 10.0, 20.0],
        ..Default::default()
    };
    let test_path = trained.dir.path().join("test2.ceds");
    generate_dataset(&test_axes, TEST_SUBFRAMES_2D, d2, PatternKind::Sparse, 202, physics, Some(&test_path))
        .map_err(|e| e.to_string())?;
    let rep = evaluate(trained, &test_path, d2, &["li", "2du"])?;
    let mean_over_snr = |est: &str| {
        [0.0, 10.0, 20.0]
            .iter()
            .map(|&snr| rep.mean_nmse_db(est, |c| c.snr_db == snr).unwrap_or(f64::NAN))
            .sum::<f64>()
            / 3.0
    };
    let (li, u) = (mean_over_snr("li"), mean_over_snr("2du"));

    let d42 = GridDims::new(72, 14, 4, 2).unwrap();
    let slab_set = generate_dataset(&SweepAxes::default(), TRAIN_SUBFRAMES_3D, d42, PatternKind::Sparse, 303, physics, None)
        .map_err(|e| e.to_string())?;
    let ex = collect(&slab_set, Architecture::Slab3d)?;
    let f3d = trained.dir.path().join("3dff.mcnn");
    let log3 = train_to(&f3d, NetKind::Ff3d, &ex, 8)?;
    trained.f3d = Some(f3d);
    drop(ex);

    let high = SweepAxes {
        correlation: vec![CorrelationLevel::High],
        snr_db: vec![10.0],
        ..Default::default()
    };
    let high_path = trained.dir.path().join("test3.ceds");
    generate_dataset(&high, TEST_SUBFRAMES_3D, d42, PatternKind::Sparse, 404, physics, Some(&high_path))
        .map_err(|e| e.to_string())?;
    let rep = evaluate(trained, &high_path, d42, &["li", "2du", "3dff"])?;
    let all = |_: &cebench_core::bench::Cell| true;
    let (li4, u4, f4) = (
        rep.mean_nmse_db("li", all).unwrap_or(f64::NAN),
        rep.mean_nmse_db("2du", all).unwrap_or(f64::NAN),
        rep.mean_nmse_db("3dff", all).unwrap_or(f64::NAN),
    );
    let detail = format!(
        "SNR{{0,10,20}} mean NMSE: LI {li:.2} dB, 2DU {u:.2} dB (gain {:.2} dB); \
         4 Rx high corr 10 dB: LI {li4:.2}, 2DU {u4:.2}, 3DFF {f4:.2} dB; \
         2DU {log2}, 3DFF {log3}; {:.0} s",
        li - u,
        start.elapsed().as_secs_f64()
    );
    check(li - u >= 2.0 && f4 <= u4, detail.clone())?;
    Ok(detail)
}

fn detection(trained: &Trained) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    for _ in 0..1000 {
        let h = cebench_core::channel::CMatrix::from_fn(2, 2, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        let x: Vec<Complex64> = (0..2).map(|_| QPSK[rng.random_range(0..4)]).collect();
        let y = &h * DVector::from_column_slice(&x);
        for d in Detector::ALL {
            let got = d.detect(&y, &h, 0.0).map_err(|e| e.to_string())?;
            check(got == x, format!("{d} failed noiseless recovery"))?;
        }
    }

    let dims = GridDims::new(72, 14, 2, 2).unwrap();
    let mut cfg = ExperimentConfig::new(dims);
    let mut estimators = vec!["exact", "li", "dfti", "dftli"];
    if let Some(p) = &trained.u2d {
        cfg.checkpoints.insert("2du".into(), p.clone());
        estimators.push("2du");
    }
    cfg.estimators = estimators.iter().map(|s| s.to_string()).collect();
    cfg.detectors = Detector::ALL.to_vec();
    cfg.sweep = SweepAxes {
        fading: FadingModel::ALL.to_vec(),
        correlation: CorrelationLevel::ALL.to_vec(),
        doppler_hz: vec![30.0],
        snr_db: vec![10.0],
    };
    cfg.samples_per_cell = 7;
    cfg.seed = 81;
    let rep = run_experiment(&cfg).map_err(|e| e.to_string())?;
    check(rep.skipped.is_empty(), format!("skipped: {:?}", rep.skipped))?;

    // every subframe has the same number of data REs, so row BERs average exactly
    let pilots = build_sparse_pattern(dims, 0).unwrap().total();
    let res_per_frame = dims.n_re() - pilots;
    let frames: usize = rep.rows.iter().filter(|r| r.estimator == "exact" && r.detector == Some(Detector::Ml)).map(|r| r.n).sum();
    let res = frames * res_per_frame;
    check(res >= 100_000, format!("only {res} REs"))?;
    let bits = (res * 4) as f64;
    let ber = |est: &str, det: Detector| {
        let rows: Vec<_> = rep.rows.iter().filter(|r| r.estimator == est && r.detector == Some(det)).collect();
        let n: usize = rows.iter().map(|r| r.n).sum();
        rows.iter().map(|r| r.ber.unwrap() * r.n as f64).sum::<f64>() / n as f64
    };
    let se = |p: f64| (p * (1.0 - p) / bits).sqrt();
    let (ml, vb, zf) = (ber("exact", Detector::Ml), ber("exact", Detector::Vblast), ber("exact", Detector::Zf));
    check(ml <= vb + se(vb), format!("BER ML {ml:.3e} > V-BLAST {vb:.3e}"))?;
    check(vb <= zf + se(zf), format!("BER V-BLAST {vb:.3e} > ZF {zf:.3e}"))?;
    for est in &estimators[1..] {
        for d in Detector::ALL {
            let (e, x) = (ber(est, d), ber("exact", d));
            check(x <= e, format!("{d}: exact {x:.3e} above {est} {e:.3e}"))?;
        }
    }
    Ok(format!(
        "{res} REs at 10 dB; exact-channel BER ML {ml:.3e} <= V-BLAST {vb:.3e} <= ZF {zf:.3e}; \
         exact below {} estimators for every detector",
        estimators.len() - 1
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dims = GridDims::new(48, 14, 2, 2).unwrap();
    let axes = SweepAxes {
        snr_db: vec![0.0, 20.0],
        doppler_hz: vec![0.0, 90.0],
        ..Default::default()
    };
    let (a, b) = (dir.path().join("a.ceds"), dir.path().join("b.ceds"));
    for p in [&a, &b] {
        generate_dataset(&axes, 40, dims, PatternKind::Sparse, 9, Physics::default(), Some(p)).map_err(|e| e.to_string())?;
    }
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    check(ba == bb, "dataset files differ")?;
    let loaded = Dataset::load(&a).map_err(|e| e.to_string())?;
    check(loaded.to_bytes().unwrap() == ba, "dataset round trip is not bit-exact")?;

    let ds = Dataset::load(&a).unwrap();
    let ex = collect(&ds, Architecture::Pair2d)?;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 4,
        ..Default::default()
    };
    let runs: Vec<_> = (0..2).map(|_| train(NetKind::U2d.spec(), &ex[..40], &cfg).unwrap()).collect();
    check(runs[0].history == runs[1].history, "training trajectories differ")?;
    let ckpt = |m: &Model<f32>| {
        let mut v = Vec::new();
        write_checkpoint(m, &mut v).unwrap();
        v
    };
    let (c0, c1) = (ckpt(&runs[0].model), ckpt(&runs[1].model));
    check(c0 == c1, "checkpoints differ")?;
    let back: Model<f32> = read_checkpoint(c0.as_slice()).map_err(|e| e.to_string())?;
    check(ckpt(&back) == c0 && back.params() == runs[0].model.params(), "checkpoint round trip is not bit-exact")?;

    let ck_path = dir.path().join("2du.mcnn");
    std::fs::write(&ck_path, &c0).unwrap();
    let mut csvs = Vec::new();
    for name in ["r1.csv", "r2.csv"] {
        let mut e = ExperimentConfig::new(dims);
        e.estimators = vec!["li".into(), "dftli".into(), "2du".into()];
        e.detectors = vec![Detector::Zf];
        e.checkpoints.insert("2du".into(), ck_path.clone());
        e.dataset = Some(a.clone());
        e.output = Some(dir.path().join(name));
        run_experiment(&e).map_err(|e| e.to_string())?;
        csvs.push(std::fs::read(dir.path().join(name)).unwrap());
    }
    check(csvs[0] == csvs[1], "CSV reports differ")?;
    Ok(format!(
        "dataset {} bytes, checkpoint {} bytes, CSV {} bytes identical across runs",
        ba.len(),
        c0.len(),
        csvs[0].len()
    ))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())));
    let secs = start.elapsed().as_secs_f64();
    match &res {
        Ok(detail) => println!("criterion {n} {name}: PASS ({secs:.1} s) {detail}"),
        Err(detail) => println!("criterion {n} {name}: FAIL ({secs:.1} s) {detail}"),
    }
    res.is_ok()
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored, except --list.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut trained = Trained {
        dir: tempfile::tempdir().expect("temp dir"),
        u2d: None,
        f3d: None,
    };
    let results = [
        run(1, "parameter counts", parameter_counts),
        run(2, "MAC counts", mac_counts),
        run(3, "autodiff", autodiff),
        run(4, "convolution oracle", convolution),
        run(5, "classical exactness", classical),
        run(6, "channel statistics", channel_statistics),
        run(7, "estimator ordering", || estimator_ordering(&mut trained)),
        run(8, "detection", || detection(&trained)),
        run(9, "determinism and persistence", determinism),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
