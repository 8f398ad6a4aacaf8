//! Estimator × detector sweeps over channel conditions, CSV and plot-script output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cebench_nn::read_checkpoint;

use super::dataset::Dataset;
use super::sim::{simulate, Physics, SweepAxes};
use super::{nmse_ratio, to_db};
use crate::channel::{noise_variance, ChannelConfig, ChannelTensor, CorrelationLevel, FadingModel};
use crate::classical::{default_max_delay_taps, dfti, dftli, li_interpolate, ls_estimate, LsGrid};
use crate::detect::{DetectionReport, Detector};
use crate::estimators::{CnnEstimator, NetKind};
use crate::grid::{build_pattern, GridDims, PatternKind, RsPattern};
use crate::{file_err, seed, Error, Result};

pub const CSV_HEADER: &str = "estimator,detector,fading,correlation,doppler,snr,nmse_db,ber,n";

#[derive(Debug, Clone)]
pub enum Estimator {
    Li,
    Dfti { max_delay_taps: usize },
    Dftli { max_delay_taps: usize },
    Cnn { kind: NetKind, net: Box<CnnEstimator> },
    /// The true channel.
    Exact,
    /// `Ĥ = 0`.
    Zero,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Li => "li",
            Estimator::Dfti { .. } => "dfti",
            Estimator::Dftli { .. } => "dftli",
            Estimator::Cnn { kind, .. } => kind.name(),
            Estimator::Exact => "exact",
            Estimator::Zero => "zero",
        }
    }

    pub fn estimate(&self, ls: &LsGrid, truth: &ChannelTensor) -> Result<ChannelTensor> {
        match self {
            Estimator::Li => li_interpolate(ls),
            Estimator::Dfti { max_delay_taps } => dfti(ls, *max_delay_taps),
            Estimator::Dftli { max_delay_taps } => dftli(ls, *max_delay_taps),
            Estimator::Cnn { net, .. } => Ok(net.estimate(ls)?.h_hat),
            Estimator::Exact => Ok(truth.clone()),
            Estimator::Zero => Ok(ChannelTensor::zeros(truth.dims)),
        }
    }
}

/// Channel condition of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub fading: FadingModel,
    pub correlation: CorrelationLevel,
    pub doppler_hz: f64,
    pub snr_db: f64,
}

impl Cell {
    fn of(cfg: &ChannelConfig) -> Self {
        Cell {
            fading: cfg.fading,
            correlation: cfg.correlation,
            doppler_hz: cfg.doppler_hz,
            snr_db: cfg.snr_db,
        }
    }

    fn key(&self) -> (FadingModel, CorrelationLevel, u64, u64) {
        (self.fading, self.correlation, self.doppler_hz.to_bits(), self.snr_db.to_bits())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Names: `li`, `dfti`, `dftli`, `2du`, `3dff`, `exact`, `zero`.
    pub estimators: Vec<String>,
    pub detectors: Vec<Detector>,
    pub sweep: SweepAxes,
    pub allow_extrapolation: bool,
    /// Realizations per cell when no dataset is given.
    pub samples_per_cell: usize,
    pub dims: GridDims,
    pub pattern: PatternKind,
    pub pattern_seed: u64,
    pub physics: Physics,
    /// Test set; its samples replace the sweep.
    pub dataset: Option<PathBuf>,
    pub checkpoints: BTreeMap<String, PathBuf>,
    /// CSV path; the plot script goes next to it with a `.py` extension.
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub max_delay_taps: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(dims: GridDims) -> Self {
        ExperimentConfig {
            estimators: vec!["li".into(), "dfti".into(), "dftli".into(), "exact".into()],
            detectors: Vec::new(),
            sweep: SweepAxes::default(),
            allow_extrapolation: false,
            samples_per_cell: 4,
            dims,
            pattern: PatternKind::Sparse,
            pattern_seed: 0,
            physics: Physics::default(),
            dataset: None,
            checkpoints: BTreeMap::new(),
            output: None,
            seed: 0,
            max_delay_taps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub estimator: String,
    /// `None` for NMSE-only rows.
    pub detector: Option<Detector>,
    pub cell: Cell,
    pub nmse_db: f64,
    pub ber: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    /// Estimators or cells left out, with the reason.
    pub skipped: Vec<String>,
    /// Rank-deficient REs per (estimator, detector).
    pub erasures: BTreeMap<(String, String), u64>,
}

impl ExperimentReport {
    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let ber = r.ber.map(|b| format!("{b:e}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{},{}",
                r.estimator,
                r.detector.map_or("none", Detector::name),
                r.cell.fading,
                r.cell.correlation,
                r.cell.doppler_hz,
                r.cell.snr_db,
                r.nmse_db,
                ber,
                r.n
            );
        }
        for w in &self.skipped {
            let _ = writeln!(s, "# skipped: {w}");
        }
        s
    }

    /// Linear-mean NMSE in dB over every NMSE-bearing row of one estimator
    /// matching `filter`, weighted by sample count.
    pub fn mean_nmse_db(&self, estimator: &str, filter: impl Fn(&Cell) -> bool) -> Option<f64> {
        let mut seen = std::collections::HashSet::new();
        let (mut acc, mut n) = (0.0, 0usize);
        for r in self.rows.iter().filter(|r| r.estimator == estimator && filter(&r.cell)) {
            // detector rows repeat the NMSE of their cell
            if seen.insert(r.cell.key()) {
                acc += 10f64.powf(r.nmse_db / 10.0) * r.n as f64;
                n += r.n;
            }
        }
        (n > 0).then(|| to_db(acc / n as f64))
    }
}

fn build_estimator(name: &str, cfg: &ExperimentConfig) -> Result<std::result::Result<Estimator, String>> {
    let taps = cfg.max_delay_taps.unwrap_or_else(|| default_max_delay_taps(cfg.dims.n_sc));
    Ok(Ok(match name.trim().to_ascii_lowercase().as_str() {
        "li" => Estimator::Li,
        "dfti" => Estimator::Dfti { max_delay_taps: taps },
        "dftli" => Estimator::Dftli { max_delay_taps: taps },
        "exact" => Estimator::Exact,
        "zero" => Estimator::Zero,
        other => {
            let kind: NetKind = other.parse()?;
            let Some(path) = cfg.checkpoints.get(kind.name()) else {
                return Ok(Err(format!("{}: no checkpoint configured", kind.name())));
            };
            if !path.exists() {
                return Ok(Err(format!("{}: checkpoint {} not found", kind.name(), path.display())));
            }
            let file = std::fs::File::open(path).map_err(file_err(path))?;
            let model = read_checkpoint::<f32, _>(std::io::BufReader::new(file))?;
            if model.spec() != &kind.spec() {
                return Err(Error::Config(format!(
                    "checkpoint {} does not hold a {} network",
                    path.display(),
                    kind.name()
                )));
            }
            Estimator::Cnn {
                kind,
                net: Box::new(CnnEstimator::new(model)?),
            }
        }
    }))
}

/// One realization to evaluate. Dataset samples carry their stored channel
/// and LS grid; the rest are simulated from the config.
struct Case {
    config: ChannelConfig,
    stored: Option<(ChannelTensor, LsGrid)>,
}

type Groups = Vec<(Cell, Vec<Case>)>;

/// Realizations to evaluate, grouped by cell in sweep order.
fn cases(cfg: &ExperimentConfig) -> Result<(GridDims, RsPattern, Groups)> {
    if let Some(path) = &cfg.dataset {
        let ds = Dataset::load(path)?;
        let pattern = ds.pattern()?;
        let mut groups: Groups = Vec::new();
        let mut index = BTreeMap::new();
        for s in &ds.samples {
            let c = s.config(&ds.header.physics);
            let cell = Cell::of(&c);
            let slot = *index.entry(cell.key()).or_insert_with(|| {
                groups.push((cell, Vec::new()));
                groups.len() - 1
            });
            let stored = Some((s.channel(&ds.header), s.ls_grid(&ds.header)?));
            groups[slot].1.push(Case { config: c, stored });
        }
        // deterministic cell order independent of sample order
        groups.sort_by(|a, b| a.0.key().cmp(&b.0.key()));
        return Ok((ds.header.dims, pattern, groups));
    }
    cfg.sweep.validate(cfg.allow_extrapolation)?;
    if cfg.samples_per_cell == 0 {
        return Err(Error::Config("samples_per_cell must be at least 1".into()));
    }
    let pattern = build_pattern(cfg.pattern, cfg.dims, cfg.pattern_seed)?;
    let base = seed::derive(cfg.seed, seed::SAMPLE);
    let groups = (0..cfg.sweep.n_cells())
        .map(|i| {
            let (fading, correlation, doppler, snr) = cfg.sweep.cell(i);
            let configs = (0..cfg.samples_per_cell)
                .map(|j| {
                    let s = seed::derive(base, (i * cfg.samples_per_cell + j) as u64);
                    Case {
                        config: cfg.physics.config(fading, correlation, doppler, snr, s),
                        stored: None,
                    }
                })
                .collect();
            (Cell::of(&cfg.physics.config(fading, correlation, doppler, snr, 0)), configs)
        })
        .collect();
    Ok((cfg.dims, pattern, groups))
}

/// Runs every estimator (and detector) over every cell, then writes the CSV
/// and plot script when `cfg.output` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.estimators.is_empty() {
        return Err(Error::Config("experiment lists no estimators".into()));
    }
    let mut report = ExperimentReport::default();
    let mut estimators = Vec::new();
    for name in &cfg.estimators {
        match build_estimator(name, cfg)? {
            Ok(e) => estimators.push(e),
            Err(why) => report.skipped.push(why),
        }
    }
    let (dims, pattern, groups) = cases(cfg)?;
    let with_data = !cfg.detectors.is_empty();

    for (cell, configs) in &groups {
        let mut sums = vec![0.0; estimators.len()];
        let mut failed: Vec<Option<String>> = vec![None; estimators.len()];
        let mut det: Vec<Vec<DetectionReport>> = estimators
            .iter()
            .map(|e| cfg.detectors.iter().map(|&d| DetectionReport::new(d, e.name())).collect())
            .collect();
        for case in configs {
            let c = &case.config;
            // detection needs the full received grid, so it always re-simulates
            let (real, h, ls) = match &case.stored {
                Some((h, ls)) if !with_data => (None, h.clone(), ls.clone()),
                _ => {
                    let real = simulate(c, &dims, &pattern, with_data)?;
                    let ls = ls_estimate(&real.y, &pattern)?;
                    let h = real.h.clone();
                    (Some(real), h, ls)
                }
            };
            let nv = noise_variance(c.snr_db);
            for (k, est) in estimators.iter().enumerate() {
                if failed[k].is_some() {
                    continue;
                }
                let h_hat = match est.estimate(&ls, &h) {
                    Ok(h) => h,
                    Err(e @ (Error::Shape(_) | Error::Estimation(_) | Error::Invalid(_))) => {
                        failed[k] = Some(e.to_string());
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                sums[k] += nmse_ratio(&h, &h_hat)?;
                let Some(real) = &real else { continue };
                for rep in &mut det[k] {
                    let n_tx = dims.n_tx;
                    for (i, &(f, s)) in real.data_res.iter().enumerate() {
                        let bits = &real.bits[i * 2 * n_tx..(i + 1) * 2 * n_tx];
                        rep.record(&real.y_at(f, s), &h_hat.matrix(f, s), nv, bits)?;
                    }
                }
            }
        }
        for (k, est) in estimators.iter().enumerate() {
            if let Some(why) = &failed[k] {
                report.skipped.push(format!(
                    "{} at {}/{}/{} Hz/{} dB: {why}",
                    est.name(),
                    cell.fading,
                    cell.correlation,
                    cell.doppler_hz,
                    cell.snr_db
                ));
                continue;
            }
            let nmse_db = to_db(sums[k] / configs.len() as f64);
            if cfg.detectors.is_empty() {
                report.rows.push(ReportRow {
                    estimator: est.name().into(),
                    detector: None,
                    cell: *cell,
                    nmse_db,
                    ber: None,
                    n: configs.len(),
                });
            }
            for rep in &det[k] {
                *report
                    .erasures
                    .entry((est.name().to_string(), rep.detector.name().to_string()))
                    .or_default() += rep.erasures;
                report.rows.push(ReportRow {
                    estimator: est.name().into(),
                    detector: Some(rep.detector),
                    cell: *cell,
                    nmse_db,
                    ber: Some(rep.ber()),
                    n: configs.len(),
                });
            }
        }
    }

    if let Some(out) = &cfg.output {
        std::fs::write(out, report.csv()).map_err(file_err(out))?;
        let script = out.with_extension("py");
        std::fs::write(&script, plot_script(out)).map_err(file_err(&script))?;
    }
    Ok(report)
}

/// Standalone matplotlib script that reads `csv` and draws NMSE-vs-SNR,
/// NMSE-vs-Doppler and BER-vs-SNR curves, averaging linear values over the
/// remaining axes.
pub fn plot_script(csv: &Path) -> String {
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    PLOT_TEMPLATE.replace("@CSV@", &name)
}

const PLOT_TEMPLATE: &str = r##"#!/usr/bin/env python3
# Renders curves from a cebench sweep CSV. Usage: python3 this.py [csv]
import csv
import math
import os
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
path = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "@CSV@")
rows = [r for r in csv.DictReader(line for line in open(path) if not line.startswith("#"))]
stem = os.path.splitext(path)[0]


def average(rows, key, value, axis, log):
    acc = defaultdict(lambda: [0.0, 0])
    for r in rows:
        if r[value] == "":
            continue
        v = float(r[value])
        v = 10 ** (v / 10) if log else v
        n = int(r["n"])
        a = acc[(key(r), float(r[axis]))]
        a[0] += v * n
        a[1] += n
    curves = defaultdict(list)
    for (k, x), (s, n) in sorted(acc.items()):
        y = s / n
        curves[k].append((x, 10 * math.log10(y) if log and y > 0 else y))
    return curves


def nmse_rows():
    seen = set()
    for r in rows:
        k = (r["estimator"], r["fading"], r["correlation"], r["doppler"], r["snr"])
        if k not in seen:
            seen.add(k)
            yield r


def draw(curves, xlabel, ylabel, out, logy=False):
    plt.figure(figsize=(6, 4))
    for k, pts in sorted(curves.items()):
        xs, ys = zip(*pts)
        plt.plot(xs, ys, marker="o", label=k)
    if logy:
        plt.yscale("log")
    plt.xlabel(xlabel)
    plt.ylabel(ylabel)
    plt.grid(True, alpha=0.3)
    plt.legend()
    plt.tight_layout()
    plt.savefig(out)
    plt.close()
    print(out)


nm = list(nmse_rows())
draw(average(nm, lambda r: r["estimator"], "nmse_db", "snr", True), "SNR (dB)", "NMSE (dB)", stem + "_nmse_snr.png")
draw(average(nm, lambda r: r["estimator"], "nmse_db", "doppler", True), "Doppler (Hz)", "NMSE (dB)", stem + "_nmse_doppler.png")
det = [r for r in rows if r["detector"] != "none"]
if det:
    ber = average(det, lambda r: r["estimator"] + "/" + r["detector"], "ber", "snr", False)
    draw(ber, "SNR (dB)", "BER", stem + "_ber_snr.png", logy=True)
"##;

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(estimators: &[&str]) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(GridDims::new(24, 14, 2, 2).unwrap());
        cfg.estimators = estimators.iter().map(|s| s.to_string()).collect();
        cfg.sweep = SweepAxes {
            fading: vec![FadingModel::TdlA],
            correlation: vec![CorrelationLevel::Low],
            doppler_hz: vec![0.0],
            snr_db: vec![0.0, 20.0],
        };
        cfg.samples_per_cell = 2;
        cfg
    }

    #[test]
    fn zero_and_exact_bracket_everything() {
        let rep = run_experiment(&tiny(&["zero", "exact", "li"])).unwrap();
        assert_eq!(rep.rows.len(), 6);
        for r in &rep.rows {
            match r.estimator.as_str() {
                "zero" => assert!(r.nmse_db.abs() < 1e-9),
                "exact" => assert_eq!(r.nmse_db, crate::bench::NMSE_FLOOR_DB),
                _ => assert!(r.nmse_db < 0.0),
            }
        }
        let csv = rep.csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn missing_checkpoint_is_skipped_with_reason() {
        let mut cfg = tiny(&["li", "2du"]);
        cfg.checkpoints.insert("2du".into(), PathBuf::from("/nonexistent/2du.mcnn"));
        let rep = run_experiment(&cfg).unwrap();
        assert!(rep.rows.iter().all(|r| r.estimator == "li"));
        assert!(rep.skipped[0].contains("/nonexistent/2du.mcnn"));
        assert!(rep.csv().contains("# skipped: 2du"));
        assert!(run_experiment(&tiny(&[])).is_err());
        assert!(run_experiment(&tiny(&["mmse"])).is_err());
    }

    #[test]
    fn detector_rows_carry_ber() {
        let mut cfg = tiny(&["exact", "zero"]);
        cfg.detectors = vec![Detector::Zf];
        let rep = run_experiment(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 4);
        for r in &rep.rows {
            let ber = r.ber.unwrap();
            if r.estimator == "zero" {
                assert_eq!(ber, 1.0, "zero estimate erases every RE");
            } else {
                assert!(ber < 0.5);
            }
        }
        assert!(rep.erasures[&("zero".to_string(), "zf".to_string())] > 0);
    }

    #[test]
    fn plot_script_names_csv() {
        let s = plot_script(Path::new("/tmp/out/sweep.csv"));
        assert!(s.contains("\"sweep.csv\""));
        assert!(s.contains("nmse_db"));
    }
}
