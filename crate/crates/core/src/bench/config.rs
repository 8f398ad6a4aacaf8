//! TOML configuration shared by the command-line subcommands.
//!
//! ```toml
//! seed = 1
//!
//! [grid]
//! n_sc = 72
//! n_symb = 14
//! n_rx = 2
//! n_tx = 2
//! pattern = "sparse"      # or "dense"
//!
//! [physics]
//! subcarrier_spacing_hz = 15000.0
//! symbol_duration_s = 7.142857e-5
//! delay_spread_ns = 100.0
//!
//! [sweep]
//! fading = ["A", "B", "C", "D", "E"]
//! correlation = ["low", "medium", "high"]
//! doppler_hz = [0, 60, 120]
//! snr_db = [0, 10, 20]
//! allow_extrapolation = false
//!
//! [dataset]
//! samples = 1000
//!
//! [train]
//! epochs = 10
//! batch_size = 16
//! lr = 1e-3
//! lr_min = 1e-5          # optional cosine decay target
//! lambda = 1e-4
//! weight_decay = 0.0
//! val_fraction = 0.1
//! datasets = ["train.ceds"]
//!
//! [experiment]
//! estimators = ["li", "dfti", "dftli", "2du", "exact"]
//! detectors = ["ml", "zf", "vblast"]
//! samples_per_cell = 4
//! dataset = "test.ceds"
//! max_delay_taps = 9
//! output = "sweep.csv"
//!
//! [experiment.checkpoints]
//! 2du = "2du.mcnn"
//! 3dff = "3dff.mcnn"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::experiment::ExperimentConfig;
use super::sim::{Physics, SweepAxes};
use crate::channel::{CorrelationLevel, FadingModel};
use crate::detect::Detector;
use crate::estimators::TrainConfig;
use crate::grid::{GridDims, PatternKind};
use crate::{file_err, Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(skip)]
    base: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub n_sc: usize,
    pub n_symb: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub pattern: String,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            n_sc: 72,
            n_symb: 14,
            n_rx: 2,
            n_tx: 2,
            pattern: "sparse".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsSection {
    pub subcarrier_spacing_hz: f64,
    pub symbol_duration_s: f64,
    pub delay_spread_ns: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        let p = Physics::default();
        PhysicsSection {
            subcarrier_spacing_hz: p.subcarrier_spacing_hz,
            symbol_duration_s: p.symbol_duration_s,
            delay_spread_ns: p.delay_spread_ns,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub fading: Vec<String>,
    pub correlation: Vec<String>,
    pub doppler_hz: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub allow_extrapolation: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        let a = SweepAxes::default();
        SweepSection {
            fading: a.fading.iter().map(|f| f.name().to_string()).collect(),
            correlation: a.correlation.iter().map(|c| c.name().to_string()).collect(),
            doppler_hz: a.doppler_hz,
            snr_db: a.snr_db,
            allow_extrapolation: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub samples: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { samples: 1000 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: Option<f64>,
    pub lambda: f64,
    pub weight_decay: f64,
    pub val_fraction: f64,
    pub datasets: Vec<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_min: t.lr_min,
            lambda: t.lambda,
            weight_decay: t.weight_decay,
            val_fraction: t.val_fraction,
            datasets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub estimators: Vec<String>,
    pub detectors: Vec<String>,
    pub samples_per_cell: usize,
    pub dataset: Option<PathBuf>,
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub output: Option<PathBuf>,
    pub max_delay_taps: Option<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            estimators: vec!["li".into(), "dfti".into(), "dftli".into(), "exact".into()],
            detectors: Vec::new(),
            samples_per_cell: 4,
            dataset: None,
            checkpoints: BTreeMap::new(),
            output: None,
            max_delay_taps: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
        c.base = base.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(file_err(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Resolves `p` against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn dims(&self) -> Result<GridDims> {
        let g = &self.grid;
        GridDims::new(g.n_sc, g.n_symb, g.n_rx, g.n_tx)
    }

    pub fn pattern(&self) -> Result<PatternKind> {
        self.grid.pattern.parse()
    }

    pub fn physics(&self) -> Physics {
        Physics {
            subcarrier_spacing_hz: self.physics.subcarrier_spacing_hz,
            symbol_duration_s: self.physics.symbol_duration_s,
            delay_spread_ns: self.physics.delay_spread_ns,
        }
    }

    pub fn sweep(&self) -> Result<SweepAxes> {
        let s = &self.sweep;
        let axes = SweepAxes {
            fading: s.fading.iter().map(|v| v.parse::<FadingModel>()).collect::<Result<_>>()?,
            correlation: s.correlation.iter().map(|v| v.parse::<CorrelationLevel>()).collect::<Result<_>>()?,
            doppler_hz: s.doppler_hz.clone(),
            snr_db: s.snr_db.clone(),
        };
        axes.validate(s.allow_extrapolation)?;
        Ok(axes)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_min: t.lr_min,
            lambda: t.lambda,
            weight_decay: t.weight_decay,
            seed: self.seed,
            val_fraction: t.val_fraction,
            datasets: t.datasets.iter().map(|p| self.resolve(p)).collect(),
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let e = &self.experiment;
        let mut cfg = ExperimentConfig::new(self.dims()?);
        cfg.estimators = e.estimators.clone();
        cfg.detectors = e.detectors.iter().map(|d| d.parse::<Detector>()).collect::<Result<_>>()?;
        cfg.sweep = self.sweep()?;
        cfg.allow_extrapolation = self.sweep.allow_extrapolation;
        cfg.samples_per_cell = e.samples_per_cell;
        cfg.pattern = self.pattern()?;
        cfg.pattern_seed = self.seed;
        cfg.physics = self.physics();
        cfg.dataset = e.dataset.as_deref().map(|p| self.resolve(p));
        cfg.checkpoints = e.checkpoints.iter().map(|(k, v)| (k.to_ascii_lowercase(), self.resolve(v))).collect();
        cfg.output = e.output.as_deref().map(|p| self.resolve(p));
        cfg.seed = self.seed;
        cfg.max_delay_taps = e.max_delay_taps;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = Config::parse("seed = 4\n[grid]\nn_rx = 4\n[sweep]\nsnr_db = [0, 10]\n", Path::new("/cfg")).unwrap();
        assert_eq!(c.dims().unwrap(), GridDims::new(72, 14, 4, 2).unwrap());
        assert_eq!(c.sweep().unwrap().snr_db, vec![0.0, 10.0]);
        assert_eq!(c.train_config().seed, 4);
        assert_eq!(c.resolve(Path::new("a.ceds")), PathBuf::from("/cfg/a.ceds"));
        let e = c.experiment().unwrap();
        assert_eq!(e.estimators.len(), 4);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(Config::parse("[grid]\nbogus = 1\n", Path::new(".")).is_err());
        let c = Config::parse("[sweep]\nsnr_db = [45]\n", Path::new(".")).unwrap();
        assert!(c.sweep().is_err());
        let c = Config::parse("[sweep]\nfading = [\"Z\"]\n", Path::new(".")).unwrap();
        assert!(c.sweep().is_err());
        let c = Config::parse("[experiment]\ndetectors = [\"mmse\"]\n", Path::new(".")).unwrap();
        assert!(c.experiment().is_err());
    }
}
