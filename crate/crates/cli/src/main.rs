//! `cebench`: generate datasets, train the CNN estimators, run NMSE and BER
//! sweeps, emit plot scripts and inspect files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cebench_core::bench::{generate_dataset, plot_script, run_experiment, Config, Dataset, CEDS_MAGIC, CSV_HEADER};
use cebench_core::detect::Detector;
use cebench_core::estimators::{examples, train, Architecture, NetKind};
use cebench_core::{Error, Result};
use cebench_nn::{read_checkpoint, write_checkpoint, Model};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cebench", version, about = "MIMO-OFDM channel estimation benchmark")]
struct Cli {
    /// TOML config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset over the configured sweep.
    Generate {
        /// Subframes to draw (default: dataset.samples).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train a CNN estimator on one or more datasets.
    Train {
        /// 2du or 3dff.
        net: NetKind,
        /// Training datasets (default: train.datasets).
        #[arg(long = "data")]
        data: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// NMSE sweep over the configured estimators.
    Evaluate {
        /// Test dataset replacing the sweep (default: experiment.dataset).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// BER sweep over the configured estimators and detectors.
    Detect {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Write the plot script for a sweep CSV.
    Report { csv: PathBuf },
    /// Print the header of a dataset or checkpoint file.
    Inspect { file: PathBuf },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::parse("", &std::env::current_dir()?)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}

fn not_found(path: &Path, what: &str) -> Error {
    Error::File {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
    }
}

fn generate(cli: &Cli, samples: Option<usize>) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("dataset.ceds"));
    let n = samples.unwrap_or(cfg.dataset.samples);
    let ds = generate_dataset(&cfg.sweep()?, n, cfg.dims()?, cfg.pattern()?, cfg.seed, cfg.physics(), Some(&out))?;
    println!("wrote {} samples ({}) to {}", ds.len(), ds.header.dims, out.display());
    Ok(())
}

fn train_cmd(cli: &Cli, net: NetKind, data: &[PathBuf], epochs: Option<usize>) -> Result<()> {
    let cfg = load_config(cli)?;
    let mut tc = cfg.train_config();
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    let paths: Vec<PathBuf> = if data.is_empty() { tc.datasets.clone() } else { data.to_vec() };
    if paths.is_empty() {
        return Err(Error::Config("no training dataset given (use --data or train.datasets)".into()));
    }
    let spec = net.spec();
    let arch = Architecture::of(&spec)?;
    let mut ex = Vec::new();
    for p in &paths {
        if !p.exists() {
            return Err(not_found(p, "dataset"));
        }
        let ds = Dataset::load(p)?;
        for s in &ds.samples {
            ex.extend(examples(arch, &s.ls_grid(&ds.header)?, &s.channel(&ds.header))?);
        }
    }
    let outcome = train(spec, &ex, &tc)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.mcnn", net.name())));
    let file = File::create(&out).map_err(io_err(&out))?;
    write_checkpoint(&outcome.model, BufWriter::new(file))?;
    let log = out.with_extension("log.csv");
    std::fs::write(&log, outcome.log_csv()).map_err(io_err(&log))?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "trained {} on {} examples for {} epochs: train {:.4e}, val {:.4e}; wrote {} and {}",
        net.name(),
        ex.len(),
        tc.epochs,
        last.train_loss,
        last.val_loss,
        out.display(),
        log.display()
    );
    Ok(())
}

fn sweep(cli: &Cli, dataset: Option<&PathBuf>, detect: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    let mut exp = cfg.experiment()?;
    if let Some(d) = dataset {
        exp.dataset = Some(d.clone());
    }
    if let Some(o) = &cli.out {
        exp.output = Some(o.clone());
    }
    if exp.output.is_none() {
        exp.output = Some(PathBuf::from(if detect { "ber.csv" } else { "nmse.csv" }));
    }
    if detect {
        if exp.detectors.is_empty() {
            exp.detectors = Detector::ALL.to_vec();
        }
    } else {
        exp.detectors.clear();
    }
    if let Some(d) = &exp.dataset {
        if !d.exists() {
            return Err(not_found(d, "dataset"));
        }
    }
    // a CNN without its checkpoint is an error here, not a skipped row
    for name in &exp.estimators {
        if let Ok(kind) = name.parse::<NetKind>() {
            match exp.checkpoints.get(kind.name()) {
                Some(p) if p.exists() => {}
                Some(p) => return Err(not_found(p, "checkpoint")),
                None => {
                    return Err(Error::Config(format!(
                        "estimator {} needs experiment.checkpoints.{}",
                        kind.name(),
                        kind.name()
                    )))
                }
            }
        }
    }
    let rep = run_experiment(&exp)?;
    let out = exp.output.as_ref().expect("output set above");
    println!("wrote {} rows to {} and plot script {}", rep.rows.len(), out.display(), out.with_extension("py").display());
    for s in &rep.skipped {
        println!("skipped: {s}");
    }
    for ((est, det), n) in rep.erasures.iter().filter(|(_, &n)| n > 0) {
        println!("erasures: {est}/{det}: {n} rank-deficient REs");
    }
    Ok(())
}

fn report(cli: &Cli, csv: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv).map_err(io_err(csv))?;
    if text.lines().next() != Some(CSV_HEADER) {
        return Err(Error::Format(format!("{} does not start with the sweep CSV header", csv.display())));
    }
    let out = cli.out.clone().unwrap_or_else(|| csv.with_extension("py"));
    std::fs::write(&out, plot_script(csv)).map_err(io_err(&out))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(io_err(path))?;
    if &magic == CEDS_MAGIC {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let (h, count) = Dataset::read_header(&bytes)?;
        let d = h.dims;
        println!("kind: dataset");
        println!("dims: n_sc={} n_symb={} n_rx={} n_tx={}", d.n_sc, d.n_symb, d.n_rx, d.n_tx);
        println!("samples: {count}");
        println!("pattern: {} (seed {})", h.pattern_kind.name(), h.pattern_seed);
        println!("pilots: {}", h.n_pilots());
        println!(
            "physics: subcarrier_spacing_hz={} symbol_duration_s={} delay_spread_ns={}",
            h.physics.subcarrier_spacing_hz, h.physics.symbol_duration_s, h.physics.delay_spread_ns
        );
    } else if &magic == cebench_nn::checkpoint::MAGIC {
        let file = File::open(path).map_err(io_err(path))?;
        let m: Model<f32> = read_checkpoint(BufReader::new(file))?;
        let spec = m.spec();
        let net = [NetKind::U2d, NetKind::Ff3d].into_iter().find(|k| &k.spec() == spec);
        println!("kind: checkpoint");
        println!("network: {}", net.map_or("custom", NetKind::name));
        println!("layers: {}", spec.layers.len());
        println!("parameters: {}", m.param_count());
        println!("trained_extent: {:?}", m.trained_extent);
    } else {
        return Err(Error::Format(format!("{}: neither a dataset nor a checkpoint", path.display())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Generate { samples } => generate(&cli, *samples),
        Command::Train { net, data, epochs } => train_cmd(&cli, *net, data, *epochs),
        Command::Evaluate { dataset } => sweep(&cli, dataset.as_ref(), false),
        Command::Detect { dataset } => sweep(&cli, dataset.as_ref(), true),
        Command::Report { csv } => report(&cli, csv),
        Command::Inspect { file } => inspect(file),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
