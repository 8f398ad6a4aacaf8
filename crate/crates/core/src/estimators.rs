//! 2DU and 3DFF CNN estimators: input assembly, instancing over antennas,
//! training and inference.

use std::time::{Duration, Instant};

use cebench_nn::{build_2du, build_3dff, AdamWConfig, Graph, Model, ModelSpec, OptimState, Tensor};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::ChannelTensor;
use crate::classical::LsGrid;
use crate::grid::GridDims;
use crate::{Error, Result};

/// Which axes a network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// One `[2, n_sc, n_symb]` slice per Rx/Tx pair.
    Pair2d,
    /// One `[2, n_rx, n_sc, n_symb]` slab per Tx.
    Slab3d,
}

impl Architecture {
    pub fn of(spec: &ModelSpec) -> Result<Self> {
        if spec.input_channels() != 2 || spec.output_channels() != 2 {
            return Err(Error::Invalid(format!(
                "estimator networks map 2 channels (Re, Im) to 2, this one maps {} to {}",
                spec.input_channels(),
                spec.output_channels()
            )));
        }
        match spec.spatial_rank() {
            2 => Ok(Architecture::Pair2d),
            3 => Ok(Architecture::Slab3d),
            r => Err(Error::Invalid(format!("estimator networks are 2D or 3D, got rank {r}"))),
        }
    }

    /// Spatial extents of one network input for `dims`.
    pub fn extent(self, dims: &GridDims) -> Vec<usize> {
        match self {
            Architecture::Pair2d => vec![dims.n_sc, dims.n_symb],
            Architecture::Slab3d => vec![dims.n_rx, dims.n_sc, dims.n_symb],
        }
    }

    /// Network invocations per subframe.
    pub fn invocations(self, dims: &GridDims) -> usize {
        match self {
            Architecture::Pair2d => dims.n_rx * dims.n_tx,
            Architecture::Slab3d => dims.n_tx,
        }
    }
}

/// The two estimator networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    U2d,
    Ff3d,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::U2d => "2du",
            NetKind::Ff3d => "3dff",
        }
    }

    pub fn spec(self) -> ModelSpec {
        match self {
            NetKind::U2d => build_2du(),
            NetKind::Ff3d => build_3dff(),
        }
    }
}

impl std::str::FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "2du" => Ok(NetKind::U2d),
            "3dff" => Ok(NetKind::Ff3d),
            _ => Err(Error::Invalid(format!("unknown network {s:?} (expected 2du or 3dff)"))),
        }
    }
}

/// `1 / RMS` of the given pilot values, or 1 when they are all zero.
fn normalizer<'a>(values: impl Iterator<Item = &'a Complex64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v.norm_sqr(), n + 1));
    let rms = (sum / n.max(1) as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        1.0 / rms
    } else {
        1.0
    }
}

fn check_pair(d: &GridDims, rx: usize, tx: usize) -> Result<()> {
    if rx >= d.n_rx || tx >= d.n_tx {
        return Err(Error::Invalid(format!(
            "antenna pair (rx {rx}, tx {tx}) outside {}x{} MIMO",
            d.n_rx, d.n_tx
        )));
    }
    Ok(())
}

/// Network input for one pair and the scale applied to it.
pub fn assemble_2d_input(ls: &LsGrid, rx: usize, tx: usize) -> Result<(Tensor<f32>, f64)> {
    let d = ls.dims();
    check_pair(&d, rx, tx)?;
    let pilots = ls.pilots(rx, tx);
    if pilots.is_empty() {
        return Err(Error::Estimation(format!("no pilots for Rx {rx} / Tx {tx}")));
    }
    let scale = normalizer(pilots.iter().map(|p| &p.2));
    let plane = d.n_sc * d.n_symb;
    let mut data = vec![0.0f32; 2 * plane];
    for (f, s, v) in pilots {
        let i = f * d.n_symb + s;
        data[i] = (v.re * scale) as f32;
        data[plane + i] = (v.im * scale) as f32;
    }
    Ok((Tensor::new(vec![2, d.n_sc, d.n_symb], data)?, scale))
}

/// Network input for all Rx of one Tx, `[2, n_rx, n_sc, n_symb]`, and its shared scale.
pub fn assemble_3d_input(ls: &LsGrid, tx: usize) -> Result<(Tensor<f32>, f64)> {
    let d = ls.dims();
    check_pair(&d, 0, tx)?;
    let pilots: Vec<Vec<(usize, usize, Complex64)>> = (0..d.n_rx).map(|r| ls.pilots(r, tx)).collect();
    if pilots.iter().all(Vec::is_empty) {
        return Err(Error::Estimation(format!("no pilots for Tx {tx}")));
    }
    let scale = normalizer(pilots.iter().flatten().map(|p| &p.2));
    let vol = d.n_rx * d.n_sc * d.n_symb;
    let mut data = vec![0.0f32; 2 * vol];
    for (r, list) in pilots.into_iter().enumerate() {
        for (f, s, v) in list {
            let i = (r * d.n_sc + f) * d.n_symb + s;
            data[i] = (v.re * scale) as f32;
            data[vol + i] = (v.im * scale) as f32;
        }
    }
    Ok((Tensor::new(vec![2, d.n_rx, d.n_sc, d.n_symb], data)?, scale))
}

/// Scaled Re/Im planes of `h` for one pair.
pub fn target_2d(h: &ChannelTensor, rx: usize, tx: usize, scale: f64) -> Result<Tensor<f32>> {
    let d = h.dims;
    check_pair(&d, rx, tx)?;
    let plane = d.n_sc * d.n_symb;
    let mut data = vec![0.0f32; 2 * plane];
    for f in 0..d.n_sc {
        for s in 0..d.n_symb {
            let v = h.get(f, s, rx, tx) * scale;
            data[f * d.n_symb + s] = v.re as f32;
            data[plane + f * d.n_symb + s] = v.im as f32;
        }
    }
    Ok(Tensor::new(vec![2, d.n_sc, d.n_symb], data)?)
}

/// Scaled Re/Im volumes of `h` for one Tx.
pub fn target_3d(h: &ChannelTensor, tx: usize, scale: f64) -> Result<Tensor<f32>> {
    let d = h.dims;
    check_pair(&d, 0, tx)?;
    let vol = d.n_rx * d.n_sc * d.n_symb;
    let mut data = vec![0.0f32; 2 * vol];
    for r in 0..d.n_rx {
        for f in 0..d.n_sc {
            for s in 0..d.n_symb {
                let v = h.get(f, s, r, tx) * scale;
                let i = (r * d.n_sc + f) * d.n_symb + s;
                data[i] = v.re as f32;
                data[vol + i] = v.im as f32;
            }
        }
    }
    Ok(Tensor::new(vec![2, d.n_rx, d.n_sc, d.n_symb], data)?)
}

/// One input/target pair in network units.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

/// Training examples from one subframe: a slice per pair or a slab per Tx.
pub fn examples(arch: Architecture, ls: &LsGrid, h: &ChannelTensor) -> Result<Vec<Example>> {
    let d = ls.dims();
    if h.dims != d {
        return Err(Error::Shape(format!("LS grid is {d}, target is {}", h.dims)));
    }
    let mut out = Vec::with_capacity(arch.invocations(&d));
    match arch {
        Architecture::Pair2d => {
            for r in 0..d.n_rx {
                for t in 0..d.n_tx {
                    let (input, scale) = assemble_2d_input(ls, r, t)?;
                    out.push(Example {
                        input,
                        target: target_2d(h, r, t, scale)?,
                    });
                }
            }
        }
        Architecture::Slab3d => {
            for t in 0..d.n_tx {
                let (input, scale) = assemble_3d_input(ls, t)?;
                out.push(Example {
                    input,
                    target: target_3d(h, t, scale)?,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub h_hat: ChannelTensor,
    /// Filled in by [`EstimateResult::score`].
    pub nmse_db: Option<f64>,
    pub elapsed: Duration,
    /// Network forward passes used.
    pub invocations: usize,
}

impl EstimateResult {
    /// Records the NMSE against the true channel.
    pub fn score(mut self, h: &ChannelTensor) -> Result<Self> {
        self.nmse_db = Some(crate::bench::nmse(h, &self.h_hat)?);
        Ok(self)
    }
}

/// A trained network plus the antenna instancing it implies.
#[derive(Debug, Clone)]
pub struct CnnEstimator {
    pub arch: Architecture,
    pub model: Model<f32>,
}

impl CnnEstimator {
    pub fn new(model: Model<f32>) -> Result<Self> {
        Ok(CnnEstimator {
            arch: Architecture::of(model.spec())?,
            model,
        })
    }

    fn check_extent(&self, d: &GridDims) -> Result<()> {
        let want = self.arch.extent(d);
        let trained = &self.model.trained_extent;
        if !trained.is_empty() && *trained != want {
            return Err(Error::Shape(match self.arch {
                Architecture::Pair2d => format!(
                    "network trained on {}x{} grids cannot estimate a {}x{} grid",
                    trained[0], trained[1], d.n_sc, d.n_symb
                ),
                Architecture::Slab3d => format!(
                    "network trained on {} Rx x {}x{} slabs cannot estimate {} Rx x {}x{}",
                    trained[0], trained[1], trained[2], d.n_rx, d.n_sc, d.n_symb
                ),
            }));
        }
        Ok(())
    }

    /// Full-grid estimate: `N_R·N_T` passes for a 2D network, `N_T` for a 3D one.
    pub fn estimate(&self, ls: &LsGrid) -> Result<EstimateResult> {
        let start = Instant::now();
        let d = ls.dims();
        self.check_extent(&d)?;
        let mut h = ChannelTensor::zeros(d);
        let mut invocations = 0;
        match self.arch {
            Architecture::Pair2d => {
                let plane = d.n_sc * d.n_symb;
                for r in 0..d.n_rx {
                    for t in 0..d.n_tx {
                        let (x, scale) = assemble_2d_input(ls, r, t)?;
                        let y = self.model.infer(&x)?;
                        invocations += 1;
                        let y = y.data();
                        for f in 0..d.n_sc {
                            for s in 0..d.n_symb {
                                let i = f * d.n_symb + s;
                                let v = Complex64::new(y[i] as f64, y[plane + i] as f64) / scale;
                                h.set(f, s, r, t, v);
                            }
                        }
                    }
                }
            }
            Architecture::Slab3d => {
                let vol = d.n_rx * d.n_sc * d.n_symb;
                for t in 0..d.n_tx {
                    let (x, scale) = assemble_3d_input(ls, t)?;
                    let y = self.model.infer(&x)?;
                    invocations += 1;
                    let y = y.data();
                    for r in 0..d.n_rx {
                        for f in 0..d.n_sc {
                            for s in 0..d.n_symb {
                                let i = (r * d.n_sc + f) * d.n_symb + s;
                                let v = Complex64::new(y[i] as f64, y[vol + i] as f64) / scale;
                                h.set(f, s, r, t, v);
                            }
                        }
                    }
                }
            }
        }
        if !h.is_finite() {
            return Err(Error::Estimation("network produced non-finite output".into()));
        }
        Ok(EstimateResult {
            h_hat: h,
            nmse_db: None,
            elapsed: start.elapsed(),
            invocations,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine-anneal the step size from `lr` to this value over all steps; constant when `None`.
    pub lr_min: Option<f64>,
    /// L2 weight on the convolution weights (biases excluded).
    pub lambda: f64,
    /// Decoupled AdamW decay, separate from `lambda`.
    pub weight_decay: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub datasets: Vec<std::path::PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            lr_min: None,
            lambda: 1e-4,
            weight_decay: 0.0,
            seed: 0,
            val_fraction: 0.1,
            datasets: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        if !(self.lr > 0.0) || !(self.lambda >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be positive, lambda and weight_decay non-negative".into()));
        }
        if let Some(m) = self.lr_min {
            if !(0.0..=self.lr).contains(&m) {
                return Err(Error::Config(format!("lr_min must be in [0, lr], got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean of the per-batch objective, `mean ‖H − Ĥ‖² + λ‖W‖²`.
    pub train_loss: f64,
    /// Mean `‖H − Ĥ‖²` over the validation split, NaN when it is empty.
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    /// Validation loss of the initial parameters.
    pub initial_val_loss: f64,
    pub history: Vec<EpochLoss>,
}

impl TrainOutcome {
    /// `epoch,train_loss,val_loss` rows with a header.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.history {
            s.push_str(&format!("{},{:e},{:e}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }
}

/// Mean data loss of `model` over `set`.
pub fn mean_loss(model: &Model<f32>, set: &[&Example]) -> Result<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for ex in set {
        let y = model.infer(&ex.input)?;
        if y.shape() != ex.target.shape() {
            return Err(Error::Shape(format!("output {:?} vs target {:?}", y.shape(), ex.target.shape())));
        }
        total += y
            .data()
            .iter()
            .zip(ex.target.data())
            .map(|(&a, &b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum::<f64>();
    }
    Ok(total / set.len() as f64)
}

/// Mini-batch AdamW on `mean ‖H − Ĥ‖² + λ‖W‖²`, starting from `init`.
///
/// Examples are split once into train/validation by a seeded shuffle, and
/// the training part is reshuffled every epoch from the same seed stream.
pub fn train_from(init: Model<f32>, examples: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut model = init;
    let extent = examples[0].input.spatial().to_vec();
    if let Some(bad) = examples.iter().find(|e| e.input.spatial() != extent.as_slice()) {
        return Err(Error::Shape(format!(
            "mixed example extents {:?} and {:?}",
            extent,
            bad.input.spatial()
        )));
    }
    model.trained_extent = extent;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((examples.len() as f64) * cfg.val_fraction).floor() as usize;
    let n_val = n_val.min(examples.len() - 1);
    let val: Vec<&Example> = order[..n_val].iter().map(|&i| &examples[i]).collect();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();

    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut opt = OptimState::<f32>::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &sizes,
    );
    let mut grads: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let total_steps = cfg.epochs * train_idx.len().div_ceil(cfg.batch_size);
    let mut step = 0usize;
    let initial_val_loss = mean_loss(&model, &val)?;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut objective = 0.0;
        let mut batches = 0usize;
        for (b, batch) in train_idx.chunks(cfg.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let inv = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &examples[i];
                let mut g = Graph::new();
                let params = model.param_vars(&mut g);
                let x = g.leaf(ex.input.clone());
                let y = model.forward(&mut g, &params, x)?;
                let target = g.leaf(ex.target.clone());
                let loss = g.mse_l2_loss(y, target, &params.weights, cfg.lambda)?;
                let value = g.value(loss).data()[0] as f64;
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        detail: format!("loss is {value} on example {i}"),
                        last_good: Box::new(model),
                    });
                }
                batch_loss += value;
                g.backward(loss)?;
                for (k, (&w, &bias)) in params.weights.iter().zip(&params.biases).enumerate() {
                    for (slot, var) in [(2 * k, w), (2 * k + 1, bias)] {
                        if let Some(gr) = g.grad(var) {
                            for (acc, &v) in grads[slot].iter_mut().zip(gr) {
                                *acc += v * inv;
                            }
                        }
                    }
                }
            }
            if let Some(lr_min) = cfg.lr_min {
                let progress = step as f64 / total_steps.max(1) as f64;
                opt.config.lr = lr_min + 0.5 * (cfg.lr - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos());
            }
            step += 1;
            let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            // A rejected step leaves the parameters untouched.
            let stepped = opt.step(&mut model.params_mut(), &grad_refs);
            if let Err(e) = stepped {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: e.to_string(),
                    last_good: Box::new(model),
                });
            }
            objective += batch_loss / batch.len() as f64;
            batches += 1;
        }
        let val_loss = mean_loss(&model, &val)?;
        history.push(EpochLoss {
            epoch,
            train_loss: objective / batches as f64,
            val_loss,
        });
    }
    Ok(TrainOutcome {
        model,
        initial_val_loss,
        history,
    })
}

/// Trains a freshly initialized `spec` (seeded from `cfg.seed`).
pub fn train(spec: ModelSpec, examples: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    Architecture::of(&spec)?;
    let init = Model::init(spec, cfg.seed)?;
    train_from(init, examples, cfg)
}
