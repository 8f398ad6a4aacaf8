//! Versioned binary model checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! "MCNN"  u16 version
//! u8 connectivity  u8 kernel rank  u16 layer count
//!   per layer: rank × u16 kernel extent, u16 in, u16 out, u8 activation
//! u16 skip count
//!   per skip:  u16 from, u16 to, u8 kind
//! u8 trained-extent rank, rank × u32 extent
//! u32 parameter count
//! f32 × count, per layer weights then bias
//! ```

use std::io::{Read, Write};

use crate::model::{Activation, Connectivity, ConvLayer, LayerSpec, Model, ModelSpec, Skip, SkipKind};
use crate::tensor::{Scalar, Tensor};
use crate::NnError;

pub const MAGIC: &[u8; 4] = b"MCNN";
pub const VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn u16_of(v: usize, what: &str) -> Result<u16, NnError> {
    u16::try_from(v).map_err(|_| bad(format!("{what} {v} does not fit the format")))
}

pub fn write_checkpoint<T: Scalar, W: Write>(model: &Model<T>, mut w: W) -> Result<(), NnError> {
    let spec = model.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match spec.connectivity {
        Connectivity::FeedForward => 0,
        Connectivity::UNet => 1,
        Connectivity::DenseNet => 2,
        Connectivity::ResNet => 3,
    });
    buf.push(spec.spatial_rank() as u8);
    buf.extend_from_slice(&u16_of(spec.layers.len(), "layer count")?.to_le_bytes());
    for l in &spec.layers {
        for &k in &l.kernel {
            buf.extend_from_slice(&u16_of(k, "kernel extent")?.to_le_bytes());
        }
        buf.extend_from_slice(&u16_of(l.in_channels, "channel count")?.to_le_bytes());
        buf.extend_from_slice(&u16_of(l.out_channels, "channel count")?.to_le_bytes());
        buf.push(match l.activation {
            Activation::None => 0,
            Activation::Gelu => 1,
        });
    }
    buf.extend_from_slice(&u16_of(spec.skips.len(), "skip count")?.to_le_bytes());
    for s in &spec.skips {
        buf.extend_from_slice(&u16_of(s.from, "skip index")?.to_le_bytes());
        buf.extend_from_slice(&u16_of(s.to, "skip index")?.to_le_bytes());
        buf.push(match s.kind {
            SkipKind::Concat => 0,
            SkipKind::Add => 1,
        });
    }
    buf.push(model.trained_extent.len() as u8);
    for &e in &model.trained_extent {
        let e = u32::try_from(e).map_err(|_| bad("trained extent too large"))?;
        buf.extend_from_slice(&e.to_le_bytes());
    }
    let count = u32::try_from(model.param_count()).map_err(|_| bad("too many parameters"))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for p in model.params() {
        for &v in p {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, NnError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Model<T>, NnError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let connectivity = match c.u8()? {
        0 => Connectivity::FeedForward,
        1 => Connectivity::UNet,
        2 => Connectivity::DenseNet,
        3 => Connectivity::ResNet,
        v => return Err(bad(format!("unknown connectivity {v}"))),
    };
    let rank = c.u8()? as usize;
    let n_layers = c.u16()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kernel = (0..rank).map(|_| c.u16().map(usize::from)).collect::<Result<Vec<_>, _>>()?;
        let in_channels = c.u16()? as usize;
        let out_channels = c.u16()? as usize;
        let activation = match c.u8()? {
            0 => Activation::None,
            1 => Activation::Gelu,
            v => return Err(bad(format!("unknown activation {v}"))),
        };
        layers.push(LayerSpec {
            kernel,
            in_channels,
            out_channels,
            activation,
        });
    }
    let n_skips = c.u16()? as usize;
    let mut skips = Vec::with_capacity(n_skips);
    for _ in 0..n_skips {
        let from = c.u16()? as usize;
        let to = c.u16()? as usize;
        let kind = match c.u8()? {
            0 => SkipKind::Concat,
            1 => SkipKind::Add,
            v => return Err(bad(format!("unknown skip kind {v}"))),
        };
        skips.push(Skip { from, to, kind });
    }
    let spec = ModelSpec {
        layers,
        connectivity,
        skips,
    };
    spec.validate()?;
    let n_ext = c.u8()? as usize;
    let trained_extent = (0..n_ext).map(|_| c.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
    let count = c.u32()? as usize;
    if count != spec.param_count() {
        return Err(bad(format!(
            "parameter count {count} does not match layer table ({})",
            spec.param_count()
        )));
    }
    let mut conv_layers = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        let w = (0..l.weight_count()).map(|_| c.f32().map(|v| T::from_f64(v as f64))).collect::<Result<Vec<_>, _>>()?;
        let b = (0..l.out_channels).map(|_| c.f32().map(|v| T::from_f64(v as f64))).collect::<Result<Vec<_>, _>>()?;
        conv_layers.push(ConvLayer {
            spec: l.clone(),
            weight: Tensor::new(l.weight_shape(), w)?,
            bias: Tensor::new(vec![l.out_channels], b)?,
        });
    }
    if c.pos != buf.len() {
        return Err(bad(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    let mut model = Model::from_layers(spec, conv_layers)?;
    model.trained_extent = trained_extent;
    Ok(model)
}
