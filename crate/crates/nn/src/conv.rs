//! "Same"-padded convolution over 1, 2 or 3 spatial axes.
//!
//! Both directions lower to GEMM through an im2col buffer. Lower-rank
//! convolutions are embedded in the 3-axis code path with trailing unit
//! extents, so 2D and 3D share one kernel.

use crate::tensor::{Scalar, Tensor};
use crate::NnError;

/// Spatial geometry of a convolution, padded out to three axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub extent: [usize; 3],
    pub kernel: [usize; 3],
}

impl ConvGeometry {
    /// Builds the geometry for an input of shape `[C, ...spatial]` and a
    /// weight of shape `[out, in, ...kernel]`.
    pub fn new(input_shape: &[usize], weight_shape: &[usize]) -> Result<Self, NnError> {
        let rank = input_shape.len().saturating_sub(1);
        if !(1..=3).contains(&rank) {
            return Err(NnError::Shape(format!(
                "convolution input must have 1 to 3 spatial axes, got shape {input_shape:?}"
            )));
        }
        if weight_shape.len() != rank + 2 {
            return Err(NnError::Shape(format!(
                "weight shape {weight_shape:?} does not match input rank {rank}"
            )));
        }
        if weight_shape[1] != input_shape[0] {
            return Err(NnError::ChannelMismatch {
                expected: weight_shape[1],
                got: input_shape[0],
            });
        }
        // lower ranks sit on the trailing axes so the last axis stays contiguous
        let mut extent = [1; 3];
        let mut kernel = [1; 3];
        for i in 0..rank {
            let a = 3 - rank + i;
            extent[a] = input_shape[i + 1];
            kernel[a] = weight_shape[i + 2];
            if extent[a] == 0 {
                return Err(NnError::Shape(format!("empty spatial axis in {input_shape:?}")));
            }
            if kernel[a] % 2 == 0 {
                return Err(NnError::Shape(format!(
                    "same padding needs odd kernel extents, got {weight_shape:?}"
                )));
            }
        }
        Ok(Self {
            in_channels: input_shape[0],
            out_channels: weight_shape[0],
            extent,
            kernel,
        })
    }

    pub fn positions(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the im2col matrix: one per (input channel, kernel tap).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_volume()
    }
}

/// Linear offset of a kernel tap relative to the output position, and the
/// valid output range along each axis for that tap.
struct Tap {
    offset: isize,
    lo: [usize; 3],
    hi: [usize; 3],
}

impl Tap {
    fn new(g: &ConvGeometry, d: [usize; 3]) -> Self {
        let e = g.extent;
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        let mut offset = 0isize;
        for a in 0..3 {
            let pad = g.kernel[a] / 2;
            // output index i reads input i + d - pad
            lo[a] = pad.saturating_sub(d[a]).min(e[a]);
            hi[a] = (e[a] + pad).saturating_sub(d[a]).min(e[a]).max(lo[a]);
            let stride: usize = e[a + 1..].iter().product();
            offset += (d[a] as isize - pad as isize) * stride as isize;
        }
        Self { offset, lo, hi }
    }

    /// Zeroes every entry of `row` (covering output planes `a0..a1`) whose
    /// output position reads padding.
    fn zero_invalid<T: Scalar>(&self, e: [usize; 3], a0: usize, a1: usize, row: &mut [T]) {
        let plane = e[1] * e[2];
        let (lo_b, hi_b) = (self.lo[1], self.hi[1]);
        let (lo_c, hi_c) = (self.lo[2], self.hi[2]);
        let z = T::zero();
        for a in a0..a1 {
            let pa = &mut row[(a - a0) * plane..(a - a0 + 1) * plane];
            if a < self.lo[0] || a >= self.hi[0] {
                pa.fill(z);
                continue;
            }
            pa[..lo_b * e[2]].fill(z);
            pa[hi_b * e[2]..].fill(z);
            if lo_c == 0 && hi_c == e[2] {
                continue;
            }
            for b in lo_b..hi_b {
                let rb = &mut pa[b * e[2]..(b + 1) * e[2]];
                for v in &mut rb[..lo_c] {
                    *v = z;
                }
                for v in &mut rb[hi_c..] {
                    *v = z;
                }
            }
        }
    }

    /// Output positions within `[p0, p1)` whose shifted source index is in
    /// bounds for a volume of `n` positions.
    fn span(&self, n: usize, p0: usize, p1: usize) -> (usize, usize) {
        let start = ((-self.offset).max(0) as usize).max(p0);
        let end = ((n as isize - self.offset).clamp(0, n as isize) as usize).clamp(p0, p1);
        (start.min(end), end)
    }
}

fn taps(g: &ConvGeometry) -> Vec<Tap> {
    let mut v = Vec::with_capacity(g.kernel_volume());
    for da in 0..g.kernel[0] {
        for db in 0..g.kernel[1] {
            for dc in 0..g.kernel[2] {
                v.push(Tap::new(g, [da, db, dc]));
            }
        }
    }
    v
}

/// Fills `cols` (`patch_len × block`, row-major) with the patches of output
/// planes `a0..a1`.
fn im2col<T: Scalar>(g: &ConvGeometry, taps: &[Tap], input: &[T], a0: usize, a1: usize, cols: &mut [T]) {
    let npos = g.positions();
    let plane = npos / g.extent[0];
    let (p0, p1) = (a0 * plane, a1 * plane);
    let width = p1 - p0;
    let mut row = 0;
    for ci in 0..g.in_channels {
        let src = &input[ci * npos..(ci + 1) * npos];
        for tap in taps {
            let dst = &mut cols[row * width..(row + 1) * width];
            row += 1;
            let (start, end) = tap.span(npos, p0, p1);
            dst[..start - p0].fill(T::zero());
            dst[end - p0..].fill(T::zero());
            if start < end {
                let s0 = (start as isize + tap.offset) as usize;
                dst[start - p0..end - p0].copy_from_slice(&src[s0..s0 + (end - start)]);
            }
            tap.zero_invalid(g.extent, a0, a1, dst);
        }
    }
}

/// Scatter-adds a block of patch gradients back into `grad_input`; adjoint
/// of [`im2col`]. `cols` is used as scratch and is clobbered.
fn col2im<T: Scalar>(
    g: &ConvGeometry,
    taps: &[Tap],
    cols: &mut [T],
    a0: usize,
    a1: usize,
    grad_input: &mut [T],
) {
    let npos = g.positions();
    let plane = npos / g.extent[0];
    let (p0, p1) = (a0 * plane, a1 * plane);
    let width = p1 - p0;
    let mut row = 0;
    for ci in 0..g.in_channels {
        let dst = &mut grad_input[ci * npos..(ci + 1) * npos];
        for tap in taps {
            let src = &mut cols[row * width..(row + 1) * width];
            row += 1;
            tap.zero_invalid(g.extent, a0, a1, src);
            let (start, end) = tap.span(npos, p0, p1);
            if start == end {
                continue;
            }
            let d0 = (start as isize + tap.offset) as usize;
            for (d, &v) in dst[d0..d0 + (end - start)]
                .iter_mut()
                .zip(&src[start - p0..end - p0])
            {
                *d = *d + v;
            }
        }
    }
}

/// Patch-matrix budget per block, in elements; keeps the buffer in L2.
const BLOCK_ELEMS: usize = 1 << 20;

/// Splits the leading axis into blocks whose patch matrix fits the budget.
fn blocks(g: &ConvGeometry) -> impl Iterator<Item = (usize, usize)> {
    let plane = g.positions() / g.extent[0];
    let per_plane = g.patch_len() * plane;
    let step = (BLOCK_ELEMS / per_plane.max(1)).max(1);
    let n = g.extent[0];
    (0..n).step_by(step).map(move |a0| (a0, (a0 + step).min(n)))
}

/// Forward convolution. `weight` is `[out, in, ...kernel]`, `bias` is `[out]`.
pub fn conv_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let g = ConvGeometry::new(input.shape(), weight.shape())?;
    if bias.numel() != g.out_channels {
        return Err(NnError::Shape(format!(
            "bias has {} entries for {} output channels",
            bias.numel(),
            g.out_channels
        )));
    }
    let npos = g.positions();
    let k = g.patch_len();
    let mut out = vec![T::zero(); g.out_channels * npos];
    for (co, &b) in bias.data().iter().enumerate() {
        out[co * npos..(co + 1) * npos].fill(b);
    }
    if g.kernel_volume() == 1 {
        // 1×1 kernel: the input itself is the patch matrix
        unsafe {
            gemm(g.out_channels, k, npos, weight.data().as_ptr(), (k, 1), input.data().as_ptr(), (npos, 1), T::one(), out.as_mut_ptr(), npos);
        }
    } else {
        let taps = taps(&g);
        let plane = npos / g.extent[0];
        let mut cols = Vec::new();
        for (a0, a1) in blocks(&g) {
            let width = (a1 - a0) * plane;
            cols.resize(k * width, T::zero());
            im2col(&g, &taps, input.data(), a0, a1, &mut cols);
            unsafe {
                gemm(g.out_channels, k, width, weight.data().as_ptr(), (k, 1), cols.as_ptr(), (width, 1), T::one(), out.as_mut_ptr().add(a0 * plane), npos);
            }
        }
    }
    let mut shape = vec![g.out_channels];
    shape.extend_from_slice(input.spatial());
    Tensor::new(shape, out)
}

/// Gradients of a convolution with respect to its input, weight and bias.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward convolution given the upstream gradient of the output.
pub fn conv_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    let g = ConvGeometry::new(input.shape(), weight.shape())?;
    let npos = g.positions();
    let k = g.patch_len();
    if grad_out.numel() != g.out_channels * npos {
        return Err(NnError::Shape(format!(
            "upstream gradient shape {:?} does not match convolution output",
            grad_out.shape()
        )));
    }
    let go = grad_out.data();

    let bias_grad: Vec<T> = go
        .chunks_exact(npos)
        .map(|row| row.iter().fold(T::zero(), |a, &v| a + v))
        .collect();

    let mut grad_w = vec![T::zero(); g.out_channels * k];
    let mut grad_in = vec![T::zero(); input.numel()];
    let plane = npos / g.extent[0];
    let taps = taps(&g);
    let mut cols = Vec::new();
    for (a0, a1) in blocks(&g) {
        let width = (a1 - a0) * plane;
        let p0 = a0 * plane;
        cols.resize(k * width, T::zero());
        if g.kernel_volume() == 1 {
            for ci in 0..k {
                cols[ci * width..(ci + 1) * width].copy_from_slice(&input.data()[ci * npos + p0..ci * npos + p0 + width]);
            }
        } else {
            im2col(&g, &taps, input.data(), a0, a1, &mut cols);
        }
        unsafe {
            // dW += dY_block · colsᵀ
            gemm(g.out_channels, width, k, go.as_ptr().add(p0), (npos, 1), cols.as_ptr(), (1, width), T::one(), grad_w.as_mut_ptr(), k);
            // dcols = Wᵀ · dY_block
            gemm(k, g.out_channels, width, weight.data().as_ptr(), (1, k), go.as_ptr().add(p0), (npos, 1), T::zero(), cols.as_mut_ptr(), width);
        }
        col2im(&g, &taps, &mut cols, a0, a1, &mut grad_in);
    }

    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), grad_in)?,
        weight: Tensor::new(weight.shape().to_vec(), grad_w)?,
        bias: Tensor::new(vec![g.out_channels], bias_grad)?,
    })
}

/// `c = a·b + beta·c` for an m×k `a` and k×n `b` given as (row, column)
/// strides; `c` is row-major with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: *const T,
    a_strides: (usize, usize),
    b: *const T,
    b_strides: (usize, usize),
    beta: T,
    c: *mut T,
    ldc: usize,
) {
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        a_strides.0 as isize,
        a_strides.1 as isize,
        b,
        b_strides.0 as isize,
        b_strides.1 as isize,
        beta,
        c,
        ldc as isize,
        1,
    );
}
