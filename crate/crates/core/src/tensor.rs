//! Dense row-major `f64` tensors and the handful of kernels the layers are
//! built from.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::gemm::{gemm, View};

/// A dense row-major array of 64-bit floats with an explicit shape.
///
/// Every dimension is positive and the element count always equals the product
/// of the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(dim_err("tensor", format!("shape {shape:?} must have positive dimensions")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err(
                "tensor",
                format!("shape {shape:?} holds {expected} elements but {} were given", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// A tensor of zeros.
    ///
    /// Panics if any dimension is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && shape.iter().all(|&d| d > 0), "invalid shape {shape:?}");
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    /// A one-dimensional tensor. Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Self { shape: vec![data.len()], data }
    }

    /// Builds a `rows × cols` matrix from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err("from_rows", format!("ragged rows, expected width {cols}")));
        }
        Self::new(vec![rows.len(), cols], rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// A zero tensor with the same shape.
    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(dim_err("add_assign", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(dim_err(op, format!("expected shape {shape:?}, got {:?}", self.shape)));
        }
        Ok(())
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(dim_err(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

/// Matrix product of an `m×k` and a `k×n` tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(dim_err("matmul", format!("inner dimensions differ: {:?} × {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, View::row_major(a.data(), k), View::row_major(b.data(), n), 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Zero padding `(left, right)` that keeps a length-`T` signal at length `T`
/// under a width-`d` kernel. Even widths put the extra zero on the right.
pub fn same_padding(width: usize) -> (usize, usize) {
    let left = width / 2;
    (left, width - 1 - left)
}

/// Unfolds a `batch × channels × len` signal into the
/// `(channels·width) × (batch·len)` patch matrix whose row `c·width + k`,
/// column `b·len + t` holds `padded[b][c][t + k]`.
pub(crate) fn im2col(input: &[f64], batch: usize, channels: usize, len: usize, width: usize, cols: &mut Vec<f64>) {
    let (left, _) = same_padding(width);
    let row_len = batch * len;
    cols.clear();
    cols.resize(channels * width * row_len, 0.0);
    let t_range = |k: usize| (left.saturating_sub(k), (len + left).saturating_sub(k).min(len));
    for b in 0..batch {
        for c in 0..channels {
            let src = &input[(b * channels + c) * len..(b * channels + c + 1) * len];
            for k in 0..width {
                let row = (c * width + k) * row_len + b * len;
                // padded[t + k] = src[t + k - left] when that index is in range
                let (t_lo, t_hi) = t_range(k);
                if t_lo < t_hi {
                    let s_lo = t_lo + k - left;
                    cols[row + t_lo..row + t_hi].copy_from_slice(&src[s_lo..s_lo + (t_hi - t_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the signal.
pub(crate) fn col2im_add(cols: &[f64], batch: usize, channels: usize, len: usize, width: usize, grad_input: &mut [f64]) {
    let (left, _) = same_padding(width);
    let row_len = batch * len;
    for b in 0..batch {
        for c in 0..channels {
            let dst = &mut grad_input[(b * channels + c) * len..(b * channels + c + 1) * len];
            for k in 0..width {
                let row = (c * width + k) * row_len + b * len;
                let t_lo = left.saturating_sub(k);
                let t_hi = (len + left).saturating_sub(k).min(len);
                if t_lo < t_hi {
                    let s_lo = t_lo + k - left;
                    dst[s_lo..s_lo + (t_hi - t_lo)]
                        .iter_mut()
                        .zip(&cols[row + t_lo..row + t_hi])
                        .for_each(|(d, g)| *d += g);
                }
            }
        }
    }
}

/// Stride-1 "same" cross-correlation of a `batch × channels × len` block into
/// `out` (`batch × filters × len`). `cols` and `scratch` are reused buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_same_into(
    input: &[f64],
    batch: usize,
    channels: usize,
    len: usize,
    kernels: &[f64],
    filters: usize,
    width: usize,
    bias: &[f64],
    cols: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
    out: &mut [f64],
) {
    im2col(input, batch, channels, len, width, cols);
    let row_len = batch * len;
    scratch.clear();
    scratch.resize(filters * row_len, 0.0);
    gemm(
        filters,
        channels * width,
        row_len,
        View::row_major(kernels, channels * width),
        View::row_major(cols, row_len),
        0.0,
        scratch,
    );
    for b in 0..batch {
        for f in 0..filters {
            let src = &scratch[f * row_len + b * len..f * row_len + (b + 1) * len];
            let dst = &mut out[(b * filters + f) * len..(b * filters + f + 1) * len];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s + bias[f]);
        }
    }
}

/// "Same" 1-D cross-correlation: `out[f][t] = bias[f] + Σ_{c,k} kernels[f][c][k]·padded[c][t+k]`.
///
/// `input` is `C_in × T`, `kernels` is `C_out × C_in × d` and `bias` has
/// `C_out` entries. The input is zero padded by `⌊d/2⌋` on the left and
/// `d−1−⌊d/2⌋` on the right.
pub fn conv1d_same(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (channels, len) = dims2("conv1d_same", input)?;
    let (filters, k_channels, width) = match *kernels.shape() {
        [f, c, d] => (f, c, d),
        ref s => return Err(dim_err("conv1d_same", format!("kernels must be rank 3, got {s:?}"))),
    };
    if k_channels != channels {
        return Err(dim_err(
            "conv1d_same",
            format!("input {:?} has {channels} channels but kernels {:?} expect {k_channels}", input.shape(), kernels.shape()),
        ));
    }
    bias.expect_shape("conv1d_same", &[filters])?;
    let mut out = vec![0.0; filters * len];
    let mut cols = Vec::new();
    conv1d_same_into(input.data(), 1, channels, len, kernels.data(), filters, width, bias.data(), &mut cols, &mut Vec::new(), &mut out);
    Tensor::new(vec![filters, len], out)
}

/// Reinterprets a `1 × N` univariate series as `N` variables observed at a
/// single time step (`N × 1`), and back. Element order is preserved.
pub fn dimension_shuffle(series: &Tensor) -> Result<Tensor> {
    let (rows, cols) = dims2("dimension_shuffle", series)?;
    if rows != 1 && cols != 1 {
        return Err(dim_err("dimension_shuffle", format!("expected a 1×N or N×1 series, got {:?}", series.shape())));
    }
    Tensor::new(vec![cols, rows], series.data().to_vec())
}

/// Mean over the time axis of a `C × T` tensor.
pub fn reduce_mean_time(input: &Tensor) -> Result<Tensor> {
    let (channels, len) = match *input.shape() {
        [c, t] => (c, t),
        ref s => return Err(dim_err("reduce_mean_time", format!("expected C×T, got {s:?}"))),
    };
    if len == 0 {
        return Err(Error::Dimension { op: "reduce_mean_time", detail: "empty time axis".into() });
    }
    // Shifting by the first element keeps constant channels exact.
    let out = input
        .data()
        .chunks_exact(len)
        .map(|row| row[0] + row.iter().map(|x| x - row[0]).sum::<f64>() / len as f64)
        .collect::<Vec<_>>();
    debug_assert_eq!(out.len(), channels);
    Ok(Tensor::vector(out))
}
