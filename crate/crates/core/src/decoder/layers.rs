//! Building blocks of the decoder on single images stored as
//! `(channels, height·width)` arrays.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};

/// One output sample of a 1-D linear interpolation: `w0·in[i0] + w1·in[i1]`.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

/// Interpolation taps for ×2 bilinear upsampling with half-pixel centres
/// (`align_corners = false`).
fn upsample_taps(len: usize) -> Vec<Tap> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let w1 = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - w1,
                w1,
            }
        })
        .collect()
}

/// Separable ×2 bilinear upsampling and its adjoint.
#[derive(Debug, Clone)]
pub struct Upsample2x {
    height: usize,
    width: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl Upsample2x {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rows: upsample_taps(height),
            cols: upsample_taps(width),
        }
    }

    pub fn out_height(&self) -> usize {
        2 * self.height
    }

    pub fn out_width(&self) -> usize {
        2 * self.width
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((0, 0));
        self.forward_into(input, &mut out);
        out
    }

    /// [`Upsample2x::forward`] into a reusable buffer.
    pub fn forward_into(&self, input: ArrayView2<f64>, out: &mut Array2<f64>) {
        let (h, w) = (self.height, self.width);
        let (oh, ow) = (2 * h, 2 * w);
        ensure_shape(out, (input.nrows(), oh * ow));
        let mut tmp = vec![0.0; h * ow];
        for (src, mut dst) in input.outer_iter().zip(out.outer_iter_mut()) {
            let src = src.as_slice().expect("contiguous");
            let dst = dst.as_slice_mut().expect("contiguous");
            for r in 0..h {
                let row = &src[r * w..(r + 1) * w];
                let trow = &mut tmp[r * ow..(r + 1) * ow];
                for (t, tap) in trow.iter_mut().zip(&self.cols) {
                    *t = tap.w0 * row[tap.i0] + tap.w1 * row[tap.i1];
                }
            }
            for (orow, tap) in dst.chunks_exact_mut(ow).zip(&self.rows) {
                let a = &tmp[tap.i0 * ow..(tap.i0 + 1) * ow];
                let b = &tmp[tap.i1 * ow..(tap.i1 + 1) * ow];
                for ((o, &x), &y) in orow.iter_mut().zip(a).zip(b) {
                    *o = tap.w0 * x + tap.w1 * y;
                }
            }
        }
    }

    /// Transpose of [`Upsample2x::forward`].
    pub fn adjoint(&self, grad: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((0, 0));
        self.adjoint_into(grad, &mut out);
        out
    }

    /// [`Upsample2x::adjoint`] into a reusable buffer.
    pub fn adjoint_into(&self, grad: ArrayView2<f64>, out: &mut Array2<f64>) {
        let (h, w) = (self.height, self.width);
        let ow = 2 * w;
        ensure_shape(out, (grad.nrows(), h * w));
        out.fill(0.0);
        let mut tmp = vec![0.0; h * ow];
        for (src, mut dst) in grad.outer_iter().zip(out.outer_iter_mut()) {
            let src = src.as_slice().expect("contiguous");
            let dst = dst.as_slice_mut().expect("contiguous");
            tmp.iter_mut().for_each(|v| *v = 0.0);
            for (grow, tap) in src.chunks_exact(ow).zip(&self.rows) {
                for (k, &g) in grow.iter().enumerate() {
                    tmp[tap.i0 * ow + k] += tap.w0 * g;
                    tmp[tap.i1 * ow + k] += tap.w1 * g;
                }
            }
            for r in 0..h {
                let trow = &tmp[r * ow..(r + 1) * ow];
                let drow = &mut dst[r * w..(r + 1) * w];
                for (&g, tap) in trow.iter().zip(&self.cols) {
                    drow[tap.i0] += tap.w0 * g;
                    drow[tap.i1] += tap.w1 * g;
                }
            }
        }
    }
}

/// Square `k×k` convolution with zero "same" padding, stride 1, odd `k`.
///
/// `weight` is `(out_channels, in_channels·k·k)` with the input channel as
/// the slowest index, matching the rows of the im2col matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub kernel: usize,
}

/// Gradients of a [`Conv2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / (self.kernel * self.kernel)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// im2col matrix of `input` (`(cin·k·k, h·w)`); for `k = 1` this is the input.
    pub fn columns(&self, input: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
        let mut cols = Array2::zeros((0, 0));
        self.columns_into(input, h, w, false, &mut cols);
        cols
    }

    /// im2col into a reusable buffer, optionally applying a ReLU to the input.
    pub fn columns_into(&self, input: ArrayView2<f64>, h: usize, w: usize, relu: bool, cols: &mut Array2<f64>) {
        let k = self.kernel;
        let cin = input.nrows();
        ensure_shape(cols, (cin * k * k, h * w));
        let act = |v: f64| if relu { v.max(0.0) } else { v };
        if k == 1 {
            ndarray::Zip::from(cols).and(input).for_each(|c, &v| *c = act(v));
            return;
        }
        cols.fill(0.0);
        let pad = (k / 2) as isize;
        for c in 0..cin {
            let src = input.row(c);
            let src = src.as_slice().expect("contiguous");
            for di in 0..k {
                for dj in 0..k {
                    let mut row = cols.row_mut((c * k + di) * k + dj);
                    let dst = row.as_slice_mut().expect("contiguous");
                    let oi = di as isize - pad;
                    let oj = dj as isize - pad;
                    for r in 0..h {
                        let sr = r as isize + oi;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        let sr = sr as usize;
                        let j_lo = (-oj).max(0) as usize;
                        let j_hi = ((w as isize) - oj).min(w as isize) as usize;
                        if j_lo >= j_hi {
                            continue;
                        }
                        let s0 = ((sr * w) as isize + j_lo as isize + oj) as usize;
                        for (d, &v) in dst[r * w + j_lo..r * w + j_hi].iter_mut().zip(&src[s0..s0 + (j_hi - j_lo)]) {
                            *d = act(v);
                        }
                    }
                }
            }
        }
    }

    /// Scatters an im2col-shaped gradient back onto the input layout.
    fn fold_columns_into(&self, dcols: ArrayView2<f64>, cin: usize, h: usize, w: usize, out: &mut Array2<f64>) {
        let k = self.kernel;
        ensure_shape(out, (cin, h * w));
        if k == 1 {
            out.assign(&dcols);
            return;
        }
        out.fill(0.0);
        let pad = (k / 2) as isize;
        for c in 0..cin {
            let mut orow = out.row_mut(c);
            let dst = orow.as_slice_mut().expect("contiguous");
            for di in 0..k {
                for dj in 0..k {
                    let row = dcols.row((c * k + di) * k + dj);
                    let src = row.as_slice().expect("contiguous");
                    let oi = di as isize - pad;
                    let oj = dj as isize - pad;
                    for r in 0..h {
                        let sr = r as isize + oi;
                        if sr < 0 || sr >= h as isize {
                            continue;
                        }
                        let sr = sr as usize;
                        let j_lo = (-oj).max(0) as usize;
                        let j_hi = ((w as isize) - oj).min(w as isize) as usize;
                        if j_lo >= j_hi {
                            continue;
                        }
                        let s0 = ((sr * w) as isize + j_lo as isize + oj) as usize;
                        let len = j_hi - j_lo;
                        for (d, &g) in dst[s0..s0 + len].iter_mut().zip(&src[r * w + j_lo..r * w + j_hi]) {
                            *d += g;
                        }
                    }
                }
            }
        }
    }

    /// Output from precomputed columns.
    pub fn forward_columns(&self, cols: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((0, 0));
        self.forward_columns_into(cols, &mut out);
        out
    }

    pub fn forward_columns_into(&self, cols: ArrayView2<f64>, out: &mut Array2<f64>) {
        ensure_shape(out, (self.out_channels(), cols.ncols()));
        for (mut row, &b) in out.outer_iter_mut().zip(self.bias.iter()) {
            row.fill(b);
        }
        general_mat_mul(1.0, &self.weight, &cols, 1.0, out);
    }

    /// Parameter gradients, and the input gradient when `need_input` is set.
    pub fn backward(
        &self,
        cols: ArrayView2<f64>,
        grad_out: ArrayView2<f64>,
        h: usize,
        w: usize,
        need_input: bool,
    ) -> (ConvGrad, Option<Array2<f64>>) {
        let mut grad = ConvGrad {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        };
        let gin = need_input.then(|| {
            let (mut dcols, mut din) = (Array2::zeros((0, 0)), Array2::zeros((0, 0)));
            self.backward_into(cols, grad_out, h, w, &mut grad, Some((&mut dcols, &mut din)));
            din
        });
        if !need_input {
            self.backward_into(cols, grad_out, h, w, &mut grad, None);
        }
        (grad, gin)
    }

    /// [`Conv2d::backward`] into reusable buffers; `input` holds scratch for
    /// the column gradient and receives the input gradient.
    pub fn backward_into(
        &self,
        cols: ArrayView2<f64>,
        grad_out: ArrayView2<f64>,
        h: usize,
        w: usize,
        grad: &mut ConvGrad,
        input: Option<(&mut Array2<f64>, &mut Array2<f64>)>,
    ) {
        ensure_shape(&mut grad.weight, self.weight.dim());
        general_mat_mul(1.0, &grad_out, &cols.t(), 0.0, &mut grad.weight);
        grad.bias = grad_out.sum_axis(Axis(1));
        if let Some((dcols, din)) = input {
            if self.kernel == 1 {
                ensure_shape(din, cols.dim());
                general_mat_mul(1.0, &self.weight.t(), &grad_out, 0.0, din);
            } else {
                ensure_shape(dcols, cols.dim());
                general_mat_mul(1.0, &self.weight.t(), &grad_out, 0.0, dcols);
                self.fold_columns_into(dcols.view(), self.in_channels(), h, w, din);
            }
        }
    }
}

/// Reallocates `buf` only when its shape differs.
pub(crate) fn ensure_shape(buf: &mut Array2<f64>, shape: (usize, usize)) {
    if buf.dim() != shape {
        *buf = Array2::zeros(shape);
    }
}
