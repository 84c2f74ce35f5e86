//! 4x4 / stride 2 / padding 1 convolution kernels via im2col + GEMM.
//!
//! All image tensors are NCHW. With this geometry a convolution exactly
//! halves the spatial size and a transposed convolution exactly doubles it.

use super::scalar::{gemm, MatRef};
use super::Scalar;

pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
const KK: usize = KERNEL * KERNEL;

/// Spatial size of a convolution output for input size `n`.
pub fn conv_out_size(n: usize) -> usize {
    (n + 2 * PADDING - KERNEL) / STRIDE + 1
}

/// Spatial geometry of the "large" side of a conv (its input).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Geom {
    fn out_h(&self) -> usize {
        conv_out_size(self.height)
    }
    fn out_w(&self) -> usize {
        conv_out_size(self.width)
    }
    fn cols(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }
    fn rows(&self) -> usize {
        self.channels * KK
    }
}

/// Unfolds `x` (geometry `g`) into a `[C*16, B*Ho*Wo]` patch matrix.
pub(crate) fn im2col<S: Scalar>(x: &[S], g: Geom) -> Vec<S> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = g.cols();
    let mut col = vec![S::zero(); g.rows() * ncols];
    for c in 0..g.channels {
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = (c * KK + ki * KERNEL + kj) * ncols;
                for b in 0..g.batch {
                    let plane = &x[(b * g.channels + c) * g.height * g.width..][..g.height * g.width];
                    for i in 0..oh {
                        let ih = (i * STRIDE + ki) as isize - PADDING as isize;
                        if ih < 0 || ih >= g.height as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * g.width..][..g.width];
                        let dst = &mut col[row + (b * oh + i) * ow..][..ow];
                        for (j, d) in dst.iter_mut().enumerate() {
                            let iw = (j * STRIDE + kj) as isize - PADDING as isize;
                            if iw >= 0 && iw < g.width as isize {
                                *d = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters-adds a patch matrix back onto an image.
pub(crate) fn col2im<S: Scalar>(col: &[S], g: Geom) -> Vec<S> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = g.cols();
    let mut x = vec![S::zero(); g.batch * g.channels * g.height * g.width];
    for c in 0..g.channels {
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = (c * KK + ki * KERNEL + kj) * ncols;
                for b in 0..g.batch {
                    let base = (b * g.channels + c) * g.height * g.width;
                    for i in 0..oh {
                        let ih = (i * STRIDE + ki) as isize - PADDING as isize;
                        if ih < 0 || ih >= g.height as isize {
                            continue;
                        }
                        let dst = &mut x[base + ih as usize * g.width..][..g.width];
                        let src = &col[row + (b * oh + i) * ow..][..ow];
                        for (j, &s) in src.iter().enumerate() {
                            let iw = (j * STRIDE + kj) as isize - PADDING as isize;
                            if iw >= 0 && iw < g.width as isize {
                                dst[iw as usize] = dst[iw as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[B, C, P]` -> `[C, B*P]`
pub(crate) fn batch_to_channel_major<S: Scalar>(x: &[S], batch: usize, channels: usize, plane: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(b * channels + c) * plane..][..plane];
            out[(c * batch + b) * plane..][..plane].copy_from_slice(src);
        }
    }
    out
}

/// `[C, B*P]` -> `[B, C, P]`
pub(crate) fn channel_to_batch_major<S: Scalar>(x: &[S], batch: usize, channels: usize, plane: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &x[(c * batch + b) * plane..][..plane];
            out[(b * channels + c) * plane..][..plane].copy_from_slice(src);
        }
    }
    out
}

pub(crate) struct ConvForward<S> {
    pub out: Vec<S>,
    pub col: Vec<S>,
}

/// `x: [B,C,H,W]`, `w: [O,C,4,4]`, `bias: [O]` -> `[B,O,H/2,W/2]`.
pub(crate) fn conv2d_forward<S: Scalar>(x: &[S], g: Geom, w: &[S], bias: &[S], out_ch: usize) -> ConvForward<S> {
    let col = im2col(x, g);
    let n = g.cols();
    let mut out_mat = vec![S::zero(); out_ch * n];
    gemm(MatRef::new(w, out_ch, g.rows()), MatRef::new(&col, g.rows(), n), S::zero(), &mut out_mat);
    let plane = g.out_h() * g.out_w();
    let mut out = channel_to_batch_major(&out_mat, g.batch, out_ch, plane);
    add_channel_bias(&mut out, bias, plane);
    ConvForward { out, col }
}

pub(crate) struct ConvGrads<S> {
    pub dx: Vec<S>,
    pub dw: Vec<S>,
    pub db: Vec<S>,
}

pub(crate) fn conv2d_backward<S: Scalar>(
    dout: &[S],
    col: &[S],
    g: Geom,
    w: &[S],
    out_ch: usize,
) -> ConvGrads<S> {
    let n = g.cols();
    let plane = g.out_h() * g.out_w();
    let dout_mat = batch_to_channel_major(dout, g.batch, out_ch, plane);
    let db = channel_sums(&dout_mat, out_ch, n);

    let mut dw = vec![S::zero(); out_ch * g.rows()];
    gemm(MatRef::new(&dout_mat, out_ch, n), MatRef::new(col, g.rows(), n).t(), S::zero(), &mut dw);

    let mut dcol = vec![S::zero(); g.rows() * n];
    gemm(MatRef::new(w, out_ch, g.rows()).t(), MatRef::new(&dout_mat, out_ch, n), S::zero(), &mut dcol);
    let dx = col2im(&dcol, g);
    ConvGrads { dx, dw, db }
}

/// `x: [B,C,H,W]`, `w: [C,O,4,4]`, `bias: [O]` -> `[B,O,2H,2W]`.
///
/// `g` describes the output side (the image a forward conv would consume).
pub(crate) fn conv_transpose_forward<S: Scalar>(x: &[S], in_ch: usize, g: Geom, w: &[S], bias: &[S]) -> Vec<S> {
    let n = g.cols();
    let plane_in = g.out_h() * g.out_w();
    let x_mat = batch_to_channel_major(x, g.batch, in_ch, plane_in);
    let mut col = vec![S::zero(); g.rows() * n];
    gemm(MatRef::new(w, in_ch, g.rows()).t(), MatRef::new(&x_mat, in_ch, n), S::zero(), &mut col);
    let mut out = col2im(&col, g);
    add_channel_bias(&mut out, bias, g.height * g.width);
    out
}

pub(crate) fn conv_transpose_backward<S: Scalar>(
    dout: &[S],
    x: &[S],
    in_ch: usize,
    g: Geom,
    w: &[S],
) -> ConvGrads<S> {
    let n = g.cols();
    let plane_in = g.out_h() * g.out_w();
    let dcol = im2col(dout, g);
    let x_mat = batch_to_channel_major(x, g.batch, in_ch, plane_in);

    let mut dx_mat = vec![S::zero(); in_ch * n];
    gemm(MatRef::new(w, in_ch, g.rows()), MatRef::new(&dcol, g.rows(), n), S::zero(), &mut dx_mat);
    let dx = channel_to_batch_major(&dx_mat, g.batch, in_ch, plane_in);

    let mut dw = vec![S::zero(); in_ch * g.rows()];
    gemm(MatRef::new(&x_mat, in_ch, n), MatRef::new(&dcol, g.rows(), n).t(), S::zero(), &mut dw);

    let plane_out = g.height * g.width;
    let mut db = vec![S::zero(); g.channels];
    for b in 0..g.batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let s: S = dout[(b * g.channels + c) * plane_out..][..plane_out].iter().copied().sum();
            *acc = *acc + s;
        }
    }
    ConvGrads { dx, dw, db }
}

fn add_channel_bias<S: Scalar>(out: &mut [S], bias: &[S], plane: usize) {
    let channels = bias.len();
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[i % channels];
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn channel_sums<S: Scalar>(mat: &[S], rows: usize, cols: usize) -> Vec<S> {
    (0..rows).map(|r| mat[r * cols..][..cols].iter().copied().sum()).collect()
}
