//! 2-D convolution (stride 1, valid padding) via per-sample im2col + gemm.

use super::gemm::dgemm_rowmajor;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }
    /// Rows of the patch matrix: one per (in channel, kernel cell).
    pub fn patch(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }
    /// Columns of the patch matrix: one per output position.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfolds one sample `x_b` ([in_ch, h, w]) into `cols` ([patch, positions]).
fn im2col_sample(x_b: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut row = 0;
    for ic in 0..d.in_ch {
        let plane = &x_b[ic * d.h * d.w..(ic + 1) * d.h * d.w];
        for kh in 0..d.kh {
            for kw in 0..d.kw {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let src = &plane[(y + kh) * d.w + kw..(y + kh) * d.w + kw + ow];
                    dst[y * ow..(y + 1) * ow].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

/// Folds per-position patch gradients back onto one input sample.
fn col2im_add_sample(cols: &[f64], d: &ConvDims, gx_b: &mut [f64]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut row = 0;
    for ic in 0..d.in_ch {
        let plane = &mut gx_b[ic * d.h * d.w..(ic + 1) * d.h * d.w];
        for kh in 0..d.kh {
            for kw in 0..d.kw {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let dst = &mut plane[(y + kh) * d.w + kw..(y + kh) * d.w + kw + ow];
                    for (dv, sv) in dst.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                        *dv += sv;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward pass. Returns the output ([batch, out_ch, out_h, out_w]) and the
/// concatenated per-sample patch matrices, kept for the backward pass.
pub(crate) fn conv2d_forward(x: &[f64], w: &[f64], d: &ConvDims) -> (Vec<f64>, Vec<f64>) {
    let (patch, pos) = (d.patch(), d.positions());
    let sample = d.in_ch * d.h * d.w;
    let out_sample = d.out_ch * pos;
    let mut out = vec![0.0; d.batch * out_sample];
    let mut cols_all = vec![0.0; d.batch * patch * pos];
    for b in 0..d.batch {
        let cols = &mut cols_all[b * patch * pos..(b + 1) * patch * pos];
        im2col_sample(&x[b * sample..(b + 1) * sample], d, cols);
        dgemm_rowmajor(
            d.out_ch,
            patch,
            pos,
            1.0,
            w,
            false,
            cols,
            false,
            0.0,
            &mut out[b * out_sample..(b + 1) * out_sample],
        );
    }
    (out, cols_all)
}

/// Backward pass. Accumulates into `gx` ([batch, in_ch, h, w]) and
/// `gw` ([out_ch, patch]) when present.
pub(crate) fn conv2d_backward(
    gout: &[f64],
    w: &[f64],
    cols_all: &[f64],
    d: &ConvDims,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
) {
    let (patch, pos) = (d.patch(), d.positions());
    let sample = d.in_ch * d.h * d.w;
    let out_sample = d.out_ch * pos;
    let mut dcols = vec![0.0; patch * pos];
    for b in 0..d.batch {
        let gout_b = &gout[b * out_sample..(b + 1) * out_sample];
        if let Some(gw) = gw.as_deref_mut() {
            let cols = &cols_all[b * patch * pos..(b + 1) * patch * pos];
            dgemm_rowmajor(
                d.out_ch, pos, patch, 1.0, gout_b, false, cols, true, 1.0, gw,
            );
        }
        if let Some(gx) = gx.as_deref_mut() {
            dgemm_rowmajor(
                patch, d.out_ch, pos, 1.0, w, true, gout_b, false, 0.0, &mut dcols,
            );
            col2im_add_sample(&dcols, d, &mut gx[b * sample..(b + 1) * sample]);
        }
    }
}
