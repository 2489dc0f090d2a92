//! Numeric kernels backing the graph ops.

pub(crate) mod conv;
pub(crate) mod gemm;

/// 2x2 max pooling with stride 2. Returns the pooled values and, per output
/// element, the linear index of the winning input element (first win on
/// ties, fixed scan order).
pub(crate) fn maxpool2_forward(
    x: &[f64],
    batch: usize,
    ch: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; batch * ch * oh * ow];
    let mut arg = vec![0u32; out.len()];
    for plane in 0..batch * ch {
        let src_base = plane * h * w;
        let dst_base = plane * oh * ow;
        for y in 0..oh {
            for x_out in 0..ow {
                let i00 = src_base + (2 * y) * w + 2 * x_out;
                let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                let mut best = candidates[0];
                for &c in &candidates[1..] {
                    if x[c] > x[best] {
                        best = c;
                    }
                }
                out[dst_base + y * ow + x_out] = x[best];
                arg[dst_base + y * ow + x_out] = best as u32;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool2_backward(gout: &[f64], arg: &[u32], gx: &mut [f64]) {
    for (g, &idx) in gout.iter().zip(arg) {
        gx[idx as usize] += g;
    }
}

/// Per-sample softmax cross entropy from logits ([batch, classes]) against
/// class indices. Computed through log-sum-exp with max subtraction so large
/// logits cannot overflow. Returns the per-sample losses and the softmax
/// probabilities needed by the backward pass.
pub(crate) fn softmax_ce_forward(
    logits: &[f64],
    labels: &[usize],
    classes: usize,
) -> (Vec<f64>, Vec<f64>) {
    let batch = labels.len();
    let mut losses = vec![0.0; batch];
    let mut probs = vec![0.0; batch * classes];
    for b in 0..batch {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &v) in probs[b * classes..(b + 1) * classes].iter_mut().zip(row) {
            *p = (v - max).exp();
            sum += *p;
        }
        for p in &mut probs[b * classes..(b + 1) * classes] {
            *p /= sum;
        }
        // loss = log(sum exp(v - max)) - (v_label - max)
        losses[b] = sum.ln() - (row[labels[b]] - max);
    }
    (losses, probs)
}

pub(crate) fn softmax_ce_backward(
    gout: &[f64],
    probs: &[f64],
    labels: &[usize],
    classes: usize,
    glogits: &mut [f64],
) {
    for (b, &label) in labels.iter().enumerate() {
        let g = gout[b];
        let row = &probs[b * classes..(b + 1) * classes];
        let dst = &mut glogits[b * classes..(b + 1) * classes];
        for (c, (d, &p)) in dst.iter_mut().zip(row).enumerate() {
            let indicator = if c == label { 1.0 } else { 0.0 };
            *d += (p - indicator) * g;
        }
    }
}
