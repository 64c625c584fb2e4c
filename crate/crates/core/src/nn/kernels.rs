//! Per-example numeric kernels. Storage is `f32`; every reduction accumulates
//! in `f64` and rounds once on the way out.

/// Dot product with four interleaved `f64` accumulators (fixed order, so the
/// result is reproducible).
#[inline]
pub(crate) fn dot64(w: &[f32], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len());
    let mut acc = [0.0f64; 4];
    let chunks = w.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += f64::from(w[i]) * x[i];
        acc[1] += f64::from(w[i + 1]) * x[i + 1];
        acc[2] += f64::from(w[i + 2]) * x[i + 2];
        acc[3] += f64::from(w[i + 3]) * x[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..w.len() {
        tail += f64::from(w[i]) * x[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// `c (m×n) = beta·c + a (m×k) · b (k×n)` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the slices outlive the call and the strides address only
    // elements inside them: `a` is m×k, `b` is k×n, `c` is m×n row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Same-padding, stride-1 patch matrix: rows are (in-channel, ky, kx), columns
/// are output pixels.
pub(crate) fn im2col(input: &[f32], channels: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0f64; channels * k * k * hw];
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst_row[x] = f64::from(src_row[sx as usize]);
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the image.
pub(crate) fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![0.0f64; channels * hw];
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = c * hw + sy as usize * w;
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            out[base + sx as usize] += src[y * w + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2×2 stride-2 max pooling. Returns pooled values and, per output cell, the
/// flat input index that won (first maximum in row-major window order).
pub(crate) fn maxpool2x2(input: &[f32], channels: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut idx = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &cand in &cands[1..] {
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}
