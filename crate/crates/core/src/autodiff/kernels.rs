//! Forward and backward loops for the structured ops. All buffers are
//! row-major NCHW.

/// Geometry of a 2D (transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeom {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent of a forward convolution along one axis.
    pub fn conv_out(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        let padded = len + 2 * p;
        if padded < k || s == 0 {
            return None;
        }
        Some((padded - k) / s + 1)
    }

    /// Output extent of a transposed convolution along one axis.
    pub fn conv_t_out(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        ((len - 1) * s + k).checked_sub(2 * p).filter(|&n| n > 0)
    }
}

/// Range of small-side positions `o` for which `o * s + k - p` lands in `0..big`.
#[inline]
fn valid_range(small: usize, big: usize, s: usize, k: usize, p: usize) -> (usize, usize) {
    // o*s + k >= p  and  o*s + k - p < big
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    let hi_excl = if big + p > k {
        ((big + p - k - 1) / s + 1).min(small)
    } else {
        0
    };
    (lo.min(hi_excl), hi_excl)
}

pub struct ConvDims {
    pub batch: usize,
    pub c_small: usize,
    pub c_big: usize,
    pub small: (usize, usize),
    pub big: (usize, usize),
}

/// Visits every (small index, big index, weight index) triple of a
/// convolution. `small` is the conv output / transposed-conv input, `big` is
/// the conv input / transposed-conv output. For stride-1 width axes the
/// innermost callback receives contiguous runs.
///
/// Weight layout is `[c_small, c_big, kh, kw]` for convolution and
/// `[c_small(in), c_big(out), kh, kw]` for the transposed case, so both share
/// this traversal.
#[inline]
fn for_each_run<F>(d: &ConvDims, g: &ConvGeom, mut f: F)
where
    F: FnMut(usize, usize, usize, usize, usize, usize),
{
    // f(b, cs, cb, weight_idx, small_row_off, big_row_off, ...) with runs along width
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let (hs, ws) = d.small;
    let (hb, wb) = d.big;
    for b in 0..d.batch {
        for cs in 0..d.c_small {
            for cb in 0..d.c_big {
                for ki in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(hs, hb, sh, ki, ph);
                    for kj in 0..kw {
                        let (ow_lo, ow_hi) = valid_range(ws, wb, sw, kj, pw);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let widx = ((cs * d.c_big + cb) * kh + ki) * kw + kj;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * sh + ki - ph;
                            let small_off = ((b * d.c_small + cs) * hs + oh) * ws;
                            let big_off = ((b * d.c_big + cb) * hb + ih) * wb;
                            f(widx, small_off, big_off, ow_lo, ow_hi, kj);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn run_axpy(alpha: f64, src: &[f64], src_start: usize, src_stride: usize, dst: &mut [f64], dst_start: usize, dst_stride: usize, n: usize) {
    if src_stride == 1 && dst_stride == 1 {
        let s = &src[src_start..src_start + n];
        let d = &mut dst[dst_start..dst_start + n];
        for (dv, sv) in d.iter_mut().zip(s) {
            *dv += alpha * sv;
        }
    } else {
        for t in 0..n {
            dst[dst_start + t * dst_stride] += alpha * src[src_start + t * src_stride];
        }
    }
}

#[inline]
fn run_dot(a: &[f64], a_start: usize, a_stride: usize, b: &[f64], b_start: usize, b_stride: usize, n: usize) -> f64 {
    if a_stride == 1 && b_stride == 1 {
        a[a_start..a_start + n]
            .iter()
            .zip(&b[b_start..b_start + n])
            .map(|(x, y)| x * y)
            .sum()
    } else {
        (0..n).map(|t| a[a_start + t * a_stride] * b[b_start + t * b_stride]).sum()
    }
}

/// `small += W * big` (the forward convolution when small is the output).
pub fn gather(d: &ConvDims, g: &ConvGeom, w: &[f64], big: &[f64], small: &mut [f64]) {
    let (sw, pw) = (g.stride.1, g.padding.1);
    for_each_run(d, g, |widx, so, bo, lo, hi, kj| {
        let wv = w[widx];
        let bstart = bo + lo * sw + kj - pw;
        run_axpy(wv, big, bstart, sw, small, so + lo, 1, hi - lo);
    });
}

/// `big += Wᵀ * small` (the forward transposed convolution, and the input
/// gradient of a convolution).
pub fn scatter(d: &ConvDims, g: &ConvGeom, w: &[f64], small: &[f64], big: &mut [f64]) {
    let (sw, pw) = (g.stride.1, g.padding.1);
    for_each_run(d, g, |widx, so, bo, lo, hi, kj| {
        let wv = w[widx];
        let bstart = bo + lo * sw + kj - pw;
        run_axpy(wv, small, so + lo, 1, big, bstart, sw, hi - lo);
    });
}

/// `dW += small ⊗ big` correlation (weight gradient for both directions).
pub fn weight_grad(d: &ConvDims, g: &ConvGeom, small: &[f64], big: &[f64], dw: &mut [f64]) {
    let (sw, pw) = (g.stride.1, g.padding.1);
    for_each_run(d, g, |widx, so, bo, lo, hi, kj| {
        let bstart = bo + lo * sw + kj - pw;
        dw[widx] += run_dot(small, so + lo, 1, big, bstart, sw, hi - lo);
    });
}

/// Adds `bias[c]` to every element of channel `c`.
pub fn add_channel_bias(out: &mut [f64], bias: &[f64], batch: usize, channels: usize, plane: usize) {
    for b in 0..batch {
        for (c, &bv) in bias.iter().enumerate().take(channels) {
            let off = (b * channels + c) * plane;
            out[off..off + plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

pub fn channel_sums(x: &[f64], batch: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut s = vec![0.0; channels];
    for b in 0..batch {
        for (c, acc) in s.iter_mut().enumerate() {
            let off = (b * channels + c) * plane;
            *acc += x[off..off + plane].iter().sum::<f64>();
        }
    }
    s
}

/// Non-overlapping max pooling (stride equals kernel, floor semantics).
/// Returns the output and, per output element, the flat input index of the
/// first maximal element of its window.
pub fn max_pool(
    x: &[f64],
    shape: [usize; 4],
    kernel: (usize, usize),
) -> (Vec<f64>, Vec<usize>, [usize; 4]) {
    let [b, c, h, w] = shape;
    let (kh, kw) = kernel;
    let (ho, wo) = (h / kh, w / kw);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut arg = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + oh * kh * w + ow * kw;
                for i in 0..kh {
                    for j in 0..kw {
                        let idx = base + (oh * kh + i) * w + ow * kw + j;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(x[best_idx]);
                arg.push(best_idx);
            }
        }
    }
    (out, arg, [b, c, ho, wo])
}

/// `y[n] = a[n] · b[n]` for `a: [n, m, k]`, `b: [n, k, p]`.
pub fn bmm(a: &[f64], b: &[f64], n: usize, m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * m * p];
    for bi in 0..n {
        let a0 = bi * m * k;
        let b0 = bi * k * p;
        let y0 = bi * m * p;
        for i in 0..m {
            let yrow = &mut y[y0 + i * p..y0 + (i + 1) * p];
            for t in 0..k {
                let av = a[a0 + i * k + t];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[b0 + t * p..b0 + (t + 1) * p];
                for (yv, bv) in yrow.iter_mut().zip(brow) {
                    *yv += av * bv;
                }
            }
        }
    }
    y
}

/// Gradients of [`bmm`].
pub fn bmm_backward(
    a: &[f64],
    b: &[f64],
    dy: &[f64],
    n: usize,
    m: usize,
    k: usize,
    p: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut da = vec![0.0; n * m * k];
    let mut db = vec![0.0; n * k * p];
    for bi in 0..n {
        let a0 = bi * m * k;
        let b0 = bi * k * p;
        let y0 = bi * m * p;
        for i in 0..m {
            let dyrow = &dy[y0 + i * p..y0 + (i + 1) * p];
            for t in 0..k {
                let brow = &b[b0 + t * p..b0 + (t + 1) * p];
                da[a0 + i * k + t] = dyrow.iter().zip(brow).map(|(x, y)| x * y).sum();
                let av = a[a0 + i * k + t];
                let dbrow = &mut db[b0 + t * p..b0 + (t + 1) * p];
                for (dv, g) in dbrow.iter_mut().zip(dyrow) {
                    *dv += av * g;
                }
            }
        }
    }
    (da, db)
}

/// `y[r, o] = Σ_i x[r, i] w[o, i]`.
pub fn linear(x: &[f64], w: &[f64], rows: usize, fin: usize, fout: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * fout];
    for r in 0..rows {
        let xr = &x[r * fin..(r + 1) * fin];
        for o in 0..fout {
            let wr = &w[o * fin..(o + 1) * fin];
            y[r * fout + o] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
    y
}

pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    fin: usize,
    fout: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; rows * fin];
    let mut dw = vec![0.0; fout * fin];
    for r in 0..rows {
        let xr = &x[r * fin..(r + 1) * fin];
        for o in 0..fout {
            let g = dy[r * fout + o];
            if g == 0.0 {
                continue;
            }
            let wr = &w[o * fin..(o + 1) * fin];
            let dxr = &mut dx[r * fin..(r + 1) * fin];
            for (d, wv) in dxr.iter_mut().zip(wr) {
                *d += g * wv;
            }
            let dwr = &mut dw[o * fin..(o + 1) * fin];
            for (d, xv) in dwr.iter_mut().zip(xr) {
                *d += g * xv;
            }
        }
    }
    (dx, dw)
}

/// Strides of a row-major shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `x` into a new buffer with axes reordered by `perm`
/// (`out.shape[i] = shape[perm[i]]`). With `inverse` set, the roles swap:
/// `x` is laid out in permuted order and is scattered back.
pub fn permute(x: &[f64], shape: &[usize], perm: &[usize], inverse: bool) -> Vec<f64> {
    let nd = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // stride in the source buffer for each output axis
    let src_stride: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![0.0; x.len()];
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for (dst, _) in x.iter().enumerate() {
        if inverse {
            out[src] = x[dst];
        } else {
            out[dst] = x[src];
        }
        // increment multi-index over out_shape
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            src += src_stride[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_stride[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Statistic layout for batch and group normalization over `[B, C, H, W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormLayout {
    /// One statistic per channel over (B, H, W).
    PerChannel,
    /// One statistic per (sample, group) over (C/G, H, W).
    PerGroup(usize),
}

impl NormLayout {
    fn groups(&self, b: usize, c: usize) -> usize {
        match *self {
            NormLayout::PerChannel => c,
            NormLayout::PerGroup(g) => b * g,
        }
    }

    /// Statistic index owning the contiguous plane (b, c).
    #[inline]
    fn stat_of(&self, b: usize, c: usize, channels: usize) -> usize {
        match *self {
            NormLayout::PerChannel => c,
            NormLayout::PerGroup(g) => b * g + c / (channels / g),
        }
    }
}

/// Normalizes `x` to zero mean, unit variance per statistic group. Returns
/// the normalized values, per-group inverse standard deviation, per-group
/// mean and biased variance.
pub fn normalize(
    x: &[f64],
    shape: [usize; 4],
    layout: NormLayout,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let [b, c, h, w] = shape;
    let plane = h * w;
    let ng = layout.groups(b, c);
    let mut sum = vec![0.0; ng];
    let mut count = vec![0usize; ng];
    for bi in 0..b {
        for ci in 0..c {
            let s = layout.stat_of(bi, ci, c);
            let off = (bi * c + ci) * plane;
            sum[s] += x[off..off + plane].iter().sum::<f64>();
            count[s] += plane;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    let mut sq = vec![0.0; ng];
    for bi in 0..b {
        for ci in 0..c {
            let s = layout.stat_of(bi, ci, c);
            let off = (bi * c + ci) * plane;
            let m = mean[s];
            sq[s] += x[off..off + plane].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    let var: Vec<f64> = sq.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let s = layout.stat_of(bi, ci, c);
            let off = (bi * c + ci) * plane;
            let (m, k) = (mean[s], inv[s]);
            for (o, v) in out[off..off + plane].iter_mut().zip(&x[off..off + plane]) {
                *o = (v - m) * k;
            }
        }
    }
    (out, inv, mean, var)
}

/// Input gradient of [`normalize`] given its output `xhat`.
pub fn normalize_backward(
    xhat: &[f64],
    inv: &[f64],
    dy: &[f64],
    shape: [usize; 4],
    layout: NormLayout,
) -> Vec<f64> {
    let [b, c, h, w] = shape;
    let plane = h * w;
    let ng = layout.groups(b, c);
    let mut sum_dy = vec![0.0; ng];
    let mut sum_dy_x = vec![0.0; ng];
    let mut count = vec![0usize; ng];
    for bi in 0..b {
        for ci in 0..c {
            let s = layout.stat_of(bi, ci, c);
            let off = (bi * c + ci) * plane;
            for (g, xh) in dy[off..off + plane].iter().zip(&xhat[off..off + plane]) {
                sum_dy[s] += g;
                sum_dy_x[s] += g * xh;
            }
            count[s] += plane;
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for bi in 0..b {
        for ci in 0..c {
            let s = layout.stat_of(bi, ci, c);
            let off = (bi * c + ci) * plane;
            let n = count[s] as f64;
            let (mdy, mdyx, k) = (sum_dy[s] / n, sum_dy_x[s] / n, inv[s]);
            for i in off..off + plane {
                dx[i] = k * (dy[i] - mdy - xhat[i] * mdyx);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for small in 1..7 {
            for big in 1..9 {
                for s in 1..3 {
                    for k in 0..4 {
                        for p in 0..3 {
                            let (lo, hi) = valid_range(small, big, s, k, p);
                            let expect: Vec<usize> = (0..small)
                                .filter(|&o| {
                                    let q = (o * s + k) as isize - p as isize;
                                    q >= 0 && (q as usize) < big
                                })
                                .collect();
                            let got: Vec<usize> = (lo..hi).collect();
                            assert_eq!(got, expect, "small={small} big={big} s={s} k={k} p={p}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn permute_round_trip() {
        let shape = [2, 3, 4];
        let x: Vec<f64> = (0..24).map(f64::from).collect();
        let y = permute(&x, &shape, &[2, 0, 1], false);
        // y[k, i, j] = x[i, j, k]
        assert_eq!(y[(2 + 1) * 3 + 2], x[(3 + 2) * 4 + 1]);
        let back = permute(&y, &shape, &[2, 0, 1], true);
        assert_eq!(back, x);
    }
}
