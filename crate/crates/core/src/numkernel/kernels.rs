//! Forward and backward kernels on flat row-major buffers.
//!
//! Feature maps use the `[n, c, t]` layout throughout: `n` independent
//! instances, `c` feature rows, `t` time steps. The graph in `graph.rs` wires
//! these kernels together; nothing here allocates graph state.

use super::{Array, KernelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Pad `max(k - stride, 0)` samples in total, `floor(total / 2)` on the left.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub out_len: usize,
}

pub fn conv_geometry(
    t: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry, KernelError> {
    if stride == 0 {
        return Err(KernelError::Dimension("stride must be >= 1".into()));
    }
    if k == 0 {
        return Err(KernelError::Dimension("kernel size must be >= 1".into()));
    }
    let total = match padding {
        Padding::Same => k.saturating_sub(stride),
        Padding::Valid => 0,
    };
    if k > t + total {
        return Err(KernelError::Dimension(format!(
            "kernel {k} longer than padded input {}",
            t + total
        )));
    }
    let pad_left = total / 2;
    Ok(ConvGeometry {
        stride,
        pad_left,
        pad_right: total - pad_left,
        out_len: (t + total - k) / stride + 1,
    })
}

/// `y[n, co, t] = b[co] + sum_{ci, k} w[co, ci, k] * x[n, ci, t*stride + k - pad_left]`
pub fn conv1d_forward(
    x: &[f64],
    (n, cin, t): (usize, usize, usize),
    w: &[f64],
    (cout, k): (usize, usize),
    bias: &[f64],
    geo: ConvGeometry,
) -> Vec<f64> {
    let t_out = geo.out_len;
    let mut out = vec![0.0; n * cout * t_out];
    for inst in 0..n {
        let xi = &x[inst * cin * t..(inst + 1) * cin * t];
        let oi = &mut out[inst * cout * t_out..(inst + 1) * cout * t_out];
        if geo.stride == 1 {
            correlate_stride1(xi, cin, t, w, cout, k, Some(bias), geo.pad_left, oi, t_out);
        } else {
            correlate_strided(xi, cin, t, w, cout, k, bias, geo, oi);
        }
    }
    out
}

/// Output time steps computed per register block.
pub(crate) const TB: usize = 32;
/// Output channels computed per register block.
const CB: usize = 4;

/// Copies `x: [cin, t_in]` into rows of length `t_out + k - 1` with
/// `pad_left` leading zeros and zeros after the data.
fn padded_rows(x: &[f64], cin: usize, t_in: usize, pad_left: usize, t_out: usize, k: usize) -> (Vec<f64>, usize) {
    let tp = t_out + k - 1;
    let mut xp = vec![0.0; cin * tp];
    let n = t_in.min(tp.saturating_sub(pad_left));
    for ci in 0..cin {
        xp[ci * tp + pad_left..ci * tp + pad_left + n].copy_from_slice(&x[ci * t_in..ci * t_in + n]);
    }
    (xp, tp)
}

/// `TB x CB` output block; `xp` starts at the block's first time step and
/// `wb` holds one channel block as `[cin][k][CB]`.
#[inline(always)]
fn block_kernel_portable<const C: usize>(xp: &[f64], tp: usize, wb: &[f64], cin: usize, k: usize) -> [[f64; TB]; C] {
    let mut acc = [[0.0f64; TB]; C];
    for ci in 0..cin {
        let xr = &xp[ci * tp..ci * tp + TB + k - 1];
        let wr = &wb[ci * k * C..(ci + 1) * k * C];
        for kk in 0..k {
            let xs: &[f64; TB] = xr[kk..kk + TB].try_into().unwrap();
            let ws: &[f64; C] = wr[kk * C..(kk + 1) * C].try_into().unwrap();
            for c in 0..C {
                let wv = ws[c];
                for j in 0..TB {
                    acc[c][j] = wv.mul_add(xs[j], acc[c][j]);
                }
            }
        }
    }
    acc
}

#[inline(always)]
fn block_kernel<const C: usize>(xp: &[f64], tp: usize, wb: &[f64], cin: usize, k: usize) -> [[f64; TB]; C] {
    #[cfg(target_arch = "x86_64")]
    if super::simd::has_avx512() {
        assert!(xp.len() >= (cin - 1) * tp + TB + k - 1 && wb.len() >= cin * k * C);
        // SAFETY: feature checked at runtime; the assert covers every read.
        return unsafe { super::simd::block_kernel::<C>(xp, tp, wb, cin, k) };
    }
    block_kernel_portable::<C>(xp, tp, wb, cin, k)
}

/// Stride-1 cross-correlation over one instance with implicit zero padding.
#[allow(clippy::too_many_arguments)]
fn correlate_stride1(
    x: &[f64],
    cin: usize,
    t_in: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    bias: Option<&[f64]>,
    pad_left: usize,
    out: &mut [f64],
    t_out: usize,
) {
    let (xp, tp) = padded_rows(x, cin, t_in, pad_left, t_out, k);
    // Weights regrouped as [cout / CB][cin][k][CB] for full channel blocks.
    let mut wb = vec![0.0; cout * cin * k];
    for blk in 0..cout / CB {
        for ci in 0..cin {
            for kk in 0..k {
                for c in 0..CB {
                    wb[((blk * cin + ci) * k + kk) * CB + c] = w[((blk * CB + c) * cin + ci) * k + kk];
                }
            }
        }
    }
    let full = t_out / TB * TB;
    let mut co0 = 0;
    while co0 < cout {
        let cb = if cout - co0 >= CB { CB } else { 1 };
        for j0 in (0..full).step_by(TB) {
            let xb = &xp[j0..];
            if cb == CB {
                let acc = block_kernel::<CB>(xb, tp, &wb[co0 * cin * k..(co0 + CB) * cin * k], cin, k);
                store_block(&acc, co0, j0, bias, out, t_out);
            } else {
                let acc = block_kernel::<1>(xb, tp, &w[co0 * cin * k..(co0 + 1) * cin * k], cin, k);
                store_block(&acc, co0, j0, bias, out, t_out);
            }
        }
        for co in co0..co0 + cb {
            let b = bias.map_or(0.0, |b| b[co]);
            for j in full..t_out {
                let mut s = 0.0;
                for ci in 0..cin {
                    s += dot(&xp[ci * tp + j..ci * tp + j + k], &w[(co * cin + ci) * k..(co * cin + ci + 1) * k]);
                }
                out[co * t_out + j] = s + b;
            }
        }
        co0 += cb;
    }
}

#[inline(always)]
fn store_block<const C: usize>(
    acc: &[[f64; TB]; C],
    co0: usize,
    j0: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
    t_out: usize,
) {
    for (c, a) in acc.iter().enumerate() {
        let b = bias.map_or(0.0, |b| b[co0 + c]);
        let o = &mut out[(co0 + c) * t_out + j0..(co0 + c) * t_out + j0 + TB];
        for (ov, av) in o.iter_mut().zip(a) {
            *ov = av + b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn correlate_strided(
    x: &[f64],
    cin: usize,
    t_in: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    bias: &[f64],
    geo: ConvGeometry,
    out: &mut [f64],
) {
    let t_out = geo.out_len;
    for co in 0..cout {
        for to in 0..t_out {
            let base = (to * geo.stride) as isize - geo.pad_left as isize;
            let mut s = bias[co];
            for ci in 0..cin {
                let xr = &x[ci * t_in..(ci + 1) * t_in];
                let wr = &w[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                let k0 = (-base).max(0) as usize;
                let k1 = ((t_in as isize - base).max(0) as usize).min(k);
                for kk in k0..k1 {
                    s += wr[kk] * xr[(base + kk as isize) as usize];
                }
            }
            out[co * t_out + to] = s;
        }
    }
}

/// Gradient of the convolution with respect to its input.
pub fn conv1d_backward_input(
    g: &[f64],
    (n, cin, t): (usize, usize, usize),
    w: &[f64],
    (cout, k): (usize, usize),
    geo: ConvGeometry,
) -> Vec<f64> {
    let t_out = geo.out_len;
    let mut gx = vec![0.0; n * cin * t];
    if geo.stride == 1 {
        // Transposed, flipped kernel: wf[ci, co, k'] = w[co, ci, K-1-k'].
        let mut wf = vec![0.0; cin * cout * k];
        for co in 0..cout {
            for ci in 0..cin {
                for kk in 0..k {
                    wf[(ci * cout + co) * k + (k - 1 - kk)] = w[(co * cin + ci) * k + kk];
                }
            }
        }
        let pad = k - 1 - geo.pad_left;
        for inst in 0..n {
            correlate_stride1(
                &g[inst * cout * t_out..(inst + 1) * cout * t_out],
                cout,
                t_out,
                &wf,
                cin,
                k,
                None,
                pad,
                &mut gx[inst * cin * t..(inst + 1) * cin * t],
                t,
            );
        }
    } else {
        for inst in 0..n {
            let gi = &g[inst * cout * t_out..(inst + 1) * cout * t_out];
            let gxi = &mut gx[inst * cin * t..(inst + 1) * cin * t];
            for co in 0..cout {
                for to in 0..t_out {
                    let gv = gi[co * t_out + to];
                    if gv == 0.0 {
                        continue;
                    }
                    let base = (to * geo.stride) as isize - geo.pad_left as isize;
                    for ci in 0..cin {
                        let wr = &w[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                        let k0 = (-base).max(0) as usize;
                        let k1 = ((t as isize - base).max(0) as usize).min(k);
                        for kk in k0..k1 {
                            gxi[ci * t + (base + kk as isize) as usize] += gv * wr[kk];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Time steps per im2col chunk in the kernel-gradient computation.
const JC: usize = 512;

/// Gradients of the convolution with respect to kernels and bias.
pub fn conv1d_backward_params(
    g: &[f64],
    x: &[f64],
    (n, cin, t): (usize, usize, usize),
    (cout, k): (usize, usize),
    geo: ConvGeometry,
) -> (Vec<f64>, Vec<f64>) {
    let t_out = geo.out_len;
    let rows = cin * k;
    let mut gw = vec![0.0; cout * rows];
    let mut gb = vec![0.0; cout];
    let mut cols = vec![0.0; rows * JC];
    let mut gchunk = vec![0.0; cout * JC];
    for inst in 0..n {
        let gi = &g[inst * cout * t_out..(inst + 1) * cout * t_out];
        let xi = &x[inst * cin * t..(inst + 1) * cin * t];
        for co in 0..cout {
            gb[co] += sum(&gi[co * t_out..(co + 1) * t_out]);
        }
        if geo.stride == 1 {
            let (xp, tp) = padded_rows(xi, cin, t, geo.pad_left, t_out, k);
            for ci in 0..cin {
                let shifted: Vec<&[f64]> = (0..k).map(|kk| &xp[ci * tp + kk..ci * tp + kk + t_out]).collect();
                shifted_gemm(gi, cout, &shifted, t_out, |co, kk, v| gw[(co * cin + ci) * k + kk] += v);
            }
            continue;
        }
        let mut j0 = 0;
        while j0 < t_out {
            let len = JC.min(t_out - j0);
            // cols[(ci, kk), j] = x[ci, (j0 + j) * stride + kk - pad_left]
            for ci in 0..cin {
                let xr = &xi[ci * t..(ci + 1) * t];
                for kk in 0..k {
                    let row = &mut cols[(ci * k + kk) * len..(ci * k + kk + 1) * len];
                    let at = |j: usize| ((j0 + j) * geo.stride + kk) as isize - geo.pad_left as isize;
                    // Columns whose source index lies inside the input.
                    let lo = (0..len).find(|&j| at(j) >= 0).unwrap_or(len);
                    let hi = (lo..len).find(|&j| at(j) >= t as isize).unwrap_or(len);
                    row[..lo].fill(0.0);
                    row[hi..].fill(0.0);
                    if geo.stride == 1 && lo < hi {
                        let s0 = at(lo) as usize;
                        row[lo..hi].copy_from_slice(&xr[s0..s0 + hi - lo]);
                    } else {
                        for (j, c) in row.iter_mut().enumerate().take(hi).skip(lo) {
                            *c = xr[at(j) as usize];
                        }
                    }
                }
            }
            for co in 0..cout {
                gchunk[co * len..(co + 1) * len].copy_from_slice(&gi[co * t_out + j0..co * t_out + j0 + len]);
            }
            gemm_nt_acc(&gchunk[..cout * len], cout, &cols[..rows * len], rows, len, &mut gw);
            j0 += len;
        }
    }
    (gw, gb)
}

#[inline(always)]
fn micro_4x4_portable(a: [&[f64]; 4], b: [&[f64]; 4], lanes: usize) -> [[[f64; 8]; 4]; 4] {
    let mut acc = [[[0.0f64; 8]; 4]; 4];
    let mut l = 0;
    while l < lanes {
        let av: [[f64; 8]; 4] = std::array::from_fn(|r| a[r][l..l + 8].try_into().unwrap());
        let bv: [[f64; 8]; 4] = std::array::from_fn(|r| b[r][l..l + 8].try_into().unwrap());
        for r in 0..4 {
            for c in 0..4 {
                for q in 0..8 {
                    acc[r][c][q] = av[r][q].mul_add(bv[c][q], acc[r][c][q]);
                }
            }
        }
        l += 8;
    }
    acc
}

#[inline(always)]
fn micro_4x4(a: [&[f64]; 4], b: [&[f64]; 4], lanes: usize) -> [[[f64; 8]; 4]; 4] {
    #[cfg(target_arch = "x86_64")]
    if super::simd::has_avx512() {
        assert!(a.iter().chain(&b).all(|r| r.len() >= lanes) && lanes.is_multiple_of(8));
        // SAFETY: feature checked at runtime; the assert covers every read.
        return unsafe { super::simd::micro_4x4(a, b, lanes) };
    }
    micro_4x4_portable(a, b, lanes)
}

/// Calls `emit(i, j, sum_l a[i, l] * b[j][l])` for `a: [m, len]`.
fn shifted_gemm(a: &[f64], m: usize, b: &[&[f64]], len: usize, mut emit: impl FnMut(usize, usize, f64)) {
    let p = b.len();
    let lanes = len / 8 * 8;
    let mut i0 = 0;
    while i0 < m {
        let mi = if m - i0 >= 4 { 4 } else { 1 };
        let mut j0 = 0;
        while j0 < p {
            let pj = if p - j0 >= 4 { 4 } else { 1 };
            if mi == 4 && pj == 4 {
                let ar: [&[f64]; 4] = std::array::from_fn(|r| &a[(i0 + r) * len..(i0 + r) * len + lanes]);
                let br: [&[f64]; 4] = std::array::from_fn(|r| &b[j0 + r][..lanes]);
                let acc = micro_4x4(ar, br, lanes);
                for r in 0..4 {
                    for c in 0..4 {
                        let ar = &a[(i0 + r) * len..(i0 + r + 1) * len];
                        let tail: f64 = ar[lanes..].iter().zip(&b[j0 + c][lanes..]).map(|(x, y)| x * y).sum();
                        emit(i0 + r, j0 + c, acc[r][c].iter().sum::<f64>() + tail);
                    }
                }
            } else {
                for r in i0..i0 + mi {
                    for c in j0..j0 + pj {
                        emit(r, c, dot(&a[r * len..(r + 1) * len], b[c]));
                    }
                }
            }
            j0 += pj;
        }
        i0 += mi;
    }
}

/// `out[i, j] += sum_l a[i, l] * b[j, l]` for row-major `a: [m, len]`,
/// `b: [p, len]`, `out: [m, p]`.
pub fn gemm_nt_acc(a: &[f64], m: usize, b: &[f64], p: usize, len: usize, out: &mut [f64]) {
    const R: usize = 4;
    let lanes = len / 8 * 8;
    let mut i0 = 0;
    while i0 < m {
        let mi = if m - i0 >= R { R } else { 1 };
        let mut j0 = 0;
        while j0 < p {
            let pj = if p - j0 >= R { R } else { 1 };
            if mi == R && pj == R {
                let ar: [&[f64]; R] = std::array::from_fn(|r| &a[(i0 + r) * len..(i0 + r) * len + lanes]);
                let br: [&[f64]; R] = std::array::from_fn(|r| &b[(j0 + r) * len..(j0 + r) * len + lanes]);
                let acc = micro_4x4(ar, br, lanes);
                for r in 0..R {
                    for c in 0..R {
                        let ar = &a[(i0 + r) * len..(i0 + r + 1) * len];
                        let br = &b[(j0 + c) * len..(j0 + c + 1) * len];
                        let tail: f64 = ar[lanes..].iter().zip(&br[lanes..]).map(|(x, y)| x * y).sum();
                        out[(i0 + r) * p + j0 + c] += acc[r][c].iter().sum::<f64>() + tail;
                    }
                }
            } else {
                for r in i0..i0 + mi {
                    for c in j0..j0 + pj {
                        out[r * p + c] += dot(&a[r * len..(r + 1) * len], &b[c * len..(c + 1) * len]);
                    }
                }
            }
            j0 += pj;
        }
        i0 += mi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

pub fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let c = a.chunks_exact(8);
    let r = c.remainder();
    for x in c {
        for i in 0..8 {
            acc[i] += x[i];
        }
    }
    acc.iter().sum::<f64>() + r.iter().sum::<f64>()
}

/// Axes over which normalization statistics are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormLayout {
    /// `[n, f, t]`: one statistic per feature `f`, pooled over `n` and `t`.
    BatchTime,
    /// `[b, c, h]`: one statistic per `(b, h)`, pooled over the channel axis
    /// `c`; affine parameters are indexed by `h`.
    Channel,
}

/// Per-statistic mean and inverse standard deviation used in a normalization.
#[derive(Debug, Clone)]
pub struct NormStatistics {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

fn layout_dims(layout: NormLayout, shape: (usize, usize, usize)) -> (usize, usize) {
    let (a, b, c) = shape;
    match layout {
        // (number of statistics, elements per statistic)
        NormLayout::BatchTime => (b, a * c),
        NormLayout::Channel => (a * c, b),
    }
}

/// Visits every element index belonging to statistic `s`.
#[inline]
fn for_each_in_group(
    layout: NormLayout,
    (a, b, c): (usize, usize, usize),
    s: usize,
    mut f: impl FnMut(usize),
) {
    match layout {
        NormLayout::BatchTime => {
            for i in 0..a {
                let base = (i * b + s) * c;
                for j in 0..c {
                    f(base + j);
                }
            }
        }
        NormLayout::Channel => {
            let (bi, h) = (s / c, s % c);
            for ci in 0..b {
                f((bi * b + ci) * c + h);
            }
        }
    }
}

#[inline]
fn affine_index(layout: NormLayout, (_, _, c): (usize, usize, usize), s: usize) -> usize {
    match layout {
        NormLayout::BatchTime => s,
        NormLayout::Channel => s % c,
    }
}

/// Population mean and variance per statistic.
pub fn norm_statistics(
    x: &[f64],
    shape: (usize, usize, usize),
    layout: NormLayout,
    eps: f64,
) -> Result<NormStatistics, KernelError> {
    let (stats, count) = layout_dims(layout, shape);
    if count < 2 {
        return Err(KernelError::DegenerateBatch(count));
    }
    let mut mean = vec![0.0; stats];
    let mut var = vec![0.0; stats];
    for s in 0..stats {
        let mut acc = 0.0;
        if layout == NormLayout::BatchTime {
            let (a, b, c) = shape;
            for i in 0..a {
                acc += sum(&x[(i * b + s) * c..(i * b + s + 1) * c]);
            }
        } else {
            for_each_in_group(layout, shape, s, |idx| acc += x[idx]);
        }
        let m = acc / count as f64;
        let mut sq = 0.0;
        for_each_in_group(layout, shape, s, |idx| {
            let d = x[idx] - m;
            sq += d * d;
        });
        mean[s] = m;
        var[s] = sq / count as f64;
    }
    let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    Ok(NormStatistics { mean, var, inv_std })
}

/// Statistics from stored running estimates, broadcast to the layout.
pub fn running_statistics(
    running_mean: &[f64],
    running_var: &[f64],
    shape: (usize, usize, usize),
    layout: NormLayout,
    eps: f64,
) -> NormStatistics {
    let (stats, _) = layout_dims(layout, shape);
    let mut mean = vec![0.0; stats];
    let mut var = vec![0.0; stats];
    for s in 0..stats {
        let a = affine_index(layout, shape, s);
        mean[s] = running_mean[a];
        var[s] = running_var[a];
    }
    let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    NormStatistics { mean, var, inv_std }
}

pub fn norm_forward(
    x: &[f64],
    shape: (usize, usize, usize),
    layout: NormLayout,
    stats: &NormStatistics,
    gamma: &[f64],
    beta: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    let (n_stats, _) = layout_dims(layout, shape);
    for s in 0..n_stats {
        let a = affine_index(layout, shape, s);
        let (m, inv, g, b) = (stats.mean[s], stats.inv_std[s], gamma[a], beta[a]);
        for_each_in_group(layout, shape, s, |idx| y[idx] = g * (x[idx] - m) * inv + b);
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`. With `batch_stats` the statistics are
/// treated as functions of `x`; otherwise they are constants.
pub fn norm_backward(
    x: &[f64],
    g: &[f64],
    shape: (usize, usize, usize),
    layout: NormLayout,
    stats: &NormStatistics,
    gamma: &[f64],
    batch_stats: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n_stats, count) = layout_dims(layout, shape);
    let affine_len = gamma.len();
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; affine_len];
    let mut dbeta = vec![0.0; affine_len];
    for s in 0..n_stats {
        let a = affine_index(layout, shape, s);
        let (m, inv, gm) = (stats.mean[s], stats.inv_std[s], gamma[a]);
        let mut sum_g = 0.0;
        let mut sum_g_xhat = 0.0;
        for_each_in_group(layout, shape, s, |idx| {
            let xhat = (x[idx] - m) * inv;
            sum_g += g[idx];
            sum_g_xhat += g[idx] * xhat;
        });
        dgamma[a] += sum_g_xhat;
        dbeta[a] += sum_g;
        if batch_stats {
            let cnt = count as f64;
            let scale = gm * inv / cnt;
            for_each_in_group(layout, shape, s, |idx| {
                let xhat = (x[idx] - m) * inv;
                dx[idx] = scale * (cnt * g[idx] - sum_g - xhat * sum_g_xhat);
            });
        } else {
            for_each_in_group(layout, shape, s, |idx| dx[idx] = g[idx] * gm * inv);
        }
    }
    (dx, dgamma, dbeta)
}

/// ELU with unit scale: `x` for `x >= 0`, `e^x - 1` otherwise.
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn pool_output_len(t: usize, kernel: usize, stride: usize) -> Result<usize, KernelError> {
    if kernel == 0 || stride == 0 {
        return Err(KernelError::Dimension("pooling kernel and stride must be >= 1".into()));
    }
    if kernel > t {
        return Err(KernelError::Dimension(format!(
            "pooling kernel {kernel} longer than input {t}"
        )));
    }
    Ok((t - kernel) / stride + 1)
}

pub fn avg_pool_forward(x: &[f64], rows: usize, t: usize, kernel: usize, stride: usize) -> Vec<f64> {
    let t_out = (t - kernel) / stride + 1;
    let inv = 1.0 / kernel as f64;
    let mut y = vec![0.0; rows * t_out];
    for r in 0..rows {
        let xr = &x[r * t..(r + 1) * t];
        for (o, yv) in y[r * t_out..(r + 1) * t_out].iter_mut().enumerate() {
            // Mean as an offset from the first sample, so constant windows are exact.
            let win = &xr[o * stride..o * stride + kernel];
            let x0 = win[0];
            *yv = x0 + win.iter().map(|v| v - x0).sum::<f64>() * inv;
        }
    }
    y
}

pub fn avg_pool_backward(g: &[f64], rows: usize, t: usize, kernel: usize, stride: usize) -> Vec<f64> {
    let t_out = (t - kernel) / stride + 1;
    let inv = 1.0 / kernel as f64;
    let mut gx = vec![0.0; rows * t];
    for r in 0..rows {
        let gxr = &mut gx[r * t..(r + 1) * t];
        for (o, &gv) in g[r * t_out..(r + 1) * t_out].iter().enumerate() {
            for v in &mut gxr[o * stride..o * stride + kernel] {
                *v += gv * inv;
            }
        }
    }
    gx
}

/// Non-overlapping max pooling; returns outputs and the argmax offset within
/// each window.
pub fn max_pool_forward(x: &[f64], rows: usize, t: usize, factor: usize) -> (Vec<f64>, Vec<u8>) {
    let t_out = t / factor;
    let mut y = vec![0.0; rows * t_out];
    let mut arg = vec![0u8; rows * t_out];
    for r in 0..rows {
        let xr = &x[r * t..(r + 1) * t];
        for o in 0..t_out {
            let win = &xr[o * factor..(o + 1) * factor];
            let mut best = 0;
            for (i, &v) in win.iter().enumerate().skip(1) {
                if v > win[best] {
                    best = i;
                }
            }
            y[r * t_out + o] = win[best];
            arg[r * t_out + o] = best as u8;
        }
    }
    (y, arg)
}

pub fn max_pool_backward(g: &[f64], arg: &[u8], rows: usize, t: usize, factor: usize) -> Vec<f64> {
    let t_out = t / factor;
    let mut gx = vec![0.0; rows * t];
    for r in 0..rows {
        for o in 0..t_out {
            let i = r * t_out + o;
            gx[r * t + o * factor + arg[i] as usize] += g[i];
        }
    }
    gx
}

pub fn upsample_forward(x: &[f64], rows: usize, t: usize, factor: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * t * factor);
    for &v in &x[..rows * t] {
        y.extend(std::iter::repeat_n(v, factor));
    }
    y
}

pub fn upsample_backward(g: &[f64], rows: usize, t: usize, factor: usize) -> Vec<f64> {
    g[..rows * t * factor]
        .chunks_exact(factor)
        .map(|c| c.iter().sum())
        .collect()
}

/// Softmax over axis 1 of `[a, n, b]`, with max subtraction.
pub fn softmax_axis1(x: &[f64], (a, n, b): (usize, usize, usize)) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for i in 0..a {
        for j in 0..b {
            let at = |c: usize| (i * n + c) * b + j;
            let m = (0..n).map(|c| x[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..n {
                let e = (x[at(c)] - m).exp();
                y[at(c)] = e;
                z += e;
            }
            for c in 0..n {
                y[at(c)] /= z;
            }
        }
    }
    y
}

pub fn softmax_axis1_backward(y: &[f64], g: &[f64], (a, n, b): (usize, usize, usize)) -> Vec<f64> {
    let mut gx = vec![0.0; y.len()];
    for i in 0..a {
        for j in 0..b {
            let at = |c: usize| (i * n + c) * b + j;
            let s: f64 = (0..n).map(|c| g[at(c)] * y[at(c)]).sum();
            for c in 0..n {
                gx[at(c)] = y[at(c)] * (g[at(c)] - s);
            }
        }
    }
    gx
}

/// Probability floor applied before taking logarithms in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean of `-ln p[target]` over unmasked positions of `[b, classes, e]`.
pub fn cross_entropy_forward(
    p: &[f64],
    (b, classes, e): (usize, usize, usize),
    targets: &[Option<usize>],
) -> Result<(f64, usize), KernelError> {
    if targets.len() != b * e {
        return Err(KernelError::Dimension(format!(
            "{} targets for {} prediction rows",
            targets.len(),
            b * e
        )));
    }
    let mut total = 0.0;
    let mut count = 0;
    for (idx, t) in targets.iter().enumerate() {
        if let Some(c) = *t {
            if c >= classes {
                return Err(KernelError::Dimension(format!("target class {c} >= {classes}")));
            }
            let (bi, ei) = (idx / e, idx % e);
            total -= p[(bi * classes + c) * e + ei].max(PROB_FLOOR).ln();
            count += 1;
        }
    }
    if count == 0 {
        return Err(KernelError::EmptyLoss);
    }
    Ok((total / count as f64, count))
}

pub fn cross_entropy_backward(
    p: &[f64],
    (_, classes, e): (usize, usize, usize),
    targets: &[Option<usize>],
    count: usize,
    g: f64,
) -> Vec<f64> {
    let mut gp = vec![0.0; p.len()];
    for (idx, t) in targets.iter().enumerate() {
        if let Some(c) = *t {
            let (bi, ei) = (idx / e, idx % e);
            let at = (bi * classes + c) * e + ei;
            // Clamped entries carry no gradient.
            if p[at] > PROB_FLOOR {
                gp[at] = -g / (p[at] * count as f64);
            }
        }
    }
    gp
}

pub(crate) fn check_same_len(a: &Array, b: &Array, what: &str) -> Result<(), KernelError> {
    if a.shape() != b.shape() {
        return Err(KernelError::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
