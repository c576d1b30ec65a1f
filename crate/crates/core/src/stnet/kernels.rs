//! Raw 3-D convolution and pooling loops over `[C, D, H, W]` buffers.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

pub fn out_dim(len: usize, k: usize, s: usize, p: usize) -> usize {
    if len + 2 * p < k {
        0
    } else {
        (len + 2 * p - k) / s + 1
    }
}

impl Conv3dGeom {
    pub fn output(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| out_dim(self.input[a], self.kernel[a], self.stride[a], self.pad[a]))
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }
}

/// Output positions `o` with `o*s + k - p` inside `[0, len)`.
fn valid_range(out: usize, len: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    // first o with o*s + k >= p
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    // last o with o*s + k - p < len
    let hi = if len + p <= k {
        0
    } else {
        ((len + p - k - 1) / s + 1).min(out)
    };
    (lo.min(hi), hi)
}

impl Conv3dGeom {
    /// A 1x1x1, stride-1, unpadded conv reads its input as the column
    /// matrix directly.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }
}

/// Column matrix `[in_ch * kvol, out_vol]`: row `(ci, tap)` holds the input
/// sample each output voxel sees through that tap, zero where padded.
fn im2col(g: &Conv3dGeom, x: &[f64]) -> Vec<f64> {
    let [id, ih, iw] = g.input;
    let [od, oh, ow] = g.output();
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let ovol = od * oh * ow;
    let ivol = id * ih * iw;
    let kvol = g.kvol();
    let mut col = vec![0.0; g.in_ch * kvol * ovol];
    col.par_chunks_mut((kvol * ovol).max(1))
        .enumerate()
        .for_each(|(ci, dst)| {
            let src = &x[ci * ivol..(ci + 1) * ivol];
            for a in 0..kd {
                let (d0, d1) = valid_range(od, id, a, sd, pd);
                for b in 0..kh {
                    let (h0, h1) = valid_range(oh, ih, b, sh, ph);
                    for c in 0..kw {
                        let (w0, w1) = valid_range(ow, iw, c, sw, pw);
                        let row = &mut dst[((a * kh + b) * kw + c) * ovol..][..ovol];
                        for o_d in d0..d1 {
                            let i_d = o_d * sd + a - pd;
                            for o_h in h0..h1 {
                                let i_h = o_h * sh + b - ph;
                                let irow = &src[(i_d * ih + i_h) * iw..][..iw];
                                let orow = &mut row[(o_d * oh + o_h) * ow..][..ow];
                                if sw == 1 {
                                    let off = w0 + c - pw;
                                    orow[w0..w1].copy_from_slice(&irow[off..off + (w1 - w0)]);
                                } else {
                                    for o_w in w0..w1 {
                                        orow[o_w] = irow[o_w * sw + c - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    col
}

/// Adds a column-matrix gradient back onto the input positions it was
/// gathered from.
fn col2im(g: &Conv3dGeom, col: &[f64]) -> Vec<f64> {
    let [id, ih, iw] = g.input;
    let [od, oh, ow] = g.output();
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let ovol = od * oh * ow;
    let ivol = id * ih * iw;
    let kvol = g.kvol();
    let mut gx = vec![0.0; g.in_ch * ivol];
    gx.par_chunks_mut(ivol.max(1))
        .enumerate()
        .for_each(|(ci, dst)| {
            let src = &col[ci * kvol * ovol..(ci + 1) * kvol * ovol];
            for a in 0..kd {
                let (d0, d1) = valid_range(od, id, a, sd, pd);
                for b in 0..kh {
                    let (h0, h1) = valid_range(oh, ih, b, sh, ph);
                    for c in 0..kw {
                        let (w0, w1) = valid_range(ow, iw, c, sw, pw);
                        let row = &src[((a * kh + b) * kw + c) * ovol..][..ovol];
                        for o_d in d0..d1 {
                            let i_d = o_d * sd + a - pd;
                            for o_h in h0..h1 {
                                let i_h = o_h * sh + b - ph;
                                let xrow = &mut dst[(i_d * ih + i_h) * iw..][..iw];
                                let grow = &row[(o_d * oh + o_h) * ow..][..ow];
                                if sw == 1 {
                                    let off = w0 + c - pw;
                                    for (x, g) in
                                        xrow[off..off + (w1 - w0)].iter_mut().zip(&grow[w0..w1])
                                    {
                                        *x += g;
                                    }
                                } else {
                                    for o_w in w0..w1 {
                                        xrow[o_w * sw + c - pw] += grow[o_w];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    gx
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// `out[m, n] += a[m, k] * b[k, n]`, rows of `out` in parallel.
fn gemm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    if n == 0 {
        return;
    }
    out.par_chunks_mut(n)
        .enumerate()
        .take(m)
        .for_each(|(i, orow)| {
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        });
}

fn with_col<T>(g: &Conv3dGeom, x: &[f64], f: impl FnOnce(&[f64]) -> T) -> T {
    if g.is_pointwise() {
        f(x)
    } else {
        f(&im2col(g, x))
    }
}

pub fn conv3d_forward(g: &Conv3dGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let ovol: usize = g.output().iter().product();
    let k = g.in_ch * g.kvol();
    let mut out = vec![0.0; g.out_ch * ovol];
    if let Some(b) = b {
        for (row, bv) in out.chunks_mut(ovol.max(1)).zip(b) {
            row.fill(*bv);
        }
    }
    with_col(g, x, |col| gemm_acc(&mut out, w, col, g.out_ch, k, ovol));
    out
}

/// Gradient with respect to the input.
pub fn conv3d_backward_input(g: &Conv3dGeom, gy: &[f64], w: &[f64]) -> Vec<f64> {
    let ovol: usize = g.output().iter().product();
    let k = g.in_ch * g.kvol();
    // w^T: [k, out_ch]
    let mut wt = vec![0.0; k * g.out_ch];
    for co in 0..g.out_ch {
        for r in 0..k {
            wt[r * g.out_ch + co] = w[co * k + r];
        }
    }
    let mut gcol = vec![0.0; k * ovol];
    gemm_acc(&mut gcol, &wt, gy, k, g.out_ch, ovol);
    if g.is_pointwise() {
        gcol
    } else {
        col2im(g, &gcol)
    }
}

/// Gradients with respect to weights and bias.
pub fn conv3d_backward_params(g: &Conv3dGeom, gy: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ovol: usize = g.output().iter().product();
    let k = g.in_ch * g.kvol();
    let mut gw = vec![0.0; g.out_ch * k];
    with_col(g, x, |col| {
        gw.par_chunks_mut(k.max(1))
            .enumerate()
            .for_each(|(co, dst)| {
                let grow = &gy[co * ovol..(co + 1) * ovol];
                for (r, d) in dst.iter_mut().enumerate() {
                    *d = dot(grow, &col[r * ovol..(r + 1) * ovol]);
                }
            })
    });
    let gb = (0..g.out_ch)
        .map(|co| gy[co * ovol..(co + 1) * ovol].iter().sum())
        .collect();
    (gw, gb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl PoolGeom {
    pub fn output(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| out_dim(self.input[a], self.kernel[a], self.stride[a], self.pad[a]))
    }
}

/// One pooling pass along a single axis of a `[outer, len, inner]` view.
/// Carries the flat input index of each running maximum.
fn pool_axis(
    vals: &[f64],
    idx: &[usize],
    outer: usize,
    len: usize,
    inner: usize,
    (k, s, p): (usize, usize, usize),
) -> (Vec<f64>, Vec<usize>) {
    let out = out_dim(len, k, s, p);
    let mut ov = vec![0.0; outer * out * inner];
    let mut oi = vec![0usize; outer * out * inner];
    for a in 0..outer {
        for o in 0..out {
            let lo = (o * s).saturating_sub(p);
            let hi = (o * s + k - p).min(len);
            let dst = (a * out + o) * inner;
            let first = (a * len + lo) * inner;
            ov[dst..dst + inner].copy_from_slice(&vals[first..first + inner]);
            oi[dst..dst + inner].copy_from_slice(&idx[first..first + inner]);
            for i in lo + 1..hi {
                let src = (a * len + i) * inner;
                for j in 0..inner {
                    if vals[src + j] > ov[dst + j] {
                        ov[dst + j] = vals[src + j];
                        oi[dst + j] = idx[src + j];
                    }
                }
            }
        }
    }
    (ov, oi)
}

/// Max pooling; padded positions never win and ties go to the first
/// position in `[D, H, W]` scan order. Returns values and the flat input
/// index of each maximum.
pub fn maxpool3d_forward(g: &PoolGeom, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let [id, ih, iw] = g.input;
    let [od, oh, _] = g.output();
    let c = g.channels;
    let axis = |a: usize| (g.kernel[a], g.stride[a], g.pad[a]);
    let idx: Vec<usize> = (0..x.len()).collect();
    let (v, i) = pool_axis(x, &idx, c * id * ih, iw, 1, axis(2));
    let ow = v.len() / (c * id * ih).max(1);
    let (v, i) = pool_axis(&v, &i, c * id, ih, ow, axis(1));
    let out = pool_axis(&v, &i, c, id, oh * ow, axis(0));
    debug_assert_eq!(out.0.len(), c * od * oh * ow);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_scan() {
        for len in 1..9 {
            for k in 0..4 {
                for s in 1..4 {
                    for p in 0..3 {
                        let out = out_dim(len, 3, s, p);
                        let expect: Vec<usize> = (0..out)
                            .filter(|&o| {
                                let i = (o * s + k) as isize - p as isize;
                                i >= 0 && (i as usize) < len
                            })
                            .collect();
                        let (lo, hi) = valid_range(out, len, k, s, p);
                        assert_eq!(
                            (lo..hi).collect::<Vec<_>>(),
                            expect,
                            "len {len} k {k} s {s} p {p}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn padded_pool_ignores_padding() {
        let g = PoolGeom {
            channels: 1,
            input: [1, 2, 2],
            kernel: [1, 3, 3],
            stride: [1, 1, 1],
            pad: [0, 1, 1],
        };
        let (v, _) = maxpool3d_forward(&g, &[-4.0, -3.0, -2.0, -1.0]);
        assert_eq!(v, vec![-1.0; 4]);
    }

    /// Direct window scan with first-max tie breaking.
    fn pool_oracle(g: &PoolGeom, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let [id, ih, iw] = g.input;
        let [od, oh, ow] = g.output();
        let mut v = Vec::new();
        let mut arg = Vec::new();
        for ch in 0..g.channels {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = (f64::NEG_INFINITY, usize::MAX);
                        for a in 0..g.kernel[0] {
                            for b in 0..g.kernel[1] {
                                for c in 0..g.kernel[2] {
                                    let p = [
                                        z * g.stride[0] + a,
                                        y * g.stride[1] + b,
                                        xx * g.stride[2] + c,
                                    ];
                                    if (0..3)
                                        .any(|k| p[k] < g.pad[k] || p[k] - g.pad[k] >= g.input[k])
                                    {
                                        continue;
                                    }
                                    let i = ((ch * id + p[0] - g.pad[0]) * ih + p[1] - g.pad[1])
                                        * iw
                                        + p[2]
                                        - g.pad[2];
                                    if best.1 == usize::MAX || x[i] > best.0 {
                                        best = (x[i], i);
                                    }
                                }
                            }
                        }
                        v.push(best.0);
                        arg.push(best.1);
                    }
                }
            }
        }
        (v, arg)
    }

    #[test]
    fn separable_pool_matches_window_scan() {
        let mut state = 7u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            // coarse values so ties are common
            ((state >> 33) % 5) as f64
        };
        for (kernel, stride, pad) in [
            ([3; 3], [1; 3], [1; 3]),
            ([2; 3], [2; 3], [0; 3]),
            ([1, 2, 2], [1, 2, 2], [0; 3]),
            ([3, 2, 3], [2, 1, 2], [1, 0, 2]),
        ] {
            let g = PoolGeom {
                channels: 2,
                input: [3, 5, 6],
                kernel,
                stride,
                pad,
            };
            let x: Vec<f64> = (0..2 * 90).map(|_| next()).collect();
            assert_eq!(maxpool3d_forward(&g, &x), pool_oracle(&g, &x));
        }
    }
}
