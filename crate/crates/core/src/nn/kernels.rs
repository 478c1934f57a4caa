//! Raw forward/backward loops for the layer types. Layouts are channel-first
//! and row-major; no batch dimension.

use std::ops::Range;

use super::tensor::Scalar;

/// Indices `i < n_src` with `i * stride + tap - pad` inside `0..n_dst`.
#[inline]
fn span(tap: usize, stride: usize, pad: usize, n_src: usize, n_dst: usize) -> Range<usize> {
    let (t, s, p) = (tap as i64, stride as i64, pad as i64);
    let lo = (p - t).max(0);
    let lo = (lo + s - 1) / s;
    let hi_incl = (n_dst as i64 - 1 + p - t).div_euclid(s);
    let hi = (hi_incl + 1).clamp(0, n_src as i64);
    (lo.min(hi)) as usize..hi as usize
}

#[inline]
fn shifted(i: usize, stride: usize, tap: usize, pad: usize) -> usize {
    i * stride + tap - pad
}

pub fn conv_out_size(n: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

pub fn conv_transpose_out_size(n: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    ((n - 1) * stride + kernel).checked_sub(2 * pad)
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            conv_out_size(self.height, self.kernel, self.stride, self.pad).unwrap_or(0),
            conv_out_size(self.width, self.kernel, self.stride, self.pad).unwrap_or(0),
        )
    }

    pub fn forward<T: Scalar>(&self, x: &[T], w: &[T], b: &[T], y: &mut [T]) {
        let (ho, wo) = self.out_hw();
        let (h, wd, k, s, p) = (self.height, self.width, self.kernel, self.stride, self.pad);
        for co in 0..self.c_out {
            let yc = &mut y[co * ho * wo..(co + 1) * ho * wo];
            yc.iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..self.c_in {
                let xc = &x[ci * h * wd..(ci + 1) * h * wd];
                for ky in 0..k {
                    let rows = span(ky, s, p, ho, h);
                    for kx in 0..k {
                        let cols = span(kx, s, p, wo, wd);
                        let wv = w[((co * self.c_in + ci) * k + ky) * k + kx];
                        for oy in rows.clone() {
                            let xr = &xc[shifted(oy, s, ky, p) * wd..];
                            let yr = &mut yc[oy * wo..(oy + 1) * wo];
                            for ox in cols.clone() {
                                yr[ox] += wv * xr[shifted(ox, s, kx, p)];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn backward<T: Scalar>(&self, x: &[T], w: &[T], gy: &[T], gx: &mut [T], gw: &mut [T], gb: &mut [T]) {
        let (ho, wo) = self.out_hw();
        let (h, wd, k, s, p) = (self.height, self.width, self.kernel, self.stride, self.pad);
        for co in 0..self.c_out {
            let gyc = &gy[co * ho * wo..(co + 1) * ho * wo];
            gb[co] += gyc.iter().copied().sum();
            for ci in 0..self.c_in {
                let xc = &x[ci * h * wd..(ci + 1) * h * wd];
                let gxc = &mut gx[ci * h * wd..(ci + 1) * h * wd];
                for ky in 0..k {
                    let rows = span(ky, s, p, ho, h);
                    for kx in 0..k {
                        let cols = span(kx, s, p, wo, wd);
                        let wi = ((co * self.c_in + ci) * k + ky) * k + kx;
                        let wv = w[wi];
                        let mut acc = T::zero();
                        for oy in rows.clone() {
                            let iy = shifted(oy, s, ky, p);
                            let gyr = &gyc[oy * wo..(oy + 1) * wo];
                            for ox in cols.clone() {
                                let ix = iy * wd + shifted(ox, s, kx, p);
                                acc += gyr[ox] * xc[ix];
                                gxc[ix] += wv * gyr[ox];
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
    }
}

/// `y = W x + b` with `W` stored `[out, in]`.
pub fn linear_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], y: &mut [T]) {
    let n = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n..(o + 1) * n];
        *yo = b[o] + row.iter().zip(x).map(|(&a, &c)| a * c).sum::<T>();
    }
}

pub fn linear_backward<T: Scalar>(x: &[T], w: &[T], gy: &[T], gx: &mut [T], gw: &mut [T], gb: &mut [T]) {
    let n = x.len();
    for (o, &g) in gy.iter().enumerate() {
        gb[o] += g;
        if g == T::zero() {
            continue;
        }
        let row = &w[o * n..(o + 1) * n];
        let grow = &mut gw[o * n..(o + 1) * n];
        for i in 0..n {
            grow[i] += g * x[i];
            gx[i] += g * row[i];
        }
    }
}

/// Transposed 3D convolution on cubic inputs; weight layout `[in, out, k, k, k]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvTranspose3d {
    pub c_in: usize,
    pub c_out: usize,
    pub size: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose3d {
    pub fn out_size(&self) -> usize {
        conv_transpose_out_size(self.size, self.kernel, self.stride, self.pad).unwrap_or(0)
    }

    pub fn forward<T: Scalar>(&self, x: &[T], w: &[T], b: &[T], y: &mut [T]) {
        let (n, k, s, p) = (self.size, self.kernel, self.stride, self.pad);
        let m = self.out_size();
        let (vin, vout) = (n * n * n, m * m * m);
        for co in 0..self.c_out {
            y[co * vout..(co + 1) * vout].iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..self.c_in {
            let xc = &x[ci * vin..(ci + 1) * vin];
            for co in 0..self.c_out {
                let yc = &mut y[co * vout..(co + 1) * vout];
                let wbase = (ci * self.c_out + co) * k * k * k;
                for kz in 0..k {
                    let zs = span(kz, s, p, n, m);
                    for ky in 0..k {
                        let ys = span(ky, s, p, n, m);
                        for kx in 0..k {
                            let xs = span(kx, s, p, n, m);
                            let wv = w[wbase + (kz * k + ky) * k + kx];
                            for iz in zs.clone() {
                                let oz = shifted(iz, s, kz, p);
                                for iy in ys.clone() {
                                    let oy = shifted(iy, s, ky, p);
                                    let xr = &xc[(iz * n + iy) * n..];
                                    let yr = &mut yc[(oz * m + oy) * m..];
                                    for ix in xs.clone() {
                                        yr[shifted(ix, s, kx, p)] += wv * xr[ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn backward<T: Scalar>(&self, x: &[T], w: &[T], gy: &[T], gx: &mut [T], gw: &mut [T], gb: &mut [T]) {
        let (n, k, s, p) = (self.size, self.kernel, self.stride, self.pad);
        let m = self.out_size();
        let (vin, vout) = (n * n * n, m * m * m);
        for co in 0..self.c_out {
            gb[co] += gy[co * vout..(co + 1) * vout].iter().copied().sum();
        }
        for ci in 0..self.c_in {
            let xc = &x[ci * vin..(ci + 1) * vin];
            let gxc = &mut gx[ci * vin..(ci + 1) * vin];
            for co in 0..self.c_out {
                let gyc = &gy[co * vout..(co + 1) * vout];
                let wbase = (ci * self.c_out + co) * k * k * k;
                for kz in 0..k {
                    let zs = span(kz, s, p, n, m);
                    for ky in 0..k {
                        let ys = span(ky, s, p, n, m);
                        for kx in 0..k {
                            let xs = span(kx, s, p, n, m);
                            let wi = wbase + (kz * k + ky) * k + kx;
                            let wv = w[wi];
                            let mut acc = T::zero();
                            for iz in zs.clone() {
                                let oz = shifted(iz, s, kz, p);
                                for iy in ys.clone() {
                                    let oy = shifted(iy, s, ky, p);
                                    let row = (iz * n + iy) * n;
                                    let grow = (oz * m + oy) * m;
                                    for ix in xs.clone() {
                                        let g = gyc[grow + shifted(ix, s, kx, p)];
                                        acc += g * xc[row + ix];
                                        gxc[row + ix] += wv * g;
                                    }
                                }
                            }
                            gw[wi] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// 1×1×1 convolution over `voxels` positions; weight layout `[out, in]`.
pub fn pointwise_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], c_in: usize, c_out: usize, voxels: usize, y: &mut [T]) {
    for co in 0..c_out {
        let yc = &mut y[co * voxels..(co + 1) * voxels];
        yc.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..c_in {
            let wv = w[co * c_in + ci];
            let xc = &x[ci * voxels..(ci + 1) * voxels];
            for (yv, &xv) in yc.iter_mut().zip(xc) {
                *yv += wv * xv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn pointwise_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gy: &[T],
    c_in: usize,
    c_out: usize,
    voxels: usize,
    gx: &mut [T],
    gw: &mut [T],
    gb: &mut [T],
) {
    for co in 0..c_out {
        let gyc = &gy[co * voxels..(co + 1) * voxels];
        gb[co] += gyc.iter().copied().sum();
        for ci in 0..c_in {
            let wv = w[co * c_in + ci];
            let xc = &x[ci * voxels..(ci + 1) * voxels];
            let gxc = &mut gx[ci * voxels..(ci + 1) * voxels];
            let mut acc = T::zero();
            for v in 0..voxels {
                acc += gyc[v] * xc[v];
                gxc[v] += wv * gyc[v];
            }
            gw[co * c_in + ci] += acc;
        }
    }
}
