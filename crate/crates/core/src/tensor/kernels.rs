//! Raw NHWC compute kernels behind the tape operators.

use super::Real;

/// Geometry of a "same"-padded, stride-1 convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub c_in: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    /// Input coordinate read by output coordinate `o` through tap `t`, if inside the map.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let i = (o + t * self.dilation).checked_sub(self.pad())?;
        (i < extent).then_some(i)
    }

    fn positions(&self) -> usize {
        self.batch * self.height * self.width
    }
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    g: ConvGeom,
    x: &[T],
    weight: &[T],
    bias: &[T],
    c_out: usize,
) -> Vec<T> {
    let (h, w, c_in, k) = (g.height, g.width, g.c_in, g.kernel);
    let mut out = vec![T::zero(); g.positions() * c_out];
    for b in 0..g.batch {
        for oh in 0..h {
            for ow in 0..w {
                let o = ((b * h + oh) * w + ow) * c_out;
                let out_px = &mut out[o..o + c_out];
                out_px.copy_from_slice(bias);
                for kh in 0..k {
                    let Some(ih) = g.source(oh, kh, h) else {
                        continue;
                    };
                    for kw in 0..k {
                        let Some(iw) = g.source(ow, kw, w) else {
                            continue;
                        };
                        let xi = ((b * h + ih) * w + iw) * c_in;
                        let tap = (kh * k + kw) * c_in * c_out;
                        for ci in 0..c_in {
                            let wrow = &weight[tap + ci * c_out..tap + (ci + 1) * c_out];
                            axpy(x[xi + ci], wrow, out_px);
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    g: ConvGeom,
    x: &[T],
    weight: &[T],
    c_out: usize,
    dout: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let (h, w, c_in, k) = (g.height, g.width, g.c_in, g.kernel);
    let taps = k * k;
    // weight transposed per tap to [c_out][c_in] so the input gradient is an axpy
    let wt = need[0].then(|| {
        let mut wt = vec![T::zero(); weight.len()];
        for t in 0..taps {
            for ci in 0..c_in {
                for co in 0..c_out {
                    wt[(t * c_out + co) * c_in + ci] = weight[(t * c_in + ci) * c_out + co];
                }
            }
        }
        wt
    });
    let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = need[1].then(|| vec![T::zero(); weight.len()]);
    let mut db = need[2].then(|| vec![T::zero(); c_out]);

    for b in 0..g.batch {
        for oh in 0..h {
            for ow in 0..w {
                let o = ((b * h + oh) * w + ow) * c_out;
                let dpx = &dout[o..o + c_out];
                if let Some(db) = db.as_mut() {
                    for (a, &d) in db.iter_mut().zip(dpx) {
                        *a += d;
                    }
                }
                for kh in 0..k {
                    let Some(ih) = g.source(oh, kh, h) else {
                        continue;
                    };
                    for kw in 0..k {
                        let Some(iw) = g.source(ow, kw, w) else {
                            continue;
                        };
                        let xi = ((b * h + ih) * w + iw) * c_in;
                        let t = kh * k + kw;
                        if let Some(dw) = dw.as_mut() {
                            let tap = t * c_in * c_out;
                            for ci in 0..c_in {
                                let row = &mut dw[tap + ci * c_out..tap + (ci + 1) * c_out];
                                axpy(x[xi + ci], dpx, row);
                            }
                        }
                        if let (Some(dx), Some(wt)) = (dx.as_mut(), wt.as_ref()) {
                            let dxp = &mut dx[xi..xi + c_in];
                            let tap = t * c_out * c_in;
                            for (co, &d) in dpx.iter().enumerate() {
                                axpy(d, &wt[tap + co * c_in..tap + (co + 1) * c_in], dxp);
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Depthwise convolution; output channel `ci * D_m + m` filters input channel `ci`.
pub(crate) fn depthwise_forward<T: Real>(
    g: ConvGeom,
    x: &[T],
    weight: &[T],
    bias: &[T],
    multiplier: usize,
) -> Vec<T> {
    let (h, w, c_in, k) = (g.height, g.width, g.c_in, g.kernel);
    let c_out = c_in * multiplier;
    let mut out = vec![T::zero(); g.positions() * c_out];
    for b in 0..g.batch {
        for oh in 0..h {
            for ow in 0..w {
                let o = ((b * h + oh) * w + ow) * c_out;
                let out_px = &mut out[o..o + c_out];
                out_px.copy_from_slice(bias);
                for kh in 0..k {
                    let Some(ih) = g.source(oh, kh, h) else {
                        continue;
                    };
                    for kw in 0..k {
                        let Some(iw) = g.source(ow, kw, w) else {
                            continue;
                        };
                        let xi = ((b * h + ih) * w + iw) * c_in;
                        let xpx = &x[xi..xi + c_in];
                        let wtap = &weight[(kh * k + kw) * c_out..(kh * k + kw + 1) * c_out];
                        if multiplier == 1 {
                            for ((o, &xv), &wv) in out_px.iter_mut().zip(xpx).zip(wtap) {
                                *o += xv * wv;
                            }
                        } else {
                            for (j, o) in out_px.iter_mut().enumerate() {
                                *o += xpx[j / multiplier] * wtap[j];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<T: Real>(
    g: ConvGeom,
    x: &[T],
    weight: &[T],
    multiplier: usize,
    dout: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let (h, w, c_in, k) = (g.height, g.width, g.c_in, g.kernel);
    let c_out = c_in * multiplier;
    let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = need[1].then(|| vec![T::zero(); weight.len()]);
    let mut db = need[2].then(|| vec![T::zero(); c_out]);
    for b in 0..g.batch {
        for oh in 0..h {
            for ow in 0..w {
                let o = ((b * h + oh) * w + ow) * c_out;
                let dpx = &dout[o..o + c_out];
                if let Some(db) = db.as_mut() {
                    for (a, &d) in db.iter_mut().zip(dpx) {
                        *a += d;
                    }
                }
                for kh in 0..k {
                    let Some(ih) = g.source(oh, kh, h) else {
                        continue;
                    };
                    for kw in 0..k {
                        let Some(iw) = g.source(ow, kw, w) else {
                            continue;
                        };
                        let xi = ((b * h + ih) * w + iw) * c_in;
                        let t = (kh * k + kw) * c_out;
                        for j in 0..c_out {
                            let ci = j / multiplier;
                            if let Some(dw) = dw.as_mut() {
                                dw[t + j] += x[xi + ci] * dpx[j];
                            }
                            if let Some(dx) = dx.as_mut() {
                                dx[xi + ci] += weight[t + j] * dpx[j];
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Per-position statistics cached by the layer-norm forward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Real>(
    x: &[T],
    channels: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, NormCache<T>) {
    let positions = x.len() / channels;
    let n = T::of(channels as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); positions];
    for p in 0..positions {
        let px = &x[p * channels..(p + 1) * channels];
        let mean = px.iter().copied().sum::<T>() / n;
        let var = px.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = (var + eps).sqrt().recip();
        inv_std[p] = rstd;
        for c in 0..channels {
            let xh = (px[c] - mean) * rstd;
            normalized[p * channels + c] = xh;
            out[p * channels + c] = xh * gamma[c] + beta[c];
        }
    }
    (
        out,
        NormCache {
            normalized,
            inv_std,
        },
    )
}

pub(crate) fn layer_norm_backward<T: Real>(
    cache: &NormCache<T>,
    channels: usize,
    gamma: &[T],
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let positions = dout.len() / channels;
    let n = T::of(channels as f64);
    let mut dx = vec![T::zero(); dout.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    let mut dxhat = vec![T::zero(); channels];
    for p in 0..positions {
        let base = p * channels;
        let xh = &cache.normalized[base..base + channels];
        let dy = &dout[base..base + channels];
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for c in 0..channels {
            dgamma[c] += dy[c] * xh[c];
            dbeta[c] += dy[c];
            dxhat[c] = dy[c] * gamma[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
        }
        mean_d = mean_d / n;
        mean_dx = mean_dx / n;
        let rstd = cache.inv_std[p];
        for c in 0..channels {
            dx[base + c] = rstd * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    (dx, dgamma, dbeta)
}
