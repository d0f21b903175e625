//! Raw f64 kernels shared by the tape's forward, replay and backward paths.

use alloc::vec;
use alloc::vec::Vec;

/// y = x·W + b for x `[batch×inp]`, W `[inp×out]`.
pub(crate) fn affine(x: &[f64], w: &[f64], b: &[f64], batch: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for (xr, yr) in x.chunks_exact(inp).zip(y.chunks_exact_mut(out)) {
        yr.copy_from_slice(b);
        for (&xi, wr) in xr.iter().zip(w.chunks_exact(out)) {
            if xi == 0.0 {
                continue;
            }
            for (yo, &wo) in yr.iter_mut().zip(wr) {
                *yo += xi * wo;
            }
        }
    }
    y
}

/// Gradients of [`affine`] given dL/dy: returns (dx, dW, db).
pub(crate) fn affine_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    inp: usize,
    out: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out];
    for ((xr, dyr), dxr) in x.chunks_exact(inp).zip(dy.chunks_exact(out)).zip(dx.chunks_exact_mut(inp)) {
        for (d, &g) in db.iter_mut().zip(dyr) {
            *d += g;
        }
        for ((dxi, &xi), (wr, dwr)) in dxr.iter_mut().zip(xr).zip(w.chunks_exact(out).zip(dw.chunks_exact_mut(out))) {
            let mut acc = 0.0;
            for (&wo, &g) in wr.iter().zip(dyr) {
                acc += wo * g;
            }
            *dxi = acc;
            if xi != 0.0 {
                for (dwo, &g) in dwr.iter_mut().zip(dyr) {
                    *dwo += xi * g;
                }
            }
        }
    }
    (dx, dw, db)
}

/// y = x·Mᵀ for x `[batch×inp]`, M `[out×inp]`.
pub(crate) fn matmul_nt(x: &[f64], m: &[f64], inp: usize, out: usize) -> Vec<f64> {
    let batch = x.len() / inp.max(1);
    let mut y = vec![0.0; batch * out];
    for (xr, yr) in x.chunks_exact(inp).zip(y.chunks_exact_mut(out)) {
        for (yo, mr) in yr.iter_mut().zip(m.chunks_exact(inp)) {
            *yo = xr.iter().zip(mr).map(|(a, b)| a * b).sum();
        }
    }
    y
}

pub(crate) fn matmul_nt_backward(x: &[f64], m: &[f64], dy: &[f64], inp: usize, out: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dm = vec![0.0; m.len()];
    for ((xr, dyr), dxr) in x.chunks_exact(inp).zip(dy.chunks_exact(out)).zip(dx.chunks_exact_mut(inp)) {
        for ((&g, mr), dmr) in dyr.iter().zip(m.chunks_exact(inp)).zip(dm.chunks_exact_mut(inp)) {
            for ((dxi, &mi), (dmi, &xi)) in dxr.iter_mut().zip(mr).zip(dmr.iter_mut().zip(xr)) {
                *dxi += g * mi;
                *dmi += g * xi;
            }
        }
    }
    (dx, dm)
}

/// Geometry of a strided, zero-padded 2-D convolution.
///
/// For the transposed convolution the same struct is used with the roles of
/// "input" and "output" swapped: a deconvolution from `out_*` back to `in_*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output extent of a convolution, or `None` if the window does not tile evenly.
    pub fn conv_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        if padded < k || !(padded - k).is_multiple_of(stride) {
            return None;
        }
        Some((padded - k) / stride + 1)
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.in_c * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.out_c * self.out_h * self.out_w
    }

    /// Visit every (input index, output index, kernel index) triple of the
    /// convolution. Kernel layout is `[out_c × in_c × kh × kw]`.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        for b in 0..self.batch {
            for oc in 0..self.out_c {
                for oy in 0..self.out_h {
                    for ox in 0..self.out_w {
                        let o_idx = ((b * self.out_c + oc) * self.out_h + oy) * self.out_w + ox;
                        for ic in 0..self.in_c {
                            for ky in 0..self.kh {
                                let iy = oy as isize * s + ky as isize - p;
                                if iy < 0 || iy >= self.in_h as isize {
                                    continue;
                                }
                                for kx in 0..self.kw {
                                    let ix = ox as isize * s + kx as isize - p;
                                    if ix < 0 || ix >= self.in_w as isize {
                                        continue;
                                    }
                                    let i_idx =
                                        ((b * self.in_c + ic) * self.in_h + iy as usize) * self.in_w + ix as usize;
                                    let k_idx = ((oc * self.in_c + ic) * self.kh + ky) * self.kw + kx;
                                    f(i_idx, o_idx, k_idx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn spatial_out(&self) -> usize {
        self.out_h * self.out_w
    }

    fn spatial_in(&self) -> usize {
        self.in_h * self.in_w
    }
}

/// Cross-correlation `x[in] -> y[out]` plus per-output-channel bias.
pub(crate) fn conv2d(g: &ConvGeom, x: &[f64], k: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let mut y = vec![0.0; g.output_len()];
    if let Some(bias) = bias {
        for (chunk, i) in y.chunks_exact_mut(g.spatial_out()).zip(0..) {
            chunk.fill(bias[i % g.out_c]);
        }
    }
    g.for_each_tap(|i, o, kk| y[o] += x[i] * k[kk]);
    y
}

/// Exact adjoint of [`conv2d`] without bias: maps `dy[out] -> dx[in]`.
pub(crate) fn conv2d_adjoint(g: &ConvGeom, dy: &[f64], k: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; g.input_len()];
    g.for_each_tap(|i, o, kk| dx[i] += dy[o] * k[kk]);
    dx
}

/// dL/dk of [`conv2d`].
pub(crate) fn conv2d_kernel_grad(g: &ConvGeom, x: &[f64], dy: &[f64], k_len: usize) -> Vec<f64> {
    let mut dk = vec![0.0; k_len];
    g.for_each_tap(|i, o, kk| dk[kk] += x[i] * dy[o]);
    dk
}

/// Sum of `t` over batch and spatial extent per channel, for `[batch×c×h×w]` tensors.
pub(crate) fn channel_sums(t: &[f64], channels: usize, spatial: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for (chunk, i) in t.chunks_exact(spatial).zip(0..) {
        out[i % channels] += chunk.iter().sum::<f64>();
    }
    out
}

/// Transposed convolution: `x` lives on the geometry's output side, the
/// result on its input side. Bias is per result channel (`in_c`).
pub(crate) fn deconv2d(g: &ConvGeom, x: &[f64], k: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let mut y = conv2d_adjoint(g, x, k);
    if let Some(bias) = bias {
        for (chunk, i) in y.chunks_exact_mut(g.spatial_in()).zip(0..) {
            let b = bias[i % g.in_c];
            for v in chunk {
                *v += b;
            }
        }
    }
    y
}

pub(crate) fn deconv_bias_grad(g: &ConvGeom, dy: &[f64]) -> Vec<f64> {
    channel_sums(dy, g.in_c, g.spatial_in())
}

pub(crate) fn conv_bias_grad(g: &ConvGeom, dy: &[f64]) -> Vec<f64> {
    channel_sums(dy, g.out_c, g.spatial_out())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_hand_multiply() {
        let y = affine(&[1.0, 2.0], &[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 1, 2, 2);
        assert_eq!(y, vec![8.0, 11.0]);
    }

    #[test]
    fn conv_extent_halves() {
        assert_eq!(ConvGeom::conv_extent(64, 4, 2, 1), Some(32));
        assert_eq!(ConvGeom::conv_extent(4, 4, 2, 1), Some(2));
        assert_eq!(ConvGeom::conv_extent(5, 4, 2, 1), None);
    }
}
