//! Spatial primitives on C x H x W tensors: 2d convolution, 2x2 pooling and
//! bilinear upsampling. These carry essentially all of the training FLOPs, so
//! the inner loops run over contiguous rows.

use super::tape::{finish, Step};
use super::tensor::Tensor;
use crate::{Error, Result};

fn shape3(op: &'static str, t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape {
            op,
            shape: t.shape().to_vec(),
            msg: "expected a C x H x W tensor".into(),
        }),
    }
}

fn pad_plane(src: &[f64], h: usize, w: usize, pad: usize, dst: &mut [f64]) {
    let wp = w + 2 * pad;
    for y in 0..h {
        let drow = (y + pad) * wp + pad;
        dst[drow..drow + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

/// 2d cross-correlation with zero padding. `kernel` is CO x CI x KH x KW,
/// `bias` (optional) is a length-CO vector added per output channel.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let [ci, h, w] = shape3("conv2d", input)?;
    let &[co, ci_k, kh, kw] = kernel.shape() else {
        return Err(Error::Shape {
            op: "conv2d",
            shape: kernel.shape().to_vec(),
            msg: "expected a CO x CI x KH x KW kernel".into(),
        });
    };
    if ci_k != ci {
        return Err(Error::Dimension {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::contract("conv2d stride must be positive"));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::Shape {
            op: "conv2d",
            shape: input.shape().to_vec(),
            msg: format!("kernel {kh}x{kw} larger than padded input"),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(Error::Dimension {
                op: "conv2d",
                lhs: kernel.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);

    let mut padded = vec![0.0; ci * hp * wp];
    for c in 0..ci {
        pad_plane(
            &input.data()[c * h * w..(c + 1) * h * w],
            h,
            w,
            pad,
            &mut padded[c * hp * wp..(c + 1) * hp * wp],
        );
    }

    let kdat = kernel.data();
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        let out_ch = &mut out[o * ho * wo..(o + 1) * ho * wo];
        if let Some(b) = bias {
            out_ch.fill(b.data()[o]);
        }
        for c in 0..ci {
            let plane = &padded[c * hp * wp..(c + 1) * hp * wp];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kdat[((o * ci + c) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..ho {
                        let in_row = &plane[(y * stride + ky) * wp + kx..];
                        let out_row = &mut out_ch[y * wo..(y + 1) * wo];
                        if stride == 1 {
                            for (ov, iv) in out_row.iter_mut().zip(&in_row[..wo]) {
                                *ov += wv * iv;
                            }
                        } else {
                            for (x, ov) in out_row.iter_mut().enumerate() {
                                *ov += wv * in_row[x * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    let step = Step::Conv2d {
        input: input.data_arc(),
        kernel: kernel.data_arc(),
        in_shape: [ci, h, w],
        k_shape: [co, ci, kh, kw],
        stride,
        pad,
    };
    let parents: Vec<&Tensor> = match bias {
        Some(b) => vec![input, kernel, b],
        None => vec![input, kernel],
    };
    finish("conv2d", &parents, step, vec![co, ho, wo], out)
}

/// Gradients for (input, kernel, bias) of a recorded conv2d.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    in_shape: [usize; 3],
    k_shape: [usize; 4],
    stride: usize,
    pad: usize,
    grad: &[f64],
    wanted: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let [ci, h, w] = in_shape;
    let [co, _, kh, kw] = k_shape;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let want = |slot: usize| wanted.get(slot).copied().unwrap_or(false);

    let need_padded = want(1);
    let mut padded = Vec::new();
    if need_padded {
        padded = vec![0.0; ci * hp * wp];
        for c in 0..ci {
            pad_plane(
                &input[c * h * w..(c + 1) * h * w],
                h,
                w,
                pad,
                &mut padded[c * hp * wp..(c + 1) * hp * wp],
            );
        }
    }

    let d_input = want(0).then(|| {
        let mut dpad = vec![0.0; ci * hp * wp];
        for o in 0..co {
            let g_ch = &grad[o * ho * wo..(o + 1) * ho * wo];
            for c in 0..ci {
                let dplane = &mut dpad[c * hp * wp..(c + 1) * hp * wp];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = kernel[((o * ci + c) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..ho {
                            let g_row = &g_ch[y * wo..(y + 1) * wo];
                            let d_row = &mut dplane[(y * stride + ky) * wp + kx..];
                            if stride == 1 {
                                for (dv, gv) in d_row[..wo].iter_mut().zip(g_row) {
                                    *dv += wv * gv;
                                }
                            } else {
                                for (x, gv) in g_row.iter().enumerate() {
                                    d_row[x * stride] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        // Crop the padding back off.
        let mut din = vec![0.0; ci * h * w];
        for c in 0..ci {
            let dplane = &dpad[c * hp * wp..(c + 1) * hp * wp];
            for y in 0..h {
                let srow = (y + pad) * wp + pad;
                din[c * h * w + y * w..c * h * w + (y + 1) * w]
                    .copy_from_slice(&dplane[srow..srow + w]);
            }
        }
        din
    });

    let d_kernel = want(1).then(|| {
        let mut dk = vec![0.0; co * ci * kh * kw];
        for o in 0..co {
            let g_ch = &grad[o * ho * wo..(o + 1) * ho * wo];
            for c in 0..ci {
                let plane = &padded[c * hp * wp..(c + 1) * hp * wp];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0;
                        for y in 0..ho {
                            let g_row = &g_ch[y * wo..(y + 1) * wo];
                            let in_row = &plane[(y * stride + ky) * wp + kx..];
                            if stride == 1 {
                                acc += g_row
                                    .iter()
                                    .zip(&in_row[..wo])
                                    .map(|(g, i)| g * i)
                                    .sum::<f64>();
                            } else {
                                for (x, gv) in g_row.iter().enumerate() {
                                    acc += gv * in_row[x * stride];
                                }
                            }
                        }
                        dk[((o * ci + c) * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
        dk
    });

    let d_bias = want(2).then(|| {
        (0..co)
            .map(|o| grad[o * ho * wo..(o + 1) * ho * wo].iter().sum())
            .collect()
    });

    vec![d_input, d_kernel, d_bias]
}

/// 2x2 max pooling with stride 2. Spatial dims must be even. Ties route the
/// gradient to the first maximum in scan order, keeping backward
/// deterministic.
pub fn max_pool2(input: &Tensor) -> Result<Tensor> {
    let [c, h, w] = shape3("max_pool2", input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape {
            op: "max_pool2",
            shape: input.shape().to_vec(),
            msg: "spatial dims must be even".into(),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let src = input.data();
    let mut out = vec![0.0; c * ho * wo];
    let mut argmax = vec![0usize; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let base = ch * h * w + 2 * y * w + 2 * x;
                let mut best = src[base];
                let mut best_at = base;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let at = base + dy * w + dx;
                    if src[at] > best {
                        best = src[at];
                        best_at = at;
                    }
                }
                out[ch * ho * wo + y * wo + x] = best;
                argmax[ch * ho * wo + y * wo + x] = best_at;
            }
        }
    }
    let step = Step::MaxPool2 {
        argmax,
        in_len: input.len(),
    };
    finish("max_pool2", &[input], step, vec![c, ho, wo], out)
}

/// 2x2 average pooling with stride 2.
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let [c, h, w] = shape3("avg_pool2", input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape {
            op: "avg_pool2",
            shape: input.shape().to_vec(),
            msg: "spatial dims must be even".into(),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let src = input.data();
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            let r0 = ch * h * w + 2 * y * w;
            let r1 = r0 + w;
            for x in 0..wo {
                out[ch * ho * wo + y * wo + x] =
                    0.25 * (src[r0 + 2 * x] + src[r0 + 2 * x + 1] + src[r1 + 2 * x] + src[r1 + 2 * x + 1]);
            }
        }
    }
    let step = Step::AvgPool2 {
        in_shape: [c, h, w],
    };
    finish("avg_pool2", &[input], step, vec![c, ho, wo], out)
}

pub(crate) fn avg_pool2_backward(in_shape: [usize; 3], grad: &[f64]) -> Vec<f64> {
    let [c, h, w] = in_shape;
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..ho {
            let r0 = ch * h * w + 2 * y * w;
            let r1 = r0 + w;
            for x in 0..wo {
                let g = 0.25 * grad[ch * ho * wo + y * wo + x];
                out[r0 + 2 * x] += g;
                out[r0 + 2 * x + 1] += g;
                out[r1 + 2 * x] += g;
                out[r1 + 2 * x + 1] += g;
            }
        }
    }
    out
}

/// Source coordinate and interpolation weights for one output index under
/// half-pixel-centred bilinear scaling.
fn lerp_coords(out_idx: usize, scale: usize, in_dim: usize) -> (usize, usize, f64) {
    let src = (out_idx as f64 + 0.5) / scale as f64 - 0.5;
    let clamped = src.max(0.0);
    let lo = (clamped.floor() as usize).min(in_dim - 1);
    let hi = (lo + 1).min(in_dim - 1);
    let frac = (clamped - lo as f64).clamp(0.0, 1.0);
    (lo, hi, frac)
}

/// Bilinear upsampling by an integer factor, sampling with half-pixel
/// centres (edges clamp).
pub fn bilinear_upsample(input: &Tensor, scale: usize) -> Result<Tensor> {
    let [c, h, w] = shape3("bilinear_upsample", input)?;
    if scale == 0 {
        return Err(Error::contract("bilinear_upsample scale must be positive"));
    }
    let (ho, wo) = (h * scale, w * scale);
    let src = input.data();
    let mut out = vec![0.0; c * ho * wo];
    for y in 0..ho {
        let (y0, y1, fy) = lerp_coords(y, scale, h);
        for x in 0..wo {
            let (x0, x1, fx) = lerp_coords(x, scale, w);
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let v00 = plane[y0 * w + x0];
                let v01 = plane[y0 * w + x1];
                let v10 = plane[y1 * w + x0];
                let v11 = plane[y1 * w + x1];
                let top = v00 + fx * (v01 - v00);
                let bot = v10 + fx * (v11 - v10);
                out[ch * ho * wo + y * wo + x] = top + fy * (bot - top);
            }
        }
    }
    let step = Step::BilinearUpsample {
        in_shape: [c, h, w],
        scale,
    };
    finish("bilinear_upsample", &[input], step, vec![c, ho, wo], out)
}

pub(crate) fn bilinear_upsample_backward(
    in_shape: [usize; 3],
    scale: usize,
    grad: &[f64],
) -> Vec<f64> {
    let [c, h, w] = in_shape;
    let (ho, wo) = (h * scale, w * scale);
    let mut out = vec![0.0; c * h * w];
    for y in 0..ho {
        let (y0, y1, fy) = lerp_coords(y, scale, h);
        for x in 0..wo {
            let (x0, x1, fx) = lerp_coords(x, scale, w);
            for ch in 0..c {
                let g = grad[ch * ho * wo + y * wo + x];
                let plane = &mut out[ch * h * w..(ch + 1) * h * w];
                plane[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += g * (1.0 - fy) * fx;
                plane[y1 * w + x0] += g * fy * (1.0 - fx);
                plane[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    out
}
