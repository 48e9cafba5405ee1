//! Layer operations with forward and backward passes.
//!
//! Exactly the kernels the dynamic networks need: valid cross-correlation
//! (stride 1, no padding), fully-connected product, ReLU, 2x2 max pooling and
//! softmax cross-entropy. Backward passes return gradient tensors; callers
//! decide where to store them.
//!
//! Kernels may parallelize over the batch dimension (or over output units for
//! weight gradients). Every element is always accumulated in the same
//! sequential order, so results are bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};
use crate::tensor::Tensor;

/// Gradients produced by a parameterized layer's backward pass.
pub struct LayerGrads<S> {
    pub input: Tensor<S>,
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Valid cross-correlation, stride 1, no padding: `out = input (*) weights + bias`.
///
/// `input` is `B x I x H x W`, `weights` is `O x I x K x K`, `bias` is `O`;
/// output is `B x O x (H-K+1) x (W-K+1)`.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (b, ci, h, w) = input.dims4("conv2d input")?;
    let (co, ciw, k, k2) = weights.dims4("conv2d weights")?;
    if k != k2 {
        return Err(Error::dim("conv2d: square kernel", k, k2));
    }
    if ci != ciw {
        return Err(Error::dim(
            "conv2d: input channels vs weight input channels",
            ci,
            ciw,
        ));
    }
    if bias.numel() != co {
        return Err(Error::dim("conv2d: bias vs output channels", co, bias.numel()));
    }
    if h < k || w < k {
        return Err(Error::dim(
            "conv2d: spatial extent vs kernel",
            format!("at least {k}x{k}"),
            format!("{h}x{w}"),
        ));
    }
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = Tensor::zeros(&[b, co, ho, wo]);
    let ws = weights.data();
    let bs = bias.data();
    out.data_mut()
        .par_chunks_mut(co * ho * wo)
        .zip(input.data().par_chunks(ci * h * w))
        .for_each(|(ob, ib)| {
            for o in 0..co {
                let obase = o * ho * wo;
                ob[obase..obase + ho * wo].fill(bs[o]);
                for i in 0..ci {
                    let ibase = i * h * w;
                    let wbase = (o * ci + i) * k * k;
                    for m in 0..k {
                        for n in 0..k {
                            let wv = ws[wbase + m * k + n];
                            for y in 0..ho {
                                let irow = ibase + (y + m) * w + n;
                                let orow = obase + y * wo;
                                for x in 0..wo {
                                    ob[orow + x] += wv * ib[irow + x];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Backward pass of [`conv2d_forward`] for an upstream gradient of the output's shape.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    upstream: &Tensor<S>,
) -> Result<LayerGrads<S>> {
    let (b, ci, h, w) = input.dims4("conv2d input")?;
    let (co, _, k, _) = weights.dims4("conv2d weights")?;
    let (bu, cu, ho, wo) = upstream.dims4("conv2d upstream")?;
    if bu != b || cu != co || ho != h - k + 1 || wo != w - k + 1 {
        return Err(Error::dim(
            "conv2d backward: upstream shape",
            format!("{b}x{co}x{}x{}", h - k + 1, w - k + 1),
            format!("{bu}x{cu}x{ho}x{wo}"),
        ));
    }
    let us = upstream.data();
    let ins = input.data();
    let ws = weights.data();

    let mut dbias = Tensor::zeros(&[co]);
    {
        let db = dbias.data_mut();
        for bi in 0..b {
            for o in 0..co {
                let ubase = (bi * co + o) * ho * wo;
                let mut acc = S::zero();
                for v in &us[ubase..ubase + ho * wo] {
                    acc += *v;
                }
                db[o] += acc;
            }
        }
    }

    let mut dweights = Tensor::zeros(&[co, ci, k, k]);
    dweights
        .data_mut()
        .par_chunks_mut(ci * k * k)
        .enumerate()
        .for_each(|(o, dwo)| {
            for i in 0..ci {
                for m in 0..k {
                    for n in 0..k {
                        let mut acc = S::zero();
                        for bi in 0..b {
                            let ubase = (bi * co + o) * ho * wo;
                            let ibase = (bi * ci + i) * h * w;
                            for y in 0..ho {
                                let urow = ubase + y * wo;
                                let irow = ibase + (y + m) * w + n;
                                for x in 0..wo {
                                    acc += us[urow + x] * ins[irow + x];
                                }
                            }
                        }
                        dwo[i * k * k + m * k + n] = acc;
                    }
                }
            }
        });

    let mut dinput = Tensor::zeros(&[b, ci, h, w]);
    dinput
        .data_mut()
        .par_chunks_mut(ci * h * w)
        .enumerate()
        .for_each(|(bi, dib)| {
            for o in 0..co {
                let ubase = (bi * co + o) * ho * wo;
                for i in 0..ci {
                    let ibase = i * h * w;
                    let wbase = (o * ci + i) * k * k;
                    for m in 0..k {
                        for n in 0..k {
                            let wv = ws[wbase + m * k + n];
                            for y in 0..ho {
                                let urow = ubase + y * wo;
                                let irow = ibase + (y + m) * w + n;
                                for x in 0..wo {
                                    dib[irow + x] += us[urow + x] * wv;
                                }
                            }
                        }
                    }
                }
            }
        });

    Ok(LayerGrads {
        input: dinput,
        weights: dweights,
        bias: dbias,
    })
}

/// Fully-connected product: `out[b,o] = sum_i input[b,i] * weights[o,i] + bias[o]`.
pub fn linear_forward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (b, i) = input.dims2("linear input")?;
    let (o, iw) = weights.dims2("linear weights")?;
    if i != iw {
        return Err(Error::dim("linear: input width vs weight columns", i, iw));
    }
    if bias.numel() != o {
        return Err(Error::dim("linear: bias vs output width", o, bias.numel()));
    }
    let ws = weights.data();
    let bs = bias.data();
    let mut out = Tensor::zeros(&[b, o]);
    out.data_mut()
        .par_chunks_mut(o)
        .zip(input.data().par_chunks(i))
        .for_each(|(ob, ib)| {
            for (oi, ov) in ob.iter_mut().enumerate() {
                let wrow = &ws[oi * i..(oi + 1) * i];
                let mut acc = bs[oi];
                for (xv, wv) in ib.iter().zip(wrow) {
                    acc += *xv * *wv;
                }
                *ov = acc;
            }
        });
    Ok(out)
}

/// Backward pass of [`linear_forward`].
pub fn linear_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    upstream: &Tensor<S>,
) -> Result<LayerGrads<S>> {
    let (b, i) = input.dims2("linear input")?;
    let (o, _) = weights.dims2("linear weights")?;
    let (bu, ou) = upstream.dims2("linear upstream")?;
    if bu != b || ou != o {
        return Err(Error::dim(
            "linear backward: upstream shape",
            format!("{b}x{o}"),
            format!("{bu}x{ou}"),
        ));
    }
    let us = upstream.data();
    let ins = input.data();
    let ws = weights.data();

    let mut dbias = Tensor::zeros(&[o]);
    {
        let db = dbias.data_mut();
        for bi in 0..b {
            for (oi, dv) in db.iter_mut().enumerate() {
                *dv += us[bi * o + oi];
            }
        }
    }

    let mut dweights = Tensor::zeros(&[o, i]);
    dweights
        .data_mut()
        .par_chunks_mut(i)
        .enumerate()
        .for_each(|(oi, dwrow)| {
            for bi in 0..b {
                let uv = us[bi * o + oi];
                let irow = &ins[bi * i..(bi + 1) * i];
                for (dw, xv) in dwrow.iter_mut().zip(irow) {
                    *dw += uv * *xv;
                }
            }
        });

    let mut dinput = Tensor::zeros(&[b, i]);
    dinput
        .data_mut()
        .par_chunks_mut(i)
        .enumerate()
        .for_each(|(bi, dirow)| {
            for oi in 0..o {
                let uv = us[bi * o + oi];
                let wrow = &ws[oi * i..(oi + 1) * i];
                for (dx, wv) in dirow.iter_mut().zip(wrow) {
                    *dx += uv * *wv;
                }
            }
        });

    Ok(LayerGrads {
        input: dinput,
        weights: dweights,
        bias: dbias,
    })
}

/// Elementwise `max(0, x)`.
pub fn relu_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let data = input.data().iter().map(|&v| v.max(S::zero())).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// ReLU backward: upstream passes through where the forward input was > 0.
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, upstream: &Tensor<S>) -> Tensor<S> {
    assert_eq!(input.numel(), upstream.numel(), "relu backward shape");
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &u)| if x > S::zero() { u } else { S::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index of its window maximum (first occurrence in
/// row-major window order on ties).
pub fn maxpool2_forward<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let (b, c, h, w) = input.dims4("maxpool2 input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(
            "maxpool2: even spatial dims",
            "even H and W",
            format!("{h}x{w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let ins = input.data();
    let mut out = Tensor::zeros(&[b, c, ho, wo]);
    let mut argmax = vec![0usize; b * c * ho * wo];
    let od = out.data_mut();
    for bc in 0..b * c {
        let ibase = bc * h * w;
        let obase = bc * ho * wo;
        for y in 0..ho {
            for x in 0..wo {
                let i00 = ibase + (2 * y) * w + 2 * x;
                let mut best = i00;
                let mut bestv = ins[i00];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ibase + (2 * y + dy) * w + 2 * x + dx;
                    if ins[idx] > bestv {
                        bestv = ins[idx];
                        best = idx;
                    }
                }
                od[obase + y * wo + x] = bestv;
                argmax[obase + y * wo + x] = best;
            }
        }
    }
    Ok((out, argmax))
}

/// Maxpool backward: routes each upstream element to its argmax position.
pub fn maxpool2_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    upstream: &Tensor<S>,
) -> Tensor<S> {
    assert_eq!(argmax.len(), upstream.numel(), "maxpool backward shape");
    let mut dinput = Tensor::zeros(input_shape);
    let di = dinput.data_mut();
    for (&src, &u) in argmax.iter().zip(upstream.data()) {
        di[src] += u;
    }
    dinput
}

/// Mean softmax cross-entropy over the batch. Returns the loss and the
/// softmax probabilities (kept for the backward pass).
///
/// Softmax is computed with max-subtraction so saturated logits stay finite.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Tensor<S>)> {
    let (b, c) = logits.dims2("softmax logits")?;
    if labels.len() != b {
        return Err(Error::dim("softmax: labels vs batch", b, labels.len()));
    }
    for &l in labels {
        if l >= c {
            return Err(Error::LabelOutOfRange { label: l, classes: c });
        }
    }
    let ls = logits.data();
    let mut probs = Tensor::zeros(&[b, c]);
    let ps = probs.data_mut();
    let mut loss = S::zero();
    for bi in 0..b {
        let row = &ls[bi * c..(bi + 1) * c];
        let m = row.iter().fold(row[0], |a, &v| a.max(v));
        let mut sum = S::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            ps[bi * c + j] = e;
            sum += e;
        }
        for p in &mut ps[bi * c..(bi + 1) * c] {
            *p /= sum;
        }
        // -log softmax[label] = log(sum) - (logit - max)
        loss += sum.ln() - (row[labels[bi]] - m);
    }
    loss /= from_f64(b as f64);
    Ok((loss, probs))
}

/// Gradient of [`softmax_cross_entropy`] w.r.t. the logits: `(softmax - onehot) / B`.
pub fn softmax_cross_entropy_backward<S: Scalar>(probs: &Tensor<S>, labels: &[usize]) -> Tensor<S> {
    let (b, c) = probs.dims2("softmax probs").expect("probs rank 2");
    let inv_b = S::one() / from_f64(b as f64);
    let mut grad = probs.clone();
    let gs = grad.data_mut();
    for (bi, &l) in labels.iter().enumerate() {
        gs[bi * c + l] -= S::one();
    }
    for g in gs.iter_mut() {
        *g *= inv_b;
    }
    grad
}
