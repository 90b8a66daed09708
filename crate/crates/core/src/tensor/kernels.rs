//! Forward and backward kernels for the 1-D network layers.
//!
//! All kernels are pure functions on [`NumericArray`] values with valid (no)
//! padding and fixed accumulation orders, so identical inputs give bitwise
//! identical outputs on every call.

use crate::error::{Error, Result};
use crate::tensor::array::{axpy, dot, LayerGrad, NumericArray};

/// Output length of a valid convolution/pooling pass.
pub fn out_len(input_len: usize, window: usize, stride: usize) -> usize {
    debug_assert!(input_len >= window && stride >= 1);
    (input_len - window) / stride + 1
}

fn expect_2d(x: &NumericArray, context: &str) -> Result<(usize, usize)> {
    if x.shape().len() != 2 {
        return Err(Error::shape(context, format!("expected 2-D array, got {:?}", x.shape())));
    }
    Ok((x.shape()[0], x.shape()[1]))
}

fn expect_1d(x: &NumericArray, context: &str) -> Result<usize> {
    if x.shape().len() != 1 {
        return Err(Error::shape(context, format!("expected 1-D array, got {:?}", x.shape())));
    }
    Ok(x.shape()[0])
}

fn check_stride(stride: usize, context: &str) -> Result<()> {
    if stride == 0 {
        return Err(Error::InvalidConfig(format!("{context}: stride must be >= 1")));
    }
    Ok(())
}

/// Spatial convolution applied independently to each input channel.
///
/// `input` is `[C, L]`, `kernels` is `[C, K]`, `bias` is `[C]`, and the
/// output is `[C, out_len(L, K, stride)]` with
/// `out[c][t] = bias[c] + sum_k input[c][t*stride + k] * kernels[c][k]`.
pub fn conv1d_depthwise(
    input: &NumericArray,
    kernels: &NumericArray,
    bias: &NumericArray,
    stride: usize,
) -> Result<NumericArray> {
    let ctx = "conv1d_depthwise";
    check_stride(stride, ctx)?;
    let (c, l) = expect_2d(input, ctx)?;
    let (kc, k) = expect_2d(kernels, ctx)?;
    let bc = expect_1d(bias, ctx)?;
    if kc != c || bc != c {
        return Err(Error::shape(ctx, format!("input has {c} channels, kernels {kc}, bias {bc}")));
    }
    if l < k {
        return Err(Error::shape(ctx, format!("input length {l} shorter than kernel {k}")));
    }
    let lo = out_len(l, k, stride);
    let mut out = vec![0.0; c * lo];
    for ch in 0..c {
        let x = input.row(ch);
        let w = kernels.row(ch);
        let o = &mut out[ch * lo..(ch + 1) * lo];
        for (t, ot) in o.iter_mut().enumerate() {
            let start = t * stride;
            let mut acc = bias.data()[ch];
            for (xi, wi) in x[start..start + k].iter().zip(w) {
                acc += xi * wi;
            }
            *ot = acc;
        }
    }
    Ok(NumericArray::from_vec_unchecked(&[c, lo], out))
}

/// Gradients of [`conv1d_depthwise`]; `grad_params` is `[kernels, bias]`.
pub fn conv1d_depthwise_backward(
    input: &NumericArray,
    kernels: &NumericArray,
    stride: usize,
    upstream: &NumericArray,
) -> Result<LayerGrad> {
    let ctx = "conv1d_depthwise_backward";
    check_stride(stride, ctx)?;
    let (c, l) = expect_2d(input, ctx)?;
    let (kc, k) = expect_2d(kernels, ctx)?;
    let (uc, lo) = expect_2d(upstream, ctx)?;
    if kc != c || uc != c || l < k || lo != out_len(l, k, stride) {
        return Err(Error::shape(
            ctx,
            format!(
                "input [{c}, {l}], kernels [{kc}, {k}], upstream [{uc}, {lo}], stride {stride}"
            ),
        ));
    }
    let mut gx = NumericArray::zeros(&[c, l]);
    let mut gw = NumericArray::zeros(&[c, k]);
    let mut gb = NumericArray::zeros(&[c]);
    for ch in 0..c {
        let x = input.row(ch);
        let w = kernels.row(ch);
        let up = upstream.row(ch);
        let mut bias_acc = 0.0;
        {
            let gwr = gw.row_mut(ch);
            for (t, &g) in up.iter().enumerate() {
                let start = t * stride;
                axpy(g, &x[start..start + k], gwr);
                bias_acc += g;
            }
        }
        {
            let gxr = gx.row_mut(ch);
            for (t, &g) in up.iter().enumerate() {
                let start = t * stride;
                axpy(g, w, &mut gxr[start..start + k]);
            }
        }
        gb.data_mut()[ch] = bias_acc;
    }
    Ok(LayerGrad { grad_input: gx, grad_params: vec![gw, gb] })
}

/// 1x1 convolution across channels: `input` `[C_in, L]`, `weights`
/// `[C_out, C_in]`, `bias` `[C_out]`, output `[C_out, L]` with
/// `out[o][t] = bias[o] + sum_c weights[o][c] * input[c][t]`.
pub fn conv1d_pointwise(
    input: &NumericArray,
    weights: &NumericArray,
    bias: &NumericArray,
) -> Result<NumericArray> {
    let ctx = "conv1d_pointwise";
    let (cin, l) = expect_2d(input, ctx)?;
    let (cout, wc) = expect_2d(weights, ctx)?;
    let bl = expect_1d(bias, ctx)?;
    if wc != cin || bl != cout {
        return Err(Error::shape(
            ctx,
            format!("input [{cin}, {l}], weights [{cout}, {wc}], bias [{bl}]"),
        ));
    }
    let mut out = NumericArray::zeros(&[cout, l]);
    for o in 0..cout {
        let wrow = weights.row(o);
        let orow = out.row_mut(o);
        orow.fill(bias.data()[o]);
        for (c, &w) in wrow.iter().enumerate() {
            axpy(w, input.row(c), orow);
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d_pointwise`]; `grad_params` is `[weights, bias]`.
pub fn conv1d_pointwise_backward(
    input: &NumericArray,
    weights: &NumericArray,
    upstream: &NumericArray,
) -> Result<LayerGrad> {
    let ctx = "conv1d_pointwise_backward";
    let (cin, l) = expect_2d(input, ctx)?;
    let (cout, wc) = expect_2d(weights, ctx)?;
    let (uo, ul) = expect_2d(upstream, ctx)?;
    if wc != cin || uo != cout || ul != l {
        return Err(Error::shape(
            ctx,
            format!("input [{cin}, {l}], weights [{cout}, {wc}], upstream [{uo}, {ul}]"),
        ));
    }
    let mut gx = NumericArray::zeros(&[cin, l]);
    let mut gw = NumericArray::zeros(&[cout, cin]);
    let mut gb = NumericArray::zeros(&[cout]);
    for o in 0..cout {
        let up = upstream.row(o);
        let wrow = weights.row(o);
        {
            let gwr = gw.row_mut(o);
            for (c, g) in gwr.iter_mut().enumerate() {
                *g = dot(up, input.row(c));
            }
        }
        for (c, &w) in wrow.iter().enumerate() {
            axpy(w, up, gx.row_mut(c));
        }
        gb.data_mut()[o] = up.iter().sum();
    }
    Ok(LayerGrad { grad_input: gx, grad_params: vec![gw, gb] })
}

/// Per-channel 1-D max pooling. Returns the pooled `[C, L_out]` array and
/// the flat index into the input row of each winning element (ties broken
/// by the lowest index).
pub fn maxpool1d(
    input: &NumericArray,
    window: usize,
    stride: usize,
) -> Result<(NumericArray, Vec<usize>)> {
    let ctx = "maxpool1d";
    check_stride(stride, ctx)?;
    if window == 0 {
        return Err(Error::InvalidConfig(format!("{ctx}: window must be >= 1")));
    }
    let (c, l) = expect_2d(input, ctx)?;
    if l < window {
        return Err(Error::shape(ctx, format!("input length {l} shorter than window {window}")));
    }
    let lo = out_len(l, window, stride);
    let mut out = vec![0.0; c * lo];
    let mut argmax = vec![0usize; c * lo];
    for ch in 0..c {
        let x = input.row(ch);
        for t in 0..lo {
            let start = t * stride;
            let mut best = x[start];
            let mut best_i = start;
            for (i, &v) in x[start..start + window].iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    best_i = start + i;
                }
            }
            out[ch * lo + t] = best;
            argmax[ch * lo + t] = best_i;
        }
    }
    Ok((NumericArray::from_vec_unchecked(&[c, lo], out), argmax))
}

/// Routes each upstream entry back to the input position that won the max.
pub fn maxpool1d_backward(
    input_len: usize,
    argmax: &[usize],
    upstream: &NumericArray,
) -> Result<NumericArray> {
    let ctx = "maxpool1d_backward";
    let (c, lo) = expect_2d(upstream, ctx)?;
    if argmax.len() != c * lo {
        return Err(Error::shape(
            ctx,
            format!("argmax has {} entries, upstream is [{c}, {lo}]", argmax.len()),
        ));
    }
    let mut gx = NumericArray::zeros(&[c, input_len]);
    for ch in 0..c {
        let up = upstream.row(ch);
        let gxr = gx.row_mut(ch);
        for (t, &g) in up.iter().enumerate() {
            let src = argmax[ch * lo + t];
            if src >= input_len {
                return Err(Error::shape(ctx, format!("argmax {src} out of range {input_len}")));
            }
            gxr[src] += g;
        }
    }
    Ok(gx)
}

/// Fully connected layer: `input` `[N]`, `weights` `[M, N]`, `bias` `[M]`,
/// output `[M]` with `out = weights * input + bias`.
pub fn dense(input: &NumericArray, weights: &NumericArray, bias: &NumericArray) -> Result<NumericArray> {
    let ctx = "dense";
    let n = expect_1d(input, ctx)?;
    let (m, wn) = expect_2d(weights, ctx)?;
    let bm = expect_1d(bias, ctx)?;
    if wn != n || bm != m {
        return Err(Error::shape(ctx, format!("input [{n}], weights [{m}, {wn}], bias [{bm}]")));
    }
    let mut out = vec![0.0; m];
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(weights.row(r), input.data()) + bias.data()[r];
    }
    Ok(NumericArray::from_vec_unchecked(&[m], out))
}

/// Gradients of [`dense`]; `grad_params` is `[weights, bias]`.
pub fn dense_backward(
    input: &NumericArray,
    weights: &NumericArray,
    upstream: &NumericArray,
) -> Result<LayerGrad> {
    let ctx = "dense_backward";
    let n = expect_1d(input, ctx)?;
    let (m, wn) = expect_2d(weights, ctx)?;
    let um = expect_1d(upstream, ctx)?;
    if wn != n || um != m {
        return Err(Error::shape(ctx, format!("input [{n}], weights [{m}, {wn}], upstream [{um}]")));
    }
    let mut gx = NumericArray::zeros(&[n]);
    let mut gw = NumericArray::zeros(&[m, n]);
    for r in 0..m {
        let g = upstream.data()[r];
        axpy(g, input.data(), gw.row_mut(r));
        axpy(g, weights.row(r), gx.data_mut());
    }
    let gb = upstream.clone();
    Ok(LayerGrad { grad_input: gx, grad_params: vec![gw, gb] })
}

/// Element-wise max(x, 0).
pub fn relu(x: &NumericArray) -> NumericArray {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    NumericArray::from_vec_unchecked(x.shape(), data)
}

/// ReLU gradient; `pre` is the layer's pre-activation input. The derivative
/// at exactly zero is taken as 0.
pub fn relu_backward(pre: &NumericArray, upstream: &NumericArray) -> Result<NumericArray> {
    if pre.shape() != upstream.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", pre.shape(), upstream.shape()),
        ));
    }
    let data = pre
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Ok(NumericArray::from_vec_unchecked(pre.shape(), data))
}

/// Element-wise hyperbolic tangent.
pub fn tanh_act(x: &NumericArray) -> NumericArray {
    let data = x.data().iter().map(|v| v.tanh()).collect();
    NumericArray::from_vec_unchecked(x.shape(), data)
}

/// Tanh gradient; `output` is the forward result, so the local derivative is
/// `1 - output^2`.
pub fn tanh_backward(output: &NumericArray, upstream: &NumericArray) -> Result<NumericArray> {
    if output.shape() != upstream.shape() {
        return Err(Error::shape(
            "tanh_backward",
            format!("{:?} vs {:?}", output.shape(), upstream.shape()),
        ));
    }
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| (1.0 - y * y) * g)
        .collect();
    Ok(NumericArray::from_vec_unchecked(output.shape(), data))
}

/// Probability vector from a 1-D logit vector, computed with max
/// subtraction so large logits cannot overflow.
pub fn softmax(logits: &NumericArray) -> Result<NumericArray> {
    expect_1d(logits, "softmax")?;
    if logits.is_empty() {
        return Err(Error::DegenerateInput("softmax of an empty vector".into()));
    }
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.data().iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(NumericArray::from_vec_unchecked(logits.shape(), out))
}

/// Softmax gradient; `output` is the forward probability vector.
pub fn softmax_backward(output: &NumericArray, upstream: &NumericArray) -> Result<NumericArray> {
    if output.shape() != upstream.shape() {
        return Err(Error::shape(
            "softmax_backward",
            format!("{:?} vs {:?}", output.shape(), upstream.shape()),
        ));
    }
    let inner = dot(output.data(), upstream.data());
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| y * (g - inner))
        .collect();
    Ok(NumericArray::from_vec_unchecked(output.shape(), data))
}

fn one_hot_index(target: &NumericArray) -> Result<usize> {
    expect_1d(target, "softmax_cross_entropy")?;
    let mut hot = None;
    for (i, &v) in target.data().iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::InvalidTarget("more than one entry equals 1".into()));
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::InvalidTarget(format!("entry {i} is {v}, want 0 or 1")));
        }
    }
    hot.ok_or_else(|| Error::InvalidTarget("no entry equals 1".into()))
}

/// Fused cross-entropy on logits: returns
/// `(-log softmax(logits)[true], softmax(logits) - target)`.
pub fn softmax_cross_entropy(
    logits: &NumericArray,
    target: &NumericArray,
) -> Result<(f64, NumericArray)> {
    let k = expect_1d(logits, "softmax_cross_entropy")?;
    if target.len() != k {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits [{k}] vs target [{}]", target.len()),
        ));
    }
    let hot = one_hot_index(target)?;
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.data().iter().map(|v| (v - max).exp()).sum();
    let log_sum_exp = max + sum_exp.ln();
    let loss = log_sum_exp - logits.data()[hot];
    let mut grad: Vec<f64> = logits.data().iter().map(|v| (v - max).exp() / sum_exp).collect();
    grad[hot] -= 1.0;
    Ok((loss, NumericArray::from_vec_unchecked(&[k], grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr2(rows: &[Vec<f64>]) -> NumericArray {
        NumericArray::matrix(rows).unwrap()
    }

    #[test]
    fn depthwise_hand_example() {
        let x = arr2(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let w = arr2(&[vec![1.0, 0.0, -1.0]]);
        let b = NumericArray::vector(&[0.0]);
        let out = conv1d_depthwise(&x, &w, &b, 1).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert_eq!(out.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn depthwise_identity_kernel() {
        let x = arr2(&[vec![0.5, -1.5, 2.5], vec![3.0, 4.0, 5.0]]);
        let w = arr2(&[vec![1.0], vec![1.0]]);
        let b = NumericArray::vector(&[0.0, 0.0]);
        let out = conv1d_depthwise(&x, &w, &b, 1).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn depthwise_rejects_short_input() {
        let x = arr2(&[vec![1.0, 2.0]]);
        let w = arr2(&[vec![1.0, 0.0, -1.0]]);
        let b = NumericArray::vector(&[0.0]);
        assert!(matches!(
            conv1d_depthwise(&x, &w, &b, 1),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn pointwise_identity() {
        let x = arr2(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let w = arr2(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = NumericArray::vector(&[0.0, 0.0]);
        let out = conv1d_pointwise(&x, &w, &b).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn pointwise_hand_example() {
        let x = arr2(&[vec![1.0, 1.0], vec![2.0, 2.0]]);
        let w = arr2(&[vec![1.0, 1.0]]);
        let b = NumericArray::vector(&[0.0]);
        let out = conv1d_pointwise(&x, &w, &b).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert_eq!(out.data(), &[3.0, 3.0]);
    }

    #[test]
    fn maxpool_hand_example() {
        let x = arr2(&[vec![1.0, 3.0, 2.0, 5.0]]);
        let (out, argmax) = maxpool1d(&x, 2, 2).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0]);
        assert_eq!(argmax, vec![1, 3]);
    }

    #[test]
    fn maxpool_constant_input() {
        let x = arr2(&[vec![7.0; 10]]);
        let (out, argmax) = maxpool1d(&x, 4, 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
        // ties resolve to the window start
        assert_eq!(argmax, vec![0, 3, 6]);
    }

    #[test]
    fn maxpool_length_arithmetic() {
        let x = NumericArray::zeros(&[1, 141]);
        let (out, _) = maxpool1d(&x, 20, 2).unwrap();
        assert_eq!(out.shape(), &[1, 61]);
    }

    #[test]
    fn maxpool_backward_conserves_mass() {
        let x = arr2(&[vec![1.0, 3.0, 2.0, 5.0, 4.0, 0.0]]);
        let (_, argmax) = maxpool1d(&x, 3, 1).unwrap();
        let up = arr2(&[vec![0.5, 1.5, -2.0, 0.25]]);
        let gx = maxpool1d_backward(6, &argmax, &up).unwrap();
        let total_up: f64 = up.data().iter().sum();
        let total_gx: f64 = gx.data().iter().sum();
        assert!((total_up - total_gx).abs() < 1e-15);
    }

    #[test]
    fn dense_hand_example() {
        let x = NumericArray::vector(&[1.0, 2.0]);
        let w = arr2(&[vec![3.0, 4.0]]);
        let b = NumericArray::vector(&[1.0]);
        let out = dense(&x, &w, &b).unwrap();
        assert_eq!(out.data(), &[12.0]);
    }

    #[test]
    fn dense_identity() {
        let x = NumericArray::vector(&[1.0, -2.0, 3.0]);
        let w = arr2(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let b = NumericArray::vector(&[0.0, 0.0, 0.0]);
        assert_eq!(dense(&x, &w, &b).unwrap().data(), x.data());
    }

    #[test]
    fn relu_clamps() {
        let x = NumericArray::vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&NumericArray::vector(&[0.0; 4])).unwrap();
        for &v in p.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_no_overflow_on_large_logits() {
        let p = softmax(&NumericArray::vector(&[1000.0, 1000.0])).unwrap();
        assert!(p.is_finite());
        assert!((p.data()[0] - 0.5).abs() < 1e-15);
        assert!((p.data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let logits = NumericArray::vector(&[0.0; 20]);
        let mut t = vec![0.0; 20];
        t[3] = 1.0;
        let (loss, _) = softmax_cross_entropy(&logits, &NumericArray::vector(&t)).unwrap();
        assert!((loss - (20.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct() {
        let logits = NumericArray::vector(&[10.0, -10.0]);
        let target = NumericArray::vector(&[1.0, 0.0]);
        let (loss, grad) = softmax_cross_entropy(&logits, &target).unwrap();
        // scalar oracle: loss = ln(1 + e^(-20))
        let expect = (1.0 + (-20.0f64).exp()).ln();
        assert!((loss - expect).abs() < 1e-14);
        assert!(grad.data()[0] < 0.0 && grad.data()[0].abs() < 3e-9);
        assert!(grad.data()[1] > 0.0 && grad.data()[1] < 3e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_targets() {
        let logits = NumericArray::vector(&[0.0, 0.0]);
        for bad in [vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.5]] {
            assert!(matches!(
                softmax_cross_entropy(&logits, &NumericArray::vector(&bad)),
                Err(Error::InvalidTarget(_))
            ));
        }
    }

    #[test]
    fn kernels_are_pure() {
        let x = arr2(&[vec![0.3, -0.8, 1.2, 0.1, 0.9]]);
        let w = arr2(&[vec![0.5, -0.25]]);
        let b = NumericArray::vector(&[0.125]);
        let a = conv1d_depthwise(&x, &w, &b, 2).unwrap();
        let c = conv1d_depthwise(&x, &w, &b, 2).unwrap();
        assert_eq!(a.data(), c.data());
    }
}
