//! The classifier: depthwise-separable conv -> ReLU -> max-pool ->
//! depthwise-separable conv -> flatten -> dense(tanh) -> dense -> softmax,
//! assembled from the tensor kernels with hand-written backward passes.

use crate::error::{Error, Result};
use crate::preprocess::OneHotTarget;
use crate::rng::substream;
use crate::tensor::{
    self, axpy, conv1d_depthwise, conv1d_depthwise_backward, conv1d_pointwise,
    conv1d_pointwise_backward, dense, dot, maxpool1d, maxpool1d_backward, out_len, relu,
    relu_backward, softmax, tanh_act, NumericArray,
};

/// Layer geometry and the L2 coefficient.
///
/// Defaults follow the reference setup: first conv with kernel length 60
/// and 60 output channels, pooling window 20 with stride 2, second conv
/// with kernel length 6 and 60 channels, and a 1000-unit tanh layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_len: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub conv1_kernel: usize,
    pub conv1_channels: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub conv2_kernel: usize,
    pub conv2_channels: usize,
    pub fc_units: usize,
    pub l2_lambda: f64,
}

impl ModelConfig {
    pub fn new(input_len: usize, channels: usize, num_classes: usize) -> Self {
        ModelConfig {
            input_len,
            channels,
            num_classes,
            conv1_kernel: 60,
            conv1_channels: 60,
            pool_window: 20,
            pool_stride: 2,
            conv2_kernel: 6,
            conv2_channels: 60,
            fc_units: 1000,
            l2_lambda: 1e-4,
        }
    }

    /// Length after the first convolution.
    fn len_conv1(&self) -> usize {
        out_len(self.input_len, self.conv1_kernel, 1)
    }

    fn len_pool(&self) -> usize {
        out_len(self.len_conv1(), self.pool_window, self.pool_stride)
    }

    fn len_conv2(&self) -> usize {
        out_len(self.len_pool(), self.conv2_kernel, 1)
    }

    /// Flattened feature length feeding the first dense layer.
    pub fn flat_len(&self) -> Result<usize> {
        shape_trace(self)?;
        Ok(self.conv2_channels * self.len_conv2())
    }

    pub fn validate(&self) -> Result<()> {
        shape_trace(self).map(|_| ())
    }
}

/// Output shape of every stage of the stack, or a ShapeMismatch naming the
/// first stage whose input is too short.
pub fn shape_trace(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    let counts = [
        config.input_len,
        config.channels,
        config.num_classes,
        config.conv1_kernel,
        config.conv1_channels,
        config.pool_window,
        config.pool_stride,
        config.conv2_kernel,
        config.conv2_channels,
        config.fc_units,
    ];
    if counts.contains(&0) {
        return Err(Error::InvalidConfig("all model dimensions must be >= 1".into()));
    }
    if !(config.l2_lambda.is_finite() && config.l2_lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("l2_lambda {} must be >= 0", config.l2_lambda)));
    }
    if config.input_len < config.conv1_kernel {
        return Err(Error::shape(
            "conv1",
            format!("input length {} < kernel {}", config.input_len, config.conv1_kernel),
        ));
    }
    let l1 = config.len_conv1();
    if l1 < config.pool_window {
        return Err(Error::shape(
            "pool",
            format!("conv1 output length {} < pool window {}", l1, config.pool_window),
        ));
    }
    let lp = config.len_pool();
    if lp < config.conv2_kernel {
        return Err(Error::shape(
            "conv2",
            format!("pool output length {} < kernel {}", lp, config.conv2_kernel),
        ));
    }
    let l2 = config.len_conv2();
    Ok(vec![
        ("conv1".into(), vec![config.conv1_channels, l1]),
        ("pool".into(), vec![config.conv1_channels, lp]),
        ("conv2".into(), vec![config.conv2_channels, l2]),
        ("flatten".into(), vec![config.conv2_channels * l2]),
        ("fc1".into(), vec![config.fc_units]),
        ("out".into(), vec![config.num_classes]),
    ])
}

/// Every learnable array of the model.
///
/// The field order below is the fixed parameter order: initialization,
/// checkpoint serialization, and the optimizer all walk the arrays in this
/// sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv1_depthwise: NumericArray,
    pub conv1_depthwise_bias: NumericArray,
    pub conv1_pointwise: NumericArray,
    pub conv1_pointwise_bias: NumericArray,
    pub conv2_depthwise: NumericArray,
    pub conv2_depthwise_bias: NumericArray,
    pub conv2_pointwise: NumericArray,
    pub conv2_pointwise_bias: NumericArray,
    pub fc1_weight: NumericArray,
    pub fc1_bias: NumericArray,
    pub out_weight: NumericArray,
    pub out_bias: NumericArray,
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let flat = config.flat_len()?;
        Ok(ModelParams {
            conv1_depthwise: NumericArray::zeros(&[config.channels, config.conv1_kernel]),
            conv1_depthwise_bias: NumericArray::zeros(&[config.channels]),
            conv1_pointwise: NumericArray::zeros(&[config.conv1_channels, config.channels]),
            conv1_pointwise_bias: NumericArray::zeros(&[config.conv1_channels]),
            conv2_depthwise: NumericArray::zeros(&[config.conv1_channels, config.conv2_kernel]),
            conv2_depthwise_bias: NumericArray::zeros(&[config.conv1_channels]),
            conv2_pointwise: NumericArray::zeros(&[config.conv2_channels, config.conv1_channels]),
            conv2_pointwise_bias: NumericArray::zeros(&[config.conv2_channels]),
            fc1_weight: NumericArray::zeros(&[config.fc_units, flat]),
            fc1_bias: NumericArray::zeros(&[config.fc_units]),
            out_weight: NumericArray::zeros(&[config.num_classes, config.fc_units]),
            out_bias: NumericArray::zeros(&[config.num_classes]),
        })
    }

    /// Arrays in the fixed parameter order.
    pub fn named(&self) -> [(&'static str, &NumericArray); 12] {
        [
            ("conv1_depthwise", &self.conv1_depthwise),
            ("conv1_depthwise_bias", &self.conv1_depthwise_bias),
            ("conv1_pointwise", &self.conv1_pointwise),
            ("conv1_pointwise_bias", &self.conv1_pointwise_bias),
            ("conv2_depthwise", &self.conv2_depthwise),
            ("conv2_depthwise_bias", &self.conv2_depthwise_bias),
            ("conv2_pointwise", &self.conv2_pointwise),
            ("conv2_pointwise_bias", &self.conv2_pointwise_bias),
            ("fc1_weight", &self.fc1_weight),
            ("fc1_bias", &self.fc1_bias),
            ("out_weight", &self.out_weight),
            ("out_bias", &self.out_bias),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut NumericArray); 12] {
        [
            ("conv1_depthwise", &mut self.conv1_depthwise),
            ("conv1_depthwise_bias", &mut self.conv1_depthwise_bias),
            ("conv1_pointwise", &mut self.conv1_pointwise),
            ("conv1_pointwise_bias", &mut self.conv1_pointwise_bias),
            ("conv2_depthwise", &mut self.conv2_depthwise),
            ("conv2_depthwise_bias", &mut self.conv2_depthwise_bias),
            ("conv2_pointwise", &mut self.conv2_pointwise),
            ("conv2_pointwise_bias", &mut self.conv2_pointwise_bias),
            ("fc1_weight", &mut self.fc1_weight),
            ("fc1_bias", &mut self.fc1_bias),
            ("out_weight", &mut self.out_weight),
            ("out_bias", &mut self.out_bias),
        ]
    }

    /// The six weight arrays that carry the L2 penalty (biases excluded).
    pub fn weights(&self) -> [&NumericArray; 6] {
        [
            &self.conv1_depthwise,
            &self.conv1_pointwise,
            &self.conv2_depthwise,
            &self.conv2_pointwise,
            &self.fc1_weight,
            &self.out_weight,
        ]
    }

    /// Sum of squared weights (biases excluded).
    pub fn l2_penalty(&self) -> f64 {
        self.weights().iter().map(|w| dot(w.data(), w.data())).sum()
    }

    pub fn num_entries(&self) -> usize {
        self.named().iter().map(|(_, a)| a.len()).sum()
    }

    /// Element-wise `self += other` across all arrays.
    pub fn add_assign(&mut self, other: &ModelParams) -> Result<()> {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    /// Element-wise scaling of all arrays.
    pub fn scale(&mut self, factor: f64) {
        for (_, a) in self.named_mut() {
            a.scale(factor);
        }
    }

    pub(crate) fn check_shapes(&self, config: &ModelConfig, context: &str) -> Result<()> {
        let expect = ModelParams::zeros(config)?;
        for ((name, a), (_, b)) in self.named().into_iter().zip(expect.named()) {
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    context,
                    format!("{name} has shape {:?}, config implies {:?}", a.shape(), b.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// Zero-bias parameters with each weight array drawn uniformly from
/// `[-sqrt(3/fan_in), sqrt(3/fan_in)]`, deterministic under `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    use rand::Rng;
    let mut params = ModelParams::zeros(config)?;
    let flat = config.flat_len()?;
    let mut rng = substream(seed, "init");
    let plan: [(&mut NumericArray, usize); 6] = [
        (&mut params.conv1_depthwise, config.conv1_kernel),
        (&mut params.conv1_pointwise, config.channels),
        (&mut params.conv2_depthwise, config.conv2_kernel),
        (&mut params.conv2_pointwise, config.conv1_channels),
        (&mut params.fc1_weight, flat),
        (&mut params.out_weight, config.fc_units),
    ];
    for (array, fan_in) in plan {
        let bound = (3.0 / fan_in as f64).sqrt();
        for v in array.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

/// Per-layer values retained by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: NumericArray,
    conv1_dw: NumericArray,
    conv1_pre: NumericArray,
    pool_out: NumericArray,
    pool_argmax: Vec<usize>,
    conv2_dw: NumericArray,
    conv2_out: NumericArray,
    fc1_out: NumericArray,
    logits: NumericArray,
}

impl ForwardCache {
    pub fn logits(&self) -> &NumericArray {
        &self.logits
    }
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub probabilities: NumericArray,
    pub cache: ForwardCache,
}

impl ForwardPass {
    pub fn logits(&self) -> &NumericArray {
        &self.cache.logits
    }
}

/// Runs the stack on one `[C, W]` input.
pub fn forward(config: &ModelConfig, params: &ModelParams, input: &NumericArray) -> Result<ForwardPass> {
    params.check_shapes(config, "forward")?;
    if input.shape() != [config.channels, config.input_len] {
        return Err(Error::shape(
            "forward",
            format!(
                "input {:?}, config wants [{}, {}]",
                input.shape(),
                config.channels,
                config.input_len
            ),
        ));
    }
    let conv1_dw = conv1d_depthwise(input, &params.conv1_depthwise, &params.conv1_depthwise_bias, 1)?;
    let conv1_pre = conv1d_pointwise(&conv1_dw, &params.conv1_pointwise, &params.conv1_pointwise_bias)?;
    let relu_out = relu(&conv1_pre);
    let (pool_out, pool_argmax) = maxpool1d(&relu_out, config.pool_window, config.pool_stride)?;
    let conv2_dw = conv1d_depthwise(&pool_out, &params.conv2_depthwise, &params.conv2_depthwise_bias, 1)?;
    let conv2_out = conv1d_pointwise(&conv2_dw, &params.conv2_pointwise, &params.conv2_pointwise_bias)?;
    let flat = conv2_out.clone().reshaped(&[conv2_out.len()])?;
    let fc1_pre = dense(&flat, &params.fc1_weight, &params.fc1_bias)?;
    let fc1_out = tanh_act(&fc1_pre);
    let logits = dense(&fc1_out, &params.out_weight, &params.out_bias)?;
    let probabilities = softmax(&logits)?;
    Ok(ForwardPass {
        probabilities,
        cache: ForwardCache {
            input: input.clone(),
            conv1_dw,
            conv1_pre,
            pool_out,
            pool_argmax,
            conv2_dw,
            conv2_out,
            fc1_out,
            logits,
        },
    })
}

/// Cross-entropy of `logits` against a one-hot target plus
/// `l2_lambda * sum(w^2)` over the weight arrays.
pub fn loss(
    logits: &NumericArray,
    target: &OneHotTarget,
    params: &ModelParams,
    l2_lambda: f64,
) -> Result<f64> {
    if !(l2_lambda.is_finite() && l2_lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("l2_lambda {l2_lambda} must be >= 0")));
    }
    let (ce, _) = tensor::softmax_cross_entropy(logits, target.values())?;
    Ok(ce + l2_lambda * params.l2_penalty())
}

fn check_cache(config: &ModelConfig, cache: &ForwardCache) -> Result<()> {
    let l1 = config.len_conv1();
    let lp = config.len_pool();
    let l2 = config.len_conv2();
    let checks: [(&str, &[usize], Vec<usize>); 7] = [
        ("input", cache.input.shape(), vec![config.channels, config.input_len]),
        ("conv1_dw", cache.conv1_dw.shape(), vec![config.channels, l1]),
        ("conv1_pre", cache.conv1_pre.shape(), vec![config.conv1_channels, l1]),
        ("pool_out", cache.pool_out.shape(), vec![config.conv1_channels, lp]),
        ("conv2_dw", cache.conv2_dw.shape(), vec![config.conv1_channels, l2]),
        ("conv2_out", cache.conv2_out.shape(), vec![config.conv2_channels, l2]),
        ("fc1_out", cache.fc1_out.shape(), vec![config.fc_units]),
    ];
    for (name, got, want) in checks {
        if got != want.as_slice() {
            return Err(Error::InvalidCache(format!("{name} has shape {got:?}, model wants {want:?}")));
        }
    }
    if cache.pool_argmax.len() != config.conv1_channels * lp
        || cache.logits.shape() != [config.num_classes]
    {
        return Err(Error::InvalidCache("cache layout does not match the model".into()));
    }
    Ok(())
}

// Accumulates the cross-entropy gradients for one window into `grads`
// (no L2 term, no batch scaling). The two dense layers write straight into
// the accumulator because their weight gradients dominate the memory
// traffic of a batch.
pub(crate) fn backward_accumulate(
    config: &ModelConfig,
    params: &ModelParams,
    cache: &ForwardCache,
    target: &OneHotTarget,
    grads: &mut ModelParams,
) -> Result<()> {
    params.check_shapes(config, "backward")?;
    check_cache(config, cache)?;
    let (_, g_logits) = tensor::softmax_cross_entropy(&cache.logits, target.values())?;

    // out layer
    let fc = config.fc_units;
    let mut g_h = vec![0.0; fc];
    for (r, &g) in g_logits.data().iter().enumerate() {
        axpy(g, cache.fc1_out.data(), grads.out_weight.row_mut(r));
        grads.out_bias.data_mut()[r] += g;
        axpy(g, params.out_weight.row(r), &mut g_h);
    }

    // tanh
    let mut g_u = g_h;
    for (g, &h) in g_u.iter_mut().zip(cache.fc1_out.data()) {
        *g *= 1.0 - h * h;
    }

    // fc1
    let flat = cache.conv2_out.clone().reshaped(&[cache.conv2_out.len()])?;
    let mut g_flat = vec![0.0; flat.len()];
    for (r, &g) in g_u.iter().enumerate() {
        axpy(g, flat.data(), grads.fc1_weight.row_mut(r));
        grads.fc1_bias.data_mut()[r] += g;
        axpy(g, params.fc1_weight.row(r), &mut g_flat);
    }
    let g_conv2_out = NumericArray::from_vec_unchecked(cache.conv2_out.shape(), g_flat);

    // conv2
    let pw2 = conv1d_pointwise_backward(&cache.conv2_dw, &params.conv2_pointwise, &g_conv2_out)?;
    grads.conv2_pointwise.add_assign(&pw2.grad_params[0])?;
    grads.conv2_pointwise_bias.add_assign(&pw2.grad_params[1])?;
    let dw2 = conv1d_depthwise_backward(&cache.pool_out, &params.conv2_depthwise, 1, &pw2.grad_input)?;
    grads.conv2_depthwise.add_assign(&dw2.grad_params[0])?;
    grads.conv2_depthwise_bias.add_assign(&dw2.grad_params[1])?;

    // pool and relu
    let g_relu = maxpool1d_backward(config.len_conv1(), &cache.pool_argmax, &dw2.grad_input)?;
    let g_conv1_pre = relu_backward(&cache.conv1_pre, &g_relu)?;

    // conv1
    let pw1 = conv1d_pointwise_backward(&cache.conv1_dw, &params.conv1_pointwise, &g_conv1_pre)?;
    grads.conv1_pointwise.add_assign(&pw1.grad_params[0])?;
    grads.conv1_pointwise_bias.add_assign(&pw1.grad_params[1])?;
    let dw1 = conv1d_depthwise_backward(&cache.input, &params.conv1_depthwise, 1, &pw1.grad_input)?;
    grads.conv1_depthwise.add_assign(&dw1.grad_params[0])?;
    grads.conv1_depthwise_bias.add_assign(&dw1.grad_params[1])?;
    Ok(())
}

/// Exact gradients of [`loss`] with respect to every parameter array,
/// including the `2 * l2_lambda * w` regularization term on weights.
pub fn backward(
    config: &ModelConfig,
    params: &ModelParams,
    cache: &ForwardCache,
    target: &OneHotTarget,
    l2_lambda: f64,
) -> Result<ModelParams> {
    if !(l2_lambda.is_finite() && l2_lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("l2_lambda {l2_lambda} must be >= 0")));
    }
    let mut grads = ModelParams::zeros(config)?;
    backward_accumulate(config, params, cache, target, &mut grads)?;
    if l2_lambda > 0.0 {
        add_l2_grads(&mut grads, params, l2_lambda);
    }
    Ok(grads)
}

/// Adds `2 * l2_lambda * w` to the weight gradients.
pub(crate) fn add_l2_grads(grads: &mut ModelParams, params: &ModelParams, l2_lambda: f64) {
    let factor = 2.0 * l2_lambda;
    axpy(factor, params.conv1_depthwise.data(), grads.conv1_depthwise.data_mut());
    axpy(factor, params.conv1_pointwise.data(), grads.conv1_pointwise.data_mut());
    axpy(factor, params.conv2_depthwise.data(), grads.conv2_depthwise.data_mut());
    axpy(factor, params.conv2_pointwise.data(), grads.conv2_pointwise.data_mut());
    axpy(factor, params.fc1_weight.data(), grads.fc1_weight.data_mut());
    axpy(factor, params.out_weight.data(), grads.out_weight.data_mut());
}

/// A reduced geometry small enough for exhaustive finite differences.
#[cfg(test)]
pub(crate) fn reduced_config() -> ModelConfig {
    ModelConfig {
        input_len: 40,
        channels: 2,
        num_classes: 3,
        conv1_kernel: 8,
        conv1_channels: 4,
        pool_window: 4,
        pool_stride: 2,
        conv2_kernel: 3,
        conv2_channels: 4,
        fc_units: 16,
        l2_lambda: 0.0,
    }
}
