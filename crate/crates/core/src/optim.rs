//! Parameter update rules: plain SGD and Adam with bias correction.

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Which update rule the training loop applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?} (use adam or sgd)"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

/// Adam moment coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("{name} {beta} not in [0, 1)")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::InvalidConfig(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        Ok(())
    }
}

/// First/second moment arrays (Adam) and the shared step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub first_moment: Option<ModelParams>,
    pub second_moment: Option<ModelParams>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new() -> Self {
        OptimizerState { first_moment: None, second_moment: None, step: 0 }
    }
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same_shapes(params: &ModelParams, grads: &ModelParams, context: &str) -> Result<()> {
    for ((name, p), (_, g)) in params.named().into_iter().zip(grads.named()) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                context,
                format!("{name}: params {:?} vs grads {:?}", p.shape(), g.shape()),
            ));
        }
    }
    Ok(())
}

/// `theta <- theta - lr * g`, element-wise.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, learning_rate: f64) -> Result<()> {
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(Error::InvalidConfig(format!("learning rate {learning_rate} must be > 0")));
    }
    check_same_shapes(params, grads, "sgd_step")?;
    for ((_, p), (_, g)) in params.named_mut().into_iter().zip(grads.named()) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= learning_rate * gv;
        }
    }
    Ok(())
}

/// One Adam update with bias correction:
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`,
/// `theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    learning_rate: f64,
    config: &AdamConfig,
) -> Result<()> {
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(Error::InvalidConfig(format!("learning rate {learning_rate} must be > 0")));
    }
    config.validate()?;
    check_same_shapes(params, grads, "adam_step")?;
    if state.first_moment.is_none() {
        let mut zero = params.clone();
        zero.scale(0.0);
        state.first_moment = Some(zero.clone());
        state.second_moment = Some(zero);
    }
    let m = state.first_moment.as_mut().expect("initialized above");
    let v = state.second_moment.as_mut().expect("initialized above");
    check_same_shapes(params, m, "adam_step")?;
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);
    for ((((_, p), (_, g)), (_, mi)), (_, vi)) in params
        .named_mut()
        .into_iter()
        .zip(grads.named())
        .zip(m.named_mut())
        .zip(v.named_mut())
    {
        let (pd, gd, md, vd) = (p.data_mut(), g.data(), mi.data_mut(), vi.data_mut());
        for i in 0..pd.len() {
            let g = gd[i];
            md[i] = config.beta1 * md[i] + (1.0 - config.beta1) * g;
            vd[i] = config.beta2 * vd[i] + (1.0 - config.beta2) * g * g;
            let m_hat = md[i] / bias1;
            let v_hat = vd[i] / bias2;
            pd[i] -= learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
