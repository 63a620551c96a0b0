use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
}

/// A parameter tensor paired with the name used in diagnostics.
pub struct NamedParam<'a> {
    pub name: &'a str,
    pub value: &'a mut Tensor,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
        }
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched, so a rejected step leaves everything unchanged.
    pub fn step(&mut self, params: &mut [NamedParam<'_>], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "adam",
                format!("{} parameter groups but {} gradients", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            g.expect_shape("adam", p.value.shape()).map_err(|_| {
                Error::shape(
                    "adam",
                    format!("gradient {:?} does not match parameter {} {:?}", g.shape(), p.name, p.value.shape()),
                )
            })?;
            if !g.all_finite() {
                return Err(Error::Numeric(format!("gradient of parameter group {}", p.name)));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self.first_moment.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.value.shape())
        {
            return Err(Error::State("adam moments do not mirror the parameter list".into()));
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let grad = g.data()[i] + weight_decay * values[i];
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * grad;
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * grad * grad;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
