use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the per-channel spread is turned into a divisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    /// `(x - mean) / sqrt(var + zeta)` with the population variance.
    #[default]
    Standard,
    /// `(x - mean) / (delta + zeta)` where `delta = sqrt(sum (x - mean)^2)`,
    /// i.e. the root of the un-averaged sum of squared deviations.
    RootSumSquares,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub alpha: Tensor,
    pub beta: Tensor,
    pub zeta: f64,
    pub momentum: f64,
    pub running_mean: Tensor,
    /// Population variance in `Standard` mode; squared `delta` in `RootSumSquares` mode.
    pub running_var: Tensor,
    pub mode: NormMode,
}

pub const DEFAULT_ZETA: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

impl BatchNormLayer {
    pub fn new(channels: usize, mode: NormMode) -> Self {
        BatchNormLayer {
            alpha: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            zeta: DEFAULT_ZETA,
            momentum: DEFAULT_MOMENTUM,
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            mode,
        }
    }

    pub fn channels(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0) {
            return Err(Error::Config(format!("batch-norm zeta must be > 0, got {}", self.zeta)));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "batch-norm momentum must lie in (0,1), got {}",
                self.momentum
            )));
        }
        let c = self.channels();
        for (name, t) in [
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::shape(
                    "batchnorm",
                    format!("{name} has shape {:?}, expected [{c}]", t.shape()),
                ));
            }
        }
        Ok(())
    }

    fn divisor(&self, spread: f64) -> f64 {
        match self.mode {
            NormMode::Standard => (spread + self.zeta).sqrt(),
            NormMode::RootSumSquares => spread.sqrt() + self.zeta,
        }
    }
}

/// Values needed by the backward pass of a training-mode forward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Tensor,
    divisor: Vec<f64>,
    /// `sqrt(sum (x - mean)^2)` per channel, only used by `RootSumSquares`.
    delta: Vec<f64>,
    count: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub alpha: Tensor,
    pub beta: Tensor,
}

/// Splits a `[B, C]` or `[B, C, L]` tensor into `(batch, channels, inner)`.
fn layout(input: &Tensor, channels: usize) -> Result<(usize, usize)> {
    let inner = match input.rank() {
        2 => 1,
        3 => input.dim(2),
        _ => {
            return Err(Error::shape(
                "batchnorm",
                format!("expected [B,C] or [B,C,L], got {:?}", input.shape()),
            ))
        }
    };
    if input.dim(1) != channels {
        return Err(Error::shape(
            "batchnorm",
            format!("channel axis is {} but layer has {channels}", input.dim(1)),
        ));
    }
    Ok((input.dim(0), inner))
}

fn channel_values(data: &[f64], batch: usize, channels: usize, inner: usize, c: usize) -> impl Iterator<Item = &f64> {
    (0..batch).flat_map(move |b| {
        let start = (b * channels + c) * inner;
        data[start..start + inner].iter()
    })
}

/// Dispatches to the training or inference path.
pub fn batchnorm_forward(input: &Tensor, layer: &mut BatchNormLayer, training: bool) -> Result<Tensor> {
    if training {
        batchnorm_forward_train(input, layer).map(|(out, _)| out)
    } else {
        batchnorm_forward_eval(input, layer)
    }
}

/// Normalizes with batch statistics and folds them into the running statistics.
pub fn batchnorm_forward_train(input: &Tensor, layer: &mut BatchNormLayer) -> Result<(Tensor, BatchNormCache)> {
    layer.validate()?;
    let channels = layer.channels();
    let (batch, inner) = layout(input, channels)?;
    if batch == 0 {
        return Err(Error::EmptyBatch("batchnorm"));
    }
    if inner == 0 {
        return Err(Error::EmptyLength("batchnorm"));
    }
    let count = batch * inner;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let mut normalized = Tensor::zeros(input.shape());
    let mut divisor = vec![0.0; channels];
    let mut delta = vec![0.0; channels];

    for c in 0..channels {
        let mean = channel_values(x, batch, channels, inner, c).sum::<f64>() / count as f64;
        let sum_sq: f64 = channel_values(x, batch, channels, inner, c)
            .map(|v| (v - mean) * (v - mean))
            .sum();
        let spread = match layer.mode {
            NormMode::Standard => sum_sq / count as f64,
            NormMode::RootSumSquares => sum_sq,
        };
        let div = layer.divisor(spread);
        if !mean.is_finite() || !div.is_finite() {
            return Err(Error::Numeric(format!("batchnorm statistics of channel {c}")));
        }
        divisor[c] = div;
        delta[c] = sum_sq.sqrt();

        let (a, s) = (layer.alpha.data()[c], layer.beta.data()[c]);
        for b in 0..batch {
            let start = (b * channels + c) * inner;
            for i in start..start + inner {
                let n = (x[i] - mean) / div;
                normalized.data_mut()[i] = n;
                out.data_mut()[i] = a * n + s;
            }
        }

        let m = layer.momentum;
        let rm = &mut layer.running_mean.data_mut()[c];
        *rm = m * *rm + (1.0 - m) * mean;
        let rv = &mut layer.running_var.data_mut()[c];
        *rv = m * *rv + (1.0 - m) * spread;
    }

    Ok((
        out,
        BatchNormCache {
            normalized,
            divisor,
            delta,
            count,
        },
    ))
}

/// Normalizes with the running statistics; the layer is not modified.
pub fn batchnorm_forward_eval(input: &Tensor, layer: &BatchNormLayer) -> Result<Tensor> {
    layer.validate()?;
    let channels = layer.channels();
    let (batch, inner) = layout(input, channels)?;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    for c in 0..channels {
        let mean = layer.running_mean.data()[c];
        let div = layer.divisor(layer.running_var.data()[c].max(0.0));
        let (a, s) = (layer.alpha.data()[c], layer.beta.data()[c]);
        for b in 0..batch {
            let start = (b * channels + c) * inner;
            for i in start..start + inner {
                out.data_mut()[i] = a * (x[i] - mean) / div + s;
            }
        }
    }
    Ok(out)
}

pub fn batchnorm_backward(
    layer: &BatchNormLayer,
    cache: &BatchNormCache,
    grad_out: &Tensor,
) -> Result<BatchNormGrads> {
    grad_out.expect_shape("batchnorm backward", cache.normalized.shape())?;
    let channels = layer.channels();
    let (batch, inner) = layout(grad_out, channels)?;
    let g = grad_out.data();
    let xn = cache.normalized.data();
    let n = cache.count as f64;

    let mut grad_input = Tensor::zeros(grad_out.shape());
    let mut grad_alpha = Tensor::zeros(&[channels]);
    let mut grad_beta = Tensor::zeros(&[channels]);

    for c in 0..channels {
        let mut sum_g = 0.0;
        let mut sum_g_xn = 0.0;
        for b in 0..batch {
            let start = (b * channels + c) * inner;
            for i in start..start + inner {
                sum_g += g[i];
                sum_g_xn += g[i] * xn[i];
            }
        }
        grad_beta.data_mut()[c] = sum_g;
        grad_alpha.data_mut()[c] = sum_g_xn;

        let alpha = layer.alpha.data()[c];
        let div = cache.divisor[c];
        let mean_g = sum_g / n;
        // Statistics are differentiated through; in both modes the mean
        // term drops out of the spread derivative because deviations sum to 0.
        let proj = match layer.mode {
            NormMode::Standard => sum_g_xn / n,
            NormMode::RootSumSquares if cache.delta[c] > 0.0 => sum_g_xn * div / cache.delta[c],
            NormMode::RootSumSquares => 0.0,
        };
        for b in 0..batch {
            let start = (b * channels + c) * inner;
            for i in start..start + inner {
                grad_input.data_mut()[i] = alpha * (g[i] - mean_g - xn[i] * proj) / div;
            }
        }
    }

    Ok(BatchNormGrads {
        input: grad_input,
        alpha: grad_alpha,
        beta: grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn scalar_batch(values: &[f64]) -> Tensor {
        Tensor::from_vec(&[values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn constant_batch_maps_to_beta() {
        let mut layer = BatchNormLayer::new(1, NormMode::Standard);
        layer.beta = Tensor::from_vec(&[1], vec![0.75]).unwrap();
        let out = batchnorm_forward(&scalar_batch(&[0.25; 5]), &mut layer, true).unwrap();
        for v in out.data() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_alpha_maps_to_beta() {
        let mut layer = BatchNormLayer::new(2, NormMode::Standard);
        layer.alpha.fill(0.0);
        layer.beta = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        let input = Tensor::uniform(&[3, 2, 4], 5.0, &mut ChaCha8Rng::seed_from_u64(9));
        let out = batchnorm_forward(&input, &mut layer, true).unwrap();
        for b in 0..3 {
            for c in 0..2 {
                for t in 0..4 {
                    assert_eq!(out.data()[(b * 2 + c) * 4 + t], layer.beta.data()[c]);
                }
            }
        }
    }

    #[test]
    fn one_two_three_matches_scalar_oracle() {
        // mean 2, population variance 2/3
        let zeta = DEFAULT_ZETA;
        let expected: Vec<f64> = [1.0, 2.0, 3.0]
            .iter()
            .map(|x| (x - 2.0) / (2.0f64 / 3.0 + zeta).sqrt())
            .collect();
        let mut layer = BatchNormLayer::new(1, NormMode::Standard);
        let out = batchnorm_forward(&scalar_batch(&[1.0, 2.0, 3.0]), &mut layer, true).unwrap();
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.data()[0] + 1.2247).abs() < 1e-4);
        assert!((out.data()[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn root_sum_squares_mode() {
        // delta = sqrt(2)
        let mut layer = BatchNormLayer::new(1, NormMode::RootSumSquares);
        let out = batchnorm_forward(&scalar_batch(&[1.0, 2.0, 3.0]), &mut layer, true).unwrap();
        let div = 2f64.sqrt() + DEFAULT_ZETA;
        assert!((out.data()[0] + 1.0 / div).abs() < 1e-12);
        assert!((out.data()[2] - 1.0 / div).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let mut layer = BatchNormLayer::new(1, NormMode::Standard);
        let err = batchnorm_forward(&Tensor::zeros(&[0, 1, 4]), &mut layer, true).unwrap_err();
        assert!(matches!(err, Error::EmptyBatch(_)));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut layer = BatchNormLayer::new(1, NormMode::Standard);
        batchnorm_forward(&scalar_batch(&[1.0, 2.0, 3.0]), &mut layer, true).unwrap();
        assert!((layer.running_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((layer.running_var.data()[0] - (0.9 + 0.1 * 2.0 / 3.0)).abs() < 1e-12);

        let before = layer.clone();
        let out = batchnorm_forward(&scalar_batch(&[0.2]), &mut layer, false).unwrap();
        assert_eq!(layer, before);
        assert!(out.data()[0].abs() < 1e-12);
    }

    #[test]
    fn training_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = Tensor::uniform(&[4, 3, 16], 3.0, &mut rng);
        let mut layer = BatchNormLayer::new(3, NormMode::Standard);
        layer.beta = Tensor::from_vec(&[3], vec![0.5, -0.5, 2.0]).unwrap();
        let out = batchnorm_forward(&input, &mut layer, true).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = channel_values(out.data(), 4, 3, 16, c).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((mean - layer.beta.data()[c]).abs() < 1e-5);
            assert!((var.sqrt() - 1.0).abs() < 1e-3);
        }
    }
}
