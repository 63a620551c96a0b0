use rand::Rng;

use super::conv::gemm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[D_out, D_in]`
    pub weight: Tensor,
    /// `[D_out]`
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        weight.expect_rank("dense", 2)?;
        bias.expect_shape("dense", &[weight.dim(0)])?;
        Ok(DenseLayer { weight, bias })
    }

    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = Tensor::uniform(&[d_out, d_in], bound, rng);
        let bias = Tensor::uniform(&[d_out], bound, rng);
        DenseLayer::new(weight, bias)
    }

    pub fn in_features(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn out_features(&self) -> usize {
        self.weight.dim(0)
    }
}

fn check_input(input: &Tensor, layer: &DenseLayer) -> Result<usize> {
    input.expect_rank("dense", 2)?;
    if input.dim(1) != layer.in_features() {
        return Err(Error::shape(
            "dense",
            format!(
                "input feature axis is {} but weight expects {}",
                input.dim(1),
                layer.in_features()
            ),
        ));
    }
    Ok(input.dim(0))
}

/// `input · weightᵀ + bias`
pub fn dense_forward(input: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    let batch = check_input(input, layer)?;
    let (d_in, d_out) = (layer.in_features(), layer.out_features());
    let mut out = Tensor::zeros(&[batch, d_out]);
    for row in out.data_mut().chunks_mut(d_out.max(1)) {
        row.copy_from_slice(layer.bias.data());
    }
    gemm(batch, d_in, d_out, input.data(), false, layer.weight.data(), true, out.data_mut(), true);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(input: &Tensor, layer: &DenseLayer, grad_out: &Tensor) -> Result<DenseGrads> {
    let batch = check_input(input, layer)?;
    let (d_in, d_out) = (layer.in_features(), layer.out_features());
    grad_out.expect_shape("dense backward", &[batch, d_out])?;

    let mut grad_weight = Tensor::zeros(&[d_out, d_in]);
    gemm(d_out, batch, d_in, grad_out.data(), true, input.data(), false, grad_weight.data_mut(), false);
    let mut grad_input = Tensor::zeros(&[batch, d_in]);
    gemm(batch, d_out, d_in, grad_out.data(), false, layer.weight.data(), false, grad_input.data_mut(), false);
    let mut grad_bias = Tensor::zeros(&[d_out]);
    for row in grad_out.data().chunks(d_out.max(1)) {
        for (acc, g) in grad_bias.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(DenseGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_and_zero_weight() {
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let layer = DenseLayer::new(eye, Tensor::zeros(&[3])).unwrap();
        let x = Tensor::uniform(&[4, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(dense_forward(&x, &layer).unwrap(), x);

        let b = Tensor::from_vec(&[2], vec![0.5, -2.0]).unwrap();
        let layer = DenseLayer::new(Tensor::zeros(&[2, 3]), b.clone()).unwrap();
        let out = dense_forward(&x, &layer).unwrap();
        for row in out.data().chunks(2) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = DenseLayer::init(5, 3, &mut rng).unwrap();
        let x = Tensor::uniform(&[4, 5], 1.0, &mut rng);
        let out = dense_forward(&x, &layer).unwrap();
        for b in 0..4 {
            for o in 0..3 {
                let mut acc = layer.bias.data()[o];
                for i in 0..5 {
                    acc += x.data()[b * 5 + i] * layer.weight.data()[o * 5 + i];
                }
                assert!((out.data()[b * 3 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn squared_error_closed_form() {
        // loss = (w·x + b - y)^2 => dL/dw = 2 (pred - y) x
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = DenseLayer::init(4, 1, &mut rng).unwrap();
        let x = Tensor::uniform(&[1, 4], 1.0, &mut rng);
        let target = 0.3;
        let pred = dense_forward(&x, &layer).unwrap().data()[0];
        let upstream = Tensor::from_vec(&[1, 1], vec![2.0 * (pred - target)]).unwrap();
        let grads = dense_backward(&x, &layer, &upstream).unwrap();
        for i in 0..4 {
            let expected = 2.0 * (pred - target) * x.data()[i];
            assert!((grads.weight.data()[i] - expected).abs() < 1e-14);
        }
        assert!((grads.bias.data()[0] - 2.0 * (pred - target)).abs() < 1e-14);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::init(3, 2, &mut rng).unwrap();
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let grads = dense_backward(&x, &layer, &Tensor::zeros(&[2, 2])).unwrap();
        assert!(grads.weight.data().iter().chain(grads.bias.data()).chain(grads.input.data()).all(|&g| g == 0.0));
    }

    #[test]
    fn feature_mismatch() {
        let layer = DenseLayer::init(3, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(matches!(dense_forward(&Tensor::zeros(&[1, 4]), &layer), Err(Error::Shape { .. })));
    }
}
