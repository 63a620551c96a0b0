use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes gradient where the forward output was positive.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

/// Row-wise softmax of `[B, C]` logits with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let cols = logits.dim(1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn relu_cases() {
        let neg = Tensor::from_vec(&[4], vec![-1.0, -0.5, -3.0, -1e-9]).unwrap();
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_vec(&[3], vec![0.1, 2.0, 7.5]).unwrap();
        assert_eq!(relu_forward(&pos), pos);

        let mixed = Tensor::uniform(&[2, 3, 5], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let out = relu_forward(&mixed);
        for (o, i) in out.data().iter().zip(mixed.data()) {
            assert_eq!(*o, if *i > 0.0 { *i } else { 0.0 });
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let logits = Tensor::uniform(&[3, 4], 5.0, &mut ChaCha8Rng::seed_from_u64(1));
        let shifted = logits.map(|v| v + 123.0);
        let (a, b) = (softmax_rows(&logits), softmax_rows(&shifted));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        for row in a.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
