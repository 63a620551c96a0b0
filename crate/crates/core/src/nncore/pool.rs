use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over the length axis: `[B, C, L] -> [B, C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    input.expect_rank("global_avg_pool", 3)?;
    let (b, c, l) = (input.dim(0), input.dim(1), input.dim(2));
    if l == 0 {
        return Err(Error::EmptyLength("global_avg_pool"));
    }
    let data = input
        .data()
        .chunks(l)
        .map(|row| row.iter().sum::<f64>() / l as f64)
        .collect();
    Tensor::from_vec(&[b, c], data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, len: usize) -> Result<Tensor> {
    grad_out.expect_rank("global_avg_pool backward", 2)?;
    if len == 0 {
        return Err(Error::EmptyLength("global_avg_pool backward"));
    }
    let scale = 1.0 / len as f64;
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, len))
        .collect();
    Tensor::from_vec(&[grad_out.dim(0), grad_out.dim(1), len], data)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn constant_and_pair() {
        let t = Tensor::filled(&[1, 2, 5], 3.5);
        assert_eq!(global_avg_pool(&t).unwrap().data(), &[3.5, 3.5]);
        let t = Tensor::from_vec(&[1, 1, 2], vec![0.0, 2.0]).unwrap();
        assert_eq!(global_avg_pool(&t).unwrap().data(), &[1.0]);
    }

    #[test]
    fn matches_mean_oracle() {
        let t = Tensor::uniform(&[3, 4, 7], 1.0, &mut ChaCha8Rng::seed_from_u64(11));
        let out = global_avg_pool(&t).unwrap();
        assert_eq!(out.shape(), &[3, 4]);
        for b in 0..3 {
            for c in 0..4 {
                let mut acc = 0.0;
                for l in 0..7 {
                    acc += t.data()[(b * 4 + c) * 7 + l];
                }
                assert!((out.data()[b * 4 + c] - acc / 7.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn empty_length_rejected() {
        assert!(matches!(
            global_avg_pool(&Tensor::zeros(&[1, 2, 0])),
            Err(Error::EmptyLength(_))
        ));
    }
}
