use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Same-length 1-D convolution with symmetric zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[C_out, C_in, K]`
    pub kernel: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn new(kernel: Tensor, bias: Tensor) -> Result<Self> {
        kernel.expect_rank("conv1d", 3)?;
        let k = kernel.dim(2);
        if k.is_multiple_of(2) {
            return Err(Error::shape("conv1d", format!("kernel size {k} must be odd")));
        }
        bias.expect_shape("conv1d", &[kernel.dim(0)])?;
        Ok(ConvLayer { kernel, bias })
    }

    /// Uniform init in `±1/sqrt(C_in * K)`.
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / ((c_in * k) as f64).sqrt();
        let kernel = Tensor::uniform(&[c_out, c_in, k], bound, rng);
        let bias = Tensor::uniform(&[c_out], bound, rng);
        ConvLayer::new(kernel, bias)
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim(0)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.dim(2)
    }
}

fn check_input(input: &Tensor, layer: &ConvLayer) -> Result<(usize, usize, usize)> {
    input.expect_rank("conv1d", 3)?;
    let (b, c, l) = (input.dim(0), input.dim(1), input.dim(2));
    if c != layer.in_channels() {
        return Err(Error::shape(
            "conv1d",
            format!(
                "input channel axis is {c} but kernel channel axis is {}",
                layer.in_channels()
            ),
        ));
    }
    if l == 0 {
        return Err(Error::EmptyLength("conv1d"));
    }
    Ok((b, c, l))
}

/// Unfolds one sample `[C_in, L]` into columns `[C_in * K, L]`.
fn im2col(sample: &[f64], c_in: usize, len: usize, k: usize, col: &mut [f64]) {
    let pad = k / 2;
    for c in 0..c_in {
        let row_in = &sample[c * len..(c + 1) * len];
        for j in 0..k {
            let row = &mut col[(c * k + j) * len..(c * k + j + 1) * len];
            // out[t] reads in[t + j - pad]
            let shift = j as isize - pad as isize;
            for (t, dst) in row.iter_mut().enumerate() {
                let src = t as isize + shift;
                *dst = if src >= 0 && (src as usize) < len {
                    row_in[src as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im_add(col: &[f64], c_in: usize, len: usize, k: usize, sample: &mut [f64]) {
    let pad = k / 2;
    for c in 0..c_in {
        let row_out = &mut sample[c * len..(c + 1) * len];
        for j in 0..k {
            let row = &col[(c * k + j) * len..(c * k + j + 1) * len];
            let shift = j as isize - pad as isize;
            for (t, &v) in row.iter().enumerate() {
                let src = t as isize + shift;
                if src >= 0 && (src as usize) < len {
                    row_out[src as usize] += v;
                }
            }
        }
    }
}

/// `C += A · B` for row-major dense blocks; `trans_*` views the operand transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slices cover exactly m*k, k*n and m*n elements with the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv1d_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let (batch, c_in, len) = check_input(input, layer)?;
    let c_out = layer.out_channels();
    let k = layer.kernel_size();
    let mut out = Tensor::zeros(&[batch, c_out, len]);
    let mut col = vec![0.0; c_in * k * len];
    let x = input.data();
    let w = layer.kernel.data();
    let bias = layer.bias.data();
    for b in 0..batch {
        im2col(&x[b * c_in * len..(b + 1) * c_in * len], c_in, len, k, &mut col);
        let dst = &mut out.data_mut()[b * c_out * len..(b + 1) * c_out * len];
        for (o, row) in dst.chunks_mut(len).enumerate() {
            row.fill(bias[o]);
        }
        gemm(c_out, c_in * k, len, w, false, &col, false, dst, true);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv1d_backward(input: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> Result<ConvGrads> {
    let (batch, c_in, len) = check_input(input, layer)?;
    let c_out = layer.out_channels();
    let k = layer.kernel_size();
    grad_out.expect_shape("conv1d backward", &[batch, c_out, len])?;

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_kernel = Tensor::zeros(layer.kernel.shape());
    let mut grad_bias = Tensor::zeros(&[c_out]);
    let mut col = vec![0.0; c_in * k * len];
    let mut dcol = vec![0.0; c_in * k * len];
    let x = input.data();
    let g = grad_out.data();
    let w = layer.kernel.data();

    for b in 0..batch {
        let gb = &g[b * c_out * len..(b + 1) * c_out * len];
        im2col(&x[b * c_in * len..(b + 1) * c_in * len], c_in, len, k, &mut col);
        // dW[o, ck] += g[o, t] * col[ck, t]
        gemm(c_out, len, c_in * k, gb, false, &col, true, grad_kernel.data_mut(), true);
        // dcol[ck, t] = W[o, ck]^T g[o, t]
        gemm(c_in * k, c_out, len, w, true, gb, false, &mut dcol, false);
        col2im_add(
            &dcol,
            c_in,
            len,
            k,
            &mut grad_input.data_mut()[b * c_in * len..(b + 1) * c_in * len],
        );
        for (o, row) in gb.chunks(len).enumerate() {
            grad_bias.data_mut()[o] += row.iter().sum::<f64>();
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn naive_conv(input: &Tensor, layer: &ConvLayer) -> Vec<f64> {
        let (b, c_in, l) = (input.dim(0), input.dim(1), input.dim(2));
        let (c_out, k) = (layer.out_channels(), layer.kernel_size());
        let half = (k / 2) as isize;
        let mut out = vec![0.0; b * c_out * l];
        for bi in 0..b {
            for o in 0..c_out {
                for t in 0..l {
                    let mut acc = layer.bias.data()[o];
                    for c in 0..c_in {
                        for j in 0..k {
                            let src = t as isize + j as isize - half;
                            if src < 0 || src >= l as isize {
                                continue;
                            }
                            acc += layer.kernel.data()[(o * c_in + c) * k + j]
                                * input.data()[(bi * c_in + c) * l + src as usize];
                        }
                    }
                    out[(bi * c_out + o) * l + t] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn zero_kernel_outputs_bias() {
        let layer = ConvLayer::new(
            Tensor::zeros(&[2, 1, 3]),
            Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap(),
        )
        .unwrap();
        let input = Tensor::uniform(&[2, 1, 6], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let out = conv1d_forward(&input, &layer).unwrap();
        assert_eq!(out.shape(), &[2, 2, 6]);
        for b in 0..2 {
            for o in 0..2 {
                for t in 0..6 {
                    assert_eq!(out.data()[(b * 2 + o) * 6 + t], layer.bias.data()[o]);
                }
            }
        }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let layer = ConvLayer::new(
            Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let input = Tensor::uniform(&[3, 1, 9], 2.0, &mut ChaCha8Rng::seed_from_u64(2));
        let out = conv1d_forward(&input, &layer).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Tensor::uniform(&[2, 1, 8], 1.0, &mut rng);
        let layer = ConvLayer::init(1, 4, 3, &mut rng).unwrap();
        let out = conv1d_forward(&input, &layer).unwrap();
        for (a, b) in out.data().iter().zip(naive_conv(&input, &layer)) {
            assert!((a - b).abs() < 1e-6);
        }

        let input = Tensor::uniform(&[3, 5, 11], 1.0, &mut rng);
        let layer = ConvLayer::init(5, 7, 5, &mut rng).unwrap();
        let out = conv1d_forward(&input, &layer).unwrap();
        for (a, b) in out.data().iter().zip(naive_conv(&input, &layer)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_names_axes() {
        let layer = ConvLayer::init(2, 3, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let err = conv1d_forward(&Tensor::zeros(&[1, 3, 5]), &layer).unwrap_err();
        assert!(err.to_string().contains("channel axis"), "{err}");
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvLayer::new(Tensor::zeros(&[1, 1, 4]), Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn kernel_wider_than_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = Tensor::uniform(&[1, 2, 2], 1.0, &mut rng);
        let layer = ConvLayer::init(2, 3, 9, &mut rng).unwrap();
        let out = conv1d_forward(&input, &layer).unwrap();
        assert_eq!(out.shape(), &[1, 3, 2]);
        for (a, b) in out.data().iter().zip(naive_conv(&input, &layer)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
