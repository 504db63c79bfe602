//! Blended attention block: a full-resolution descriptor
//! `tau = sigmoid(expand(relu(reduce(x))))` with the same shape as the
//! input, applied by Hadamard product. The two 1x1 convolutions perform
//! channel down-scaling by the reduction ratio and back up, so the block
//! weights channels and spatial positions jointly.

use crate::error::{Error, Result};
use crate::layers::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward, Conv2d, Conv2dGrad};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

/// Parameters of one blended attention block over `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendedAttention<S = f32> {
    /// 1x1 conv, C -> max(C/ratio, 1), no bias.
    pub reduce: Conv2d<S>,
    /// 1x1 conv, max(C/ratio, 1) -> C, zero-initialized bias.
    pub expand: Conv2d<S>,
}

/// Gradients for one [`BlendedAttention`].
#[derive(Debug, Clone)]
pub struct BlendedAttentionGrad<S = f32> {
    pub reduce: Conv2dGrad<S>,
    pub expand: Conv2dGrad<S>,
}

/// Reduced channel count for a block over `channels` with the given ratio.
pub fn reduced_channels(channels: usize, ratio: usize) -> usize {
    (channels / ratio).max(1)
}

impl<S: Scalar> BlendedAttention<S> {
    pub fn init<R: Rng>(channels: usize, ratio: usize, rng: &mut R) -> Self {
        let mid = reduced_channels(channels, ratio);
        Self {
            reduce: Conv2d::init(channels, mid, 1, 1, 0, false, rng),
            expand: Conv2d::init(mid, channels, 1, 1, 0, true, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.reduce.in_channels()
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.expand.param_count()
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::Shape(format!(
                "attention block expects {} channels, got {}",
                self.channels(),
                x.c()
            )));
        }
        Ok(())
    }

    /// Returns `(y, tau)` where `tau` has the input's shape, every element
    /// strictly inside (0, 1), and `y = tau (Hadamard) x`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        self.check_input(x)?;
        let mid = relu_forward(&self.reduce.forward(x)?);
        let tau = sigmoid_forward(&self.expand.forward(&mid)?);
        let y = tau.hadamard(x)?;
        Ok((y, tau))
    }

    /// Exact gradients through both the descriptor path and the identity
    /// path of the Hadamard product.
    pub fn backward(&self, x: &Tensor<S>, grad_y: &Tensor<S>) -> Result<(Tensor<S>, BlendedAttentionGrad<S>)> {
        self.check_input(x)?;
        if grad_y.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "attention grad shape {} does not match input {}",
                grad_y.shape(),
                x.shape()
            )));
        }
        let mid_pre = self.reduce.forward(x)?;
        let mid = relu_forward(&mid_pre);
        let tau_pre = self.expand.forward(&mid)?;
        let tau = sigmoid_forward(&tau_pre);

        // y = tau . x: product rule splits the incoming gradient.
        let grad_tau = grad_y.hadamard(x)?;
        let mut grad_x = grad_y.hadamard(&tau)?;

        let grad_tau_pre = sigmoid_backward(&tau_pre, &grad_tau)?;
        let (grad_mid, expand_grad) = self.expand.backward(&mid, &grad_tau_pre)?;
        let grad_mid_pre = relu_backward(&mid_pre, &grad_mid)?;
        let (grad_x_desc, reduce_grad) = self.reduce.backward(x, &grad_mid_pre)?;
        grad_x.accumulate(&grad_x_desc)?;

        Ok((grad_x, BlendedAttentionGrad { reduce: reduce_grad, expand: expand_grad }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck::assert_grad_matches_fd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(n, c, h, w, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_expand_weights_yield_half_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut block = BlendedAttention::<f64>::init(8, 4, &mut rng);
        block.expand.weight = Tensor::zeros(8, 2, 1, 1);
        block.expand.bias = Some(vec![0.0; 8]);
        let x = random_tensor(1, 8, 3, 3, &mut rng);
        let (y, tau) = block.forward(&x).unwrap();
        assert!(tau.data().iter().all(|&t| t == 0.5));
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn tau_strictly_inside_unit_interval_and_attenuates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = BlendedAttention::<f64>::init(32, 16, &mut rng);
        let x = random_tensor(2, 32, 4, 4, &mut rng);
        let (y, tau) = block.forward(&x).unwrap();
        assert!(tau.data().iter().all(|&t| t > 0.0 && t < 1.0));
        for (a, b) in y.data().iter().zip(x.data()) {
            if *b != 0.0 {
                assert!(a.abs() < b.abs());
            }
        }
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn zeros_map_to_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = BlendedAttention::<f64>::init(8, 16, &mut rng);
        let x = Tensor::zeros(1, 8, 3, 3);
        let (y, _) = block.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_naive_composition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = BlendedAttention::<f64>::init(32, 16, &mut rng);
        let x = random_tensor(1, 32, 4, 4, &mut rng);
        let (y, _) = block.forward(&x).unwrap();

        // hand composition with plain channel-mixing loops (k=1)
        let mid_c = 2;
        let mut mid = Tensor::zeros(1, mid_c, 4, 4);
        for o in 0..mid_c {
            for h in 0..4 {
                for w in 0..4 {
                    let mut acc = 0.0;
                    for c in 0..32 {
                        acc += block.reduce.weight.at(o, c, 0, 0) * x.at(0, c, h, w);
                    }
                    mid.set(0, o, h, w, acc.max(0.0));
                }
            }
        }
        let mut want = Tensor::zeros(1, 32, 4, 4);
        for o in 0..32 {
            for h in 0..4 {
                for w in 0..4 {
                    let mut acc = block.expand.bias.as_ref().unwrap()[o];
                    for c in 0..mid_c {
                        acc += block.expand.weight.at(o, c, 0, 0) * mid.at(0, c, h, w);
                    }
                    let tau = 1.0 / (1.0 + (-acc).exp());
                    want.set(0, o, h, w, tau * x.at(0, o, h, w));
                }
            }
        }
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn backward_zero_grad_gives_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = BlendedAttention::<f64>::init(8, 4, &mut rng);
        let x = random_tensor(1, 8, 3, 3, &mut rng);
        let (gx, gp) = block.backward(&x, &Tensor::zeros(1, 8, 3, 3)).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gp.reduce.weight.data().iter().all(|&v| v == 0.0));
        assert!(gp.expand.weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_expand_identity_path_carries_half_grad() {
        // with expand params zero, tau == 0.5 and the descriptor path into
        // grad_x dies (reduce sees zero upstream through expand weights), so
        // grad_x == 0.5 * grad_y exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut block = BlendedAttention::<f64>::init(8, 4, &mut rng);
        block.expand.weight = Tensor::zeros(8, 2, 1, 1);
        block.expand.bias = Some(vec![0.0; 8]);
        let x = random_tensor(1, 8, 3, 3, &mut rng);
        let grad_y = random_tensor(1, 8, 3, 3, &mut rng);
        let (gx, _) = block.backward(&x, &grad_y).unwrap();
        for (a, b) in gx.data().iter().zip(grad_y.data()) {
            assert!((a - 0.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let block = BlendedAttention::<f64>::init(32, 16, &mut rng);
        let x = random_tensor(1, 32, 3, 3, &mut rng);
        // random linear objective: loss = sum(c . forward(x).y)
        let cvec = random_tensor(1, 32, 3, 3, &mut rng);

        let (_, grads) = block.backward(&x, &cvec).unwrap();
        let (gx, _) = block.backward(&x, &cvec).unwrap();
        assert_eq!(gx.shape(), x.shape());

        // flatten: [reduce.w, expand.w, expand.b, x]
        let mut theta = Vec::new();
        theta.extend_from_slice(block.reduce.weight.data());
        theta.extend_from_slice(block.expand.weight.data());
        theta.extend_from_slice(block.expand.bias.as_ref().unwrap());
        theta.extend_from_slice(x.data());
        let mut analytic = Vec::new();
        analytic.extend_from_slice(grads.reduce.weight.data());
        analytic.extend_from_slice(grads.expand.weight.data());
        analytic.extend_from_slice(grads.expand.bias.as_ref().unwrap());
        analytic.extend_from_slice(gx.data());

        let proto = block.clone();
        let x0 = x.clone();
        let mut eval = |theta: &[f64]| -> f64 {
            let mut b = proto.clone();
            let (rw, rest) = theta.split_at(b.reduce.weight.len());
            let (ew, rest) = rest.split_at(b.expand.weight.len());
            let (eb, xs) = rest.split_at(b.expand.bias.as_ref().unwrap().len());
            b.reduce.weight.data_mut().copy_from_slice(rw);
            b.expand.weight.data_mut().copy_from_slice(ew);
            b.expand.bias.as_mut().unwrap().copy_from_slice(eb);
            let xt = Tensor::from_vec(x0.n(), x0.c(), x0.h(), x0.w(), xs.to_vec()).unwrap();
            let (y, _) = b.forward(&xt).unwrap();
            y.data().iter().zip(cvec.data()).map(|(a, c)| a * c).sum()
        };
        assert_grad_matches_fd(&mut eval, &theta, &analytic, 1e-4, 1e-6, "attention");
    }
}
