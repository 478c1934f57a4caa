//! Reverse-mode gradients against central finite differences in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shellforge_core::nn::gradcheck::{layer_cases, max_gradient_error, relative_error, DEFAULT_STEP, DEFAULT_TOLERANCE};
use shellforge_core::nn::*;

fn check(name: &str) {
    for seed in 0..3 {
        let case = layer_cases(seed).into_iter().find(|c| c.name == name).unwrap();
        let err = max_gradient_error(&case.params, case.graph.as_ref(), DEFAULT_STEP).unwrap();
        assert!(err < DEFAULT_TOLERANCE, "{name} seed {seed}: {err}");
    }
}

#[test]
fn conv2d_strided() {
    check("conv2d");
}

#[test]
fn linear_layer() {
    check("linear");
}

#[test]
fn conv_transpose3d_strided() {
    check("conv_transpose3d");
}

#[test]
fn pointwise3d_head() {
    check("pointwise3d");
}

#[test]
fn sigmoid() {
    check("sigmoid");
}

#[test]
fn relu() {
    check("relu");
}

#[test]
fn l2_loss() {
    check("loss_l2");
}

#[test]
fn bce_loss() {
    check("loss_bce");
}

#[test]
fn two_layer_toy_network() {
    check("toy_network");
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        input_size: 8,
        encoder_channels: vec![2],
        bottleneck_dim: 2,
        decoder_channels: vec![2, 2],
        head_resolutions: vec![8, 16],
        activation: Activation::Tanh,
        output_nonlinearity: OutputNonlinearity::Sigmoid,
    }
}

/// Step for the whole network. A few weights sit on paths whose third
/// derivative is large next to their gradient, and at 1e-3 the quotient's
/// truncation error alone exceeds the tolerance for them.
const H_NETWORK: f64 = 1e-4;

#[test]
fn full_network_deep_supervision() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = Network::<f64>::init(tiny_config(), 3).unwrap();
    let image = random(&mut rng, &[8, 8]);
    let truth = random(&mut rng, &[16, 16, 16]);
    let lambda = [0.3, 0.7];
    for kind in [LossKind::L2, LossKind::Bce] {
        let g = net.loss_and_gradients(&image, &truth, kind, &lambda).unwrap();
        let loss = |params: Vec<Tensor<f64>>| {
            let n = Network::from_params(tiny_config(), params).unwrap();
            n.loss_and_gradients(&image, &truth, kind, &lambda).unwrap().combined
        };
        let mut worst = 0.0f64;
        // Every bias plus a stride through each weight tensor.
        for (k, p) in net.params.iter().enumerate() {
            let a = g.grads.params[k].as_ref().unwrap();
            for i in (0..p.len()).step_by((p.len() / 40).max(1)) {
                let mut plus = net.params.clone();
                plus[k].data[i] += H_NETWORK;
                let mut minus = net.params.clone();
                minus[k].data[i] -= H_NETWORK;
                let numeric = (loss(plus) - loss(minus)) / (2.0 * H_NETWORK);
                worst = worst.max(relative_error(a[i], numeric));
            }
        }
        assert!(worst < DEFAULT_TOLERANCE, "{kind:?}: {worst}");
    }
}

#[test]
fn lambda_one_zero_is_first_head_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = Network::<f64>::init(tiny_config(), 4).unwrap();
    let image = random(&mut rng, &[8, 8]);
    let truth = random(&mut rng, &[16, 16, 16]);
    for kind in [LossKind::L2, LossKind::Bce] {
        let g = net.loss_and_gradients(&image, &truth, kind, &[1.0, 0.0]).unwrap();
        assert_eq!(g.combined, g.head_losses[0]);
    }
}
