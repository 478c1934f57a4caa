//! Single-view encoder-decoder with one supervision head per output resolution.
//!
//! ```text
//! image [1, S, S]
//!   → strided conv blocks (k=4, s=2, p=1), each halving S
//!   → flatten → fully connected → reshape to [bottleneck_dim, 4, 4, 4]
//!   → transposed conv blocks (k=4, s=2, p=1), each doubling the cube
//!   → head (1×1×1 conv + output nonlinearity) wherever the cube size is a
//!     requested head resolution
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{head_targets, LossKind};
use super::tape::{Activation, Gradients, Tape, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BOTTLENECK_SIZE: usize = 4;
const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputNonlinearity {
    #[default]
    Sigmoid,
    Linear,
}

impl OutputNonlinearity {
    fn activation(self) -> Activation {
        match self {
            OutputNonlinearity::Sigmoid => Activation::Sigmoid,
            OutputNonlinearity::Linear => Activation::Identity,
        }
    }
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Square input edge in pixels.
    pub input_size: usize,
    pub encoder_channels: Vec<usize>,
    /// Channel count of the 4³ bottleneck cube.
    pub bottleneck_dim: usize,
    /// Output channels of each upsampling block.
    pub decoder_channels: Vec<usize>,
    pub head_resolutions: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub output_nonlinearity: OutputNonlinearity,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 64,
            encoder_channels: vec![8, 16, 32, 32],
            bottleneck_dim: 16,
            decoder_channels: vec![16, 8, 4],
            head_resolutions: vec![16, 32],
            activation: Activation::Relu,
            output_nonlinearity: OutputNonlinearity::Sigmoid,
        }
    }
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Inputs feeding one output element, for initialization.
    #[serde(skip)]
    pub fan_in: usize,
}

impl NetworkConfig {
    pub fn max_resolution(&self) -> usize {
        self.head_resolutions.last().copied().unwrap_or(0)
    }

    fn encoded_size(&self) -> usize {
        self.input_size >> self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::invalid("encoder_channels must be non-empty and positive"));
        }
        let depth = self.encoder_channels.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(1 << depth) {
            return Err(Error::invalid(format!(
                "input_size {} is not divisible by 2^{depth} (one halving per encoder block)",
                self.input_size
            )));
        }
        if self.bottleneck_dim == 0 || self.decoder_channels.contains(&0) {
            return Err(Error::invalid("bottleneck_dim and decoder_channels must be positive"));
        }
        let heads = &self.head_resolutions;
        if heads.is_empty() {
            return Err(Error::invalid("at least one head resolution is required"));
        }
        if heads.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::invalid(format!(
                "head resolutions {heads:?} must each double the previous"
            )));
        }
        let top = BOTTLENECK_SIZE << self.decoder_channels.len();
        if *heads.last().unwrap() != top {
            return Err(Error::invalid(format!(
                "largest head {} must equal the decoder output {top} (4 · 2^{})",
                heads.last().unwrap(),
                self.decoder_channels.len()
            )));
        }
        if heads[0] < BOTTLENECK_SIZE {
            return Err(Error::invalid("head resolutions must be >= 4"));
        }
        Ok(())
    }

    /// Parameter layout in id order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let spec = |name: String, shape: Vec<usize>, fan_in: usize| ParamSpec { name, shape, fan_in };
        let mut out = Vec::new();
        let mut c_in = 1;
        for (i, &c) in self.encoder_channels.iter().enumerate() {
            let fan = c_in * KERNEL * KERNEL;
            out.push(spec(format!("enc{i}.weight"), vec![c, c_in, KERNEL, KERNEL], fan));
            out.push(spec(format!("enc{i}.bias"), vec![c], fan));
            c_in = c;
        }
        let s = self.encoded_size();
        let flat = c_in * s * s;
        let cube = self.bottleneck_dim * BOTTLENECK_SIZE.pow(3);
        out.push(spec("fc.weight".into(), vec![cube, flat], flat));
        out.push(spec("fc.bias".into(), vec![cube], flat));
        let mut c_in = self.bottleneck_dim;
        let mut size = BOTTLENECK_SIZE;
        let taps = (KERNEL / STRIDE).pow(3);
        if self.head_resolutions.contains(&size) {
            out.push(spec(format!("head{size}.weight"), vec![1, c_in], c_in));
            out.push(spec(format!("head{size}.bias"), vec![1], c_in));
        }
        for (i, &c) in self.decoder_channels.iter().enumerate() {
            let fan = c_in * taps;
            out.push(spec(format!("dec{i}.weight"), vec![c_in, c, KERNEL, KERNEL, KERNEL], fan));
            out.push(spec(format!("dec{i}.bias"), vec![c], fan));
            c_in = c;
            size *= 2;
            if self.head_resolutions.contains(&size) {
                out.push(spec(format!("head{size}.weight"), vec![1, c_in], c_in));
                out.push(spec(format!("head{size}.bias"), vec![1], c_in));
            }
        }
        out
    }
}

/// Network configuration plus its parameters, in [`NetworkConfig::param_specs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub params: Vec<Tensor<T>>,
}

/// Output of one forward/backward pass on a single sample.
#[derive(Debug, Clone)]
pub struct SampleGradients<T> {
    pub head_losses: Vec<T>,
    pub combined: T,
    pub grads: Gradients<T>,
}

impl<T: Scalar> Network<T> {
    /// Fan-in scaled uniform weights `U(±√(6 / fan_in))`, zero biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .param_specs()
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = if s.name.ends_with(".bias") {
                    vec![T::zero(); n]
                } else {
                    let bound = (6.0 / s.fan_in as f64).sqrt();
                    (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
                };
                Tensor::new(&s.shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(Error::shape("parameter count", &[specs.len()], &[params.len()]));
        }
        for (i, (s, p)) in specs.iter().zip(&params).enumerate() {
            if s.shape != p.shape {
                return Err(Error::shape(format!("parameter {i} ({})", s.name), &s.shape, &p.shape));
            }
        }
        Ok(Network { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the forward pass; returns one `[R, R, R]` node per head.
    pub fn forward_tape<'a>(&'a self, tape: &mut Tape<'a, T>, image: Var) -> Result<Vec<Var>> {
        let cfg = &self.config;
        let n = cfg.input_size;
        let shape = tape.shape(image).to_vec();
        let x = match shape.as_slice() {
            [h, w] if *h == n && *w == n => tape.reshape(image, &[1, n, n])?,
            [1, h, w] if *h == n && *w == n => image,
            _ => return Err(Error::shape("layer 0 (input image)", &[1, n, n], &shape)),
        };
        let mut id = 0;
        let mut next_param = |tape: &mut Tape<'a, T>| {
            let v = tape.param(id, &self.params[id]);
            id += 1;
            v
        };
        let mut layer = 0;
        let ctx = |e: Error, layer: usize| match e {
            Error::ShapeMismatch {
                context,
                expected,
                actual,
            } => Error::ShapeMismatch {
                context: format!("layer {layer} ({context})"),
                expected,
                actual,
            },
            other => other,
        };

        let mut h = x;
        for _ in &cfg.encoder_channels {
            let (w, b) = (next_param(tape), next_param(tape));
            h = tape.conv2d(h, w, b, STRIDE, PAD).map_err(|e| ctx(e, layer))?;
            h = tape.activation(h, cfg.activation);
            layer += 1;
        }
        let (w, b) = (next_param(tape), next_param(tape));
        h = tape.linear(h, w, b).map_err(|e| ctx(e, layer))?;
        h = tape.activation(h, cfg.activation);
        let s = BOTTLENECK_SIZE;
        h = tape.reshape(h, &[cfg.bottleneck_dim, s, s, s]).map_err(|e| ctx(e, layer))?;
        layer += 1;

        let mut heads = Vec::with_capacity(cfg.head_resolutions.len());
        let mut size = s;
        let mut emit_head = |tape: &mut Tape<'a, T>, h: Var, size: usize, w: Var, b: Var, layer: usize| -> Result<()> {
            let y = tape.pointwise3d(h, w, b).map_err(|e| ctx(e, layer))?;
            let y = tape.activation(y, cfg.output_nonlinearity.activation());
            heads.push(tape.reshape(y, &[size, size, size])?);
            Ok(())
        };
        if cfg.head_resolutions.contains(&size) {
            let (w, b) = (next_param(tape), next_param(tape));
            emit_head(tape, h, size, w, b, layer)?;
            layer += 1;
        }
        for _ in &cfg.decoder_channels {
            let (w, b) = (next_param(tape), next_param(tape));
            h = tape.conv_transpose3d(h, w, b, STRIDE, PAD).map_err(|e| ctx(e, layer))?;
            h = tape.activation(h, cfg.activation);
            layer += 1;
            size *= 2;
            if cfg.head_resolutions.contains(&size) {
                let (w, b) = (next_param(tape), next_param(tape));
                emit_head(tape, h, size, w, b, layer)?;
                layer += 1;
            }
        }
        Ok(heads)
    }

    /// One `[R, R, R]` volume per head, smallest first.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let x = tape.constant_ref(image);
        let heads = self.forward_tape(&mut tape, x)?;
        Ok(heads.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Deep-supervision loss on one sample and its parameter gradients.
    pub fn loss_and_gradients(
        &self,
        image: &Tensor<T>,
        truth: &Tensor<T>,
        kind: LossKind,
        lambda: &[f64],
    ) -> Result<SampleGradients<T>> {
        let targets = head_targets(&self.config.head_resolutions, truth)?;
        if lambda.len() != targets.len() {
            return Err(Error::invalid(format!(
                "{} loss weights for {} heads",
                lambda.len(),
                targets.len()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant_ref(image);
        let heads = self.forward_tape(&mut tape, x)?;
        let mut terms = Vec::with_capacity(heads.len());
        for ((&h, target), &w) in heads.iter().zip(targets).zip(lambda) {
            let t = tape.constant(target);
            let l = match kind {
                LossKind::L2 => tape.loss_l2(h, t)?,
                LossKind::Bce => tape.loss_bce(h, t)?,
            };
            terms.push((l, T::of(w)));
        }
        let total = tape.weighted_sum(&terms)?;
        let grads = tape.backward(total)?;
        Ok(SampleGradients {
            head_losses: terms.iter().map(|&(l, _)| tape.value(l).data[0]).collect(),
            combined: tape.value(total).data[0],
            grads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            input_size: 16,
            encoder_channels: vec![2, 3],
            bottleneck_dim: 2,
            decoder_channels: vec![3, 2],
            head_resolutions: vec![8, 16],
            activation: Activation::Relu,
            output_nonlinearity: OutputNonlinearity::Sigmoid,
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        let mut c = small();
        c.head_resolutions = vec![8, 12];
        assert!(c.validate().is_err());
        let mut c = small();
        c.head_resolutions = vec![4, 16];
        assert!(c.validate().is_err());
        let mut c = small();
        c.input_size = 18;
        assert!(c.validate().is_err());
        let mut c = small();
        c.head_resolutions = vec![4, 8, 16];
        assert!(c.validate().is_ok());
    }

    #[test]
    fn head_shapes_follow_config() {
        let net = Network::<f32>::init(small(), 1).unwrap();
        let img = Tensor::full(&[16, 16], 0.3f32);
        let out = net.forward(&img).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].shape, vec![8, 8, 8]);
        assert_eq!(out[1].shape, vec![16, 16, 16]);
        assert!(out.iter().flat_map(|t| &t.data).all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_input_shape_names_layer_zero() {
        let net = Network::<f32>::init(small(), 1).unwrap();
        let err = net.forward(&Tensor::zeros(&[8, 8])).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn from_params_checks_shapes() {
        let net = Network::<f32>::init(small(), 1).unwrap();
        let mut params = net.params.clone();
        params[2] = Tensor::zeros(&[1]);
        let err = Network::from_params(small(), params).unwrap_err();
        assert!(err.to_string().contains("parameter 2"), "{err}");
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::<f32>::init(small(), 7).unwrap();
        let b = Network::<f32>::init(small(), 7).unwrap();
        let c = Network::<f32>::init(small(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
