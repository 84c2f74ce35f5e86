//! Convolutional encoder/decoder with a jointly continuous and discrete
//! latent space.
//!
//! Encoder: strided 4x4 convolutions (32, 32, [64,] 64 channels), a 256-unit
//! hidden layer, then separate linear heads for `mu`, `logvar` and the logits
//! of every discrete variable. Decoder mirrors it with transposed
//! convolutions and ends in a sigmoid.

mod checkpoint;
mod latent;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::distributions::DEFAULT_TEMPERATURE;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use latent::{sample_latent, sample_with_noise, ConcreteBatch, GaussianBatch, LatentNoise, PosteriorParams, SampleMode};

pub const HIDDEN_UNITS: usize = 256;
/// Channels of the last encoder conv / first decoder feature map.
pub const BOTTLENECK_CHANNELS: usize = 64;
/// Spatial size of the bottleneck feature map.
pub const BOTTLENECK_SIZE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub continuous_dim: usize,
    /// Category count of every discrete variable.
    pub discrete_dims: Vec<usize>,
    pub temperature: f64,
}

impl LatentSpec {
    pub fn new(continuous_dim: usize, discrete_dims: Vec<usize>) -> Self {
        LatentSpec {
            continuous_dim,
            discrete_dims,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.discrete_dims.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("discrete variables need at least 2 categories, got {n}")));
        }
        if self.latent_len() == 0 {
            return Err(Error::Config("latent space is empty".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }

    /// Length of the concatenated latent vector.
    pub fn latent_len(&self) -> usize {
        self.continuous_dim + self.discrete_dims.iter().sum::<usize>()
    }

    /// Upper bound on total discrete KL: `sum_i log n_i`.
    pub fn max_discrete_capacity(&self) -> f64 {
        self.discrete_dims.iter().map(|&n| (n as f64).ln()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Conv32,
    Conv64,
}

impl Arch {
    pub fn for_size(size: usize) -> Result<Self> {
        match size {
            32 => Ok(Arch::Conv32),
            64 => Ok(Arch::Conv64),
            other => Err(Error::Config(format!("unsupported image size {other} (expected 32 or 64)"))),
        }
    }

    fn encoder_channels(self) -> &'static [usize] {
        match self {
            Arch::Conv32 => &[32, 32, 64],
            Arch::Conv64 => &[32, 32, 64, 64],
        }
    }

    /// Output channels of every transposed conv except the last (image) one.
    fn decoder_channels(self) -> &'static [usize] {
        match self {
            Arch::Conv32 => &[32, 32],
            Arch::Conv64 => &[64, 32, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels, height, width.
    pub image_shape: [usize; 3],
    pub latent_spec: LatentSpec,
    pub arch: Arch,
}

impl ModelConfig {
    pub fn new(image_shape: [usize; 3], latent_spec: LatentSpec) -> Result<Self> {
        let arch = Arch::for_size(image_shape[1])?;
        let config = ModelConfig {
            image_shape,
            latent_spec,
            arch,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.image_shape;
        if c == 0 {
            return Err(Error::Config("image needs at least one channel".into()));
        }
        if h != w {
            return Err(Error::Config(format!("images must be square, got {h}x{w}")));
        }
        if Arch::for_size(h)? != self.arch {
            return Err(Error::Config(format!("arch {:?} does not match image size {h}", self.arch)));
        }
        self.latent_spec.validate()
    }

    pub fn pixels(&self) -> usize {
        self.image_shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// uniform(±sqrt(6 / fan_in))
    Relu,
    /// uniform(±sqrt(3 / fan_in))
    Head,
}

#[derive(Clone, Debug)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    init: Init,
}

/// Parameter layout implied by a config, in canonical order.
fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut layer = |name: &str, wshape: Vec<usize>, bias: usize, fan_in: usize, init: Init| {
        specs.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: wshape,
            fan_in,
            init,
        });
        specs.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![bias],
            fan_in,
            init,
        });
    };
    let [channels, _, _] = config.image_shape;
    let spec = &config.latent_spec;

    let mut c_in = channels;
    for (i, &c_out) in config.arch.encoder_channels().iter().enumerate() {
        layer(&format!("encoder.conv{i}"), vec![c_out, c_in, 4, 4], c_out, c_in * 16, Init::Relu);
        c_in = c_out;
    }
    let flat = BOTTLENECK_CHANNELS * BOTTLENECK_SIZE * BOTTLENECK_SIZE;
    layer("encoder.hidden", vec![flat, HIDDEN_UNITS], HIDDEN_UNITS, flat, Init::Relu);
    if spec.continuous_dim > 0 {
        let d = spec.continuous_dim;
        layer("encoder.mu", vec![HIDDEN_UNITS, d], d, HIDDEN_UNITS, Init::Head);
        layer("encoder.logvar", vec![HIDDEN_UNITS, d], d, HIDDEN_UNITS, Init::Head);
    }
    for (i, &n) in spec.discrete_dims.iter().enumerate() {
        layer(&format!("encoder.logits{i}"), vec![HIDDEN_UNITS, n], n, HIDDEN_UNITS, Init::Head);
    }

    let latent = spec.latent_len();
    layer("decoder.hidden", vec![latent, HIDDEN_UNITS], HIDDEN_UNITS, latent, Init::Relu);
    layer("decoder.expand", vec![HIDDEN_UNITS, flat], flat, HIDDEN_UNITS, Init::Relu);
    let mut c_in = BOTTLENECK_CHANNELS;
    for (i, &c_out) in config.arch.decoder_channels().iter().enumerate() {
        // each output pixel of a stride-2 4x4 transposed conv sees 2x2 taps per input channel
        layer(&format!("decoder.deconv{i}"), vec![c_in, c_out, 4, 4], c_out, c_in * 4, Init::Relu);
        c_in = c_out;
    }
    let last = config.arch.decoder_channels().len();
    layer(&format!("decoder.deconv{last}"), vec![c_in, channels, 4, 4], channels, c_in * 4, Init::Head);
    specs
}

/// Model weights plus the config that fixes their shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S = f32> {
    config: ModelConfig,
    params: Vec<(String, Tensor<S>)>,
}

/// Tape handles of a model's parameters for one forward pass.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Encoder outputs on a tape.
pub struct EncoderVars {
    pub mu: Option<Var>,
    pub logvar: Option<Var>,
    pub logits: Vec<Var>,
}

impl<S: Scalar> Model<S> {
    pub fn build(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let params = param_specs(&config)
            .into_iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data = if spec.name.ends_with(".bias") {
                    vec![S::zero(); n]
                } else {
                    let gain = match spec.init {
                        Init::Relu => 6.0,
                        Init::Head => 3.0,
                    };
                    let limit = (gain / spec.fan_in as f64).sqrt();
                    (0..n).map(|_| S::from_f64_lossy(rng.gen_range(-limit..limit))).collect()
                };
                (spec.name, Tensor::new(spec.shape, data).expect("spec shape matches data"))
            })
            .collect();
        Ok(Model { config, params })
    }

    /// Reassembles a model from named tensors, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Vec<(String, Tensor<S>)>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(&params) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn latent_spec(&self) -> &LatentSpec {
        &self.config.latent_spec
    }

    pub fn params(&self) -> &[(String, Tensor<S>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor<S>)] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<S>, requires_grad: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| {
                let mut t = t.clone();
                t.set_requires_grad(requires_grad);
                tape.leaf(t)
            })
            .collect();
        BoundParams { vars }
    }

    /// Binds externally supplied parameter leaves (same order as `params()`).
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<BoundParams> {
        if vars.len() != self.params.len() {
            return Err(Error::invalid("bind_vars", format!("expected {} vars, got {}", self.params.len(), vars.len())));
        }
        Ok(BoundParams { vars })
    }

    fn index_of(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("parameter {name} missing from model"))
    }

    fn layer(&self, bound: &BoundParams, name: &str) -> (Var, Var) {
        (
            bound.vars[self.index_of(&format!("{name}.weight"))],
            bound.vars[self.index_of(&format!("{name}.bias"))],
        )
    }

    pub fn check_images(&self, shape: &[usize]) -> Result<usize> {
        let expected = self.config.image_shape;
        match shape {
            [b, rest @ ..] if rest == expected => Ok(*b),
            _ => Err(Error::ShapeMismatch {
                op: "encode",
                lhs: shape.to_vec(),
                rhs: vec![0, expected[0], expected[1], expected[2]],
            }),
        }
    }

    /// `x: [B, C, H, W]` -> posterior parameters on the tape.
    pub fn encode_on_tape(&self, tape: &mut Tape<S>, bound: &BoundParams, x: Var) -> Result<EncoderVars> {
        let batch = self.check_images(tape.shape(x))?;
        let mut h = x;
        for i in 0..self.config.arch.encoder_channels().len() {
            let (w, b) = self.layer(bound, &format!("encoder.conv{i}"));
            h = tape.conv2d(h, w, b)?;
            h = tape.relu(h)?;
        }
        let flat = BOTTLENECK_CHANNELS * BOTTLENECK_SIZE * BOTTLENECK_SIZE;
        h = tape.reshape(h, &[batch, flat])?;
        let (w, b) = self.layer(bound, "encoder.hidden");
        h = tape.affine(h, w, b)?;
        h = tape.relu(h)?;

        let spec = &self.config.latent_spec;
        let (mu, logvar) = if spec.continuous_dim > 0 {
            let (w, b) = self.layer(bound, "encoder.mu");
            let mu = tape.affine(h, w, b)?;
            let (w, b) = self.layer(bound, "encoder.logvar");
            let logvar = tape.affine(h, w, b)?;
            (Some(mu), Some(logvar))
        } else {
            (None, None)
        };
        let logits = (0..spec.discrete_dims.len())
            .map(|i| {
                let (w, b) = self.layer(bound, &format!("encoder.logits{i}"));
                tape.affine(h, w, b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderVars { mu, logvar, logits })
    }

    /// `latent: [B, L]` -> pixel probabilities `[B, C, H, W]`.
    pub fn decode_on_tape(&self, tape: &mut Tape<S>, bound: &BoundParams, latent: Var) -> Result<Var> {
        let shape = tape.shape(latent).to_vec();
        let expected = self.config.latent_spec.latent_len();
        if shape.len() != 2 || shape[1] != expected {
            return Err(Error::ShapeMismatch {
                op: "decode",
                lhs: shape,
                rhs: vec![0, expected],
            });
        }
        let batch = shape[0];
        let (w, b) = self.layer(bound, "decoder.hidden");
        let mut h = tape.affine(latent, w, b)?;
        h = tape.relu(h)?;
        let (w, b) = self.layer(bound, "decoder.expand");
        h = tape.affine(h, w, b)?;
        h = tape.relu(h)?;
        h = tape.reshape(h, &[batch, BOTTLENECK_CHANNELS, BOTTLENECK_SIZE, BOTTLENECK_SIZE])?;
        let hidden_layers = self.config.arch.decoder_channels().len();
        for i in 0..=hidden_layers {
            let (w, b) = self.layer(bound, &format!("decoder.deconv{i}"));
            h = tape.conv2d_transpose(h, w, b)?;
            if i < hidden_layers {
                h = tape.relu(h)?;
            }
        }
        tape.sigmoid(h)
    }

    /// Encodes a batch of images `[B, C, H, W]` with values in `[0, 1]`.
    pub fn encode(&self, images: &Tensor<S>) -> Result<PosteriorParams> {
        let batch = self.check_images(images.shape())?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let enc = self.encode_on_tape(&mut tape, &bound, x)?;
        PosteriorParams::from_tape(&tape, &enc, batch, &self.config.latent_spec)
    }

    /// Decodes latent vectors `[B, L]` into pixel probabilities `[B, C, H, W]`.
    pub fn decode(&self, latent: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let z = tape.constant(latent.clone());
        let out = self.decode_on_tape(&mut tape, &bound, z)?;
        Ok(tape.take(out))
    }

    /// Decodes row-major `f64` latents, `latent.len() == B * L`.
    pub fn decode_f64(&self, latent: &[f64]) -> Result<Tensor<S>> {
        let l = self.config.latent_spec.latent_len();
        if latent.is_empty() || latent.len() % l != 0 {
            return Err(Error::invalid(
                "decode",
                format!("latent buffer of length {} is not a multiple of {l}", latent.len()),
            ));
        }
        self.decode(&Tensor::from_f64(vec![latent.len() / l, l], latent)?)
    }
}

#[cfg(test)]
mod tests;
