//! Layer stacks: architecture descriptions, parameter initialization,
//! forward/backward through the whole network, receptive-field arithmetic,
//! and the binary model file format.
//!
//! Networks are stacks of valid convolutions with optional ReLU activations
//! and nothing else — no pooling, padding, strides or normalization. Every
//! stack therefore shrinks its input by `Σ (kernel − 1)` pixels per side,
//! and each output pixel is a pure function of one receptive-field patch of
//! the input.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{conv2d_backward, conv2d_valid, relu, relu_backward, ConvParams, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// One convolutional layer: square odd kernel, output width, activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(kernel: usize, out_channels: usize, activation: Activation) -> Self {
        LayerSpec {
            kernel,
            out_channels,
            activation,
        }
    }
}

/// Immutable architecture description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    in_channels: usize,
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(in_channels: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if in_channels == 0 {
            return Err(Error::Argument("in_channels must be >= 1".into()));
        }
        if layers.is_empty() {
            return Err(Error::Argument("a network needs at least one layer".into()));
        }
        for (idx, layer) in layers.iter().enumerate() {
            if layer.kernel == 0 || layer.kernel % 2 == 0 {
                return Err(Error::Argument(format!(
                    "layer {idx}: kernel size must be odd and >= 1, got {}",
                    layer.kernel
                )));
            }
            if layer.out_channels == 0 {
                return Err(Error::Argument(format!("layer {idx}: out_channels must be >= 1")));
            }
        }
        let last = layers.last().expect("nonempty");
        if last.activation != Activation::None || last.out_channels != 1 {
            return Err(Error::Argument(
                "final layer must have activation=none and out_channels=1 (grayscale output)".into(),
            ));
        }
        Ok(NetworkSpec { in_channels, layers })
    }

    /// Same layers with a different input-channel count (3 to drop the XY
    /// coordinate channels, 5 to keep them).
    pub fn with_in_channels(&self, in_channels: usize) -> Result<Self> {
        NetworkSpec::new(in_channels, self.layers.clone())
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Pixels lost per side over the whole stack: `Σ (kernel − 1)`.
    pub fn total_shrink(&self) -> usize {
        self.layers.iter().map(|l| l.kernel - 1).sum()
    }

    /// Smallest admissible input side length.
    pub fn min_input(&self) -> usize {
        self.total_shrink() + 1
    }

    /// Output shape for a given input shape, or a dimension error stating
    /// the minimum size.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w) = input;
        if c != self.in_channels {
            return Err(Error::Dimension(format!(
                "input has {c} channels, spec expects {}",
                self.in_channels
            )));
        }
        let min = self.min_input();
        if h < min || w < min {
            return Err(Error::Dimension(format!(
                "input {h}x{w} too small: this architecture needs at least {min}x{min}"
            )));
        }
        let shrink = self.total_shrink();
        Ok((
            self.layers.last().expect("nonempty").out_channels,
            h - shrink,
            w - shrink,
        ))
    }
}

/// Receptive field of one output pixel and the total border shrink, both in
/// pixels per side. For a stride-1 valid stack `rf = 1 + Σ (kernel − 1)` and
/// `shrink = rf − 1`.
pub fn receptive_field(spec: &NetworkSpec) -> (usize, usize) {
    let shrink = spec.total_shrink();
    (shrink + 1, shrink)
}

/// The four stock architectures.
///
/// * `sr` — the 3-layer 9/1/5 stack with widths 64/32/1.
/// * `small` — 6 layers, kernels 5/5/1/1/3/3, widths 64/32/16/16/8/1.
/// * `medium` — same kernels, widths doubled: 128/64/32/32/16/1.
/// * `large` — widths doubled again: 256/128/64/64/32/1.
///
/// All shrink inputs by 12 pixels per side, so 155×200 photos map onto
/// 143×188 sketches. Inputs default to five channels (RGB + XY); use
/// [`NetworkSpec::with_in_channels`] for the 3-channel variant.
pub fn builtin_spec(name: &str) -> Result<NetworkSpec> {
    let (kernels, widths): (&[usize], &[usize]) = match name {
        "sr" => (&[9, 1, 5], &[64, 32, 1]),
        "small" => (&[5, 5, 1, 1, 3, 3], &[64, 32, 16, 16, 8, 1]),
        "medium" => (&[5, 5, 1, 1, 3, 3], &[128, 64, 32, 32, 16, 1]),
        "large" => (&[5, 5, 1, 1, 3, 3], &[256, 128, 64, 64, 32, 1]),
        other => {
            return Err(Error::Argument(format!(
                "unknown architecture {other:?}; valid names are sr, small, medium, large"
            )))
        }
    };
    let n = kernels.len();
    let layers = kernels
        .iter()
        .zip(widths)
        .enumerate()
        .map(|(idx, (&k, &w))| {
            let activation = if idx + 1 == n { Activation::None } else { Activation::Relu };
            LayerSpec::new(k, w, activation)
        })
        .collect();
    NetworkSpec::new(5, layers)
}

pub const BUILTIN_SPEC_NAMES: [&str; 4] = ["sr", "small", "medium", "large"];

/// Architecture plus its learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    params: Vec<ConvParams<T>>,
}

impl<T: Scalar> Network<T> {
    /// Pair a spec with parameters; every layer's geometry must match.
    pub fn new(spec: NetworkSpec, params: Vec<ConvParams<T>>) -> Result<Self> {
        if params.len() != spec.layers().len() {
            return Err(Error::Dimension(format!(
                "{} parameter sets for {} layers",
                params.len(),
                spec.layers().len()
            )));
        }
        let mut in_c = spec.in_channels();
        for (idx, (layer, p)) in spec.layers().iter().zip(&params).enumerate() {
            if p.in_channels() != in_c
                || p.out_channels() != layer.out_channels
                || p.kernel_h() != layer.kernel
                || p.kernel_w() != layer.kernel
            {
                return Err(Error::Dimension(format!(
                    "layer {idx}: params are {}x{}x{}x{}, spec wants {}x{}x{}x{}",
                    p.out_channels(),
                    p.in_channels(),
                    p.kernel_h(),
                    p.kernel_w(),
                    layer.out_channels,
                    in_c,
                    layer.kernel,
                    layer.kernel
                )));
            }
            in_c = layer.out_channels;
        }
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[ConvParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.params
    }

    /// Zero-valued gradient accumulators matching this network's geometry.
    pub fn zero_grads(&self) -> Vec<ConvParams<T>> {
        self.params
            .iter()
            .map(|p| {
                ConvParams::zeros(p.out_channels(), p.in_channels(), p.kernel_h(), p.kernel_w())
                    .expect("geometry already validated")
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }
}

/// Fresh network with weights drawn from N(0, 0.01²) by a seeded generator
/// and biases set to zero. The same seed always yields bit-identical
/// parameters.
pub fn init_network<T: Scalar>(spec: NetworkSpec, seed: u64) -> Network<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0f64, 0.01).expect("valid std");
    let mut in_c = spec.in_channels();
    let mut params = Vec::with_capacity(spec.layers().len());
    for layer in spec.layers() {
        let count = layer.out_channels * in_c * layer.kernel * layer.kernel;
        let weights = (0..count)
            .map(|_| T::from_f64_lossy(dist.sample(&mut rng)))
            .collect();
        let bias = vec![T::zero(); layer.out_channels];
        params.push(
            ConvParams::new(layer.out_channels, in_c, layer.kernel, layer.kernel, weights, bias)
                .expect("spec validated"),
        );
        in_c = layer.out_channels;
    }
    Network::new(spec, params).expect("geometry by construction")
}

/// Per-layer activation cache produced by [`forward`].
///
/// `activations[0]` is the network input and `activations[l + 1]` the output
/// of layer `l`; that is enough to rebuild every gradient, since a ReLU
/// output is positive exactly where its pre-activation is.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    activations: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.activations[0]
    }

    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().expect("nonempty")
    }
}

/// Run the stack on one input, keeping per-layer activations for backward.
pub fn forward<T: Scalar>(net: &Network<T>, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
    net.spec().output_shape(input.shape())?;
    let mut activations = Vec::with_capacity(net.params().len() + 1);
    activations.push(input.clone());
    for (layer, params) in net.spec().layers().iter().zip(net.params()) {
        let pre = conv2d_valid(activations.last().expect("nonempty"), params)?;
        let out = match layer.activation {
            Activation::Relu => relu(&pre),
            Activation::None => pre,
        };
        activations.push(out);
    }
    let output = activations.last().expect("nonempty").clone();
    Ok((output, ForwardCache { activations }))
}

/// Backpropagate a cotangent on the network output to per-layer parameter
/// gradients. The cache must come from [`forward`] on the same network.
pub fn backward<T: Scalar>(
    net: &Network<T>,
    cache: &ForwardCache<T>,
    grad_output: &Tensor<T>,
) -> Result<Vec<ConvParams<T>>> {
    let layers = net.spec().layers();
    if cache.activations.len() != layers.len() + 1 {
        return Err(Error::Argument(format!(
            "stale cache: {} activations for a {}-layer network",
            cache.activations.len(),
            layers.len()
        )));
    }
    let expected = net.spec().output_shape(cache.activations[0].shape())?;
    if cache.output().shape() != expected {
        return Err(Error::Argument(format!(
            "stale cache: cached output {:?} does not match network output {:?}",
            cache.output().shape(),
            expected
        )));
    }
    if grad_output.shape() != expected {
        return Err(Error::Dimension(format!(
            "grad_output shape {:?} does not match network output {:?}",
            grad_output.shape(),
            expected
        )));
    }

    let mut grads = vec![None; layers.len()];
    let mut g = grad_output.clone();
    for l in (0..layers.len()).rev() {
        if layers[l].activation == Activation::Relu {
            // Post-activation values are positive exactly where the
            // pre-activation is, so the cached output doubles as the mask.
            g = relu_backward(&cache.activations[l + 1], &g)?;
        }
        let (grad_in, grad_params) = conv2d_backward(&cache.activations[l], &net.params()[l], &g)?;
        grads[l] = Some(grad_params);
        g = grad_in;
    }
    Ok(grads.into_iter().map(|g| g.expect("filled")).collect())
}

// --- Model file format -----------------------------------------------------
//
// Little-endian binary container:
//
//   offset  size  field
//   0       4     magic "SFCN"
//   4       4     format version (u32, currently 1)
//   8       4     in_channels (u32)
//   12      4     layer count L (u32)
//   16      9*L   per layer: kernel (u32), out_channels (u32), activation
//                 (u8: 0 = none, 1 = relu)
//   ...           per layer, in order: weights as f32 in (k, c, u, v)
//                 row-major order, then bias as f32 (one per out channel)
//
// Round-trips are bit-exact: parameters are stored as raw IEEE-754 bits.

const MODEL_MAGIC: &[u8; 4] = b"SFCN";
const MODEL_VERSION: u32 = 1;

/// Serialize a trained network. See the module source for the byte layout.
pub fn save_model(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = net.spec();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(spec.in_channels() as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.layers().len() as u32).to_le_bytes());
    for layer in spec.layers() {
        buf.extend_from_slice(&(layer.kernel as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.out_channels as u32).to_le_bytes());
        buf.push(match layer.activation {
            Activation::None => 0,
            Activation::Relu => 1,
        });
    }
    for params in net.params() {
        for &w in params.weights() {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        for &b in params.bias() {
            buf.extend_from_slice(&b.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct ModelReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ModelReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ModelFormat {
                path: self.path.to_path_buf(),
                reason: format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Load a model written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ModelReader {
        bytes: &bytes,
        pos: 0,
        path,
    };

    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::ModelFormat {
            path: path.to_path_buf(),
            reason: "bad magic bytes; not a model file".into(),
        });
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::ModelVersion {
            path: path.to_path_buf(),
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let in_channels = r.u32()? as usize;
    let layer_count = r.u32()? as usize;
    if layer_count == 0 || layer_count > 1024 {
        return Err(Error::ModelFormat {
            path: path.to_path_buf(),
            reason: format!("implausible layer count {layer_count}"),
        });
    }
    let mut layers = Vec::with_capacity(layer_count);
    for idx in 0..layer_count {
        let kernel = r.u32()? as usize;
        let out_channels = r.u32()? as usize;
        let activation = match r.u8()? {
            0 => Activation::None,
            1 => Activation::Relu,
            other => {
                return Err(Error::ModelFormat {
                    path: path.to_path_buf(),
                    reason: format!("layer {idx}: unknown activation code {other}"),
                })
            }
        };
        layers.push(LayerSpec::new(kernel, out_channels, activation));
    }
    let spec = NetworkSpec::new(in_channels, layers).map_err(|e| Error::ModelFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;

    let mut in_c = spec.in_channels();
    let mut params = Vec::with_capacity(layer_count);
    for layer in spec.layers() {
        let wlen = layer.out_channels * in_c * layer.kernel * layer.kernel;
        let weights = r.f32s(wlen)?;
        let bias = r.f32s(layer.out_channels)?;
        params.push(
            ConvParams::new(layer.out_channels, in_c, layer.kernel, layer.kernel, weights, bias)
                .expect("validated spec"),
        );
        in_c = layer.out_channels;
    }
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes after parameters", bytes.len() - r.pos),
        });
    }
    Network::new(spec, params).map_err(|e| Error::ModelFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
