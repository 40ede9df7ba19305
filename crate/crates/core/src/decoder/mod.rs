//! Deep-decoder image prior `g_θ(u)`.
//!
//! Three blocks of (bilinear ×2 upsample → ReLU → convolution) followed by a
//! convolution to one channel and a sigmoid. The input `u` is a fixed
//! standard-normal tensor at one eighth of the output resolution. Gradients
//! are computed by hand-written reverse mode.

mod adam;
mod layers;

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sensing::stream_rng;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use layers::{Conv2d, ConvGrad, Upsample2x};

/// Number of upsample/ReLU/conv blocks before the output convolution.
pub const DIP_BLOCKS: usize = 3;
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

const GRAD_FLUSH: f64 = 1e-200;
const CHECKPOINT_MAGIC: &[u8; 8] = b"DDECODE\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Shape of a decoder for an `height × width` patch.
///
/// `channels[0]` is the channel count of the input noise and `channels[i]`
/// the output of block `i`; the output convolution maps `channels[3]` to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderArch {
    pub channels: [usize; 4],
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl DecoderArch {
    pub fn new(channels: [usize; 4], kernel: usize, height: usize, width: usize) -> Result<Self> {
        let arch = Self {
            channels,
            kernel,
            height,
            width,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Kernel 3, 128 channels throughout.
    pub fn deep(height: usize, width: usize) -> Result<Self> {
        Self::new([128; 4], 3, height, width)
    }

    /// Kernel 1 with channels `[100, 50, 25, 10]`.
    pub fn simple(height: usize, width: usize) -> Result<Self> {
        Self::new([100, 50, 25, 10], 1, height, width)
    }

    /// Same layer shapes for a different patch size.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        Self::new(self.channels, self.kernel, height, width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel != 1 && self.kernel != 3 {
            return Err(Error::Validation(format!("decoder kernel must be 1 or 3, got {}", self.kernel)));
        }
        if self.height == 0 || self.width == 0 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(Error::Validation(format!(
                "decoder patch {}x{} must have positive sides divisible by 8",
                self.height, self.width
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Validation("decoder channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size of the input noise.
    pub fn input_dims(&self) -> (usize, usize) {
        (self.height / 8, self.width / 8)
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// `(in, out)` channels of each of the four convolutions.
    pub fn conv_shapes(&self) -> [(usize, usize); 4] {
        let c = self.channels;
        [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], 1)]
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        self.conv_shapes().iter().map(|&(cin, cout)| cout * cin * k2 + cout).sum()
    }
}

/// Activations of the last forward pass plus scratch for the backward pass;
/// buffers are reused across calls.
#[derive(Debug, Clone, Default)]
struct Workspace {
    valid: bool,
    /// Upsampled activations before the ReLU, one per block.
    upsampled: Vec<Array2<f64>>,
    /// im2col inputs of the four convolutions.
    columns: Vec<Array2<f64>>,
    /// Convolution outputs; the last one holds the logits.
    conv_out: Vec<Array2<f64>>,
    output: Array1<f64>,
    grad_out: Array2<f64>,
    grad_in: Array2<f64>,
    grad_cols: Array2<f64>,
}

/// Gradients of every convolution, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrads {
    pub layers: Vec<ConvGrad>,
}

impl DecoderGrads {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|g| ConvGrad {
                    weight: &g.weight * factor,
                    bias: &g.bias * factor,
                })
                .collect(),
        }
    }

    /// Zero gradients shaped like the layers of `params`.
    pub fn zeros_like(params: &DecoderParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| ConvGrad {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weight.iter().chain(g.bias.iter()).all(|&v| v == 0.0))
    }
}

/// Decoder weights, frozen input noise and optimizer state.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    arch: DecoderArch,
    seed: u64,
    layers: Vec<Conv2d>,
    noise: Array2<f64>,
    upsamplers: Vec<Upsample2x>,
    adam: Adam,
    work: Workspace,
}

fn upsamplers(arch: &DecoderArch) -> Vec<Upsample2x> {
    let (h0, w0) = arch.input_dims();
    (0..DIP_BLOCKS).map(|i| Upsample2x::new(h0 << i, w0 << i)).collect()
}

fn adam_sizes(layers: &[Conv2d]) -> Vec<usize> {
    layers.iter().flat_map(|l| [l.weight.len(), l.bias.len()]).collect()
}

impl DecoderParams {
    /// Fresh parameters: uniform weights with bound `1/√fan_in`, zero
    /// biases and standard-normal input noise, all drawn from `seed`.
    pub fn init(arch: DecoderArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (h0, w0) = arch.input_dims();
        let mut rng = stream_rng(seed, 0);
        let noise = Array2::from_shape_simple_fn((arch.channels[0], h0 * w0), || rng.sample(StandardNormal));
        let k2 = arch.kernel * arch.kernel;
        let layers: Vec<Conv2d> = arch
            .conv_shapes()
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                let fan_in = cin * k2;
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut rng = stream_rng(seed, 1 + i as u64);
                Conv2d {
                    weight: Array2::from_shape_simple_fn((cout, fan_in), || rng.random_range(-bound..bound)),
                    bias: Array1::zeros(cout),
                    kernel: arch.kernel,
                }
            })
            .collect();
        let adam = Adam::new(&adam_sizes(&layers));
        Ok(Self {
            arch,
            seed,
            upsamplers: upsamplers(&arch),
            layers,
            noise,
            adam,
            work: Workspace::default(),
        })
    }

    pub fn arch(&self) -> &DecoderArch {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise(&self) -> &Array2<f64> {
        &self.noise
    }

    pub fn layers(&self) -> &[Conv2d] {
        &self.layers
    }

    /// Mutable layer access; drops any cached forward pass.
    pub fn layers_mut(&mut self) -> &mut [Conv2d] {
        self.work.valid = false;
        &mut self.layers
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv2d::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_structure(&self) -> Result<()> {
        if self.layers.len() != DIP_BLOCKS + 1 {
            return Err(Error::dim("decoder layer count", DIP_BLOCKS + 1, self.layers.len()));
        }
        let k2 = self.arch.kernel * self.arch.kernel;
        for (layer, &(cin, cout)) in self.layers.iter().zip(self.arch.conv_shapes().iter()) {
            if layer.kernel != self.arch.kernel || layer.weight.dim() != (cout, cin * k2) || layer.bias.len() != cout {
                return Err(Error::dim(
                    "decoder layer shape",
                    format!("({cout}, {}) kernel {}", cin * k2, self.arch.kernel),
                    format!("{:?} kernel {}", layer.weight.dim(), layer.kernel),
                ));
            }
        }
        let (h0, w0) = self.arch.input_dims();
        if self.noise.dim() != (self.arch.channels[0], h0 * w0) {
            return Err(Error::dim(
                "decoder input noise",
                format!("{:?}", (self.arch.channels[0], h0 * w0)),
                format!("{:?}", self.noise.dim()),
            ));
        }
        Ok(())
    }

    /// `g_θ(u)` as a row-major `height·width` vector; keeps the activations
    /// for [`DecoderParams::backward`].
    pub fn forward(&mut self) -> Result<Array1<f64>> {
        self.check_structure()?;
        let work = &mut self.work;
        work.valid = false;
        work.upsampled.resize_with(DIP_BLOCKS, Default::default);
        work.columns.resize_with(DIP_BLOCKS + 1, Default::default);
        work.conv_out.resize_with(DIP_BLOCKS + 1, || Array2::zeros((0, 0)));
        for (b, (up, conv)) in self.upsamplers.iter().zip(&self.layers).enumerate() {
            let (prev, cur) = work.conv_out.split_at_mut(b);
            let input = if b == 0 { self.noise.view() } else { prev[b - 1].view() };
            up.forward_into(input, &mut work.upsampled[b]);
            conv.columns_into(
                work.upsampled[b].view(),
                up.out_height(),
                up.out_width(),
                true,
                &mut work.columns[b],
            );
            conv.forward_columns_into(work.columns[b].view(), &mut cur[0]);
        }
        let head = &self.layers[DIP_BLOCKS];
        let (prev, cur) = work.conv_out.split_at_mut(DIP_BLOCKS);
        head.columns_into(
            prev[DIP_BLOCKS - 1].view(),
            self.arch.height,
            self.arch.width,
            false,
            &mut work.columns[DIP_BLOCKS],
        );
        head.forward_columns_into(work.columns[DIP_BLOCKS].view(), &mut cur[0]);
        work.output = cur[0].row(0).mapv(sigmoid);
        work.valid = true;
        Ok(work.output.clone())
    }

    /// Parameter gradients of `⟨grad_output, g_θ(u)⟩` at the last forward pass.
    pub fn backward(&mut self, grad_output: ArrayView1<f64>) -> Result<DecoderGrads> {
        let mut grads = DecoderGrads::zeros_like(self);
        self.backward_into(grad_output, &mut grads)?;
        Ok(grads)
    }

    /// [`DecoderParams::backward`] into an existing gradient buffer.
    pub fn backward_into(&mut self, grad_output: ArrayView1<f64>, grads: &mut DecoderGrads) -> Result<()> {
        if !self.work.valid {
            return Err(Error::Usage("decoder backward called without a cached forward pass".into()));
        }
        if grad_output.len() != self.arch.num_pixels() {
            return Err(Error::dim("decoder grad_output", self.arch.num_pixels(), grad_output.len()));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::dim("decoder gradient layers", self.layers.len(), grads.layers.len()));
        }
        let work = &mut self.work;
        let mut g_out = std::mem::take(&mut work.grad_out);
        let mut g_in = std::mem::take(&mut work.grad_in);
        let mut g_cols = std::mem::take(&mut work.grad_cols);
        layers::ensure_shape(&mut g_out, (1, grad_output.len()));
        for ((d, &g), &s) in g_out.iter_mut().zip(grad_output.iter()).zip(work.output.iter()) {
            let v = g * s * (1.0 - s);
            // Saturated pixels would otherwise push subnormals through every GEMM.
            *d = if v.abs() < GRAD_FLUSH { 0.0 } else { v };
        }
        let (h, w) = (self.arch.height, self.arch.width);
        self.layers[DIP_BLOCKS].backward_into(
            work.columns[DIP_BLOCKS].view(),
            g_out.view(),
            h,
            w,
            &mut grads.layers[DIP_BLOCKS],
            Some((&mut g_cols, &mut g_in)),
        );
        std::mem::swap(&mut g_out, &mut g_in);
        for b in (0..DIP_BLOCKS).rev() {
            let up = &self.upsamplers[b];
            let input = (b > 0).then_some((&mut g_cols, &mut g_in));
            self.layers[b].backward_into(
                work.columns[b].view(),
                g_out.view(),
                up.out_height(),
                up.out_width(),
                &mut grads.layers[b],
                input,
            );
            if b > 0 {
                ndarray::Zip::from(&mut g_in).and(&work.upsampled[b]).for_each(|d, &pre| {
                    if pre <= 0.0 {
                        *d = 0.0;
                    }
                });
                up.adjoint_into(g_in.view(), &mut g_out);
            }
        }
        work.grad_out = g_out;
        work.grad_in = g_in;
        work.grad_cols = g_cols;
        Ok(())
    }

    /// One Adam update; parameters are untouched on error.
    pub fn adam_step(&mut self, grads: &DecoderGrads, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::dim("decoder gradient layers", self.layers.len(), grads.layers.len()));
        }
        let grad_slices: Vec<&[f64]> = grads
            .layers
            .iter()
            .flat_map(|g| {
                [
                    g.weight.as_slice().expect("standard layout"),
                    g.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect();
        let mut param_slices: Vec<&mut [f64]> = self
            .layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect();
        self.adam.step(&mut param_slices, &grad_slices, lr)?;
        self.work.valid = false;
        if !self.is_finite() {
            return Err(Error::numerical("decoder parameters became non-finite", None));
        }
        Ok(())
    }

    /// Writes architecture, seed, weights and noise as little-endian `f64`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [self.arch.kernel, self.arch.height, self.arch.width]
            .iter()
            .chain(self.arch.channels.iter())
        {
            w.write_all(&(*v as u64).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        for layer in &self.layers {
            for v in layer.weight.iter().chain(layer.bias.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for v in self.noise.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a checkpoint; optimizer state starts fresh.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a decoder checkpoint".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported decoder checkpoint version {version}")));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let mut dims = [0usize; 7];
        for d in dims.iter_mut() {
            *d = usize::try_from(read_u64(&mut r)?).map_err(|_| Error::Format("dimension overflow".into()))?;
        }
        let seed = read_u64(&mut r)?;
        let arch = DecoderArch::new([dims[3], dims[4], dims[5], dims[6]], dims[0], dims[1], dims[2])
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        let mut params = Self::init(arch, seed)?;
        let mut read_into = |buf: &mut [f64]| -> Result<()> {
            let mut b = [0u8; 8];
            for v in buf.iter_mut() {
                r.read_exact(&mut b)?;
                *v = f64::from_le_bytes(b);
            }
            Ok(())
        };
        for layer in params.layers.iter_mut() {
            read_into(layer.weight.as_slice_mut().expect("standard layout"))?;
            read_into(layer.bias.as_slice_mut().expect("standard layout"))?;
        }
        read_into(params.noise.as_slice_mut().expect("standard layout"))?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Logistic function kept inside the open unit interval for any finite input.
fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Mean squared error between two equally sized vectors.
pub fn mse_loss(output: ArrayView1<f64>, target: ArrayView1<f64>) -> f64 {
    let n = output.len().max(1) as f64;
    output.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// Outcome of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: DecoderParams,
    pub output: Array1<f64>,
    /// MSE before each of the Adam steps.
    pub losses: Vec<f64>,
}

/// Fits a freshly initialised decoder to `target` with `iters` Adam steps
/// on the mean squared error.
pub fn fit(target: ArrayView1<f64>, arch: DecoderArch, iters: usize, lr: f64, seed: u64) -> Result<FitResult> {
    fit_observed(target, arch, iters, lr, seed, |_, _, _| {})
}

/// [`fit`] with `observer(step, output, loss)` called on the output before
/// every step and once more on the final output (with `step == iters`).
pub fn fit_observed(
    target: ArrayView1<f64>,
    arch: DecoderArch,
    iters: usize,
    lr: f64,
    seed: u64,
    mut observer: impl FnMut(usize, &Array1<f64>, f64),
) -> Result<FitResult> {
    arch.validate()?;
    if target.len() != arch.num_pixels() {
        return Err(Error::dim("decoder fit target", arch.num_pixels(), target.len()));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("decoder fit target has non-finite pixels".into()));
    }
    let mut params = DecoderParams::init(arch, seed)?;
    let mut grads = DecoderGrads::zeros_like(&params);
    let n = target.len() as f64;
    let mut losses = Vec::with_capacity(iters);
    for step in 0..iters {
        let out = params.forward()?;
        let loss = mse_loss(out.view(), target);
        if !loss.is_finite() {
            return Err(Error::numerical(format!("decoder fit loss became non-finite at step {step}"), None));
        }
        observer(step, &out, loss);
        losses.push(loss);
        let grad = ndarray::Zip::from(&out).and(target).map_collect(|o, t| 2.0 * (o - t) / n);
        params.backward_into(grad.view(), &mut grads)?;
        params.adam_step(&grads, lr)?;
    }
    let output = params.forward()?;
    let loss = mse_loss(output.view(), target);
    observer(iters, &output, loss);
    Ok(FitResult { params, output, losses })
}

/// Adam steps per fit for a given patch side: 200, 300 and 400 for sides
/// 32, 64 and 128, with linear interpolation in `log₂(side)` elsewhere.
pub fn default_budget(side: usize) -> usize {
    let l = (side.max(1) as f64).log2();
    ((200.0 + 100.0 * (l - 5.0)).round().max(50.0)) as usize
}
