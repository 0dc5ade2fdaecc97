//! Acquisition-conditioned dynamic convolution.
//!
//! A small controller network turns the b-value pair into per-kernel scale
//! and bias corrections: the (low, high) pair is broadcast onto a constant
//! two-channel map, pushed through one 7x7 convolution, global-average
//! pooled to a 128-vector, and split into 64 kernel scales and 64 bias
//! offsets. A conditioned layer then convolves with `scale[k] * theta_k`
//! and `base_bias[k] + bias[k]`. Forward and analytic backward passes are
//! plain f64 loops; a central-difference gradient check covers every
//! gradient the backward pass produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hvol;
use crate::signal::MetaInfo;
use crate::tensor::Tensor;
use crate::volume::Volume3D;

/// Conditioning map is 2 x META_HW x META_HW.
pub const META_HW: usize = 16;
/// b-values are divided by this before entering the controller.
pub const META_B_SCALE: f64 = 2000.0;
/// Controller output channels: 64 scales + 64 biases.
pub const CONTROLLER_CHANNELS: usize = 128;
/// Conditioned layer kernel count.
pub const DYNAMIC_KERNELS: usize = 64;
/// Controller kernel size.
pub const CONTROLLER_KERNEL: usize = 7;

/// Constant two-channel conditioning map: channel 0 is `low_b / 2000`,
/// channel 1 is `high_b / 2000`, both spatially constant.
pub fn meta_tensor(meta: MetaInfo) -> Tensor {
    let hw = META_HW * META_HW;
    let mut data = vec![meta.low_b / META_B_SCALE; 2 * hw];
    data[hw..].fill(meta.high_b / META_B_SCALE);
    Tensor::new(vec![2, META_HW, META_HW], data).expect("static shape")
}

/// Per-kernel corrections produced by the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFactors {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ScalingFactors {
    /// Neutral corrections: scale 1, bias 0 (leaves a layer untouched).
    pub fn identity() -> Self {
        Self { scale: vec![1.0; DYNAMIC_KERNELS], bias: vec![0.0; DYNAMIC_KERNELS] }
    }

    fn validate(&self) -> Result<()> {
        if self.scale.len() != DYNAMIC_KERNELS || self.bias.len() != DYNAMIC_KERNELS {
            return Err(Error::Shape(format!(
                "scaling factors must have {DYNAMIC_KERNELS} scales and biases, got {}/{}",
                self.scale.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// 2-D convolution, stride 1, zero padding `k/2` (same output size).
/// `input` is NCHW, `weights` is (K, C, k, k), `bias` has K entries.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let ishape = input.shape();
    let wshape = weights.shape();
    if ishape.len() != 4 || wshape.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d wants 4-D input and weights, got {ishape:?} and {wshape:?}"
        )));
    }
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (k_out, c_w, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    if c != c_w {
        return Err(Error::Shape(format!("input has {c} channels, weights expect {c_w}")));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Shape(format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if bias.len() != k_out {
        return Err(Error::Shape(format!("bias has {} entries, want {k_out}", bias.len())));
    }
    let pad = kh / 2;
    let mut out = Tensor::zeros(vec![n, k_out, h, w])?;
    let wdata = weights.data();
    let idata = input.data();
    let odata = out.data_mut();
    // accumulation order is bias, then (ch, i, j) lexicographic; the row
    // slices below only remove index arithmetic, never reorder a sum
    let mut o = 0;
    for b in 0..n {
        for k in 0..k_out {
            for y in 0..h {
                let i0 = pad.saturating_sub(y);
                let i1 = kh.min(h + pad - y);
                for x in 0..w {
                    let j0 = pad.saturating_sub(x);
                    let j1 = kw.min(w + pad - x);
                    let mut acc = bias[k];
                    for ch in 0..c {
                        let w_base = ((k * c + ch) * kh) * kw;
                        let i_base = (b * c + ch) * h;
                        for i in i0..i1 {
                            let row = (i_base + y + i - pad) * w;
                            let wrow = &wdata[w_base + i * kw..w_base + (i + 1) * kw];
                            let irow = &idata[row..row + w];
                            for j in j0..j1 {
                                acc += wrow[j] * irow[x + j - pad];
                            }
                        }
                    }
                    odata[o] = acc;
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Conditioning network: one convolution plus global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub weights: Tensor, // (128, 2, 7, 7)
    pub bias: Vec<f64>,  // 128
}

impl Controller {
    pub fn new(weights: Tensor, bias: Vec<f64>) -> Result<Self> {
        let want = vec![CONTROLLER_CHANNELS, 2, CONTROLLER_KERNEL, CONTROLLER_KERNEL];
        if weights.shape() != want.as_slice() {
            return Err(Error::Shape(format!(
                "controller weights must be {want:?}, got {:?}",
                weights.shape()
            )));
        }
        if bias.len() != CONTROLLER_CHANNELS {
            return Err(Error::Shape(format!(
                "controller bias must have {CONTROLLER_CHANNELS} entries, got {}",
                bias.len()
            )));
        }
        Ok(Self { weights, bias })
    }

    /// Seeded uniform init on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = 2 * CONTROLLER_KERNEL * CONTROLLER_KERNEL;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = Tensor::uniform(
            vec![CONTROLLER_CHANNELS, 2, CONTROLLER_KERNEL, CONTROLLER_KERNEL],
            bound,
            &mut rng,
        )
        .expect("static shape");
        let bias = Tensor::uniform(vec![CONTROLLER_CHANNELS], bound, &mut rng)
            .expect("static shape")
            .data()
            .to_vec();
        Self { weights, bias }
    }
}

/// Runs the controller on a conditioning map: convolve, pool, split into
/// scales (first 64 channels) and biases (last 64).
pub fn controller_forward(controller: &Controller, meta: &Tensor) -> Result<ScalingFactors> {
    let shape = meta.shape();
    if shape != [2, META_HW, META_HW] {
        return Err(Error::Shape(format!(
            "conditioning map must be [2, {META_HW}, {META_HW}], got {shape:?}"
        )));
    }
    let batched = Tensor::new(vec![1, 2, META_HW, META_HW], meta.data().to_vec())?;
    let conv = conv2d(&batched, &controller.weights, &controller.bias)?;
    let hw = (META_HW * META_HW) as f64;
    let mut pooled = vec![0.0; CONTROLLER_CHANNELS];
    for (k, p) in pooled.iter_mut().enumerate() {
        let mut acc = 0.0;
        for y in 0..META_HW {
            for x in 0..META_HW {
                acc += conv.at4(0, k, y, x);
            }
        }
        *p = acc / hw;
    }
    let bias = pooled.split_off(DYNAMIC_KERNELS);
    Ok(ScalingFactors { scale: pooled, bias })
}

/// A convolution layer whose kernels are modulated per acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicConvLayer {
    pub base_weights: Tensor, // (64, C, k, k)
    pub base_bias: Vec<f64>,  // 64
    pub controller: Controller,
}

impl DynamicConvLayer {
    pub fn new(base_weights: Tensor, base_bias: Vec<f64>, controller: Controller) -> Result<Self> {
        let shape = base_weights.shape();
        if shape.len() != 4 || shape[0] != DYNAMIC_KERNELS {
            return Err(Error::Shape(format!(
                "base weights must be [{DYNAMIC_KERNELS}, C, k, k], got {shape:?}"
            )));
        }
        if shape[2] != shape[3] || shape[2] % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel must be square and odd, got {}x{}",
                shape[2], shape[3]
            )));
        }
        if base_bias.len() != DYNAMIC_KERNELS {
            return Err(Error::Shape(format!(
                "base bias must have {DYNAMIC_KERNELS} entries, got {}",
                base_bias.len()
            )));
        }
        Ok(Self { base_weights, base_bias, controller })
    }

    /// Seeded layer with uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` init.
    pub fn seeded(in_channels: usize, kernel: usize, seed: u64) -> Result<Self> {
        if kernel % 2 == 0 || kernel == 0 || in_channels == 0 {
            return Err(Error::Shape(format!(
                "kernel must be odd and channels positive, got k={kernel}, c={in_channels}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let base_weights = Tensor::uniform(
            vec![DYNAMIC_KERNELS, in_channels, kernel, kernel],
            bound,
            &mut rng,
        )?;
        let base_bias = Tensor::uniform(vec![DYNAMIC_KERNELS], bound, &mut rng)?
            .data()
            .to_vec();
        Self::new(base_weights, base_bias, Controller::seeded(seed.wrapping_add(1)))
    }

    pub fn in_channels(&self) -> usize {
        self.base_weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.base_weights.shape()[2]
    }

    /// Kernels and bias after applying the corrections.
    fn modulated(&self, sf: &ScalingFactors) -> Result<(Tensor, Vec<f64>)> {
        sf.validate()?;
        let shape = self.base_weights.shape().to_vec();
        let per_kernel: usize = shape[1] * shape[2] * shape[3];
        let mut w = self.base_weights.data().to_vec();
        for (k, chunk) in w.chunks_exact_mut(per_kernel).enumerate() {
            for v in chunk.iter_mut() {
                *v = sf.scale[k] * *v;
            }
        }
        let bias: Vec<f64> = self
            .base_bias
            .iter()
            .zip(&sf.bias)
            .map(|(&b, &d)| b + d)
            .collect();
        Ok((Tensor::new(shape, w)?, bias))
    }
}

/// Convolution with per-acquisition kernel modulation:
/// `theta'_k = scale[k] * theta_k`, `b'_k = base_bias[k] + bias[k]`.
pub fn dynamic_conv_forward(
    layer: &DynamicConvLayer,
    input: &Tensor,
    sf: &ScalingFactors,
) -> Result<Tensor> {
    let (w, b) = layer.modulated(sf)?;
    conv2d(input, &w, &b)
}

/// Gradients of a scalar loss with respect to everything the layer owns.
#[derive(Debug, Clone)]
pub struct DynamicConvGrads {
    pub input: Tensor,
    pub base_weights: Tensor,
    pub base_bias: Vec<f64>,
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Analytic backward pass for [`dynamic_conv_forward`].
///
/// `grad_out` is dL/d(output), shaped like the forward result. Uses:
/// dL/d(theta_k) = scale[k] * dL/d(theta'_k),
/// dL/d(scale[k]) = sum(dL/d(theta'_k) o theta_k),
/// dL/d(bias[k]) = dL/d(base_bias[k]) = sum of grad_out over channel k.
pub fn dynamic_conv_backward(
    layer: &DynamicConvLayer,
    input: &Tensor,
    sf: &ScalingFactors,
    grad_out: &Tensor,
) -> Result<DynamicConvGrads> {
    sf.validate()?;
    let ishape = input.shape();
    if ishape.len() != 4 {
        return Err(Error::Shape(format!("input must be 4-D, got {ishape:?}")));
    }
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let k_n = DYNAMIC_KERNELS;
    let kk = layer.kernel();
    let pad = kk / 2;
    if c != layer.in_channels() {
        return Err(Error::Shape(format!(
            "input has {c} channels, layer expects {}",
            layer.in_channels()
        )));
    }
    if grad_out.shape() != [n, k_n, h, w] {
        return Err(Error::Shape(format!(
            "grad_out must be [{n}, {k_n}, {h}, {w}], got {:?}",
            grad_out.shape()
        )));
    }

    // dL/d(b'_k): plain sum of the upstream gradient over channel k
    let mut d_bias = vec![0.0; k_n];
    for b in 0..n {
        for k in 0..k_n {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += grad_out.at4(b, k, y, x);
                }
            }
            d_bias[k] += acc;
        }
    }

    // dL/d(theta'_k): correlation of input with the upstream gradient
    let mut d_theta_mod = Tensor::zeros(layer.base_weights.shape().to_vec())?;
    for b in 0..n {
        for k in 0..k_n {
            for ch in 0..c {
                for i in 0..kk {
                    for j in 0..kk {
                        let mut acc = 0.0;
                        for y in 0..h {
                            let yy = y + i;
                            if yy < pad || yy >= h + pad {
                                continue;
                            }
                            for x in 0..w {
                                let xx = x + j;
                                if xx < pad || xx >= w + pad {
                                    continue;
                                }
                                acc += grad_out.at4(b, k, y, x) * input.at4(b, ch, yy - pad, xx - pad);
                            }
                        }
                        let o = d_theta_mod.idx4(k, ch, i, j);
                        d_theta_mod.data_mut()[o] += acc;
                    }
                }
            }
        }
    }

    // chain through the modulation
    let per_kernel = layer.in_channels() * kk * kk;
    let mut d_base_weights = d_theta_mod.clone();
    for (k, chunk) in d_base_weights
        .data_mut()
        .chunks_exact_mut(per_kernel)
        .enumerate()
    {
        for v in chunk.iter_mut() {
            *v = sf.scale[k] * *v;
        }
    }
    let mut d_scale = vec![0.0; k_n];
    for k in 0..k_n {
        let mut acc = 0.0;
        for r in 0..per_kernel {
            acc += d_theta_mod.data()[k * per_kernel + r] * layer.base_weights.data()[k * per_kernel + r];
        }
        d_scale[k] = acc;
    }

    // dL/d(input): full correlation with the modulated kernels
    let (theta_mod, _) = layer.modulated(sf)?;
    let mut d_input = Tensor::zeros(vec![n, c, h, w])?;
    for b in 0..n {
        for ch in 0..c {
            for u in 0..h {
                for v in 0..w {
                    let mut acc = 0.0;
                    for k in 0..k_n {
                        for i in 0..kk {
                            let y = u + pad;
                            if y < i || y - i >= h {
                                continue;
                            }
                            for j in 0..kk {
                                let x = v + pad;
                                if x < j || x - j >= w {
                                    continue;
                                }
                                acc += theta_mod.at4(k, ch, i, j) * grad_out.at4(b, k, y - i, x - j);
                            }
                        }
                    }
                    let o = d_input.idx4(b, ch, u, v);
                    d_input.data_mut()[o] = acc;
                }
            }
        }
    }

    Ok(DynamicConvGrads {
        input: d_input,
        base_weights: d_base_weights,
        base_bias: d_bias.clone(),
        scale: d_scale,
        bias: d_bias,
    })
}

/// Worst relative disagreement between analytic and central-difference
/// gradients, per gradient family.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub input: f64,
    pub base_weights: f64,
    pub base_bias: f64,
    pub scale: f64,
    pub bias: f64,
    pub components: usize,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central-difference check of every gradient [`dynamic_conv_backward`]
/// produces, using the linear probe loss `L = sum(output o upstream)`.
/// `h` is the perturbation step (1e-3 is the validated default).
pub fn gradient_check(
    layer: &DynamicConvLayer,
    input: &Tensor,
    sf: &ScalingFactors,
    upstream: &Tensor,
    h: f64,
) -> Result<GradCheckReport> {
    let loss = |layer: &DynamicConvLayer, input: &Tensor, sf: &ScalingFactors| -> Result<f64> {
        let out = dynamic_conv_forward(layer, input, sf)?;
        Ok(out
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&o, &u)| o * u)
            .sum())
    };
    let analytic = dynamic_conv_backward(layer, input, sf, upstream)?;
    let mut components = 0usize;

    let mut probe_vec = |base: &[f64],
                         grads: &[f64],
                         mut eval: Box<dyn FnMut(&[f64]) -> Result<f64> + '_>|
     -> Result<f64> {
        let mut worst = 0.0f64;
        let mut values = base.to_vec();
        for i in 0..values.len() {
            let orig = values[i];
            values[i] = orig + h;
            let fp = eval(&values)?;
            values[i] = orig - h;
            let fm = eval(&values)?;
            values[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(grads[i], numeric));
            components += 1;
        }
        Ok(worst)
    };

    // each family reuses one scratch copy; probes only overwrite values
    let mut t_in = input.clone();
    let e_input = probe_vec(
        input.data(),
        analytic.input.data(),
        Box::new(|vals| {
            t_in.data_mut().copy_from_slice(vals);
            loss(layer, &t_in, sf)
        }),
    )?;
    let mut l_w = layer.clone();
    let e_weights = probe_vec(
        layer.base_weights.data(),
        analytic.base_weights.data(),
        Box::new(|vals| {
            l_w.base_weights.data_mut().copy_from_slice(vals);
            loss(&l_w, input, sf)
        }),
    )?;
    let mut l_b = layer.clone();
    let e_base_bias = probe_vec(
        &layer.base_bias,
        &analytic.base_bias,
        Box::new(|vals| {
            l_b.base_bias.copy_from_slice(vals);
            loss(&l_b, input, sf)
        }),
    )?;
    let mut s_scale = sf.clone();
    let e_scale = probe_vec(
        &sf.scale,
        &analytic.scale,
        Box::new(|vals| {
            s_scale.scale.copy_from_slice(vals);
            loss(layer, input, &s_scale)
        }),
    )?;
    let mut s_bias = sf.clone();
    let e_bias = probe_vec(
        &sf.bias,
        &analytic.bias,
        Box::new(|vals| {
            s_bias.bias.copy_from_slice(vals);
            loss(layer, input, &s_bias)
        }),
    )?;

    let max = e_input.max(e_weights).max(e_base_bias).max(e_scale).max(e_bias);
    Ok(GradCheckReport {
        max_rel_err: max,
        input: e_input,
        base_weights: e_weights,
        base_bias: e_base_bias,
        scale: e_scale,
        bias: e_bias,
        components,
    })
}

/// Seeded end-to-end check: random layer, input, conditioning and upstream
/// gradient. Returns the report; callers compare against their tolerance.
pub fn seeded_gradient_check(seed: u64, h: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let layer = DynamicConvLayer::seeded(2, 3, seed)?;
    let input = Tensor::uniform(vec![1, 2, 5, 5], 1.0, &mut rng)?;
    let meta = meta_tensor(MetaInfo::new(50.0, 800.0)?);
    let mut sf = controller_forward(&layer.controller, &meta)?;
    // keep scales away from zero so relative comparisons stay meaningful
    for s in sf.scale.iter_mut() {
        *s += 1.0;
    }
    let upstream = Tensor::uniform(vec![1, DYNAMIC_KERNELS, 5, 5], 1.0, &mut rng)?;
    gradient_check(&layer, &input, &sf, &upstream, h)
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LayerManifest {
    base_weights: TensorEntry,
    base_bias: TensorEntry,
    controller_weights: TensorEntry,
    controller_bias: TensorEntry,
}

fn tensor_to_hvol(dir: &Path, file: &str, data: &[f64]) -> Result<()> {
    let vol = Volume3D::new([data.len(), 1, 1], [1.0, 1.0, 1.0], data.to_vec())?;
    hvol::write_volume_file(dir.join(file), &vol)
}

fn tensor_from_hvol(dir: &Path, entry: &TensorEntry) -> Result<Tensor> {
    let vol = hvol::read_volume_file(dir.join(&entry.file))?;
    Tensor::new(entry.shape.clone(), vol.into_voxels())
}

/// Saves layer weights as flat HVOL payloads plus a JSON shape manifest
/// (`layer.json`). Values are rounded to f32 by the container format.
pub fn save_layer<P: AsRef<Path>>(dir: P, layer: &DynamicConvLayer) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    tensor_to_hvol(dir, "base_weights.hvol", layer.base_weights.data())?;
    tensor_to_hvol(dir, "base_bias.hvol", &layer.base_bias)?;
    tensor_to_hvol(dir, "controller_weights.hvol", layer.controller.weights.data())?;
    tensor_to_hvol(dir, "controller_bias.hvol", &layer.controller.bias)?;
    let manifest = LayerManifest {
        base_weights: TensorEntry {
            file: "base_weights.hvol".into(),
            shape: layer.base_weights.shape().to_vec(),
        },
        base_bias: TensorEntry {
            file: "base_bias.hvol".into(),
            shape: vec![layer.base_bias.len()],
        },
        controller_weights: TensorEntry {
            file: "controller_weights.hvol".into(),
            shape: layer.controller.weights.shape().to_vec(),
        },
        controller_bias: TensorEntry {
            file: "controller_bias.hvol".into(),
            shape: vec![layer.controller.bias.len()],
        },
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("layer.json"), json)?;
    Ok(())
}

/// Loads a layer saved by [`save_layer`].
pub fn load_layer<P: AsRef<Path>>(dir: P) -> Result<DynamicConvLayer> {
    let dir = dir.as_ref();
    let manifest: LayerManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("layer.json"))?)?;
    let base_weights = tensor_from_hvol(dir, &manifest.base_weights)?;
    let base_bias = tensor_from_hvol(dir, &manifest.base_bias)?.data().to_vec();
    let cw = tensor_from_hvol(dir, &manifest.controller_weights)?;
    let cb = tensor_from_hvol(dir, &manifest.controller_bias)?.data().to_vec();
    DynamicConvLayer::new(base_weights, base_bias, Controller::new(cw, cb)?)
}
