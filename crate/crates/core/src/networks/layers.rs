//! Minimal convolutional building blocks over candle `Var`s.
//!
//! Parameters are initialized from a seeded generator so that two runs with
//! the same seed start from bit-identical weights.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Standard deviation of the zero-mean Gaussian weight init.
pub const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;

/// Seeded source of initial parameter values.
pub struct ParamInit {
    rng: ChaCha8Rng,
    device: Device,
    dtype: DType,
}

impl ParamInit {
    pub fn new(seed: u64, device: &Device, dtype: DType) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: device.clone(),
            dtype,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn gaussian(&mut self, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Result<Var> {
        Ok(Var::zeros(shape, self.dtype, &self.device)?)
    }
}

/// Collects `(name, var)` pairs in a stable order.
pub trait Parameters {
    fn visit(&self, prefix: &str, out: &mut Vec<(String, Var)>);

    fn named_vars(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn vars(&self) -> Vec<Var> {
        self.named_vars().into_iter().map(|(_, v)| v).collect()
    }

    fn num_params(&self) -> usize {
        self.named_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        init: &mut ParamInit,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Self::with_std(init, in_channels, out_channels, kernel, stride, padding, INIT_STD)
    }

    pub fn with_std(
        init: &mut ParamInit,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        std: f64,
    ) -> Result<Self> {
        Ok(Self {
            weight: init.gaussian(&[out_channels, in_channels, kernel, kernel], std)?,
            bias: init.zeros(&[out_channels])?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let out = self.bias.dim(0)?;
        Ok(ys.broadcast_add(&self.bias.as_tensor().reshape((1, out, 1, 1))?)?)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }
}

impl Parameters for Conv2d {
    fn visit(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Fractionally strided convolution that exactly doubles the spatial size.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
}

impl ConvTranspose2d {
    pub fn upsample2x(init: &mut ParamInit, in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Self {
            weight: init.gaussian(&[in_channels, out_channels, 3, 3], INIT_STD)?,
            bias: init.zeros(&[out_channels])?,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.conv_transpose2d(self.weight.as_tensor(), 1, 1, 2, 1)?;
        let out = self.bias.dim(0)?;
        Ok(ys.broadcast_add(&self.bias.as_tensor().reshape((1, out, 1, 1))?)?)
    }
}

impl Parameters for ConvTranspose2d {
    fn visit(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(init: &mut ParamInit, in_features: usize, out_features: usize, std: f64) -> Result<Self> {
        Ok(Self {
            weight: init.gaussian(&[out_features, in_features], std)?,
            bias: init.zeros(&[out_features])?,
        })
    }

    /// `(n, in) -> (n, out)`
    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.matmul(&self.weight.as_tensor().t()?)?;
        Ok(ys.broadcast_add(self.bias.as_tensor())?)
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Per-sample, per-channel normalization over the spatial dims (no affine).
pub fn instance_norm(xs: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = xs.dims4()?;
    let flat = xs.flatten_from(2)?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
    let (n, c, _) = normed.dims3()?;
    Ok(normed.reshape((n, c, h, w))?)
}

pub fn leaky_relu(xs: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(xs, 0.2)?)
}

/// `(h, w, 3)` or `(n, h, w, 3)` to `(n, 3, h, w)`.
pub fn to_nchw(x: &Tensor) -> Result<Tensor> {
    let x = if x.rank() == 3 { x.unsqueeze(0)? } else { x.clone() };
    Ok(x.permute((0, 3, 1, 2))?.contiguous()?)
}

/// `(n, c, h, w)` to `(n, h, w, c)`.
pub fn to_nhwc(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute((0, 2, 3, 1))?.contiguous()?)
}
