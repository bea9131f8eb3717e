//! Minimal layers on top of `candle-core` tensors.

use candle_core::{Tensor, Var};

use crate::params::ParamBuilder;
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * LEAKY_SLOPE)?)?)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    w: Var,
    b: Var,
    in_dim: usize,
}

impl Linear {
    pub fn new(pb: &ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let pb = pb.sub(name);
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            name: name.into(),
            w: pb.uniform("weight", &[out_dim, in_dim], bound)?,
            b: pb.uniform("bias", &[out_dim], bound)?,
            in_dim,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, d) = x.dims2().map_err(|e| Error::shape(&self.name, e.to_string()))?;
        if d != self.in_dim {
            return Err(Error::shape(&self.name, format!("expects {} inputs, got {d}", self.in_dim)));
        }
        Ok(x.matmul(&self.w.t()?)?.broadcast_add(&self.b)?)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    w: Var,
    b: Option<Var>,
    stride: usize,
    padding: usize,
    in_ch: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pb: &ParamBuilder,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let pb = pb.sub(name);
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        Ok(Self {
            name: name.into(),
            w: pb.uniform("weight", &[out_ch, in_ch, kernel, kernel], bound)?,
            b: if bias { Some(pb.uniform("bias", &[out_ch], bound)?) } else { None },
            stride,
            padding,
            in_ch,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4().map_err(|e| Error::shape(&self.name, e.to_string()))?;
        if c != self.in_ch {
            return Err(Error::shape(&self.name, format!("expects {} channels, got {c}", self.in_ch)));
        }
        let y = x.conv2d(&self.w, self.padding, self.stride, 1, 1)?;
        match &self.b {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Transposed convolution; kernel 4, stride 2, padding 1 doubles the size.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub name: String,
    w: Var,
    b: Var,
    stride: usize,
    padding: usize,
    in_ch: usize,
}

impl ConvTranspose2d {
    pub fn new(
        pb: &ParamBuilder,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let pb = pb.sub(name);
        let bound = 1.0 / ((out_ch * kernel * kernel) as f64).sqrt();
        Ok(Self {
            name: name.into(),
            w: pb.uniform("weight", &[in_ch, out_ch, kernel, kernel], bound)?,
            b: pb.uniform("bias", &[out_ch], bound)?,
            stride,
            padding,
            in_ch,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4().map_err(|e| Error::shape(&self.name, e.to_string()))?;
        if c != self.in_ch {
            return Err(Error::shape(&self.name, format!("expects {} channels, got {c}", self.in_ch)));
        }
        let y = x.conv_transpose2d(&self.w, self.padding, 0, self.stride, 1)?;
        Ok(y.broadcast_add(&self.b.reshape((1, (), 1, 1))?)?)
    }
}

/// Batch normalisation over all axes but the channel axis (axis 1).
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(pb: &ParamBuilder, name: &str, channels: usize) -> Result<Self> {
        let pb = pb.sub(name);
        Ok(Self {
            name: name.into(),
            gamma: pb.constant("weight", &[channels], 1.0, true)?,
            beta: pb.constant("bias", &[channels], 0.0, true)?,
            running_mean: pb.constant("running_mean", &[channels], 0.0, false)?,
            running_var: pb.constant("running_var", &[channels], 1.0, false)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// In training mode normalises with batch statistics and updates the
    /// running estimates; otherwise uses the running estimates.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let rank = x.rank();
        if rank < 2 || x.dim(1)? != self.gamma.dim(0)? {
            return Err(Error::shape(
                &self.name,
                format!("expects (N, {}, ..), got {:?}", self.gamma.dim(0)?, x.dims()),
            ));
        }
        let mut shape = vec![1usize; rank];
        shape[1] = self.gamma.dim(0)?;
        let (mean, var) = if train {
            let mut mean = x.clone();
            for axis in (0..rank).rev().filter(|&a| a != 1) {
                mean = mean.mean_keepdim(axis)?;
            }
            let centred = x.broadcast_sub(&mean)?;
            let mut var = centred.sqr()?;
            for axis in (0..rank).rev().filter(|&a| a != 1) {
                var = var.mean_keepdim(axis)?;
            }
            let n = (x.elem_count() / shape[1]) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
            let new_var =
                ((self.running_var.as_tensor() * (1.0 - m))? + (var.detach().flatten_all()? * (m * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape(shape.as_slice())?,
                self.running_var.as_tensor().reshape(shape.as_slice())?,
            )
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape(shape.as_slice())?)?
            .broadcast_add(&self.beta.reshape(shape.as_slice())?)?)
    }
}

/// Convolution (or dense layer) followed by batch norm and an activation.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub leaky: bool,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pb: &ParamBuilder,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let pb = pb.sub(name);
        Ok(Self {
            conv: Conv2d::new(&pb, "conv", in_ch, out_ch, kernel, stride, padding, false)?,
            bn: BatchNorm::new(&pb, "bn", out_ch)?,
            leaky: true,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn.forward(&self.conv.forward(x)?, train)?;
        if self.leaky {
            leaky_relu(&y)
        } else {
            Ok(y.relu()?)
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub linear: Linear,
    pub bn: BatchNorm,
}

impl DenseBlock {
    pub fn new(pb: &ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let pb = pb.sub(name);
        Ok(Self { linear: Linear::new(&pb, "fc", in_dim, out_dim)?, bn: BatchNorm::new(&pb, "bn", out_dim)? })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        leaky_relu(&self.bn.forward(&self.linear.forward(x)?, train)?)
    }
}
