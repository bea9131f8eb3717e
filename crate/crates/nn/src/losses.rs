//! Training losses on tensors of any float dtype (the oracle tests run in
//! `f64`, training in `f32`).
//!
//! "mse" is the mean over every element of the compared tensors.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor, D};

use crate::config::LossWeights;
use crate::{Error, Result};

pub fn mse(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("mse", format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    Ok((pred - gt)?.sqr()?.mean_all()?)
}

pub fn loss_jh(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    mse(pred, gt)
}

/// Per-limb mse over the limb's four channels, divided by the limb's pixel
/// length, averaged over limbs and batch. `pred`/`gt` are `(B, 4L, h, w)`
/// and `lengths` is `(B, L)` with every entry >= 1.
pub fn loss_ph(pred: &Tensor, gt: &Tensor, lengths: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("loss_ph", format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    let (b, c, h, w) = pred.dims4().map_err(|e| Error::shape("loss_ph", e.to_string()))?;
    let (lb, l) = lengths.dims2().map_err(|e| Error::shape("loss_ph", e.to_string()))?;
    if lb != b || c != 4 * l {
        return Err(Error::shape("loss_ph", format!("{c} channels / {l} limb lengths for batch {b} vs {lb}")));
    }
    let min = lengths.flatten_all()?.to_dtype(DType::F64)?.min(0)?.to_scalar::<f64>()?;
    if !(min >= 1.0) {
        return Err(Error::Parameter(format!("limb pixel lengths must be >= 1, got {min}")));
    }
    let per_limb = (pred - gt)?.sqr()?.reshape((b, l, 4 * h * w))?.mean(D::Minus1)?;
    Ok((per_limb / lengths.detach())?.mean_all()?)
}

pub fn loss_trans(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    mse(pred, gt)
}

/// Square root that is exactly zero (with zero gradient) at zero.
fn smooth_norm(sq: &Tensor) -> Result<Tensor> {
    let eps = match sq.dtype() {
        DType::F64 => 1e-12,
        _ => 1e-6,
    };
    Ok(((sq + eps * eps)?.sqrt()? - eps)?)
}

/// Sum over joints of Euclidean distance, averaged over the batch.
/// `(B, J, 3)` inputs.
pub fn loss_pose(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() || pred.rank() != 3 {
        return Err(Error::shape("loss_pose", format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    let d = smooth_norm(&(pred - gt)?.sqr()?.sum(D::Minus1)?)?;
    Ok(d.sum(1)?.mean_all()?)
}

/// `mse(jh_rec, jh_est) + mse(ph_rec, ph_est)`; the second term is absent
/// for variants without limb heatmaps.
pub fn loss_recon(recon: &Tensor, estimated: &Tensor, jh_channels: usize) -> Result<Tensor> {
    if recon.dims() != estimated.dims() {
        return Err(Error::shape("loss_recon", format!("{:?} vs {:?}", recon.dims(), estimated.dims())));
    }
    let c = recon.dim(1)?;
    let jh = mse(&recon.narrow(1, 0, jh_channels)?, &estimated.narrow(1, 0, jh_channels)?)?;
    if c == jh_channels {
        return Ok(jh);
    }
    let ph = mse(
        &recon.narrow(1, jh_channels, c - jh_channels)?,
        &estimated.narrow(1, jh_channels, c - jh_channels)?,
    )?;
    Ok((jh + ph)?)
}

/// Sum over `limbs` of the cosine between predicted and true limb vectors,
/// averaged over the batch. Predicted limbs shorter than `1e-8` contribute
/// nothing; their count is returned alongside.
pub fn loss_cos(pred: &Tensor, gt: &Tensor, limbs: &[(usize, usize)]) -> Result<(Tensor, usize)> {
    if pred.dims() != gt.dims() || pred.rank() != 3 {
        return Err(Error::shape("loss_cos", format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    let dev = pred.device();
    let parents: Vec<u32> = limbs.iter().map(|l| l.0 as u32).collect();
    let children: Vec<u32> = limbs.iter().map(|l| l.1 as u32).collect();
    let pi = Tensor::new(parents.as_slice(), dev)?;
    let ci = Tensor::new(children.as_slice(), dev)?;
    let vec = |p: &Tensor| -> Result<Tensor> { Ok((p.index_select(&ci, 1)? - p.index_select(&pi, 1)?)?) };
    let (fp, fg) = (vec(pred)?, vec(&gt.detach())?);
    // The offset keeps the gradient finite for zero-length limbs.
    let np = (fp.sqr()?.sum(D::Minus1)? + 1e-30)?.sqrt()?;
    let ng = fg.sqr()?.sum(D::Minus1)?.sqrt()?;
    let eps = 1e-8;
    let valid = np.detach().ge(eps)?.to_dtype(pred.dtype())?;
    let skipped = valid.elem_count() - valid.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()? as usize;
    let dot = (fp * fg)?.sum(D::Minus1)?;
    let denom = (np.maximum(eps)? * ng.maximum(eps)?)?;
    let cos = ((dot / denom)? * valid)?;
    Ok((cos.sum(1)?.mean_all()?, skipped))
}

/// Named scalar loss terms as plain numbers (for logs and arithmetic checks).
pub type LossParts = BTreeMap<String, f64>;

/// `jh * L_JH + ph * L_PH` over whichever parts are present.
pub fn total_2d(parts: &LossParts, w: &LossWeights) -> f64 {
    w.jh * parts.get("jh").copied().unwrap_or(0.0) + w.ph * parts.get("ph").copied().unwrap_or(0.0)
}

pub fn total_3d(parts: &LossParts, w: &LossWeights) -> f64 {
    let g = |k: &str| parts.get(k).copied().unwrap_or(0.0);
    w.trans * g("trans") + w.pose * g("pose") + w.recon * g("recon") + w.cos * g("cos")
}

/// Tensor version of [`total_3d`] over the terms that exist.
pub fn weighted_sum(terms: &[(f64, &Tensor)]) -> Result<Tensor> {
    let mut it = terms.iter();
    let (w0, t0) = it.next().ok_or_else(|| Error::Parameter("no loss terms".into()))?;
    let mut acc = (*t0 * *w0)?;
    for (w, t) in it {
        acc = (acc + (*t * *w)?)?;
    }
    Ok(acc)
}
