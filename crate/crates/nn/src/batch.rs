//! Stacking samples into network-ready tensors.

use candle_core::{DType, Device, Tensor};
use ego3dpose_core::dataset::Sample;

use crate::{Error, Result};

/// `(B, 3, H, W)` from `H x W x 3` images of one view.
pub fn images(samples: &[&Sample], right: bool) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::Parameter("empty batch".into()))?;
    let (h, w) = (first.left.height, first.left.width);
    let mut data = Vec::with_capacity(samples.len() * h * w * 3);
    for s in samples {
        let img = if right { &s.right } else { &s.left };
        if (img.height, img.width) != (h, w) {
            return Err(Error::shape("batch", "images differ in size"));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_vec(data, (samples.len(), h, w, 3), &Device::Cpu)?.permute((0, 3, 1, 2))?.contiguous()?)
}

pub fn stack_heatmaps(samples: &[&Sample], peh: bool) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::Parameter("empty batch".into()))?;
    let f = if peh { &first.peh } else { &first.jh };
    let (c, h, w) = (f.n_channels(), f.height, f.width);
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        let st = if peh { &s.peh } else { &s.jh };
        if (st.n_channels(), st.height, st.width) != (c, h, w) {
            return Err(Error::shape("batch", "heatmap stacks differ in shape"));
        }
        data.extend_from_slice(&st.data);
    }
    Ok(Tensor::from_vec(data, (samples.len(), c, h, w), &Device::Cpu)?)
}

/// `(B, J, 3)` local poses (cm).
pub fn poses(samples: &[&Sample]) -> Result<Tensor> {
    let j = samples.first().ok_or_else(|| Error::Parameter("empty batch".into()))?.local_pose.len();
    let data: Vec<f32> = samples
        .iter()
        .flat_map(|s| s.local_pose.joints.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]))
        .collect();
    Ok(Tensor::from_vec(data, (samples.len(), j, 3), &Device::Cpu)?)
}

pub fn orientations(samples: &[&Sample]) -> Result<Tensor> {
    let l = samples.first().ok_or_else(|| Error::Parameter("empty batch".into()))?.orientations.len();
    let data: Vec<f32> = samples
        .iter()
        .flat_map(|s| s.orientations.iter().flat_map(|o| [o.x as f32, o.y as f32, o.z as f32]))
        .collect();
    Ok(Tensor::from_vec(data, (samples.len(), l, 3), &Device::Cpu)?)
}

pub fn limb_lengths(samples: &[&Sample]) -> Result<Tensor> {
    let l = samples.first().ok_or_else(|| Error::Parameter("empty batch".into()))?.limb_lengths.len();
    let data: Vec<f32> = samples.iter().flat_map(|s| s.limb_lengths.iter().map(|&v| v as f32)).collect();
    Ok(Tensor::from_vec(data, (samples.len(), l), &Device::Cpu)?)
}

/// Rows of a `(B, J, 3)` tensor as `f64` points.
pub fn to_points(t: &Tensor) -> Result<Vec<Vec<nalgebra::Vector3<f64>>>> {
    let v: Vec<Vec<Vec<f64>>> = t.to_dtype(DType::F64)?.to_vec3()?;
    Ok(v.into_iter()
        .map(|rows| rows.into_iter().map(|r| nalgebra::Vector3::new(r[0], r[1], r[2])).collect())
        .collect())
}

/// First item of a `(B, C, h, w)` tensor as `(C, h, w, values)`.
pub fn first_heatmaps(t: &Tensor) -> Result<(usize, usize, usize, Vec<f32>)> {
    let (_, c, h, w) = t.dims4()?;
    let v: Vec<f32> = t.narrow(0, 0, 1)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok((c, h, w, v))
}
