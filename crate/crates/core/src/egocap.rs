//! Preprocessing that brings EgoCap-style captures into the toy pipeline's
//! conventions: square crop around the focal centre, area downsampling, and
//! millimetre to centimetre conversion.

use nalgebra::Vector3;

use crate::geometry::Pose3D;
use crate::render::RgbImage;
use crate::{Error, Result};

pub const EGOCAP_WIDTH: usize = 1280;
pub const EGOCAP_HEIGHT: usize = 1024;
pub const OUTPUT_SIZE: usize = 256;

/// Crops a 1280x1024 frame to 1024x1024 with `focal_center_x` in the middle
/// column (clamped so the crop stays inside the frame), then averages 4x4
/// blocks down to 256x256.
pub fn egocap_crop_downsample(image: &RgbImage, focal_center_x: f64) -> Result<RgbImage> {
    if image.width != EGOCAP_WIDTH || image.height != EGOCAP_HEIGHT {
        return Err(Error::Dimension(format!(
            "expected {EGOCAP_WIDTH}x{EGOCAP_HEIGHT} input, got {}x{}",
            image.width, image.height
        )));
    }
    if !focal_center_x.is_finite() {
        return Err(Error::Parameter("focal centre must be finite".into()));
    }
    let side = EGOCAP_HEIGHT;
    let max_x0 = (EGOCAP_WIDTH - side) as f64;
    // Pixel centres sit on integers, so the crop's middle is at x0 + side/2.
    let x0 = (focal_center_x - (side / 2) as f64).round().clamp(0.0, max_x0) as usize;
    let cropped = crop(image, x0, 0, side, side);
    area_downsample(&cropped, side / OUTPUT_SIZE)
}

pub fn crop(image: &RgbImage, x0: usize, y0: usize, width: usize, height: usize) -> RgbImage {
    let mut out = RgbImage::black(width, height);
    for y in 0..height {
        let src = ((y0 + y) * image.width + x0) * 3;
        out.data[y * width * 3..(y + 1) * width * 3].copy_from_slice(&image.data[src..src + width * 3]);
    }
    out
}

/// Averages non-overlapping `factor x factor` blocks.
pub fn area_downsample(image: &RgbImage, factor: usize) -> Result<RgbImage> {
    if factor == 0 || image.width % factor != 0 || image.height % factor != 0 {
        return Err(Error::Dimension(format!(
            "{}x{} is not divisible by {factor}",
            image.width, image.height
        )));
    }
    let (w, h) = (image.width / factor, image.height / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = RgbImage::black(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for dy in 0..factor {
                for dx in 0..factor {
                    let p = image.pixel(x * factor + dx, y * factor + dy);
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                }
            }
            out.set_pixel(x, y, acc.map(|v| (v * norm) as f32));
        }
    }
    Ok(out)
}

pub fn mm_to_cm(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points.iter().map(|p| p / 10.0).collect()
}

pub fn convert_units_mm_to_cm(pose: &Pose3D) -> Pose3D {
    Pose3D { root: pose.root / 10.0, joints: mm_to_cm(&pose.joints), frame: pose.frame }
}

/// Deterministic split: keys sorted, the first `train_fraction` go to train.
pub fn sorted_split<T: Ord + Clone>(keys: &[T], train_fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Parameter(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut sorted = keys.to_vec();
    sorted.sort();
    let n_train = (sorted.len() as f64 * train_fraction).round() as usize;
    let test = sorted.split_off(n_train);
    Ok((sorted, test))
}
