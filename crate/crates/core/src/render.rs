//! Flat-shaded capsule rasterizer for the synthetic fisheye views.
//!
//! Each limb is a 3D capsule; its on-screen half-width at a point is
//! `focal * radius / distance`, so nearer limbs are drawn thicker.

use nalgebra::{Vector2, Vector3};

use crate::camera::{FisheyeCamera, FisheyeStereoRig, View};

/// Samples along each capsule axis; fisheye turns straight limbs into curves.
const AXIS_SAMPLES: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major `H x W x 3`, values in `[0, 1]`.
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn black(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self {
            width,
            height,
            data: (0..width * height).flat_map(|_| rgb).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// A limb volume in left-camera coordinates (cm).
#[derive(Clone, Debug, PartialEq)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
    pub color: [f32; 3],
}

/// Fixed per-limb colour: evenly spaced saturated hues.
pub fn limb_color(index: usize, count: usize) -> [f32; 3] {
    let h = index as f32 / count.max(1) as f32 * 6.0;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b]
}

pub fn render_stereo(capsules: &[Capsule], rig: &FisheyeStereoRig) -> (RgbImage, RgbImage) {
    let shift = |view: View| {
        let off = Vector3::from(rig.camera(view).position) - Vector3::from(rig.left.position);
        move |p: &Vector3<f64>| p - off
    };
    let l = render_view(capsules, &rig.left, shift(View::Left));
    let r = render_view(capsules, &rig.right, shift(View::Right));
    (l, r)
}

struct Stroke {
    pts: Vec<Option<(Vector2<f64>, f64)>>,
    color: [f32; 3],
    depth: f64,
}

/// Renders capsules for a camera; `to_cam` maps left-rig coordinates into
/// this camera's frame.
pub fn render_view(
    capsules: &[Capsule],
    camera: &FisheyeCamera,
    to_cam: impl Fn(&Vector3<f64>) -> Vector3<f64>,
) -> RgbImage {
    let [w, h] = camera.image_size;
    let mut img = RgbImage::black(w, h);
    let max_r = w.max(h) as f64;
    let mut strokes: Vec<Stroke> = capsules
        .iter()
        .map(|cap| {
            let a = to_cam(&cap.a);
            let b = to_cam(&cap.b);
            let pts = (0..=AXIS_SAMPLES)
                .map(|k| {
                    let p = a + (b - a) * (k as f64 / AXIS_SAMPLES as f64);
                    let dist = p.norm();
                    let proj = camera.project(&p).ok()?;
                    (proj.theta <= camera.fov / 2.0)
                        .then(|| (proj.pixel, (camera.focal * cap.radius / dist).min(max_r)))
                })
                .collect();
            Stroke { pts, color: cap.color, depth: ((a + b) / 2.0).norm() }
        })
        .collect();
    // Painter's order: far first.
    strokes.sort_by(|x, y| y.depth.total_cmp(&x.depth));

    let mut coverage = vec![0f32; w * h];
    for stroke in &strokes {
        coverage.iter_mut().for_each(|c| *c = 0.0);
        let mut touched = false;
        for pair in stroke.pts.windows(2) {
            let (Some((p0, r0)), Some((p1, r1))) = (pair[0], pair[1]) else {
                continue;
            };
            let pad = r0.max(r1) + 1.0;
            let x0 = ((p0.x.min(p1.x) - pad).floor().max(0.0)) as usize;
            let y0 = ((p0.y.min(p1.y) - pad).floor().max(0.0)) as usize;
            let x1 = ((p0.x.max(p1.x) + pad).ceil().min(w as f64 - 1.0)).max(-1.0);
            let y1 = ((p0.y.max(p1.y) + pad).ceil().min(h as f64 - 1.0)).max(-1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            let d = p1 - p0;
            let len2 = d.norm_squared();
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let q = Vector2::new(x as f64, y as f64);
                    let t = if len2 > 0.0 { ((q - p0).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
                    let radius = r0 + (r1 - r0) * t;
                    let dist = (q - (p0 + d * t)).norm();
                    let cov = (radius + 0.5 - dist).clamp(0.0, 1.0) as f32;
                    let c = &mut coverage[y * w + x];
                    if cov > *c {
                        *c = cov;
                        touched = true;
                    }
                }
            }
        }
        if !touched {
            continue;
        }
        for (i, &a) in coverage.iter().enumerate() {
            if a > 0.0 {
                for ch in 0..3 {
                    let v = &mut img.data[i * 3 + ch];
                    *v = *v * (1.0 - a) + stroke.color[ch] * a;
                }
            }
        }
    }
    img
}
