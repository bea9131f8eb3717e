//! PNG dumps of a sample's views, ground-truth heatmaps and, optionally,
//! a checkpoint's predictions for it.

use std::path::Path;

use ego3dpose_core::dataset::read_sample_dir;
use ego3dpose_core::render::RgbImage;
use ego3dpose_nn::{batch, pipeline, RunConfig};
use image::{Rgb, RgbImage as Png};

use crate::Failure;

/// `(C, h, w, values)` channel-major planes.
struct Planes {
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f32>,
}

impl Planes {
    fn plane(&self, c: usize) -> &[f32] {
        &self.v[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    /// Pixelwise max over channels `range`.
    fn max_over(&self, range: std::ops::Range<usize>) -> Vec<f32> {
        let mut out = vec![f32::MIN; self.h * self.w];
        for c in range {
            for (o, &x) in out.iter_mut().zip(self.plane(c)) {
                *o = o.max(x);
            }
        }
        out
    }
}

fn hot(x: f32) -> Rgb<u8> {
    let t = x.clamp(0.0, 1.0);
    let r = (3.0 * t).min(1.0);
    let g = (3.0 * t - 1.0).clamp(0.0, 1.0);
    let b = (3.0 * t - 2.0).clamp(0.0, 1.0);
    Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
}

/// Blue for -1, white for 0, red for +1.
fn diverging(x: f32) -> Rgb<u8> {
    let t = x.clamp(-1.0, 1.0);
    let fade = ((1.0 - t.abs()) * 255.0) as u8;
    if t >= 0.0 {
        Rgb([255, fade, fade])
    } else {
        Rgb([fade, fade, 255])
    }
}

/// Tiles `rows x cols` maps of `h x w`, each scaled by `k`, 2 px gaps.
fn grid(tiles: &[Vec<Vec<f32>>], h: usize, w: usize, k: usize, color: fn(f32) -> Rgb<u8>) -> Png {
    let rows = tiles.len();
    let cols = tiles.iter().map(Vec::len).max().unwrap_or(0);
    let (tw, th) = (w * k + 2, h * k + 2);
    let mut img = Png::from_pixel((cols * tw) as u32, (rows * th) as u32, Rgb([64, 64, 64]));
    for (r, row) in tiles.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            for y in 0..h * k {
                for x in 0..w * k {
                    let px = color(tile[(y / k) * w + x / k]);
                    img.put_pixel((c * tw + x) as u32, (r * th + y) as u32, px);
                }
            }
        }
    }
    img
}

fn to_png(img: &RgbImage, k: usize) -> Png {
    Png::from_fn((img.width * k) as u32, (img.height * k) as u32, |x, y| {
        let p = img.pixel(x as usize / k, y as usize / k);
        Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0) as u8))
    })
}

/// The image with a heatmap (at a lower resolution) blended in as red.
fn overlay(img: &RgbImage, map: &[f32], h: usize, w: usize, k: usize) -> Png {
    let (sy, sx) = (img.height / h, img.width / w);
    Png::from_fn((img.width * k) as u32, (img.height * k) as u32, |x, y| {
        let (ix, iy) = (x as usize / k, y as usize / k);
        let p = img.pixel(ix, iy);
        let a = map[(iy / sy) * w + ix / sx].clamp(0.0, 1.0);
        let mix = |v: f32, t: f32| (((1.0 - a) * v + a * t).clamp(0.0, 1.0) * 255.0) as u8;
        Rgb([mix(p[0], 1.0), mix(p[1], 0.0), mix(p[2], 0.0)])
    })
}

fn save(img: &Png, path: &Path) -> Result<(), Failure> {
    img.save(path).map_err(|e| Failure { kind: "io".into(), message: format!("{}: {e}", path.display()), code: 1 })
}

/// Joint maps: left and right views side by side.
fn jh_panel(p: &Planes) -> Png {
    let n = p.c / 2;
    grid(&[vec![p.max_over(0..n), p.max_over(n..2 * n)]], p.h, p.w, 8, hot)
}

/// One row per limb: left sin, left cos, right sin, right cos.
fn peh_panel(p: &Planes) -> Png {
    let tiles: Vec<Vec<Vec<f32>>> =
        (0..p.c / 4).map(|l| (0..4).map(|k| p.plane(4 * l + k).to_vec()).collect()).collect();
    grid(&tiles, p.h, p.w, 4, diverging)
}

/// Per-limb confidence `sqrt(sin^2 + cos^2)`, left then right view.
fn limb_position_panel(p: &Planes) -> Png {
    let conf = |view: usize| -> Vec<f32> {
        let mut out = vec![0f32; p.h * p.w];
        for l in 0..p.c / 4 {
            let (s, c) = (p.plane(4 * l + 2 * view), p.plane(4 * l + 2 * view + 1));
            for (o, (a, b)) in out.iter_mut().zip(s.iter().zip(c)) {
                *o = o.max((a * a + b * b).sqrt());
            }
        }
        out
    };
    grid(&[vec![conf(0), conf(1)]], p.h, p.w, 8, hot)
}

pub fn run(sample_dir: &Path, model: Option<(&RunConfig, &Path)>, out: &Path) -> Result<(), Failure> {
    let (manifest, s) = read_sample_dir(sample_dir)?;
    std::fs::create_dir_all(out)
        .map_err(|e| Failure { kind: "io".into(), message: format!("{}: {e}", out.display()), code: 1 })?;
    let jh = Planes { c: s.jh.n_channels(), h: s.jh.height, w: s.jh.width, v: s.jh.data.clone() };
    let peh = Planes { c: s.peh.n_channels(), h: s.peh.height, w: s.peh.width, v: s.peh.data.clone() };
    let n = jh.c / 2;
    save(&to_png(&s.left, 4), &out.join("left.png"))?;
    save(&to_png(&s.right, 4), &out.join("right.png"))?;
    save(&jh_panel(&jh), &out.join("jh_gt.png"))?;
    save(&peh_panel(&peh), &out.join("peh_gt.png"))?;
    save(&limb_position_panel(&peh), &out.join("limb_position_gt.png"))?;
    save(&overlay(&s.left, &jh.max_over(0..n), jh.h, jh.w, 4), &out.join("overlay_left_gt.png"))?;
    save(&overlay(&s.right, &jh.max_over(n..2 * n), jh.h, jh.w, 4), &out.join("overlay_right_gt.png"))?;

    let Some((cfg, ckpt)) = model else { return Ok(()) };
    let sample = s;
    let skeleton = manifest.skeleton;
    let bundle = pipeline::load_bundle(cfg, &skeleton, ckpt)?;
    let one = [&sample];
    let (jh_t, peh_t) = bundle.extract(&batch::images(&one, false)?, &batch::images(&one, true)?, false)?;
    let (c, h, w, v) = batch::first_heatmaps(&jh_t)?;
    let pj = Planes { c, h, w, v };
    save(&jh_panel(&pj), &out.join("jh_pred.png"))?;
    save(&overlay(&sample.left, &pj.max_over(0..c / 2), h, w, 4), &out.join("overlay_left_pred.png"))?;
    if let Some(p) = &peh_t {
        let (c, h, w, v) = batch::first_heatmaps(p)?;
        let pp = Planes { c, h, w, v };
        save(&peh_panel(&pp), &out.join("peh_pred.png"))?;
        save(&limb_position_panel(&pp), &out.join("limb_position_pred.png"))?;
    }
    let pred = bundle.forward_stage2(&jh_t, peh_t.as_ref(), false)?;
    let points = batch::to_points(&pred.pose)?.remove(0);
    let mpjpe = ego3dpose_core::metrics::mpjpe(&points, &sample.local_pose.joints, &skeleton.estimated_joints)?;
    let body = serde_json::json!({
        "joints": skeleton.joint_names,
        "gt_cm": sample.local_pose.joints.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>(),
        "pred_cm": points.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>(),
        "mpjpe_mm": mpjpe * 10.0,
    });
    pipeline::write_file(&out.join("pose.json"), serde_json::to_string_pretty(&body).expect("json"))?;
    Ok(())
}
