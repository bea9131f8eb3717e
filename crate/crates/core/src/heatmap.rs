//! Ground-truth heatmaps: Gaussian joint-confidence maps and perspective
//! embedding maps (a line-confidence map scaled by the sine and cosine of
//! the limb-view angle), plus their decoders and on-disk format.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::camera::View;
use crate::geometry::LimbAngle;
use crate::{Error, Result};

pub const HEATMAP_FORMAT: &str = "ego3dpose-heatmap-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    JointConfidence,
    PehSin,
    PehCos,
    LineConfidence,
    LineDepth,
    LineAngle,
}

impl ChannelKind {
    /// Closed value range ground truth of this kind must respect.
    pub fn range(self) -> (f64, f64) {
        match self {
            ChannelKind::JointConfidence | ChannelKind::PehCos | ChannelKind::LineConfidence => {
                (0.0, 1.0)
            }
            ChannelKind::PehSin | ChannelKind::LineAngle => (-1.0, 1.0),
            ChannelKind::LineDepth => (0.0, f64::INFINITY),
        }
    }
}

/// How limbs are written into their two per-view channels. `Trig` is the
/// perspective embedding; the others exist for representation ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PehEncoding {
    #[default]
    Trig,
    /// Line confidence in both channels, no perspective.
    Line,
    /// Line confidence and `c * (depth / 200cm + 0.1)`.
    LineDepth,
    /// Line confidence and `c * theta / (pi/2)`.
    LineAngle,
}

impl PehEncoding {
    pub fn kinds(self) -> [ChannelKind; 2] {
        match self {
            PehEncoding::Trig => [ChannelKind::PehSin, ChannelKind::PehCos],
            PehEncoding::Line => [ChannelKind::LineConfidence, ChannelKind::LineConfidence],
            PehEncoding::LineDepth => [ChannelKind::LineConfidence, ChannelKind::LineDepth],
            PehEncoding::LineAngle => [ChannelKind::LineConfidence, ChannelKind::LineAngle],
        }
    }
}

/// `sigma` used at a given heatmap resolution: 1 px at 64, proportional otherwise.
pub fn default_sigma(heatmap_size: usize) -> f64 {
    heatmap_size as f64 / 64.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub kind: ChannelKind,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros([height, width]: [usize; 2], kind: ChannelKind) -> Self {
        Self {
            height,
            width,
            kind,
            values: vec![0.0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.height, self.width]
    }

    fn from_fn([h, w]: [usize; 2], kind: ChannelKind, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(h * w);
        for row in 0..h {
            for col in 0..w {
                values.push(f(col as f64, row as f64));
            }
        }
        Self { height: h, width: w, kind, values }
    }
}

/// Projected limb endpoints in heatmap pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimbSegment2D {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    pub a_visible: bool,
    pub b_visible: bool,
}

impl LimbSegment2D {
    pub fn new(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        Self { a, b, a_visible: true, b_visible: true }
    }

    /// The part of the segment inside a `[h, w]` grid, or `None` when the
    /// limb is not visible at all.
    pub fn visible_part(&self, [h, w]: [usize; 2]) -> Option<(Vector2<f64>, Vector2<f64>)> {
        if !(self.a_visible || self.b_visible) {
            return None;
        }
        clip_segment(self.a, self.b, [-0.5, -0.5], [w as f64 - 0.5, h as f64 - 0.5])
    }
}

// Liang-Barsky.
fn clip_segment(
    a: Vector2<f64>,
    b: Vector2<f64>,
    lo: [f64; 2],
    hi: [f64; 2],
) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        for (p, q) in [(-d[axis], a[axis] - lo[axis]), (d[axis], hi[axis] - a[axis])] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
    }
    (t0 <= t1).then(|| (a + d * t0, a + d * t1))
}

/// Distance from `q` to segment `ab` and the segment parameter of the
/// closest point.
fn segment_distance(q: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> (f64, f64) {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 == 0.0 { 0.0 } else { ((q - a).dot(&d) / len2).clamp(0.0, 1.0) };
    ((q - (a + d * t)).norm(), t)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("sigma must be > 0, got {sigma}")))
    }
}

/// Gaussian confidence map centred on `pixel`; `None` means the joint is
/// not visible and yields an all-zero map.
pub fn joint_heatmap_gt(pixel: Option<Vector2<f64>>, shape: [usize; 2], sigma: f64) -> Result<Heatmap> {
    check_sigma(sigma)?;
    let Some(p) = pixel else {
        return Ok(Heatmap::zeros(shape, ChannelKind::JointConfidence));
    };
    let k = 1.0 / (2.0 * sigma * sigma);
    Ok(Heatmap::from_fn(shape, ChannelKind::JointConfidence, |x, y| {
        (-((x - p.x).powi(2) + (y - p.y).powi(2)) * k).exp()
    }))
}

/// Confidence of lying on the visible part of `seg`, and the segment
/// parameter of the closest point (used by depth-style encodings).
fn line_field(seg: &LimbSegment2D, shape: [usize; 2], sigma: f64) -> (Heatmap, Vec<f64>) {
    let mut conf = Heatmap::zeros(shape, ChannelKind::LineConfidence);
    let mut param = vec![0.0; shape[0] * shape[1]];
    let Some((ca, cb)) = seg.visible_part(shape) else {
        return (conf, param);
    };
    let k = 1.0 / (2.0 * sigma * sigma);
    let full = seg.b - seg.a;
    let full2 = full.norm_squared();
    for row in 0..shape[0] {
        for col in 0..shape[1] {
            let q = Vector2::new(col as f64, row as f64);
            let (d, _) = segment_distance(q, ca, cb);
            let i = row * shape[1] + col;
            conf.values[i] = (-d * d * k).exp();
            if full2 > 0.0 {
                param[i] = ((q - seg.a).dot(&full) / full2).clamp(0.0, 1.0);
            }
        }
    }
    (conf, param)
}

pub fn line_confidence(seg: &LimbSegment2D, shape: [usize; 2], sigma: f64) -> Result<Heatmap> {
    check_sigma(sigma)?;
    Ok(line_field(seg, shape, sigma).0)
}

/// Perspective embedding pair `(c * sin(theta), c * cos(theta))`.
pub fn peh_gt(
    seg: &LimbSegment2D,
    theta: LimbAngle,
    shape: [usize; 2],
    sigma: f64,
) -> Result<(Heatmap, Heatmap)> {
    check_sigma(sigma)?;
    let (conf, _) = line_field(seg, shape, sigma);
    let (s, c) = theta.radians().sin_cos();
    let mut sin_h = conf.scaled(s);
    sin_h.kind = ChannelKind::PehSin;
    let mut cos_h = conf.scaled(c);
    cos_h.kind = ChannelKind::PehCos;
    Ok((sin_h, cos_h))
}

/// Two channels for one limb in one view under `encoding`. `depths` are the
/// camera distances of the two endpoints in centimetres.
pub fn encode_limb(
    encoding: PehEncoding,
    seg: &LimbSegment2D,
    theta: LimbAngle,
    depths: [f64; 2],
    shape: [usize; 2],
    sigma: f64,
) -> Result<[Heatmap; 2]> {
    check_sigma(sigma)?;
    if encoding == PehEncoding::Trig {
        let (s, c) = peh_gt(seg, theta, shape, sigma)?;
        return Ok([s, c]);
    }
    let (conf, param) = line_field(seg, shape, sigma);
    let [_, second_kind] = encoding.kinds();
    let mut second = conf.clone();
    second.kind = second_kind;
    match encoding {
        PehEncoding::Line => {}
        PehEncoding::LineDepth => {
            for (v, t) in second.values.iter_mut().zip(&param) {
                let depth = depths[0] + (depths[1] - depths[0]) * t;
                *v *= depth / 200.0 + 0.1;
            }
        }
        PehEncoding::LineAngle => {
            let s = theta.radians() / std::f64::consts::FRAC_PI_2;
            second.values.iter_mut().for_each(|v| *v *= s);
        }
        PehEncoding::Trig => unreachable!(),
    }
    Ok([conf, second])
}

/// Euclidean length of the projected limb, never below one pixel.
pub fn limb_pixel_length(seg: &LimbSegment2D) -> f64 {
    (seg.a - seg.b).norm().max(1.0)
}

/// Arg-max pixel `(x = col, y = row)` and its value; ties go to the first
/// pixel in row-major order.
pub fn decode_joint(h: &Heatmap) -> (Vector2<f64>, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &v) in h.values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    if h.values.is_empty() {
        return (Vector2::zeros(), 0.0);
    }
    let (i, v) = best;
    (Vector2::new((i % h.width) as f64, (i / h.width) as f64), v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleEstimate {
    pub theta: f64,
    pub confidence: f64,
    pub pixel: Vector2<f64>,
}

/// Angle read at the pixel where the `(sin, cos)` vector is longest.
pub fn decode_angle(sin_h: &Heatmap, cos_h: &Heatmap) -> Result<AngleEstimate> {
    if sin_h.shape() != cos_h.shape() {
        return Err(Error::Dimension(format!(
            "sin channel {:?} vs cos channel {:?}",
            sin_h.shape(),
            cos_h.shape()
        )));
    }
    decode_angle_slices(&sin_h.values, &cos_h.values, sin_h.width)
}

pub(crate) fn decode_angle_slices<T: Into<f64> + Copy>(
    sin: &[T],
    cos: &[T],
    width: usize,
) -> Result<AngleEstimate> {
    let mut best = (0usize, 0.0f64);
    for (i, (&s, &c)) in sin.iter().zip(cos).enumerate() {
        let n = s.into().hypot(c.into());
        if n > best.1 {
            best = (i, n);
        }
    }
    let (i, confidence) = best;
    if confidence == 0.0 {
        return Ok(AngleEstimate { theta: 0.0, confidence: 0.0, pixel: Vector2::zeros() });
    }
    let width = width.max(1);
    Ok(AngleEstimate {
        theta: sin[i].into().atan2(cos[i].into()),
        confidence,
        pixel: Vector2::new((i % width) as f64, (i / width) as f64),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelInfo {
    pub kind: ChannelKind,
    pub view: View,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limb: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapSidecar {
    pub format: String,
    pub dtype: String,
    /// `[channels, height, width]`.
    pub shape: [usize; 3],
    pub channels: Vec<ChannelInfo>,
}

/// Channel-major `f32` stack, the layout the networks consume.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<ChannelInfo>,
    pub data: Vec<f32>,
}

impl HeatmapStack {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, channels: Vec::new(), data: Vec::new() }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn push(&mut self, map: &Heatmap, info: ChannelInfo) -> Result<()> {
        if map.shape() != [self.height, self.width] {
            return Err(Error::Dimension(format!(
                "heatmap {:?} pushed onto {}x{} stack",
                map.shape(),
                self.height,
                self.width
            )));
        }
        self.data.extend(map.values.iter().map(|&v| v as f32));
        self.channels.push(info);
        Ok(())
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn heatmap(&self, c: usize) -> Heatmap {
        Heatmap {
            height: self.height,
            width: self.width,
            kind: self.channels[c].kind,
            values: self.channel(c).iter().map(|&v| v as f64).collect(),
        }
    }

    /// Decodes the angle carried by a `(sin, cos)` channel pair.
    pub fn decode_angle(&self, sin_c: usize, cos_c: usize) -> Result<AngleEstimate> {
        decode_angle_slices(self.channel(sin_c), self.channel(cos_c), self.width)
    }

    pub fn sidecar(&self) -> HeatmapSidecar {
        HeatmapSidecar {
            format: HEATMAP_FORMAT.into(),
            dtype: "f32le".into(),
            shape: [self.channels.len(), self.height, self.width],
            channels: self.channels.clone(),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Rebuilds a stack from its JSON sidecar and raw tensor bytes.
    pub fn decode(sidecar_json: &str, raw: &[u8]) -> Result<Self> {
        let sidecar: HeatmapSidecar = serde_json::from_str(sidecar_json)
            .map_err(|e| Error::format("heatmap sidecar", e.to_string()))?;
        Self::from_sidecar(&sidecar, raw)
    }

    pub fn from_sidecar(sidecar: &HeatmapSidecar, raw: &[u8]) -> Result<Self> {
        if sidecar.format != HEATMAP_FORMAT {
            return Err(Error::format("format", format!("unsupported `{}`", sidecar.format)));
        }
        if sidecar.dtype != "f32le" {
            return Err(Error::format("dtype", format!("unsupported `{}`", sidecar.dtype)));
        }
        let [c, h, w] = sidecar.shape;
        if c != sidecar.channels.len() {
            return Err(Error::format(
                "shape",
                format!("{c} channels declared, {} described", sidecar.channels.len()),
            ));
        }
        let data = decode_f32(raw, &[c, h, w], "heatmap tensor")?;
        Ok(Self { height: h, width: w, channels: sidecar.channels.clone(), data })
    }

    /// Writes `<stem>.f32` and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let raw = stem.with_extension("f32");
        std::fs::write(&raw, self.to_le_bytes()).map_err(|e| Error::io(&raw, e))?;
        let side = stem.with_extension("json");
        let text = serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes");
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let side = stem.with_extension("json");
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let raw_path = stem.with_extension("f32");
        let raw = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        let sidecar: HeatmapSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::format(side.display().to_string(), e.to_string()))?;
        Self::from_sidecar(&sidecar, &raw).map_err(|e| match e {
            Error::Format { field, reason } => {
                Error::format(format!("{}: {field}", raw_path.display()), reason)
            }
            other => other,
        })
    }
}

/// Little-endian `f32` tensor of exactly `shape`, all values finite.
pub fn decode_f32(raw: &[u8], shape: &[usize], field: &str) -> Result<Vec<f32>> {
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or_else(|| Error::format(field, format!("shape {shape:?} overflows")))?;
    if raw.len() != n * 4 {
        return Err(Error::format(
            field,
            format!("expected {} bytes for shape {shape:?}, found {}", n * 4, raw.len()),
        ));
    }
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(field, format!("non-finite value at element {i}")));
    }
    Ok(data)
}
