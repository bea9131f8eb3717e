//! Synthetic stereo samples and their on-disk layout.
//!
//! A dataset directory holds `manifest.json` and one folder per sample under
//! `samples/`:
//!
//! | file | contents |
//! |---|---|
//! | `left.f32`, `right.f32` | `H x W x 3` images, little-endian `f32`, values in `[0, 1]` |
//! | `jh.f32` + `jh.json` | joint heatmaps, `[Left joints.., Right joints..]` |
//! | `peh.f32` + `peh.json` | limb heatmaps, `(sin_L, cos_L, sin_R, cos_R)` per limb |
//! | `pose.f64` | local pose, `joints x 3`, cm |
//! | `pelvis.f64` | pelvis in the left camera frame, cm |
//! | `orientations.f64` | unit limb vectors, `limbs x 3` |
//! | `angles.f64` | limb-view angles, radians |
//! | `limb_lengths.f64` | projected limb lengths in heatmap pixels, clamped at 1 |

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{FisheyeCamera, FisheyeStereoRig, View};
use crate::geometry::{limb_orientation, limb_relative, limb_view_angle, LocalPose};
use crate::heatmap::{
    decode_f32, default_sigma, encode_limb, joint_heatmap_gt, ChannelInfo,
    ChannelKind, HeatmapStack, LimbSegment2D, PehEncoding,
};
use crate::render::{limb_color, render_stereo, Capsule, RgbImage};
use crate::sampler::PoseSampler;
use crate::skeleton::Skeleton;
use crate::{Error, Result};

pub const DATASET_FORMAT: &str = "ego3dpose-dataset-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub image_size: usize,
    pub heatmap_size: usize,
    /// Heatmap Gaussian width in heatmap pixels; `None` uses the resolution default.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Full field of view, radians.
    pub fov: f64,
    /// Stereo baseline, cm.
    pub baseline: f64,
    #[serde(default)]
    pub peh_encoding: PehEncoding,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampler: PoseSampler,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            heatmap_size: 16,
            sigma: None,
            fov: std::f64::consts::PI,
            baseline: 12.0,
            peh_encoding: PehEncoding::Trig,
            n_train: 2000,
            n_test: 200,
            seed: 0,
            sampler: PoseSampler::default(),
        }
    }
}

impl DatasetConfig {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| default_sigma(self.heatmap_size))
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.heatmap_size == 0 || self.heatmap_size > self.image_size {
            return Err(Error::Parameter(format!(
                "need 0 < heatmap_size <= image_size, got {} and {}",
                self.heatmap_size, self.image_size
            )));
        }
        if !(self.sigma().is_finite() && self.sigma() > 0.0) {
            return Err(Error::Parameter(format!("sigma must be > 0, got {}", self.sigma())));
        }
        if !(self.fov > 0.0 && self.fov <= 2.0 * std::f64::consts::PI) {
            return Err(Error::Parameter(format!("fov must be in (0, 2pi], got {}", self.fov)));
        }
        self.sampler.validate()?;
        self.rig()?;
        Ok(())
    }

    /// Rig at image resolution.
    pub fn rig(&self) -> Result<FisheyeStereoRig> {
        FisheyeStereoRig::symmetric(FisheyeCamera::covering(self.image_size, self.fov), self.baseline)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub category: String,
    pub left: RgbImage,
    pub right: RgbImage,
    pub local_pose: LocalPose,
    pub pelvis_cam: Vector3<f64>,
    pub jh: HeatmapStack,
    pub peh: HeatmapStack,
    /// Over `skeleton.peh_limbs`.
    pub orientations: Vec<Vector3<f64>>,
    pub angles: Vec<f64>,
    pub limb_lengths: Vec<f64>,
}

/// Everything needed to synthesise samples for one configuration.
#[derive(Clone, Debug)]
pub struct SampleFactory {
    pub config: DatasetConfig,
    pub skeleton: Skeleton,
    pub rig: FisheyeStereoRig,
    pub heatmap_rig: FisheyeStereoRig,
    limb_radius: Vec<f64>,
}

impl SampleFactory {
    pub fn new(config: DatasetConfig, skeleton: Skeleton) -> Result<Self> {
        config.validate()?;
        skeleton.validate()?;
        let rig = config.rig()?;
        let heatmap_rig = rig.rescaled(config.heatmap_size as f64 / config.image_size as f64);
        let limb_radius = skeleton
            .all_limbs
            .iter()
            .map(|&l| config.sampler.limb_radius(&skeleton, l))
            .collect();
        Ok(Self { config, skeleton, rig, heatmap_rig, limb_radius })
    }

    /// Sample `index` of `split`; each index has its own random stream.
    pub fn make(&self, split: Split, index: usize) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream((split.stream() << 40) | index as u64);
        self.make_sample(&mut rng)
    }

    pub fn make_sample(&self, rng: &mut ChaCha8Rng) -> Result<Sample> {
        let sk = &self.skeleton;
        let drawn = self.config.sampler.sample(sk, &self.rig, rng)?;
        let cam = drawn.joints_cam();

        // The head-neck limb sits behind a head-mounted rig and is not drawn.
        let n = sk.all_limbs.len();
        let capsules: Vec<Capsule> = sk
            .all_limbs
            .iter()
            .enumerate()
            .filter(|(_, l)| sk.peh_limbs.contains(l))
            .map(|(i, l)| Capsule {
                a: cam[l.parent],
                b: cam[l.child],
                radius: self.limb_radius[i],
                color: limb_color(i, n),
            })
            .collect();
        let (left, right) = render_stereo(&capsules, &self.rig);

        let hs = self.config.heatmap_size;
        let shape = [hs, hs];
        let sigma = self.config.sigma();
        let mut jh = HeatmapStack::new(hs, hs);
        for view in View::BOTH {
            for &j in &sk.estimated_joints {
                let p = self.heatmap_rig.project(view, &cam[j])?;
                let map = joint_heatmap_gt(p.visible.then_some(p.pixel), shape, sigma)?;
                jh.push(&map, ChannelInfo { kind: ChannelKind::JointConfidence, view, joint: Some(j), limb: None })?;
            }
        }

        let enc = self.config.peh_encoding;
        let kinds = enc.kinds();
        let mut peh = HeatmapStack::new(hs, hs);
        let mut orientations = Vec::with_capacity(sk.peh_limbs.len());
        let mut angles = Vec::with_capacity(sk.peh_limbs.len());
        let mut limb_lengths = Vec::with_capacity(sk.peh_limbs.len());
        for &limb in &sk.peh_limbs {
            let rel = limb_relative(&drawn.local, limb)?;
            let theta = limb_view_angle(&rel)?;
            orientations.push(*limb_orientation(&rel)?.vector());
            angles.push(theta.radians());
            let mut raw_len = 0.0;
            for view in View::BOTH {
                let pa = self.heatmap_rig.project(view, &cam[limb.parent])?;
                let pb = self.heatmap_rig.project(view, &cam[limb.child])?;
                let seg = LimbSegment2D { a: pa.pixel, b: pb.pixel, a_visible: pa.visible, b_visible: pb.visible };
                raw_len += (seg.a - seg.b).norm() / 2.0;
                let depths = [
                    self.heatmap_rig.to_view(view, &cam[limb.parent]).norm(),
                    self.heatmap_rig.to_view(view, &cam[limb.child]).norm(),
                ];
                let maps = encode_limb(enc, &seg, theta, depths, shape, sigma)?;
                for (map, kind) in maps.iter().zip(kinds) {
                    peh.push(map, ChannelInfo { kind, view, joint: None, limb: Some([limb.parent, limb.child]) })?;
                }
            }
            // Mean of the two views' pixel lengths, clamped like a single view.
            limb_lengths.push(raw_len.max(1.0));
        }

        Ok(Sample {
            category: drawn.category,
            left,
            right,
            local_pose: drawn.local,
            pelvis_cam: drawn.pelvis_cam,
            jh,
            peh,
            orientations,
            angles,
            limb_lengths,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub dir: String,
    pub split: Split,
    pub category: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: DatasetConfig,
    pub skeleton: Skeleton,
    pub rig: FisheyeStereoRig,
    pub heatmap_rig: FisheyeStereoRig,
    pub n_train: usize,
    pub n_test: usize,
    pub samples: Vec<SampleEntry>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != DATASET_FORMAT {
            return Err(Error::format("format", format!("unsupported `{}`", self.format)));
        }
        self.skeleton.validate().map_err(|e| Error::format("skeleton", e.to_string()))?;
        self.rig.validate().map_err(|e| Error::format("rig", e.to_string()))?;
        let count = |s| self.samples.iter().filter(|e| e.split == s).count();
        if count(Split::Train) != self.n_train || count(Split::Test) != self.n_test {
            return Err(Error::format(
                "samples",
                format!(
                    "lists {} train / {} test, header says {} / {}",
                    count(Split::Train),
                    count(Split::Test),
                    self.n_train,
                    self.n_test
                ),
            ));
        }
        for e in &self.samples {
            if e.dir.is_empty() || e.dir.contains("..") || Path::new(&e.dir).is_absolute() {
                return Err(Error::format("samples.dir", format!("`{}` is not a relative sample path", e.dir)));
            }
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Same order as `manifest.samples`.
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Generates the full dataset in memory.
    pub fn generate(config: DatasetConfig, skeleton: Skeleton) -> Result<Self> {
        let factory = SampleFactory::new(config, skeleton)?;
        let mut samples = Vec::new();
        let mut entries = Vec::new();
        for (split, n) in [(Split::Train, factory.config.n_train), (Split::Test, factory.config.n_test)] {
            for i in 0..n {
                let s = factory.make(split, i)?;
                entries.push(SampleEntry {
                    dir: format!("samples/{}{:06}", split_prefix(split), i),
                    split,
                    category: s.category.clone(),
                });
                samples.push(s);
            }
        }
        let manifest = Manifest {
            format: DATASET_FORMAT.into(),
            n_train: factory.config.n_train,
            n_test: factory.config.n_test,
            config: factory.config,
            skeleton: factory.skeleton,
            rig: factory.rig,
            heatmap_rig: factory.heatmap_rig,
            samples: entries,
        };
        Ok(Self { manifest, samples })
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.manifest.indices(split).into_iter().map(|i| &self.samples[i]).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (entry, sample) in self.manifest.samples.iter().zip(&self.samples) {
            write_sample(&dir.join(&entry.dir), sample)?;
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let reader = DatasetReader::open(dir)?;
        let manifest = reader.manifest.clone();
        let samples = reader.collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, samples })
    }
}

fn split_prefix(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::from_json(&text)
}

/// Reads one sample directory (`<dataset>/samples/<name>`) together with
/// its dataset's manifest.
pub fn read_sample_dir(sample_dir: &Path) -> Result<(Manifest, Sample)> {
    let name = sample_dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::format(sample_dir.display().to_string(), "not a sample directory"))?;
    let root = sample_dir
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| Error::format(sample_dir.display().to_string(), "expected <dataset>/samples/<name>"))?;
    let manifest = read_manifest(root)?;
    let rel = format!("samples/{name}");
    let entry = manifest
        .samples
        .iter()
        .find(|e| e.dir == rel)
        .ok_or_else(|| Error::format(sample_dir.display().to_string(), "not listed in the dataset manifest"))?
        .clone();
    let sample = read_sample(sample_dir, &manifest, &entry)?;
    Ok((manifest, sample))
}

/// Streams samples from disk in manifest order.
pub struct DatasetReader {
    pub manifest: Manifest,
    root: PathBuf,
    next: usize,
}

impl DatasetReader {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self { manifest: read_manifest(dir)?, root: dir.to_path_buf(), next: 0 })
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        let entry = self.manifest.samples.get(self.next)?;
        self.next += 1;
        Some(read_sample(&self.root.join(&entry.dir), &self.manifest, entry))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.manifest.samples.len() - self.next;
        (left, Some(left))
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn f64_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn vec3_bytes(v: &[Vector3<f64>]) -> Vec<u8> {
    f64_bytes(v.iter().flat_map(|p| [p.x, p.y, p.z]))
}

fn write_sample(dir: &Path, s: &Sample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let img = |i: &RgbImage| i.data.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
    write_bytes(&dir.join("left.f32"), &img(&s.left))?;
    write_bytes(&dir.join("right.f32"), &img(&s.right))?;
    s.jh.write(&dir.join("jh"))?;
    s.peh.write(&dir.join("peh"))?;
    write_bytes(&dir.join("pose.f64"), &vec3_bytes(&s.local_pose.joints))?;
    write_bytes(&dir.join("pelvis.f64"), &vec3_bytes(&[s.pelvis_cam]))?;
    write_bytes(&dir.join("orientations.f64"), &vec3_bytes(&s.orientations))?;
    write_bytes(&dir.join("angles.f64"), &f64_bytes(s.angles.iter().copied()))?;
    write_bytes(&dir.join("limb_lengths.f64"), &f64_bytes(s.limb_lengths.iter().copied()))
}

/// Little-endian `f64` tensor of exactly `len` finite values.
pub fn decode_f64(raw: &[u8], len: usize, field: &str) -> Result<Vec<f64>> {
    if raw.len() != len * 8 {
        return Err(Error::format(field, format!("expected {} bytes, found {}", len * 8, raw.len())));
    }
    let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::format(field, format!("non-finite value at {i}")));
    }
    Ok(v)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_f64(dir: &Path, name: &str, len: usize) -> Result<Vec<f64>> {
    let path = dir.join(name);
    decode_f64(&read_file(&path)?, len, &path.display().to_string())
}

fn read_vec3(dir: &Path, name: &str, n: usize) -> Result<Vec<Vector3<f64>>> {
    Ok(read_f64(dir, name, n * 3)?
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect())
}

fn read_sample(dir: &Path, m: &Manifest, entry: &SampleEntry) -> Result<Sample> {
    let size = m.config.image_size;
    let image = |name: &str| -> Result<RgbImage> {
        let path = dir.join(name);
        let data = decode_f32(&read_file(&path)?, &[size, size, 3], &path.display().to_string())?;
        Ok(RgbImage { width: size, height: size, data })
    };
    let sk = &m.skeleton;
    let n_limbs = sk.peh_limbs.len();
    let hs = m.config.heatmap_size;
    let jh = HeatmapStack::read(&dir.join("jh"))?;
    let peh = HeatmapStack::read(&dir.join("peh"))?;
    for (name, stack, want) in [("jh", &jh, 2 * sk.estimated_joints.len()), ("peh", &peh, 4 * n_limbs)] {
        if stack.n_channels() != want || stack.height != hs || stack.width != hs {
            return Err(Error::format(
                format!("{}: {name}", dir.display()),
                format!(
                    "expected {want}x{hs}x{hs}, found {}x{}x{}",
                    stack.n_channels(),
                    stack.height,
                    stack.width
                ),
            ));
        }
    }
    Ok(Sample {
        category: entry.category.clone(),
        left: image("left.f32")?,
        right: image("right.f32")?,
        local_pose: LocalPose::new(read_vec3(dir, "pose.f64", sk.n_joints())?),
        pelvis_cam: read_vec3(dir, "pelvis.f64", 1)?[0],
        jh,
        peh,
        orientations: read_vec3(dir, "orientations.f64", n_limbs)?,
        angles: read_f64(dir, "angles.f64", n_limbs)?,
        limb_lengths: read_f64(dir, "limb_lengths.f64", n_limbs)?,
    })
}
