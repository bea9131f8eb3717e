//! The five network components and the bundle that wires them per variant.

use candle_core::{DType, Device, Tensor};
use ego3dpose_core::Skeleton;
use sha2::{Digest, Sha256};

use crate::config::{ModelConfig, Variant};
use crate::layers::{leaky_relu, BatchNorm, Conv2d, ConvBlock, ConvTranspose2d, DenseBlock, Linear};
use crate::params::{ParamBuilder, ParamStore};
use crate::{Error, Result};

/// Records `(layer, shape)` pairs when present.
pub type Trace<'a> = Option<&'a mut Vec<(String, Vec<usize>)>>;

fn record(trace: &mut Trace, name: &str, t: &Tensor) {
    if let Some(tr) = trace.as_deref_mut() {
        tr.push((name.to_string(), t.dims().to_vec()));
    }
}

/// Per-component seed so each component's initial weights do not depend on
/// which other components exist.
pub fn component_seed(seed: u64, name: &str) -> u64 {
    let d = Sha256::digest(name.as_bytes());
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Clone, Debug)]
struct BasicBlock {
    c1: ConvBlock,
    c2: Conv2d,
    bn2: BatchNorm,
    down: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(pb: &ParamBuilder, name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Result<Self> {
        let pb = pb.sub(name);
        let mut c1 = ConvBlock::new(&pb, "conv1", in_ch, out_ch, 3, stride, 1)?;
        c1.leaky = false;
        let down = if stride != 1 || in_ch != out_ch {
            Some((
                Conv2d::new(&pb, "down", in_ch, out_ch, 1, stride, 0, false)?,
                BatchNorm::new(&pb, "down_bn", out_ch)?,
            ))
        } else {
            None
        };
        Ok(Self {
            c1,
            c2: Conv2d::new(&pb, "conv2", out_ch, out_ch, 3, 1, 1, false)?,
            bn2: BatchNorm::new(&pb, "bn2", out_ch)?,
            down,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn2.forward(&self.c2.forward(&self.c1.forward(x, train)?)?, train)?;
        let sc = match &self.down {
            Some((c, bn)) => bn.forward(&c.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((y + sc)?.relu()?)
    }
}

/// Weight-shared residual backbone over both views, skip projections from
/// four stages, and a three-stage upsampling decoder.
#[derive(Clone, Debug)]
pub struct OpticalExtractor {
    stem: ConvBlock,
    stages: Vec<Vec<BasicBlock>>,
    skips: Vec<ConvBlock>,
    decoder: Vec<ConvBlock>,
    head: Conv2d,
    pub out_channels: usize,
    pub params: ParamStore,
}

impl OpticalExtractor {
    pub fn new(cfg: &ModelConfig, name: &str, out_channels: usize, seed: u64) -> Result<Self> {
        let pb = ParamBuilder::new(component_seed(seed, name), DType::F32).sub(name);
        let w = |c| cfg.width(c);
        let mut stem = ConvBlock::new(&pb, "stem", 3, w(64), 7, 2, 3)?;
        stem.leaky = false;
        let widths = [w(64), w(128), w(256), w(512)];
        let mut stages = Vec::new();
        let mut in_ch = w(64);
        for (i, &c) in widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let sp = pb.sub(&format!("layer{}", i + 1));
            stages.push(vec![BasicBlock::new(&sp, "0", in_ch, c, stride)?, BasicBlock::new(&sp, "1", c, c, 1)?]);
            in_ch = c;
        }
        let skips = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| ConvBlock::new(&pb, &format!("skip{}", i + 1), c, 2 * c, 1, 1, 0))
            .collect::<Result<Vec<_>>>()?;
        // Both views' skips are concatenated, hence the factor 2 on inputs.
        let d1_in = 2 * 2 * widths[3] + 2 * 2 * widths[2];
        let d1 = w(2048);
        let d2_in = d1 + 2 * 2 * widths[1];
        let d2 = w(1024);
        let d3_in = d2 + 2 * 2 * widths[0];
        let d3 = w(1024);
        let decoder = vec![
            ConvBlock::new(&pb, "d1", d1_in, d1, 3, 1, 1)?,
            ConvBlock::new(&pb, "d2", d2_in, d2, 3, 1, 1)?,
            ConvBlock::new(&pb, "d3", d3_in, d3, 3, 1, 1)?,
        ];
        let head = Conv2d::new(&pb, "head", d3, out_channels, 1, 1, 0, true)?;
        Ok(Self { stem, stages, skips, decoder, head, out_channels, params: pb.store() })
    }

    /// `(B, 3, H, W)` per view -> `(B, out_channels, H/4, W/4)`.
    pub fn forward(&self, left: &Tensor, right: &Tensor, train: bool) -> Result<Tensor> {
        self.forward_traced(left, right, train, None)
    }

    pub fn forward_traced(&self, left: &Tensor, right: &Tensor, train: bool, mut trace: Trace) -> Result<Tensor> {
        if left.dims() != right.dims() {
            return Err(Error::shape("extractor", format!("left {:?} vs right {:?}", left.dims(), right.dims())));
        }
        let (b, c, h, w) = left.dims4().map_err(|e| Error::shape("extractor", e.to_string()))?;
        if c != 3 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::shape(
                "extractor",
                format!("expects (B, 3, H, W) with H, W multiples of 32, got {:?}", left.dims()),
            ));
        }
        // One pass over both views: shared weights and shared batch statistics.
        let x = Tensor::cat(&[left, right], 0)?;
        let mut x = self.stem.forward(&x, train)?;
        record(&mut trace, "stem", &x);
        x = x.max_pool2d(2)?;
        record(&mut trace, "pool", &x);
        let mut skips = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for block in stage {
                x = block.forward(&x, train)?;
            }
            record(&mut trace, &format!("layer{}", i + 1), &x);
            let s = self.skips[i].forward(&x, train)?;
            let both = Tensor::cat(&[s.narrow(0, 0, b)?, s.narrow(0, b, b)?], 1)?;
            record(&mut trace, &format!("skip{}", i + 1), &both);
            skips.push(both);
        }
        let mut y = skips[3].clone();
        for (k, skip) in [&skips[2], &skips[1], &skips[0]].into_iter().enumerate() {
            let (_, _, sh, sw) = skip.dims4()?;
            let up = y.upsample_nearest2d(sh, sw)?;
            let cat = Tensor::cat(&[&up, skip], 1)?;
            record(&mut trace, &format!("d{}_in", k + 1), &cat);
            y = self.decoder[k].forward(&cat, train)?;
            record(&mut trace, &format!("d{}", k + 1), &y);
        }
        let out = self.head.forward(&y)?;
        record(&mut trace, "head", &out);
        Ok(out)
    }
}

/// Three stride-2 convolutions, flatten, then dense layers.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    pub name: String,
    convs: Vec<ConvBlock>,
    fcs: Vec<DenseBlock>,
    out: DenseBlock,
    in_channels: usize,
    in_size: usize,
    pub flat_dim: usize,
}

impl ConvEncoder {
    pub fn new(
        pb: &ParamBuilder,
        name: &str,
        in_channels: usize,
        in_size: usize,
        conv: [usize; 3],
        fc: [usize; 2],
        out_dim: usize,
    ) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c = in_channels;
        for (i, &o) in conv.iter().enumerate() {
            convs.push(ConvBlock::new(pb, &format!("conv{}", i + 1), c, o, 4, 2, 1)?);
            c = o;
        }
        let flat_dim = conv[2] * (in_size / 8) * (in_size / 8);
        let fcs = vec![DenseBlock::new(pb, "fc1", flat_dim, fc[0])?, DenseBlock::new(pb, "fc2", fc[0], fc[1])?];
        let out = DenseBlock::new(pb, "out", fc[1], out_dim)?;
        Ok(Self { name: name.into(), convs, fcs, out, in_channels, in_size, flat_dim })
    }

    pub fn forward(&self, x: &Tensor, train: bool, mut trace: Trace) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4().map_err(|e| Error::shape(&self.name, e.to_string()))?;
        if c != self.in_channels || h != self.in_size || w != self.in_size {
            return Err(Error::shape(
                &self.name,
                format!(
                    "expects (B, {}, {s}, {s}), got {:?}",
                    self.in_channels,
                    x.dims(),
                    s = self.in_size
                ),
            ));
        }
        let mut y = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(&y, train)?;
            record(&mut trace, &format!("{}.conv{}", self.name, i + 1), &y);
        }
        let mut y = y.flatten_from(1)?;
        record(&mut trace, &format!("{}.flatten", self.name), &y);
        for fc in &self.fcs {
            y = fc.forward(&y, train)?;
        }
        let y = self.out.forward(&y, train)?;
        record(&mut trace, &format!("{}.out", self.name), &y);
        Ok(y)
    }
}

/// Heatmap stack -> pose feature vector.
#[derive(Clone, Debug)]
pub struct HeatmapEncoder {
    pub net: ConvEncoder,
    pub params: ParamStore,
}

impl HeatmapEncoder {
    pub fn new(cfg: &ModelConfig, in_channels: usize, seed: u64) -> Result<Self> {
        let name = "heatmap_encoder";
        let pb = ParamBuilder::new(component_seed(seed, name), DType::F32).sub(name);
        let net = ConvEncoder::new(
            &pb,
            name,
            in_channels,
            cfg.heatmap_size,
            cfg.encoder_conv_channels,
            cfg.encoder_fc,
            cfg.pose_feature_dim,
        )?;
        Ok(Self { net, params: pb.store() })
    }

    pub fn forward(&self, x: &Tensor, train: bool, trace: Trace) -> Result<Tensor> {
        self.net.forward(x, train, trace)
    }
}

/// One limb's four heatmaps -> that limb's 3D orientation. A single weight
/// set serves every limb: limbs are folded into the batch axis.
#[derive(Clone, Debug)]
pub struct StereoMatcher {
    pub encoder: ConvEncoder,
    hidden: Vec<DenseBlock>,
    out: Linear,
    pub params: ParamStore,
}

impl StereoMatcher {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let name = "stereo_matcher";
        let pb = ParamBuilder::new(component_seed(seed, name), DType::F32).sub(name);
        let encoder = ConvEncoder::new(
            &pb,
            "stereo_matcher",
            4,
            cfg.heatmap_size,
            cfg.sm_conv_channels,
            cfg.sm_fc,
            cfg.sm_embedding_dim,
        )?;
        let hidden = vec![
            DenseBlock::new(&pb, "dec1", cfg.sm_embedding_dim, cfg.decoder_hidden)?,
            DenseBlock::new(&pb, "dec2", cfg.decoder_hidden, cfg.decoder_hidden)?,
        ];
        let out = Linear::new(&pb, "dec_out", cfg.decoder_hidden, 3)?;
        Ok(Self { encoder, hidden, out, params: pb.store() })
    }

    /// `(N, 4, h, w)` -> `(N, 3)`.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = self.encoder.forward(x, train, None)?;
        for h in &self.hidden {
            y = h.forward(&y, train)?;
        }
        self.out.forward(&y)
    }

    /// `(B, L, 4, h, w)` -> `(B, L, 3)`.
    pub fn forward_limbs(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, l, c, h, w) = x.dims5().map_err(|e| Error::shape("stereo_matcher", e.to_string()))?;
        if c != 4 {
            return Err(Error::shape("stereo_matcher", format!("expects 4 channels per limb, got {c}")));
        }
        Ok(self.forward(&x.reshape((b * l, c, h, w))?, train)?.reshape((b, l, 3))?)
    }
}

/// Pose features (and limb orientations) -> joint positions.
#[derive(Clone, Debug)]
pub struct PoseDecoder {
    hidden: Vec<DenseBlock>,
    out: Linear,
    pub in_dim: usize,
    n_joints: usize,
    scale: f64,
    pub params: ParamStore,
}

impl PoseDecoder {
    pub fn new(cfg: &ModelConfig, in_dim: usize, seed: u64) -> Result<Self> {
        let name = "pose_decoder";
        let pb = ParamBuilder::new(component_seed(seed, name), DType::F32).sub(name);
        let hidden = vec![
            DenseBlock::new(&pb, "fc1", in_dim, cfg.decoder_hidden)?,
            DenseBlock::new(&pb, "fc2", cfg.decoder_hidden, cfg.decoder_hidden)?,
        ];
        let out = Linear::new(&pb, "out", cfg.decoder_hidden, cfg.n_pose_joints * 3)?;
        Ok(Self { hidden, out, in_dim, n_joints: cfg.n_pose_joints, scale: cfg.pose_scale, params: pb.store() })
    }

    /// `(B, in_dim)` -> `(B, n_pose_joints, 3)`.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, d) = x.dims2().map_err(|e| Error::shape("pose_decoder", e.to_string()))?;
        if d != self.in_dim {
            return Err(Error::shape("pose_decoder", format!("expects {} inputs, got {d}", self.in_dim)));
        }
        let mut y = x.clone();
        for h in &self.hidden {
            y = h.forward(&y, train)?;
        }
        Ok((self.out.forward(&y)? * self.scale)?.reshape((b, self.n_joints, 3))?)
    }
}

/// Pose features -> the heatmap stack the encoder consumed.
#[derive(Clone, Debug)]
pub struct HeatmapReconstructor {
    fcs: Vec<DenseBlock>,
    deconvs: Vec<(ConvTranspose2d, BatchNorm)>,
    last: ConvTranspose2d,
    grid: [usize; 3],
    in_dim: usize,
    pub params: ParamStore,
}

impl HeatmapReconstructor {
    pub fn new(cfg: &ModelConfig, out_channels: usize, seed: u64) -> Result<Self> {
        let name = "heatmap_reconstructor";
        let pb = ParamBuilder::new(component_seed(seed, name), DType::F32).sub(name);
        let [c1, c2, c3] = cfg.encoder_conv_channels;
        let s = cfg.heatmap_size / 8;
        let flat = c3 * s * s;
        let fcs = vec![
            DenseBlock::new(&pb, "fc1", cfg.pose_feature_dim, cfg.reconstructor_fc[0])?,
            DenseBlock::new(&pb, "fc2", cfg.reconstructor_fc[0], cfg.reconstructor_fc[1])?,
            DenseBlock::new(&pb, "fc3", cfg.reconstructor_fc[1], flat)?,
        ];
        let deconvs = vec![
            (ConvTranspose2d::new(&pb, "deconv1", c3, c2, 4, 2, 1)?, BatchNorm::new(&pb, "bn1", c2)?),
            (ConvTranspose2d::new(&pb, "deconv2", c2, c1, 4, 2, 1)?, BatchNorm::new(&pb, "bn2", c1)?),
        ];
        let last = ConvTranspose2d::new(&pb, "deconv3", c1, out_channels, 4, 2, 1)?;
        Ok(Self { fcs, deconvs, last, grid: [c3, s, s], in_dim: cfg.pose_feature_dim, params: pb.store() })
    }

    pub fn forward(&self, x: &Tensor, train: bool, mut trace: Trace) -> Result<Tensor> {
        let (b, d) = x.dims2().map_err(|e| Error::shape("heatmap_reconstructor", e.to_string()))?;
        if d != self.in_dim {
            return Err(Error::shape("heatmap_reconstructor", format!("expects {} inputs, got {d}", self.in_dim)));
        }
        let mut y = x.clone();
        for fc in &self.fcs {
            y = fc.forward(&y, train)?;
        }
        record(&mut trace, "heatmap_reconstructor.fc3", &y);
        let [c, h, w] = self.grid;
        let mut y = y.reshape((b, c, h, w))?;
        for (i, (dc, bn)) in self.deconvs.iter().enumerate() {
            y = leaky_relu(&bn.forward(&dc.forward(&y)?, train)?)?;
            record(&mut trace, &format!("heatmap_reconstructor.deconv{}", i + 1), &y);
        }
        let y = self.last.forward(&y)?;
        record(&mut trace, "heatmap_reconstructor.deconv3", &y);
        Ok(y)
    }
}

/// Outputs of the 3D part of the network for one batch.
#[derive(Clone, Debug)]
pub struct Stage2Output {
    pub features: Tensor,
    /// `(B, L, 3)`; still attached to the stereo matcher's graph.
    pub orientations: Option<Tensor>,
    /// `(B, n_pose_joints, 3)`, cm.
    pub pose: Tensor,
    pub recon: Tensor,
}

#[derive(Clone, Debug)]
pub struct NetBundle {
    pub config: ModelConfig,
    pub variant: Variant,
    pub jh_extractor: OpticalExtractor,
    pub peh_extractor: Option<OpticalExtractor>,
    pub heatmap_encoder: HeatmapEncoder,
    pub stereo_matcher: Option<StereoMatcher>,
    pub pose_decoder: PoseDecoder,
    pub heatmap_reconstructor: HeatmapReconstructor,
    /// Joint-heatmap channels feeding the matcher when no limb heatmaps
    /// exist: `(L_parent, L_child, R_parent, R_child)` per limb.
    sm_jh_index: Tensor,
}

impl NetBundle {
    pub fn new(config: &ModelConfig, variant: Variant, skeleton: &Skeleton, seed: u64) -> Result<Self> {
        config.validate()?;
        if skeleton.estimated_joints.len() != config.n_joints
            || skeleton.peh_limbs.len() != config.n_peh_limbs
            || skeleton.n_joints() != config.n_pose_joints
        {
            return Err(Error::Config(format!(
                "skeleton `{}` has {} joints / {} estimated / {} limbs; model expects {} / {} / {}",
                skeleton.name,
                skeleton.n_joints(),
                skeleton.estimated_joints.len(),
                skeleton.peh_limbs.len(),
                config.n_pose_joints,
                config.n_joints,
                config.n_peh_limbs
            )));
        }
        let mut idx = Vec::with_capacity(4 * config.n_peh_limbs);
        let n = config.n_joints as u32;
        for l in &skeleton.peh_limbs {
            let pos = |j: usize| {
                skeleton
                    .estimated_joints
                    .iter()
                    .position(|&e| e == j)
                    .map(|p| p as u32)
                    .ok_or_else(|| Error::Config(format!("limb joint {j} has no heatmap")))
            };
            let (p, c) = (pos(l.parent)?, pos(l.child)?);
            idx.extend([p, c, n + p, n + c]);
        }
        let enc_in = if variant.uses_peh() { config.total_heatmap_channels() } else { config.jh_channels() };
        let dec_in = config.pose_feature_dim + if variant.uses_sm() { 3 * config.n_peh_limbs } else { 0 };
        Ok(Self {
            config: config.clone(),
            variant,
            jh_extractor: OpticalExtractor::new(config, "jh_extractor", config.jh_channels(), seed)?,
            peh_extractor: if variant.uses_peh() {
                Some(OpticalExtractor::new(config, "peh_extractor", config.peh_channels(), seed)?)
            } else {
                None
            },
            heatmap_encoder: HeatmapEncoder::new(config, enc_in, seed)?,
            stereo_matcher: if variant.uses_sm() { Some(StereoMatcher::new(config, seed)?) } else { None },
            pose_decoder: PoseDecoder::new(config, dec_in, seed)?,
            heatmap_reconstructor: HeatmapReconstructor::new(config, enc_in, seed)?,
            sm_jh_index: Tensor::from_vec(idx, 4 * config.n_peh_limbs, &Device::Cpu)?,
        })
    }

    pub fn extractor_params(&self) -> ParamStore {
        let mut s = self.jh_extractor.params.clone();
        if let Some(p) = &self.peh_extractor {
            s.extend(p.params.clone());
        }
        s
    }

    pub fn stage2_params(&self) -> ParamStore {
        let mut s = self.heatmap_encoder.params.clone();
        if let Some(sm) = &self.stereo_matcher {
            s.extend(sm.params.clone());
        }
        s.extend(self.pose_decoder.params.clone());
        s.extend(self.heatmap_reconstructor.params.clone());
        s
    }

    pub fn params(&self) -> ParamStore {
        let mut s = self.extractor_params();
        s.extend(self.stage2_params());
        s
    }

    /// Estimated joint heatmaps and, when the variant uses them, limb heatmaps.
    pub fn extract(&self, left: &Tensor, right: &Tensor, train: bool) -> Result<(Tensor, Option<Tensor>)> {
        let jh = self.jh_extractor.forward(left, right, train)?;
        let peh = match &self.peh_extractor {
            Some(e) => Some(e.forward(left, right, train)?),
            None => None,
        };
        Ok((jh, peh))
    }

    /// The stack the heatmap encoder reads (and the reconstructor rebuilds).
    pub fn encoder_input(&self, jh: &Tensor, peh: Option<&Tensor>) -> Result<Tensor> {
        match (self.variant.uses_peh(), peh) {
            (true, Some(p)) => Ok(Tensor::cat(&[jh, p], 1)?),
            (true, None) => Err(Error::shape("heatmap_encoder", format!("variant {} needs limb heatmaps", self.variant))),
            (false, _) => Ok(jh.clone()),
        }
    }

    /// `(B, L, 4, h, w)` matcher input for the variant.
    pub fn matcher_input(&self, jh: &Tensor, peh: Option<&Tensor>) -> Result<Tensor> {
        let (b, _, h, w) = jh.dims4()?;
        let l = self.config.n_peh_limbs;
        let src = if self.variant.uses_peh() {
            peh.ok_or_else(|| Error::shape("stereo_matcher", "limb heatmaps missing"))?.clone()
        } else {
            jh.index_select(&self.sm_jh_index, 1)?
        };
        Ok(src.reshape((b, l, 4, h, w))?)
    }

    /// Heatmaps (already estimated, treated as constants) -> pose. The
    /// matcher's orientations are detached before they reach the decoder.
    pub fn forward_stage2(&self, jh: &Tensor, peh: Option<&Tensor>, train: bool) -> Result<Stage2Output> {
        self.forward_stage2_traced(jh, peh, train, None)
    }

    pub fn forward_stage2_traced(
        &self,
        jh: &Tensor,
        peh: Option<&Tensor>,
        train: bool,
        mut trace: Trace,
    ) -> Result<Stage2Output> {
        let input = self.encoder_input(jh, peh)?;
        record(&mut trace, "encoder_input", &input);
        let features = self.heatmap_encoder.forward(&input, train, trace.as_deref_mut())?;
        let b = features.dim(0)?;
        let orientations = match &self.stereo_matcher {
            Some(sm) => Some(sm.forward_limbs(&self.matcher_input(jh, peh)?, train)?),
            None => None,
        };
        let dec_in = match &orientations {
            Some(o) => Tensor::cat(&[&features, &o.detach().reshape((b, ()))?], 1)?,
            None => features.clone(),
        };
        record(&mut trace, "decoder_input", &dec_in);
        let pose = self.pose_decoder.forward(&dec_in, train)?;
        record(&mut trace, "pose", &pose);
        let recon = self.heatmap_reconstructor.forward(&features, train, trace)?;
        Ok(Stage2Output { features, orientations, pose, recon })
    }
}
