//! Model, training and run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ego3dpose_core::dataset::DatasetConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub heatmap_size: usize,
    /// Joints with heatmaps (and scored by evaluation).
    pub n_joints: usize,
    /// Joints emitted by the pose decoder.
    pub n_pose_joints: usize,
    pub n_peh_limbs: usize,
    pub pose_feature_dim: usize,
    pub sm_embedding_dim: usize,
    pub decoder_hidden: usize,
    pub encoder_conv_channels: [usize; 3],
    pub encoder_fc: [usize; 2],
    pub reconstructor_fc: [usize; 2],
    pub sm_conv_channels: [usize; 3],
    pub sm_fc: [usize; 2],
    /// Channel multiplier for the residual backbone and its decoder.
    pub backbone_width: f64,
    #[serde(default)]
    pub pretrained_backbone: bool,
    /// Centimetres per unit of the pose decoder's raw output.
    #[serde(default = "default_pose_scale")]
    pub pose_scale: f64,
}

fn default_pose_scale() -> f64 {
    10.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// 256x256 images, 64x64 heatmaps, full widths.
    pub fn full() -> Self {
        Self {
            image_size: 256,
            heatmap_size: 64,
            n_joints: 15,
            n_pose_joints: 16,
            n_peh_limbs: 14,
            pose_feature_dim: 20,
            sm_embedding_dim: 10,
            decoder_hidden: 32,
            encoder_conv_channels: [64, 128, 256],
            encoder_fc: [2048, 512],
            reconstructor_fc: [512, 2048],
            sm_conv_channels: [64, 128, 256],
            sm_fc: [2048, 512],
            backbone_width: 1.0,
            pretrained_backbone: false,
            pose_scale: default_pose_scale(),
        }
    }

    /// 64x64 images, 16x16 heatmaps, narrow layers: fits a single CPU core.
    pub fn toy() -> Self {
        Self {
            image_size: 64,
            heatmap_size: 16,
            encoder_conv_channels: [32, 64, 128],
            encoder_fc: [256, 128],
            reconstructor_fc: [128, 256],
            sm_conv_channels: [8, 16, 32],
            sm_fc: [64, 32],
            backbone_width: 0.0625,
            ..Self::full()
        }
    }

    pub fn jh_channels(&self) -> usize {
        2 * self.n_joints
    }

    pub fn peh_channels(&self) -> usize {
        4 * self.n_peh_limbs
    }

    pub fn total_heatmap_channels(&self) -> usize {
        self.jh_channels() + self.peh_channels()
    }

    /// Backbone channel count after the width multiplier (never below 1).
    pub fn width(&self, base: usize) -> usize {
        ((base as f64 * self.backbone_width).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("heatmap_size", self.heatmap_size),
            ("n_joints", self.n_joints),
            ("n_pose_joints", self.n_pose_joints),
            ("n_peh_limbs", self.n_peh_limbs),
            ("pose_feature_dim", self.pose_feature_dim),
            ("sm_embedding_dim", self.sm_embedding_dim),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        let lists = [
            ("encoder_conv_channels", &self.encoder_conv_channels[..]),
            ("encoder_fc", &self.encoder_fc[..]),
            ("reconstructor_fc", &self.reconstructor_fc[..]),
            ("sm_conv_channels", &self.sm_conv_channels[..]),
            ("sm_fc", &self.sm_fc[..]),
        ];
        for (name, v) in lists {
            if v.contains(&0) {
                return Err(Error::Config(format!("{name} entries must be > 0")));
            }
        }
        if self.heatmap_size % 8 != 0 {
            return Err(Error::Config(format!(
                "heatmap_size {} must be a multiple of 8 (three stride-2 convolutions)",
                self.heatmap_size
            )));
        }
        if self.image_size != 4 * self.heatmap_size {
            return Err(Error::Config(format!(
                "the extractor emits heatmaps at 1/4 of the image size: image_size {} needs heatmap_size {}",
                self.image_size,
                self.image_size / 4
            )));
        }
        if self.n_pose_joints < self.n_joints {
            return Err(Error::Config("n_pose_joints must be >= n_joints".into()));
        }
        if !(self.backbone_width.is_finite() && self.backbone_width > 0.0) {
            return Err(Error::Config(format!("backbone_width must be > 0, got {}", self.backbone_width)));
        }
        if !(self.pose_scale.is_finite() && self.pose_scale > 0.0) {
            return Err(Error::Config(format!("pose_scale must be > 0, got {}", self.pose_scale)));
        }
        if self.pretrained_backbone {
            return Err(Error::Config(
                "pretrained_backbone: no pretrained weights ship with this crate; train from scratch".into(),
            ));
        }
        Ok(())
    }
}

/// Ablation variants: which of the perspective heatmaps (PH) and the stereo
/// matcher (SM) are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "B")]
    Baseline,
    #[serde(rename = "B+PH")]
    Ph,
    #[serde(rename = "B+SM")]
    Sm,
    #[serde(rename = "B+PH+SM")]
    PhSm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Ph, Variant::Sm, Variant::PhSm];

    pub fn uses_peh(self) -> bool {
        matches!(self, Variant::Ph | Variant::PhSm)
    }

    pub fn uses_sm(self) -> bool {
        matches!(self, Variant::Sm | Variant::PhSm)
    }

    /// File-name friendly id, e.g. `b_ph_sm`.
    pub fn slug(self) -> String {
        self.id().to_ascii_lowercase().replace('+', "_")
    }

    pub fn id(self) -> &'static str {
        match self {
            Variant::Baseline => "B",
            Variant::Ph => "B+PH",
            Variant::Sm => "B+SM",
            Variant::PhSm => "B+PH+SM",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub jh: f64,
    pub ph: f64,
    pub trans: f64,
    pub pose: f64,
    pub recon: f64,
    pub cos: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { jh: 1.0, ph: 1.0, trans: 1.0, pose: 1e-1, recon: 1e-3, cos: -1e-2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.jh, self.ph, self.trans, self.pose, self.recon, self.cos];
        if all.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite".into()));
        }
        if [self.jh, self.ph, self.trans, self.pose, self.recon].iter().any(|&w| w < 0.0) {
            return Err(Error::Config("loss weights other than cos must be >= 0".into()));
        }
        if self.cos >= 0.0 {
            return Err(Error::Config("the cosine weight must be negative (similarity is maximised)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam { lr: f64 },
    MomentumSgd { lr: f64, momentum: f64 },
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr } | OptimizerConfig::MomentumSgd { lr, .. } => lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// The learning rate stays constant until this epoch, then falls
    /// linearly to zero at the end of the last epoch.
    pub decay_start: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub weights: LossWeights,
    /// Save a checkpoint every this many epochs (the final one is always saved).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Stop after this many optimiser steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            epochs: 10,
            decay_start: 5.0,
            batch_size: 16,
            optimizer: OptimizerConfig::Adam { lr: 1e-3 },
            weights: LossWeights::default(),
            checkpoint_every: None,
            max_steps: None,
        }
    }

    pub fn stage2() -> Self {
        Self { optimizer: OptimizerConfig::MomentumSgd { lr: 1e-2, momentum: 0.9 }, ..Self::stage1() }
    }

    /// Long schedule used for small real datasets.
    pub fn long(mut self) -> Self {
        self.epochs = 100;
        self.decay_start = 50.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.decay_start >= 0.0 && self.decay_start <= self.epochs as f64) {
            return Err(Error::Config(format!(
                "decay_start {} must lie in [0, epochs = {}]",
                self.decay_start, self.epochs
            )));
        }
        let lr = self.optimizer.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        if let OptimizerConfig::MomentumSgd { momentum, .. } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
            }
        }
        self.weights.validate()
    }
}

/// Learning rate at fractional `epoch`.
pub fn lr_at(epoch: f64, cfg: &TrainConfig) -> f64 {
    let base = cfg.optimizer.lr();
    let end = cfg.epochs as f64;
    if epoch <= cfg.decay_start || end <= cfg.decay_start {
        return base;
    }
    base * ((end - epoch) / (end - cfg.decay_start)).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// CDF thresholds in mm.
    pub cdf_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { cdf_thresholds: (0..=30).map(|i| i as f64 * 10.0).collect() }
    }
}

/// Everything one experiment needs, loaded from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Existing dataset directory; generated under `out_dir` when absent.
    #[serde(default)]
    pub dataset_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub variant: Variant,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    /// Initialisation and data-order seed.
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub ablation_seeds: Vec<u64>,
    #[serde(default = "default_variants")]
    pub ablation_variants: Vec<Variant>,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

impl RunConfig {
    /// Desk-scale defaults: 64x64 images, 16x16 heatmaps.
    pub fn toy(out_dir: impl Into<PathBuf>) -> Self {
        let stage1 = TrainConfig { epochs: 4, decay_start: 2.0, ..TrainConfig::stage1() };
        let stage2 = TrainConfig {
            epochs: 20,
            decay_start: 10.0,
            optimizer: OptimizerConfig::Adam { lr: 3e-3 },
            ..TrainConfig::stage1()
        };
        Self {
            out_dir: out_dir.into(),
            dataset_dir: None,
            dataset: DatasetConfig { sigma: Some(1.0), n_train: 1000, n_test: 200, ..DatasetConfig::default() },
            model: ModelConfig::toy(),
            variant: Variant::PhSm,
            stage1,
            stage2,
            seed: 0,
            ablation_seeds: default_seeds(),
            ablation_variants: default_variants(),
            eval: EvalConfig::default(),
        }
    }

    /// Full-size networks and schedules (256x256 images, 64x64 heatmaps).
    pub fn full(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset: DatasetConfig { image_size: 256, heatmap_size: 64, sigma: None, ..DatasetConfig::default() },
            model: ModelConfig::full(),
            stage1: TrainConfig::stage1(),
            stage2: TrainConfig::stage2(),
            ..Self::toy(out_dir)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.dataset.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.dataset.image_size != self.model.image_size || self.dataset.heatmap_size != self.model.heatmap_size {
            return Err(Error::Config(format!(
                "dataset renders {}px images / {}px heatmaps but the model expects {} / {}",
                self.dataset.image_size, self.dataset.heatmap_size, self.model.image_size, self.model.heatmap_size
            )));
        }
        if self.ablation_seeds.is_empty() || self.ablation_variants.is_empty() {
            return Err(Error::Config("ablation needs at least one seed and one variant".into()));
        }
        Ok(())
    }

    /// Hash of everything that affects results (paths excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.dataset_dir = None;
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset_dir.clone().unwrap_or_else(|| self.out_dir.join("dataset"))
    }
}
