//! The two training stages. Stage 1 fits the optical extractors to ground
//! truth heatmaps; stage 2 fits everything downstream on heatmaps the frozen
//! extractors estimated once up front.

use candle_core::{DType, Device, Tensor, Var};
use ego3dpose_core::dataset::Sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch;
use crate::config::{lr_at, LossWeights, TrainConfig};
use crate::losses::{self, LossParts};
use crate::model::{component_seed, NetBundle};
use crate::optim;
use crate::{Error, Result};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub stage: u8,
    pub epoch: f64,
    pub lr: f64,
    pub losses: LossParts,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
    /// Mean weighted loss per completed epoch.
    pub epoch_means: Vec<f64>,
}

/// Hooks called while training. Both default to doing nothing.
pub trait TrainObserver {
    fn step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
    fn epoch_end(&mut self, _epoch: usize) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Seeded visiting order, reshuffled every epoch.
struct Schedule {
    rng: ChaCha8Rng,
    n: usize,
    batch: usize,
}

impl Schedule {
    fn new(seed: u64, stage: &str, n: usize, batch: usize) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(component_seed(seed, stage)), n, batch }
    }

    fn steps_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch)
    }

    fn epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.batch).map(<[usize]>::to_vec).collect()
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

struct Loop<'a> {
    stage: u8,
    cfg: &'a TrainConfig,
    vars: Vec<Var>,
    n: usize,
    seed: u64,
}

impl Loop<'_> {
    /// Runs the epochs; `loss` maps a batch to `(total, parts)`.
    fn run(
        self,
        observer: &mut dyn TrainObserver,
        mut loss: impl FnMut(&[usize]) -> Result<(Tensor, LossParts)>,
    ) -> Result<TrainTrace> {
        self.cfg.validate()?;
        if self.n == 0 {
            return Err(Error::Parameter(format!("stage {} has no training samples", self.stage)));
        }
        let mut opt = optim::build(&self.cfg.optimizer, self.vars)?;
        let mut sched = Schedule::new(self.seed, &format!("stage{}-order", self.stage), self.n, self.cfg.batch_size);
        let per_epoch = sched.steps_per_epoch();
        let mut trace = TrainTrace::default();
        let mut step = 0;
        'outer: for epoch in 0..self.cfg.epochs {
            let (mut sum, mut count) = (0.0, 0);
            for idx in sched.epoch() {
                if self.cfg.max_steps.is_some_and(|m| step >= m) {
                    break 'outer;
                }
                let at = step as f64 / per_epoch as f64;
                let lr = lr_at(at, self.cfg);
                let (total, parts) = loss(&idx)?;
                let value = scalar(&total)?;
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        stage: self.stage,
                        step,
                        detail: format!("batch samples {idx:?}, losses {parts:?}"),
                    });
                }
                let grads = total.backward()?;
                opt.step(&grads, lr)?;
                let rec = StepRecord { step, stage: self.stage, epoch: at, lr, losses: parts, total: value };
                observer.step(&rec)?;
                trace.records.push(rec);
                sum += value;
                count += 1;
                step += 1;
            }
            if count > 0 {
                trace.epoch_means.push(sum / count as f64);
            }
            observer.epoch_end(epoch + 1)?;
        }
        Ok(trace)
    }
}

/// Stage-1 loss on one batch of samples.
fn loss_2d(bundle: &NetBundle, samples: &[&Sample], w: &LossWeights, train: bool) -> Result<(Tensor, LossParts)> {
    let left = batch::images(samples, false)?;
    let right = batch::images(samples, true)?;
    let (jh, peh) = bundle.extract(&left, &right, train)?;
    let l_jh = losses::loss_jh(&jh, &batch::stack_heatmaps(samples, false)?)?;
    let mut parts = LossParts::new();
    parts.insert("jh".into(), scalar(&l_jh)?);
    let total = match peh {
        Some(peh) => {
            let l_ph = losses::loss_ph(&peh, &batch::stack_heatmaps(samples, true)?, &batch::limb_lengths(samples)?)?;
            parts.insert("ph".into(), scalar(&l_ph)?);
            losses::weighted_sum(&[(w.jh, &l_jh), (w.ph, &l_ph)])?
        }
        None => (l_jh * w.jh)?,
    };
    Ok((total, parts))
}

/// Only extractor parameters are handed to the optimiser.
pub fn train_stage1(
    bundle: &NetBundle,
    samples: &[&Sample],
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainTrace> {
    let run = Loop { stage: 1, cfg, vars: bundle.extractor_params().trainable(), n: samples.len(), seed };
    run.run(observer, |idx| {
        let chosen: Vec<&Sample> = idx.iter().map(|&i| samples[i]).collect();
        loss_2d(bundle, &chosen, &cfg.weights, true)
    })
}

/// Eval-mode `L_2D` averaged over `samples` in chunks.
pub fn eval_l2d(bundle: &NetBundle, samples: &[&Sample], w: &LossWeights, chunk: usize) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0);
    for c in samples.chunks(chunk.max(1)) {
        let (_, parts) = loss_2d(bundle, c, w, false)?;
        sum += losses::total_2d(&parts, w) * c.len() as f64;
        n += c.len();
    }
    if n == 0 {
        return Err(Error::Parameter("no samples".into()));
    }
    Ok(sum / n as f64)
}

/// Heatmaps the frozen extractors produce (eval mode), one row per sample.
#[derive(Clone, Debug)]
pub struct HeatmapCache {
    pub jh: Tensor,
    pub peh: Option<Tensor>,
}

impl HeatmapCache {
    pub fn estimate(bundle: &NetBundle, samples: &[&Sample], chunk: usize) -> Result<Self> {
        let (mut jh, mut peh) = (Vec::new(), Vec::new());
        for c in samples.chunks(chunk.max(1)) {
            let (j, p) = bundle.extract(&batch::images(c, false)?, &batch::images(c, true)?, false)?;
            jh.push(j.detach());
            if let Some(p) = p {
                peh.push(p.detach());
            }
        }
        if jh.is_empty() {
            return Err(Error::Parameter("no samples".into()));
        }
        Ok(Self { jh: Tensor::cat(&jh, 0)?, peh: if peh.is_empty() { None } else { Some(Tensor::cat(&peh, 0)?) } })
    }

    pub fn len(&self) -> usize {
        self.jh.dim(0).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Result<(Tensor, Option<Tensor>)> {
        let ids: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
        let t = Tensor::new(ids.as_slice(), &Device::Cpu)?;
        Ok((self.jh.index_select(&t, 0)?, self.peh.as_ref().map(|p| p.index_select(&t, 0)).transpose()?))
    }
}

/// Ground truth for stage 2, stacked once.
#[derive(Clone, Debug)]
pub struct PoseTargets {
    pub pose: Tensor,
    pub orientations: Tensor,
}

impl PoseTargets {
    pub fn new(samples: &[&Sample]) -> Result<Self> {
        Ok(Self { pose: batch::poses(samples)?, orientations: batch::orientations(samples)? })
    }

    fn select(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let ids: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
        let t = Tensor::new(ids.as_slice(), &Device::Cpu)?;
        Ok((self.pose.index_select(&t, 0)?, self.orientations.index_select(&t, 0)?))
    }
}

/// Stage-2 loss terms for one batch, returned unweighted.
pub struct Stage2Terms {
    pub trans: Option<Tensor>,
    pub pose: Tensor,
    pub recon: Tensor,
    pub cos: Tensor,
    pub skipped_limbs: usize,
}

impl Stage2Terms {
    pub fn weighted(&self, w: &LossWeights) -> Result<Tensor> {
        let mut terms = vec![(w.pose, &self.pose), (w.recon, &self.recon), (w.cos, &self.cos)];
        if let Some(t) = &self.trans {
            terms.insert(0, (w.trans, t));
        }
        losses::weighted_sum(&terms)
    }

    pub fn parts(&self) -> Result<LossParts> {
        let mut p = LossParts::new();
        if let Some(t) = &self.trans {
            p.insert("trans".into(), scalar(t)?);
        }
        p.insert("pose".into(), scalar(&self.pose)?);
        p.insert("recon".into(), scalar(&self.recon)?);
        p.insert("cos".into(), scalar(&self.cos)?);
        Ok(p)
    }
}

pub fn stage2_terms(
    bundle: &NetBundle,
    jh: &Tensor,
    peh: Option<&Tensor>,
    gt_pose: &Tensor,
    gt_orient: &Tensor,
    limbs: &[(usize, usize)],
    train: bool,
) -> Result<Stage2Terms> {
    let out = bundle.forward_stage2(jh, peh, train)?;
    let estimated = bundle.encoder_input(jh, peh)?;
    let trans = out.orientations.as_ref().map(|o| losses::loss_trans(o, gt_orient)).transpose()?;
    let (cos, skipped_limbs) = losses::loss_cos(&out.pose, gt_pose, limbs)?;
    Ok(Stage2Terms {
        trans,
        pose: losses::loss_pose(&out.pose, gt_pose)?,
        recon: losses::loss_recon(&out.recon, &estimated, bundle.config.jh_channels())?,
        cos,
        skipped_limbs,
    })
}

/// Limbs used by the cosine loss, as joint index pairs.
pub fn cos_limbs(skeleton: &ego3dpose_core::Skeleton) -> Vec<(usize, usize)> {
    skeleton.peh_limbs.iter().map(|l| (l.parent, l.child)).collect()
}

/// Stage 2 over cached heatmaps. Extractor weights are audited by hash and
/// must come out bit-identical.
pub fn train_stage2(
    bundle: &NetBundle,
    cache: &HeatmapCache,
    targets: &PoseTargets,
    limbs: &[(usize, usize)],
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainTrace> {
    if cache.len() != targets.pose.dim(0)? {
        return Err(Error::Parameter(format!("{} cached heatmaps for {} targets", cache.len(), targets.pose.dim(0)?)));
    }
    let frozen = bundle.extractor_params().hash()?;
    let run = Loop { stage: 2, cfg, vars: bundle.stage2_params().trainable(), n: cache.len(), seed };
    let trace = run.run(observer, |idx| {
        let (jh, peh) = cache.select(idx)?;
        let (pose, orient) = targets.select(idx)?;
        let terms = stage2_terms(bundle, &jh, peh.as_ref(), &pose, &orient, limbs, true)?;
        if terms.skipped_limbs > 0 {
            log::warn!("cosine loss skipped {} zero-length predicted limbs", terms.skipped_limbs);
        }
        Ok((terms.weighted(&cfg.weights)?, terms.parts()?))
    })?;
    if bundle.extractor_params().hash()? != frozen {
        return Err(Error::Parameter("extractor weights changed during stage 2".into()));
    }
    Ok(trace)
}

/// Largest absolute gradient that the decoder-side losses (pose, cosine,
/// reconstruction) push into the stereo matcher. Zero when the matcher's
/// output is properly detached; `None` for variants without a matcher.
pub fn detachment_probe(
    bundle: &NetBundle,
    jh: &Tensor,
    peh: Option<&Tensor>,
    gt_pose: &Tensor,
    gt_orient: &Tensor,
    limbs: &[(usize, usize)],
    w: &LossWeights,
) -> Result<Option<f64>> {
    let Some(sm) = &bundle.stereo_matcher else { return Ok(None) };
    // Eval mode so the probe leaves batch-norm statistics alone.
    let terms = stage2_terms(bundle, jh, peh, gt_pose, gt_orient, limbs, false)?;
    let decoder_loss = losses::weighted_sum(&[(w.pose, &terms.pose), (w.cos, &terms.cos), (w.recon, &terms.recon)])?;
    let grads = decoder_loss.backward()?;
    let mut max = 0f64;
    for v in sm.params.trainable() {
        if let Some(g) = grads.get(v.as_tensor()) {
            max = max.max(scalar(&g.abs()?.max_all()?)?);
        }
    }
    Ok(Some(max))
}
