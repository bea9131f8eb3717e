//! File-level orchestration shared by the CLI and the acceptance runs.
//!
//! Layout under `out_dir`:
//!
//! | path | contents |
//! |---|---|
//! | `stage1.safetensors`, `stage1_log.jsonl` | extractor checkpoint and per-step log |
//! | `stage2_<variant>.safetensors`, `stage2_<variant>_log.jsonl` | full bundle |
//! | `eval_<variant>/` | `report.json`, `report.csv`, `cdf.csv`, `cdf.svg` |
//! | `ablation/` | `ablation.{csv,svg,txt,json}` and per-seed logs |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ego3dpose_core::dataset::{read_manifest, Dataset, Sample, Split};
use ego3dpose_core::metrics::error_cdf;
use ego3dpose_core::Skeleton;

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::{RunConfig, Variant};
use crate::eval::{evaluate, AblationRow, AblationTable, Evaluation};
use crate::model::NetBundle;
use crate::params::ParamStore;
use crate::train::{
    cos_limbs, eval_l2d, train_stage1, train_stage2, HeatmapCache, PoseTargets, StepRecord, TrainObserver, TrainTrace,
};
use crate::{Error, Result};

const CHUNK: usize = 32;

/// Writes one JSON line per step and optional periodic checkpoints.
pub struct FileObserver {
    log: Option<(BufWriter<File>, PathBuf)>,
    checkpoint: Option<(usize, ParamStore, CheckpointMeta, PathBuf)>,
}

impl FileObserver {
    pub fn none() -> Self {
        Self { log: None, checkpoint: None }
    }

    pub fn new(log_path: &Path) -> Result<Self> {
        if let Some(dir) = log_path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(log_path).map_err(|e| Error::io(log_path, e))?;
        Ok(Self { log: Some((BufWriter::new(f), log_path.to_path_buf())), checkpoint: None })
    }

    /// Saves `<stem>_epoch<N>.safetensors` every `every` epochs.
    pub fn with_checkpoints(mut self, every: Option<usize>, params: ParamStore, meta: CheckpointMeta, stem: PathBuf) -> Self {
        self.checkpoint = every.filter(|&e| e > 0).map(|e| (e, params, meta, stem));
        self
    }
}

impl TrainObserver for FileObserver {
    fn step(&mut self, record: &StepRecord) -> Result<()> {
        if let Some((w, path)) = &mut self.log {
            let line = serde_json::to_string(record).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    fn epoch_end(&mut self, epoch: usize) -> Result<()> {
        if let Some((w, path)) = &mut self.log {
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        if let Some((every, params, meta, stem)) = &self.checkpoint {
            if epoch % *every == 0 {
                let path = PathBuf::from(format!("{}_epoch{epoch}.safetensors", stem.display()));
                Checkpoint::from_params(meta.clone(), params)?.save(&path)?;
            }
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Generates the dataset described by `cfg` and writes it to its path.
pub fn generate_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = Dataset::generate(cfg.dataset.clone(), Skeleton::unrealego())?;
    ds.write(&cfg.dataset_path())?;
    Ok(ds)
}

/// Reads the dataset, checking that it was generated from `cfg.dataset`.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.dataset_path();
    let manifest = read_manifest(&dir)?;
    if manifest.config != cfg.dataset {
        return Err(Error::Config(format!(
            "dataset at {} was generated with a different dataset config; regenerate it",
            dir.display()
        )));
    }
    Ok(Dataset::read(&dir)?)
}

pub fn stage1_path(out: &Path) -> PathBuf {
    out.join("stage1.safetensors")
}

pub fn stage2_path(out: &Path, v: Variant) -> PathBuf {
    out.join(format!("stage2_{}.safetensors", v.slug()))
}

/// Result of the extractor stage.
pub struct Stage1Outcome {
    pub bundle: NetBundle,
    pub trace: TrainTrace,
    /// Eval-mode training-set `L_2D` before and after.
    pub l2d_before: f64,
    pub l2d_after: f64,
}

/// Trains the extractors `variant` needs and saves them when `out` is set.
pub fn run_stage1(
    cfg: &RunConfig,
    skeleton: &Skeleton,
    train: &[&Sample],
    variant: Variant,
    seed: u64,
    out: Option<&Path>,
) -> Result<Stage1Outcome> {
    let bundle = NetBundle::new(&cfg.model, variant, skeleton, seed)?;
    let meta = CheckpointMeta { stage: 1, variant, model: cfg.model.clone() };
    let mut obs = match out {
        Some(o) => FileObserver::new(&o.join("stage1_log.jsonl"))?.with_checkpoints(
            cfg.stage1.checkpoint_every,
            bundle.extractor_params(),
            meta.clone(),
            o.join("stage1"),
        ),
        None => FileObserver::none(),
    };
    let l2d_before = eval_l2d(&bundle, train, &cfg.stage1.weights, CHUNK)?;
    let trace = train_stage1(&bundle, train, &cfg.stage1, seed, &mut obs)?;
    let l2d_after = eval_l2d(&bundle, train, &cfg.stage1.weights, CHUNK)?;
    log::info!("stage 1 seed {seed}: eval L_2D {l2d_before:.5} -> {l2d_after:.5}");
    if let Some(o) = out {
        Checkpoint::from_params(meta, &bundle.extractor_params())?.save(&stage1_path(o))?;
    }
    Ok(Stage1Outcome { bundle, trace, l2d_before, l2d_after })
}

/// A fresh bundle for `variant` carrying the extractor weights of `stage1`.
pub fn bundle_from_stage1(
    cfg: &RunConfig,
    skeleton: &Skeleton,
    variant: Variant,
    seed: u64,
    stage1: &[(String, candle_core::Tensor)],
) -> Result<NetBundle> {
    let bundle = NetBundle::new(&cfg.model, variant, skeleton, seed)?;
    bundle.extractor_params().load_matching(stage1)?;
    Ok(bundle)
}

pub fn load_stage1(cfg: &RunConfig, out: &Path) -> Result<Checkpoint> {
    let path = stage1_path(out);
    if !path.exists() {
        return Err(Error::Config(format!("stage-1 checkpoint {} not found; run stage 1 first", path.display())));
    }
    let ck = Checkpoint::load(&path)?;
    check_meta(cfg, &ck, 1)?;
    Ok(ck)
}

fn check_meta(cfg: &RunConfig, ck: &Checkpoint, stage: u8) -> Result<()> {
    if ck.meta.stage != stage {
        return Err(Error::checkpoint("stage", format!("expected stage {stage}, found {}", ck.meta.stage)));
    }
    if ck.meta.model != cfg.model {
        return Err(Error::checkpoint("model_config", "differs from the run config"));
    }
    Ok(())
}

/// Loads a stage-2 checkpoint into a matching bundle.
pub fn load_bundle(cfg: &RunConfig, skeleton: &Skeleton, path: &Path) -> Result<NetBundle> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    check_meta(cfg, &ck, 2)?;
    let bundle = NetBundle::new(&cfg.model, ck.meta.variant, skeleton, 0)?;
    bundle.params().load(&ck.tensors)?;
    Ok(bundle)
}

pub struct Stage2Outcome {
    pub trace: TrainTrace,
}

/// Trains the downstream nets of `bundle` on `cache`; saves the whole
/// bundle when `out` is set.
pub fn run_stage2(
    cfg: &RunConfig,
    skeleton: &Skeleton,
    bundle: &NetBundle,
    cache: &HeatmapCache,
    targets: &PoseTargets,
    seed: u64,
    out: Option<&Path>,
) -> Result<Stage2Outcome> {
    let v = bundle.variant;
    let meta = CheckpointMeta { stage: 2, variant: v, model: cfg.model.clone() };
    let mut obs = match out {
        Some(o) => FileObserver::new(&o.join(format!("stage2_{}_log.jsonl", v.slug())))?.with_checkpoints(
            cfg.stage2.checkpoint_every,
            bundle.params(),
            meta.clone(),
            o.join(format!("stage2_{}", v.slug())),
        ),
        None => FileObserver::none(),
    };
    let trace = train_stage2(bundle, cache, targets, &cos_limbs(skeleton), &cfg.stage2, seed, &mut obs)?;
    if let Some(o) = out {
        Checkpoint::from_params(meta, &bundle.params())?.save(&stage2_path(o, v))?;
    }
    Ok(Stage2Outcome { trace })
}

/// Writes `report.json`, `report.csv`, `cdf.csv` and `cdf.svg` into `dir`.
pub fn write_evaluation(cfg: &RunConfig, ev: &Evaluation, dir: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(ev).expect("evaluation serializes");
    write_file(&dir.join("report.json"), json)?;
    write_file(&dir.join("report.csv"), ev.report.to_csv())?;
    let cdf = error_cdf(&ev.report, &cfg.eval.cdf_thresholds);
    write_file(&dir.join("cdf.csv"), cdf.to_csv())?;
    write_file(&dir.join("cdf.svg"), cdf.to_svg())
}

/// Everything one seeded two-stage run produces.
pub struct FullRun {
    pub stage1: Stage1Outcome,
    pub stage2: Stage2Outcome,
    pub bundle: NetBundle,
    pub train_eval: Evaluation,
    pub test_eval: Evaluation,
}

/// Stage 1, stage 2 and evaluation for `cfg.variant` and `cfg.seed`.
pub fn run_full(cfg: &RunConfig, dataset: &Dataset, out: Option<&Path>) -> Result<FullRun> {
    cfg.validate()?;
    let skeleton = &dataset.manifest.skeleton;
    let (train, test) = (dataset.split(Split::Train), dataset.split(Split::Test));
    let stage1 = run_stage1(cfg, skeleton, &train, cfg.variant, cfg.seed, out)?;
    let bundle = bundle_from_stage1(cfg, skeleton, cfg.variant, cfg.seed, &stage1.bundle.extractor_params().snapshot()?)?;
    let train_cache = HeatmapCache::estimate(&bundle, &train, CHUNK)?;
    let stage2 = run_stage2(cfg, skeleton, &bundle, &train_cache, &PoseTargets::new(&train)?, cfg.seed, out)?;
    let hash = cfg.hash();
    let train_eval = evaluate(&bundle, &train_cache, &train, skeleton, &hash)?;
    let test_eval = if test.is_empty() {
        train_eval.clone()
    } else {
        evaluate(&bundle, &HeatmapCache::estimate(&bundle, &test, CHUNK)?, &test, skeleton, &hash)?
    };
    if let Some(o) = out {
        write_evaluation(cfg, &test_eval, &o.join(format!("eval_{}", cfg.variant.slug())))?;
    }
    Ok(FullRun { stage1, stage2, bundle, train_eval, test_eval })
}

/// Every variant in `cfg.ablation_variants` for every seed. Stage 1 runs
/// once per seed with both extractors, and each variant starts from those
/// weights; the estimated heatmaps are computed once per seed and shared.
pub fn ablation_run(cfg: &RunConfig, dataset: &Dataset, out: Option<&Path>) -> Result<AblationTable> {
    cfg.validate()?;
    if cfg.ablation_seeds.is_empty() || cfg.ablation_variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one variant".into()));
    }
    let skeleton = &dataset.manifest.skeleton;
    let (train, test) = (dataset.split(Split::Train), dataset.split(Split::Test));
    if test.is_empty() {
        return Err(Error::Config("ablation needs a non-empty test split".into()));
    }
    let hash = cfg.hash();
    let targets = PoseTargets::new(&train)?;
    let mut rows = Vec::new();
    for &seed in &cfg.ablation_seeds {
        let seed_dir = out.map(|o| o.join(format!("seed{seed}")));
        let s1 = run_stage1(cfg, skeleton, &train, Variant::PhSm, seed, seed_dir.as_deref())?;
        let weights = s1.bundle.extractor_params().snapshot()?;
        let train_cache = HeatmapCache::estimate(&s1.bundle, &train, CHUNK)?;
        let test_cache = HeatmapCache::estimate(&s1.bundle, &test, CHUNK)?;
        for &v in &cfg.ablation_variants {
            let bundle = bundle_from_stage1(cfg, skeleton, v, seed, &weights)?;
            run_stage2(cfg, skeleton, &bundle, &train_cache, &targets, seed, seed_dir.as_deref())?;
            let ev = evaluate(&bundle, &test_cache, &test, skeleton, &hash)?;
            log::info!("ablation seed {seed} {v}: MPJPE {:.2} mm, PA {:.2} mm", ev.report.mpjpe, ev.report.pa_mpjpe);
            rows.push(AblationRow {
                variant: v,
                seed,
                mpjpe: ev.report.mpjpe,
                pa_mpjpe: ev.report.pa_mpjpe,
                sm_angular_error_deg: ev.sm_angular_error_deg,
            });
        }
    }
    let table = AblationTable::from_rows(rows);
    if let Some(o) = out {
        write_file(&o.join("ablation.csv"), table.to_csv())?;
        write_file(&o.join("ablation.svg"), table.to_svg())?;
        write_file(&o.join("ablation.txt"), table.to_text())?;
        write_file(&o.join("ablation.json"), serde_json::to_string_pretty(&table).expect("table serializes"))?;
    }
    Ok(table)
}
