use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ego3dpose_core::dataset::Split;
use ego3dpose_nn::pipeline::{self, write_file};
use ego3dpose_nn::train::{HeatmapCache, PoseTargets};
use ego3dpose_nn::{eval, Error, RunConfig, Variant};

mod inspect;

/// Stereo egocentric 3D pose: synthetic data, two-stage training, evaluation.
///
/// Every option can also come from the environment as `EGO3DPOSE_<NAME>`,
/// e.g. `EGO3DPOSE_CONFIG=run.json`.
#[derive(Parser, Debug)]
#[command(name = "ego3dpose", version)]
struct Cli {
    /// Run config (JSON).
    #[arg(long, global = true, env = "EGO3DPOSE_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long, global = true, env = "EGO3DPOSE_OUT")]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true, env = "EGO3DPOSE_SEED")]
    seed: Option<u64>,
    /// Pin tensor kernels to one thread.
    #[arg(long, global = true, env = "EGO3DPOSE_DETERMINISTIC")]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Print a preset run config.
    Config {
        #[arg(long, value_enum, default_value_t = Preset::Toy)]
        preset: Preset,
    },
    /// Render the synthetic dataset.
    Generate,
    /// Train the extractors (stage 1) or the 3D reconstructor (stage 2).
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Overrides the config's variant (B, B+PH, B+SM, B+PH+SM).
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Score a stage-2 checkpoint on the test split.
    Eval {
        /// Defaults to the run's stage-2 checkpoint for its variant.
        #[arg(long, env = "EGO3DPOSE_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score every variant for every ablation seed.
    Ablate,
    /// Dump images and heatmaps of one sample (and predictions, given a checkpoint).
    Inspect {
        /// A sample directory, `<dataset>/samples/<name>`.
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, env = "EGO3DPOSE_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Toy,
    Full,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.deterministic {
        // Read by the tensor backend when its thread pool starts.
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body = serde_json::json!({ "error": { "kind": f.kind, "message": f.message } });
            eprintln!("{body}");
            ExitCode::from(f.code)
        }
    }
}

struct Failure {
    kind: String,
    message: String,
    code: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { kind: e.kind().into(), message: e.to_string(), code: 1 }
    }
}

impl From<ego3dpose_core::Error> for Failure {
    fn from(e: ego3dpose_core::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { kind: "usage".into(), message: message.into(), code: 2 }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| usage("--config is required for this command"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure { kind: "io".into(), message: format!("{}: {e}", path.display()), code: 1 })?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn record_config(cfg: &RunConfig) -> Result<(), Failure> {
    Ok(write_file(&cfg.out_dir.join("run_config.json"), cfg.to_json())?)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Config { preset } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs/toy"));
            let mut cfg = match preset {
                Preset::Toy => RunConfig::toy(out),
                Preset::Full => RunConfig::full(out),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            println!("{}", cfg.to_json());
            Ok(())
        }
        Cmd::Generate => {
            let cfg = load_config(cli)?;
            let ds = pipeline::generate_dataset(&cfg)?;
            log::info!("wrote {} samples to {}", ds.samples.len(), cfg.dataset_path().display());
            Ok(())
        }
        Cmd::Train { stage, variant } => {
            let mut cfg = load_config(cli)?;
            if let Some(v) = variant {
                cfg.variant = *v;
            }
            record_config(&cfg)?;
            train(&cfg, *stage)
        }
        Cmd::Eval { checkpoint } => {
            let cfg = load_config(cli)?;
            evaluate(&cfg, checkpoint.as_deref())
        }
        Cmd::Ablate => {
            let cfg = load_config(cli)?;
            record_config(&cfg)?;
            let ds = pipeline::load_dataset(&cfg)?;
            let table = pipeline::ablation_run(&cfg, &ds, Some(&cfg.out_dir.join("ablation")))?;
            print!("{}", table.to_text());
            Ok(())
        }
        Cmd::Inspect { sample, checkpoint } => {
            let cfg = match (&cli.config, checkpoint) {
                (Some(_), _) => Some(load_config(cli)?),
                (None, Some(_)) => return Err(usage("--checkpoint needs --config")),
                (None, None) => None,
            };
            let out = cli.out.clone().or_else(|| cfg.as_ref().map(|c| c.out_dir.join("inspect")));
            let out = out.ok_or_else(|| usage("--out (or --config) is required for inspect"))?;
            inspect::run(sample, cfg.as_ref().zip(checkpoint.as_deref()), &out)
        }
    }
}

fn train(cfg: &RunConfig, stage: u8) -> Result<(), Failure> {
    let ds = pipeline::load_dataset(cfg)?;
    let skeleton = &ds.manifest.skeleton;
    let train = ds.split(Split::Train);
    if stage == 1 {
        let s1 = pipeline::run_stage1(cfg, skeleton, &train, cfg.variant, cfg.seed, Some(&cfg.out_dir))?;
        log::info!("stage 1 done: eval L_2D {:.5} -> {:.5}", s1.l2d_before, s1.l2d_after);
        return Ok(());
    }
    let ck = pipeline::load_stage1(cfg, &cfg.out_dir)?;
    let bundle = pipeline::bundle_from_stage1(cfg, skeleton, cfg.variant, cfg.seed, &ck.tensors)?;
    let cache = HeatmapCache::estimate(&bundle, &train, 32)?;
    let s2 = pipeline::run_stage2(cfg, skeleton, &bundle, &cache, &PoseTargets::new(&train)?, cfg.seed, Some(&cfg.out_dir))?;
    if let Some(last) = s2.trace.epoch_means.last() {
        log::info!("stage 2 done: final epoch loss {last:.4}");
    }
    Ok(())
}

fn evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let ds = pipeline::load_dataset(cfg)?;
    let skeleton = &ds.manifest.skeleton;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| pipeline::stage2_path(&cfg.out_dir, cfg.variant));
    let bundle = pipeline::load_bundle(cfg, skeleton, &path)?;
    let test = ds.split(Split::Test);
    let cache = HeatmapCache::estimate(&bundle, &test, 32)?;
    let ev = eval::evaluate(&bundle, &cache, &test, skeleton, &cfg.hash())?;
    let dir = cfg.out_dir.join(format!("eval_{}", bundle.variant.slug()));
    pipeline::write_evaluation(cfg, &ev, &dir)?;
    println!(
        "{}",
        serde_json::json!({
            "variant": bundle.variant.id(),
            "n_samples": ev.report.n_samples,
            "mpjpe_mm": ev.report.mpjpe,
            "pa_mpjpe_mm": ev.report.pa_mpjpe,
            "sm_angular_error_deg": ev.sm_angular_error_deg,
            "report_dir": dir,
        })
    );
    Ok(())
}
