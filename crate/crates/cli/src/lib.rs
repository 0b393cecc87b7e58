//! Argument handling and subcommand dispatch for the `regionswap` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use regionswap::edit::{linspace, CodeKind, Editor};
use regionswap::imageio::{open_image, save_image_tensor};
use regionswap::mask::RegionMask;
use regionswap::metrics::{
    evaluate, BuiltinExtractor, EvalManifest, EvalOptions, FeatureExtractor, TorchScriptExtractor,
};
use regionswap::train::checkpoint::load_checkpoint;
use regionswap::train::data::Dataset;
use regionswap::train::Trainer;
use regionswap::{Error, Networks, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "regionswap", version, about = "Masked style editing with a content/style swapping autoencoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `section.key=value` override, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for network initialisation and training randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Validate configuration and inputs, then exit without writing.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TKind {
    Content,
    Style,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from scratch (or resume) and write logs, samples and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>/checkpoint.safetensors` if it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Compute metrics for every row of a manifest CSV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for metrics.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One region edit from files.
    Edit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frames along a linear path between two images' codes.
    Interpolate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Image supplying the code that is held fixed.
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long = "t-kind", value_enum, default_value_t = TKind::Style)]
        t_kind: TKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP editing service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(c.config.as_deref(), &c.overrides)?;
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn require_file(field: &str, p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{} does not exist", p.display())))
    }
}

fn checkpoint_path(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    let p = flag
        .clone()
        .or_else(|| cfg.model.checkpoint.clone())
        .ok_or_else(|| Error::config("model.checkpoint", "no checkpoint given"))?;
    require_file("model.checkpoint", &p)?;
    Ok(p)
}

fn load_editor(path: &Path) -> Result<Editor> {
    Editor::from_checkpoint(path)
}

fn extractor(cfg: &RunConfig) -> Result<Box<dyn FeatureExtractor>> {
    Ok(match &cfg.eval.extractor {
        Some(p) => Box::new(TorchScriptExtractor::load(p)?),
        None => Box::new(BuiltinExtractor::new(cfg.eval.extractor_seed)),
    })
}

fn train(common: &Common, out: &Path, resume: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let res = cfg.network.base_resolution as u32;
    let mut data = Dataset::open(&cfg.data, res)?;
    if common.dry_run {
        println!("config ok: {} training images", data.len());
        return Ok(());
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string())?;
    let ckpt = out.join("checkpoint.safetensors");
    let mut trainer = if resume && ckpt.exists() {
        let (state, nets) = load_checkpoint(&ckpt)?;
        if nets.config() != &cfg.network {
            return Err(Error::config("network", "checkpoint was trained with a different network config"));
        }
        let mut t = Trainer::new(nets, cfg.loss.clone(), cfg.mask.clone(), cfg.train.clone())?;
        t.state = state;
        log::info!("resuming at iteration {}", t.state.iteration);
        t
    } else {
        Trainer::new(Networks::new(cfg.network.clone())?, cfg.loss.clone(), cfg.mask.clone(), cfg.train.clone())?
    };
    trainer.fit(&mut data, out)
}

fn evaluate_cmd(common: &Common, manifest: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    require_file("manifest", manifest)?;
    let m = EvalManifest::load(manifest)?;
    m.check_paths()?;
    if common.dry_run {
        println!("config ok: {} manifest rows", m.rows.len());
        return Ok(());
    }
    let ex = extractor(&cfg)?;
    let opts = EvalOptions {
        real_dir: cfg.eval.real_dir.clone(),
        cache_stats: cfg.eval.cache_stats,
    };
    let report = evaluate(&m, ex.as_ref(), &opts)?;
    let summary = report.summary_json();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        report.write_csv(&dir.join("metrics.csv"))?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn load_model_image(ed: &Editor, field: &str, p: &Path) -> Result<regionswap::ImageTensor> {
    require_file(field, p)?;
    Ok(ed.prepare(&open_image(p)?).0)
}

#[allow(clippy::too_many_arguments)]
fn edit_cmd(
    common: &Common,
    checkpoint: &Option<PathBuf>,
    content: &Path,
    style: &Path,
    mask: &Path,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(common)?;
    let ckpt = checkpoint_path(&cfg, checkpoint)?;
    for (f, p) in [("content", content), ("style", style), ("mask", mask)] {
        require_file(f, p)?;
    }
    if common.dry_run {
        println!("config ok");
        return Ok(());
    }
    let ed = load_editor(&ckpt)?;
    let c = load_model_image(&ed, "content", content)?;
    let s = load_model_image(&ed, "style", style)?;
    let m = RegionMask::load_png(mask)?;
    let result = ed.region_edit(&c, &s, &m)?.result;
    save_image_tensor(&result, 0, out)
}

#[allow(clippy::too_many_arguments)]
fn interpolate_cmd(
    common: &Common,
    checkpoint: &Option<PathBuf>,
    a: &Path,
    b: &Path,
    fixed: &Path,
    frames: usize,
    kind: TKind,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(common)?;
    let ckpt = checkpoint_path(&cfg, checkpoint)?;
    for (f, p) in [("a", a), ("b", b), ("fixed", fixed)] {
        require_file(f, p)?;
    }
    if frames == 0 {
        return Err(Error::config("frames", "must be at least 1"));
    }
    if common.dry_run {
        println!("config ok");
        return Ok(());
    }
    let ed = load_editor(&ckpt)?;
    let kind = match kind {
        TKind::Content => CodeKind::Content,
        TKind::Style => CodeKind::Style,
    };
    let imgs = [a, b, fixed]
        .iter()
        .map(|p| load_model_image(&ed, "image", p))
        .collect::<Result<Vec<_>>>()?;
    let out_frames = ed.interpolate_frames(kind, &imgs[0], &imgs[1], &imgs[2], &linspace(frames))?;
    std::fs::create_dir_all(out)?;
    for (i, f) in out_frames.iter().enumerate() {
        save_image_tensor(f, 0, &out.join(format!("frame_{i:03}.png")))?;
    }
    Ok(())
}

fn serve_cmd(common: &Common, checkpoint: &Option<PathBuf>) -> Result<()> {
    let cfg = load_config(common)?;
    let ckpt = checkpoint_path(&cfg, checkpoint)?;
    if common.dry_run {
        println!("config ok");
        return Ok(());
    }
    let ed = load_editor(&ckpt)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(regionswap::service::serve(ed, &cfg.serve))
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { common, out, resume } => train(common, out, *resume),
        Command::Evaluate { common, manifest, out } => evaluate_cmd(common, manifest, out.as_deref()),
        Command::Edit {
            common,
            checkpoint,
            content,
            style,
            mask,
            out,
        } => edit_cmd(common, checkpoint, content, style, mask, out),
        Command::Interpolate {
            common,
            checkpoint,
            a,
            b,
            fixed,
            frames,
            t_kind,
            out,
        } => interpolate_cmd(common, checkpoint, a, b, fixed, *frames, *t_kind, out),
        Command::Serve { common, checkpoint } => serve_cmd(common, checkpoint),
    }
}
