use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pgdyn::dataset::{generate, manifest_path, split, Dataset, GenerateConfig, Manifest, RunManifest};
use pgdyn::eval::{eval_rows, evaluate, write_eval_csv, EvalConfig};
use pgdyn::model::{ModelConfig, Variant, WorldModel};
use pgdyn::render::{parse_frame_list, render_frames, RenderStyle};
use pgdyn::sim::{Episode, EpisodeConfig, ObjectState, WorldConfig};
use pgdyn::training::{train, MetricsWriter, TrainConfig};
use pgdyn::{Error, Result};

const USAGE: u8 = 2;
const DATA: u8 = 3;
const NUMERICAL: u8 = 4;

/// Geometric-algebra world models for 2D rigid-body scenes.
#[derive(Parser)]
#[command(name = "pgdyn", version, args_override_self = true)]
struct Cli {
    /// Worker threads for generation and evaluation (default: PGDYN_THREADS
    /// or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File of `key=value` lines used as defaults for the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate episodes and write a dataset plus manifest.
    Generate(GenerateArgs),
    /// Train a world model on a dataset.
    Train(TrainArgs),
    /// Roll a trained model out and write RMSE tables.
    Eval(EvalArgs),
    /// Draw ground-truth and predicted frames as SVG.
    Render(RenderArgs),
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    /// Object mix, e.g. `10xrect` or `6xcircle+4xrect`.
    #[arg(long)]
    objects: String,
    #[arg(long)]
    episodes: usize,
    #[arg(long, default_value_t = 128)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// One of s, s-ad, e, transformer, mlp, clifford-mlp, ad-clifford-mlp.
    #[arg(long, default_value = "s")]
    variant: String,
    /// Size preset: `full` (10 blocks, 8 heads, 24 channels) or `desk`
    /// (2, 4, 8). Explicit size flags take precedence.
    #[arg(long, default_value = "full")]
    preset: String,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Multivector channels of the Clifford variants.
    #[arg(long)]
    channels: Option<usize>,
    /// Number of input frames per prediction.
    #[arg(long, default_value_t = 2)]
    seq_len: usize,
    /// Explicit width of the dense baselines (otherwise parameter matched).
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Parameter count the dense baselines are matched to.
    #[arg(long)]
    param_target: Option<usize>,
    /// Start from a model that predicts its input unchanged.
    #[arg(long)]
    identity_init: bool,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    clip_grad_norm: Option<f64>,
    /// Decay the learning rate to zero along a cosine.
    #[arg(long)]
    cosine_decay: bool,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    /// Fraction of episodes held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 10)]
    eval_horizon: usize,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    /// Per-epoch metrics CSV (default: `<out>.metrics.csv`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 35)]
    horizon: usize,
    /// Also report free, object-wall and object-object frames.
    #[arg(long)]
    per_type: bool,
    /// Add one-step Euler RMSE columns.
    #[arg(long)]
    euler: bool,
    /// Frames between rollout windows (default: the horizon).
    #[arg(long, default_value_t = 0)]
    stride: usize,
    #[arg(long)]
    max_windows: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Write the first rollout of every episode as a predicted dataset.
    #[arg(long)]
    rollouts: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct RenderArgs {
    /// Ground-truth dataset.
    #[arg(long)]
    episode: PathBuf,
    /// Predicted dataset written by `eval --rollouts`.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Episode within the files.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value = "1,3,5,7,9,11")]
    frames: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let argv = match with_config_defaults(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        NUMERICAL
    } else if matches!(e, Error::Config(_)) {
        USAGE
    } else {
        DATA
    }
}

/// Splices `--key value` pairs from the `--config` file right after the
/// subcommand, so flags given on the command line take precedence.
fn with_config_defaults(mut argv: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => {
            let p = p.to_string();
            argv.remove(pos);
            p
        }
        None => {
            if pos + 1 >= argv.len() {
                return Err(Error::Config("--config needs a file".into()));
            }
            argv.remove(pos);
            argv.remove(pos)
        }
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("config file {path}: {e}")))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{path}:{}: expected key=value", n + 1)))?;
        let key = format!("--{}", k.trim().replace('_', "-"));
        match v.trim() {
            "true" => extra.push(key),
            "false" => {}
            v => {
                extra.push(key);
                extra.push(v.to_string());
            }
        }
    }
    let sub = argv
        .iter()
        .skip(1)
        .position(|a| ["generate", "train", "eval", "render"].contains(&a.as_str()))
        .map(|i| i + 2)
        .unwrap_or(argv.len());
    argv.splice(sub..sub, extra);
    Ok(argv)
}

fn run(cli: Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var("PGDYN_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| Error::Config(format!("PGDYN_THREADS={v} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        pgdyn::set_threads(n.max(1))?;
    }
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
    }
}

fn run_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".run.toml");
    PathBuf::from(name)
}

/// World settings recorded with a dataset, or the defaults.
fn dataset_world(data: &Path) -> WorldConfig {
    Manifest::load(&manifest_path(data))
        .ok()
        .and_then(|m| m.config)
        .map(|c| c.world)
        .unwrap_or_default()
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let cfg = GenerateConfig {
        objects: a.objects,
        episodes: a.episodes,
        seed: a.seed,
        world: WorldConfig::default(),
        episode: EpisodeConfig {
            frames: a.frames,
            ..Default::default()
        },
    };
    let data = generate(&cfg)?;
    create_parent(&a.out)?;
    data.save(&a.out)?;
    Manifest::for_dataset(&data, Some(cfg), false).save(&manifest_path(&a.out))?;
    eprintln!(
        "wrote {} episodes, {} object-states to {}",
        data.len(),
        data.object_states(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let variant: Variant = a.variant.parse()?;
    let (blocks, heads, channels) = match a.preset.as_str() {
        "full" => (10, 8, 24),
        "desk" => (2, 4, 8),
        p => return Err(Error::Config(format!("unknown preset {p:?}; expected full or desk"))),
    };
    let data = Dataset::load(&a.data)?;
    let (train_idx, val_idx) = split(data.len(), a.val_fraction, a.seed)?;
    let train_set = data.subset(&train_idx);
    let val_set = data.subset(&val_idx);
    let model_cfg = ModelConfig {
        variant,
        blocks: a.blocks.unwrap_or(blocks),
        heads: a.heads.unwrap_or(heads),
        channels: a.channels.unwrap_or(channels),
        seq_len: a.seq_len,
        objects: data.objects,
        embed_dim: a.embed_dim,
        hidden: a.hidden,
        param_target: a.param_target,
        identity_init: a.identity_init,
        seed: a.seed,
        ..ModelConfig::default()
    };
    let mut model = WorldModel::new(model_cfg)?;
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        weight_decay: a.weight_decay,
        clip_grad_norm: a.clip_grad_norm,
        cosine_decay: a.cosine_decay,
        time_budget_s: a.time_budget,
        eval_horizon: a.eval_horizon,
        eval_every: a.eval_every,
        seed: a.seed,
        ..TrainConfig::default()
    };
    eprintln!(
        "{} model, {} parameters, {} train / {} val episodes",
        variant,
        model.num_params(),
        train_set.len(),
        val_set.len()
    );
    create_parent(&a.out)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| {
        let mut name = a.out.as_os_str().to_owned();
        name.push(".metrics.csv");
        PathBuf::from(name)
    });
    let mut writer = MetricsWriter::new(BufWriter::new(File::create(&metrics_path)?));
    train(&mut model, &train_set, Some(&val_set), &train_cfg, |row| {
        eprintln!(
            "epoch {:>4} {:<5} loss {:.6e}{}",
            row.epoch,
            row.split,
            row.loss,
            row.rmse_10.map(|r| format!(" rmse {r:.6e}")).unwrap_or_default()
        );
        writer.write(row)
    })?;
    model.save(&a.out)?;
    RunManifest::new("train", &a)?.save(&run_manifest_path(&a.out))?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = WorldModel::load(&a.ckpt)?;
    let data = Dataset::load(&a.data)?;
    let cfg = EvalConfig {
        horizon: a.horizon,
        stride: a.stride,
        max_windows_per_episode: a.max_windows,
        euler: a.euler,
        world: dataset_world(&a.data),
    };
    let result = evaluate(&model, &data, &cfg)?;
    let name = a
        .ckpt
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut rows = eval_rows(&name, model.config().variant.name(), a.seed, &result)?;
    if !a.per_type {
        rows.retain(|r| r.frame_type == "all");
    }
    create_parent(&a.out)?;
    write_eval_csv(BufWriter::new(File::create(&a.out)?), &rows)?;
    let run = RunManifest::new("eval", &a)?;
    if let Some(path) = &a.rollouts {
        let first = model.config().seq_len.saturating_sub(1);
        let dump = rollout_dataset(&data, &result.first_rollouts, first)?;
        create_parent(path)?;
        dump.save(path)?;
        let mut m = Manifest::for_dataset(&dump, None, true);
        m.config_hash = run.config_hash.clone();
        m.save(&manifest_path(path))?;
    }
    run.save(&run_manifest_path(&a.out))?;
    if let Some(r) = rows.iter().find(|r| r.horizon == a.horizon && r.variable == "all" && r.frame_type == "all") {
        eprintln!("rmse@{}: {}", a.horizon, r.rmse.map(|v| format!("{v:.6e}")).unwrap_or("-".into()));
    }
    Ok(())
}

/// Predicted episodes indexed like the ground truth: the frames before the
/// rollout start `first` are copied from the data, labels are the
/// ground-truth labels.
fn rollout_dataset(data: &Dataset, rollouts: &[Vec<Vec<ObjectState>>], first: usize) -> Result<Dataset> {
    let mut episodes = Vec::with_capacity(rollouts.len());
    let mut frames = 0;
    for (ep, pred) in data.episodes.iter().zip(rollouts) {
        if pred.is_empty() {
            continue;
        }
        let mut all: Vec<_> = ep.frames[..first].to_vec();
        all.extend(pred.iter().cloned());
        frames = all.len();
        episodes.push(Episode {
            shapes: ep.shapes.clone(),
            labels: ep.labels[..all.len()].to_vec(),
            frames: all,
        });
    }
    Dataset::new(frames, data.objects, episodes)
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let frames = parse_frame_list(&a.frames)?;
    let truth = Dataset::load(&a.episode)?;
    let pred = a.pred.as_deref().map(Dataset::load).transpose()?;
    let ep = truth.episodes.get(a.index).ok_or(Error::Horizon {
        requested: a.index,
        available: truth.len(),
    })?;
    let pred_ep = match &pred {
        Some(p) if !p.is_empty() => Some(p.episodes.get(a.index).ok_or(Error::Horizon {
            requested: a.index,
            available: p.len(),
        })?),
        _ => None,
    };
    let style = RenderStyle {
        arena: dataset_world(&a.episode).arena,
        ..RenderStyle::default()
    };
    let svgs = render_frames(&style, ep, pred_ep, &frames)?;
    fs::create_dir_all(&a.out)?;
    for (f, svg) in svgs {
        fs::write(a.out.join(format!("frame_{f:03}.svg")), svg)?;
    }
    RunManifest::new("render", &a)?.save(&a.out.join("manifest.toml"))?;
    Ok(())
}
