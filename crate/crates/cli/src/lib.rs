//! Command-line driver: training, sampling, long-range generation, metrics,
//! gate statistics and compositing.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gvdiff_core::dgn::collect_skip_stats;
use gvdiff_core::diffusion::{
    evaluation_loss, load_checkpoint, sample_video, save_checkpoint, synthetic_clip, training_step,
    uniform_prompt_table, GroundedUNet, NoiseSchedule, SampleOutput, TrainItem, TrainState, GATED_LAYERS,
};
use gvdiff_core::grounding::{read_track, GroundingTrack};
use gvdiff_core::numerics::ParamStore;
use gvdiff_core::pipeline::{
    build_prompt_schedule, condition_similarity, generate_long_range, metrics_csv, object_composite,
    parse_prompt_at, prompt_consistency, read_mask, read_video, svg_bar_chart, svg_line_chart,
    temporal_consistency, temporal_consistency_all_pairs, write_video, GenerationPlan, PromptSchedule, RunConfig,
    StubEmbedder,
};
use gvdiff_core::stgl::HashTextEmbedder;
use gvdiff_core::{Error, Result};

/// Environment variable that overrides `--seed`.
pub const SEED_ENV: &str = "GVD_SEED";

#[derive(Debug, Parser)]
#[command(name = "gvdiff", about = "Grounded text-to-video diffusion at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one stage on synthetic grounded videos and write a checkpoint.
    Train(TrainArgs),
    /// Sample a latent video for a grounding track.
    Sample(SampleArgs),
    /// Generate a long video chunk by chunk.
    LongRange(LongRangeArgs),
    /// Score a latent video and write a metrics CSV.
    Metrics(MetricsArgs),
    /// Sample and report how often each gated layer skipped grounding.
    GateStats(SampleArgs),
    /// Paste generated content inside a mask over a background.
    Composite(CompositeArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    stage: Option<String>,
}

#[derive(Debug, Args)]
struct PromptArgs {
    #[arg(long)]
    prompt: Option<String>,
    /// `FRAME:TEXT` keyframe; repeatable.
    #[arg(long = "prompt-at")]
    prompt_at: Vec<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    track: PathBuf,
    #[command(flatten)]
    prompts: PromptArgs,
}

#[derive(Debug, Args)]
struct LongRangeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    track: PathBuf,
    #[command(flatten)]
    prompts: PromptArgs,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long = "total-frames")]
    total_frames: Option<usize>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[command(flatten)]
    common: Common,
    /// Latent video to score.
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    prompt: Option<String>,
    /// Grounding track of the generated video, compared with `--reference`.
    #[arg(long, requires = "reference")]
    track: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompositeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    background: PathBuf,
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    mask: PathBuf,
}

fn config_for(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v.trim().parse().map_err(|_| Error::Config {
            key: SEED_ENV.into(),
            msg: format!("`{v}` is not an unsigned integer"),
        })?;
    }
    Ok(cfg)
}

fn apply_prompt_args(cfg: &mut RunConfig, p: &PromptArgs) {
    if let Some(s) = p.steps {
        cfg.steps = s;
    }
    if let Some(s) = p.scale {
        cfg.scale = s;
    }
    if let Some(t) = &p.prompt {
        cfg.prompt = t.clone();
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn text_embedder(cfg: &RunConfig) -> HashTextEmbedder {
    HashTextEmbedder::new(cfg.text_seed, cfg.text_width)
}

fn load_model(cfg: &RunConfig) -> Result<(ParamStore, GroundedUNet)> {
    let mut store = ParamStore::new();
    let model = GroundedUNet::new(cfg.unet(), &mut store, cfg.model_seed);
    if let Some(path) = &cfg.checkpoint {
        load_checkpoint(Path::new(path), &mut store)?;
    }
    Ok((store, model))
}

fn prompt_schedule(cfg: &RunConfig, p: &PromptArgs, frames: usize) -> Result<PromptSchedule> {
    let keyframes = if p.prompt_at.is_empty() {
        vec![(0, cfg.prompt.clone())]
    } else {
        p.prompt_at.iter().map(|s| parse_prompt_at(s)).collect::<Result<Vec<_>>>()?
    };
    build_prompt_schedule(&keyframes, &text_embedder(cfg), frames, cfg.prompt_tokens)
}

fn sample_run(args: &SampleArgs) -> Result<(RunConfig, GroundingTrack, SampleOutput)> {
    let mut cfg = config_for(&args.common)?;
    apply_prompt_args(&mut cfg, &args.prompts);
    cfg.validate()?;
    let track = read_track(&args.track)?;
    let (store, model) = load_model(&cfg)?;
    let prompts = prompt_schedule(&cfg, &args.prompts, track.num_frames)?;
    let out = sample_video(
        &model,
        &store,
        &NoiseSchedule::default(),
        &prompts.table,
        &track,
        &text_embedder(&cfg),
        &cfg.sample(),
    )?;
    Ok((cfg, track, out))
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = config_for(&args.common)?;
    if let Some(s) = &args.stage {
        cfg.stage = s.parse()?;
    }
    let (mut store, model) = load_model(&cfg)?;
    let emb = text_embedder(&cfg);
    let batch: Vec<TrainItem> = (0..cfg.train_videos as u64)
        .map(|i| {
            let c = synthetic_clip(cfg.seed.wrapping_add(i), cfg.train_frames, cfg.channels, cfg.height, cfg.width);
            TrainItem {
                prompt: uniform_prompt_table(&emb, &c.caption, cfg.train_frames, cfg.prompt_tokens),
                z0: c.video,
                track: c.track,
            }
        })
        .collect();
    let schedule = NoiseSchedule::default();
    let mut state = TrainState::new(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.train_steps);
    for _ in 0..cfg.train_steps {
        losses.push(training_step(&model, &mut store, &batch, cfg.stage, &schedule, &cfg.train(), &mut state, &emb)?);
    }
    let held_out = evaluation_loss(&model, &store, &batch, cfg.stage, &schedule, &[100, 500, 900], cfg.seed, &emb)?;
    save_checkpoint(&args.common.out, &store)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    write(&with_suffix(&args.common.out, ".loss.csv"), csv)?;
    let points: Vec<(f64, f64)> = losses.iter().enumerate().map(|(i, l)| ((i + 1) as f64, *l)).collect();
    let title = format!("stage {} training loss", cfg.stage);
    write(&with_suffix(&args.common.out, ".loss.svg"), svg_line_chart(&title, "step", "loss", &points))?;
    println!("trained stage {} for {} steps, evaluation loss {held_out:.6}", cfg.stage, cfg.train_steps);
    Ok(())
}

fn sample(args: &SampleArgs) -> Result<()> {
    let (_, _, out) = sample_run(args)?;
    write_video(&args.common.out, &out.video)
}

fn gate_stats(args: &SampleArgs) -> Result<()> {
    let (_, _, out) = sample_run(args)?;
    let report = collect_skip_stats(&out.trace, GATED_LAYERS)?;
    write(&args.common.out, report.to_csv())?;
    let bars: Vec<(String, f64)> = report.layers.iter().map(|l| (l.layer.to_string(), l.skip_percent)).collect();
    write(
        &with_suffix(&args.common.out, ".svg"),
        svg_bar_chart("grounding skips per layer", "layer index", "skip percentage", &bars),
    )
}

fn long_range(args: &LongRangeArgs) -> Result<()> {
    let mut cfg = config_for(&args.common)?;
    apply_prompt_args(&mut cfg, &args.prompts);
    if let Some(w) = args.window {
        cfg.window = w;
    }
    let track = read_track(&args.track)?;
    cfg.total_frames = args.total_frames.unwrap_or(track.num_frames);
    cfg.validate()?;
    let plan = GenerationPlan::new(cfg.total_frames, cfg.chunk, cfg.window)?;
    let (store, model) = load_model(&cfg)?;
    let prompts = prompt_schedule(&cfg, &args.prompts, cfg.total_frames)?;
    let out = generate_long_range(
        &model,
        &store,
        &NoiseSchedule::default(),
        &track,
        &prompts,
        &plan,
        &text_embedder(&cfg),
        &cfg.sample(),
    )?;
    write_video(&args.common.out, &out.video)
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    let mut cfg = config_for(&args.common)?;
    if let Some(p) = &args.prompt {
        cfg.prompt = p.clone();
    }
    let video = read_video(&args.video)?;
    let emb = StubEmbedder {
        seed: cfg.seed,
        dim: cfg.metric_dim,
    };
    let mut rows = vec![
        ("temporal_consistency", temporal_consistency(&video, &emb)?),
        ("prompt_consistency", prompt_consistency(&video, &cfg.prompt, &emb)?),
    ];
    if cfg.tc_all_pairs {
        rows.push(("temporal_consistency_all_pairs", temporal_consistency_all_pairs(&video, &emb)?));
    }
    if let (Some(t), Some(r)) = (&args.track, &args.reference) {
        let (a, b) = (read_track(t)?, read_track(r)?);
        rows.push((
            "condition_similarity",
            condition_similarity(&a, &b, video.width, video.height, &cfg.grounding())?,
        ));
    }
    write(&args.common.out, metrics_csv(&rows))
}

fn composite(args: &CompositeArgs) -> Result<()> {
    config_for(&args.common)?;
    let background = read_video(&args.background)?;
    let generated = read_video(&args.generated)?;
    let mask = read_mask(&args.mask)?;
    write_video(&args.common.out, &object_composite(&background, &generated, &mask)?)
}

/// Runs one command. Returns 0 on success, 2 for usage errors and 1 for
/// configuration, input or output failures.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::LongRange(a) => long_range(a),
        Command::Metrics(a) => metrics(a),
        Command::GateStats(a) => gate_stats(a),
        Command::Composite(a) => composite(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
