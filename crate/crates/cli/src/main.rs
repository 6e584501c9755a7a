//! Single-binary front end: dataset generation, denoiser and flow training,
//! embedding, attacks, detection, and the benchmark harness.
//!
//! Every run emits JSON log lines on stderr (one object per line) including
//! a reproducibility header with the seed, config hash, and version; stdout
//! carries only the command's primary output (e.g. the detection report).
//! Exit codes: 0 success / watermark detected, 1 watermark not detected,
//! 2 error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentmark::attacks::{self, AttackContext, AttackKind};
use latentmark::checkpoint::{load_predictor, save_predictor};
use latentmark::detection::{detect, DetectConfig, DetectMode};
use latentmark::diffusion::{generate_toy_dataset, train_denoiser, NoisePredictor};
use latentmark::error::Error;
use latentmark::flow::train::train_flow;
use latentmark::flow::{load_flow, save_flow, FlowPair};
use latentmark::harness::{self, BenchmarkSpec, SweepAxis};
use latentmark::watermark::embed::{embed, EmbedConfig};
use latentmark::watermark::{circular_mask, ring_key, WatermarkRecord};
use latentmark::{imageio, ltns, RealTensor};

use config::ProjectConfig;

#[derive(Parser)]
#[command(name = "latentmark", version, about = "Latent-space watermarking pipeline")]
struct Cli {
    /// Project configuration file (JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker pool size for per-image jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural dataset as LTNS files.
    Dataset(DatasetArgs),
    /// Train the convnet noise predictor and write a checkpoint.
    TrainDenoiser(TrainDenoiserArgs),
    /// Train the flow watermark pair and write a checkpoint.
    TrainFlow(TrainFlowArgs),
    /// Embed a watermark into one image.
    Embed(EmbedArgs),
    /// Apply a perturbation to an image.
    Attack(AttackArgs),
    /// Verify the presence of a watermark.
    Detect(DetectArgs),
    /// Benchmark harness.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Convert between LTNS and PGM/PPM.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct TrainDenoiserArgs {
    /// Output checkpoint directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct TrainFlowArgs {
    /// Trained denoiser checkpoint directory.
    #[arg(long)]
    denoiser: PathBuf,
    /// Output checkpoint directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda_n: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    /// Checkpoint log CSV path (step, loss).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Input image (LTNS or PGM/PPM).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    key_seed: Option<u64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    ssim_threshold: Option<f64>,
    /// Flow checkpoint directory.
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    denoiser: Option<PathBuf>,
    /// Persist the learned watermark plane in the record.
    #[arg(long)]
    store_wstar: Option<bool>,
    /// Watermarked image output.
    #[arg(long)]
    output: PathBuf,
    /// Watermark record output (JSON).
    #[arg(long)]
    record: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    input: PathBuf,
    /// Attack name: brightness|contrast|jpeg|rotation|gnoise|gblur|regen|all|all_no_rotation.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    quality: Option<u32>,
    #[arg(long)]
    std: Option<f64>,
    #[arg(long)]
    factor: Option<f64>,
    #[arg(long)]
    t_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Denoiser checkpoint (needed by regen and composite kinds).
    #[arg(long)]
    denoiser: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Watermark record JSON produced by `embed`.
    #[arg(long)]
    record: PathBuf,
    /// stored | recompute
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    flow: Option<PathBuf>,
    #[arg(long)]
    denoiser: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a benchmark spec end to end.
    Run(BenchRunArgs),
    /// Sweep one ablation axis.
    Sweep(BenchSweepArgs),
}

#[derive(Args)]
struct BenchRunArgs {
    /// Benchmark spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Override the spec's output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchSweepArgs {
    #[arg(long)]
    spec: PathBuf,
    /// lambda_n | radius | ssim_threshold
    #[arg(long)]
    axis: String,
    /// Comma-separated axis points, e.g. `5,10,15,20`.
    #[arg(long)]
    points: String,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

fn log_line(value: serde_json::Value) {
    eprintln!("{value}");
}

fn load_image(path: &Path) -> latentmark::Result<RealTensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") | Some("ppm") | Some("pnm") => imageio::read_pnm(path),
        _ => ltns::read_real(path),
    }
}

fn save_image(path: &Path, image: &RealTensor) -> latentmark::Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") | Some("ppm") | Some("pnm") => imageio::write_pnm(path, image),
        _ => ltns::write_real(path, image),
    }
}

fn require_path<'a>(
    flag: Option<&'a PathBuf>,
    from_config: Option<&'a PathBuf>,
    what: &str,
) -> latentmark::Result<&'a PathBuf> {
    flag.or(from_config).ok_or_else(|| {
        Error::Config(format!(
            "{what} not given; pass the flag or set it in the project config"
        ))
    })
}

fn run(cli: Cli) -> latentmark::Result<i32> {
    let cfg = match &cli.config {
        Some(path) => ProjectConfig::load(path)?,
        None => ProjectConfig::default(),
    };
    log_line(serde_json::json!({
        "event": "start",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_hash": format!("{:016x}", cfg.hash()),
        "jobs": cli.jobs,
    }));

    match cli.command {
        Command::Dataset(args) => {
            let mut ds = cfg.dataset.clone();
            if let Some(seed) = args.seed {
                ds.seed = seed;
            }
            if let Some(count) = args.count {
                ds.count = count;
            }
            log_line(serde_json::json!({"event": "dataset", "config": &ds}));
            let images = generate_toy_dataset(&ds)?;
            std::fs::create_dir_all(&args.output)?;
            let mut index = Vec::new();
            for (i, img) in images.iter().enumerate() {
                let name = format!("image_{i:04}.ltns");
                ltns::write_real(args.output.join(&name), img)?;
                index.push(name);
            }
            std::fs::write(
                args.output.join("index.json"),
                serde_json::to_string_pretty(&index)?,
            )?;
            log_line(serde_json::json!({"event": "done", "count": images.len()}));
            Ok(0)
        }
        Command::TrainDenoiser(args) => {
            let mut tcfg = cfg.denoiser_train.clone();
            if let Some(seed) = args.seed {
                tcfg.seed = seed;
            }
            if let Some(epochs) = args.epochs {
                tcfg.epochs = epochs;
            }
            let sched = cfg.schedule.build()?;
            let images = generate_toy_dataset(&cfg.dataset)?;
            log_line(serde_json::json!({
                "event": "train_denoiser",
                "config": &tcfg,
                "dataset": &cfg.dataset,
                "schedule": &cfg.schedule,
            }));
            let predictor = train_denoiser(&images, &sched, &tcfg)?;
            save_predictor(&args.output, &NoisePredictor::ConvNet(predictor))?;
            log_line(serde_json::json!({"event": "done", "checkpoint": args.output}));
            Ok(0)
        }
        Command::TrainFlow(args) => {
            let mut tcfg = cfg.flow_train.clone();
            if let Some(seed) = args.seed {
                tcfg.seed = seed;
            }
            if let Some(epochs) = args.epochs {
                tcfg.epochs = epochs;
            }
            if let Some(lambda_n) = args.lambda_n {
                tcfg.lambda_n = lambda_n;
            }
            let mut embed_cfg = cfg.embed.clone();
            if let Some(radius) = args.radius {
                embed_cfg.radius = radius;
            }
            let predictor = load_predictor(&args.denoiser)?;
            let sched = cfg.schedule.build()?;
            let images = generate_toy_dataset(&cfg.dataset)?;
            let (_, h, w) = cfg.dataset.shape;
            let key = ring_key(embed_cfg.key_seed, embed_cfg.radius, h, w)?;
            let mask = circular_mask(h, w, embed_cfg.radius)?;
            log_line(serde_json::json!({
                "event": "train_flow",
                "config": &tcfg,
                "embed": &embed_cfg,
                "dataset": &cfg.dataset,
            }));
            let (flow, log) = train_flow(
                &images,
                &key,
                &mask,
                embed_cfg.inject_scope,
                &predictor,
                &sched,
                &tcfg,
            )?;
            let best = log.iter().map(|e| e.loss).fold(f64::INFINITY, f64::min);
            save_flow(
                &args.output,
                &flow,
                serde_json::json!({
                    "seed": tcfg.seed,
                    "step": log.len(),
                    "loss": best,
                }),
            )?;
            if let Some(log_path) = args.log {
                let mut csv = String::from("step,loss\n");
                for e in &log {
                    csv.push_str(&format!("{},{:.9}\n", e.step, e.loss));
                }
                std::fs::write(log_path, csv)?;
            }
            log_line(serde_json::json!({"event": "done", "checkpoint": args.output, "steps": log.len()}));
            Ok(0)
        }
        Command::Embed(args) => {
            let mut ecfg: EmbedConfig = cfg.embed.clone();
            if let Some(seed) = args.key_seed {
                ecfg.key_seed = seed;
            }
            if let Some(radius) = args.radius {
                ecfg.radius = radius;
            }
            if let Some(thr) = args.ssim_threshold {
                ecfg.ssim_threshold = thr;
            }
            if let Some(store) = args.store_wstar {
                ecfg.store_w_star = store;
            }
            let flow_dir = require_path(
                args.flow.as_ref(),
                cfg.paths.flow_checkpoint.as_ref(),
                "flow checkpoint",
            )?;
            let den_dir = require_path(
                args.denoiser.as_ref(),
                cfg.paths.denoiser_checkpoint.as_ref(),
                "denoiser checkpoint",
            )?;
            ecfg.flow_id = flow_dir.display().to_string();
            ecfg.predictor_id = den_dir.display().to_string();
            ecfg.schedule_id = format!(
                "linear:{}:{}:{}",
                cfg.schedule.t_steps, cfg.schedule.beta_start, cfg.schedule.beta_end
            );
            let flow = load_flow(flow_dir)?;
            let predictor = load_predictor(den_dir)?;
            let sched = cfg.schedule.build()?;
            let image = load_image(&args.input)?;
            log_line(serde_json::json!({"event": "embed", "config": &ecfg, "input": args.input}));
            let (marked, record) = embed(&image, &flow, &predictor, &sched, &ecfg)?;
            save_image(&args.output, &marked)?;
            record.save(&args.record)?;
            log_line(serde_json::json!({
                "event": "done",
                "output": args.output,
                "record": args.record,
                "gamma": record.gamma,
            }));
            Ok(0)
        }
        Command::Attack(args) => {
            let mut kind = AttackKind::parse(&args.kind)?;
            match (&mut kind, args.quality, args.std, args.factor, args.t_steps) {
                (AttackKind::Jpeg { quality }, Some(q), _, _, _) => *quality = q,
                (AttackKind::GaussianNoise { std }, _, Some(s), _, _) => *std = s,
                (AttackKind::Brightness { factor }, _, _, Some(f), _) => *factor = f,
                (AttackKind::Contrast { factor }, _, _, Some(f), _) => *factor = f,
                (AttackKind::Regen { t_steps }, _, _, _, Some(t)) => *t_steps = t,
                _ => {}
            }
            let needs_diffusion = matches!(
                kind,
                AttackKind::Regen { .. } | AttackKind::All | AttackKind::AllNoRotation
            );
            let predictor = if needs_diffusion {
                let den_dir = require_path(
                    args.denoiser.as_ref(),
                    cfg.paths.denoiser_checkpoint.as_ref(),
                    "denoiser checkpoint",
                )?;
                load_predictor(den_dir)?
            } else {
                NoisePredictor::Linear(Default::default())
            };
            let sched = cfg.schedule.build()?;
            let image = load_image(&args.input)?;
            log_line(serde_json::json!({"event": "attack", "kind": &kind, "seed": args.seed}));
            let ctx = AttackContext {
                predictor: &predictor,
                sched: &sched,
            };
            let attacked = attacks::apply(&image, kind, &ctx, args.seed)?;
            save_image(&args.output, &attacked)?;
            log_line(serde_json::json!({"event": "done", "output": args.output}));
            Ok(0)
        }
        Command::Detect(args) => {
            let mut dcfg: DetectConfig = cfg.detect.clone();
            if let Some(mode) = &args.mode {
                dcfg.mode = match mode.as_str() {
                    "stored" => DetectMode::Stored,
                    "recompute" => DetectMode::Recompute,
                    other => return Err(Error::Config(format!("unknown detect mode '{other}'"))),
                };
            }
            if let Some(thr) = args.threshold {
                dcfg.threshold = thr;
            }
            let record = WatermarkRecord::load(&args.record)?;
            let den_dir = require_path(
                args.denoiser.as_ref(),
                cfg.paths.denoiser_checkpoint.as_ref(),
                "denoiser checkpoint",
            )?;
            let predictor = load_predictor(den_dir)?;
            let sched = cfg.schedule.build()?;
            let image = load_image(&args.input)?;
            // The flow is only consulted in recompute mode; stored mode uses
            // the persisted plane.
            let flow = match (&dcfg.mode, args.flow.as_ref().or(cfg.paths.flow_checkpoint.as_ref())) {
                (DetectMode::Recompute, Some(dir)) => load_flow(dir)?,
                (DetectMode::Recompute, None) => {
                    return Err(Error::Config(
                        "recompute mode needs a flow checkpoint".into(),
                    ))
                }
                (DetectMode::Stored, Some(dir)) if dir.exists() => load_flow(dir)?,
                _ => {
                    let (c, h, w) = image.shape();
                    FlowPair::identity(c, h, w)
                }
            };
            log_line(serde_json::json!({"event": "detect", "config": &dcfg, "input": args.input}));
            let report = detect(&image, &record, &flow, &predictor, &sched, &dcfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.decision { 0 } else { 1 })
        }
        Command::Bench(BenchCommand::Run(args)) => {
            let text = std::fs::read_to_string(&args.spec)?;
            let mut spec: BenchmarkSpec = serde_json::from_str(&text)?;
            if let Some(out) = args.output {
                spec.output_dir = Some(out);
            }
            if cli.jobs > 1 {
                spec.jobs = cli.jobs;
            }
            log_line(serde_json::json!({"event": "bench_run", "spec": &spec}));
            let out = harness::run_benchmark(&spec)?;
            print!("{}", out.table.to_csv());
            log_line(serde_json::json!({"event": "done", "rows": out.table.rows.len()}));
            Ok(0)
        }
        Command::Bench(BenchCommand::Sweep(args)) => {
            let text = std::fs::read_to_string(&args.spec)?;
            let mut spec: BenchmarkSpec = serde_json::from_str(&text)?;
            if cli.jobs > 1 {
                spec.jobs = cli.jobs;
            }
            let axis = SweepAxis::parse(&args.axis)?;
            let points: Vec<f64> = args
                .points
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad axis point '{p}'")))
                })
                .collect::<latentmark::Result<_>>()?;
            let den_dir = spec
                .denoiser_checkpoint
                .clone()
                .or(cfg.paths.denoiser_checkpoint.clone())
                .ok_or_else(|| Error::Config("sweep needs a denoiser checkpoint".into()))?;
            let predictor = load_predictor(&den_dir)?;
            log_line(serde_json::json!({
                "event": "bench_sweep",
                "axis": &axis,
                "points": &points,
            }));
            let out = harness::run_sweep(&spec, &cfg.flow_train, &predictor, axis, &points)?;
            print!("{}", out.summary_csv());
            if let Some(dir) = args.output.or(spec.output_dir.clone()) {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("sweep_summary.csv"), out.summary_csv())?;
                for point in &out.points {
                    std::fs::write(
                        dir.join(format!("results_{}.csv", point.point)),
                        point.table.to_csv(),
                    )?;
                }
            }
            log_line(serde_json::json!({"event": "done", "points": out.points.len()}));
            Ok(0)
        }
        Command::Convert(args) => {
            let image = load_image(&args.input)?;
            save_image(&args.output, &image)?;
            log_line(serde_json::json!({"event": "done", "output": args.output}));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            log_line(serde_json::json!({"event": "error", "error": err.to_string()}));
            ExitCode::from(2)
        }
    }
}
