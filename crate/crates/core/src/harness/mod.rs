//! Benchmark harness: embed a dataset, attack it, detect, and aggregate
//! WDR / AUC / TPR@1%FPR tables, with sweep support for the ablation axes.
//!
//! Negatives for the ranking metrics are the un-watermarked originals passed
//! through the same attack and scored against the record of their paired
//! positive. Every run also evaluates the identity-flow variant (plain ring
//! key, no learned refinement) as the built-in baseline.
//!
//! Fixed seeds make result tables byte-identical across runs; wall-clock
//! timings go to a separate file that is excluded from that guarantee.

pub mod roc;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackContext, AttackKind};
use crate::detection::{detect, DetectConfig, DetectionReport};
use crate::diffusion::{
    ddim_generate, ddim_invert, generate_toy_dataset, NoisePredictor, NoiseSchedule,
    ToyDatasetConfig,
};
use crate::error::{Error, Result};
use crate::flow::train::FlowTrainConfig;
use crate::flow::FlowPair;
use crate::metrics::{psnr, ssim};
use crate::tensor::RealTensor;
use crate::watermark::embed::{embed_with_key, EmbedConfig};
use crate::watermark::{circular_mask, ring_key, CircularMask, RingKey, WatermarkRecord};

pub use roc::{auc, tpr_at_fpr, wdr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Trained flow watermark.
    Wf,
    /// Identity flow: plain ring-key embedding.
    Identity,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Wf => "wf",
            Variant::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t_steps: 50,
            beta_start: 1e-4,
            beta_end: 0.2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        crate::diffusion::make_schedule(self.t_steps, self.beta_start, self.beta_end)
    }
}

/// Fully serializable description of one benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub dataset: ToyDatasetConfig,
    pub schedule: ScheduleConfig,
    pub embed: EmbedConfig,
    pub detect: DetectConfig,
    pub attacks: Vec<AttackKind>,
    pub attack_seed: u64,
    pub variants: Vec<Variant>,
    pub jobs: usize,
    /// Checkpoint directories, required by the file-based entry point.
    pub denoiser_checkpoint: Option<PathBuf>,
    pub flow_checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            dataset: ToyDatasetConfig::default(),
            schedule: ScheduleConfig::default(),
            embed: EmbedConfig::default(),
            detect: DetectConfig::default(),
            attacks: AttackKind::standard_suite(),
            attack_seed: 1234,
            variants: vec![Variant::Wf, Variant::Identity],
            jobs: 1,
            denoiser_checkpoint: None,
            flow_checkpoint: None,
            output_dir: None,
        }
    }
}

/// In-memory pipeline handles for a run.
pub struct PipelineStack {
    pub predictor: NoisePredictor,
    pub sched: NoiseSchedule,
    pub flow: FlowPair,
    pub key: RingKey,
    pub mask: CircularMask,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub variant: String,
    pub attack: String,
    pub images: usize,
    pub wdr: f64,
    pub auc: f64,
    pub tpr_at_1fpr: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,attack,images,wdr,auc,tpr_at_1fpr,mean_psnr,mean_ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.variant, r.attack, r.images, r.wdr, r.auc, r.tpr_at_1fpr, r.mean_psnr, r.mean_ssim
            ));
        }
        out
    }

    /// Mean AUC over post-attack rows (everything except the pre-attack row)
    /// for one variant.
    pub fn mean_post_attack_auc(&self, variant: Variant) -> Option<f64> {
        let rows: Vec<&ResultRow> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant.label() && r.attack != "identity")
            .collect();
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|r| r.auc).sum::<f64>() / rows.len() as f64)
    }

    pub fn row(&self, variant: Variant, attack: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant.label() && r.attack == attack)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub variant: String,
    pub image: usize,
    pub kind: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

impl TimingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,image,kind,seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6}\n",
                r.variant, r.image, r.kind, r.seconds
            ));
        }
        out
    }

    pub fn mean_seconds(&self, variant: Variant, kind: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant.label() && r.kind == kind)
            .map(|r| r.seconds)
            .collect();
        if vals.is_empty() {
            return None;
        }
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub struct BenchmarkOutput {
    pub table: ResultTable,
    pub timing: TimingTable,
}

/// Detection reports for one (variant, attack) cell.
struct AttackScores {
    pos_reports: Vec<DetectionReport>,
    neg_scores: Vec<f64>,
}

fn stage_seed(base: u64, attack: &str, image: usize, positive: bool) -> u64 {
    // Cheap deterministic mixing; stable across platforms.
    let mut h = base ^ 0x517c_c1b7_2722_0a95;
    for b in attack.bytes() {
        h = h.wrapping_mul(0x100_0000_01b3).wrapping_add(b as u64);
    }
    h = h.wrapping_mul(31).wrapping_add(image as u64);
    h.wrapping_mul(2).wrapping_add(positive as u64)
}

fn run_jobs<T: Send, F: Fn(usize) -> Result<T> + Sync>(
    n: usize,
    jobs: usize,
    f: F,
) -> Result<Vec<T>> {
    if jobs <= 1 {
        (0..n).map(f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        pool.install(|| (0..n).into_par_iter().map(|i| f(i)).collect())
    }
}

/// Run the benchmark against in-memory pipeline handles.
pub fn run_benchmark_with(stack: &PipelineStack, spec: &BenchmarkSpec) -> Result<BenchmarkOutput> {
    let images = generate_toy_dataset(&spec.dataset)?;
    if images.is_empty() {
        return Err(Error::config("benchmark needs a nonempty dataset"));
    }
    let (c, h, w) = spec.dataset.shape;
    let _ = c;
    if stack.mask.height() != h || stack.mask.width() != w {
        return Err(Error::config("stack mask does not match dataset shape"));
    }

    let mut table = ResultTable::default();
    let mut timing = TimingTable::default();
    let identity_flow = FlowPair::identity(spec.dataset.shape.0, h, w);

    for &variant in &spec.variants {
        let flow = match variant {
            Variant::Wf => &stack.flow,
            Variant::Identity => &identity_flow,
        };

        // Embed the whole dataset.
        let embeds: Vec<(RealTensor, WatermarkRecord, f64)> = run_jobs(images.len(), spec.jobs, |i| {
            let started = Instant::now();
            let (marked, record) = embed_with_key(
                &images[i],
                &stack.key,
                &stack.mask,
                flow,
                &stack.predictor,
                &stack.sched,
                &spec.embed,
            )?;
            Ok((marked, record, started.elapsed().as_secs_f64()))
        })?;

        for (i, (_, _, secs)) in embeds.iter().enumerate() {
            timing.rows.push(TimingRow {
                variant: variant.label().into(),
                image: i,
                kind: "embed".into(),
                seconds: *secs,
            });
        }
        // Reference cost of one inversion plus one generation, on a few images.
        for i in 0..images.len().min(4) {
            let started = Instant::now();
            let z = ddim_invert(&images[i], &stack.predictor, &stack.sched)?;
            let _ = ddim_generate(&z, &stack.predictor, &stack.sched)?;
            timing.rows.push(TimingRow {
                variant: variant.label().into(),
                image: i,
                kind: "invert_generate".into(),
                seconds: started.elapsed().as_secs_f64(),
            });
        }

        let mean_psnr = embeds
            .iter()
            .enumerate()
            .map(|(i, (m, _, _))| psnr(m, &images[i]).unwrap_or(f64::INFINITY))
            .sum::<f64>()
            / images.len() as f64;
        let mean_ssim = embeds
            .iter()
            .enumerate()
            .map(|(i, (m, _, _))| ssim(m, &images[i]).unwrap_or(0.0))
            .sum::<f64>()
            / images.len() as f64;

        // Pre-attack row plus every configured attack.
        let mut kinds = vec![AttackKind::Identity];
        kinds.extend(spec.attacks.iter().copied());
        for kind in kinds {
            let label = kind.label();
            let scores = run_jobs(images.len(), spec.jobs, |i| {
                let ctx = AttackContext {
                    predictor: &stack.predictor,
                    sched: &stack.sched,
                };
                let (marked, record, _) = &embeds[i];
                let attacked_pos =
                    attacks::apply(marked, kind, &ctx, stage_seed(spec.attack_seed, &label, i, true))?;
                let attacked_neg = attacks::apply(
                    &images[i],
                    kind,
                    &ctx,
                    stage_seed(spec.attack_seed, &label, i, false),
                )?;
                let pos = detect(
                    &attacked_pos,
                    record,
                    flow,
                    &stack.predictor,
                    &stack.sched,
                    &spec.detect,
                )?;
                let neg = detect(
                    &attacked_neg,
                    record,
                    flow,
                    &stack.predictor,
                    &stack.sched,
                    &spec.detect,
                )?;
                Ok((pos, neg.detection_probability))
            })?;
            let cell = AttackScores {
                pos_reports: scores.iter().map(|(p, _)| p.clone()).collect(),
                neg_scores: scores.iter().map(|(_, n)| *n).collect(),
            };
            let pos_scores: Vec<f64> = cell
                .pos_reports
                .iter()
                .map(|r| r.detection_probability)
                .collect();
            table.rows.push(ResultRow {
                variant: variant.label().into(),
                attack: label,
                images: images.len(),
                wdr: wdr(&cell.pos_reports, spec.detect.threshold)?,
                auc: auc(&pos_scores, &cell.neg_scores)?,
                tpr_at_1fpr: tpr_at_fpr(&pos_scores, &cell.neg_scores, 0.01)?,
                mean_psnr,
                mean_ssim,
            });
        }
    }
    Ok(BenchmarkOutput { table, timing })
}

/// File-based entry point: loads referenced checkpoints, runs, writes
/// `results.csv`, `results.json`, and `timing.csv` to the output directory.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkOutput> {
    let stack = load_stack(spec)?;
    let out = run_benchmark_with(&stack, spec)?;
    if let Some(dir) = &spec.output_dir {
        write_outputs(dir, &out)?;
    }
    Ok(out)
}

/// Load predictor and flow checkpoints referenced by the spec.
pub fn load_stack(spec: &BenchmarkSpec) -> Result<PipelineStack> {
    let denoiser_dir = spec
        .denoiser_checkpoint
        .as_ref()
        .ok_or_else(|| Error::config("spec has no denoiser checkpoint path"))?;
    let flow_dir = spec
        .flow_checkpoint
        .as_ref()
        .ok_or_else(|| Error::config("spec has no flow checkpoint path"))?;
    let predictor = crate::checkpoint::load_predictor(denoiser_dir)?;
    let flow = crate::flow::load_flow(flow_dir)?;
    let sched = spec.schedule.build()?;
    let (_, h, w) = spec.dataset.shape;
    let key = ring_key(spec.embed.key_seed, spec.embed.radius, h, w)?;
    let mask = circular_mask(h, w, spec.embed.radius)?;
    Ok(PipelineStack {
        predictor,
        sched,
        flow,
        key,
        mask,
    })
}

pub fn write_outputs(dir: impl AsRef<Path>, out: &BenchmarkOutput) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("results.csv"), out.table.to_csv())?;
    fs::write(
        dir.join("results.json"),
        serde_json::to_string_pretty(&out.table)?,
    )?;
    fs::write(dir.join("timing.csv"), out.timing.to_csv())?;
    Ok(())
}

/// Sweep axes from the ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LambdaN,
    Radius,
    SsimThreshold,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<SweepAxis> {
        match name {
            "lambda_n" => Ok(SweepAxis::LambdaN),
            "radius" => Ok(SweepAxis::Radius),
            "ssim_threshold" => Ok(SweepAxis::SsimThreshold),
            other => Err(Error::config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub point: f64,
    pub table: ResultTable,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummaryRow {
    pub point: f64,
    pub mean_post_attack_auc: f64,
    pub pre_attack_wdr: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

pub struct SweepOutput {
    pub points: Vec<SweepPoint>,
    pub summary: Vec<SweepSummaryRow>,
}

impl SweepOutput {
    pub fn summary_csv(&self) -> String {
        let mut out =
            String::from("point,mean_post_attack_auc,pre_attack_wdr,mean_psnr,mean_ssim\n");
        for r in &self.summary {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.point, r.mean_post_attack_auc, r.pre_attack_wdr, r.mean_psnr, r.mean_ssim
            ));
        }
        out
    }
}

/// Train/embed/evaluate per sweep point. The flow is retrained where the
/// axis enters training (loss weight, radius); the SSIM-threshold axis only
/// affects enhancement, so those points share one trained flow.
pub fn run_sweep(
    images_spec: &BenchmarkSpec,
    flow_train: &FlowTrainConfig,
    predictor: &NoisePredictor,
    axis: SweepAxis,
    points: &[f64],
) -> Result<SweepOutput> {
    if points.len() < 2 {
        return Err(Error::config("sweep needs at least 2 axis points"));
    }
    let sched = images_spec.schedule.build()?;
    let (_, h, w) = images_spec.dataset.shape;
    let images = generate_toy_dataset(&images_spec.dataset)?;

    let mut shared_flow: Option<FlowPair> = None;
    let mut out_points = Vec::new();
    let mut summary = Vec::new();

    for &point in points {
        let mut spec = images_spec.clone();
        let mut train_cfg = flow_train.clone();
        match axis {
            SweepAxis::LambdaN => train_cfg.lambda_n = point,
            SweepAxis::Radius => spec.embed.radius = point,
            SweepAxis::SsimThreshold => spec.embed.ssim_threshold = point,
        }
        let key = ring_key(spec.embed.key_seed, spec.embed.radius, h, w)?;
        let mask = circular_mask(h, w, spec.embed.radius)?;

        let flow = match axis {
            SweepAxis::SsimThreshold => {
                if shared_flow.is_none() {
                    let (f, _) = crate::flow::train::train_flow(
                        &images,
                        &key,
                        &mask,
                        spec.embed.inject_scope,
                        predictor,
                        &sched,
                        &train_cfg,
                    )?;
                    shared_flow = Some(f);
                }
                shared_flow.clone().expect("trained above")
            }
            _ => {
                let (f, _) = crate::flow::train::train_flow(
                    &images,
                    &key,
                    &mask,
                    spec.embed.inject_scope,
                    predictor,
                    &sched,
                    &train_cfg,
                )?;
                f
            }
        };

        let stack = PipelineStack {
            predictor: predictor.clone(),
            sched: sched.clone(),
            flow,
            key,
            mask,
        };
        let result = run_benchmark_with(&stack, &spec)?;
        let pre = result
            .table
            .row(Variant::Wf, "identity")
            .ok_or_else(|| Error::Contract("missing pre-attack row".into()))?;
        summary.push(SweepSummaryRow {
            point,
            mean_post_attack_auc: result.table.mean_post_attack_auc(Variant::Wf).unwrap_or(0.0),
            pre_attack_wdr: pre.wdr,
            mean_psnr: pre.mean_psnr,
            mean_ssim: pre.mean_ssim,
        });
        out_points.push(SweepPoint {
            point,
            table: result.table,
        });
    }
    Ok(SweepOutput {
        points: out_points,
        summary,
    })
}
