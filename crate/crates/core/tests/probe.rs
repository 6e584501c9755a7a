//! Temporary calibration probe (development scaffolding; removed once the
//! acceptance thresholds are pinned).

use std::time::Instant;

use latentmark::attacks::AttackKind;
use latentmark::detection::{detect, DetectConfig};
use latentmark::diffusion::*;
use latentmark::flow::train::{train_flow, FlowTrainConfig};
use latentmark::flow::FlowPair;
use latentmark::harness::*;
use latentmark::metrics::{psnr, ssim};
use latentmark::tensor::RealTensor;
use latentmark::watermark::embed::{embed_with_key, EmbedConfig};
use latentmark::watermark::{circular_mask, ring_key, InjectScope};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_latent(seed: u64, shape: (usize, usize, usize)) -> RealTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.0 * shape.1 * shape.2;
    RealTensor::from_vec(
        shape,
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )
    .unwrap()
}

#[test]
#[ignore]
fn probe_pipeline() {
    let shape = (4usize, 32usize, 32usize);
    let sched = default_schedule();
    let images = generate_toy_dataset(&ToyDatasetConfig {
        seed: 1,
        count: 32,
        shape,
        ..Default::default()
    })
    .unwrap();

    // 1. Denoiser training time + quality.
    let t0 = Instant::now();
    let den_cfg = DenoiserTrainConfig::default();
    let predictor_net = train_denoiser(&images, &sched, &den_cfg).unwrap();
    println!("denoiser training: {:.1}s", t0.elapsed().as_secs_f64());
    let predictor = NoisePredictor::ConvNet(predictor_net);

    // 2. Round-trip quality G'(G(z)) on pure-noise latents.
    let mut errs = Vec::new();
    for seed in 0..20 {
        let z = gaussian_latent(500 + seed, shape);
        let img = ddim_generate(&z, &predictor, &sched).unwrap();
        let back = ddim_invert(&img, &predictor, &sched).unwrap();
        errs.push(back.sub(&z).unwrap().max_abs());
    }
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "noise round-trip max-err: median {:.4} p95 {:.4} max {:.4}",
        errs[10], errs[18], errs[19]
    );

    // Round trip on images: G(G'(x)) vs x.
    let mut img_errs = Vec::new();
    for img in images.iter().take(8) {
        let z = ddim_invert(img, &predictor, &sched).unwrap();
        let back = ddim_generate(&z, &predictor, &sched).unwrap();
        img_errs.push((
            back.sub(img).unwrap().max_abs(),
            psnr(&back, img).unwrap(),
            ssim(&back, img).unwrap(),
        ));
    }
    println!("image round-trip (max_err, psnr, ssim): {:?}", img_errs);

    // 3. Identity-flow embedding + detection.
    let (c, h, w) = shape;
    let _ = c;
    let radius = 10.0;
    let key = ring_key(42, radius, h, w).unwrap();
    let mask = circular_mask(h, w, radius).unwrap();
    let id_flow = FlowPair::identity(shape.0, h, w);
    let embed_cfg = EmbedConfig {
        radius,
        ..Default::default()
    };
    let det_cfg = DetectConfig::default();

    let t0 = Instant::now();
    let mut det_probs = Vec::new();
    let mut gammas = Vec::new();
    let mut fp_probs = Vec::new();
    for img in images.iter().take(16) {
        let (marked, record) =
            embed_with_key(img, &key, &mask, &id_flow, &predictor, &sched, &embed_cfg).unwrap();
        let rep = detect(&marked, &record, &id_flow, &predictor, &sched, &det_cfg).unwrap();
        det_probs.push(rep.detection_probability);
        gammas.push(record.gamma);
        let neg = detect(img, &record, &id_flow, &predictor, &sched, &det_cfg).unwrap();
        fp_probs.push(neg.detection_probability);
    }
    println!(
        "identity flow: 16 embed+2detect in {:.1}s",
        t0.elapsed().as_secs_f64()
    );
    println!("identity det probs: {det_probs:.2?}");
    println!("identity gammas: {gammas:.2?}");
    println!("identity neg det probs: {fp_probs:.2?}");

    // 4. Flow training (short) + detection after.
    let t0 = Instant::now();
    let train_cfg = FlowTrainConfig {
        epochs: 2,
        seed: 3,
        ..Default::default()
    };
    let (flow, log) = train_flow(
        &images,
        &key,
        &mask,
        InjectScope::LastChannel,
        &predictor,
        &sched,
        &train_cfg,
    )
    .unwrap();
    println!(
        "flow training ({} steps): {:.1}s; loss {:.4} -> {:.4}",
        log.len(),
        t0.elapsed().as_secs_f64(),
        log.first().unwrap().loss,
        log.last().unwrap().loss
    );

    let mut det_probs = Vec::new();
    let mut fp_probs = Vec::new();
    let mut psnrs = Vec::new();
    for img in images.iter().take(16) {
        let (marked, record) =
            embed_with_key(img, &key, &mask, &flow, &predictor, &sched, &embed_cfg).unwrap();
        let rep = detect(&marked, &record, &flow, &predictor, &sched, &det_cfg).unwrap();
        det_probs.push(rep.detection_probability);
        psnrs.push(psnr(&marked, img).unwrap());
        let neg = detect(img, &record, &flow, &predictor, &sched, &det_cfg).unwrap();
        fp_probs.push(neg.detection_probability);
    }
    println!("wf det probs: {det_probs:.3?}");
    println!("wf neg det probs: {fp_probs:.3?}");
    println!("wf psnr: {psnrs:.1?}");

    // 5. Small attack benchmark comparing variants.
    let spec = BenchmarkSpec {
        dataset: ToyDatasetConfig {
            seed: 1,
            count: 8,
            shape,
            ..Default::default()
        },
        embed: embed_cfg.clone(),
        attacks: vec![
            AttackKind::Brightness { factor: 0.5 },
            AttackKind::Jpeg { quality: 50 },
            AttackKind::GaussianNoise { std: 0.05 },
            AttackKind::Regen { t_steps: 10 },
            AttackKind::AllNoRotation,
        ],
        jobs: 2,
        ..Default::default()
    };
    let stack = PipelineStack {
        predictor: predictor.clone(),
        sched: sched.clone(),
        flow,
        key,
        mask,
    };
    let t0 = Instant::now();
    let out = run_benchmark_with(&stack, &spec).unwrap();
    println!(
        "benchmark (8 images, 5 attacks, 2 variants): {:.1}s",
        t0.elapsed().as_secs_f64()
    );
    println!("{}", out.table.to_csv());
    println!(
        "embed mean {:.3}s vs invert+generate {:.3}s",
        out.timing.mean_seconds(Variant::Wf, "embed").unwrap(),
        out.timing
            .mean_seconds(Variant::Wf, "invert_generate")
            .unwrap()
    );

    // 6. Regen attack PSNR band at a few depths.
    let ctx = latentmark::attacks::AttackContext {
        predictor: &stack.predictor,
        sched: &stack.sched,
    };
    for t_steps in [5usize, 10, 20, 50] {
        let mut band = Vec::new();
        for img in images.iter().take(6) {
            let attacked =
                latentmark::attacks::regen_attack(img, t_steps, &ctx, 9).unwrap();
            band.push(psnr(&attacked, img).unwrap());
        }
        let mean = band.iter().sum::<f64>() / band.len() as f64;
        let mut sims = Vec::new();
        for img in images.iter().take(6) {
            let attacked =
                latentmark::attacks::regen_attack(img, stack.sched.steps(), &ctx, 9).unwrap();
            sims.push(ssim(&attacked, img).unwrap());
        }
        println!(
            "regen t={t_steps}: mean psnr {mean:.1} (full-depth ssim mean {:.2})",
            sims.iter().sum::<f64>() / sims.len() as f64
        );
    }
}
