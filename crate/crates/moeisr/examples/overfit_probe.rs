//! Timing and convergence scratchpad for the desk-scale training setup.

use moeisr::adam::AdamState;
use moeisr::image::Image;
use moeisr::infer::reconstruct;
use moeisr::model::{EncoderSpec, MapperSpec, ModelParams, ModelSpecs};
use moeisr::resize::bicubic_resize;
use moeisr::train::{evaluate, train_step, TrainConfig};
use std::time::Instant;

/// 64x64 test scene: smooth ramps, sharp-edged shapes, and a textured band.
fn test_scene() -> Image {
    let n = 64usize;
    let mut img = Image::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            let fy = y as f32 / (n - 1) as f32;
            let fx = x as f32 / (n - 1) as f32;
            // smooth background
            let mut r = 0.25 + 0.5 * fx;
            let mut g = 0.3 + 0.4 * fy;
            let mut b = 0.55 - 0.3 * fx * fy;
            // sharp circle
            let (cy, cx) = (20.0, 22.0);
            let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
            if d2 < 81.0 {
                r = 0.9;
                g = 0.2;
                b = 0.15;
            }
            // sharp rectangle
            if (40..52).contains(&y) && (8..30).contains(&x) {
                r = 0.1;
                g = 0.7;
                b = 0.85;
            }
            // textured band (high-frequency stripes)
            if (10..22).contains(&y) && x >= 40 {
                let s = if (x / 2) % 2 == 0 { 0.85 } else { 0.2 };
                r = s;
                g = s * 0.8;
                b = 0.3;
            }
            // diagonal edge
            if y + x > 100 {
                r = 0.95;
                g = 0.9;
                b = 0.55;
            }
            img.set_pixel(y, x, [r, g, b]);
        }
    }
    img
}

fn toy_config(seed: u64) -> TrainConfig {
    let specs = ModelSpecs::new(
        EncoderSpec {
            feat_dim: 24,
            n_res_blocks: 2,
        },
        MapperSpec {
            n_layers: 5,
            hidden_channels: 24,
        },
        48,
        &[2, 3, 4, 5],
    )
    .unwrap();
    let mut config = TrainConfig::new(specs);
    config.patch_size = 24;
    config.scale_min = 2.0;
    config.scale_max = 2.0;
    config.queries_per_patch = 576;
    config.seed = seed;
    config.adam.lr = 2e-3;
    config.steps = 2000;
    config
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);
    let beta: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let tau: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let w4: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let w1: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let mut config = toy_config(seed);
    config.steps = steps;
    config.beta = beta;
    config.tau = tau;
    config.balance_weights = vec![w1, 1.0, 1.0, w4];

    let img = test_scene();
    let images = vec![img.clone()];
    let mut params = ModelParams::<f32>::init(config.specs.clone(), config.seed);
    let mut state = AdamState::new_for(&params);

    let t0 = Instant::now();
    for step in 0..config.steps {
        let m = train_step(&mut params, &mut state, &images, &config, step).unwrap();
        if (step + 1) % 250 == 0 {
            let report = evaluate(&params, &images, 2.0).unwrap();
            println!(
                "step {:4}  loss {:9.3} l1 {:.5} lb {:8.3}  psnr {:.2}  shares {:?}  [{:.0} ms/step]",
                step + 1,
                m.loss,
                m.l1,
                m.balance,
                report.mean_psnr,
                report
                    .shares
                    .iter()
                    .map(|s| (s * 100.0).round() / 100.0)
                    .collect::<Vec<_>>(),
                t0.elapsed().as_millis() as f64 / (step + 1) as f64
            );
        }
    }
    let report = evaluate(&params, &images, 2.0).unwrap();
    println!(
        "final: psnr {:.2} dB  shares {:?}  flops_ratio {:.4}  total {:.0} s",
        report.mean_psnr,
        report.shares,
        report.mean_flops_ratio,
        t0.elapsed().as_secs_f64()
    );

    // Complexity correlation: gradient magnitude by routed expert.
    let lr = bicubic_resize(&img, 32, 32);
    let rec = reconstruct(&params, &lr, 64, 64).unwrap();
    let grads = lr.gradient_magnitude();
    let j = config.specs.j();
    let mut sums = vec![0f64; j];
    let mut counts = vec![0usize; j];
    for (site, &d) in rec.site_decisions.iter().enumerate() {
        sums[d] += grads[site] as f64;
        counts[d] += 1;
    }
    for jj in 0..j {
        let mean = if counts[jj] > 0 {
            sums[jj] / counts[jj] as f64
        } else {
            f64::NAN
        };
        println!("expert {jj}: sites {:4}  mean |grad| {:.4}", counts[jj], mean);
    }
}
