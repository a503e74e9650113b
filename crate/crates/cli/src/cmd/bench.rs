use std::time::Instant;

use anyhow::Result;
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rotdet_core::gaussian::probiou_loss;
use rotdet_core::geometry::{skew_iou, RotatedBox};
use rotdet_core::postprocess::{rotated_nms_indices, Detection};
use rotdet_core::reference::{
    brute_force_nms, central_difference, monte_carlo_iou, perturb_box, random_box, relative_error,
};

use crate::failure::Failure;
use crate::Context;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kernel {
    SkewIou,
    Probiou,
    Nms,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    kernel: Kernel,

    /// Number of box pairs (skew-iou, probiou) or boxes (nms).
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,

    /// Also compare results against the reference implementation.
    #[arg(long)]
    verify: bool,

    /// NMS IoU threshold.
    #[arg(long)]
    iou: Option<f64>,
}

fn pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<(RotatedBox, RotatedBox)> {
    (0..n)
        .map(|_| {
            let a = random_box(rng, 200.0, 4.0, 60.0);
            (a, perturb_box(rng, &a, 0.5))
        })
        .collect()
}

fn report(kernel: &str, n: usize, seed: u64, checksum: String, unit: &str, secs: f64) {
    println!("kernel={kernel} n={n} seed={seed} {checksum}");
    println!("elapsed={secs:.6}s throughput={:.0} {unit}/s", n as f64 / secs.max(1e-12));
}

fn verified(name: &str, worst: f64, tol: f64) -> Result<()> {
    println!("verify {name}: max_err={worst:.3e} tol={tol:.1e}");
    if worst <= tol {
        Ok(())
    } else {
        Err(Failure::Check(format!("{name} verification exceeded tolerance")).into())
    }
}

pub fn run(ctx: &Context, args: &BenchArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let n = usize::try_from(args.n).map_err(|_| Failure::contract("n is too large"))?;
    match args.kernel {
        Kernel::SkewIou => {
            let input = pairs(&mut rng, n);
            let start = Instant::now();
            let values: Vec<f64> = input.iter().map(|(a, b)| skew_iou(a, b)).collect();
            let secs = start.elapsed().as_secs_f64();
            report("skew_iou", n, ctx.seed, format!("sum={:.9}", values.iter().sum::<f64>()), "pairs", secs);
            if args.verify {
                let mut worst: f64 = 0.0;
                for ((a, b), v) in input.iter().zip(&values).take(20) {
                    worst = worst.max((monte_carlo_iou(a, b, 200_000, &mut rng) - v).abs());
                }
                verified("skew_iou vs monte carlo", worst, 1e-2)?;
            }
        }
        Kernel::Probiou => {
            let input = pairs(&mut rng, n);
            let start = Instant::now();
            let mut sum = 0.0;
            for (p, g) in &input {
                let r = probiou_loss(p, g).map_err(|e| Failure::Check(e.to_string()))?;
                sum += r.value + r.grad.iter().sum::<f64>();
            }
            let secs = start.elapsed().as_secs_f64();
            report("probiou", n, ctx.seed, format!("sum={sum:.9}"), "pairs", secs);
            if args.verify {
                let mut worst: f64 = 0.0;
                for (p, g) in input.iter().take(200) {
                    let analytic = probiou_loss(p, g).map_err(|e| Failure::Check(e.to_string()))?.grad;
                    let numeric = central_difference(|b| probiou_loss(b, g).map_or(f64::NAN, |r| r.value), p, 1e-5);
                    for k in 0..5 {
                        worst = worst.max(relative_error(analytic[k], numeric[k]));
                    }
                }
                verified("probiou gradient vs finite differences", worst, 1e-4)?;
            }
        }
        Kernel::Nms => {
            let thr = ctx.config.nms_iou(args.iou)?;
            // keep density roughly constant as n grows
            let extent = (n as f64).sqrt() * 25.0;
            let dets: Vec<Detection> = (0..n)
                .map(|i| Detection {
                    rbox: random_box(&mut rng, extent, 8.0, 50.0),
                    score: rand::Rng::gen_range(&mut rng, 0.0..1.0),
                    class_id: i % 3,
                })
                .collect();
            let start = Instant::now();
            let keep = rotated_nms_indices(&dets, thr, true).map_err(|e| Failure::contract(e.to_string()))?;
            let secs = start.elapsed().as_secs_f64();
            report("nms", n, ctx.seed, format!("iou={thr} kept={}", keep.len()), "boxes", secs);
            if args.verify {
                let oracle = brute_force_nms(&dets, thr, true);
                println!("verify nms vs brute force: kept={} oracle_kept={}", keep.len(), oracle.len());
                if keep != oracle {
                    return Err(Failure::Check("nms keep set differs from the brute-force reference".into()).into());
                }
            }
        }
    }
    Ok(())
}
