//! Scratch harness for comparing strategies on the synthetic task.
//! Usage: cargo run -p mixseg --example tune -- <total_iters> <lr0> <sigma> <tau> <lambda> <seeds> <jitter>

use mixseg::config::{ExperimentConfig, Strategy};
use mixseg::data::{build_dataset, ShapesSceneSpec};
use mixseg::trainer::run;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let total_iters: usize = args.get(1).map_or(600, |s| s.parse().unwrap());
    let lr0: f64 = args.get(2).map_or(2.5e-4, |s| s.parse().unwrap());
    let sigma: f64 = args.get(3).map_or(0.15, |s| s.parse().unwrap());
    let tau: f64 = args.get(4).map_or(0.95, |s| s.parse().unwrap());
    let lambda: f64 = args.get(5).map_or(1.0, |s| s.parse().unwrap());
    let n_seeds: u64 = args.get(6).map_or(5, |s| s.parse().unwrap());
    let jitter: f64 = args.get(7).map_or(0.2, |s| s.parse().unwrap());

    let scene = ShapesSceneSpec {
        noise_sigma: sigma,
        color_jitter: jitter,
        ..Default::default()
    };
    println!("jitter={jitter}");
    let dataset = build_dataset(&scene, 240, 60, 0.125, 42).unwrap();
    println!("dataset: 240 train / 60 val, sigma={sigma}");

    // Full-label reference: the headroom available to semi-supervision.
    {
        let mut mious = Vec::new();
        for seed in 0..n_seeds {
            let config = ExperimentConfig {
                labeled_fraction: 1.0,
                total_iters,
                lr0,
                tau,
                lambda: 0.0,
                strategy: Strategy::None,
                seed,
                ..Default::default()
            };
            mious.push(run(&config, &dataset).unwrap().val_miou);
        }
        let mean = mious.iter().sum::<f64>() / mious.len() as f64;
        println!("full-label   student mIoU {mean:.4} {mious:?}");
    }

    for strategy in [Strategy::None, Strategy::Complexmix, Strategy::Classmix, Strategy::Cutmix] {
        let mut mious = Vec::new();
        let mut teacher_mious = Vec::new();
        let mut gated = Vec::new();
        let t0 = std::time::Instant::now();
        for seed in 0..n_seeds {
            let config = ExperimentConfig {
                labeled_fraction: 0.125,
                total_iters,
                lr0,
                tau,
                lambda: if strategy == Strategy::None { 0.0 } else { lambda },
                strategy,
                seed,
                ..Default::default()
            };
            let outcome = run(&config, &dataset).unwrap();
            let last_gated = outcome
                .state
                .history
                .last()
                .map(|l| l.report.gated_pixel_fraction)
                .unwrap_or(0.0);
            gated.push(last_gated);
            mious.push(outcome.val_miou);
            if let Some(t) = outcome.teacher_val_miou {
                teacher_mious.push(t);
            }
        }
        let mean = mious.iter().sum::<f64>() / mious.len() as f64;
        let tmean = if teacher_mious.is_empty() {
            f64::NAN
        } else {
            teacher_mious.iter().sum::<f64>() / teacher_mious.len() as f64
        };
        let gmean = gated.iter().sum::<f64>() / gated.len() as f64;
        println!(
            "{strategy:<11} student mIoU {mean:.4} {mious:?} teacher {tmean:.4} gated {gmean:.2} [{:.1}s]",
            t0.elapsed().as_secs_f64()
        );
    }
}
