//! Simulate the seven-cell cluster with one overshooting cell and print the
//! resulting anomaly ranking next to per-cell reconstruction errors.
//!
//! cargo run --release -p arcade-core --example hex_cluster -- [seed] [overshooter] [epochs] [fourier octaves] [hidden width]

use std::time::Instant;

use arcade_core::pipeline::{analyze, PipelineParams};
use arcade_core::simulator::{ground_truth_fields, sample_mdt, HexCluster};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let overshooter: u32 = args.next().map_or(1, |s| s.parse().expect("pci"));
    let mut params = PipelineParams::default();
    if let Some(e) = args.next() {
        params.coverage.train.epochs = e.parse().expect("epochs");
    }
    if let Some(k) = args.next() {
        params.coverage.fourier_octaves = k.parse().expect("octaves");
    }
    if let Some(h) = args.next() {
        let h: usize = h.parse().expect("hidden width");
        params.coverage.hidden = vec![h, h];
    }
    params.coverage.train.learning_rate = 1e-2;
    params.coverage.train.final_lr_fraction = 0.02;
    params.coverage.train.batch_size = 32;
    let env = HexCluster {
        seed,
        overshooter: Some(overshooter),
        ..Default::default()
    }
    .build();
    let samples = sample_mdt(&env, 800, seed).expect("sampling");
    let t = Instant::now();
    let analysis = analyze::<f32>(&env.spec, &samples, &params).expect("analysis");
    println!("{} samples analysed in {:.2?}", samples.len(), t.elapsed());
    for c in &analysis.report.cells {
        println!(
            "pci {} ci {:.3} cquali {:.3} overshooter {} fragmented {} score {:.3}",
            c.pci, c.ci, c.cquali, c.overshooter, c.fragmented, c.score
        );
    }
    println!("ranking {:?}", analysis.report.ranking);

    let truth = ground_truth_fields(&env).expect("truth");
    let gp = analysis.extrapolated_fields();
    let nn = analysis.model_fields();
    for (pci, t) in &truth {
        let rmse = |f: &[f64]| {
            let (mut s, mut n) = (0.0, 0);
            for (a, b) in f.iter().zip(&t.values) {
                if *b >= -110.0 {
                    s += (a - b).powi(2);
                    n += 1;
                }
            }
            (s / n as f64).sqrt()
        };
        println!(
            "pci {pci}: gp rmse {:.2} nn rmse {:.2}",
            rmse(&gp[pci].values),
            rmse(&nn[pci].values)
        );
    }
}
