// Scratch harness for pipeline calibration runs.

use std::time::Instant;

use iterseg_core::driver::{run, Corpus, RunConfig, Stage};
use iterseg_core::report::{metrics_csv, summary};
use iterseg_core::synth::{SceneSpec, SeedParams};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_images: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let train_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let mode = args.get(3).map(|s| s.as_str()).unwrap_or("default");

    let config = RunConfig {
        train_steps,
        no_mining: mode == "no-mining",
        no_pairwise: mode == "no-pairwise",
        ..RunConfig::default()
    };
    let spec = SceneSpec::new(42);
    let seeds = SeedParams::default();

    let t0 = Instant::now();
    let corpus = Corpus::synthetic(&spec, n_images, &seeds, &config).unwrap();
    println!("corpus prepared in {:?}", t0.elapsed());
    let regions: usize = corpus.superpixels.iter().map(|s| s.region_count()).sum();
    println!(
        "avg regions per image: {:.1}",
        regions as f64 / corpus.len() as f64
    );

    let t1 = Instant::now();
    let state = run(&corpus, &config).unwrap();
    println!("run finished in {:?}", t1.elapsed());
    println!("{}", metrics_csv(&state.rows));
    println!("{}", summary(&state));
    let steps = state.completed_steps();
    if let (Some(&first), Some(&last)) = (steps.first(), steps.last()) {
        let a = state.row(first, Stage::Pairwise).unwrap().metrics.mean_iou;
        let b = state.row(last, Stage::Pairwise).unwrap().metrics.mean_iou;
        println!(
            "pairwise miou step{first} {a:.4} -> step{last} {b:.4} (delta {:+.2} pts)",
            (b - a) * 100.0
        );
    }
}
