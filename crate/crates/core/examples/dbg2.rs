// Scratch diagnostics for gate fields, region scores and stage dynamics.

use iterseg_core::driver::{em_step, initialize, Corpus, RunConfig};
use iterseg_core::propagation::{compute_gates, Direction};
use iterseg_core::synth::{SceneSpec, SeedParams};

fn gate_stats(corpus: &Corpus, params: &iterseg_core::propagation::PairwiseParams) {
    let mut min = f64::MAX;
    let mut max = f64::MIN;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut count = 0usize;
    for feats in &corpus.features {
        let gates = compute_gates(params, feats).unwrap();
        for dir in Direction::ALL {
            for group in 0..3 {
                for &g in gates.field(dir, group) {
                    min = min.min(g);
                    max = max.max(g);
                    sum += g;
                    sumsq += g * g;
                    count += 1;
                }
            }
        }
    }
    let mean = sum / count as f64;
    let std = (sumsq / count as f64 - mean * mean).sqrt();
    println!("gates: min {min:.4} mean {mean:.4} max {max:.4} std {std:.4}");
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_images: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let train_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let noise: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let coverage: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.6);
    let scale_k: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(100.0);

    let config = RunConfig {
        train_steps,
        scale_k,
        ..RunConfig::default()
    };
    let erode: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut spec = SceneSpec::new(42);
    spec.noise_amplitude = noise;
    let seed_params = SeedParams {
        coverage,
        erode_radius: erode,
        ..SeedParams::default()
    };
    let corpus = Corpus::synthetic(&spec, n_images, &seed_params, &config).unwrap();
    let regions: usize = corpus.superpixels.iter().map(|s| s.region_count()).sum();
    println!(
        "avg regions per image: {:.1}",
        regions as f64 / corpus.len() as f64
    );

    let mut state = initialize(&corpus, &config).unwrap();
    for row in &state.rows {
        println!(
            "  {}: miou {:.4} prec {:.4} energy {:.6}",
            row.stage.as_str(),
            row.metrics.mean_iou,
            row.metrics.precision,
            row.metrics.energy
        );
    }
    println!("after init:");
    gate_stats(&corpus, &state.pairwise);
    for _ in 0..3 {
        state = em_step(state, &corpus, &config).unwrap();
        let step = state.step;
        println!("--- step {step}");
        gate_stats(&corpus, &state.pairwise);
        if !state.region_scores.is_empty() {
            let mut kept = 0usize;
            let mut total = 0usize;
            let mut score_sum = 0.0;
            for scores in &state.region_scores {
                for s in scores {
                    total += 1;
                    score_sum += s.max_score;
                    if s.max_score > config.mining_threshold {
                        kept += 1;
                    }
                }
            }
            println!(
                "regions kept {kept}/{total} (mean top score {:.3})",
                score_sum / total as f64
            );
        }
        let unlabeled: usize = state.mined.iter().map(|m| m.len() - m.labeled_count()).sum();
        let total_px: usize = state.mined.iter().map(|m| m.len()).sum();
        println!(
            "mined unknown fraction {:.3}",
            unlabeled as f64 / total_px as f64
        );
        let d = state.diagnostics.last().unwrap();
        println!(
            "eq6 fraction {:.2} (labeled {:.5} vs unary {:.5})",
            d.eq_fraction, d.mean_labeled_side, d.mean_unary_side
        );
        for row in state.rows.iter().filter(|r| r.step == step) {
            println!(
                "  {}: miou {:.4} prec {:.4} energy {:.6} per-class {:?}",
                row.stage.as_str(),
                row.metrics.mean_iou,
                row.metrics.precision,
                row.metrics.energy,
                row.metrics
                    .per_class_iou
                    .iter()
                    .map(|o| o.map(|v| (v * 1000.0).round() / 1000.0))
                    .collect::<Vec<_>>()
            );
        }
    }
}
