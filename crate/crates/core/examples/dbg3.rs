// Ceiling probe: unary trained on ground truth vs trained on seeds.

use iterseg_core::driver::{Corpus, RunConfig};
use iterseg_core::grid::LabelGrid;
use iterseg_core::metrics::IouAccumulator;
use iterseg_core::synth::{SceneSpec, SeedParams};
use iterseg_core::unary::{predict, train_unary, Supervision, UnaryParams};

fn eval(corpus: &Corpus, params: &UnaryParams, tag: &str) {
    let mut acc = IouAccumulator::new(corpus.num_classes());
    for (f, s) in corpus.features.iter().zip(&corpus.samples) {
        let pred = predict(params, f).unwrap().argmax_labels();
        acc.add(&pred, &s.gt).unwrap();
    }
    let m = acc.metrics();
    println!(
        "{tag}: miou {:.4} prec {:.4} per-class {:?}",
        m.mean_iou,
        m.precision,
        m.per_class_iou
            .iter()
            .map(|o| o.map(|v| (v * 1000.0).round() / 1000.0))
            .collect::<Vec<_>>()
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let coverage: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.6);
    let erode: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let n: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(20);

    let config = RunConfig::default();
    let mut spec = SceneSpec::new(42);
    spec.noise_amplitude = noise;
    let sp = SeedParams { erode_radius: erode, coverage, ..SeedParams::default() };
    let corpus = Corpus::synthetic(&spec, n, &sp, &config).unwrap();

    let mut acc = IouAccumulator::new(corpus.num_classes());
    for s in &corpus.samples {
        acc.add(&s.seeds, &s.gt).unwrap();
    }
    let m = acc.metrics();
    println!("seeds: miou {:.4} prec {:.4}", m.mean_iou, m.precision);

    let gts: Vec<LabelGrid> = corpus.samples.iter().map(|s| s.gt.clone()).collect();
    let seeds: Vec<LabelGrid> = corpus.samples.iter().map(|s| s.seeds.clone()).collect();
    let sched = config.validate().map(|_| ()).unwrap();
    let _ = sched;
    let schedule = iterseg_core::schedule::LrSchedule::polynomial(0.001, 0.9, 500).unwrap();
    let (on_gt, _) = train_unary(&UnaryParams::zeros(4), &corpus.features, Supervision::Hard(&gts), &schedule).unwrap();
    eval(&corpus, &on_gt, "unary on gt  ");
    let (on_seeds, _) = train_unary(&UnaryParams::zeros(4), &corpus.features, Supervision::Hard(&seeds), &schedule).unwrap();
    eval(&corpus, &on_seeds, "unary on seed");
}
