//! The alternating training loop.
//!
//! One step of the loop, in order: retrain the unary classifier on the
//! previous refined field (hardened to argmax labels), mine confident
//! regions from the new unary argmax, retrain the gate model on the mined
//! regions, and propagate the unary field through the learned gates. The
//! first unary training happens against the seed maps during
//! initialization. Metric rows are logged per stage so the whole run is
//! auditable from the CSV; energies are computed with the affinity
//! parameters in effect at the moment a row is logged.

use crate::energy::{
    mining_inequality_holds, normalized_energy, one_hot_with_fallback, AffinityGraph,
};
use crate::error::{Error, Result};
use crate::features::{extract_features, PixelFeatures};
use crate::grid::{LabelGrid, ProbGrid};
use crate::image::RgbImage;
use crate::metrics::{IouAccumulator, Metrics};
use crate::miner::{
    build_region_dataset, mine_confident, train_region_classifier, RegionConfidence, RegionParams,
};
use crate::propagation::{
    compute_gates, propagate, train_pairwise, PairwiseBatchItem, PairwiseParams,
};
use crate::schedule::LrSchedule;
use crate::superpixel::{segment, SuperpixelMap};
use crate::synth::{generate_corpus, SceneSpec, SeedParams};
use crate::unary::{predict, train_unary, Supervision, UnaryParams};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub max_steps: usize,
    pub mining_threshold: f64,
    /// Strict majority fraction for the region vote.
    pub majority: f64,
    pub lambda_smooth: f64,
    /// Gradient-descent iterations per training, shared by all three models.
    pub train_steps: usize,
    pub unary_base_lr: f64,
    pub unary_tau: f64,
    pub pairwise_base_lr: f64,
    pub pairwise_tau: f64,
    pub region_base_lr: f64,
    pub region_gamma: f64,
    pub scale_k: f64,
    pub min_size: usize,
    pub no_mining: bool,
    pub no_pairwise: bool,
    /// Stop once the pairwise-stage mIoU gain drops below this many
    /// percentage points; 0 disables early stopping.
    pub early_stop_points: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_steps: 5,
            mining_threshold: 0.7,
            majority: 0.8,
            lambda_smooth: 0.1,
            train_steps: 500,
            unary_base_lr: 0.001,
            unary_tau: 0.9,
            pairwise_base_lr: 0.00001,
            pairwise_tau: 0.5,
            region_base_lr: 0.001,
            region_gamma: 0.1,
            scale_k: 100.0,
            min_size: 16,
            no_mining: false,
            no_pairwise: false,
            early_stop_points: 0.2,
            seed: 42,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        fn check(cond: bool, name: &'static str, value: f64) -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidParam { name, value })
            }
        }
        check(self.max_steps >= 1, "steps", self.max_steps as f64)?;
        check(
            self.mining_threshold > 0.0 && self.mining_threshold < 1.0,
            "mining_threshold",
            self.mining_threshold,
        )?;
        check(
            self.majority > 0.5 && self.majority <= 1.0,
            "majority",
            self.majority,
        )?;
        check(
            self.lambda_smooth >= 0.0 && self.lambda_smooth.is_finite(),
            "lambda_smooth",
            self.lambda_smooth,
        )?;
        check(self.train_steps >= 1, "train_steps", self.train_steps as f64)?;
        check(self.unary_base_lr > 0.0, "unary_lr", self.unary_base_lr)?;
        check(self.unary_tau >= 0.0, "unary_tau", self.unary_tau)?;
        check(
            self.pairwise_base_lr > 0.0,
            "pairwise_lr",
            self.pairwise_base_lr,
        )?;
        check(self.pairwise_tau >= 0.0, "pairwise_tau", self.pairwise_tau)?;
        check(self.region_base_lr > 0.0, "region_lr", self.region_base_lr)?;
        check(
            self.region_gamma > 0.0 && self.region_gamma <= 1.0,
            "region_gamma",
            self.region_gamma,
        )?;
        check(self.scale_k > 0.0, "scale_k", self.scale_k)?;
        check(self.min_size >= 1, "min_size", self.min_size as f64)?;
        check(
            self.early_stop_points >= 0.0,
            "early_stop_points",
            self.early_stop_points,
        )?;
        Ok(())
    }

    fn unary_schedule(&self) -> Result<LrSchedule> {
        LrSchedule::polynomial(self.unary_base_lr, self.unary_tau, self.train_steps)
    }

    fn pairwise_schedule(&self) -> Result<LrSchedule> {
        LrSchedule::polynomial(self.pairwise_base_lr, self.pairwise_tau, self.train_steps)
    }

    fn region_schedule(&self) -> Result<LrSchedule> {
        LrSchedule::step(
            self.region_base_lr,
            self.region_gamma,
            self.train_steps,
            self.train_steps,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: RgbImage,
    pub gt: LabelGrid,
    pub seeds: LabelGrid,
}

/// Corpus with per-image caches that depend only on the images.
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub features: Vec<PixelFeatures>,
    pub superpixels: Vec<SuperpixelMap>,
}

impl Corpus {
    pub fn prepare(samples: Vec<Sample>, config: &RunConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParam {
                name: "corpus_size",
                value: 0.0,
            });
        }
        let num_classes = samples[0].gt.num_classes();
        for s in &samples {
            if s.gt.has_unknown() {
                return Err(Error::UnexpectedUnknown);
            }
            s.gt.same_shape(&s.seeds)?;
            if s.gt.num_classes() != num_classes {
                return Err(Error::ClassCountMismatch(s.gt.num_classes(), num_classes));
            }
            if s.image.width() != s.gt.width() || s.image.height() != s.gt.height() {
                return Err(Error::DimensionMismatch(
                    s.image.width(),
                    s.image.height(),
                    s.gt.width(),
                    s.gt.height(),
                ));
            }
        }
        let features = samples.iter().map(|s| extract_features(&s.image)).collect();
        let superpixels = samples
            .iter()
            .map(|s| segment(&s.image, config.scale_k, config.min_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            features,
            superpixels,
        })
    }

    /// Reference corpus straight from the scene generator.
    pub fn synthetic(
        spec: &SceneSpec,
        n_images: usize,
        seed_params: &SeedParams,
        config: &RunConfig,
    ) -> Result<Self> {
        let (triples, _) = generate_corpus(spec, n_images, seed_params)?;
        let samples = triples
            .into_iter()
            .map(|(image, gt, seeds)| Sample { image, gt, seeds })
            .collect();
        Self::prepare(samples, config)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.samples[0].gt.num_classes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Seeds,
    Unary,
    Mined,
    Pairwise,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Seeds => "seeds",
            Stage::Unary => "unary",
            Stage::Mined => "mined",
            Stage::Pairwise => "pairwise",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub step: usize,
    pub stage: Stage,
    pub metrics: Metrics,
}

/// Per-step evaluation of the mined-labeling energy comparison.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub step: usize,
    /// Fraction of corpus images where the mined side is not above the
    /// unary side.
    pub eq_fraction: f64,
    pub mean_labeled_side: f64,
    pub mean_unary_side: f64,
}

pub struct EmState {
    /// Completed EM steps (0 after initialization).
    pub step: usize,
    pub unary: UnaryParams,
    pub pairwise: PairwiseParams,
    pub region: Option<RegionParams>,
    pub alpha_u: Vec<ProbGrid>,
    pub alpha_p: Vec<ProbGrid>,
    pub mined: Vec<LabelGrid>,
    pub region_scores: Vec<Vec<RegionConfidence>>,
    pub rows: Vec<MetricsRow>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl EmState {
    pub fn row(&self, step: usize, stage: Stage) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.step == step && r.stage == stage)
    }

    /// Steps that produced a pairwise row, in order.
    pub fn completed_steps(&self) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.stage == Stage::Pairwise)
            .map(|r| r.step)
            .collect()
    }
}

/// Pooled corpus metrics of a prediction set against ground truth.
fn corpus_metrics(corpus: &Corpus, preds: &[LabelGrid]) -> Result<Metrics> {
    let mut acc = IouAccumulator::new(corpus.num_classes());
    for (pred, sample) in preds.iter().zip(&corpus.samples) {
        acc.add(pred, &sample.gt)?;
    }
    Ok(acc.metrics())
}

/// Corpus-average normalized energy of per-image probability fields under
/// the affinity induced by `params`.
fn corpus_energy(corpus: &Corpus, params: &PairwiseParams, fields: &[ProbGrid]) -> Result<f64> {
    let mut total = 0.0;
    for (feats, field) in corpus.features.iter().zip(fields) {
        let gates = compute_gates(params, feats)?;
        let graph = AffinityGraph::from_gates(&gates);
        total += normalized_energy(&graph, field)?;
    }
    Ok(total / corpus.len() as f64)
}

/// Same, for a labeling: UNKNOWN rows fall back to the unary field.
fn corpus_energy_labels(
    corpus: &Corpus,
    params: &PairwiseParams,
    labels: &[LabelGrid],
    fallback: &[ProbGrid],
) -> Result<f64> {
    let mut total = 0.0;
    for ((feats, y), alpha) in corpus.features.iter().zip(labels).zip(fallback) {
        let gates = compute_gates(params, feats)?;
        let graph = AffinityGraph::from_gates(&gates);
        let field = one_hot_with_fallback(y, alpha)?;
        total += normalized_energy(&graph, &field)?;
    }
    Ok(total / corpus.len() as f64)
}

fn log_row(
    rows: &mut Vec<MetricsRow>,
    step: usize,
    stage: Stage,
    mut metrics: Metrics,
    energy: f64,
) {
    metrics.energy = energy;
    rows.push(MetricsRow {
        step,
        stage,
        metrics,
    });
}

/// Train both models on the seed maps and log the step-0 seeds row plus the
/// step-1 unary row.
pub fn initialize(corpus: &Corpus, config: &RunConfig) -> Result<EmState> {
    config.validate()?;
    let mut rows = Vec::new();

    // unary on seeds
    let seeds: Vec<LabelGrid> = corpus.samples.iter().map(|s| s.seeds.clone()).collect();
    let (unary, _) = train_unary(
        &UnaryParams::zeros(corpus.num_classes()),
        &corpus.features,
        Supervision::Hard(&seeds),
        &config.unary_schedule()?,
    )?;
    let alpha_u: Vec<ProbGrid> = corpus
        .features
        .iter()
        .map(|f| predict(&unary, f))
        .collect::<Result<_>>()?;

    // rows logged with the untrained (zero) affinity in effect right now
    let zero_pairwise = PairwiseParams::zeros();
    let seeds_energy = corpus_energy_labels(corpus, &zero_pairwise, &seeds, &alpha_u)?;
    log_row(
        &mut rows,
        0,
        Stage::Seeds,
        corpus_metrics(corpus, &seeds)?,
        seeds_energy,
    );
    let unary_preds: Vec<LabelGrid> = alpha_u.iter().map(|a| a.argmax_labels()).collect();
    let unary_energy = corpus_energy(corpus, &zero_pairwise, &alpha_u)?;
    log_row(
        &mut rows,
        1,
        Stage::Unary,
        corpus_metrics(corpus, &unary_preds)?,
        unary_energy,
    );

    // gate model on seeds
    let pairwise = if config.no_pairwise {
        zero_pairwise
    } else {
        let batch: Vec<PairwiseBatchItem<'_>> = corpus
            .features
            .iter()
            .zip(&alpha_u)
            .zip(&seeds)
            .zip(&corpus.superpixels)
            .map(|(((feats, alpha), labels), superpixels)| PairwiseBatchItem {
                feats,
                alpha_u: alpha,
                labels,
                superpixels,
            })
            .collect();
        let (pairwise, _) = train_pairwise(
            &zero_pairwise,
            &batch,
            config.lambda_smooth,
            &config.pairwise_schedule()?,
        )?;
        pairwise
    };

    Ok(EmState {
        step: 0,
        unary,
        pairwise,
        region: None,
        alpha_u,
        alpha_p: Vec::new(),
        mined: Vec::new(),
        region_scores: Vec::new(),
        rows,
        diagnostics: Vec::new(),
    })
}

/// Run one full step: (re)train unary, mine, retrain the gate model,
/// propagate. Returns the advanced state.
pub fn em_step(mut state: EmState, corpus: &Corpus, config: &RunConfig) -> Result<EmState> {
    let step = state.step + 1;

    // 1. unary stage. Step 1 reuses the seed-trained unary from
    // initialization, whose row is already logged.
    if step >= 2 {
        let (unary, _) = train_unary(
            &state.unary,
            &corpus.features,
            Supervision::Soft(&state.alpha_p),
            &config.unary_schedule()?,
        )?;
        state.unary = unary;
        state.alpha_u = corpus
            .features
            .iter()
            .map(|f| predict(&state.unary, f))
            .collect::<Result<_>>()?;
        let preds: Vec<LabelGrid> = state.alpha_u.iter().map(|a| a.argmax_labels()).collect();
        let energy = corpus_energy(corpus, &state.pairwise, &state.alpha_u)?;
        log_row(
            &mut state.rows,
            step,
            Stage::Unary,
            corpus_metrics(corpus, &preds)?,
            energy,
        );
    }

    // 2. mining stage
    let unary_argmax: Vec<LabelGrid> = state.alpha_u.iter().map(|a| a.argmax_labels()).collect();
    let mut region_scores = Vec::new();
    let mined: Vec<LabelGrid> = if config.no_mining {
        // ablation: supervise the gate model directly with the unary argmax
        state.region = None;
        unary_argmax.clone()
    } else {
        let mut dataset = Vec::new();
        for ((sp, sample), labels) in corpus
            .superpixels
            .iter()
            .zip(&corpus.samples)
            .zip(&unary_argmax)
        {
            dataset.extend(build_region_dataset(
                sp,
                &sample.image,
                labels,
                config.majority,
            )?);
        }
        let (region, _) =
            train_region_classifier(corpus.num_classes(), &dataset, &config.region_schedule()?)?;
        let mut mined = Vec::with_capacity(corpus.len());
        for (sp, sample) in corpus.superpixels.iter().zip(&corpus.samples) {
            let (labels, scores) =
                mine_confident(sp, &sample.image, &region, config.mining_threshold)?;
            mined.push(labels);
            region_scores.push(scores);
        }
        state.region = Some(region);
        mined
    };
    let mined_energy = corpus_energy_labels(corpus, &state.pairwise, &mined, &state.alpha_u)?;
    log_row(
        &mut state.rows,
        step,
        Stage::Mined,
        corpus_metrics(corpus, &mined)?,
        mined_energy,
    );

    // 3. pairwise stage: retrain gates on the mined supervision, then
    // propagate the unary field through them
    let alpha_p: Vec<ProbGrid> = if config.no_pairwise {
        state.alpha_u.clone()
    } else {
        let batch: Vec<PairwiseBatchItem<'_>> = corpus
            .features
            .iter()
            .zip(&state.alpha_u)
            .zip(&mined)
            .zip(&corpus.superpixels)
            .map(|(((feats, alpha), labels), superpixels)| PairwiseBatchItem {
                feats,
                alpha_u: alpha,
                labels,
                superpixels,
            })
            .collect();
        let (pairwise, _) = train_pairwise(
            &state.pairwise,
            &batch,
            config.lambda_smooth,
            &config.pairwise_schedule()?,
        )?;
        state.pairwise = pairwise;
        corpus
            .features
            .iter()
            .zip(&state.alpha_u)
            .map(|(feats, alpha)| {
                let gates = compute_gates(&state.pairwise, feats)?;
                propagate(&gates, alpha)
            })
            .collect::<Result<_>>()?
    };
    let pairwise_preds: Vec<LabelGrid> = alpha_p.iter().map(|a| a.argmax_labels()).collect();
    let pairwise_energy = corpus_energy(corpus, &state.pairwise, &alpha_p)?;
    log_row(
        &mut state.rows,
        step,
        Stage::Pairwise,
        corpus_metrics(corpus, &pairwise_preds)?,
        pairwise_energy,
    );

    // 4. energy comparison of the mined labeling against the unary field
    let mut holds = 0usize;
    let mut labeled_sum = 0.0;
    let mut unary_sum = 0.0;
    for ((feats, y), alpha) in corpus.features.iter().zip(&mined).zip(&state.alpha_u) {
        let gates = compute_gates(&state.pairwise, feats)?;
        let graph = AffinityGraph::from_gates(&gates);
        let check = mining_inequality_holds(&graph, y, alpha)?;
        if check.holds {
            holds += 1;
        }
        labeled_sum += check.labeled_side;
        unary_sum += check.unary_side;
    }
    state.diagnostics.push(StepDiagnostics {
        step,
        eq_fraction: holds as f64 / corpus.len() as f64,
        mean_labeled_side: labeled_sum / corpus.len() as f64,
        mean_unary_side: unary_sum / corpus.len() as f64,
    });

    state.alpha_p = alpha_p;
    state.mined = mined;
    state.region_scores = region_scores;
    state.step = step;
    Ok(state)
}

/// Initialization plus up to `max_steps` EM steps, with early stopping once
/// the pairwise-stage mIoU stops improving.
pub fn run(corpus: &Corpus, config: &RunConfig) -> Result<EmState> {
    let mut state = initialize(corpus, config)?;
    let mut last_miou: Option<f64> = None;
    for _ in 1..=config.max_steps {
        state = em_step(state, corpus, config)?;
        let miou = state
            .row(state.step, Stage::Pairwise)
            .map(|r| r.metrics.mean_iou)
            .unwrap_or(0.0);
        if let Some(prev) = last_miou {
            if config.early_stop_points > 0.0
                && (miou - prev) * 100.0 < config.early_stop_points
            {
                break;
            }
        }
        last_miou = Some(miou);
    }
    Ok(state)
}
