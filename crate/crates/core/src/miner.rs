//! Confident-region mining.
//!
//! Superpixels labeled by the current unary argmax (strict majority vote)
//! train a small region classifier on summary statistics. Every region is
//! then re-scored by that classifier, including the ones excluded from
//! training, which is what lets the miner veto noisy regions; only regions
//! whose top score clears the confidence threshold keep a label, the rest
//! become UNKNOWN.

use crate::error::{Error, Result};
use crate::grid::{LabelGrid, UNKNOWN};
use crate::image::RgbImage;
use crate::linear::{LinearSoftmax, TrainStats};
use crate::schedule::LrSchedule;
use crate::superpixel::{region_label_vote, SuperpixelMap};

/// Mean color (3), per-channel color standard deviation (3), normalized
/// centroid (2), normalized region size (1).
pub const REGION_FEATURE_DIM: usize = 9;

pub type RegionFeatures = [f64; REGION_FEATURE_DIM];

#[derive(Debug, Clone, PartialEq)]
pub struct RegionParams {
    pub model: LinearSoftmax,
}

impl RegionParams {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            model: LinearSoftmax::zeros(num_classes, REGION_FEATURE_DIM),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.model.classes()
    }

    pub fn named_floats(&self) -> Vec<(String, f64)> {
        self.model.named_floats("region")
    }

    pub fn from_named_floats(num_classes: usize, pairs: &[(String, f64)]) -> Result<Self> {
        Ok(Self {
            model: LinearSoftmax::from_named_floats(
                "region",
                num_classes,
                REGION_FEATURE_DIM,
                pairs,
            )?,
        })
    }
}

/// Summary statistics of every region of one image.
pub fn region_features(sp: &SuperpixelMap, image: &RgbImage) -> Result<Vec<RegionFeatures>> {
    if sp.width() != image.width() || sp.height() != image.height() {
        return Err(Error::DimensionMismatch(
            sp.width(),
            sp.height(),
            image.width(),
            image.height(),
        ));
    }
    let (w, h) = (image.width(), image.height());
    let n = (w * h) as f64;
    let x_scale = if w > 1 { 1.0 / (w - 1) as f64 } else { 0.0 };
    let y_scale = if h > 1 { 1.0 / (h - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(sp.region_count());
    for region in 0..sp.region_count() {
        let pixels = sp.region_pixels(region);
        let size = pixels.len() as f64;
        let mean = sp.region_mean_color(region);
        let mut var = [0.0f64; 3];
        let mut cx = 0.0;
        let mut cy = 0.0;
        for &px in pixels {
            let c = image.get_index(px as usize);
            for ch in 0..3 {
                let d = c[ch] - mean[ch];
                var[ch] += d * d;
            }
            cx += (px as usize % w) as f64;
            cy += (px as usize / w) as f64;
        }
        out.push([
            mean[0],
            mean[1],
            mean[2],
            (var[0] / size).sqrt(),
            (var[1] / size).sqrt(),
            (var[2] / size).sqrt(),
            cx / size * x_scale,
            cy / size * y_scale,
            size / n,
        ]);
    }
    Ok(out)
}

/// Training samples for the region classifier: regions where the unary
/// labeling wins a strict majority vote, paired with the voted class.
/// Regions failing the vote are excluded.
pub fn build_region_dataset(
    sp: &SuperpixelMap,
    image: &RgbImage,
    unary_labels: &LabelGrid,
    majority: f64,
) -> Result<Vec<(RegionFeatures, u8)>> {
    let votes = region_label_vote(sp, unary_labels, majority)?;
    let feats = region_features(sp, image)?;
    let out: Vec<(RegionFeatures, u8)> = feats
        .into_iter()
        .zip(votes)
        .filter(|(_, vote)| *vote != UNKNOWN)
        .collect();
    Ok(out)
}

/// Train the region classifier from scratch on the pooled dataset.
pub fn train_region_classifier(
    num_classes: usize,
    dataset: &[(RegionFeatures, u8)],
    schedule: &LrSchedule,
) -> Result<(RegionParams, TrainStats)> {
    if dataset.is_empty() {
        return Err(Error::EmptyRegionDataset);
    }
    let xs: Vec<&[f64]> = dataset.iter().map(|(f, _)| f.as_slice()).collect();
    let ys: Vec<u8> = dataset.iter().map(|(_, y)| *y).collect();
    let (model, stats) = RegionParams::zeros(num_classes)
        .model
        .fit(&xs, &ys, schedule)
        .map_err(|e| e.with_stage("region"))?;
    Ok((RegionParams { model }, stats))
}

#[derive(Debug, Clone)]
pub struct RegionConfidence {
    pub scores: Vec<f64>,
    pub pred_class: u8,
    pub max_score: f64,
}

/// Classifier scores for every region of one image.
pub fn score_regions(
    params: &RegionParams,
    sp: &SuperpixelMap,
    image: &RgbImage,
) -> Result<Vec<RegionConfidence>> {
    if !params.model.is_finite() {
        return Err(Error::NonFiniteParams);
    }
    let feats = region_features(sp, image)?;
    let c = params.num_classes();
    let mut out = Vec::with_capacity(feats.len());
    for f in &feats {
        let mut scores = vec![0.0; c];
        params.model.predict_into(f, &mut scores);
        let mut best = 0usize;
        for (k, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = k;
            }
        }
        out.push(RegionConfidence {
            max_score: scores[best],
            pred_class: best as u8,
            scores,
        });
    }
    Ok(out)
}

/// Keep regions whose top score strictly exceeds `threshold`, labeling all
/// of their pixels with the predicted class; every other pixel is UNKNOWN.
pub fn mine_confident(
    sp: &SuperpixelMap,
    image: &RgbImage,
    params: &RegionParams,
    threshold: f64,
) -> Result<(LabelGrid, Vec<RegionConfidence>)> {
    let c = params.num_classes();
    if !(threshold > 1.0 / c as f64 && threshold < 1.0) {
        return Err(Error::InvalidParam {
            name: "mining_threshold",
            value: threshold,
        });
    }
    let confidences = score_regions(params, sp, image)?;
    let mut labels = LabelGrid::filled(sp.width(), sp.height(), c, UNKNOWN)?;
    for (region, conf) in confidences.iter().enumerate() {
        if conf.max_score > threshold {
            for &px in sp.region_pixels(region) {
                labels.set_index(px as usize, conf.pred_class);
            }
        }
    }
    Ok((labels, confidences))
}

/// Per-region score table for the inspection commands.
pub fn scores_csv(confidences: &[RegionConfidence]) -> String {
    let mut out = String::from("region_id,pred_class,score\n");
    for (region, conf) in confidences.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{:.6}\n",
            region, conf.pred_class, conf.max_score
        ));
    }
    out
}
