//! Per-pixel softmax classifier over the hand-crafted features.

use crate::error::{Error, Result};
use crate::features::{PixelFeatures, FEATURE_DIM};
use crate::grid::{LabelGrid, ProbGrid, UNKNOWN};
use crate::linear::{LinearSoftmax, TrainStats};
use crate::schedule::LrSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct UnaryParams {
    pub model: LinearSoftmax,
}

impl UnaryParams {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            model: LinearSoftmax::zeros(num_classes, FEATURE_DIM),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.model.classes()
    }

    pub fn named_floats(&self) -> Vec<(String, f64)> {
        self.model.named_floats("unary")
    }

    pub fn from_named_floats(num_classes: usize, pairs: &[(String, f64)]) -> Result<Self> {
        Ok(Self {
            model: LinearSoftmax::from_named_floats("unary", num_classes, FEATURE_DIM, pairs)?,
        })
    }
}

/// Class probabilities at every pixel.
pub fn predict(params: &UnaryParams, feats: &PixelFeatures) -> Result<ProbGrid> {
    if !params.model.is_finite() {
        return Err(Error::NonFiniteParams);
    }
    let c = params.num_classes();
    let mut grid = ProbGrid::uniform(feats.width(), feats.height(), c)?;
    for px in 0..feats.len() {
        params.model.predict_into(feats.get(px), grid.probs_mut(px));
    }
    Ok(grid)
}

/// Training targets: either hard labels or a soft field that is hardened to
/// its per-pixel argmax (exact ties become UNKNOWN) before the softmax loss.
pub enum Supervision<'a> {
    Hard(&'a [LabelGrid]),
    Soft(&'a [ProbGrid]),
}

/// Full-batch training over a corpus of images. UNKNOWN pixels are excluded
/// from the loss; supervising with no labeled pixel at all is an error.
pub fn train_unary(
    params: &UnaryParams,
    feats: &[PixelFeatures],
    supervision: Supervision<'_>,
    schedule: &LrSchedule,
) -> Result<(UnaryParams, TrainStats)> {
    let hardened: Vec<LabelGrid>;
    let targets: &[LabelGrid] = match supervision {
        Supervision::Hard(labels) => labels,
        Supervision::Soft(probs) => {
            hardened = probs.iter().map(|p| p.harden_labels()).collect();
            &hardened
        }
    };
    if targets.len() != feats.len() {
        return Err(Error::DimensionMismatch(targets.len(), 0, feats.len(), 0));
    }
    let mut xs: Vec<&[f64]> = Vec::new();
    let mut ys: Vec<u8> = Vec::new();
    for (f, labels) in feats.iter().zip(targets) {
        if f.len() != labels.len() {
            return Err(Error::DimensionMismatch(
                f.width(),
                f.height(),
                labels.width(),
                labels.height(),
            ));
        }
        for (px, &v) in labels.values().iter().enumerate() {
            if v != UNKNOWN {
                xs.push(f.get(px));
                ys.push(v);
            }
        }
    }
    if xs.is_empty() {
        return Err(Error::NoTrainablePixels);
    }
    let (model, stats) = params
        .model
        .fit(&xs, &ys, schedule)
        .map_err(|e| e.with_stage("unary"))?;
    Ok((UnaryParams { model }, stats))
}
