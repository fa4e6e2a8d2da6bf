//! Learned directional propagation.
//!
//! A small gate model maps the concatenated features of a pixel and its
//! scan predecessor to one gate weight per (direction, channel group):
//! four raster-scan directions times three groups, twelve fields in all.
//! Each scan line runs the linear recurrence
//!
//!   h[i] = (1 - g[i]) * x[i] + g[i] * h[i-1]
//!
//! with h fixed to the input at the line start, so zero gates make the
//! operator the identity. Probability channels are assigned to the three
//! gate groups round robin (channel c uses group c mod 3). The four
//! directional results are averaged and renormalized per pixel.
//!
//! Training minimizes a cross-entropy term against mined labels plus a
//! region smoothness penalty that pulls each gate field toward its mean
//! within every superpixel. Gradients flow through the recurrence by
//! reverse scans; there is no autodiff here, every derivative is spelled
//! out and checked against finite differences in the test suites.

use crate::error::{Error, Result};
use crate::features::{PixelFeatures, FEATURE_DIM};
use crate::grid::{LabelGrid, ProbGrid, UNKNOWN};
use crate::linear::{TrainStats, INPUT_CENTER, LOSS_RECORD_EVERY, MOMENTUM, PROB_FLOOR};
use crate::schedule::LrSchedule;
use crate::superpixel::SuperpixelMap;

/// Gates live in [0, 1 - GATE_EPS]; the margin keeps the recurrence and its
/// backward pass away from the divergent g = 1 regime.
pub const GATE_EPS: f64 = 1e-3;

/// Gate model input: features of the pixel and of its scan predecessor.
pub const PAIR_INPUT_DIM: usize = 2 * FEATURE_DIM;

pub const NUM_DIRECTIONS: usize = 4;
pub const NUM_GROUPS: usize = 3;
pub const GATE_FIELDS: usize = NUM_DIRECTIONS * NUM_GROUPS;

/// Steepness of the gate squash. The raw pair score w'[f_i; f_j] + b lives
/// on the scale of the feature values, so the squash needs a fixed gain for
/// the base learning rate of 1e-5 to traverse the gate range within one
/// training run.
pub const SQUASH_GAIN: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LeftRight,
    RightLeft,
    TopDown,
    BottomUp,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::LeftRight,
        Direction::RightLeft,
        Direction::TopDown,
        Direction::BottomUp,
    ];

    pub fn index(self) -> usize {
        match self {
            Direction::LeftRight => 0,
            Direction::RightLeft => 1,
            Direction::TopDown => 2,
            Direction::BottomUp => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Direction::LeftRight => "lr",
            Direction::RightLeft => "rl",
            Direction::TopDown => "td",
            Direction::BottomUp => "bu",
        }
    }
}

/// Per-pixel gate weights for every (direction, channel group) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityField {
    width: usize,
    height: usize,
    /// Field-major layout: gates[(dir*3 + group) * n + pixel].
    gates: Vec<f64>,
}

impl AffinityField {
    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_raw(width, height, vec![value; GATE_FIELDS * width * height])
    }

    pub fn from_raw(width: usize, height: usize, gates: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if gates.len() != GATE_FIELDS * width * height {
            return Err(Error::BadBufferLength {
                width,
                height,
                channels: GATE_FIELDS,
                got: gates.len(),
            });
        }
        for &g in &gates {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::GateOutOfRange(g));
            }
        }
        Ok(Self {
            width,
            height,
            gates,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Pixel count N.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn field(&self, dir: Direction, group: usize) -> &[f64] {
        let n = self.len();
        let base = (dir.index() * NUM_GROUPS + group) * n;
        &self.gates[base..base + n]
    }

    pub fn field_mut(&mut self, dir: Direction, group: usize) -> &mut [f64] {
        let n = self.len();
        let base = (dir.index() * NUM_GROUPS + group) * n;
        &mut self.gates[base..base + n]
    }

    pub fn gates(&self) -> &[f64] {
        &self.gates
    }

    /// One field scaled to bytes for graymap export.
    pub fn field_bytes(&self, dir: Direction, group: usize) -> Vec<u8> {
        self.field(dir, group)
            .iter()
            .map(|&g| (g * 255.0).round() as u8)
            .collect()
    }
}

/// Parameters of the gate model: one 16-dimensional linear score per
/// (direction, channel group), squashed into [0, 1 - GATE_EPS).
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseParams {
    /// Row-major GATE_FIELDS x PAIR_INPUT_DIM.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PairwiseParams {
    pub fn zeros() -> Self {
        Self {
            weights: vec![0.0; GATE_FIELDS * PAIR_INPUT_DIM],
            bias: vec![0.0; GATE_FIELDS],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }

    pub fn named_floats(&self) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(self.weights.len() + self.bias.len());
        for row in 0..GATE_FIELDS {
            for k in 0..PAIR_INPUT_DIM {
                out.push((
                    format!("pairwise_w_{row}_{k}"),
                    self.weights[row * PAIR_INPUT_DIM + k],
                ));
            }
        }
        for row in 0..GATE_FIELDS {
            out.push((format!("pairwise_b_{row}"), self.bias[row]));
        }
        out
    }

    pub fn from_named_floats(pairs: &[(String, f64)]) -> Result<Self> {
        let mut params = Self::zeros();
        let mut seen = 0usize;
        for (name, value) in pairs {
            if let Some(rest) = name.strip_prefix("pairwise_w_") {
                let mut it = rest.split('_');
                let row: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::MalformedParams(name.clone()))?;
                let k: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::MalformedParams(name.clone()))?;
                if row >= GATE_FIELDS || k >= PAIR_INPUT_DIM {
                    return Err(Error::MalformedParams(name.clone()));
                }
                params.weights[row * PAIR_INPUT_DIM + k] = *value;
                seen += 1;
            } else if let Some(rest) = name.strip_prefix("pairwise_b_") {
                let row: usize = rest
                    .parse()
                    .map_err(|_| Error::MalformedParams(name.clone()))?;
                if row >= GATE_FIELDS {
                    return Err(Error::MalformedParams(name.clone()));
                }
                params.bias[row] = *value;
                seen += 1;
            }
        }
        if seen != GATE_FIELDS * (PAIR_INPUT_DIM + 1) {
            return Err(Error::MalformedParams(format!(
                "expected {} pairwise entries, found {seen}",
                GATE_FIELDS * (PAIR_INPUT_DIM + 1)
            )));
        }
        Ok(params)
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dot product against inputs shifted by the shared centering constant
/// (see `linear::INPUT_CENTER`).
#[inline]
fn dot8_centered(w: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), 8);
    debug_assert_eq!(x.len(), 8);
    w[0] * (x[0] - INPUT_CENTER)
        + w[1] * (x[1] - INPUT_CENTER)
        + w[2] * (x[2] - INPUT_CENTER)
        + w[3] * (x[3] - INPUT_CENTER)
        + w[4] * (x[4] - INPUT_CENTER)
        + w[5] * (x[5] - INPUT_CENTER)
        + w[6] * (x[6] - INPUT_CENTER)
        + w[7] * (x[7] - INPUT_CENTER)
}

/// Index of the scan predecessor, or the pixel itself at line starts
/// (start gates are never used by the recurrence; giving them the
/// self-pair score keeps the exported fields smooth).
#[inline]
fn predecessor(dir: Direction, px: usize, w: usize, h: usize) -> usize {
    let x = px % w;
    let y = px / w;
    match dir {
        Direction::LeftRight => {
            if x > 0 {
                px - 1
            } else {
                px
            }
        }
        Direction::RightLeft => {
            if x + 1 < w {
                px + 1
            } else {
                px
            }
        }
        Direction::TopDown => {
            if y > 0 {
                px - w
            } else {
                px
            }
        }
        Direction::BottomUp => {
            if y + 1 < h {
                px + w
            } else {
                px
            }
        }
    }
}

/// Evaluate the gate model on every pixel pair of an image.
pub fn compute_gates(params: &PairwiseParams, feats: &PixelFeatures) -> Result<AffinityField> {
    if !params.is_finite() {
        return Err(Error::NonFiniteParams);
    }
    let (w, h) = (feats.width(), feats.height());
    let n = w * h;
    // per-pixel contributions of the own-feature and predecessor-feature
    // halves of each row, bias folded into the predecessor half
    let mut own = vec![0.0; GATE_FIELDS * n];
    let mut pred_part = vec![0.0; GATE_FIELDS * n];
    for px in 0..n {
        let f = feats.get(px);
        for row in 0..GATE_FIELDS {
            let wrow = &params.weights[row * PAIR_INPUT_DIM..(row + 1) * PAIR_INPUT_DIM];
            own[row * n + px] = dot8_centered(&wrow[..FEATURE_DIM], f);
            pred_part[row * n + px] = dot8_centered(&wrow[FEATURE_DIM..], f) + params.bias[row];
        }
    }
    let mut gates = vec![0.0; GATE_FIELDS * n];
    for dir in Direction::ALL {
        for group in 0..NUM_GROUPS {
            let row = dir.index() * NUM_GROUPS + group;
            let own_row = &own[row * n..(row + 1) * n];
            let pred_row = &pred_part[row * n..(row + 1) * n];
            let out = &mut gates[row * n..(row + 1) * n];
            for px in 0..n {
                let q = predecessor(dir, px, w, h);
                let z = own_row[px] + pred_row[q];
                out[px] = (1.0 - GATE_EPS) * sigmoid(SQUASH_GAIN * z);
            }
        }
    }
    Ok(AffinityField {
        width: w,
        height: h,
        gates,
    })
}

/// One directional scan of a single channel.
pub(crate) fn scan(
    dir: Direction,
    gates: &[f64],
    input: &[f64],
    w: usize,
    h: usize,
    out: &mut [f64],
) {
    match dir {
        Direction::LeftRight => {
            for y in 0..h {
                let row = y * w;
                out[row] = input[row];
                for x in 1..w {
                    let i = row + x;
                    let g = gates[i];
                    out[i] = (1.0 - g) * input[i] + g * out[i - 1];
                }
            }
        }
        Direction::RightLeft => {
            for y in 0..h {
                let row = y * w;
                out[row + w - 1] = input[row + w - 1];
                for x in (0..w - 1).rev() {
                    let i = row + x;
                    let g = gates[i];
                    out[i] = (1.0 - g) * input[i] + g * out[i + 1];
                }
            }
        }
        Direction::TopDown => {
            out[..w].copy_from_slice(&input[..w]);
            for y in 1..h {
                for x in 0..w {
                    let i = y * w + x;
                    let g = gates[i];
                    out[i] = (1.0 - g) * input[i] + g * out[i - w];
                }
            }
        }
        Direction::BottomUp => {
            let last = (h - 1) * w;
            out[last..].copy_from_slice(&input[last..last + w]);
            for y in (0..h - 1).rev() {
                for x in 0..w {
                    let i = y * w + x;
                    let g = gates[i];
                    out[i] = (1.0 - g) * input[i] + g * out[i + w];
                }
            }
        }
    }
}

/// Reverse-mode sweep of `scan`: consumes the output gradient in `d_out`
/// (which afterwards holds the input gradient contribution of interior
/// copies) and accumulates the gate gradient.
pub(crate) fn scan_backward(
    dir: Direction,
    gates: &[f64],
    input: &[f64],
    scanned: &[f64],
    d_out: &mut [f64],
    d_gate: &mut [f64],
    w: usize,
    h: usize,
) {
    match dir {
        Direction::LeftRight => {
            for y in 0..h {
                let row = y * w;
                for x in (1..w).rev() {
                    let i = row + x;
                    d_gate[i] += d_out[i] * (scanned[i - 1] - input[i]);
                    d_out[i - 1] += d_out[i] * gates[i];
                }
            }
        }
        Direction::RightLeft => {
            for y in 0..h {
                let row = y * w;
                for x in 0..w - 1 {
                    let i = row + x;
                    d_gate[i] += d_out[i] * (scanned[i + 1] - input[i]);
                    d_out[i + 1] += d_out[i] * gates[i];
                }
            }
        }
        Direction::TopDown => {
            for y in (1..h).rev() {
                for x in 0..w {
                    let i = y * w + x;
                    d_gate[i] += d_out[i] * (scanned[i - w] - input[i]);
                    d_out[i - w] += d_out[i] * gates[i];
                }
            }
        }
        Direction::BottomUp => {
            for y in 0..h - 1 {
                for x in 0..w {
                    let i = y * w + x;
                    d_gate[i] += d_out[i] * (scanned[i + w] - input[i]);
                    d_out[i + w] += d_out[i] * gates[i];
                }
            }
        }
    }
}

fn check_gate_shapes(gates: &AffinityField, alpha: &ProbGrid) -> Result<()> {
    if gates.width() != alpha.width() || gates.height() != alpha.height() {
        return Err(Error::DimensionMismatch(
            gates.width(),
            gates.height(),
            alpha.width(),
            alpha.height(),
        ));
    }
    Ok(())
}

/// Refine a probability field: scan every channel in all four directions,
/// average the directional results and renormalize each pixel.
pub fn propagate(gates: &AffinityField, alpha_u: &ProbGrid) -> Result<ProbGrid> {
    check_gate_shapes(gates, alpha_u)?;
    for &g in gates.gates() {
        if !(0.0..1.0).contains(&g) {
            return Err(Error::GateOutOfRange(g));
        }
    }
    let fwd = forward(gates, alpha_u);
    Ok(fwd.into_prob_grid(alpha_u))
}

/// Intermediates of one propagation pass, kept around for the backward
/// sweep during training. Buffers are channel-major.
struct Forward {
    n: usize,
    classes: usize,
    inputs: Vec<f64>,
    scans: Vec<f64>,
    sums: Vec<f64>,
    out: Vec<f64>,
}

fn forward(gates: &AffinityField, alpha: &ProbGrid) -> Forward {
    let (w, h) = (gates.width(), gates.height());
    let n = w * h;
    let c = alpha.num_classes();
    let mut inputs = vec![0.0; c * n];
    for px in 0..n {
        let row = alpha.probs(px);
        for ch in 0..c {
            inputs[ch * n + px] = row[ch];
        }
    }
    let mut scans = vec![0.0; NUM_DIRECTIONS * c * n];
    for dir in Direction::ALL {
        for ch in 0..c {
            let field = gates.field(dir, ch % NUM_GROUPS);
            let input = &inputs[ch * n..(ch + 1) * n];
            let base = (dir.index() * c + ch) * n;
            scan(dir, field, input, w, h, &mut scans[base..base + n]);
        }
    }
    let mut pre = vec![0.0; c * n];
    for ch in 0..c {
        let s0 = &scans[ch * n..(ch + 1) * n];
        let s1 = &scans[(c + ch) * n..(c + ch + 1) * n];
        let s2 = &scans[(2 * c + ch) * n..(2 * c + ch + 1) * n];
        let s3 = &scans[(3 * c + ch) * n..(3 * c + ch + 1) * n];
        let dst = &mut pre[ch * n..(ch + 1) * n];
        for px in 0..n {
            // pairwise tree keeps the average bit-exact when all four
            // directions agree (the zero-gate identity case)
            dst[px] = ((s0[px] + s1[px]) + (s2[px] + s3[px])) / 4.0;
        }
    }
    let mut sums = vec![0.0; n];
    for px in 0..n {
        let mut s = 0.0;
        for ch in 0..c {
            s += pre[ch * n + px];
        }
        sums[px] = s;
    }
    let mut out = vec![0.0; c * n];
    for ch in 0..c {
        for px in 0..n {
            out[ch * n + px] = pre[ch * n + px] / sums[px];
        }
    }
    Forward {
        n,
        classes: c,
        inputs,
        scans,
        sums,
        out,
    }
}

impl Forward {
    fn into_prob_grid(self, like: &ProbGrid) -> ProbGrid {
        let (n, c) = (self.n, self.classes);
        let mut data = vec![0.0; c * n];
        for px in 0..n {
            for ch in 0..c {
                data[px * c + ch] = self.out[ch * n + px];
            }
        }
        ProbGrid::from_raw(like.width(), like.height(), c, data)
            .expect("forward output matches input shape")
    }
}

/// Mean negative log-probability of the labeled class over non-UNKNOWN
/// pixels. Returns (0.0, true) when nothing is labeled.
pub fn affinity_loss(alpha_p: &ProbGrid, labels: &LabelGrid) -> Result<(f64, bool)> {
    alpha_p.same_shape_labels(labels)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (px, &v) in labels.values().iter().enumerate() {
        if v == UNKNOWN {
            continue;
        }
        total -= alpha_p.probs(px)[v as usize].max(PROB_FLOOR).ln();
        count += 1;
    }
    if count == 0 {
        Ok((0.0, true))
    } else {
        Ok((total / count as f64, false))
    }
}

/// Mean over the twelve gate fields and all pixels of the squared deviation
/// from the field's mean inside the pixel's superpixel.
pub fn smoothness_loss(gates: &AffinityField, sp: &SuperpixelMap) -> Result<f64> {
    if gates.width() != sp.width() || gates.height() != sp.height() {
        return Err(Error::DimensionMismatch(
            gates.width(),
            gates.height(),
            sp.width(),
            sp.height(),
        ));
    }
    let n = gates.len();
    let mut total = 0.0;
    for dir in Direction::ALL {
        for group in 0..NUM_GROUPS {
            let field = gates.field(dir, group);
            for region in 0..sp.region_count() {
                let pixels = sp.region_pixels(region);
                let mean: f64 =
                    pixels.iter().map(|&px| field[px as usize]).sum::<f64>() / pixels.len() as f64;
                for &px in pixels {
                    let d = field[px as usize] - mean;
                    total += d * d;
                }
            }
        }
    }
    Ok(total / (GATE_FIELDS * n) as f64)
}

/// One image of the pairwise training batch.
pub struct PairwiseBatchItem<'a> {
    pub feats: &'a PixelFeatures,
    pub alpha_u: &'a ProbGrid,
    pub labels: &'a LabelGrid,
    pub superpixels: &'a SuperpixelMap,
}

#[derive(Debug, Clone)]
pub struct PairwiseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PairwiseGrad {
    fn zeros() -> Self {
        Self {
            weights: vec![0.0; GATE_FIELDS * PAIR_INPUT_DIM],
            bias: vec![0.0; GATE_FIELDS],
        }
    }
}

fn batch_labeled_count(batch: &[PairwiseBatchItem<'_>]) -> usize {
    batch.iter().map(|item| item.labels.labeled_count()).sum()
}

/// Total training objective: pooled cross-entropy over labeled pixels plus
/// `lambda_s` times the per-image mean smoothness penalty.
pub fn pairwise_loss(
    params: &PairwiseParams,
    batch: &[PairwiseBatchItem<'_>],
    lambda_s: f64,
) -> Result<f64> {
    let total_labeled = batch_labeled_count(batch);
    let mut nll = 0.0;
    let mut smooth = 0.0;
    for item in batch {
        item.alpha_u.same_shape_labels(item.labels)?;
        let gates = compute_gates(params, item.feats)?;
        let fwd = forward(&gates, item.alpha_u);
        let n = fwd.n;
        for (px, &v) in item.labels.values().iter().enumerate() {
            if v == UNKNOWN {
                continue;
            }
            nll -= fwd.out[v as usize * n + px].max(PROB_FLOOR).ln();
        }
        smooth += smoothness_loss(&gates, item.superpixels)?;
    }
    let nll_term = if total_labeled == 0 {
        0.0
    } else {
        nll / total_labeled as f64
    };
    Ok(nll_term + lambda_s * smooth / batch.len() as f64)
}

/// Loss and its gradient with respect to the gate-model parameters.
pub fn pairwise_loss_and_grad(
    params: &PairwiseParams,
    batch: &[PairwiseBatchItem<'_>],
    lambda_s: f64,
) -> Result<(f64, PairwiseGrad)> {
    let total_labeled = batch_labeled_count(batch);
    let mut grad = PairwiseGrad::zeros();
    let mut nll = 0.0;
    let mut smooth = 0.0;
    let inv_images = 1.0 / batch.len() as f64;
    for item in batch {
        item.alpha_u.same_shape_labels(item.labels)?;
        let (w, h) = (item.feats.width(), item.feats.height());
        let n = w * h;
        let c = item.alpha_u.num_classes();
        let gates = compute_gates(params, item.feats)?;
        let fwd = forward(&gates, item.alpha_u);

        // cross-entropy and its gradient on the renormalized output
        let mut d_out = vec![0.0; c * n];
        if total_labeled > 0 {
            let scale = 1.0 / total_labeled as f64;
            for (px, &v) in item.labels.values().iter().enumerate() {
                if v == UNKNOWN {
                    continue;
                }
                let p = fwd.out[v as usize * n + px];
                nll -= p.max(PROB_FLOOR).ln();
                if p >= PROB_FLOOR {
                    d_out[v as usize * n + px] = -scale / p;
                }
            }
        }

        // renormalization backward
        let mut d_pre = vec![0.0; c * n];
        for px in 0..n {
            let mut dot = 0.0;
            for ch in 0..c {
                dot += d_out[ch * n + px] * fwd.out[ch * n + px];
            }
            let inv_s = 1.0 / fwd.sums[px];
            for ch in 0..c {
                d_pre[ch * n + px] = (d_out[ch * n + px] - dot) * inv_s;
            }
        }

        // directional scans backward, gate gradient pooled per group
        let mut d_gate = vec![0.0; GATE_FIELDS * n];
        let mut d_h = vec![0.0; n];
        for dir in Direction::ALL {
            for ch in 0..c {
                let group = ch % NUM_GROUPS;
                let row = dir.index() * NUM_GROUPS + group;
                for px in 0..n {
                    d_h[px] = d_pre[ch * n + px] * 0.25;
                }
                let base = (dir.index() * c + ch) * n;
                scan_backward(
                    dir,
                    gates.field(dir, group),
                    &fwd.inputs[ch * n..(ch + 1) * n],
                    &fwd.scans[base..base + n],
                    &mut d_h,
                    &mut d_gate[row * n..(row + 1) * n],
                    w,
                    h,
                );
            }
        }

        // smoothness term value and gradient (the region-mean term cancels)
        let sp = item.superpixels;
        if sp.width() != w || sp.height() != h {
            return Err(Error::DimensionMismatch(w, h, sp.width(), sp.height()));
        }
        let smooth_scale = lambda_s * inv_images * 2.0 / (GATE_FIELDS * n) as f64;
        let mut smooth_raw = 0.0;
        for dir in Direction::ALL {
            for group in 0..NUM_GROUPS {
                let row = dir.index() * NUM_GROUPS + group;
                let field = gates.field(dir, group);
                let dg = &mut d_gate[row * n..(row + 1) * n];
                for region in 0..sp.region_count() {
                    let pixels = sp.region_pixels(region);
                    let mean: f64 = pixels.iter().map(|&px| field[px as usize]).sum::<f64>()
                        / pixels.len() as f64;
                    for &px in pixels {
                        let d = field[px as usize] - mean;
                        smooth_raw += d * d;
                        dg[px as usize] += smooth_scale * d;
                    }
                }
            }
        }
        smooth += smooth_raw / (GATE_FIELDS * n) as f64;

        // chain through the squash into the linear parameters
        for dir in Direction::ALL {
            for group in 0..NUM_GROUPS {
                let row = dir.index() * NUM_GROUPS + group;
                let field = gates.field(dir, group);
                let dg = &d_gate[row * n..(row + 1) * n];
                let wrow = row * PAIR_INPUT_DIM;
                for px in 0..n {
                    let dgv = dg[px];
                    if dgv == 0.0 {
                        continue;
                    }
                    let s = field[px] / (1.0 - GATE_EPS);
                    let dz = dgv * (1.0 - GATE_EPS) * s * (1.0 - s) * SQUASH_GAIN;
                    let f_own = item.feats.get(px);
                    let f_pred = item.feats.get(predecessor(dir, px, w, h));
                    for k in 0..FEATURE_DIM {
                        grad.weights[wrow + k] += dz * (f_own[k] - INPUT_CENTER);
                        grad.weights[wrow + FEATURE_DIM + k] += dz * (f_pred[k] - INPUT_CENTER);
                    }
                    grad.bias[row] += dz;
                }
            }
        }
    }
    let nll_term = if total_labeled == 0 {
        0.0
    } else {
        nll / total_labeled as f64
    };
    Ok((nll_term + lambda_s * smooth * inv_images, grad))
}

/// Full-batch gradient descent on the pairwise objective. When the batch
/// carries no labeled pixel at all there is no supervision signal and the
/// parameters are returned unchanged.
pub fn train_pairwise(
    params: &PairwiseParams,
    batch: &[PairwiseBatchItem<'_>],
    lambda_s: f64,
    schedule: &LrSchedule,
) -> Result<(PairwiseParams, TrainStats)> {
    if !params.is_finite() {
        return Err(Error::NonFiniteParams);
    }
    if !(lambda_s >= 0.0 && lambda_s.is_finite()) {
        return Err(Error::InvalidParam {
            name: "lambda_s",
            value: lambda_s,
        });
    }
    if batch.is_empty() || batch_labeled_count(batch) == 0 {
        return Ok((params.clone(), TrainStats::default()));
    }
    let mut model = params.clone();
    let mut stats = TrainStats::default();
    let mut vel_w = vec![0.0; model.weights.len()];
    let mut vel_b = vec![0.0; model.bias.len()];
    let steps = schedule.max_iters();
    for k in 0..steps {
        let (loss, grad) = pairwise_loss_and_grad(&model, batch, lambda_s)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                stage: "pairwise",
                step: k,
                loss,
            });
        }
        if k == 0 {
            stats.initial_loss = loss;
        }
        if k % LOSS_RECORD_EVERY == 0 {
            stats.recorded.push((k, loss));
        }
        let lr = schedule.lr_at(k)?;
        for ((w, g), v) in model.weights.iter_mut().zip(&grad.weights).zip(vel_w.iter_mut()) {
            *v = MOMENTUM * *v - lr * g;
            *w += *v;
        }
        for ((b, g), v) in model.bias.iter_mut().zip(&grad.bias).zip(vel_b.iter_mut()) {
            *v = MOMENTUM * *v - lr * g;
            *b += *v;
        }
    }
    stats.final_loss = pairwise_loss(&model, batch, lambda_s)?;
    stats.steps = steps;
    if !stats.final_loss.is_finite() {
        return Err(Error::Divergence {
            stage: "pairwise",
            step: steps,
            loss: stats.final_loss,
        });
    }
    Ok((model, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::extract_features;
    use crate::image::RgbImage;
    use crate::superpixel::segment;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_prob_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> ProbGrid {
        let mut g = ProbGrid::uniform(w, h, c).unwrap();
        for px in 0..g.len() {
            for v in g.probs_mut(px).iter_mut() {
                *v = rng.gen_range(0.05..1.0);
            }
        }
        g.normalize();
        g
    }

    fn random_gates(rng: &mut ChaCha8Rng, w: usize, h: usize) -> AffinityField {
        let gates = (0..GATE_FIELDS * w * h)
            .map(|_| rng.gen_range(0.0..(1.0 - GATE_EPS)))
            .collect();
        AffinityField::from_raw(w, h, gates).unwrap()
    }

    #[test]
    fn zero_parameters_give_one_constant_gate_value() {
        let img = RgbImage::filled(4, 3, [0.2, 0.5, 0.8]).unwrap();
        let feats = extract_features(&img);
        let gates = compute_gates(&PairwiseParams::zeros(), &feats).unwrap();
        let expected = (1.0 - GATE_EPS) * 0.5;
        for &g in gates.gates() {
            assert_eq!(g, expected);
        }
    }

    #[test]
    fn identical_feature_pairs_get_identical_gates() {
        // zero the coordinate-feature weights so features of equal-colored
        // pixels coincide; every pixel pair of a constant image is then
        // identical (local means up to summation order) and the fields must
        // be flat
        let mut params = PairwiseParams::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for w in params.weights.iter_mut() {
            *w = rng.gen_range(-0.5..0.5);
        }
        for row in 0..GATE_FIELDS {
            for coord in [3, 4, FEATURE_DIM + 3, FEATURE_DIM + 4] {
                params.weights[row * PAIR_INPUT_DIM + coord] = 0.0;
            }
        }
        let img = RgbImage::filled(5, 2, [0.4, 0.2, 0.6]).unwrap();
        let gates = compute_gates(&params, &extract_features(&img)).unwrap();
        for dir in Direction::ALL {
            for group in 0..NUM_GROUPS {
                let f = gates.field(dir, group);
                for &g in f.iter() {
                    assert!((g - f[0]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn different_pairs_get_different_gates_under_nonzero_weights() {
        let mut img = RgbImage::filled(3, 1, [0.0, 0.0, 0.0]).unwrap();
        img.set(2, 0, [1.0, 1.0, 1.0]);
        let feats = extract_features(&img);
        let mut params = PairwiseParams::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for w in params.weights.iter_mut() {
            *w = rng.gen_range(-0.5..0.5);
        }
        let gates = compute_gates(&params, &feats).unwrap();
        // pixel 1 follows an identical predecessor, pixel 2 a maximally
        // different one
        let field = gates.field(Direction::LeftRight, 0);
        assert_ne!(field[1], field[2]);
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let img = RgbImage::filled(2, 2, [0.5; 3]).unwrap();
        let feats = extract_features(&img);
        let mut params = PairwiseParams::zeros();
        params.weights[0] = f64::NAN;
        assert!(matches!(
            compute_gates(&params, &feats),
            Err(Error::NonFiniteParams)
        ));
    }

    #[test]
    fn zero_gates_are_the_identity() {
        let gates = AffinityField::constant(4, 3, 0.0).unwrap();
        // dyadic probabilities keep every per-pixel sum exactly 1.0
        let mut alpha = ProbGrid::uniform(4, 3, 4).unwrap();
        for px in 0..alpha.len() {
            alpha
                .probs_mut(px)
                .copy_from_slice(&[0.5, 0.25, 0.125, 0.125]);
        }
        let out = propagate(&gates, &alpha).unwrap();
        assert_eq!(out, alpha);
    }

    #[test]
    fn near_one_gates_carry_mass_down_the_scan_line() {
        // single row, one channel: after two near-unity gates the start
        // value has propagated to the end of the line
        let g = 1.0 - GATE_EPS;
        let input = [1.0, 0.0, 0.0];
        let gates = [0.0, g, g];
        let mut out = [0.0; 3];
        scan(Direction::LeftRight, &gates, &input, 3, 1, &mut out);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[1], g);
        assert!((out[2] - g * g).abs() < 1e-15);
        assert!(out[2] >= 0.998);
    }

    #[test]
    fn out_of_range_gate_rejected() {
        assert!(matches!(
            AffinityField::from_raw(2, 1, vec![1.0; GATE_FIELDS * 2]),
            Err(Error::GateOutOfRange(_))
        ));
        assert!(matches!(
            AffinityField::from_raw(2, 1, vec![-0.1; GATE_FIELDS * 2]),
            Err(Error::GateOutOfRange(_))
        ));
    }

    /// Dense oracle: assemble the per-direction propagation matrix from the
    /// unrolled recurrence coefficients and replicate fusion and
    /// renormalization on top.
    fn dense_propagate(gates: &AffinityField, alpha: &ProbGrid) -> ProbGrid {
        let (w, h) = (gates.width(), gates.height());
        let n = w * h;
        let c = alpha.num_classes();
        let mut pre = vec![vec![0.0f64; n]; c];
        for dir in Direction::ALL {
            for ch in 0..c {
                let field = gates.field(dir, ch % NUM_GROUPS);
                // dense operator: out = G * x with G built line by line
                let mut op = vec![vec![0.0f64; n]; n];
                let lines: Vec<Vec<usize>> = match dir {
                    Direction::LeftRight => {
                        (0..h).map(|y| (0..w).map(|x| y * w + x).collect()).collect()
                    }
                    Direction::RightLeft => (0..h)
                        .map(|y| (0..w).rev().map(|x| y * w + x).collect())
                        .collect(),
                    Direction::TopDown => {
                        (0..w).map(|x| (0..h).map(|y| y * w + x).collect()).collect()
                    }
                    Direction::BottomUp => (0..w)
                        .map(|x| (0..h).rev().map(|y| y * w + x).collect())
                        .collect(),
                };
                for line in lines {
                    for (pos, &i) in line.iter().enumerate() {
                        // coefficient of x[line[k]] in h[i]
                        for k in 0..=pos {
                            let j = line[k];
                            let coeff = if k == pos {
                                if pos == 0 {
                                    1.0
                                } else {
                                    1.0 - field[i]
                                }
                            } else {
                                let mut prod = if k == 0 { 1.0 } else { 1.0 - field[j] };
                                for &m in &line[k + 1..=pos] {
                                    prod *= field[m];
                                }
                                prod
                            };
                            op[i][j] += coeff;
                        }
                    }
                }
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += op[i][j] * alpha.probs(j)[ch];
                    }
                    pre[ch][i] += acc / 4.0;
                }
            }
        }
        let mut data = vec![0.0; n * c];
        for px in 0..n {
            let s: f64 = (0..c).map(|ch| pre[ch][px]).sum();
            for ch in 0..c {
                data[px * c + ch] = pre[ch][px] / s;
            }
        }
        ProbGrid::from_raw(alpha.width(), alpha.height(), c, data).unwrap()
    }

    #[test]
    fn recurrence_matches_dense_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let w = rng.gen_range(1..=4);
            let h = rng.gen_range(1..=4);
            let gates = random_gates(&mut rng, w, h);
            let alpha = random_prob_grid(&mut rng, w, h, 4);
            let fast = propagate(&gates, &alpha).unwrap();
            let dense = dense_propagate(&gates, &alpha);
            for (a, b) in fast.data().iter().zip(dense.data()) {
                assert!((a - b).abs() < 1e-9, "fast {a} dense {b}");
            }
        }
    }

    #[test]
    fn affinity_loss_values() {
        // perfect prediction
        let alpha = ProbGrid::from_raw(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let labels = LabelGrid::from_values(2, 1, 2, vec![0, 1]).unwrap();
        assert_eq!(affinity_loss(&alpha, &labels).unwrap(), (0.0, false));

        // single pixel with true-class probability e^{-1}
        let p = (-1.0f64).exp();
        let alpha = ProbGrid::from_raw(1, 1, 2, vec![p, 1.0 - p]).unwrap();
        let labels = LabelGrid::from_values(1, 1, 2, vec![0]).unwrap();
        let (loss, vacuous) = affinity_loss(&alpha, &labels).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
        assert!(!vacuous);

        // two pixels with true-class probabilities 0.5 and 0.25
        let alpha = ProbGrid::from_raw(2, 1, 2, vec![0.5, 0.5, 0.25, 0.75]).unwrap();
        let labels = LabelGrid::from_values(2, 1, 2, vec![0, 0]).unwrap();
        let (loss, _) = affinity_loss(&alpha, &labels).unwrap();
        let expected = (2.0f64.ln() + 4.0f64.ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-12);

        // all-UNKNOWN labels are vacuous
        let labels = LabelGrid::filled(2, 1, 2, UNKNOWN).unwrap();
        assert_eq!(affinity_loss(&alpha, &labels).unwrap(), (0.0, true));
    }

    #[test]
    fn smoothness_loss_hand_case() {
        // 2-pixel image, one region; one field holds (0.2, 0.4), the other
        // eleven are constant
        let img = RgbImage::filled(2, 1, [0.5; 3]).unwrap();
        let sp = segment(&img, 100.0, 1).unwrap();
        assert_eq!(sp.region_count(), 1);
        let mut gates = AffinityField::constant(2, 1, 0.3).unwrap();
        let f = gates.field_mut(Direction::LeftRight, 0);
        f[0] = 0.2;
        f[1] = 0.4;
        let loss = smoothness_loss(&gates, &sp).unwrap();
        let expected = 2.0 * 0.1 * 0.1 / (2.0 * 12.0);
        assert!((loss - expected).abs() < 1e-12);

        // constant within every region: zero
        let gates = AffinityField::constant(2, 1, 0.3).unwrap();
        assert_eq!(smoothness_loss(&gates, &sp).unwrap(), 0.0);
    }

    #[test]
    fn all_unknown_supervision_leaves_parameters_unchanged() {
        let img = RgbImage::filled(4, 4, [0.5; 3]).unwrap();
        let feats = extract_features(&img);
        let sp = segment(&img, 100.0, 1).unwrap();
        let alpha = ProbGrid::uniform(4, 4, 3).unwrap();
        let labels = LabelGrid::filled(4, 4, 3, UNKNOWN).unwrap();
        let mut params = PairwiseParams::zeros();
        params.weights[5] = 0.25;
        let batch = [PairwiseBatchItem {
            feats: &feats,
            alpha_u: &alpha,
            labels: &labels,
            superpixels: &sp,
        }];
        let schedule = LrSchedule::polynomial(1e-5, 0.5, 50).unwrap();
        let (trained, stats) = train_pairwise(&params, &batch, 0.1, &schedule).unwrap();
        assert_eq!(trained, params);
        assert_eq!(stats.steps, 0);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut data = vec![0.0; 6 * 6 * 3];
        for v in data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let img = RgbImage::from_raw(6, 6, data).unwrap();
        let feats = extract_features(&img);
        let sp = segment(&img, 50.0, 2).unwrap();
        let alpha = random_prob_grid(&mut rng, 6, 6, 4);
        let mut label_values = vec![0u8; 36];
        for v in label_values.iter_mut() {
            *v = if rng.gen_bool(0.3) {
                UNKNOWN
            } else {
                rng.gen_range(0..4)
            };
        }
        let labels = LabelGrid::from_values(6, 6, 4, label_values).unwrap();
        let mut params = PairwiseParams::zeros();
        for w in params.weights.iter_mut() {
            *w = rng.gen_range(-0.05..0.05);
        }
        for b in params.bias.iter_mut() {
            *b = rng.gen_range(-0.05..0.05);
        }
        let batch = [PairwiseBatchItem {
            feats: &feats,
            alpha_u: &alpha,
            labels: &labels,
            superpixels: &sp,
        }];
        let lambda = 0.1;
        let (_, grad) = pairwise_loss_and_grad(&params, &batch, lambda).unwrap();
        let h = 1e-5;
        let mut p = params.clone();
        for idx in 0..p.weights.len() {
            let g = grad.weights[idx];
            let orig = p.weights[idx];
            p.weights[idx] = orig + h;
            let plus = pairwise_loss(&p, &batch, lambda).unwrap();
            p.weights[idx] = orig - h;
            let minus = pairwise_loss(&p, &batch, lambda).unwrap();
            p.weights[idx] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let denom = g.abs().max(fd.abs()).max(1e-6);
            assert!(
                ((g - fd) / denom).abs() < 1e-4,
                "weight {idx}: analytic {g} vs fd {fd}"
            );
        }
        for idx in 0..p.bias.len() {
            let g = grad.bias[idx];
            let orig = p.bias[idx];
            p.bias[idx] = orig + h;
            let plus = pairwise_loss(&p, &batch, lambda).unwrap();
            p.bias[idx] = orig - h;
            let minus = pairwise_loss(&p, &batch, lambda).unwrap();
            p.bias[idx] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let denom = g.abs().max(fd.abs()).max(1e-6);
            assert!(
                ((g - fd) / denom).abs() < 1e-4,
                "bias {idx}: analytic {g} vs fd {fd}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn propagation_conserves_probability(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = rng.gen_range(1..=6);
            let h = rng.gen_range(1..=6);
            let gates = random_gates(&mut rng, w, h);
            let alpha = random_prob_grid(&mut rng, w, h, 5);
            let out = propagate(&gates, &alpha).unwrap();
            for px in 0..out.len() {
                let s: f64 = out.probs(px).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                for &p in out.probs(px) {
                    prop_assert!(p >= 0.0);
                }
            }
        }
    }
}
