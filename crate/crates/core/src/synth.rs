//! Synthetic scenes with pixel-exact ground truth and coarse seed labels.
//!
//! Images are colored ellipses and rectangles over a textured background
//! (low-amplitude noise plus a slow luminance ramp, so affinity learning is
//! not trivial). Seeds emulate a coarse localizer: ground-truth regions are
//! eroded, only the most interior fraction is kept, a share of the kept
//! labels is flipped to a wrong class and the rest of the image is UNKNOWN.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{LabelGrid, UNKNOWN};
use crate::image::{color_distance, RgbImage};

/// Base colors, pairwise separated by at least 0.3 in RGB norm. The first
/// two foreground classes sit deliberately close to the background so the
/// seed-trained classifier starts out struggling on them; the later entries
/// are easy anchors.
const PALETTE: [[f64; 3]; 8] = [
    [0.30, 0.34, 0.40], // background
    [0.80, 0.20, 0.20],
    [0.15, 0.62, 0.28],
    [0.38, 0.42, 0.72],
    [0.90, 0.80, 0.20],
    [0.80, 0.25, 0.80],
    [0.15, 0.80, 0.80],
    [0.95, 0.45, 0.05],
];

pub fn class_color(class: usize) -> [f64; 3] {
    PALETTE[class]
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Class count including background (class 0).
    pub num_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            width: 64,
            height: 64,
            num_classes: 4,
            min_shapes: 1,
            max_shapes: 3,
            noise_amplitude: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyImage);
        }
        if self.num_classes < 2 || self.num_classes > PALETTE.len() {
            return Err(Error::InvalidParam {
                name: "num_classes",
                value: self.num_classes as f64,
            });
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return Err(Error::InvalidParam {
                name: "min_shapes",
                value: self.min_shapes as f64,
            });
        }
        if !(0.0..=0.5).contains(&self.noise_amplitude) {
            return Err(Error::InvalidParam {
                name: "noise_amplitude",
                value: self.noise_amplitude,
            });
        }
        for a in 0..self.num_classes {
            for b in a + 1..self.num_classes {
                debug_assert!(color_distance(PALETTE[a], PALETTE[b]) >= 0.3);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Ellipse,
    Rectangle,
}

fn paint_scene(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<(RgbImage, LabelGrid)> {
    let (w, h) = (spec.width, spec.height);
    let mut image = RgbImage::new(w, h)?;
    let mut labels = LabelGrid::filled(w, h, spec.num_classes, 0)?;
    let a = spec.noise_amplitude;
    let x_scale = if w > 1 { 1.0 / (w - 1) as f64 } else { 0.0 };
    let y_scale = if h > 1 { 1.0 / (h - 1) as f64 } else { 0.0 };

    // textured background: base color, luminance ramp, per-pixel noise
    for y in 0..h {
        for x in 0..w {
            let ramp = 0.08 * (x as f64 * x_scale - 0.5) + 0.05 * (y as f64 * y_scale - 0.5);
            let mut color = PALETTE[0];
            for ch in color.iter_mut() {
                *ch = (*ch + ramp + rng.gen_range(-a..=a)).clamp(0.0, 1.0);
            }
            image.set(x, y, color);
        }
    }

    let min_r = 4usize;
    let max_r = (w.min(h) / 4).max(min_r);
    let count = rng.gen_range(spec.min_shapes..=spec.max_shapes);
    for _ in 0..count {
        let mut placed = false;
        for _attempt in 0..100 {
            let rx = rng.gen_range(min_r..=max_r);
            let ry = rng.gen_range(min_r..=max_r);
            if rx + 1 >= w - 1 - rx || ry + 1 >= h - 1 - ry {
                continue;
            }
            let cx = rng.gen_range(rx + 1..w - 1 - rx);
            let cy = rng.gen_range(ry + 1..h - 1 - ry);
            let class = rng.gen_range(1..spec.num_classes) as u8;
            let kind = if rng.gen_bool(0.5) {
                ShapeKind::Ellipse
            } else {
                ShapeKind::Rectangle
            };
            for y in cy - ry..=cy + ry {
                for x in cx - rx..=cx + rx {
                    let dx = (x as f64 - cx as f64) / rx as f64;
                    let dy = (y as f64 - cy as f64) / ry as f64;
                    let inside = match kind {
                        ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
                        ShapeKind::Rectangle => true,
                    };
                    if inside {
                        let mut color = PALETTE[class as usize];
                        for ch in color.iter_mut() {
                            *ch = (*ch + rng.gen_range(-a..=a)).clamp(0.0, 1.0);
                        }
                        image.set(x, y, color);
                        labels.set(x, y, class);
                    }
                }
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::PlacementFailed(100));
        }
    }
    Ok((image, labels))
}

/// Deterministic corpus of images with pixel-exact ground truth.
pub fn generate(spec: &SceneSpec, n_images: usize) -> Result<Vec<(RgbImage, LabelGrid)>> {
    spec.validate()?;
    if n_images == 0 {
        return Err(Error::InvalidParam {
            name: "n_images",
            value: 0.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..n_images).map(|_| paint_scene(spec, &mut rng)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SeedParams {
    pub erode_radius: usize,
    /// Probability of flipping a kept label to a random wrong class.
    pub flip_rate: f64,
    /// Fraction of the most interior surviving pixels to keep per region.
    pub coverage: f64,
}

impl Default for SeedParams {
    fn default() -> Self {
        Self {
            erode_radius: 2,
            flip_rate: 0.3,
            coverage: 0.6,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SeedStats {
    /// Classes present in ground truth that lost every seed pixel.
    pub vanished: Vec<u8>,
}

/// Chebyshev interior depth: the number of 8-neighbor erosions a pixel
/// survives before touching another class. Out-of-image neighbors count as
/// same-class so the image border is not a label boundary.
fn interior_depth(gt: &LabelGrid) -> Vec<u32> {
    let (w, h) = (gt.width(), gt.height());
    let n = w * h;
    let mut alive = vec![true; n];
    let mut depth = vec![0u32; n];
    let max_rounds = w.max(h) as u32;
    for round in 1..=max_rounds {
        let mut next = vec![false; n];
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let px = y * w + x;
                if !alive[px] {
                    continue;
                }
                let label = gt.get_index(px);
                let mut ok = true;
                'nb: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let q = ny * w + nx;
                        if gt.get_index(q) != label || !alive[q] {
                            ok = false;
                            break 'nb;
                        }
                    }
                }
                if ok {
                    next[px] = true;
                    depth[px] = round;
                } else {
                    changed = true;
                }
            }
        }
        if !changed {
            // every remaining pixel survives all further rounds
            for px in 0..n {
                if alive[px] {
                    depth[px] = max_rounds;
                }
            }
            break;
        }
        alive = next;
    }
    depth
}

/// 4-connected components of equal ground-truth label, in row-major
/// first-seen order.
fn components(gt: &LabelGrid) -> (Vec<u32>, usize) {
    let (w, h) = (gt.width(), gt.height());
    let n = w * h;
    let mut comp = vec![u32::MAX; n];
    let mut count = 0usize;
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let label = gt.get_index(start);
        comp[start] = count as u32;
        stack.push(start);
        while let Some(px) = stack.pop() {
            let x = px % w;
            let y = px / w;
            let mut visit = |q: usize| {
                if comp[q] == u32::MAX && gt.get_index(q) == label {
                    comp[q] = count as u32;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(px - 1);
            }
            if x + 1 < w {
                visit(px + 1);
            }
            if y > 0 {
                visit(px - w);
            }
            if y + 1 < h {
                visit(px + w);
            }
        }
        count += 1;
    }
    (comp, count)
}

/// Build a coarse seed map from ground truth. The result's precision is
/// about 1 - flip_rate by construction.
pub fn make_seeds(
    gt: &LabelGrid,
    params: &SeedParams,
    rng: &mut ChaCha8Rng,
) -> Result<(LabelGrid, SeedStats)> {
    if !(params.coverage > 0.0 && params.coverage <= 1.0) {
        return Err(Error::InvalidParam {
            name: "coverage",
            value: params.coverage,
        });
    }
    if !(0.0..=0.3).contains(&params.flip_rate) {
        return Err(Error::InvalidParam {
            name: "flip_rate",
            value: params.flip_rate,
        });
    }
    if gt.has_unknown() {
        return Err(Error::UnexpectedUnknown);
    }
    let c = gt.num_classes();
    let depth = interior_depth(gt);
    let (comp, comp_count) = components(gt);

    let mut kept: Vec<Vec<usize>> = vec![Vec::new(); comp_count];
    for (px, &d) in depth.iter().enumerate() {
        if d >= params.erode_radius as u32 {
            kept[comp[px] as usize].push(px);
        }
    }

    let mut seeds = LabelGrid::filled(gt.width(), gt.height(), c, UNKNOWN)?;
    for pixels in kept.iter_mut() {
        if pixels.is_empty() {
            continue;
        }
        pixels.sort_by(|&a, &b| depth[b].cmp(&depth[a]).then(a.cmp(&b)));
        let take = ((params.coverage * pixels.len() as f64).ceil() as usize).max(1);
        for &px in pixels.iter().take(take) {
            let truth = gt.get_index(px);
            let value = if params.flip_rate > 0.0 && rng.gen_bool(params.flip_rate) {
                let mut wrong = rng.gen_range(0..c - 1) as u8;
                if wrong >= truth {
                    wrong += 1;
                }
                wrong
            } else {
                truth
            };
            seeds.set_index(px, value);
        }
    }

    let mut stats = SeedStats::default();
    for class in 0..c as u8 {
        let in_gt = gt.values().iter().any(|&v| v == class);
        let in_seeds = seeds.values().iter().any(|&v| v == class);
        if in_gt && !in_seeds {
            stats.vanished.push(class);
        }
    }
    Ok((seeds, stats))
}

/// Images, ground truth and seed maps in one call. Image content matches
/// `generate` with the same spec; seeds draw from an independent stream so
/// the two functions stay consistent.
pub fn generate_corpus(
    spec: &SceneSpec,
    n_images: usize,
    seed_params: &SeedParams,
) -> Result<(Vec<(RgbImage, LabelGrid, LabelGrid)>, Vec<SeedStats>)> {
    let scenes = generate(spec, n_images)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_5EED_5EED_5EED);
    let mut out = Vec::with_capacity(scenes.len());
    let mut all_stats = Vec::with_capacity(scenes.len());
    for (image, gt) in scenes {
        let (seeds, stats) = make_seeds(&gt, seed_params, &mut rng)?;
        out.push((image, gt, seeds));
        all_stats.push(stats);
    }
    Ok((out, all_stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::precision;

    #[test]
    fn zero_noise_makes_objects_exactly_base_color() {
        let mut spec = SceneSpec::new(7);
        spec.noise_amplitude = 0.0;
        let corpus = generate(&spec, 3).unwrap();
        for (image, gt) in &corpus {
            for px in 0..gt.len() {
                let class = gt.get_index(px);
                if class != 0 {
                    assert_eq!(image.get_index(px), PALETTE[class as usize]);
                }
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_corpora() {
        let spec = SceneSpec::new(42);
        let a = generate(&spec, 5).unwrap();
        let b = generate(&spec, 5).unwrap();
        for ((ia, ga), (ib, gb)) in a.iter().zip(&b) {
            assert_eq!(ia, ib);
            assert_eq!(ga, gb);
        }
    }

    #[test]
    fn reference_seed_covers_every_foreground_class() {
        let spec = SceneSpec::new(42);
        let corpus = generate(&spec, 100).unwrap();
        let mut counts = vec![0usize; spec.num_classes];
        for (_, gt) in &corpus {
            let mut present = vec![false; spec.num_classes];
            for &v in gt.values() {
                present[v as usize] = true;
            }
            for (c, &p) in present.iter().enumerate() {
                if p {
                    counts[c] += 1;
                }
            }
        }
        for class in 1..spec.num_classes {
            assert!(counts[class] >= 20, "class {class}: {}", counts[class]);
        }
    }

    #[test]
    fn identity_seed_parameters_reproduce_ground_truth() {
        let spec = SceneSpec::new(3);
        let corpus = generate(&spec, 1).unwrap();
        let params = SeedParams {
            erode_radius: 0,
            flip_rate: 0.0,
            coverage: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (seeds, stats) = make_seeds(&corpus[0].1, &params, &mut rng).unwrap();
        assert_eq!(seeds, corpus[0].1);
        assert!(stats.vanished.is_empty());
    }

    #[test]
    fn flip_rate_sets_seed_precision() {
        let spec = SceneSpec::new(11);
        let corpus = generate(&spec, 30).unwrap();
        let params = SeedParams {
            erode_radius: 1,
            flip_rate: 0.1,
            coverage: 0.8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut correct = 0u64;
        let mut labeled = 0u64;
        for (_, gt) in &corpus {
            let (seeds, _) = make_seeds(gt, &params, &mut rng).unwrap();
            for (&s, &g) in seeds.values().iter().zip(gt.values()) {
                if s != UNKNOWN {
                    labeled += 1;
                    if s == g {
                        correct += 1;
                    }
                }
            }
        }
        let p = correct as f64 / labeled as f64;
        assert!((p - 0.9).abs() < 0.02, "precision {p}");
    }

    #[test]
    fn unflipped_seeds_are_a_subset_of_ground_truth() {
        let spec = SceneSpec::new(17);
        let corpus = generate(&spec, 5).unwrap();
        let params = SeedParams {
            erode_radius: 2,
            flip_rate: 0.0,
            coverage: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (_, gt) in &corpus {
            let (seeds, _) = make_seeds(gt, &params, &mut rng).unwrap();
            assert_eq!(precision(&seeds, gt).unwrap(), 1.0);
        }
    }

    #[test]
    fn larger_erosion_never_increases_recall() {
        let spec = SceneSpec::new(23);
        let corpus = generate(&spec, 5).unwrap();
        for (_, gt) in &corpus {
            let mut last = u64::MAX;
            for radius in [0usize, 1, 2, 4] {
                let params = SeedParams {
                    erode_radius: radius,
                    flip_rate: 0.0,
                    coverage: 1.0,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let (seeds, _) = make_seeds(gt, &params, &mut rng).unwrap();
                let labeled = seeds.labeled_count() as u64;
                assert!(labeled <= last);
                last = labeled;
            }
        }
    }
}
