//! Graph-Laplacian energy over 4-neighbor pixel graphs.
//!
//! The energy of a per-pixel field alpha is sum_c alpha_c' (D - W) alpha_c,
//! evaluated in the edge-sum form sum_{edges} w_ij (alpha_i - alpha_j)^2
//! with compensated summation so the result does not depend on how the edge
//! set is partitioned.

use crate::error::{Error, Result};
use crate::grid::{LabelGrid, ProbGrid, UNKNOWN};
use crate::propagation::{AffinityField, Direction};

/// Symmetric non-negative edge weights on the 4-neighbor grid graph.
/// `right[px]` is the weight between a pixel and its right neighbor (unused
/// in the last column), `down[px]` between a pixel and the one below.
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    width: usize,
    height: usize,
    right: Vec<f64>,
    down: Vec<f64>,
}

/// Kahan compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

impl AffinityGraph {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        Ok(Self {
            width,
            height,
            right: vec![0.0; width * height],
            down: vec![0.0; width * height],
        })
    }

    /// Constant weight on every edge.
    pub fn uniform(width: usize, height: usize, weight: f64) -> Result<Self> {
        let mut g = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if x + 1 < width {
                    g.set_right(x, y, weight);
                }
                if y + 1 < height {
                    g.set_down(x, y, weight);
                }
            }
        }
        Ok(g)
    }

    /// Symmetrize a learned affinity field into edge weights. The three
    /// channel-group gates per direction are averaged, and each undirected
    /// edge takes the mean of its two directional gates, clamped to >= 0.
    pub fn from_gates(field: &AffinityField) -> Self {
        let (w, h) = (field.width(), field.height());
        let mut graph = Self::new(w, h).expect("field dimensions are nonzero");
        let mean3 = |dir: Direction, px: usize| -> f64 {
            (field.field(dir, 0)[px] + field.field(dir, 1)[px] + field.field(dir, 2)[px]) / 3.0
        };
        for y in 0..h {
            for x in 0..w {
                let px = y * w + x;
                if x + 1 < w {
                    let into = mean3(Direction::LeftRight, px + 1);
                    let back = mean3(Direction::RightLeft, px);
                    graph.right[px] = (0.5 * (into + back)).max(0.0);
                }
                if y + 1 < h {
                    let into = mean3(Direction::TopDown, px + w);
                    let back = mean3(Direction::BottomUp, px);
                    graph.down[px] = (0.5 * (into + back)).max(0.0);
                }
            }
        }
        graph
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Vertex count N.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn set_right(&mut self, x: usize, y: usize, weight: f64) {
        debug_assert!(x + 1 < self.width);
        debug_assert!(weight >= 0.0);
        self.right[y * self.width + x] = weight;
    }

    pub fn set_down(&mut self, x: usize, y: usize, weight: f64) {
        debug_assert!(y + 1 < self.height);
        debug_assert!(weight >= 0.0);
        self.down[y * self.width + x] = weight;
    }

    /// Scale every edge weight.
    pub fn scale(&mut self, s: f64) {
        for w in self.right.iter_mut().chain(self.down.iter_mut()) {
            *w *= s;
        }
    }

    /// Visit every undirected edge as (pixel, neighbor, weight).
    pub fn for_each_edge(&self, mut f: impl FnMut(usize, usize, f64)) {
        let w = self.width;
        for y in 0..self.height {
            for x in 0..w {
                let px = y * w + x;
                if x + 1 < w {
                    f(px, px + 1, self.right[px]);
                }
                if y + 1 < self.height {
                    f(px, px + w, self.down[px]);
                }
            }
        }
    }

    /// Row sum of W at a vertex.
    pub fn degree(&self, px: usize) -> f64 {
        let w = self.width;
        let x = px % w;
        let y = px / w;
        let mut d = 0.0;
        if x + 1 < w {
            d += self.right[px];
        }
        if x > 0 {
            d += self.right[px - 1];
        }
        if y + 1 < self.height {
            d += self.down[px];
        }
        if y > 0 {
            d += self.down[px - w];
        }
        d
    }

    fn check_shape(&self, alpha: &ProbGrid) -> Result<()> {
        if self.width != alpha.width() || self.height != alpha.height() {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                alpha.width(),
                alpha.height(),
            ));
        }
        Ok(())
    }
}

/// sum_c alpha_c' L alpha_c via the edge-sum form. Always >= 0.
pub fn laplacian_quadratic(graph: &AffinityGraph, alpha: &ProbGrid) -> Result<f64> {
    graph.check_shape(alpha)?;
    let c = alpha.num_classes();
    let mut acc = Kahan::default();
    graph.for_each_edge(|i, j, w| {
        let pi = alpha.probs(i);
        let pj = alpha.probs(j);
        for ch in 0..c {
            let d = pi[ch] - pj[ch];
            acc.add(w * d * d);
        }
    });
    Ok(acc.sum)
}

/// sum_c x_c' L y_c via the edge-sum form of the bilinear extension.
pub fn laplacian_bilinear(graph: &AffinityGraph, x: &ProbGrid, y: &ProbGrid) -> Result<f64> {
    graph.check_shape(x)?;
    x.same_shape(y)?;
    let c = x.num_classes();
    let mut acc = Kahan::default();
    graph.for_each_edge(|i, j, w| {
        let xi = x.probs(i);
        let xj = x.probs(j);
        let yi = y.probs(i);
        let yj = y.probs(j);
        for ch in 0..c {
            acc.add(w * (xi[ch] - xj[ch]) * (yi[ch] - yj[ch]));
        }
    });
    Ok(acc.sum)
}

/// Gradient of the quadratic energy: 2 L alpha per class channel, in the
/// same pixel-major layout as `ProbGrid`. The factor 2 from differentiating
/// the quadratic form is kept explicitly.
pub fn energy_gradient(graph: &AffinityGraph, alpha: &ProbGrid) -> Result<Vec<f64>> {
    graph.check_shape(alpha)?;
    let c = alpha.num_classes();
    let mut grad = vec![0.0; alpha.len() * c];
    graph.for_each_edge(|i, j, w| {
        for ch in 0..c {
            let d = alpha.probs(i)[ch] - alpha.probs(j)[ch];
            grad[i * c + ch] += 2.0 * w * d;
            grad[j * c + ch] -= 2.0 * w * d;
        }
    });
    Ok(grad)
}

/// Quadratic energy divided by N*C, the size-independent value reported in
/// metric rows.
pub fn normalized_energy(graph: &AffinityGraph, alpha: &ProbGrid) -> Result<f64> {
    let q = laplacian_quadratic(graph, alpha)?;
    Ok(q / (alpha.len() as f64 * alpha.num_classes() as f64))
}

/// One-hot encoding of `labels` where UNKNOWN pixels copy the corresponding
/// row of `fallback`, making unlabeled pixels energy-neutral.
pub fn one_hot_with_fallback(labels: &LabelGrid, fallback: &ProbGrid) -> Result<ProbGrid> {
    fallback.same_shape_labels(labels)?;
    let c = labels.num_classes();
    let mut data = vec![0.0; labels.len() * c];
    for px in 0..labels.len() {
        let v = labels.get_index(px);
        let row = &mut data[px * c..(px + 1) * c];
        if v == UNKNOWN {
            row.copy_from_slice(fallback.probs(px));
        } else {
            row[v as usize] = 1.0;
        }
    }
    ProbGrid::from_raw(labels.width(), labels.height(), c, data)
}

#[derive(Debug, Clone, Copy)]
pub struct MiningInequality {
    /// Y' L alpha_u with UNKNOWN rows of Y replaced by alpha_u rows.
    pub labeled_side: f64,
    /// alpha_u' L alpha_u.
    pub unary_side: f64,
    pub holds: bool,
}

/// Check that the mined labeling has no higher energy against the unary
/// field than the unary field itself.
pub fn mining_inequality_holds(
    graph: &AffinityGraph,
    labels: &LabelGrid,
    alpha_u: &ProbGrid,
) -> Result<MiningInequality> {
    let y = one_hot_with_fallback(labels, alpha_u)?;
    let labeled_side = laplacian_bilinear(graph, &y, alpha_u)?;
    let unary_side = laplacian_quadratic(graph, alpha_u)?;
    Ok(MiningInequality {
        labeled_side,
        unary_side,
        holds: labeled_side <= unary_side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense-matrix oracle: assemble D - W explicitly and evaluate
    /// sum_c x_c' (D - W) y_c by straightforward matrix arithmetic.
    fn dense_bilinear(graph: &AffinityGraph, x: &ProbGrid, y: &ProbGrid) -> f64 {
        let n = graph.len();
        let mut w = vec![vec![0.0f64; n]; n];
        graph.for_each_edge(|i, j, wij| {
            w[i][j] = wij;
            w[j][i] = wij;
        });
        let mut lap = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            let d: f64 = w[i].iter().sum();
            for j in 0..n {
                lap[i][j] = if i == j { d - w[i][j] } else { -w[i][j] };
            }
        }
        let c = x.num_classes();
        let mut total = 0.0;
        for ch in 0..c {
            for i in 0..n {
                for j in 0..n {
                    total += x.probs(i)[ch] * lap[i][j] * y.probs(j)[ch];
                }
            }
        }
        total
    }

    fn random_graph_and_alpha(
        rng: &mut ChaCha8Rng,
        w: usize,
        h: usize,
        c: usize,
    ) -> (AffinityGraph, ProbGrid) {
        let mut graph = AffinityGraph::new(w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    graph.set_right(x, y, rng.gen_range(0.0..1.0));
                }
                if y + 1 < h {
                    graph.set_down(x, y, rng.gen_range(0.0..1.0));
                }
            }
        }
        let mut alpha = ProbGrid::uniform(w, h, c).unwrap();
        for px in 0..alpha.len() {
            let row = alpha.probs_mut(px);
            for v in row.iter_mut() {
                *v = rng.gen_range(0.0..1.0);
            }
        }
        alpha.normalize();
        (graph, alpha)
    }

    #[test]
    fn constant_field_has_zero_energy() {
        let graph = AffinityGraph::uniform(4, 4, 0.7).unwrap();
        let alpha = ProbGrid::uniform(4, 4, 3).unwrap();
        assert_eq!(laplacian_quadratic(&graph, &alpha).unwrap(), 0.0);
        let grad = energy_gradient(&graph, &alpha).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_pixel_single_edge() {
        // one edge of weight 1, one active channel, alpha = (1, 0)
        let mut graph = AffinityGraph::new(2, 1).unwrap();
        graph.set_right(0, 0, 1.0);
        let alpha = ProbGrid::from_raw(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        // both channels contribute (1-0)^2 each
        assert_eq!(laplacian_quadratic(&graph, &alpha).unwrap(), 2.0);

        let single = ProbGrid::from_raw(2, 1, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(laplacian_quadratic(&graph, &single).unwrap(), 1.0);
        let grad = energy_gradient(&graph, &single).unwrap();
        assert_eq!(grad, vec![2.0, -2.0]);
    }

    #[test]
    fn edge_sum_matches_dense_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let w = rng.gen_range(1..=4);
            let h = rng.gen_range(1..=4);
            let (graph, alpha) = random_graph_and_alpha(&mut rng, w, h, 3);
            let fast = laplacian_quadratic(&graph, &alpha).unwrap();
            let dense = dense_bilinear(&graph, &alpha, &alpha);
            assert!((fast - dense).abs() < 1e-9, "fast {fast} dense {dense}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (graph, alpha) = random_graph_and_alpha(&mut rng, 4, 4, 2);
        let grad = energy_gradient(&graph, &alpha).unwrap();
        let h = 1e-5;
        for px in 0..alpha.len() {
            for ch in 0..2 {
                let mut plus = alpha.clone();
                plus.probs_mut(px)[ch] += h;
                let mut minus = alpha.clone();
                minus.probs_mut(px)[ch] -= h;
                let fd = (laplacian_quadratic(&graph, &plus).unwrap()
                    - laplacian_quadratic(&graph, &minus).unwrap())
                    / (2.0 * h);
                let a = grad[px * 2 + ch];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((a - fd) / denom).abs() < 1e-4,
                    "analytic {a} vs fd {fd} at px {px} ch {ch}"
                );
            }
        }
    }

    #[test]
    fn weight_scaling_scales_energy_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (graph, alpha) = random_graph_and_alpha(&mut rng, 4, 3, 2);
        let base = laplacian_quadratic(&graph, &alpha).unwrap();
        for s in [0.5, 2.0, 4.0] {
            let mut scaled = graph.clone();
            scaled.scale(s);
            assert_eq!(laplacian_quadratic(&scaled, &alpha).unwrap(), s * base);
        }
    }

    #[test]
    fn mining_inequality_equality_cases() {
        let graph = AffinityGraph::uniform(3, 3, 1.0).unwrap();

        // constant unary field: argmax one-hot labels are constant too,
        // both sides vanish
        let alpha = ProbGrid::uniform(3, 3, 2).unwrap();
        let labels = LabelGrid::filled(3, 3, 2, 0).unwrap();
        let r = mining_inequality_holds(&graph, &labels, &alpha).unwrap();
        assert_eq!(r.labeled_side, 0.0);
        assert_eq!(r.unary_side, 0.0);
        assert!(r.holds);

        // all-UNKNOWN labels reduce Y to alpha itself: exact equality
        let unknown = LabelGrid::filled(3, 3, 2, UNKNOWN).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (graph, alpha) = random_graph_and_alpha(&mut rng, 3, 3, 2);
        let r = mining_inequality_holds(&graph, &unknown, &alpha).unwrap();
        assert_eq!(r.labeled_side, r.unary_side);
        assert!(r.holds);
    }

    proptest! {
        #[test]
        fn quadratic_is_nonnegative(seed in 0u64..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (graph, alpha) = random_graph_and_alpha(&mut rng, 3, 3, 3);
            prop_assert!(laplacian_quadratic(&graph, &alpha).unwrap() >= 0.0);
        }
    }
}
