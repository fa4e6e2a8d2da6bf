//! Graph-based superpixel segmentation in the style of Felzenszwalb and
//! Huttenlocher, restricted to 4-connectivity so regions line up with the
//! propagation neighborhood.
//!
//! Edge weights are Euclidean RGB distances on the 0..255 color scale. Edges
//! are generated in (row, col, right-before-down) order and sorted with a
//! stable sort, which fixes tie-breaking and makes the output bit-stable.

use crate::error::{Error, Result};
use crate::grid::{LabelGrid, UNKNOWN};
use crate::image::{color_distance, RgbImage};

#[derive(Debug, Clone)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    region_id: Vec<u32>,
    region_count: usize,
    region_pixels: Vec<Vec<u32>>,
    region_mean_color: Vec<[f64; 3]>,
}

impl SuperpixelMap {
    /// Build a map from an explicit per-pixel region assignment. Ids are
    /// renumbered to be contiguous in first-seen (row major) order.
    pub fn from_region_ids(image: &RgbImage, raw_ids: &[u32]) -> Result<Self> {
        if raw_ids.len() != image.len() {
            return Err(Error::BadBufferLength {
                width: image.width(),
                height: image.height(),
                channels: 1,
                got: raw_ids.len(),
            });
        }
        let mut remap = std::collections::BTreeMap::new();
        let mut region_id = vec![0u32; raw_ids.len()];
        for (px, &raw) in raw_ids.iter().enumerate() {
            let next = remap.len() as u32;
            let id = *remap.entry(raw).or_insert(next);
            region_id[px] = id;
        }
        let region_count = remap.len();
        let mut region_pixels = vec![Vec::new(); region_count];
        let mut sums = vec![[0.0f64; 3]; region_count];
        for (px, &id) in region_id.iter().enumerate() {
            region_pixels[id as usize].push(px as u32);
            let c = image.get_index(px);
            let s = &mut sums[id as usize];
            s[0] += c[0];
            s[1] += c[1];
            s[2] += c[2];
        }
        let region_mean_color = sums
            .iter()
            .zip(&region_pixels)
            .map(|(s, pixels)| {
                let n = pixels.len() as f64;
                [s[0] / n, s[1] / n, s[2] / n]
            })
            .collect();
        Ok(Self {
            width: image.width(),
            height: image.height(),
            region_id,
            region_count,
            region_pixels,
            region_mean_color,
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
        self.region_id.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    #[inline]
    pub fn region_of(&self, px: usize) -> usize {
        self.region_id[px] as usize
    }

    pub fn region_ids(&self) -> &[u32] {
        &self.region_id
    }

    pub fn region_pixels(&self, region: usize) -> &[u32] {
        &self.region_pixels[region]
    }

    pub fn region_size(&self, region: usize) -> usize {
        self.region_pixels[region].len()
    }

    pub fn region_mean_color(&self, region: usize) -> [f64; 3] {
        self.region_mean_color[region]
    }

    /// Region ids reduced mod 256 for graymap export.
    pub fn id_bytes(&self) -> Vec<u8> {
        self.region_id.iter().map(|&id| (id % 256) as u8).collect()
    }

    /// Sidecar table describing each region.
    pub fn sidecar_csv(&self) -> String {
        let mut out = String::from("region_id,size,mean_r,mean_g,mean_b\n");
        for r in 0..self.region_count {
            let [mr, mg, mb] = self.region_mean_color[r];
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6}\n",
                r,
                self.region_pixels[r].len(),
                mr,
                mg,
                mb
            ));
        }
        out
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
    // max weight seen inside each component's spanning tree
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32, weight: f64) -> u32 {
        let (a, b) = if self.size[a as usize] >= self.size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
        self.internal[a as usize] = self.internal[a as usize]
            .max(self.internal[b as usize])
            .max(weight);
        a
    }
}

fn build_edges(image: &RgbImage) -> Vec<(u32, u32, f64)> {
    let (w, h) = (image.width(), image.height());
    let mut edges = Vec::with_capacity(2 * w * h);
    for y in 0..h {
        for x in 0..w {
            let px = (y * w + x) as u32;
            let c = image.get(x, y);
            if x + 1 < w {
                let q = image.get(x + 1, y);
                edges.push((px, px + 1, 255.0 * color_distance(c, q)));
            }
            if y + 1 < h {
                let q = image.get(x, y + 1);
                edges.push((px, px + w as u32, 255.0 * color_distance(c, q)));
            }
        }
    }
    edges
}

/// Segment an image into superpixel regions.
///
/// `scale_k` sets the preference for larger components (threshold k/|C| on
/// the 0..255 weight scale) and `min_size` forces a final merge pass so that
/// every region reaches at least that many pixels.
pub fn segment(image: &RgbImage, scale_k: f64, min_size: usize) -> Result<SuperpixelMap> {
    if !(scale_k > 0.0 && scale_k.is_finite()) {
        return Err(Error::InvalidParam {
            name: "scale_k",
            value: scale_k,
        });
    }
    if min_size == 0 {
        return Err(Error::InvalidParam {
            name: "min_size",
            value: 0.0,
        });
    }

    let n = image.len();
    let mut edges = build_edges(image);
    // stable sort keeps the lexicographic construction order on ties
    edges.sort_by(|a, b| a.2.partial_cmp(&b.2).expect("edge weights are finite"));

    let mut ds = DisjointSet::new(n);
    for &(a, b, w) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra == rb {
            continue;
        }
        let ta = ds.internal[ra as usize] + scale_k / ds.size[ra as usize] as f64;
        let tb = ds.internal[rb as usize] + scale_k / ds.size[rb as usize] as f64;
        if w <= ta.min(tb) {
            ds.union(ra, rb, w);
        }
    }

    // merge pass: absorb undersized components
    for &(a, b, w) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra == rb {
            continue;
        }
        if (ds.size[ra as usize] as usize) < min_size || (ds.size[rb as usize] as usize) < min_size
        {
            ds.union(ra, rb, w);
        }
    }

    let roots: Vec<u32> = (0..n as u32).map(|px| ds.find(px)).collect();
    SuperpixelMap::from_region_ids(image, &roots)
}

/// Majority vote of `labels` inside each region: a region is assigned class
/// `c` only when strictly more than `majority` of its pixels carry `c`;
/// otherwise it stays UNKNOWN. UNKNOWN pixels count toward the denominator
/// but can never win the vote.
pub fn region_label_vote(
    sp: &SuperpixelMap,
    labels: &LabelGrid,
    majority: f64,
) -> Result<Vec<u8>> {
    if sp.width() != labels.width() || sp.height() != labels.height() {
        return Err(Error::DimensionMismatch(
            sp.width(),
            sp.height(),
            labels.width(),
            labels.height(),
        ));
    }
    if !(majority > 0.5 && majority <= 1.0) {
        return Err(Error::InvalidParam {
            name: "majority",
            value: majority,
        });
    }
    let c = labels.num_classes();
    let mut out = Vec::with_capacity(sp.region_count());
    let mut counts = vec![0u32; c];
    for region in 0..sp.region_count() {
        counts.iter_mut().for_each(|v| *v = 0);
        for &px in sp.region_pixels(region) {
            let v = labels.get_index(px as usize);
            if v != UNKNOWN {
                counts[v as usize] += 1;
            }
        }
        let size = sp.region_size(region) as f64;
        let mut winner = UNKNOWN;
        for (class, &count) in counts.iter().enumerate() {
            if count as f64 > majority * size {
                winner = class as u8;
                break;
            }
        }
        out.push(winner);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_halves(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                let color = if x < w / 2 {
                    [0.1, 0.1, 0.1]
                } else {
                    [0.9, 0.9, 0.9]
                };
                img.set(x, y, color);
            }
        }
        img
    }

    #[test]
    fn uniform_image_is_one_region() {
        let img = RgbImage::filled(8, 8, [0.4, 0.4, 0.4]).unwrap();
        let sp = segment(&img, 100.0, 1).unwrap();
        assert_eq!(sp.region_count(), 1);
    }

    #[test]
    fn strong_vertical_split_gives_two_regions() {
        let sp = segment(&two_halves(8, 8), 10.0, 1).unwrap();
        assert_eq!(sp.region_count(), 2);
        // partition property
        let total: usize = (0..sp.region_count()).map(|r| sp.region_size(r)).sum();
        assert_eq!(total, 64);
    }

    #[test]
    fn min_size_equal_to_n_forces_full_merge() {
        let sp = segment(&two_halves(8, 8), 10.0, 64).unwrap();
        assert_eq!(sp.region_count(), 1);
    }

    #[test]
    fn region_ids_are_row_major_first_seen() {
        let sp = segment(&two_halves(8, 8), 10.0, 1).unwrap();
        assert_eq!(sp.region_of(0), 0);
        assert_eq!(sp.region_of(7), 1);
    }

    #[test]
    fn vote_respects_strict_majority() {
        let img = RgbImage::filled(5, 1, [0.5; 3]).unwrap();
        let sp = SuperpixelMap::from_region_ids(&img, &[0, 0, 0, 0, 0]).unwrap();

        // 4 of 5 pixels = exactly 80%: excluded under majority 0.8
        let labels = LabelGrid::from_values(5, 1, 3, vec![2, 2, 2, 2, 1]).unwrap();
        assert_eq!(region_label_vote(&sp, &labels, 0.8).unwrap(), vec![UNKNOWN]);

        // 5 of 5 pixels clears it
        let labels = LabelGrid::from_values(5, 1, 3, vec![2; 5]).unwrap();
        assert_eq!(region_label_vote(&sp, &labels, 0.8).unwrap(), vec![2]);

        // fully UNKNOWN region stays UNKNOWN
        let labels = LabelGrid::from_values(5, 1, 3, vec![UNKNOWN; 5]).unwrap();
        assert_eq!(region_label_vote(&sp, &labels, 0.8).unwrap(), vec![UNKNOWN]);
    }

    #[test]
    fn vote_over_85_percent_wins() {
        // 17 of 20 pixels = 85% > 80%
        let img = RgbImage::filled(20, 1, [0.5; 3]).unwrap();
        let sp = SuperpixelMap::from_region_ids(&img, &vec![0; 20]).unwrap();
        let mut values = vec![2u8; 17];
        values.extend_from_slice(&[0, 0, 0]);
        let labels = LabelGrid::from_values(20, 1, 3, values).unwrap();
        assert_eq!(region_label_vote(&sp, &labels, 0.8).unwrap(), vec![2]);
    }

    #[test]
    fn vote_dimension_mismatch_rejected() {
        let img = RgbImage::filled(4, 1, [0.5; 3]).unwrap();
        let sp = SuperpixelMap::from_region_ids(&img, &[0, 0, 1, 1]).unwrap();
        let labels = LabelGrid::filled(5, 1, 3, 0).unwrap();
        assert!(region_label_vote(&sp, &labels, 0.8).is_err());
    }

    #[test]
    fn segmentation_is_bit_stable() {
        let img = two_halves(8, 4);
        let a = segment(&img, 50.0, 2).unwrap();
        let b = segment(&img, 50.0, 2).unwrap();
        assert_eq!(a.region_ids(), b.region_ids());
    }
}
