//! Per-pixel label and probability grids.
//!
//! `LabelGrid` stores one class index per pixel with a distinguished
//! `UNKNOWN` sentinel; `ProbGrid` stores a per-pixel distribution over the
//! same classes. Both are plain value types; all operations on them are
//! pure functions, so they can be evaluated in parallel across images.

use crate::error::{Error, Result};

/// Sentinel for pixels without a label. Not a class index: losses and
/// metrics must test for it explicitly.
pub const UNKNOWN: u8 = 255;

/// Largest usable class count (class indices must stay below the sentinel).
pub const MAX_CLASSES: usize = 254;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    width: usize,
    height: usize,
    num_classes: usize,
    values: Vec<u8>,
}

impl LabelGrid {
    /// Grid with every pixel set to `value` (a class index or `UNKNOWN`).
    pub fn filled(width: usize, height: usize, num_classes: usize, value: u8) -> Result<Self> {
        Self::from_values(width, height, num_classes, vec![value; width * height])
    }

    pub fn from_values(
        width: usize,
        height: usize,
        num_classes: usize,
        values: Vec<u8>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if num_classes == 0 || num_classes > MAX_CLASSES {
            return Err(Error::InvalidParam {
                name: "num_classes",
                value: num_classes as f64,
            });
        }
        if values.len() != width * height {
            return Err(Error::BadBufferLength {
                width,
                height,
                channels: 1,
                got: values.len(),
            });
        }
        for &v in &values {
            if v != UNKNOWN && v as usize >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: v,
                    num_classes,
                });
            }
        }
        Ok(Self {
            width,
            height,
            num_classes,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Pixel count N.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[self.index(x, y)]
    }

    #[inline]
    pub fn get_index(&self, px: usize) -> u8 {
        self.values[px]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        let px = self.index(x, y);
        self.set_index(px, value);
    }

    pub fn set_index(&mut self, px: usize, value: u8) {
        debug_assert!(value == UNKNOWN || (value as usize) < self.num_classes);
        self.values[px] = value;
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Number of pixels carrying a real label.
    pub fn labeled_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != UNKNOWN).count()
    }

    pub fn has_unknown(&self) -> bool {
        self.values.iter().any(|&v| v == UNKNOWN)
    }

    pub fn same_shape(&self, other: &LabelGrid) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        if self.num_classes != other.num_classes {
            return Err(Error::ClassCountMismatch(
                self.num_classes,
                other.num_classes,
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid {
    width: usize,
    height: usize,
    num_classes: usize,
    data: Vec<f64>,
}

impl ProbGrid {
    /// Uniform distribution 1/C at every pixel.
    pub fn uniform(width: usize, height: usize, num_classes: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if num_classes == 0 || num_classes > MAX_CLASSES {
            return Err(Error::InvalidParam {
                name: "num_classes",
                value: num_classes as f64,
            });
        }
        let p = 1.0 / num_classes as f64;
        Ok(Self {
            width,
            height,
            num_classes,
            data: vec![p; width * height * num_classes],
        })
    }

    pub fn from_raw(
        width: usize,
        height: usize,
        num_classes: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height * num_classes {
            return Err(Error::BadBufferLength {
                width,
                height,
                channels: num_classes,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            num_classes,
            data,
        })
    }

    /// One-hot encoding of a label grid. UNKNOWN pixels become all-zero rows.
    pub fn one_hot(labels: &LabelGrid) -> Self {
        let c = labels.num_classes();
        let mut data = vec![0.0; labels.len() * c];
        for (px, &v) in labels.values().iter().enumerate() {
            if v != UNKNOWN {
                data[px * c + v as usize] = 1.0;
            }
        }
        Self {
            width: labels.width(),
            height: labels.height(),
            num_classes: c,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Pixel count N.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn probs(&self, px: usize) -> &[f64] {
        let base = px * self.num_classes;
        &self.data[base..base + self.num_classes]
    }

    #[inline]
    pub fn probs_mut(&mut self, px: usize) -> &mut [f64] {
        let base = px * self.num_classes;
        &mut self.data[base..base + self.num_classes]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rescale every pixel's vector to sum to one.
    pub fn normalize(&mut self) {
        let c = self.num_classes;
        for row in self.data.chunks_exact_mut(c) {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                for v in row.iter_mut() {
                    *v /= sum;
                }
            } else {
                let p = 1.0 / c as f64;
                for v in row.iter_mut() {
                    *v = p;
                }
            }
        }
    }

    /// Per-pixel argmax; the first maximal class wins on exact ties.
    pub fn argmax_labels(&self) -> LabelGrid {
        let mut values = vec![0u8; self.len()];
        for px in 0..self.len() {
            let row = self.probs(px);
            let mut best = 0usize;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            values[px] = best as u8;
        }
        LabelGrid::from_values(self.width, self.height, self.num_classes, values)
            .expect("argmax labels are always in range")
    }

    /// Per-pixel argmax with exact ties mapped to UNKNOWN.
    pub fn harden_labels(&self) -> LabelGrid {
        let mut values = vec![0u8; self.len()];
        for px in 0..self.len() {
            let row = self.probs(px);
            let mut best = 0usize;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            let ties = row.iter().filter(|&&p| p == row[best]).count();
            values[px] = if ties > 1 { UNKNOWN } else { best as u8 };
        }
        LabelGrid::from_values(self.width, self.height, self.num_classes, values)
            .expect("hardened labels are always in range")
    }

    pub fn same_shape_labels(&self, labels: &LabelGrid) -> Result<()> {
        if self.width != labels.width() || self.height != labels.height() {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                labels.width(),
                labels.height(),
            ));
        }
        if self.num_classes != labels.num_classes() {
            return Err(Error::ClassCountMismatch(
                self.num_classes,
                labels.num_classes(),
            ));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ProbGrid) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        if self.num_classes != other.num_classes {
            return Err(Error::ClassCountMismatch(
                self.num_classes,
                other.num_classes,
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_range_enforced() {
        assert!(LabelGrid::from_values(2, 1, 3, vec![0, 2]).is_ok());
        assert!(matches!(
            LabelGrid::from_values(2, 1, 3, vec![0, 3]),
            Err(Error::LabelOutOfRange { .. })
        ));
        // the sentinel is always allowed
        assert!(LabelGrid::from_values(2, 1, 3, vec![UNKNOWN, 1]).is_ok());
    }

    #[test]
    fn uniform_rows_sum_to_one() {
        let g = ProbGrid::uniform(4, 4, 4).unwrap();
        for px in 0..g.len() {
            let s: f64 = g.probs(px).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn harden_maps_ties_to_unknown() {
        let g = ProbGrid::from_raw(2, 1, 2, vec![0.5, 0.5, 0.75, 0.25]).unwrap();
        let hard = g.harden_labels();
        assert_eq!(hard.get_index(0), UNKNOWN);
        assert_eq!(hard.get_index(1), 0);
        // plain argmax keeps the first class on ties
        assert_eq!(g.argmax_labels().get_index(0), 0);
    }

    #[test]
    fn normalize_recovers_distribution() {
        let mut g = ProbGrid::from_raw(1, 1, 3, vec![2.0, 1.0, 1.0]).unwrap();
        g.normalize();
        assert_eq!(g.probs(0), &[0.5, 0.25, 0.25]);
    }
}
