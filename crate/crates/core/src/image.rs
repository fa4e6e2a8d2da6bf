//! Dense RGB image with channels in [0, 1].

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    /// Black image of the given size.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        Ok(Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        })
    }

    /// Wrap an interleaved RGB buffer (3 values per pixel, row major).
    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(Error::BadBufferLength {
                width,
                height,
                channels: 3,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Constant-color image.
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Result<Self> {
        let mut img = Self::new(width, height)?;
        for px in 0..width * height {
            img.set_index(px, color);
        }
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false // zero-sized images cannot be constructed
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.get_index(self.index(x, y))
    }

    #[inline]
    pub fn get_index(&self, px: usize) -> [f64; 3] {
        let base = px * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, color: [f64; 3]) {
        let px = self.index(x, y);
        self.set_index(px, color);
    }

    #[inline]
    pub fn set_index(&mut self, px: usize, color: [f64; 3]) {
        let base = px * 3;
        self.data[base] = color[0];
        self.data[base + 1] = color[1];
        self.data[base + 2] = color[2];
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Euclidean distance between two RGB colors.
pub fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dr = a[0] - b[0];
    let dg = a[1] - b[1];
    let db = a[2] - b[2];
    (dr * dr + dg * dg + db * db).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_image_rejected() {
        assert!(matches!(RgbImage::new(0, 4), Err(Error::EmptyImage)));
        assert!(matches!(RgbImage::new(4, 0), Err(Error::EmptyImage)));
        assert!(matches!(
            RgbImage::from_raw(0, 0, vec![]),
            Err(Error::EmptyImage)
        ));
    }

    #[test]
    fn raw_buffer_length_checked() {
        assert!(matches!(
            RgbImage::from_raw(2, 2, vec![0.0; 11]),
            Err(Error::BadBufferLength { .. })
        ));
    }

    #[test]
    fn get_set_roundtrip() {
        let mut img = RgbImage::new(3, 2).unwrap();
        img.set(2, 1, [0.1, 0.5, 0.9]);
        assert_eq!(img.get(2, 1), [0.1, 0.5, 0.9]);
    }
}
