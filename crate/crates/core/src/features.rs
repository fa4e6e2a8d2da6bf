//! Hand-crafted per-pixel features.
//!
//! Eight values per pixel: the three color channels, the two image
//! coordinates normalized to [0, 1] (min corner = 0), and the mean color of
//! the 3x3 window around the pixel. Border windows are clamped to the image,
//! so a corner pixel averages the four pixels that actually exist. The
//! feature dimension is fixed for a whole run.

use crate::image::RgbImage;

pub const FEATURE_DIM: usize = 8;

#[derive(Debug, Clone)]
pub struct PixelFeatures {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PixelFeatures {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn get(&self, px: usize) -> &[f64] {
        let base = px * FEATURE_DIM;
        &self.data[base..base + FEATURE_DIM]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Extract the fixed 8-dimensional feature vector at every pixel.
/// Deterministic; expects channels in [0, 1].
pub fn extract_features(image: &RgbImage) -> PixelFeatures {
    let (w, h) = (image.width(), image.height());
    let mut data = vec![0.0; w * h * FEATURE_DIM];
    let x_scale = if w > 1 { 1.0 / (w - 1) as f64 } else { 0.0 };
    let y_scale = if h > 1 { 1.0 / (h - 1) as f64 } else { 0.0 };

    for y in 0..h {
        for x in 0..w {
            let px = y * w + x;
            let [r, g, b] = image.get(x, y);

            let mut sum = [0.0f64; 3];
            let mut count = 0.0;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let c = image.get(nx, ny);
                    sum[0] += c[0];
                    sum[1] += c[1];
                    sum[2] += c[2];
                    count += 1.0;
                }
            }

            let base = px * FEATURE_DIM;
            data[base] = r;
            data[base + 1] = g;
            data[base + 2] = b;
            data[base + 3] = x as f64 * x_scale;
            data[base + 4] = y as f64 * y_scale;
            data[base + 5] = sum[0] / count;
            data[base + 6] = sum[1] / count;
            data[base + 7] = sum[2] / count;
        }
    }

    PixelFeatures {
        width: w,
        height: h,
        data,
    }
}
