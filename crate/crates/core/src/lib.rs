//! Iterative affinity learning for pixel labeling from sparse seeds.
//!
//! The pipeline alternates two models over a corpus of images: a unary
//! per-pixel classifier predicting class probabilities from hand-crafted
//! features, and a pairwise gate model whose scan-line propagation refines
//! the unary output. Between the two sits a confident-region miner that
//! keeps only superpixels a region classifier scores highly; those regions
//! supervise the next round of affinity training. The whole loop descends
//! a graph-Laplacian energy, which the `energy` module makes measurable.

pub mod driver;
pub mod energy;
pub mod error;
pub mod features;
pub mod grid;
pub mod image;
pub mod linear;
pub mod metrics;
pub mod miner;
pub mod pnm;
pub mod propagation;
pub mod report;
pub mod schedule;
pub mod superpixel;
pub mod synth;
pub mod unary;

pub use error::{Error, Result};
pub use grid::{LabelGrid, ProbGrid, UNKNOWN};
pub use image::RgbImage;
