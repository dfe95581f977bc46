//! Synthetic scene generation with exact segmentation masks, Sobel contour
//! extraction, free-form brush-hole sampling, and dataset (de)serialization.
//! All generators are pure functions of (config, seed).

mod brush;
mod io;
mod scene;
mod sobel;

pub use brush::{
    make_incomplete_contour, make_sample, restrict_non_overlap, sample_brush_holes, BrushConfig,
    Regime, SampleConfig,
};
pub use io::{
    load_corpus_scenes, load_dataset, read_image_png, read_mask_png, save_dataset, write_gray_png,
    write_image_png, write_mask_png, DatasetMeta, FixedSamples, SampleSource, ScenePool,
};
pub use scene::{synth_scene, Scene, SceneConfig, ShapeKind, TextureKind};
pub use sobel::sobel_contour;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// H x W x 3 image in [0,1], stored channel-major [3, H, W].
pub type ImageTensor = Array3<f32>;

/// Binary foreground mask; 1 = object pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask(pub Array2<u8>);

/// Binary hole mask; 1 = missing pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoleMask(pub Array2<u8>);

/// Contour map in [0,1]; ground-truth instances are binary.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourMap(pub Array2<f32>);

impl SegMask {
    pub fn new(grid: Array2<u8>) -> Result<Self> {
        if grid.iter().any(|&v| v > 1) {
            return Err(Error::Contract("segmentation mask must be binary".into()));
        }
        Ok(SegMask(grid))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

impl HoleMask {
    pub fn new(grid: Array2<u8>) -> Result<Self> {
        if grid.iter().any(|&v| v > 1) {
            return Err(Error::Contract("hole mask must be binary".into()));
        }
        Ok(HoleMask(grid))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    /// Fraction of pixels marked as hole.
    pub fn area_ratio(&self) -> f64 {
        let n = self.0.len() as f64;
        self.0.iter().map(|&v| v as f64).sum::<f64>() / n
    }
}

impl ContourMap {
    pub fn new(grid: Array2<f32>) -> Result<Self> {
        if grid.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Contract("contour values must lie in [0,1]".into()));
        }
        Ok(ContourMap(grid))
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

/// One training tuple: ground truth plus the masked network inputs derived
/// from it. Invariants: image_in == image wherever hole == 0 and is zero
/// inside holes; contour_in == contour_gt outside holes, zero inside.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub image: ImageTensor,
    pub seg: SegMask,
    pub contour_gt: ContourMap,
    pub hole: HoleMask,
    pub image_in: ImageTensor,
    pub contour_in: ContourMap,
}

impl TrainingSample {
    /// Derive the masked inputs from ground truth and a hole mask.
    pub fn compose(
        image: ImageTensor,
        seg: SegMask,
        contour_gt: ContourMap,
        hole: HoleMask,
    ) -> Result<Self> {
        let (h, w) = seg.dim();
        if image.dim() != (3, h, w) || contour_gt.dim() != (h, w) || hole.dim() != (h, w) {
            return Err(Error::Shape("training sample fields disagree".into()));
        }
        let mut image_in = image.clone();
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    if hole.0[[i, j]] == 1 {
                        image_in[[c, i, j]] = 0.0;
                    }
                }
            }
        }
        let contour_in = make_incomplete_contour(&contour_gt, &hole)?;
        Ok(TrainingSample {
            image,
            seg,
            contour_gt,
            hole,
            image_in,
            contour_in,
        })
    }

    pub fn canvas(&self) -> (usize, usize) {
        self.seg.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeTag {
    Overlap,
    NonOverlap,
    Mixed,
}
