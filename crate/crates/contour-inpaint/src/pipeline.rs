//! End-to-end inference: detect foreground, clean the detection against the
//! hole mask, extract the incomplete contour, complete it, and complete the
//! image under its guidance. Detection is pluggable; bundled detectors are
//! ground-truth oracles (clean and noisy) and user-supplied masks.

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contour::ContourModel;
use crate::data::{sobel_contour, ContourMap, HoleMask, ImageTensor, SegMask};
use crate::error::{Error, Result};
use crate::inpaint::{composite, ImageModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorProvenance {
    Oracle,
    OracleNoisy,
    External,
}

/// Maps an (incomplete) image to a binary foreground mask of the same size.
pub trait Detector {
    fn detect(&self, image: &ImageTensor) -> Result<SegMask>;
    fn name(&self) -> &str;
    fn provenance(&self) -> DetectorProvenance;
}

/// Returns the ground-truth segmentation it was built with.
pub struct OracleDetector {
    pub seg: SegMask,
}

impl Detector for OracleDetector {
    fn detect(&self, image: &ImageTensor) -> Result<SegMask> {
        let (_, h, w) = image.dim();
        if self.seg.dim() != (h, w) {
            return Err(Error::Detector("oracle mask size mismatch".into()));
        }
        Ok(self.seg.clone())
    }

    fn name(&self) -> &str {
        "oracle"
    }

    fn provenance(&self) -> DetectorProvenance {
        DetectorProvenance::Oracle
    }
}

/// Ground truth corrupted the way a real detector fails on masked inputs:
/// spurious blobs inside holes (holes mistaken for salient objects),
/// boundary flips, and small speckle clusters.
pub struct NoisyOracleDetector {
    pub seg: SegMask,
    pub hole: HoleMask,
    pub seed: u64,
}

impl Detector for NoisyOracleDetector {
    fn detect(&self, image: &ImageTensor) -> Result<SegMask> {
        let (_, h, w) = image.dim();
        if self.seg.dim() != (h, w) {
            return Err(Error::Detector("oracle mask size mismatch".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut grid = self.seg.0.clone();

        // spurious blobs centered on hole pixels
        let hole_px: Vec<(usize, usize)> = (0..h)
            .flat_map(|i| (0..w).map(move |j| (i, j)))
            .filter(|&(i, j)| self.hole.0[[i, j]] == 1)
            .collect();
        if !hole_px.is_empty() {
            let blobs = 1 + (rng.gen::<u64>() % 3) as usize;
            for _ in 0..blobs {
                let (ci, cj) = hole_px[(rng.gen::<u64>() % hole_px.len() as u64) as usize];
                let r = 2.0 + rng.gen::<f64>() * (w.min(h) as f64 * 0.08);
                stamp_disk(&mut grid, ci, cj, r, 1);
            }
        }

        // boundary flips
        let flips = (h * w) / 200;
        for _ in 0..flips {
            let i = (rng.gen::<u64>() % h as u64) as usize;
            let j = (rng.gen::<u64>() % w as u64) as usize;
            if on_boundary(&self.seg.0, i, j) {
                grid[[i, j]] ^= 1;
            }
        }

        // small speckles anywhere
        let speckles = 2 + (rng.gen::<u64>() % 4) as usize;
        for _ in 0..speckles {
            let i = (rng.gen::<u64>() % h as u64) as usize;
            let j = (rng.gen::<u64>() % w as u64) as usize;
            stamp_disk(&mut grid, i, j, 1.0 + rng.gen::<f64>(), 1);
        }
        Ok(SegMask(grid))
    }

    fn name(&self) -> &str {
        "oracle_noisy"
    }

    fn provenance(&self) -> DetectorProvenance {
        DetectorProvenance::OracleNoisy
    }
}

/// A user-supplied mask (loaded from a file by the caller).
pub struct ExternalDetector {
    pub seg: SegMask,
    pub label: String,
}

impl Detector for ExternalDetector {
    fn detect(&self, image: &ImageTensor) -> Result<SegMask> {
        let (_, h, w) = image.dim();
        if self.seg.dim() != (h, w) {
            return Err(Error::Detector("external mask size mismatch".into()));
        }
        Ok(self.seg.clone())
    }

    fn name(&self) -> &str {
        &self.label
    }

    fn provenance(&self) -> DetectorProvenance {
        DetectorProvenance::External
    }
}

fn stamp_disk(grid: &mut Array2<u8>, ci: usize, cj: usize, r: f64, val: u8) {
    let (h, w) = grid.dim();
    let ir = r.ceil() as isize;
    for di in -ir..=ir {
        for dj in -ir..=ir {
            let (i, j) = (ci as isize + di, cj as isize + dj);
            if i >= 0 && i < h as isize && j >= 0 && j < w as isize {
                let d2 = (di * di + dj * dj) as f64;
                if d2 <= r * r {
                    grid[[i as usize, j as usize]] = val;
                }
            }
        }
    }
}

fn on_boundary(grid: &Array2<u8>, i: usize, j: usize) -> bool {
    let (h, w) = grid.dim();
    let v = grid[[i, j]];
    for di in -1isize..=1 {
        for dj in -1isize..=1 {
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni >= 0 && ni < h as isize && nj >= 0 && nj < w as isize {
                if grid[[ni as usize, nj as usize]] != v {
                    return true;
                }
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanupConfig {
    pub min_component_size: usize,
    pub connectivity: Connectivity,
}

impl CleanupConfig {
    /// Default threshold: 0.1% of the image area.
    pub fn default_for_area(h: usize, w: usize) -> Self {
        CleanupConfig {
            min_component_size: (h * w) / 1000,
            connectivity: Connectivity::Four,
        }
    }
}

/// Connected components by flood fill; returns per-pixel labels (0 =
/// background) and per-label sizes (index label-1).
pub fn connected_components(grid: &Array2<u8>, conn: Connectivity) -> (Array2<u32>, Vec<usize>) {
    let (h, w) = grid.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut sizes = Vec::new();
    let neigh: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    let mut next = 0u32;
    for si in 0..h {
        for sj in 0..w {
            if grid[[si, sj]] == 0 || labels[[si, sj]] != 0 {
                continue;
            }
            next += 1;
            let mut size = 0usize;
            let mut stack = vec![(si, sj)];
            labels[[si, sj]] = next;
            while let Some((i, j)) = stack.pop() {
                size += 1;
                for &(di, dj) in neigh {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni >= 0 && ni < h as isize && nj >= 0 && nj < w as isize {
                        let (ni, nj) = (ni as usize, nj as usize);
                        if grid[[ni, nj]] != 0 && labels[[ni, nj]] == 0 {
                            labels[[ni, nj]] = next;
                            stack.push((ni, nj));
                        }
                    }
                }
            }
            sizes.push(size);
        }
    }
    (labels, sizes)
}

/// Remove detections inside holes, then drop connected components smaller
/// than the configured minimum.
pub fn clean_segmentation(seg: &SegMask, hole: &HoleMask, cfg: &CleanupConfig) -> Result<SegMask> {
    if seg.dim() != hole.dim() {
        return Err(Error::Shape(format!(
            "seg {:?} vs hole {:?}",
            seg.dim(),
            hole.dim()
        )));
    }
    let mut grid = seg.0.clone();
    ndarray::Zip::from(&mut grid).and(&hole.0).for_each(|s, &h| {
        if h == 1 {
            *s = 0;
        }
    });
    if cfg.min_component_size > 0 {
        let (labels, sizes) = connected_components(&grid, cfg.connectivity);
        ndarray::Zip::from(&mut grid).and(&labels).for_each(|s, &l| {
            if l != 0 && sizes[(l - 1) as usize] < cfg.min_component_size {
                *s = 0;
            }
        });
    }
    Ok(SegMask(grid))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub sobel_threshold: f64,
    pub cleanup: CleanupConfig,
}

impl InferOptions {
    pub fn default_for(h: usize, w: usize) -> Self {
        InferOptions {
            sobel_threshold: 1.0,
            cleanup: CleanupConfig::default_for_area(h, w),
        }
    }
}

pub struct InferOutput {
    /// Hole-composited completed image: known pixels pass through exactly.
    pub image: ImageTensor,
    /// Detected contour restricted to the known region.
    pub contour_incomplete: ContourMap,
    /// Incomplete contour outside holes, soft prediction inside.
    pub contour_completed: ContourMap,
}

fn to_batch1(img: &ImageTensor) -> Array4<f32> {
    let (c, h, w) = img.dim();
    let mut out = Array4::zeros((1, c, h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[[0, ci, i, j]] = img[[ci, i, j]];
            }
        }
    }
    out
}

fn plane_to_batch1(p: &Array2<f32>) -> Array4<f32> {
    let (h, w) = p.dim();
    let mut out = Array4::zeros((1, 1, h, w));
    for i in 0..h {
        for j in 0..w {
            out[[0, 0, i, j]] = p[[i, j]];
        }
    }
    out
}

fn batch1_to_image(x: &Array4<f32>) -> ImageTensor {
    let (_, c, h, w) = x.dim();
    let mut out = ImageTensor::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[[ci, i, j]] = x[[0, ci, i, j]];
            }
        }
    }
    out
}

/// Full cascade on one sample. The returned image equals the input outside
/// holes exactly; the completed contour equals the detected incomplete
/// contour outside holes exactly.
pub fn infer(
    image_in: &ImageTensor,
    hole: &HoleMask,
    detector: &dyn Detector,
    contour_model: &ContourModel<f32>,
    image_model: &ImageModel<f32>,
    opts: &InferOptions,
) -> Result<InferOutput> {
    let (_, h, w) = image_in.dim();
    if hole.dim() != (h, w) {
        return Err(Error::Shape("hole mask size mismatch".into()));
    }

    let detected = detector.detect(image_in)?;
    let cleaned = clean_segmentation(&detected, hole, &opts.cleanup)?;
    let detected_contour = sobel_contour(&cleaned, opts.sobel_threshold)?;
    let mut incomplete = detected_contour.0.clone();
    ndarray::Zip::from(&mut incomplete)
        .and(&hole.0)
        .for_each(|c, &hm| {
            if hm == 1 {
                *c = 0.0;
            }
        });
    let contour_incomplete = ContourMap(incomplete);

    let img_b = to_batch1(image_in);
    let hole_plane = Array2::from_shape_fn((h, w), |(i, j)| hole.0[[i, j]] as f32);
    let hole_b = plane_to_batch1(&hole_plane);
    let cin_b = plane_to_batch1(&contour_incomplete.0);
    let (cout, _) = contour_model.forward(&img_b, &cin_b, &hole_b)?;

    // known region keeps the detected contour; holes take the prediction
    let mut completed = contour_incomplete.0.clone();
    for i in 0..h {
        for j in 0..w {
            if hole.0[[i, j]] == 1 {
                completed[[i, j]] = cout.refined[[0, 0, i, j]];
            }
        }
    }
    let contour_completed = ContourMap(completed);

    let contour_b = plane_to_batch1(&contour_completed.0);
    let contour_arg = image_model.guided.then_some(&contour_b);
    let (iout, _) = image_model.forward(&img_b, contour_arg, &hole_b)?;
    let composited = composite(&iout.refined, &img_b, &hole_b);

    Ok(InferOutput {
        image: batch1_to_image(&composited),
        contour_incomplete,
        contour_completed,
    })
}
