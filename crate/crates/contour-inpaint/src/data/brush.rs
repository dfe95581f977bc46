//! Free-form hole masks drawn with a random brush: thick polylines with disk
//! joints, resampled until the hole area ratio falls inside configured
//! bounds. Two regimes: holes anywhere, or holes restricted away from the
//! foreground.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{synth_scene, SceneConfig};
use super::sobel::sobel_contour;
use super::{ContourMap, HoleMask, SegMask, TrainingSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrushConfig {
    pub strokes: (usize, usize),
    pub vertices: (usize, usize),
    /// Brush width as a fraction of min(H, W).
    pub width_frac: (f64, f64),
    /// Maximum per-segment direction perturbation, radians.
    pub angle_jitter: f64,
    /// Segment length as a fraction of min(H, W).
    pub segment_frac: (f64, f64),
    /// Acceptable hole area ratio bounds.
    pub area_ratio: (f64, f64),
    pub max_retries: usize,
}

impl Default for BrushConfig {
    fn default() -> Self {
        BrushConfig {
            strokes: (1, 8),
            vertices: (4, 12),
            width_frac: (0.05, 0.20),
            angle_jitter: 1.2,
            segment_frac: (0.08, 0.25),
            area_ratio: (0.01, 0.40),
            max_retries: 100,
        }
    }
}

impl BrushConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strokes.0 > self.strokes.1
            || self.vertices.0 > self.vertices.1
            || self.width_frac.0 > self.width_frac.1
            || self.segment_frac.0 > self.segment_frac.1
            || self.area_ratio.0 > self.area_ratio.1
        {
            return Err(Error::Config("brush range fields must be (lo, hi)".into()));
        }
        if self.area_ratio.0 < 0.0 || self.area_ratio.1 > 1.0 {
            return Err(Error::Config("area_ratio must lie within [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Overlap,
    NonOverlap,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

fn range_sample(rng: &mut ChaCha8Rng, r: (usize, usize)) -> usize {
    if r.0 == r.1 {
        r.0
    } else {
        r.0 + (rng.gen::<u64>() % (r.1 - r.0 + 1) as u64) as usize
    }
}

/// Mark every pixel within `radius` of the segment (x0,y0)-(x1,y1).
fn draw_capsule(mask: &mut Array2<u8>, x0: f64, y0: f64, x1: f64, y1: f64, radius: f64) {
    let (h, w) = mask.dim();
    let lo_i = ((y0.min(y1) - radius).floor().max(0.0)) as usize;
    let hi_i = ((y0.max(y1) + radius).ceil().min(h as f64 - 1.0)) as usize;
    let lo_j = ((x0.min(x1) - radius).floor().max(0.0)) as usize;
    let hi_j = ((x0.max(x1) + radius).ceil().min(w as f64 - 1.0)) as usize;
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len2 = dx * dx + dy * dy;
    for i in lo_i..=hi_i {
        for j in lo_j..=hi_j {
            let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (x0 + t * dx, y0 + t * dy);
            let d2 = (px - cx).powi(2) + (py - cy).powi(2);
            if d2 <= radius * radius {
                mask[[i, j]] = 1;
            }
        }
    }
}

fn draw_mask(size: usize, cfg: &BrushConfig, rng: &mut ChaCha8Rng) -> Array2<u8> {
    let mut mask = Array2::<u8>::zeros((size, size));
    let dim = size as f64;
    let strokes = range_sample(rng, cfg.strokes);
    for _ in 0..strokes {
        let verts = range_sample(rng, cfg.vertices);
        let width = uniform(rng, cfg.width_frac.0, cfg.width_frac.1) * dim;
        let radius = (width / 2.0).max(0.5);
        let mut x = uniform(rng, 0.0, dim);
        let mut y = uniform(rng, 0.0, dim);
        let mut angle = uniform(rng, 0.0, 2.0 * std::f64::consts::PI);
        for _ in 0..verts {
            angle += uniform(rng, -cfg.angle_jitter, cfg.angle_jitter);
            let len = uniform(rng, cfg.segment_frac.0, cfg.segment_frac.1) * dim;
            let nx = (x + len * angle.cos()).clamp(0.0, dim);
            let ny = (y + len * angle.sin()).clamp(0.0, dim);
            draw_capsule(&mut mask, x, y, nx, ny, radius);
            x = nx;
            y = ny;
        }
    }
    mask
}

/// Sample a brush-stroke hole mask whose area ratio lands inside the
/// configured bounds, retrying with fresh strokes up to the retry limit.
/// A stroke range of (0, 0) degenerates to the empty mask.
pub fn sample_brush_holes(size: usize, cfg: &BrushConfig, seed: u64) -> Result<HoleMask> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if cfg.strokes.1 == 0 {
        return Ok(HoleMask(Array2::zeros((size, size))));
    }
    let mut achieved = 0.0;
    for _ in 0..cfg.max_retries.max(1) {
        let mask = draw_mask(size, cfg, &mut rng);
        let hole = HoleMask(mask);
        achieved = hole.area_ratio();
        if achieved >= cfg.area_ratio.0 && achieved <= cfg.area_ratio.1 {
            return Ok(hole);
        }
    }
    Err(Error::Sampling {
        achieved,
        min: cfg.area_ratio.0,
        max: cfg.area_ratio.1,
        attempts: cfg.max_retries,
    })
}

/// Remove hole pixels that overlap foreground: output = hole AND NOT seg.
pub fn restrict_non_overlap(hole: &HoleMask, seg: &SegMask) -> Result<HoleMask> {
    if hole.dim() != seg.dim() {
        return Err(Error::Shape(format!(
            "hole {:?} vs seg {:?}",
            hole.dim(),
            seg.dim()
        )));
    }
    let mut out = hole.0.clone();
    ndarray::Zip::from(&mut out).and(&seg.0).for_each(|h, &s| {
        if s == 1 {
            *h = 0;
        }
    });
    Ok(HoleMask(out))
}

/// C_in = (1 - H) . C_gt : contour kept outside holes, zeroed inside.
pub fn make_incomplete_contour(contour_gt: &ContourMap, hole: &HoleMask) -> Result<ContourMap> {
    if contour_gt.dim() != hole.dim() {
        return Err(Error::Shape(format!(
            "contour {:?} vs hole {:?}",
            contour_gt.dim(),
            hole.dim()
        )));
    }
    if !contour_gt.is_binary() {
        return Err(Error::Contract(
            "ground-truth contour must be binary".into(),
        ));
    }
    let mut out = contour_gt.0.clone();
    ndarray::Zip::from(&mut out).and(&hole.0).for_each(|c, &h| {
        if h == 1 {
            *c = 0.0;
        }
    });
    Ok(ContourMap(out))
}

/// Everything needed to generate one sample from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub scene: SceneConfig,
    pub brush: BrushConfig,
    pub sobel_threshold: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            scene: SceneConfig::default(),
            brush: BrushConfig::default(),
            sobel_threshold: 1.0,
        }
    }
}

fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E3779B97F4A7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B54A32D192ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Compose scene synthesis, contour extraction and hole sampling into a
/// complete training sample. In the non-overlap regime the hole is redrawn
/// until the restricted hole still satisfies the area bounds.
pub fn make_sample(cfg: &SampleConfig, regime: Regime, seed: u64) -> Result<TrainingSample> {
    let scene_cfg = SceneConfig {
        seed: derive_seed(seed, 0),
        ..cfg.scene.clone()
    };
    let (image, seg) = synth_scene(&scene_cfg)?;
    let contour_gt = sobel_contour(&seg, cfg.sobel_threshold)?;

    let mut achieved = 0.0;
    for attempt in 0..cfg.brush.max_retries.max(1) {
        let hole = sample_brush_holes(cfg.scene.canvas, &cfg.brush, derive_seed(seed, 1 + attempt as u64))?;
        let hole = match regime {
            Regime::Overlap => hole,
            Regime::NonOverlap => restrict_non_overlap(&hole, &seg)?,
        };
        achieved = hole.area_ratio();
        if achieved >= cfg.brush.area_ratio.0 && achieved <= cfg.brush.area_ratio.1 {
            return TrainingSample::compose(image, seg, contour_gt, hole);
        }
    }
    Err(Error::Sampling {
        achieved,
        min: cfg.brush.area_ratio.0,
        max: cfg.brush.area_ratio.1,
        attempts: cfg.brush.max_retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_strokes_gives_empty_mask() {
        let cfg = BrushConfig {
            strokes: (0, 0),
            ..BrushConfig::default()
        };
        let hole = sample_brush_holes(64, &cfg, 1).unwrap();
        assert_eq!(hole.area_ratio(), 0.0);
    }

    #[test]
    fn same_seed_same_mask() {
        let cfg = BrushConfig::default();
        let a = sample_brush_holes(64, &cfg, 42).unwrap();
        let b = sample_brush_holes(64, &cfg, 42).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn area_ratio_within_bounds_over_many_seeds() {
        let cfg = BrushConfig::default();
        for seed in 0..200 {
            let hole = sample_brush_holes(64, &cfg, seed).unwrap();
            let r = hole.area_ratio();
            assert!(
                (0.01..=0.40).contains(&r),
                "seed {seed} ratio {r} out of bounds"
            );
        }
    }

    #[test]
    fn restrict_cases() {
        let hole = HoleMask(Array2::ones((8, 8)));
        let seg0 = SegMask(Array2::zeros((8, 8)));
        assert_eq!(restrict_non_overlap(&hole, &seg0).unwrap().0, hole.0);
        let seg1 = SegMask(Array2::ones((8, 8)));
        assert!(restrict_non_overlap(&hole, &seg1)
            .unwrap()
            .0
            .iter()
            .all(|&v| v == 0));
        // hole == seg -> empty
        let mut grid = Array2::<u8>::zeros((8, 8));
        grid[[2, 2]] = 1;
        grid[[3, 3]] = 1;
        let both_h = HoleMask(grid.clone());
        let both_s = SegMask(grid);
        assert!(restrict_non_overlap(&both_h, &both_s)
            .unwrap()
            .0
            .iter()
            .all(|&v| v == 0));
    }

    #[test]
    fn restrict_shape_mismatch() {
        let hole = HoleMask(Array2::ones((8, 8)));
        let seg = SegMask(Array2::zeros((4, 4)));
        assert!(matches!(
            restrict_non_overlap(&hole, &seg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn incomplete_contour_cases() {
        let mut cgrid = Array2::<f32>::zeros((4, 4));
        for j in 0..4 {
            cgrid[[1, j]] = 1.0;
        }
        let contour = ContourMap(cgrid);
        let zeros = HoleMask(Array2::zeros((4, 4)));
        assert_eq!(
            make_incomplete_contour(&contour, &zeros).unwrap().0,
            contour.0
        );
        let ones = HoleMask(Array2::ones((4, 4)));
        assert!(make_incomplete_contour(&contour, &ones)
            .unwrap()
            .0
            .iter()
            .all(|&v| v == 0.0));
        // hole covering columns 0-1 leaves contour only on columns 2-3
        let mut hgrid = Array2::<u8>::zeros((4, 4));
        for i in 0..4 {
            hgrid[[i, 0]] = 1;
            hgrid[[i, 1]] = 1;
        }
        let partial = HoleMask(hgrid);
        let got = make_incomplete_contour(&contour, &partial).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == 1 && j >= 2 { 1.0 } else { 0.0 };
                assert_eq!(got.0[[i, j]], want);
            }
        }
    }

    #[test]
    fn soft_contour_rejected() {
        let soft = ContourMap(Array2::from_elem((4, 4), 0.5f32));
        let hole = HoleMask(Array2::zeros((4, 4)));
        assert!(matches!(
            make_incomplete_contour(&soft, &hole),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn non_overlap_sample_has_no_foreground_holes() {
        let cfg = SampleConfig::default();
        for seed in 0..30 {
            let s = make_sample(&cfg, Regime::NonOverlap, seed).unwrap();
            let overlap: u32 = ndarray::Zip::from(&s.hole.0)
                .and(&s.seg.0)
                .fold(0u32, |acc, &h, &g| acc + u32::from(h == 1 && g == 1));
            assert_eq!(overlap, 0, "seed {seed}");
        }
    }

    #[test]
    fn overlap_regime_can_cross_foreground() {
        // search a seed where a stroke crosses a shape; freeze it below
        let cfg = SampleConfig::default();
        let mut found = None;
        for seed in 0..100 {
            let s = make_sample(&cfg, Regime::Overlap, seed).unwrap();
            let overlap: u32 = ndarray::Zip::from(&s.hole.0)
                .and(&s.seg.0)
                .fold(0u32, |acc, &h, &g| acc + u32::from(h == 1 && g == 1));
            if overlap > 0 {
                found = Some(seed);
                break;
            }
        }
        let seed = found.expect("no overlapping seed in 0..100");
        // frozen fixture: the first such seed must stay overlapping
        let s = make_sample(&cfg, Regime::Overlap, seed).unwrap();
        let overlap: u32 = ndarray::Zip::from(&s.hole.0)
            .and(&s.seg.0)
            .fold(0u32, |acc, &h, &g| acc + u32::from(h == 1 && g == 1));
        assert!(overlap > 0);
    }

    #[test]
    fn masked_image_matches_ground_truth_outside_holes() {
        let cfg = SampleConfig::default();
        let s = make_sample(&cfg, Regime::Overlap, 5).unwrap();
        let (h, w) = s.canvas();
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    if s.hole.0[[i, j]] == 0 {
                        assert_eq!(s.image_in[[c, i, j]], s.image[[c, i, j]]);
                    } else {
                        assert_eq!(s.image_in[[c, i, j]], 0.0);
                    }
                }
            }
        }
    }
}
