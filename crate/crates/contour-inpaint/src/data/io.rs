//! Dataset serialization (paired lossless 8-bit PNGs plus a JSON manifest)
//! and sample sources for training: a scene pool that redraws holes per
//! draw, and a fixed on-disk sample set.

use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::brush::{restrict_non_overlap, sample_brush_holes, Regime, SampleConfig};
use super::scene::{synth_scene, Scene, SceneConfig};
use super::sobel::sobel_contour;
use super::{ContourMap, HoleMask, ImageTensor, RegimeTag, SegMask, TrainingSample};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub seed: u64,
    pub regime: RegimeTag,
    pub config_hash: String,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    image: String,
    seg: String,
    contour: String,
    hole: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    #[serde(flatten)]
    meta: DatasetMeta,
    samples: Vec<ManifestEntry>,
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Read a 3-channel PNG into [0,1] floats.
pub fn read_image_png(path: &Path) -> Result<ImageTensor> {
    Ok(rgb_to_image(&image::open(path)?.to_rgb8()))
}

/// Read a grayscale PNG as a binary mask (threshold 128).
pub fn read_mask_png(path: &Path) -> Result<Array2<u8>> {
    Ok(gray_to_mask(&image::open(path)?.to_luma8()))
}

pub fn write_image_png(path: &Path, img: &ImageTensor) -> Result<()> {
    image_to_rgb(img).save(path).map_err(Error::Image)
}

pub fn write_mask_png(path: &Path, grid: &Array2<u8>) -> Result<()> {
    mask_to_gray(grid).save(path).map_err(Error::Image)
}

/// Write a [0,1] map as an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, map: &Array2<f32>) -> Result<()> {
    let (h, w) = map.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([to_u8(map[[y as usize, x as usize]])])
    })
    .save(path)
    .map_err(Error::Image)
}

fn image_to_rgb(img: &ImageTensor) -> RgbImage {
    let (_, h, w) = img.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (i, j) = (y as usize, x as usize);
        image::Rgb([
            to_u8(img[[0, i, j]]),
            to_u8(img[[1, i, j]]),
            to_u8(img[[2, i, j]]),
        ])
    })
}

fn rgb_to_image(img: &RgbImage) -> ImageTensor {
    let (w, h) = img.dimensions();
    let mut out = ImageTensor::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
        }
    }
    out
}

fn mask_to_gray(grid: &Array2<u8>) -> GrayImage {
    let (h, w) = grid.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([grid[[y as usize, x as usize]] * 255])
    })
}

fn contour_to_gray(c: &ContourMap) -> GrayImage {
    let (h, w) = c.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([to_u8(c.0[[y as usize, x as usize]])])
    })
}

fn gray_to_mask(img: &GrayImage) -> Array2<u8> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        u8::from(img.get_pixel(j as u32, i as u32).0[0] >= 128)
    })
}

/// Write samples as paired 8-bit PNGs plus `manifest.json`. The directory
/// must not already contain a manifest unless `force` is set.
pub fn save_dataset(
    dir: &Path,
    samples: &[TrainingSample],
    meta: &DatasetMeta,
    force: bool,
) -> Result<()> {
    let manifest_path = dir.join(MANIFEST_NAME);
    if manifest_path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass force to overwrite",
            manifest_path.display()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::file_io(dir, e))?;

    let mut entries = Vec::with_capacity(samples.len());
    for (idx, s) in samples.iter().enumerate() {
        let id = format!("{idx:05}");
        let image_name = format!("{id}_image.png");
        let seg_name = format!("{id}_seg.png");
        let contour_name = format!("{id}_contour.png");
        let hole_name = format!("{id}_hole.png");
        image_to_rgb(&s.image)
            .save(dir.join(&image_name))
            .map_err(Error::Image)?;
        mask_to_gray(&s.seg.0)
            .save(dir.join(&seg_name))
            .map_err(Error::Image)?;
        contour_to_gray(&s.contour_gt)
            .save(dir.join(&contour_name))
            .map_err(Error::Image)?;
        mask_to_gray(&s.hole.0)
            .save(dir.join(&hole_name))
            .map_err(Error::Image)?;
        entries.push(ManifestEntry {
            id,
            image: image_name,
            seg: seg_name,
            contour: contour_name,
            hole: hole_name,
        });
    }
    let manifest = Manifest {
        meta: DatasetMeta {
            count: samples.len(),
            ..meta.clone()
        },
        samples: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, json).map_err(|e| Error::file_io(&manifest_path, e))?;
    Ok(())
}

/// Load a dataset directory; masked inputs are rederived from the stored
/// ground truth and hole masks.
pub fn load_dataset(dir: &Path) -> Result<(Vec<TrainingSample>, DatasetMeta)> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::file_io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let image = rgb_to_image(
            &image::open(dir.join(&e.image))?.to_rgb8(),
        );
        let seg = SegMask::new(gray_to_mask(&image::open(dir.join(&e.seg))?.to_luma8()))?;
        let contour = ContourMap::new(
            gray_to_mask(&image::open(dir.join(&e.contour))?.to_luma8())
                .mapv(|v| v as f32),
        )?;
        let hole = HoleMask::new(gray_to_mask(&image::open(dir.join(&e.hole))?.to_luma8()))?;
        samples.push(TrainingSample::compose(image, seg, contour, hole)?);
    }
    Ok((samples, manifest.meta))
}

/// Corpus adapter: directory of `<stem>_image.png` + `<stem>_mask.png` pairs
/// (any real dataset can be dropped in this way); contours are derived with
/// the Sobel operator.
pub fn load_corpus_scenes(dir: &Path, sobel_threshold: f64) -> Result<Vec<Scene>> {
    let mut stems: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::file_io(dir, e))? {
        let path = entry.map_err(|e| Error::file_io(dir, e))?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if let Some(stem) = name.strip_suffix("_image.png") {
                stems.push(dir.join(stem));
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Config(format!(
            "no *_image.png files in {}",
            dir.display()
        )));
    }
    let mut scenes = Vec::with_capacity(stems.len());
    for stem in stems {
        let image_path = PathBuf::from(format!("{}_image.png", stem.display()));
        let mask_path = PathBuf::from(format!("{}_mask.png", stem.display()));
        let image = rgb_to_image(&image::open(&image_path)?.to_rgb8());
        let seg = SegMask::new(gray_to_mask(&image::open(&mask_path)?.to_luma8()))?;
        let contour = sobel_contour(&seg, sobel_threshold)?;
        scenes.push(Scene {
            image,
            seg,
            contour,
        });
    }
    Ok(scenes)
}

/// Anything a trainer can draw samples from. Implementations are pure; all
/// randomness comes through the caller's rng, so training remains a function
/// of (config, seed) and resumes replay exactly.
pub trait SampleSource {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<TrainingSample>;
    fn size_hint(&self) -> usize;
}

/// Fixed pool of ground-truth scenes; every draw picks a scene and a fresh
/// brush hole (regime chosen uniformly among those enabled).
pub struct ScenePool {
    pub scenes: Vec<Scene>,
    pub brush: super::brush::BrushConfig,
    pub regimes: Vec<Regime>,
    pub canvas: usize,
}

impl ScenePool {
    /// Synthesize `n` scenes deterministically from a base seed.
    pub fn synth(cfg: &SampleConfig, n: usize, base_seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("scene pool needs at least one scene".into()));
        }
        let mut scenes = Vec::with_capacity(n);
        for k in 0..n {
            let scfg = SceneConfig {
                seed: base_seed
                    .wrapping_mul(0x9E3779B97F4A7C15)
                    .wrapping_add(k as u64),
                ..cfg.scene.clone()
            };
            let (image, seg) = synth_scene(&scfg)?;
            let contour = sobel_contour(&seg, cfg.sobel_threshold)?;
            scenes.push(Scene {
                image,
                seg,
                contour,
            });
        }
        Ok(ScenePool {
            scenes,
            brush: cfg.brush,
            regimes: vec![Regime::Overlap, Regime::NonOverlap],
            canvas: cfg.scene.canvas,
        })
    }

    pub fn from_scenes(
        scenes: Vec<Scene>,
        brush: super::brush::BrushConfig,
        regimes: Vec<Regime>,
        canvas: usize,
    ) -> Result<Self> {
        if scenes.is_empty() || regimes.is_empty() {
            return Err(Error::Config("scene pool needs scenes and regimes".into()));
        }
        Ok(ScenePool {
            scenes,
            brush,
            regimes,
            canvas,
        })
    }
}

impl SampleSource for ScenePool {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<TrainingSample> {
        let scene = &self.scenes[(rng.gen::<u64>() % self.scenes.len() as u64) as usize];
        let regime = self.regimes[(rng.gen::<u64>() % self.regimes.len() as u64) as usize];
        let mut achieved = 0.0;
        for _ in 0..self.brush.max_retries.max(1) {
            let hole = sample_brush_holes(self.canvas, &self.brush, rng.gen())?;
            let hole = match regime {
                Regime::Overlap => hole,
                Regime::NonOverlap => restrict_non_overlap(&hole, &scene.seg)?,
            };
            achieved = hole.area_ratio();
            if achieved >= self.brush.area_ratio.0 && achieved <= self.brush.area_ratio.1 {
                return TrainingSample::compose(
                    scene.image.clone(),
                    scene.seg.clone(),
                    scene.contour.clone(),
                    hole,
                );
            }
        }
        Err(Error::Sampling {
            achieved,
            min: self.brush.area_ratio.0,
            max: self.brush.area_ratio.1,
            attempts: self.brush.max_retries,
        })
    }

    fn size_hint(&self) -> usize {
        self.scenes.len()
    }
}

/// A fixed set of precomputed samples (e.g. loaded from disk); draws pick a
/// random element.
pub struct FixedSamples(pub Vec<TrainingSample>);

impl SampleSource for FixedSamples {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<TrainingSample> {
        if self.0.is_empty() {
            return Err(Error::Config("empty sample set".into()));
        }
        Ok(self.0[(rng.gen::<u64>() % self.0.len() as u64) as usize].clone())
    }

    fn size_hint(&self) -> usize {
        self.0.len()
    }
}
