//! Synthetic scenes: a textured background with 1..k opaque foreground
//! shapes whose exact pixel masks are known by construction.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ContourMap, ImageTensor, SegMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Polygon,
    Blob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Flat,
    Gradient,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub canvas: usize,
    pub shape_count: (usize, usize),
    pub shape_kinds: Vec<ShapeKind>,
    pub textures: Vec<TextureKind>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            canvas: 64,
            shape_count: (1, 3),
            shape_kinds: vec![ShapeKind::Ellipse, ShapeKind::Polygon, ShapeKind::Blob],
            textures: vec![TextureKind::Flat, TextureKind::Gradient, TextureKind::Noise],
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas < 32 {
            return Err(Error::Config(format!(
                "canvas must be >= 32, got {}",
                self.canvas
            )));
        }
        if self.shape_kinds.is_empty() {
            return Err(Error::Config("shape_kinds must not be empty".into()));
        }
        if self.textures.is_empty() {
            return Err(Error::Config("textures must not be empty".into()));
        }
        if self.shape_count.0 == 0 || self.shape_count.0 > self.shape_count.1 {
            return Err(Error::Config(format!(
                "shape_count range must satisfy 1 <= min <= max, got {:?}",
                self.shape_count
            )));
        }
        Ok(())
    }
}

/// A ground-truth scene: image, exact segmentation and its contour.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ImageTensor,
    pub seg: SegMask,
    pub contour: ContourMap,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[(rng.gen::<u64>() % items.len() as u64) as usize]
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

fn rand_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]
}

fn linf(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Membership test for one shape instance.
enum ShapeGeom {
    Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        rot: f64,
    },
    Polygon {
        verts: Vec<(f64, f64)>,
    },
    Blob {
        cx: f64,
        cy: f64,
        r0: f64,
        harmonics: Vec<(f64, f64)>, // (amplitude, phase) for h = 2, 3, 4
    },
}

impl ShapeGeom {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            ShapeGeom::Ellipse { cx, cy, a, b, rot } => {
                let (dx, dy) = (x - cx, y - cy);
                let (c, s) = (rot.cos(), rot.sin());
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            ShapeGeom::Polygon { verts } => {
                // even-odd ray casting
                let mut inside = false;
                let n = verts.len();
                for i in 0..n {
                    let (x1, y1) = verts[i];
                    let (x2, y2) = verts[(i + 1) % n];
                    if (y1 > y) != (y2 > y) {
                        let t = (y - y1) / (y2 - y1);
                        if x < x1 + t * (x2 - x1) {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
            ShapeGeom::Blob {
                cx,
                cy,
                r0,
                harmonics,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let dist = (dx * dx + dy * dy).sqrt();
                let phi = dy.atan2(dx);
                let mut r = 1.0;
                for (h, (amp, phase)) in harmonics.iter().enumerate() {
                    r += amp * ((h as f64 + 2.0) * phi + phase).cos();
                }
                dist <= r0 * r
            }
        }
    }

    fn sample(kind: ShapeKind, canvas: f64, rng: &mut ChaCha8Rng) -> Self {
        let cx = uniform(rng, 0.22 * canvas, 0.78 * canvas);
        let cy = uniform(rng, 0.22 * canvas, 0.78 * canvas);
        let rmax = uniform(rng, 0.10 * canvas, 0.26 * canvas);
        match kind {
            ShapeKind::Ellipse => ShapeGeom::Ellipse {
                cx,
                cy,
                a: rmax.max(3.0),
                b: uniform(rng, 0.5, 1.0) * rmax.max(3.0),
                rot: uniform(rng, 0.0, std::f64::consts::PI),
            },
            ShapeKind::Polygon => {
                let nv = 3 + (rng.gen::<u64>() % 5) as usize;
                let step = 2.0 * std::f64::consts::PI / nv as f64;
                let verts = (0..nv)
                    .map(|k| {
                        let ang = k as f64 * step + uniform(rng, -0.25, 0.25) * step;
                        let r = uniform(rng, 0.55, 1.0) * rmax.max(4.0);
                        (cx + r * ang.cos(), cy + r * ang.sin())
                    })
                    .collect();
                ShapeGeom::Polygon { verts }
            }
            ShapeKind::Blob => {
                let harmonics = (0..3)
                    .map(|h| (uniform(rng, 0.0, 0.22 / (h as f64 + 1.0)), uniform(rng, 0.0, 6.28)))
                    .collect();
                ShapeGeom::Blob {
                    cx,
                    cy,
                    r0: rmax.max(4.0),
                    harmonics,
                }
            }
        }
    }
}

struct Texture {
    kind: TextureKind,
    color_a: [f64; 3],
    color_b: [f64; 3],
    dir: (f64, f64),
    noise_seed: u64,
}

impl Texture {
    fn sample(kind: TextureKind, base: [f64; 3], rng: &mut ChaCha8Rng) -> Self {
        let color_b = [
            (base[0] + uniform(rng, -0.25, 0.25)).clamp(0.0, 1.0),
            (base[1] + uniform(rng, -0.25, 0.25)).clamp(0.0, 1.0),
            (base[2] + uniform(rng, -0.25, 0.25)).clamp(0.0, 1.0),
        ];
        let ang = uniform(rng, 0.0, std::f64::consts::PI);
        Texture {
            kind,
            color_a: base,
            color_b,
            dir: (ang.cos(), ang.sin()),
            noise_seed: rng.gen(),
        }
    }

    fn at(&self, x: f64, y: f64, canvas: f64) -> [f64; 3] {
        match self.kind {
            TextureKind::Flat => self.color_a,
            TextureKind::Gradient => {
                let t = ((x * self.dir.0 + y * self.dir.1) / canvas).clamp(0.0, 1.0);
                [
                    self.color_a[0] * (1.0 - t) + self.color_b[0] * t,
                    self.color_a[1] * (1.0 - t) + self.color_b[1] * t,
                    self.color_a[2] * (1.0 - t) + self.color_b[2] * t,
                ]
            }
            TextureKind::Noise => {
                // hash-based value noise, deterministic per pixel
                let h = pixel_hash(self.noise_seed, x as u64, y as u64);
                let n = (h % 1000) as f64 / 1000.0 - 0.5;
                [
                    (self.color_a[0] + 0.24 * n).clamp(0.0, 1.0),
                    (self.color_a[1] + 0.24 * n).clamp(0.0, 1.0),
                    (self.color_a[2] + 0.24 * n).clamp(0.0, 1.0),
                ]
            }
        }
    }
}

fn pixel_hash(seed: u64, x: u64, y: u64) -> u64 {
    let mut z = seed ^ x.wrapping_mul(0x9E3779B97F4A7C15) ^ y.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Generate a textured background with opaque foreground shapes; the mask
/// marks exactly the shape pixels. Deterministic per (config, seed).
pub fn synth_scene(cfg: &SceneConfig) -> Result<(ImageTensor, SegMask)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.canvas;
    let canvas = n as f64;

    let bg_color = rand_color(&mut rng);
    let bg_kind = *pick(&mut rng, &cfg.textures);
    let bg = Texture::sample(bg_kind, bg_color, &mut rng);

    let mut image = ImageTensor::zeros((3, n, n));
    for i in 0..n {
        for j in 0..n {
            let c = bg.at(j as f64, i as f64, canvas);
            for ch in 0..3 {
                image[[ch, i, j]] = c[ch] as f32;
            }
        }
    }

    let mut seg = Array2::<u8>::zeros((n, n));
    let count_span = cfg.shape_count.1 - cfg.shape_count.0 + 1;
    let count = cfg.shape_count.0 + (rng.gen::<u64>() % count_span as u64) as usize;
    for _ in 0..count {
        let kind = *pick(&mut rng, &cfg.shape_kinds);
        let geom = ShapeGeom::sample(kind, canvas, &mut rng);

        // foreground color must contrast with the background base color
        let mut color = rand_color(&mut rng);
        for _ in 0..20 {
            if linf(&color, &bg_color) >= 0.25 {
                break;
            }
            color = rand_color(&mut rng);
        }
        if linf(&color, &bg_color) < 0.25 {
            for c in color.iter_mut() {
                *c = if *c > 0.5 { *c - 0.5 } else { *c + 0.5 };
            }
        }
        let tex_kind = *pick(&mut rng, &cfg.textures);
        let tex = Texture::sample(tex_kind, color, &mut rng);

        for i in 0..n {
            for j in 0..n {
                if geom.contains(j as f64 + 0.5, i as f64 + 0.5) {
                    seg[[i, j]] = 1;
                    let c = tex.at(j as f64, i as f64, canvas);
                    for ch in 0..3 {
                        image[[ch, i, j]] = c[ch] as f32;
                    }
                }
            }
        }
    }

    Ok((image, SegMask(seg)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flood_fill_components(grid: &Array2<u8>) -> usize {
        let (h, w) = grid.dim();
        let mut seen = Array2::<u8>::zeros((h, w));
        let mut count = 0;
        for si in 0..h {
            for sj in 0..w {
                if grid[[si, sj]] == 0 || seen[[si, sj]] != 0 {
                    continue;
                }
                count += 1;
                let mut stack = vec![(si, sj)];
                seen[[si, sj]] = 1;
                while let Some((i, j)) = stack.pop() {
                    let neigh = [
                        (i.wrapping_sub(1), j),
                        (i + 1, j),
                        (i, j.wrapping_sub(1)),
                        (i, j + 1),
                    ];
                    for (ni, nj) in neigh {
                        if ni < h && nj < w && grid[[ni, nj]] != 0 && seen[[ni, nj]] == 0 {
                            seen[[ni, nj]] = 1;
                            stack.push((ni, nj));
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SceneConfig {
            seed: 7,
            ..SceneConfig::default()
        };
        let (img_a, seg_a) = synth_scene(&cfg).unwrap();
        let (img_b, seg_b) = synth_scene(&cfg).unwrap();
        assert_eq!(img_a, img_b);
        assert_eq!(seg_a.0, seg_b.0);
    }

    #[test]
    fn single_ellipse_is_one_component() {
        for seed in 0..20 {
            let cfg = SceneConfig {
                shape_count: (1, 1),
                shape_kinds: vec![ShapeKind::Ellipse],
                seed,
                ..SceneConfig::default()
            };
            let (_, seg) = synth_scene(&cfg).unwrap();
            assert_eq!(
                flood_fill_components(&seg.0),
                1,
                "seed {seed} gave != 1 component"
            );
        }
    }

    #[test]
    fn zero_shape_range_rejected() {
        let cfg = SceneConfig {
            shape_count: (0, 0),
            ..SceneConfig::default()
        };
        assert!(matches!(synth_scene(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn small_canvas_rejected() {
        let cfg = SceneConfig {
            canvas: 16,
            ..SceneConfig::default()
        };
        assert!(synth_scene(&cfg).is_err());
    }

    #[test]
    fn foreground_present_and_in_range() {
        for seed in 0..10 {
            let cfg = SceneConfig {
                seed,
                ..SceneConfig::default()
            };
            let (img, seg) = synth_scene(&cfg).unwrap();
            assert!(seg.0.iter().any(|&v| v == 1), "no foreground for {seed}");
            assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
