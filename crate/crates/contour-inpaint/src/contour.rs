//! Contour completion: coarse-to-refine generator over incomplete contours,
//! an image-conditioned patch discriminator, the focal content loss and the
//! hinge adversarial losses.

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::discriminator::DiscriminatorConfig;
use crate::nn::generator::{GeneratorConfig, LayerCache, RefineCache};
use crate::nn::{concat_channels, slice_channels, InpaintGenerator, Param, PatchDiscriminator, Scalar};

/// Weights and numeric guards of the contour content loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourLossConfig {
    /// Extra weight on hole pixels (the data-imbalance correction).
    pub lambda: f64,
    /// Predictions are clamped to [eps, 1-eps] before the log terms.
    pub bce_clamp_eps: f64,
    /// Weight of the adversarial term relative to content (curriculum-set).
    pub adversarial_weight: f64,
}

impl Default for ContourLossConfig {
    fn default() -> Self {
        ContourLossConfig {
            lambda: 5.0,
            bce_clamp_eps: 1e-6,
            adversarial_weight: 0.0,
        }
    }
}

impl ContourLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::Config("lambda must be > 0".into()));
        }
        if !(0.0..0.5).contains(&self.bce_clamp_eps) || self.bce_clamp_eps == 0.0 {
            return Err(Error::Config("bce_clamp_eps must be in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Coarse and refined predictions, both sigmoid-activated.
pub struct ContourGenOutput<S: Scalar> {
    pub coarse: Array4<S>,
    pub refined: Array4<S>,
}

fn check_binary<S: Scalar>(name: &str, x: &Array4<S>) -> Result<()> {
    if x.iter().any(|&v| v != S::zero() && v != S::one()) {
        return Err(Error::Contract(format!("{name} must be exactly binary")));
    }
    Ok(())
}

fn check_same_shape<S: Scalar>(a: &Array4<S>, b: &Array4<S>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Focal binary cross-entropy over a contour map: each pixel contributes
/// (pred-gt)^2 * BCE(pred, gt), hole pixels weighted by lambda, divided by
/// the total pixel count.
pub fn focal_contour_loss<S: Scalar>(
    pred: &Array4<S>,
    gt: &Array4<S>,
    hole: &Array4<S>,
    cfg: &ContourLossConfig,
) -> Result<S> {
    Ok(focal_contour_loss_grad(pred, gt, hole, cfg)?.0)
}

/// Loss value plus gradient w.r.t. `pred`. The clamp to [eps, 1-eps] is
/// treated as pass-through in the gradient so saturated wrong pixels keep a
/// learning signal.
pub fn focal_contour_loss_grad<S: Scalar>(
    pred: &Array4<S>,
    gt: &Array4<S>,
    hole: &Array4<S>,
    cfg: &ContourLossConfig,
) -> Result<(S, Array4<S>)> {
    cfg.validate()?;
    check_same_shape(pred, gt, "pred vs gt")?;
    check_same_shape(pred, hole, "pred vs hole")?;
    check_binary("contour ground truth", gt)?;

    let eps = S::from_f64(cfg.bce_clamp_eps);
    let lambda = S::from_f64(cfg.lambda);
    let n = S::from_f64(pred.len() as f64);
    let one = S::one();

    let mut grad = Array4::<S>::zeros(pred.dim());
    let mut loss = S::zero();
    ndarray::Zip::from(pred)
        .and(gt)
        .and(hole)
        .and(&mut grad)
        .for_each(|&p, &y, &h, g| {
            let pc = p.max(eps).min(one - eps);
            let w = if h > S::zero() { lambda } else { one };
            let diff = pc - y;
            let bce = -(y * pc.ln() + (one - y) * (one - pc).ln());
            loss = loss + w * diff * diff * bce;
            let dbce = -(y / pc) + (one - y) / (one - pc);
            *g = w * (S::from_f64(2.0) * diff * bce + diff * diff * dbce) / n;
        });
    Ok((loss / n, grad))
}

/// Sum of the focal losses of both stages (the full content loss).
pub fn contour_content_loss<S: Scalar>(
    out: &ContourGenOutput<S>,
    gt: &Array4<S>,
    hole: &Array4<S>,
    cfg: &ContourLossConfig,
) -> Result<S> {
    Ok(focal_contour_loss(&out.coarse, gt, hole, cfg)?
        + focal_contour_loss(&out.refined, gt, hole, cfg)?)
}

/// Hinge discriminator loss: mean(relu(1 - d_real)) + mean(relu(1 + d_fake)).
pub fn contour_d_loss<S: Scalar>(d_real: &Array4<S>, d_fake: &Array4<S>) -> S {
    hinge_d_loss_grad(d_real, d_fake).0
}

/// Hinge loss plus gradients w.r.t. both score maps.
pub fn hinge_d_loss_grad<S: Scalar>(
    d_real: &Array4<S>,
    d_fake: &Array4<S>,
) -> (S, Array4<S>, Array4<S>) {
    let one = S::one();
    let nr = S::from_f64(d_real.len() as f64);
    let nf = S::from_f64(d_fake.len() as f64);
    let mut loss = S::zero();
    let mut dr = Array4::<S>::zeros(d_real.dim());
    ndarray::Zip::from(d_real).and(&mut dr).for_each(|&s, g| {
        let m = one - s;
        if m > S::zero() {
            loss = loss + m / nr;
            *g = -one / nr;
        }
    });
    let mut df = Array4::<S>::zeros(d_fake.dim());
    ndarray::Zip::from(d_fake).and(&mut df).for_each(|&s, g| {
        let m = one + s;
        if m > S::zero() {
            loss = loss + m / nf;
            *g = one / nf;
        }
    });
    (loss, dr, df)
}

/// Generator adversarial term: -mean(d_fake).
pub fn contour_g_adv_loss<S: Scalar>(d_fake: &Array4<S>) -> S {
    g_adv_loss_grad(d_fake).0
}

pub fn g_adv_loss_grad<S: Scalar>(d_fake: &Array4<S>) -> (S, Array4<S>) {
    let n = S::from_f64(d_fake.len() as f64);
    let mut mean = S::zero();
    for v in d_fake.iter() {
        mean = mean + *v;
    }
    mean = mean / n;
    let g = Array4::from_elem(d_fake.dim(), -S::one() / n);
    (-mean, g)
}

/// Generator + image-conditioned discriminator for contour completion.
pub struct ContourModel<S: Scalar> {
    pub gen: InpaintGenerator<S>,
    pub disc: PatchDiscriminator<S>,
}

pub struct ContourFwdCache<S: Scalar> {
    coarse: Vec<LayerCache<S>>,
    refine: RefineCache<S>,
    hole: Array4<S>,
}

impl<S: Scalar> ContourModel<S> {
    pub fn new(width_mult: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let gen = InpaintGenerator::new(GeneratorConfig::contour(width_mult), rng)?;
        // condition: 3 image channels + 1 contour channel
        let disc = PatchDiscriminator::new(DiscriminatorConfig::default_for(4, width_mult), rng)?;
        Ok(ContourModel { gen, disc })
    }

    pub fn from_config(
        gen_cfg: GeneratorConfig,
        disc_cfg: DiscriminatorConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(ContourModel {
            gen: InpaintGenerator::new(gen_cfg, rng)?,
            disc: PatchDiscriminator::new(disc_cfg, rng)?,
        })
    }

    /// Coarse + refined contour prediction from the masked inputs.
    /// `contour_in` must be zero inside holes.
    pub fn forward(
        &self,
        image_in: &Array4<S>,
        contour_in: &Array4<S>,
        hole: &Array4<S>,
    ) -> Result<(ContourGenOutput<S>, ContourFwdCache<S>)> {
        check_same_shape(contour_in, hole, "contour_in vs hole")?;
        let ok = ndarray::Zip::from(contour_in)
            .and(hole)
            .all(|&c, &h| h <= S::zero() || c == S::zero());
        if !ok {
            return Err(Error::Contract(
                "contour_in must be zero inside holes".into(),
            ));
        }
        let x0 = concat_channels(&[image_in, contour_in, hole]);
        let (coarse, coarse_cache) = self.gen.forward_coarse(&x0)?;
        let refine_in = concat_channels(&[&coarse, hole]);
        let (refined, refine_cache) = self.gen.forward_refine(&refine_in, hole)?;
        Ok((
            ContourGenOutput { coarse, refined },
            ContourFwdCache {
                coarse: coarse_cache,
                refine: refine_cache,
                hole: hole.clone(),
            },
        ))
    }

    /// Backpropagate generator losses. Content gradients on the refined
    /// output flow through the refine network into the coarse stage; the
    /// adversarial gradient (if any) stops at the refine input.
    pub fn backward(
        &mut self,
        cache: &ContourFwdCache<S>,
        d_coarse_content: &Array4<S>,
        d_refined_content: &Array4<S>,
        d_refined_adv: Option<&Array4<S>>,
    ) {
        let drin = self.gen.backward_refine(&cache.refine, d_refined_content);
        if let Some(dadv) = d_refined_adv {
            // second pass: parameter gradients only, input gradient dropped
            let _ = self.gen.backward_refine(&cache.refine, dadv);
        }
        let d_coarse_from_refine = slice_channels(&drin, 0, 1);
        let d_coarse = d_coarse_content + &d_coarse_from_refine;
        let _ = self.gen.backward_coarse(&cache.coarse, &d_coarse);
    }

    /// Like `backward`, but also returns the gradient w.r.t. the contour-in
    /// channel of the coarse input (used by joint fine-tuning; zero here
    /// since contour_in is data, kept for interface symmetry).
    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<S>)) {
        self.gen.visit_params("gen", f);
        self.disc.visit_params("disc", f);
    }

    pub fn hole_from_cache<'a>(cache: &'a ContourFwdCache<S>) -> &'a Array4<S> {
        &cache.hole
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_px(v: f64) -> Array4<f64> {
        Array4::from_elem((1, 1, 1, 1), v)
    }

    #[test]
    fn focal_loss_hole_pixel_hand_value() {
        // single pixel, H=1, lambda=5, pred=0.5, gt=1 -> 5 * 0.25 * ln 2
        let cfg = ContourLossConfig::default();
        let loss =
            focal_contour_loss(&one_px(0.5), &one_px(1.0), &one_px(1.0), &cfg).unwrap();
        let want = 5.0 * 0.25 * std::f64::consts::LN_2;
        assert!((loss - want).abs() < 1e-12, "loss={loss} want={want}");
        assert!((loss - 0.86643).abs() < 1e-4);
    }

    #[test]
    fn focal_loss_known_pixel_hand_value() {
        // single pixel, H=0, pred=0.5, gt=0 -> 0.25 * ln 2
        let cfg = ContourLossConfig::default();
        let loss =
            focal_contour_loss(&one_px(0.5), &one_px(0.0), &one_px(0.0), &cfg).unwrap();
        let want = 0.25 * std::f64::consts::LN_2;
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.17329).abs() < 1e-4);
    }

    #[test]
    fn focal_loss_vanishes_on_exact_prediction() {
        let cfg = ContourLossConfig::default();
        let pred = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| {
            if (i + j) % 2 == 0 {
                1.0 - cfg.bce_clamp_eps
            } else {
                cfg.bce_clamp_eps
            }
        });
        let gt = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| {
            if (i + j) % 2 == 0 {
                1.0
            } else {
                0.0
            }
        });
        let hole = Array4::from_elem((1, 1, 2, 2), 1.0);
        let loss = focal_contour_loss(&pred, &gt, &hole, &cfg).unwrap();
        assert!(loss < 1e-10, "loss={loss}");
    }

    #[test]
    fn focal_loss_rejects_soft_ground_truth() {
        let cfg = ContourLossConfig::default();
        assert!(matches!(
            focal_contour_loss(&one_px(0.5), &one_px(0.3), &one_px(0.0), &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn lambda_scales_only_hole_pixels() {
        let pred = Array4::from_elem((1, 1, 4, 4), 0.3);
        let gt = Array4::from_elem((1, 1, 4, 4), 1.0);
        let hole1 = Array4::from_elem((1, 1, 4, 4), 1.0);
        let hole0 = Array4::from_elem((1, 1, 4, 4), 0.0);
        let cfg = ContourLossConfig::default();
        let lh = focal_contour_loss(&pred, &gt, &hole1, &cfg).unwrap();
        let lk = focal_contour_loss(&pred, &gt, &hole0, &cfg).unwrap();
        assert!((lh / lk - cfg.lambda).abs() < 1e-9);
    }

    #[test]
    fn content_loss_adds_both_stages() {
        let cfg = ContourLossConfig::default();
        let gt = one_px(1.0);
        let hole = one_px(0.0);
        let out = ContourGenOutput {
            coarse: one_px(0.4),
            refined: one_px(1.0), // clamps to 1-eps, focal term ~0
        };
        let total = contour_content_loss(&out, &gt, &hole, &cfg).unwrap();
        let coarse_only = focal_contour_loss(&out.coarse, &gt, &hole, &cfg).unwrap();
        assert!((total - coarse_only).abs() < 1e-10);
    }

    #[test]
    fn hinge_d_loss_values() {
        let z = Array4::from_elem((1, 1, 1, 1), 0.0f64);
        assert!((contour_d_loss(&z, &z) - 2.0).abs() < 1e-12);
        let r = Array4::from_elem((1, 1, 1, 1), 2.0f64);
        let f = Array4::from_elem((1, 1, 1, 1), -3.0f64);
        assert!(contour_d_loss(&r, &f).abs() < 1e-12);
        let r = Array4::from_elem((1, 1, 1, 1), -1.0f64);
        let f = Array4::from_elem((1, 1, 1, 1), 1.0f64);
        assert!((contour_d_loss(&r, &f) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn g_adv_loss_values() {
        let z = Array4::from_elem((1, 1, 2, 2), 0.0f64);
        assert!(contour_g_adv_loss(&z).abs() < 1e-12);
        let t = Array4::from_elem((1, 1, 2, 2), 3.0f64);
        assert!((contour_g_adv_loss(&t) + 3.0).abs() < 1e-12);
        let m = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0f64, -1.0, 2.0, -2.0]).unwrap();
        assert!(contour_g_adv_loss(&m).abs() < 1e-12);
    }
}
