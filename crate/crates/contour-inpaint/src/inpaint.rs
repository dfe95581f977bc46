//! Image completion: coarse-to-refine generator conditioned on the completed
//! contour at both stages, L1 content loss, hinge adversarial loss on the
//! refined (composited) output only.

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;

use crate::contour::{g_adv_loss_grad, hinge_d_loss_grad};
use crate::error::{Error, Result};
use crate::nn::discriminator::DiscriminatorConfig;
use crate::nn::generator::{GeneratorConfig, LayerCache, RefineCache};
use crate::nn::{concat_channels, slice_channels, InpaintGenerator, Param, PatchDiscriminator, Scalar};

/// Coarse and refined outputs mapped to [0,1] (the tanh heads live in
/// [-1,1]; everything downstream works in image space).
pub struct ImageGenOutput<S: Scalar> {
    pub coarse: Array4<S>,
    pub refined: Array4<S>,
}

/// Paste generated pixels into holes, pass known pixels through exactly.
pub fn composite<S: Scalar>(
    output: &Array4<S>,
    image_in: &Array4<S>,
    hole: &Array4<S>,
) -> Array4<S> {
    let (b, c, h, w) = output.dim();
    assert_eq!(image_in.dim(), (b, c, h, w), "composite shape mismatch");
    assert_eq!(hole.dim(), (b, 1, h, w), "hole must be single-channel");
    let mut out = Array4::<S>::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let hm = hole[[bi, 0, i, j]];
                    out[[bi, ci, i, j]] = if hm > S::zero() {
                        output[[bi, ci, i, j]]
                    } else {
                        image_in[[bi, ci, i, j]]
                    };
                }
            }
        }
    }
    out
}

/// Mean absolute error of both stages against ground truth:
/// (sum|coarse - gt| + sum|refined - gt|) / element count.
pub fn image_content_loss<S: Scalar>(out: &ImageGenOutput<S>, gt: &Array4<S>) -> Result<S> {
    Ok(image_content_loss_grad(out, gt)?.0)
}

pub fn image_content_loss_grad<S: Scalar>(
    out: &ImageGenOutput<S>,
    gt: &Array4<S>,
) -> Result<(S, Array4<S>, Array4<S>)> {
    if out.coarse.dim() != gt.dim() || out.refined.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "content loss: {:?}/{:?} vs {:?}",
            out.coarse.dim(),
            out.refined.dim(),
            gt.dim()
        )));
    }
    let n = S::from_f64(gt.len() as f64);
    let mut loss = S::zero();
    let mut dc = Array4::<S>::zeros(gt.dim());
    let mut dr = Array4::<S>::zeros(gt.dim());
    ndarray::Zip::from(&out.coarse)
        .and(gt)
        .and(&mut dc)
        .for_each(|&c, &g, d| {
            let diff = c - g;
            loss = loss + diff.abs();
            *d = sign(diff) / n;
        });
    ndarray::Zip::from(&out.refined)
        .and(gt)
        .and(&mut dr)
        .for_each(|&r, &g, d| {
            let diff = r - g;
            loss = loss + diff.abs();
            *d = sign(diff) / n;
        });
    Ok((loss / n, dc, dr))
}

fn sign<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Hinge discriminator loss and generator adversarial loss, shared with the
/// contour module.
pub fn image_adv_losses<S: Scalar>(d_real: &Array4<S>, d_fake: &Array4<S>) -> (S, S) {
    let (d_loss, _, _) = hinge_d_loss_grad(d_real, d_fake);
    let (g_loss, _) = g_adv_loss_grad(d_fake);
    (d_loss, g_loss)
}

/// Generator + hole-conditioned discriminator for image completion.
/// `guided` models take the completed contour as an extra input channel in
/// both stages; unguided models (and the pretraining phase) take only the
/// masked image and the hole mask.
pub struct ImageModel<S: Scalar> {
    pub gen: InpaintGenerator<S>,
    pub disc: PatchDiscriminator<S>,
    pub guided: bool,
}

pub struct ImageFwdCache<S: Scalar> {
    coarse: Vec<LayerCache<S>>,
    refine: RefineCache<S>,
    hole: Array4<S>,
    guided: bool,
}

/// Gradients flowing out of `ImageModel::backward`.
pub struct ImageBackward<S: Scalar> {
    /// Gradient w.r.t. the conditioning contour (guided models only);
    /// content path only, per the stop-gradient contract.
    pub d_contour: Option<Array4<S>>,
}

impl<S: Scalar> ImageModel<S> {
    pub fn new(width_mult: f64, guided: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let gen = InpaintGenerator::new(GeneratorConfig::image(width_mult, guided), rng)?;
        // condition: 3 image channels + 1 hole channel
        let disc = PatchDiscriminator::new(DiscriminatorConfig::default_for(4, width_mult), rng)?;
        Ok(ImageModel { gen, disc, guided })
    }

    /// Coarse stage consumes (image_in, [contour], hole); refine stage
    /// consumes (hole-composited coarse, [contour], hole).
    pub fn forward(
        &self,
        image_in: &Array4<S>,
        contour: Option<&Array4<S>>,
        hole: &Array4<S>,
    ) -> Result<(ImageGenOutput<S>, ImageFwdCache<S>)> {
        if self.guided != contour.is_some() {
            return Err(Error::Contract(format!(
                "model guided={} but contour given={}",
                self.guided,
                contour.is_some()
            )));
        }
        let x0 = match contour {
            Some(c) => concat_channels(&[image_in, c, hole]),
            None => concat_channels(&[image_in, hole]),
        };
        let (coarse_tanh, coarse_cache) = self.gen.forward_coarse(&x0)?;
        let coarse = to_unit(&coarse_tanh);
        let composited = composite(&coarse, image_in, hole);
        let refine_in = match contour {
            Some(c) => concat_channels(&[&composited, c, hole]),
            None => concat_channels(&[&composited, hole]),
        };
        let (refined_tanh, refine_cache) = self.gen.forward_refine(&refine_in, hole)?;
        let refined = to_unit(&refined_tanh);
        Ok((
            ImageGenOutput { coarse, refined },
            ImageFwdCache {
                coarse: coarse_cache,
                refine: refine_cache,
                hole: hole.clone(),
                guided: self.guided,
            },
        ))
    }

    /// Backpropagate generator losses expressed in [0,1] space.
    /// Content gradients on the refined output flow through the refine stage
    /// into the coarse stage (via the hole-composited channels); the
    /// adversarial gradient stops at the refine input.
    pub fn backward(
        &mut self,
        cache: &ImageFwdCache<S>,
        d_coarse_content: &Array4<S>,
        d_refined_content: &Array4<S>,
        d_refined_adv: Option<&Array4<S>>,
    ) -> ImageBackward<S> {
        let half = S::from_f64(0.5);
        // chain through the [-1,1] -> [0,1] affine map
        let d_ref_tanh = d_refined_content.mapv(|v| v * half);
        let drin = self.gen.backward_refine(&cache.refine, &d_ref_tanh);
        if let Some(dadv) = d_refined_adv {
            let d_adv_tanh = dadv.mapv(|v| v * half);
            let _ = self.gen.backward_refine(&cache.refine, &d_adv_tanh);
        }
        let d_composited = slice_channels(&drin, 0, 3);
        let mut d_contour = if cache.guided {
            Some(slice_channels(&drin, 3, 4))
        } else {
            None
        };

        // composite passes gradient to the coarse output only inside holes
        let (b, c, h, w) = d_composited.dim();
        let mut d_coarse = d_coarse_content.clone();
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        if cache.hole[[bi, 0, i, j]] > S::zero() {
                            d_coarse[[bi, ci, i, j]] =
                                d_coarse[[bi, ci, i, j]] + d_composited[[bi, ci, i, j]];
                        }
                    }
                }
            }
        }
        let d_coarse_tanh = d_coarse.mapv(|v| v * half);
        let dx0 = self.gen.backward_coarse(&cache.coarse, &d_coarse_tanh);
        if cache.guided {
            let dc0 = slice_channels(&dx0, 3, 4);
            if let Some(dc) = d_contour.as_mut() {
                *dc += &dc0;
            }
        }
        ImageBackward { d_contour }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(String, &mut Param<S>)) {
        self.gen.visit_params("gen", f);
        self.disc.visit_params("disc", f);
    }
}

fn to_unit<S: Scalar>(tanh_out: &Array4<S>) -> Array4<S> {
    let half = S::from_f64(0.5);
    tanh_out.mapv(|v| (v + S::one()) * half)
}
