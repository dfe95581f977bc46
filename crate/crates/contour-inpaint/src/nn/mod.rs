//! Differentiable building blocks: convolution variants, contextual
//! attention, spectral normalization, the coarse/refine generator and the
//! patch discriminator. Everything is generic over [`Scalar`] so the same
//! code runs in f32 for training and f64 for gradient checks.

pub mod attention;
pub mod conv;
pub mod discriminator;
pub mod gated;
pub mod generator;
pub mod param;
pub mod scalar;
pub mod spec;
pub mod spectral;

pub use attention::ContextualAttention;
pub use conv::{Conv2d, ConvGeom};
pub use discriminator::PatchDiscriminator;
pub use gated::{Act, GatedConv2d};
pub use generator::InpaintGenerator;
pub use param::{Param, VisitParams};
pub use scalar::Scalar;
pub use spectral::{spectral_normalize, SnConv2d, SnState};

use ndarray::{Array4, Axis};

/// Concatenate along the channel axis (result in standard layout).
pub fn concat_channels<S: Scalar>(parts: &[&Array4<S>]) -> Array4<S> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let cat = ndarray::concatenate(Axis(1), &views).expect("channel concat shapes agree");
    if cat.is_standard_layout() {
        cat
    } else {
        Array4::from_shape_vec(cat.dim(), cat.iter().cloned().collect())
            .expect("shape preserved")
    }
}

/// Slice a channel range out of [B,C,H,W].
pub fn slice_channels<S: Scalar>(x: &Array4<S>, from: usize, to: usize) -> Array4<S> {
    x.slice(ndarray::s![.., from..to, .., ..]).to_owned()
}

/// Nearest-neighbor 2x upsample.
pub fn upsample2<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let (b, c, h, w) = x.dim();
    let mut y = Array4::<S>::zeros((b, c, h * 2, w * 2));
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = x[[bi, ci, i, j]];
                    y[[bi, ci, 2 * i, 2 * j]] = v;
                    y[[bi, ci, 2 * i, 2 * j + 1]] = v;
                    y[[bi, ci, 2 * i + 1, 2 * j]] = v;
                    y[[bi, ci, 2 * i + 1, 2 * j + 1]] = v;
                }
            }
        }
    }
    y
}

/// Adjoint of [`upsample2`]: sum gradients of each 2x2 block.
pub fn upsample2_backward<S: Scalar>(dy: &Array4<S>) -> Array4<S> {
    let (b, c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::<S>::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    dx[[bi, ci, i, j]] = dy[[bi, ci, 2 * i, 2 * j]]
                        + dy[[bi, ci, 2 * i, 2 * j + 1]]
                        + dy[[bi, ci, 2 * i + 1, 2 * j]]
                        + dy[[bi, ci, 2 * i + 1, 2 * j + 1]];
                }
            }
        }
    }
    dx
}

/// All elements finite?
pub fn all_finite<S: Scalar>(x: &Array4<S>) -> bool {
    x.iter().all(|v| v.is_finite())
}
