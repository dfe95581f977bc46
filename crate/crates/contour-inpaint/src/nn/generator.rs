//! Coarse-to-refine generator used by both completion modules. The coarse
//! stage is a gated-conv encoder/decoder with dilated bottleneck layers; the
//! refinement stage has two encoder branches (the second with contextual
//! attention) whose features are concatenated into a shared decoder.

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttnCache, ContextualAttention};
use super::conv::{Conv2d, ConvCache, ConvGeom};
use super::gated::{Act, GatedConv2d};
use super::param::Param;
use super::scalar::{sc, Scalar};
use super::spec::{parse_layer_specs, ConvSpec, LayerSpec};
use super::{upsample2, upsample2_backward};
use crate::error::{Error, Result};

/// Topology of one generator, as layer-spec token lists (pre-multiplier
/// channel widths). Heads carry their own activation suffix and are not
/// scaled by the width multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub coarse_in: usize,
    pub refine_in: usize,
    pub width_mult: f64,
    pub coarse: Vec<String>,
    pub refine_branch1: Vec<String>,
    pub refine_branch2: Vec<String>,
    pub refine_decoder: Vec<String>,
    pub softmax_scale: f64,
    pub attention_patch: usize,
}

impl GeneratorConfig {
    /// Contour completion generator: coarse input is (image, contour, hole),
    /// refine input is (coarse contour, hole); single sigmoid channel out.
    pub fn contour(width_mult: f64) -> Self {
        GeneratorConfig {
            coarse_in: 5,
            refine_in: 2,
            width_mult,
            coarse: default_coarse("K3S1C1+sigmoid"),
            refine_branch1: default_branch1(),
            refine_branch2: default_branch2(),
            refine_decoder: default_decoder("K3S1C1+sigmoid"),
            softmax_scale: 10.0,
            attention_patch: 3,
        }
    }

    /// Image completion generator; `guided` adds the contour channel to both
    /// stages. Tanh heads, three channels out.
    pub fn image(width_mult: f64, guided: bool) -> Self {
        let extra = usize::from(guided);
        GeneratorConfig {
            coarse_in: 4 + extra,
            refine_in: 4 + extra,
            width_mult,
            coarse: default_coarse("K3S1C3+tanh"),
            refine_branch1: default_branch1(),
            refine_branch2: default_branch2(),
            refine_decoder: default_decoder("K3S1C3+tanh"),
            softmax_scale: 10.0,
            attention_patch: 3,
        }
    }
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn default_coarse(head: &str) -> Vec<String> {
    let mut v = strs(&[
        "K5S1C48", "K3S2C96", "K3S1C96", "K3S2C192", "K3S1C192", "K3S1C192", "K3D2S1C192",
        "K3D4S1C192", "K3D8S1C192", "K3D16S1C192", "K3S1C192", "K3S1C192", "resize", "K3S1C96",
        "K3S1C96", "resize", "K3S1C48", "K3S1C24",
    ]);
    v.push(head.to_string());
    v
}

fn default_branch1() -> Vec<String> {
    strs(&[
        "K5S1C48", "K3S2C96", "K3S1C96", "K3S2C192", "K3S1C192", "K3S1C192", "K3D2S1C192",
        "K3D4S1C192",
    ])
}

fn default_branch2() -> Vec<String> {
    strs(&[
        "K5S1C48", "K3S2C96", "K3S1C96", "K3S2C192", "K3S1C192", "K3S1C192", "attention",
        "K3S1C192", "K3S1C192",
    ])
}

fn default_decoder(head: &str) -> Vec<String> {
    let mut v = strs(&[
        "K3S1C192", "K3S1C192", "resize", "K3S1C96", "K3S1C96", "resize", "K3S1C48", "K3S1C24",
    ]);
    v.push(head.to_string());
    v
}

pub enum StackLayer<S: Scalar> {
    Gated(GatedConv2d<S>),
    Plain(Conv2d<S>, Act),
    Resize,
    Attention(ContextualAttention<S>),
}

pub enum LayerCache<S: Scalar> {
    Gated(super::gated::GatedCache<S>),
    /// Conv cache plus the activation output.
    Plain(ConvCache<S>, Array4<S>),
    Resize,
    Attention(AttnCache<S>),
}

/// A sequential stack built from layer specs.
pub struct LayerStack<S: Scalar> {
    pub layers: Vec<StackLayer<S>>,
    pub out_channels: usize,
    /// Downsampling factor of the stack output relative to the network input.
    pub out_scale: usize,
}

fn scaled(c: usize, mult: f64) -> usize {
    ((c as f64 * mult).round() as usize).max(1)
}

impl<S: Scalar> LayerStack<S> {
    /// `input_scale` is the cumulative downsampling factor of this stack's
    /// input relative to full resolution (the refine decoder starts at the
    /// branch bottleneck scale, not at 1).
    pub fn build(
        tokens: &[String],
        in_channels: usize,
        input_scale: usize,
        width_mult: f64,
        softmax_scale: f64,
        attention_patch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let specs = parse_layer_specs(tokens)?;
        let mut layers = Vec::with_capacity(specs.len());
        let mut cin = in_channels;
        let mut scale = input_scale;
        for spec in &specs {
            match spec {
                LayerSpec::Conv(ConvSpec { k, d, s, c, act }) => {
                    if *s == 2 {
                        scale *= 2;
                    }
                    match act {
                        None => {
                            let cout = scaled(*c, width_mult);
                            layers.push(StackLayer::Gated(GatedConv2d::new(
                                cin,
                                cout,
                                *k,
                                *s,
                                *d,
                                Act::Elu,
                                rng,
                            )?));
                            cin = cout;
                        }
                        Some(a) => {
                            let geom = ConvGeom::new(cin, *c, *k, *s, *d)?;
                            layers.push(StackLayer::Plain(Conv2d::new(geom, rng), *a));
                            cin = *c;
                        }
                    }
                }
                LayerSpec::Resize => {
                    if scale == 1 {
                        return Err(Error::Config(
                            "resize would upsample beyond input resolution".into(),
                        ));
                    }
                    scale /= 2;
                    layers.push(StackLayer::Resize);
                }
                LayerSpec::Attention => {
                    layers.push(StackLayer::Attention(ContextualAttention::new(
                        attention_patch,
                        sc::<S>(softmax_scale),
                        scale,
                    )));
                }
            }
        }
        Ok(LayerStack {
            layers,
            out_channels: cin,
            out_scale: scale,
        })
    }

    /// `hole` (full input resolution, [B,1,H,W]) is required iff the stack
    /// contains an attention layer.
    pub fn forward(
        &self,
        x: &Array4<S>,
        hole: Option<&Array4<S>>,
    ) -> Result<(Array4<S>, Vec<LayerCache<S>>)> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                StackLayer::Gated(gc) => {
                    let (y, cache) = gc.forward(&cur);
                    caches.push(LayerCache::Gated(cache));
                    cur = y;
                }
                StackLayer::Plain(conv, act) => {
                    let (pre, cache) = conv.forward(&cur);
                    let y = pre.mapv(|v| act.apply(v));
                    caches.push(LayerCache::Plain(cache, y.clone()));
                    cur = y;
                }
                StackLayer::Resize => {
                    cur = upsample2(&cur);
                    caches.push(LayerCache::Resize);
                }
                StackLayer::Attention(attn) => {
                    let hole = hole.ok_or_else(|| {
                        Error::Contract("attention stack requires a hole mask".into())
                    })?;
                    let (_, _, fh, fw) = cur.dim();
                    let masks = attn.pool_masks(hole, fh, fw);
                    let (y, cache) = attn.forward(&cur, &masks)?;
                    caches.push(LayerCache::Attention(cache));
                    cur = y;
                }
            }
        }
        Ok((cur, caches))
    }

    pub fn backward(&mut self, caches: &[LayerCache<S>], dy: &Array4<S>) -> Array4<S> {
        let mut cur = dy.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches.iter()).rev() {
            cur = match (layer, cache) {
                (StackLayer::Gated(gc), LayerCache::Gated(c)) => gc.backward(c, &cur),
                (StackLayer::Plain(conv, act), LayerCache::Plain(c, out)) => {
                    let dpre = ndarray::Zip::from(&cur)
                        .and(out)
                        .map_collect(|&d, &y| d * act.d_from_output(y));
                    conv.backward(c, &dpre)
                }
                (StackLayer::Resize, LayerCache::Resize) => upsample2_backward(&cur),
                (StackLayer::Attention(attn), LayerCache::Attention(c)) => {
                    attn.backward(c, &cur)
                }
                _ => unreachable!("cache kind mismatch"),
            };
        }
        cur
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<S>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                StackLayer::Gated(gc) => {
                    f(format!("{prefix}.{i}.w"), &mut gc.conv.w);
                    f(format!("{prefix}.{i}.b"), &mut gc.conv.b);
                }
                StackLayer::Plain(conv, _) => {
                    f(format!("{prefix}.{i}.w"), &mut conv.w);
                    f(format!("{prefix}.{i}.b"), &mut conv.b);
                }
                StackLayer::Resize | StackLayer::Attention(_) => {}
            }
        }
    }

    /// Replace the first convolution with a freshly initialized one taking
    /// `new_in` channels (used when fine-tuning adds input channels).
    pub fn reinit_first_layer(&mut self, new_in: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        match self.layers.first_mut() {
            Some(StackLayer::Gated(gc)) => {
                let g = gc.conv.geom;
                let cout = gc.cout;
                *gc = GatedConv2d::new(
                    new_in,
                    cout,
                    g.k,
                    g.stride,
                    g.dilation,
                    gc.act,
                    rng,
                )?;
                Ok(())
            }
            Some(StackLayer::Plain(conv, _)) => {
                let g = conv.geom;
                let geom = ConvGeom::new(new_in, g.cout, g.k, g.stride, g.dilation)?;
                *conv = Conv2d::new(geom, rng);
                Ok(())
            }
            _ => Err(Error::Contract(
                "stack does not start with a convolution".into(),
            )),
        }
    }

    pub fn first_layer_in_channels(&self) -> usize {
        match self.layers.first() {
            Some(StackLayer::Gated(gc)) => gc.conv.geom.cin,
            Some(StackLayer::Plain(conv, _)) => conv.geom.cin,
            _ => 0,
        }
    }
}

pub struct RefineCache<S: Scalar> {
    pub b1: Vec<LayerCache<S>>,
    pub b2: Vec<LayerCache<S>>,
    pub dec: Vec<LayerCache<S>>,
    pub split: usize,
}

/// Coarse + two-branch refine generator.
pub struct InpaintGenerator<S: Scalar> {
    pub cfg: GeneratorConfig,
    pub coarse: LayerStack<S>,
    pub refine_b1: LayerStack<S>,
    pub refine_b2: LayerStack<S>,
    pub refine_dec: LayerStack<S>,
}

impl<S: Scalar> InpaintGenerator<S> {
    pub fn new(cfg: GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let coarse = LayerStack::build(
            &cfg.coarse,
            cfg.coarse_in,
            1,
            cfg.width_mult,
            cfg.softmax_scale,
            cfg.attention_patch,
            rng,
        )?;
        let refine_b1 = LayerStack::build(
            &cfg.refine_branch1,
            cfg.refine_in,
            1,
            cfg.width_mult,
            cfg.softmax_scale,
            cfg.attention_patch,
            rng,
        )?;
        let refine_b2 = LayerStack::build(
            &cfg.refine_branch2,
            cfg.refine_in,
            1,
            cfg.width_mult,
            cfg.softmax_scale,
            cfg.attention_patch,
            rng,
        )?;
        if refine_b1.out_scale != refine_b2.out_scale {
            return Err(Error::Config(
                "refine branches must end at the same scale".into(),
            ));
        }
        let refine_dec = LayerStack::build(
            &cfg.refine_decoder,
            refine_b1.out_channels + refine_b2.out_channels,
            refine_b1.out_scale,
            cfg.width_mult,
            cfg.softmax_scale,
            cfg.attention_patch,
            rng,
        )?;
        Ok(InpaintGenerator {
            cfg,
            coarse,
            refine_b1,
            refine_b2,
            refine_dec,
        })
    }

    pub fn forward_coarse(&self, x: &Array4<S>) -> Result<(Array4<S>, Vec<LayerCache<S>>)> {
        self.coarse.forward(x, None)
    }

    pub fn forward_refine(
        &self,
        x: &Array4<S>,
        hole: &Array4<S>,
    ) -> Result<(Array4<S>, RefineCache<S>)> {
        let (y1, b1) = self.refine_b1.forward(x, Some(hole))?;
        let (y2, b2) = self.refine_b2.forward(x, Some(hole))?;
        let cat = super::concat_channels(&[&y1, &y2]);
        let (y, dec) = self.refine_dec.forward(&cat, Some(hole))?;
        Ok((
            y,
            RefineCache {
                b1,
                b2,
                dec,
                split: self.refine_b1.out_channels,
            },
        ))
    }

    pub fn backward_coarse(&mut self, caches: &[LayerCache<S>], dy: &Array4<S>) -> Array4<S> {
        self.coarse.backward(caches, dy)
    }

    /// Returns the gradient w.r.t. the refine input (sum over both branches).
    pub fn backward_refine(&mut self, cache: &RefineCache<S>, dy: &Array4<S>) -> Array4<S> {
        let dcat = self.refine_dec.backward(&cache.dec, dy);
        let (_, c, _, _) = dcat.dim();
        let d1 = super::slice_channels(&dcat, 0, cache.split);
        let d2 = super::slice_channels(&dcat, cache.split, c);
        let dx1 = self.refine_b1.backward(&cache.b1, &d1);
        let dx2 = self.refine_b2.backward(&cache.b2, &d2);
        dx1 + dx2
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<S>)) {
        self.coarse.visit_params(&format!("{prefix}.coarse"), f);
        self.refine_b1.visit_params(&format!("{prefix}.refine_b1"), f);
        self.refine_b2.visit_params(&format!("{prefix}.refine_b2"), f);
        self.refine_dec.visit_params(&format!("{prefix}.refine_dec"), f);
    }

    /// Re-initialize the first layer of every encoder that reads network
    /// input, switching to `new_in` channels; everything else is untouched.
    pub fn reinit_input_layers(
        &mut self,
        coarse_in: usize,
        refine_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        self.coarse.reinit_first_layer(coarse_in, rng)?;
        self.refine_b1.reinit_first_layer(refine_in, rng)?;
        self.refine_b2.reinit_first_layer(refine_in, rng)?;
        self.cfg.coarse_in = coarse_in;
        self.cfg.refine_in = refine_in;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn contour_generator_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gen = InpaintGenerator::<f32>::new(GeneratorConfig::contour(0.125), &mut rng).unwrap();
        let x = Array4::<f32>::zeros((1, 5, 32, 32));
        let (c, _) = gen.forward_coarse(&x).unwrap();
        assert_eq!(c.dim(), (1, 1, 32, 32));
        let hole = Array4::<f32>::zeros((1, 1, 32, 32));
        let rin = super::super::concat_channels(&[&c, &hole]);
        let (r, _) = gen.forward_refine(&rin, &hole).unwrap();
        assert_eq!(r.dim(), (1, 1, 32, 32));
    }

    #[test]
    fn sigmoid_head_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gen = InpaintGenerator::<f32>::new(GeneratorConfig::contour(0.125), &mut rng).unwrap();
        let x = Array4::from_shape_fn((1, 5, 32, 32), |(_, c, i, j)| {
            ((c + i + j) % 7) as f32 * 0.3 - 0.9
        });
        let (y, _) = gen.forward_coarse(&x).unwrap();
        for v in y.iter() {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn eval_repeatability() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gen = InpaintGenerator::<f32>::new(GeneratorConfig::contour(0.125), &mut rng).unwrap();
        let x = Array4::from_shape_fn((1, 5, 32, 32), |(_, c, i, j)| {
            ((c * 31 + i * 7 + j) % 13) as f32 * 0.1
        });
        let (a, _) = gen.forward_coarse(&x).unwrap();
        let (b, _) = gen.forward_coarse(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn width_multiplier_rounds_up_to_one() {
        assert_eq!(scaled(48, 0.25), 12);
        assert_eq!(scaled(24, 0.25), 6);
        assert_eq!(scaled(3, 0.01), 1);
    }
}
