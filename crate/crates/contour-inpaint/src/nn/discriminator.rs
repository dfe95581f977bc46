//! Fully convolutional patch discriminator: a cascade of spectrally
//! normalized stride-2 convolutions emitting a raw score map (hinge losses
//! operate on raw scores, so there is no output nonlinearity).

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::ConvGeom;
use super::gated::Act;
use super::param::Param;
use super::scalar::Scalar;
use super::spec::{parse_layer_specs, ConvSpec, LayerSpec};
use super::spectral::{SnConv2d, SnConvCache, SnState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub width_mult: f64,
    pub layers: Vec<String>,
}

impl DiscriminatorConfig {
    /// Four stride-2 spectral-norm convs; a 64x64 input yields a 4x4 map.
    pub fn default_for(in_channels: usize, width_mult: f64) -> Self {
        DiscriminatorConfig {
            in_channels,
            width_mult,
            layers: vec![
                "K5S2C64+lrelu".into(),
                "K5S2C128+lrelu".into(),
                "K5S2C256+lrelu".into(),
                "K5S2C1+linear".into(),
            ],
        }
    }
}

pub struct PatchDiscriminator<S: Scalar> {
    pub cfg: DiscriminatorConfig,
    pub layers: Vec<SnConv2d<S>>,
}

impl<S: Scalar> PatchDiscriminator<S> {
    pub fn new(cfg: DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let specs = parse_layer_specs(&cfg.layers)?;
        let mut layers = Vec::with_capacity(specs.len());
        let mut cin = cfg.in_channels;
        for (i, spec) in specs.iter().enumerate() {
            let LayerSpec::Conv(ConvSpec { k, d, s, c, act }) = spec else {
                return Err(Error::Config(
                    "discriminator accepts conv specs only".into(),
                ));
            };
            let last = i + 1 == specs.len();
            // final score layer keeps its literal channel count
            let cout = if last {
                *c
            } else {
                ((*c as f64 * cfg.width_mult).round() as usize).max(1)
            };
            let geom = ConvGeom::new(cin, cout, *k, *s, *d)?;
            layers.push(SnConv2d::new(geom, act.unwrap_or(Act::LeakyRelu), rng)?);
            cin = cout;
        }
        Ok(PatchDiscriminator { cfg, layers })
    }

    /// One power-iteration step on every layer; call once per optimizer step
    /// so all forwards within the step share the same normalized weights.
    pub fn power_iterate(&mut self) {
        for l in &mut self.layers {
            l.power_iterate();
        }
    }

    pub fn forward(&self, x: &Array4<S>) -> (Array4<S>, Vec<SnConvCache<S>>) {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (y, c) = l.forward(&cur);
            caches.push(c);
            cur = y;
        }
        (cur, caches)
    }

    /// Accumulates parameter gradients; returns input gradient (needed by the
    /// generator's adversarial term).
    pub fn backward(&mut self, caches: &[SnConvCache<S>], dscore: &Array4<S>) -> Array4<S> {
        let mut cur = dscore.clone();
        for (l, c) in self.layers.iter_mut().zip(caches.iter()).rev() {
            cur = l.backward(c, &cur);
        }
        cur
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<S>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&format!("{prefix}.{i}"), f);
        }
    }

    pub fn visit_sn_states(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut SnState<S>),
    ) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(format!("{prefix}.{i}"), &mut l.sn);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn score_map_shape_64_to_4() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = PatchDiscriminator::<f32>::new(
            DiscriminatorConfig::default_for(4, 0.25),
            &mut rng,
        )
        .unwrap();
        let x = Array4::<f32>::zeros((2, 4, 64, 64));
        let (s, _) = d.forward(&x);
        assert_eq!(s.dim(), (2, 1, 4, 4));
    }

    #[test]
    fn deterministic_given_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = PatchDiscriminator::<f32>::new(
            DiscriminatorConfig::default_for(4, 0.25),
            &mut rng,
        )
        .unwrap();
        let x = Array4::from_shape_fn((1, 4, 32, 32), |(_, c, i, j)| {
            ((c * 5 + i * 3 + j) % 11) as f32 * 0.07
        });
        let (a, _) = d.forward(&x);
        let (b, _) = d.forward(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn conditioning_channel_changes_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = PatchDiscriminator::<f32>::new(
            DiscriminatorConfig::default_for(4, 0.25),
            &mut rng,
        )
        .unwrap();
        let x = Array4::from_shape_fn((1, 4, 32, 32), |(_, c, i, j)| {
            ((c + i + j) % 5) as f32 * 0.2
        });
        let mut x2 = x.clone();
        for v in x2.slice_mut(ndarray::s![.., 0..3, .., ..]) {
            *v += 0.5;
        }
        let (a, _) = d.forward(&x);
        let (b, _) = d.forward(&x2);
        assert_ne!(a, b);
    }
}
