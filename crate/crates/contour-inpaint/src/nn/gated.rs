//! Gated convolution: two convolution branches fused into one GEMM,
//! output = act(feature half) * sigmoid(gate half).

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;

use super::conv::{Conv2d, ConvCache, ConvGeom};
use super::scalar::{sc, Scalar};
use crate::error::Result;

/// Pointwise activation used inside blocks and on network heads. All
/// variants allow computing the derivative from the activation output alone,
/// which keeps backward passes free of transcendental calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Act {
    Elu,
    Sigmoid,
    Tanh,
    LeakyRelu,
    Linear,
}

impl Act {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Act::Elu => {
                if x > S::zero() {
                    x
                } else {
                    x.exp() - S::one()
                }
            }
            Act::Sigmoid => sigmoid(x),
            Act::Tanh => x.tanh(),
            Act::LeakyRelu => {
                if x > S::zero() {
                    x
                } else {
                    x * sc::<S>(0.2)
                }
            }
            Act::Linear => x,
        }
    }

    /// Derivative at pre-activation x.
    pub fn d<S: Scalar>(self, x: S) -> S {
        match self {
            Act::Elu => {
                if x > S::zero() {
                    S::one()
                } else {
                    x.exp()
                }
            }
            Act::Sigmoid => {
                let s = sigmoid(x);
                s * (S::one() - s)
            }
            Act::Tanh => {
                let t = x.tanh();
                S::one() - t * t
            }
            Act::LeakyRelu => {
                if x > S::zero() {
                    S::one()
                } else {
                    sc::<S>(0.2)
                }
            }
            Act::Linear => S::one(),
        }
    }

    /// Derivative expressed through the activation output y = act(x).
    pub fn d_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            // for x <= 0: y = exp(x) - 1, so act' = exp(x) = y + 1
            Act::Elu => {
                if y > S::zero() {
                    S::one()
                } else {
                    y + S::one()
                }
            }
            Act::Sigmoid => y * (S::one() - y),
            Act::Tanh => S::one() - y * y,
            Act::LeakyRelu => {
                if y > S::zero() {
                    S::one()
                } else {
                    sc::<S>(0.2)
                }
            }
            Act::Linear => S::one(),
        }
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct GatedConv2d<S: Scalar> {
    /// Underlying conv produces 2*cout channels: [feature | gate].
    pub conv: Conv2d<S>,
    pub act: Act,
    pub cout: usize,
}

pub struct GatedCache<S: Scalar> {
    conv: ConvCache<S>,
    /// act(feature branch), [B, cout, H, W].
    act_f: Array4<S>,
    /// sigmoid(gate branch), [B, cout, H, W].
    sig_g: Array4<S>,
}

impl<S: Scalar> GatedConv2d<S> {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        act: Act,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let geom = ConvGeom::new(cin, 2 * cout, k, stride, dilation)?;
        Ok(GatedConv2d {
            conv: Conv2d::new(geom, rng),
            act,
            cout,
        })
    }

    pub fn forward(&self, x: &Array4<S>) -> (Array4<S>, GatedCache<S>) {
        let (pre, conv_cache) = self.conv.forward(x);
        let (b, _, h, w) = pre.dim();
        let plane = h * w;
        let cout = self.cout;
        let mut y = Array4::<S>::zeros((b, cout, h, w));
        let mut act_f = Array4::<S>::zeros((b, cout, h, w));
        let mut sig_g = Array4::<S>::zeros((b, cout, h, w));
        {
            let ps = pre.as_slice().expect("pre contiguous");
            let ys = y.as_slice_mut().expect("y contiguous");
            let fs = act_f.as_slice_mut().expect("act_f contiguous");
            let gs = sig_g.as_slice_mut().expect("sig_g contiguous");
            for bi in 0..b {
                for c in 0..cout {
                    let feat = &ps[((bi * 2 * cout) + c) * plane..][..plane];
                    let gate = &ps[((bi * 2 * cout) + cout + c) * plane..][..plane];
                    let base = ((bi * cout) + c) * plane;
                    for i in 0..plane {
                        let a = self.act.apply(feat[i]);
                        let s = sigmoid(gate[i]);
                        fs[base + i] = a;
                        gs[base + i] = s;
                        ys[base + i] = a * s;
                    }
                }
            }
        }
        (
            y,
            GatedCache {
                conv: conv_cache,
                act_f,
                sig_g,
            },
        )
    }

    pub fn backward(&mut self, cache: &GatedCache<S>, dy: &Array4<S>) -> Array4<S> {
        let (b, cout, h, w) = cache.act_f.dim();
        let plane = h * w;
        let mut dpre = Array4::<S>::zeros((b, 2 * cout, h, w));
        {
            let fs = cache.act_f.as_slice().expect("act_f contiguous");
            let gs = cache.sig_g.as_slice().expect("sig_g contiguous");
            let dys = dy.as_slice().expect("dy contiguous");
            let dp = dpre.as_slice_mut().expect("dpre contiguous");
            for bi in 0..b {
                for c in 0..cout {
                    let base = ((bi * cout) + c) * plane;
                    let df_base = ((bi * 2 * cout) + c) * plane;
                    let dg_base = ((bi * 2 * cout) + cout + c) * plane;
                    for i in 0..plane {
                        let a = fs[base + i];
                        let s = gs[base + i];
                        let d = dys[base + i];
                        dp[df_base + i] = d * s * self.act.d_from_output(a);
                        dp[dg_base + i] = d * a * s * (S::one() - s);
                    }
                }
            }
        }
        self.conv.backward(&cache.conv, &dpre)
    }
}
