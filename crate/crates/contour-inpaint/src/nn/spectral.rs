//! Spectral normalization with persistent power-iteration vectors.

use ndarray::{Array1, Array2, Array4, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::conv::{conv_backward, conv_forward, Conv2d, ConvCache, ConvGeom};
use super::gated::Act;
use super::param::Param;
use super::scalar::{sc, Scalar};
use crate::error::Result;

const SIGMA_FLOOR: f64 = 1e-12;

/// Persistent left/right singular-vector estimates for one weight matrix.
#[derive(Debug, Clone)]
pub struct SnState<S: Scalar> {
    pub u: Array1<S>, // [rows]
    pub v: Array1<S>, // [cols]
}

impl<S: Scalar> SnState<S> {
    pub fn new(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut u = Array1::from_shape_fn(rows, |_| {
            sc::<S>(super::conv::normal_sample(rng))
        });
        let mut v = Array1::from_shape_fn(cols, |_| {
            sc::<S>(super::conv::normal_sample(rng))
        });
        normalize(&mut u);
        normalize(&mut v);
        SnState { u, v }
    }
}

fn normalize<S: Scalar>(x: &mut Array1<S>) {
    let n = x.iter().fold(S::zero(), |a, &b| a + b * b).sqrt();
    let n = if n.to_f64() < SIGMA_FLOOR {
        sc::<S>(SIGMA_FLOOR)
    } else {
        n
    };
    x.mapv_inplace(|v| v / n);
}

/// One power-iteration step: v <- normalize(Wᵀu), u <- normalize(Wv).
pub fn power_iterate<S: Scalar>(w2: ArrayView2<S>, state: &mut SnState<S>) {
    let mut v = w2.t().dot(&state.u);
    normalize(&mut v);
    let mut u = w2.dot(&v);
    normalize(&mut u);
    state.v = v;
    state.u = u;
}

/// Current top-singular-value estimate uᵀWv, floored away from zero.
pub fn sigma_estimate<S: Scalar>(w2: ArrayView2<S>, state: &SnState<S>) -> S {
    let s = state.u.dot(&w2.dot(&state.v));
    if s.to_f64().abs() < SIGMA_FLOOR {
        sc::<S>(SIGMA_FLOOR)
    } else {
        s
    }
}

/// Spectral normalization as a single step: runs one power iteration on the
/// persistent vectors, then returns W / sigma and the sigma used.
pub fn spectral_normalize<S: Scalar>(
    w2: ArrayView2<S>,
    state: &mut SnState<S>,
) -> (Array2<S>, S) {
    power_iterate(w2, state);
    let s = sigma_estimate(w2, state);
    (w2.mapv(|x| x / s), s)
}

/// Spectrally normalized convolution. Power iterations are driven explicitly
/// (once per optimizer step) so every forward inside one step sees the same
/// normalized weights; forwards themselves are pure given (w, u, v).
#[derive(Debug, Clone)]
pub struct SnConv2d<S: Scalar> {
    pub conv: Conv2d<S>,
    pub sn: SnState<S>,
    pub act: Act,
}

pub struct SnConvCache<S: Scalar> {
    conv: ConvCache<S>,
    w_hat: Array2<S>,
    sigma: S,
    /// Activation output (derivatives are reconstructed from it).
    out: Array4<S>,
}

impl<S: Scalar> SnConv2d<S> {
    pub fn new(geom: ConvGeom, act: Act, rng: &mut ChaCha8Rng) -> Result<Self> {
        let conv = Conv2d::new(geom, rng);
        let sn = SnState::new(geom.cout, geom.rows(), rng);
        Ok(SnConv2d { conv, sn, act })
    }

    pub fn power_iterate(&mut self) {
        power_iterate(self.conv.w2(), &mut self.sn);
    }

    /// Normalized weight under the current (u, v) estimate.
    pub fn w_hat(&self) -> (Array2<S>, S) {
        let s = sigma_estimate(self.conv.w2(), &self.sn);
        (self.conv.w2().mapv(|x| x / s), s)
    }

    pub fn forward(&self, x: &Array4<S>) -> (Array4<S>, SnConvCache<S>) {
        let (w_hat, sigma) = self.w_hat();
        let bias = self
            .conv
            .b
            .value
            .view()
            .into_dimensionality()
            .expect("bias 1-d");
        let (pre, cols) = conv_forward(w_hat.view(), bias, x, &self.conv.geom);
        let y = pre.mapv(|v| self.act.apply(v));
        (
            y.clone(),
            SnConvCache {
                conv: ConvCache {
                    cols,
                    in_dims: x.dim(),
                },
                w_hat,
                sigma,
                out: y,
            },
        )
    }

    /// Accumulates parameter gradients (chained through W/sigma with u, v
    /// treated as constants), returns input gradient.
    pub fn backward(&mut self, cache: &SnConvCache<S>, dy: &Array4<S>) -> Array4<S> {
        let dpre = ndarray::Zip::from(dy)
            .and(&cache.out)
            .map_collect(|&d, &y| d * self.act.d_from_output(y));
        let out = conv_backward(
            cache.w_hat.view(),
            &cache.conv.cols,
            cache.conv.in_dims,
            &dpre,
            &self.conv.geom,
        );
        // dW = dWhat/sigma - (<dWhat, What>/sigma) u v^T
        let inner = (&out.dw2 * &cache.w_hat).sum() / cache.sigma;
        let geom = self.conv.geom;
        let mut wg = self
            .conv
            .w
            .grad
            .view_mut()
            .into_shape_with_order((geom.cout, geom.rows()))
            .expect("grad contiguous");
        for r in 0..geom.cout {
            let ur = self.sn.u[r];
            for c in 0..geom.rows() {
                wg[[r, c]] =
                    wg[[r, c]] + out.dw2[[r, c]] / cache.sigma - inner * ur * self.sn.v[c];
            }
        }
        let mut bg = self
            .conv
            .b
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias grad 1-d");
        bg += &out.db;
        out.dx
    }

    pub fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Param<S>),
    ) {
        f(format!("{prefix}.w"), &mut self.conv.w);
        f(format!("{prefix}.b"), &mut self.conv.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn diagonal_matrix_converges_to_unit_top_singular_value() {
        let w = ndarray::arr2(&[[3.0f64, 0.0], [0.0, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut st = SnState::new(2, 2, &mut rng);
        for _ in 0..50 {
            power_iterate(w.view(), &mut st);
        }
        let s = sigma_estimate(w.view(), &st);
        assert!((s - 3.0).abs() < 1e-6, "sigma={s}");
        let wn = w.mapv(|x| x / s);
        assert!((wn[[0, 0]] - 1.0).abs() < 1e-6);
        assert!((wn[[1, 1]] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn unit_sigma_matrix_is_fixed_point() {
        // orthogonal-ish: identity has sigma 1
        let w = ndarray::arr2(&[[1.0f64, 0.0], [0.0, 0.5]]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = SnState::new(2, 2, &mut rng);
        for _ in 0..100 {
            power_iterate(w.view(), &mut st);
        }
        let (wn, _) = spectral_normalize(w.view(), &mut st);
        let d = (&wn - &w).iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(d < 1e-6);
    }

    #[test]
    fn zero_matrix_sigma_floored() {
        let w = Array2::<f64>::zeros((3, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = SnState::new(3, 4, &mut rng);
        let (_, s) = spectral_normalize(w.view(), &mut st);
        assert!(s >= SIGMA_FLOOR);
    }
}
