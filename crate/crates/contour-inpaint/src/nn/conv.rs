//! 2-D convolution with same-padding, stride and dilation, lowered to a
//! single GEMM via im2col. Backward returns input gradients and accumulates
//! weight/bias gradients.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array4, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::Param;
use super::scalar::{sc, Scalar};
use crate::error::{Error, Result};

/// Static shape data of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, dilation: usize) -> Result<Self> {
        if k % 2 == 0 || k == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {k}")));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!("stride must be 1 or 2, got {stride}")));
        }
        if dilation == 0 || cin == 0 || cout == 0 {
            return Err(Error::Config(
                "dilation and channel counts must be positive".into(),
            ));
        }
        Ok(ConvGeom {
            cin,
            cout,
            k,
            stride,
            dilation,
        })
    }

    /// Zero padding that keeps spatial size at stride 1.
    pub fn pad(&self) -> usize {
        self.dilation * (self.k - 1) / 2
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        let eff = self.dilation * (self.k - 1);
        let oh = (h + 2 * p - eff - 1) / self.stride + 1;
        let ow = (w + 2 * p - eff - 1) / self.stride + 1;
        (oh, ow)
    }

    pub fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Patch matrix: rows = cin*k*k, columns = b*oh*ow in batch-major order.
pub fn im2col<S: Scalar>(x: &Array4<S>, g: &ConvGeom) -> Array2<S> {
    let (bsz, cin, h, w) = x.dim();
    assert_eq!(cin, g.cin, "im2col channel mismatch");
    let (oh, ow) = g.out_hw(h, w);
    let n = bsz * oh * ow;
    let mut cols = Array2::<S>::zeros((g.rows(), n));
    let pad = g.pad() as isize;
    let xs = x.as_slice().expect("x contiguous");
    let cs = cols.as_slice_mut().expect("cols contiguous");

    for b in 0..bsz {
        for c in 0..cin {
            let x_base = (b * cin + c) * h * w;
            for kh in 0..g.k {
                for kw in 0..g.k {
                    let row = (c * g.k + kh) * g.k + kw;
                    let col_base = row * n + b * oh * ow;
                    let dh = (kh * g.dilation) as isize - pad;
                    let dw = (kw * g.dilation) as isize - pad;
                    for oy in 0..oh {
                        let iy = (oy * g.stride) as isize + dh;
                        let dst = col_base + oy * ow;
                        if iy < 0 || iy >= h as isize {
                            continue; // stays zero
                        }
                        let src_row = x_base + iy as usize * w;
                        if g.stride == 1 {
                            // contiguous run of valid ox
                            let ox0 = (-dw).max(0) as usize;
                            let ox1 = ((w as isize - dw).min(ow as isize)).max(0) as usize;
                            if ox1 > ox0 {
                                let src0 = (ox0 as isize + dw) as usize;
                                cs[dst + ox0..dst + ox1].copy_from_slice(
                                    &xs[src_row + src0..src_row + src0 + (ox1 - ox0)],
                                );
                            }
                        } else {
                            for ox in 0..ow {
                                let ix = (ox * g.stride) as isize + dw;
                                if ix >= 0 && ix < w as isize {
                                    cs[dst + ox] = xs[src_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter-add patch-matrix gradients back to an image.
pub fn col2im<S: Scalar>(
    dcols: &Array2<S>,
    g: &ConvGeom,
    dims: (usize, usize, usize, usize),
) -> Array4<S> {
    let (bsz, cin, h, w) = dims;
    let (oh, ow) = g.out_hw(h, w);
    let n = bsz * oh * ow;
    let mut dx = Array4::<S>::zeros(dims);
    let pad = g.pad() as isize;
    let ds = dcols.as_slice().expect("dcols contiguous");
    let xs = dx.as_slice_mut().expect("dx contiguous");

    for b in 0..bsz {
        for c in 0..cin {
            let x_base = (b * cin + c) * h * w;
            for kh in 0..g.k {
                for kw in 0..g.k {
                    let row = (c * g.k + kh) * g.k + kw;
                    let col_base = row * n + b * oh * ow;
                    let dh = (kh * g.dilation) as isize - pad;
                    let dw = (kw * g.dilation) as isize - pad;
                    for oy in 0..oh {
                        let iy = (oy * g.stride) as isize + dh;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = col_base + oy * ow;
                        let dst_row = x_base + iy as usize * w;
                        if g.stride == 1 {
                            let ox0 = (-dw).max(0) as usize;
                            let ox1 = ((w as isize - dw).min(ow as isize)).max(0) as usize;
                            for ox in ox0..ox1 {
                                let ix = (ox as isize + dw) as usize;
                                xs[dst_row + ix] = xs[dst_row + ix] + ds[src + ox];
                            }
                        } else {
                            for ox in 0..ow {
                                let ix = (ox * g.stride) as isize + dw;
                                if ix >= 0 && ix < w as isize {
                                    xs[dst_row + ix as usize] =
                                        xs[dst_row + ix as usize] + ds[src + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// y[b,co,:,:] = (w2 @ cols)[co, b-block] + bias
pub fn conv_forward<S: Scalar>(
    w2: ArrayView2<S>,
    bias: ArrayView1<S>,
    x: &Array4<S>,
    g: &ConvGeom,
) -> (Array4<S>, Array2<S>) {
    let (bsz, _, h, w) = x.dim();
    let (oh, ow) = g.out_hw(h, w);
    let n = bsz * oh * ow;
    let cols = im2col(x, g);
    let mut y2 = Array2::<S>::zeros((g.cout, n));
    general_mat_mul(S::one(), &w2, &cols.view(), S::zero(), &mut y2);

    let mut y = Array4::<S>::zeros((bsz, g.cout, oh, ow));
    {
        let ys = y.as_slice_mut().expect("y contiguous");
        let y2s = y2.as_slice().expect("y2 contiguous");
        let plane = oh * ow;
        for b in 0..bsz {
            for co in 0..g.cout {
                let dst = (b * g.cout + co) * plane;
                let src = co * n + b * plane;
                let bv = bias[co];
                for (d, s) in ys[dst..dst + plane].iter_mut().zip(&y2s[src..src + plane]) {
                    *d = *s + bv;
                }
            }
        }
    }
    (y, cols)
}

pub struct ConvBackward<S: Scalar> {
    pub dx: Array4<S>,
    pub dw2: Array2<S>,
    pub db: Array1<S>,
}

/// Gradients for one convolution given the cached patch matrix.
pub fn conv_backward<S: Scalar>(
    w2: ArrayView2<S>,
    cols: &Array2<S>,
    in_dims: (usize, usize, usize, usize),
    dy: &Array4<S>,
    g: &ConvGeom,
) -> ConvBackward<S> {
    let (bsz, cout, oh, ow) = dy.dim();
    assert_eq!(cout, g.cout);
    let n = bsz * oh * ow;
    let plane = oh * ow;

    // regroup dy [B,Co,oh,ow] as dy2 [Co, B*oh*ow]
    let mut dy2 = Array2::<S>::zeros((cout, n));
    {
        let ds = dy.as_slice().expect("dy contiguous");
        let d2 = dy2.as_slice_mut().expect("dy2 contiguous");
        for b in 0..bsz {
            for co in 0..cout {
                let src = (b * cout + co) * plane;
                let dst = co * n + b * plane;
                d2[dst..dst + plane].copy_from_slice(&ds[src..src + plane]);
            }
        }
    }

    let mut dw2 = Array2::<S>::zeros((cout, g.rows()));
    general_mat_mul(S::one(), &dy2.view(), &cols.t(), S::zero(), &mut dw2);

    let mut db = Array1::<S>::zeros(cout);
    for co in 0..cout {
        let mut acc = S::zero();
        for v in dy2.row(co) {
            acc = acc + *v;
        }
        db[co] = acc;
    }

    let mut dcols = Array2::<S>::zeros((g.rows(), n));
    general_mat_mul(S::one(), &w2.t(), &dy2.view(), S::zero(), &mut dcols);
    let dx = col2im(&dcols, g, in_dims);

    ConvBackward { dx, dw2, db }
}

#[derive(Debug)]
pub struct ConvCache<S: Scalar> {
    pub cols: Array2<S>,
    pub in_dims: (usize, usize, usize, usize),
}

/// Plain convolution layer owning its parameters.
#[derive(Debug, Clone)]
pub struct Conv2d<S: Scalar> {
    pub w: Param<S>, // [cout, cin, k, k]
    pub b: Param<S>, // [cout]
    pub geom: ConvGeom,
}

impl<S: Scalar> Conv2d<S> {
    /// He-normal initialization: std = sqrt(2 / fan_in).
    pub fn new(geom: ConvGeom, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = geom.rows() as f64;
        let std = (2.0 / fan_in).sqrt();
        let w = ndarray::ArrayD::from_shape_fn(
            ndarray::IxDyn(&[geom.cout, geom.cin, geom.k, geom.k]),
            |_| sc::<S>(std * normal_sample(rng)),
        );
        let b = ndarray::ArrayD::zeros(ndarray::IxDyn(&[geom.cout]));
        Conv2d {
            w: Param::new(w),
            b: Param::new(b),
            geom,
        }
    }

    pub fn w2(&self) -> ArrayView2<'_, S> {
        self.w
            .value
            .view()
            .into_shape_with_order((self.geom.cout, self.geom.rows()))
            .expect("weight contiguous")
    }

    pub fn forward(&self, x: &Array4<S>) -> (Array4<S>, ConvCache<S>) {
        let bias = self
            .b
            .value
            .view()
            .into_dimensionality()
            .expect("bias is 1-d");
        let (y, cols) = conv_forward(self.w2(), bias, x, &self.geom);
        let cache = ConvCache {
            cols,
            in_dims: x.dim(),
        };
        (y, cache)
    }

    /// Accumulates parameter gradients, returns input gradient.
    pub fn backward(&mut self, cache: &ConvCache<S>, dy: &Array4<S>) -> Array4<S> {
        let out = conv_backward(self.w2(), &cache.cols, cache.in_dims, dy, &self.geom);
        let mut wg = self
            .w
            .grad
            .view_mut()
            .into_shape_with_order((self.geom.cout, self.geom.rows()))
            .expect("grad contiguous");
        wg += &out.dw2;
        let mut bg = self
            .b
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias grad 1-d");
        bg += &out.db;
        out.dx
    }
}

/// Box-Muller standard normal draw; kept local so weight init only depends
/// on the rng stream, not on an external distribution crate's internals.
pub fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
