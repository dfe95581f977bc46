//! Contextual attention: reconstructs every feature position as a
//! softmax-weighted combination of patches taken from hole-free background
//! locations. Overlapping reconstructed patches are averaged. Similarity,
//! reconstruction and their adjoints are lowered to GEMM over an unfolded
//! patch matrix.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array4};

use super::scalar::{sc, Scalar};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ContextualAttention<S: Scalar> {
    pub patch: usize,
    pub softmax_scale: S,
    /// Spatial reduction between the network input (where the hole mask
    /// lives) and the feature map this layer runs on.
    pub mask_pool: usize,
}

pub struct AttnCache<S: Scalar> {
    dims: (usize, usize, usize, usize),
    /// Per sample: unfolded patch matrix [positions, c*patch*patch].
    unfolded: Vec<Array2<S>>,
    /// Per sample: key positions (flat index into h*w).
    keys: Vec<Vec<usize>>,
    /// Per sample: raw patch dot products [positions, keys].
    dots: Vec<Array2<S>>,
    /// Per sample: attention weights [positions, keys].
    attn: Vec<Array2<S>>,
    /// Per sample: clamped patch norms.
    qnorm: Vec<Array1<S>>,
    knorm: Vec<Array1<S>>,
    /// Per pixel overlap count of the fold stage.
    fold_cnt: Array2<S>,
}

impl<S: Scalar> AttnCache<S> {
    /// Attention weight matrix of one sample (rows = query positions).
    pub fn attn(&self, b: usize) -> &Array2<S> {
        &self.attn[b]
    }
}

/// Rows = spatial positions, columns = zero-padded c x patch x patch values.
fn unfold<S: Scalar>(x: &ndarray::ArrayView3<S>, patch: usize) -> Array2<S> {
    let (c, h, w) = x.dim();
    let r = (patch / 2) as isize;
    let d = c * patch * patch;
    let mut out = Array2::<S>::zeros((h * w, d));
    for i in 0..h {
        for j in 0..w {
            let row = i * w + j;
            let mut idx = 0;
            for ch in 0..c {
                for dy in -r..=r {
                    let y = i as isize + dy;
                    for dx in -r..=r {
                        let xx = j as isize + dx;
                        if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                            out[[row, idx]] = x[[ch, y as usize, xx as usize]];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of `unfold`: scatter-add patch rows back onto the plane grid.
fn fold_add<S: Scalar>(rows: &Array2<S>, c: usize, h: usize, w: usize, patch: usize) -> ndarray::Array3<S> {
    let r = (patch / 2) as isize;
    let mut out = ndarray::Array3::<S>::zeros((c, h, w));
    for i in 0..h {
        for j in 0..w {
            let row = i * w + j;
            let mut idx = 0;
            for ch in 0..c {
                for dy in -r..=r {
                    let y = i as isize + dy;
                    for dx in -r..=r {
                        let xx = j as isize + dx;
                        if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                            out[[ch, y as usize, xx as usize]] =
                                out[[ch, y as usize, xx as usize]] + rows[[row, idx]];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
    out
}

fn row_norms<S: Scalar>(m: &Array2<S>) -> Array1<S> {
    let eps = sc::<S>(NORM_EPS);
    Array1::from_iter(m.rows().into_iter().map(|r| {
        let n = r.iter().fold(S::zero(), |a, &b| a + b * b).sqrt();
        if n < eps {
            eps
        } else {
            n
        }
    }))
}

impl<S: Scalar> ContextualAttention<S> {
    pub fn new(patch: usize, softmax_scale: S, mask_pool: usize) -> Self {
        ContextualAttention {
            patch,
            softmax_scale,
            mask_pool,
        }
    }

    /// Downsample a full-resolution hole mask [B,1,H,W] to the feature grid
    /// by majority vote: a cell counts as hole iff at least half of its
    /// pixels are holes. This guarantees a valid key exists whenever the
    /// overall hole fraction is below one half.
    pub fn pool_masks(&self, hole: &Array4<S>, fh: usize, fw: usize) -> Vec<Array2<u8>> {
        let (bsz, _, h, w) = hole.dim();
        let f = self.mask_pool;
        assert_eq!(h, fh * f, "mask height not divisible by pool factor");
        assert_eq!(w, fw * f, "mask width not divisible by pool factor");
        let half = (f * f) as f64 / 2.0;
        (0..bsz)
            .map(|b| {
                let mut out = Array2::<u8>::zeros((fh, fw));
                for i in 0..fh {
                    for j in 0..fw {
                        let mut cnt = 0usize;
                        for y in 0..f {
                            for x in 0..f {
                                if hole[[b, 0, i * f + y, j * f + x]].to_f64() > 0.5 {
                                    cnt += 1;
                                }
                            }
                        }
                        out[[i, j]] = u8::from(cnt as f64 >= half);
                    }
                }
                out
            })
            .collect()
    }

    /// `hole_ds[b]`: per-sample feature-resolution hole mask (1 = hole).
    pub fn forward(
        &self,
        x: &Array4<S>,
        hole_ds: &[Array2<u8>],
    ) -> Result<(Array4<S>, AttnCache<S>)> {
        let (bsz, c, h, w) = x.dim();
        assert_eq!(hole_ds.len(), bsz);
        let p = self.patch;
        let npos = h * w;

        let mut fold_cnt = Array2::<S>::zeros((h, w));
        let r = (p / 2) as isize;
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut cnt = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (y, xx) = (i + dy, j + dx);
                        if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                            cnt += 1;
                        }
                    }
                }
                fold_cnt[[i as usize, j as usize]] = sc::<S>(cnt as f64);
            }
        }

        let mut y = Array4::<S>::zeros((bsz, c, h, w));
        let mut cache = AttnCache {
            dims: (bsz, c, h, w),
            unfolded: Vec::with_capacity(bsz),
            keys: Vec::with_capacity(bsz),
            dots: Vec::with_capacity(bsz),
            attn: Vec::with_capacity(bsz),
            qnorm: Vec::with_capacity(bsz),
            knorm: Vec::with_capacity(bsz),
            fold_cnt,
        };

        for b in 0..bsz {
            let xb = x.index_axis(ndarray::Axis(0), b);
            let mask = &hole_ds[b];
            let keys: Vec<usize> = (0..npos)
                .filter(|&q| mask[[q / w, q % w]] == 0)
                .collect();
            if keys.is_empty() {
                return Err(Error::NoValidPatch);
            }
            let nk = keys.len();

            let u = unfold(&xb, p);
            let kmat = select_rows(&u, &keys);
            let qn = row_norms(&u);
            let kn = row_norms(&kmat);

            // raw dots, then scaled cosine logits, softmax per row
            let mut dots = Array2::<S>::zeros((npos, nk));
            general_mat_mul(S::one(), &u.view(), &kmat.t(), S::zero(), &mut dots);
            let mut attn = dots.clone();
            for q in 0..npos {
                let mut mx = S::neg_infinity();
                for k in 0..nk {
                    let v = self.softmax_scale * attn[[q, k]] / (qn[q] * kn[k]);
                    attn[[q, k]] = v;
                    if v > mx {
                        mx = v;
                    }
                }
                let mut z = S::zero();
                for k in 0..nk {
                    let e = (attn[[q, k]] - mx).exp();
                    attn[[q, k]] = e;
                    z = z + e;
                }
                for k in 0..nk {
                    attn[[q, k]] = attn[[q, k]] / z;
                }
            }

            // reconstruction: R = A K, folded with overlap averaging
            let mut recon = Array2::<S>::zeros((npos, c * p * p));
            general_mat_mul(S::one(), &attn.view(), &kmat.view(), S::zero(), &mut recon);
            let folded = fold_add(&recon, c, h, w, p);
            {
                let mut yb = y.index_axis_mut(ndarray::Axis(0), b);
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            yb[[ch, i, j]] = folded[[ch, i, j]] / cache.fold_cnt[[i, j]];
                        }
                    }
                }
            }

            cache.unfolded.push(u);
            cache.keys.push(keys);
            cache.dots.push(dots);
            cache.attn.push(attn);
            cache.qnorm.push(qn);
            cache.knorm.push(kn);
        }

        Ok((y, cache))
    }

    pub fn backward(&self, cache: &AttnCache<S>, dy: &Array4<S>) -> Array4<S> {
        let (bsz, c, h, w) = cache.dims;
        let p = self.patch;
        let d = c * p * p;
        let npos = h * w;
        let scale = self.softmax_scale;
        let mut dx = Array4::<S>::zeros((bsz, c, h, w));

        for b in 0..bsz {
            let u = &cache.unfolded[b];
            let keys = &cache.keys[b];
            let attn = &cache.attn[b];
            let dots = &cache.dots[b];
            let qn = &cache.qnorm[b];
            let kn = &cache.knorm[b];
            let nk = keys.len();
            let kmat = select_rows(u, keys);

            // gradient through the overlap-average fold: gather dy/cnt
            let dyb = {
                let dysl = dy.index_axis(ndarray::Axis(0), b);
                let mut t = ndarray::Array3::<S>::zeros((c, h, w));
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            t[[ch, i, j]] = dysl[[ch, i, j]] / cache.fold_cnt[[i, j]];
                        }
                    }
                }
                t
            };
            let drecon = unfold(&dyb.view(), p); // [P, D]

            // value path
            let mut da = Array2::<S>::zeros((npos, nk));
            general_mat_mul(S::one(), &drecon.view(), &kmat.t(), S::zero(), &mut da);
            let mut dkey = Array2::<S>::zeros((nk, d));
            general_mat_mul(S::one(), &attn.t(), &drecon.view(), S::zero(), &mut dkey);

            // softmax backward: ds = scale-side logits gradient
            let mut ds = Array2::<S>::zeros((npos, nk));
            for q in 0..npos {
                let mut dot_a_da = S::zero();
                for k in 0..nk {
                    dot_a_da = dot_a_da + attn[[q, k]] * da[[q, k]];
                }
                for k in 0..nk {
                    ds[[q, k]] = scale * attn[[q, k]] * (da[[q, k]] - dot_a_da);
                }
            }

            // cosine backward. With cos = dots/(nq nk):
            //   dQ = (ds ./ (nq x nk)) K - diag(rowsum(ds.*cos)/nq^2) U
            //   dK = (ds ./ (nq x nk))' U - diag(colsum(ds.*cos)/nk^2) K
            let mut m1 = ds.clone();
            for q in 0..npos {
                for k in 0..nk {
                    m1[[q, k]] = m1[[q, k]] / (qn[q] * kn[k]);
                }
            }
            let mut dq = Array2::<S>::zeros((npos, d));
            general_mat_mul(S::one(), &m1.view(), &kmat.view(), S::zero(), &mut dq);
            let mut row_corr = Array1::<S>::zeros(npos);
            let mut col_corr = Array1::<S>::zeros(nk);
            for q in 0..npos {
                for k in 0..nk {
                    let cos = dots[[q, k]] / (qn[q] * kn[k]);
                    let t = ds[[q, k]] * cos;
                    row_corr[q] = row_corr[q] + t;
                    col_corr[k] = col_corr[k] + t;
                }
            }
            for q in 0..npos {
                let f = row_corr[q] / (qn[q] * qn[q]);
                for t in 0..d {
                    dq[[q, t]] = dq[[q, t]] - f * u[[q, t]];
                }
            }
            let mut dk_cos = Array2::<S>::zeros((nk, d));
            general_mat_mul(S::one(), &m1.t(), &u.view(), S::zero(), &mut dk_cos);
            for k in 0..nk {
                let f = col_corr[k] / (kn[k] * kn[k]);
                for t in 0..d {
                    dkey[[k, t]] = dkey[[k, t]] + dk_cos[[k, t]] - f * kmat[[k, t]];
                }
            }

            // scatter query-patch gradients at every position, key-patch
            // gradients at key positions
            let mut rows = dq;
            for (ki, &kpos) in keys.iter().enumerate() {
                for t in 0..d {
                    rows[[kpos, t]] = rows[[kpos, t]] + dkey[[ki, t]];
                }
            }
            let dxb = fold_add(&rows, c, h, w, p);
            dx.index_axis_mut(ndarray::Axis(0), b).assign(&dxb);
        }
        dx
    }
}

fn select_rows<S: Scalar>(m: &Array2<S>, rows: &[usize]) -> Array2<S> {
    let d = m.ncols();
    let mut out = Array2::<S>::zeros((rows.len(), d));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&m.row(r));
    }
    out
}
