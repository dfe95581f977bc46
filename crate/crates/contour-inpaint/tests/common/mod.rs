//! Shared test oracles: finite-difference gradients, brute-force reference
//! implementations, and small numeric helpers. Everything here is written
//! independently of the library's compute paths so it can falsify them.

#![allow(dead_code)]

use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite differences: g_i = (f(x + e_i h) - f(x - e_i h)) / 2h.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Relative error between gradient vectors: ||a - n|| / max(||a|| + ||n||, floor).
pub fn grad_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    diff.sqrt() / (na.sqrt() + nn.sqrt()).max(1e-8)
}

pub fn rand_array4(dims: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn(dims, |_| rng.gen::<f64>() * 2.0 - 1.0)
}

pub fn rand_array2(dims: (usize, usize), seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn(dims, |_| rng.gen::<f64>() * 2.0 - 1.0)
}

/// Brute-force contextual attention, written from the definition: for each
/// query position, cosine similarity against every valid key patch, scaled
/// softmax, similarity-weighted sum of key patches placed back at the query
/// position, overlapping placements averaged.
pub fn attention_oracle(
    x: &Array4<f64>,
    hole: &Array2<u8>,
    patch: usize,
    scale: f64,
) -> Array4<f64> {
    let (bsz, c, h, w) = x.dim();
    assert_eq!(bsz, 1, "oracle handles one sample");
    let r = (patch / 2) as isize;
    let eps = 1e-8;

    let patch_of = |ci: usize, pi: usize, pj: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(patch * patch);
        for dy in -r..=r {
            for dx in -r..=r {
                let (y, xx) = (pi as isize + dy, pj as isize + dx);
                if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                    v.push(x[[0, ci, y as usize, xx as usize]]);
                } else {
                    v.push(0.0);
                }
            }
        }
        v
    };
    let full_patch = |pi: usize, pj: usize| -> Vec<f64> {
        (0..c).flat_map(|ci| patch_of(ci, pi, pj)).collect()
    };

    let keys: Vec<(usize, usize)> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .filter(|&(i, j)| hole[[i, j]] == 0)
        .collect();
    assert!(!keys.is_empty());
    let key_patches: Vec<Vec<f64>> = keys.iter().map(|&(i, j)| full_patch(i, j)).collect();

    // attention weights per query
    let mut weights = vec![vec![0.0; keys.len()]; h * w];
    for qi in 0..h {
        for qj in 0..w {
            let q = full_patch(qi, qj);
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            let logits: Vec<f64> = key_patches
                .iter()
                .map(|k| {
                    let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
                    let dot: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
                    scale * dot / (qn * kn)
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (ki, e) in exps.iter().enumerate() {
                weights[qi * w + qj][ki] = e / z;
            }
        }
    }

    // output pixel = average over all query placements covering it of the
    // weighted key-patch values landing there
    let mut y = Array4::<f64>::zeros((1, c, h, w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                let mut cnt = 0usize;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (qi, qj) = (i as isize + dy, j as isize + dx);
                        if qi < 0 || qi >= h as isize || qj < 0 || qj >= w as isize {
                            continue;
                        }
                        cnt += 1;
                        // offset of (i,j) within the patch centered at q
                        let oy = (-dy + r) as usize;
                        let ox = (-dx + r) as usize;
                        let poff = ci * patch * patch + oy * patch + ox;
                        let wrow = &weights[qi as usize * w + qj as usize];
                        for (ki, a) in wrow.iter().enumerate() {
                            acc += a * key_patches[ki][poff];
                        }
                    }
                }
                y[[0, ci, i, j]] = acc / cnt as f64;
            }
        }
    }
    y
}

/// Scalar evaluation of the focal contour content loss over flat slices.
pub fn focal_loss_oracle(
    pred: &[f64],
    gt: &[f64],
    hole: &[f64],
    lambda: f64,
    eps: f64,
) -> f64 {
    let n = pred.len() as f64;
    let mut total = 0.0;
    for i in 0..pred.len() {
        let p = pred[i].clamp(eps, 1.0 - eps);
        let y = gt[i];
        let bce = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let focal = (p - y) * (p - y) * bce;
        total += if hole[i] > 0.0 {
            lambda * focal
        } else {
            focal
        };
    }
    total / n
}

/// Scalar hinge discriminator loss.
pub fn hinge_d_oracle(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let r: f64 = d_real.iter().map(|&s| (1.0 - s).max(0.0)).sum::<f64>() / d_real.len() as f64;
    let f: f64 = d_fake.iter().map(|&s| (1.0 + s).max(0.0)).sum::<f64>() / d_fake.len() as f64;
    r + f
}

pub fn g_adv_oracle(d_fake: &[f64]) -> f64 {
    -d_fake.iter().sum::<f64>() / d_fake.len() as f64
}

/// Scalar L1-of-both-stages content loss.
pub fn image_content_oracle(coarse: &[f64], refined: &[f64], gt: &[f64]) -> f64 {
    let n = gt.len() as f64;
    let a: f64 = coarse.iter().zip(gt).map(|(c, g)| (c - g).abs()).sum();
    let b: f64 = refined.iter().zip(gt).map(|(r, g)| (r - g).abs()).sum();
    (a + b) / n
}

/// 4- or 8-connected component sizes of a binary grid, by flood fill.
pub fn component_sizes(grid: &Array2<u8>, connectivity: u8) -> Vec<usize> {
    let (h, w) = grid.dim();
    let mut seen = Array2::<u8>::zeros((h, w));
    let mut sizes = Vec::new();
    let neigh4: &[(isize, isize)] = &[(-1, 0), (1, 0), (0, -1), (0, 1)];
    let neigh8: &[(isize, isize)] = &[
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, -1),
        (0, 1),
        (1, -1),
        (1, 0),
        (1, 1),
    ];
    let neigh = if connectivity == 8 { neigh8 } else { neigh4 };
    for si in 0..h {
        for sj in 0..w {
            if grid[[si, sj] ] == 0 || seen[[si, sj]] != 0 {
                continue;
            }
            let mut stack = vec![(si, sj)];
            seen[[si, sj]] = 1;
            let mut size = 0usize;
            while let Some((i, j)) = stack.pop() {
                size += 1;
                for &(di, dj) in neigh {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni >= 0 && ni < h as isize && nj >= 0 && nj < w as isize {
                        let (ni, nj) = (ni as usize, nj as usize);
                        if grid[[ni, nj]] != 0 && seen[[ni, nj]] == 0 {
                            seen[[ni, nj]] = 1;
                            stack.push((ni, nj));
                        }
                    }
                }
            }
            sizes.push(size);
        }
    }
    sizes
}

/// Direct 3x3 Sobel magnitude with replicate padding, thresholded.
pub fn sobel_oracle(seg: &Array2<u8>, threshold: f64) -> Array2<u8> {
    let (h, w) = seg.dim();
    let gx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let gy = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let at = |i: isize, j: isize| -> f64 {
        let ii = i.clamp(0, h as isize - 1) as usize;
        let jj = j.clamp(0, w as isize - 1) as usize;
        seg[[ii, jj]] as f64
    };
    let mut out = Array2::<u8>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for di in 0..3 {
                for dj in 0..3 {
                    let v = at(i as isize + di as isize - 1, j as isize + dj as isize - 1);
                    sx += gx[di][dj] * v;
                    sy += gy[di][dj] * v;
                }
            }
            if sx.abs() + sy.abs() > threshold {
                out[[i, j]] = 1;
            }
        }
    }
    out
}

/// Windowed SSIM with an 11-tap Gaussian (sigma 1.5), valid windows only,
/// channels averaged; written directly from the definition.
pub fn ssim_oracle(a: &ndarray::Array3<f32>, b: &ndarray::Array3<f32>) -> f64 {
    let (c, h, w) = a.dim();
    assert_eq!(a.dim(), b.dim());
    assert!(h >= 11 && w >= 11);
    let mut kern = [0.0f64; 11];
    let sigma = 1.5f64;
    let mut sum = 0.0;
    for (i, k) in kern.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *k = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *k;
    }
    for k in kern.iter_mut() {
        *k /= sum;
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for i in 0..h - 10 {
            for j in 0..w - 10 {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for di in 0..11 {
                    for dj in 0..11 {
                        let wgt = kern[di] * kern[dj];
                        let va = a[[ch, i + di, j + dj]] as f64;
                        let vb = b[[ch, i + di, j + dj]] as f64;
                        mu_a += wgt * va;
                        mu_b += wgt * vb;
                        aa += wgt * va * va;
                        bb += wgt * vb * vb;
                        ab += wgt * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += s;
                count += 1;
            }
        }
    }
    total / count as f64
}
