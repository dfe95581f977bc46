//! Contour extraction: 3x3 Sobel magnitude |Gx| + |Gy| over a binary mask,
//! replicate padding at borders, binarized with a threshold.

use ndarray::Array2;

use super::{ContourMap, SegMask};
use crate::error::{Error, Result};

const GX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const GY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Maximum attainable |Gx| + |Gy| on a binary unit step.
pub const SOBEL_MAX_MAGNITUDE: f64 = 8.0;

pub fn sobel_contour(seg: &SegMask, threshold: f64) -> Result<ContourMap> {
    if !(0.0..SOBEL_MAX_MAGNITUDE).contains(&threshold) || threshold <= 0.0 {
        return Err(Error::Config(format!(
            "sobel threshold must lie in (0, {SOBEL_MAX_MAGNITUDE}), got {threshold}"
        )));
    }
    let (h, w) = seg.dim();
    let at = |i: isize, j: isize| -> f64 {
        let ii = i.clamp(0, h as isize - 1) as usize;
        let jj = j.clamp(0, w as isize - 1) as usize;
        seg.0[[ii, jj]] as f64
    };
    let mut out = Array2::<f32>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for (di, row) in GX.iter().enumerate() {
                for (dj, &kx) in row.iter().enumerate() {
                    let v = at(i as isize + di as isize - 1, j as isize + dj as isize - 1);
                    gx += kx * v;
                    gy += GY[di][dj] * v;
                }
            }
            if gx.abs() + gy.abs() > threshold {
                out[[i, j]] = 1.0;
            }
        }
    }
    Ok(ContourMap(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zeros_gives_empty_contour() {
        let seg = SegMask::new(Array2::zeros((8, 8))).unwrap();
        let c = sobel_contour(&seg, 1.0).unwrap();
        assert!(c.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_ones_gives_empty_contour() {
        // replicate padding makes the field constant, so zero gradient
        let seg = SegMask::new(Array2::ones((8, 8))).unwrap();
        let c = sobel_contour(&seg, 1.0).unwrap();
        assert!(c.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_contour_matches_direct_convolution() {
        // columns 0-1 set to 1 in a 5x5 mask
        let mut grid = Array2::<u8>::zeros((5, 5));
        for i in 0..5 {
            grid[[i, 0]] = 1;
            grid[[i, 1]] = 1;
        }
        let seg = SegMask::new(grid.clone()).unwrap();
        let got = sobel_contour(&seg, 1.0).unwrap();

        // direct 3x3 convolution over all 25 pixels with replicate padding
        let at = |i: isize, j: isize| -> f64 {
            let ii = i.clamp(0, 4) as usize;
            let jj = j.clamp(0, 4) as usize;
            grid[[ii, jj]] as f64
        };
        for i in 0..5usize {
            for j in 0..5usize {
                let mut gx = 0.0;
                let mut gy = 0.0;
                for di in 0..3isize {
                    for dj in 0..3isize {
                        let v = at(i as isize + di - 1, j as isize + dj - 1);
                        gx += GX[di as usize][dj as usize] * v;
                        gy += GY[di as usize][dj as usize] * v;
                    }
                }
                let want = u8::from(gx.abs() + gy.abs() > 1.0);
                assert_eq!(
                    got.0[[i, j]],
                    want as f32,
                    "mismatch at ({i},{j})"
                );
            }
        }
        // the step between columns 1 and 2 must be detected somewhere
        assert!(got.0.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn threshold_domain_enforced() {
        let seg = SegMask::new(Array2::zeros((4, 4))).unwrap();
        assert!(sobel_contour(&seg, 0.0).is_err());
        assert!(sobel_contour(&seg, 8.0).is_err());
        assert!(sobel_contour(&seg, 7.9).is_ok());
    }
}
