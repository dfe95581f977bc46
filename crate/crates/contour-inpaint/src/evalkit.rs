//! Image quality metrics (L1, L2, PSNR, SSIM) and batch evaluation reports.
//! Metrics are computed in f64 on hole-composited outputs against ground
//! truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ImageTensor, TrainingSample};
use crate::error::{Error, Result};

fn check_pair(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean absolute error over all pixels and channels.
pub fn l1_metric(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum::<f64>()
        / n)
}

/// Mean squared error over all pixels and channels.
pub fn l2_metric(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// 10 log10(1 / MSE) dB for unit-range images; MSE of zero is reported as
/// 100 dB.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        100.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    Ok(psnr_from_mse(l2_metric(a, b)?))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filter, valid mode: output is (h-10) x (w-10).
fn filter_valid(x: &ndarray::Array2<f64>, kern: &[f64; SSIM_WINDOW]) -> ndarray::Array2<f64> {
    let (h, w) = x.dim();
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    // rows
    let mut tmp = ndarray::Array2::<f64>::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &kv) in kern.iter().enumerate() {
                acc += kv * x[[i, j + t]];
            }
            tmp[[i, j]] = acc;
        }
    }
    // cols
    let mut out = ndarray::Array2::<f64>::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (t, &kv) in kern.iter().enumerate() {
                acc += kv * tmp[[i + t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Mean local SSIM with an 11-tap Gaussian window (sigma 1.5), stabilizing
/// constants C1=(0.01 L)^2, C2=(0.03 L)^2 with L=1, channels averaged.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_pair(a, b)?;
    let (c, h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}-tap SSIM window"
        )));
    }
    let kern = gaussian_kernel();
    let c1 = (SSIM_K1).powi(2);
    let c2 = (SSIM_K2).powi(2);
    let mut total = 0.0;
    for ch in 0..c {
        let xa = ndarray::Array2::from_shape_fn((h, w), |(i, j)| a[[ch, i, j]] as f64);
        let xb = ndarray::Array2::from_shape_fn((h, w), |(i, j)| b[[ch, i, j]] as f64);
        let mu_a = filter_valid(&xa, &kern);
        let mu_b = filter_valid(&xb, &kern);
        let aa = filter_valid(&(&xa * &xa), &kern);
        let bb = filter_valid(&(&xb * &xb), &kern);
        let ab = filter_valid(&(&xa * &xb), &kern);
        let mut acc = 0.0;
        let (oh, ow) = mu_a.dim();
        for i in 0..oh {
            for j in 0..ow {
                let ma = mu_a[[i, j]];
                let mb = mu_b[[i, j]];
                let va = aa[[i, j]] - ma * ma;
                let vb = bb[[i, j]] - mb * mb;
                let cov = ab[[i, j]] - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub l1: f64,
    pub l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image metric rows plus their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub dataset: String,
    pub regime: String,
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

impl MetricReport {
    pub fn new(model: String, dataset: String, regime: String, rows: Vec<MetricRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = MetricRow {
            id: "mean".into(),
            l1: rows.iter().map(|r| r.l1).sum::<f64>() / n,
            l2: rows.iter().map(|r| r.l2).sum::<f64>() / n,
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        };
        MetricReport {
            model,
            dataset,
            regime,
            rows,
            mean,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,l1,l2,psnr,ssim\n");
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.id, r.l1, r.l2, r.psnr, r.ssim
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file_io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, self.to_csv()).map_err(|e| Error::file_io(&csv_path, e))?;
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&json_path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::file_io(&json_path, e))?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file_io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Compute all four metrics of a completed image against ground truth.
pub fn metrics_for(id: &str, completed: &ImageTensor, gt: &ImageTensor) -> Result<MetricRow> {
    Ok(MetricRow {
        id: id.to_string(),
        l1: l1_metric(completed, gt)?,
        l2: l2_metric(completed, gt)?,
        psnr: psnr(completed, gt)?,
        ssim: ssim(completed, gt)?,
    })
}

/// Run any completion function over samples and assemble a report. The
/// completion function receives one sample and returns the completed image;
/// tests pass oracles, production passes `pipeline::infer`.
pub fn evaluate_with<F>(
    mut complete: F,
    samples: &[TrainingSample],
    model: &str,
    dataset: &str,
    regime: &str,
) -> Result<MetricReport>
where
    F: FnMut(&TrainingSample) -> Result<ImageTensor>,
{
    let mut rows = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let completed = complete(s)?;
        rows.push(metrics_for(&format!("{k:05}"), &completed, &s.image)?);
    }
    Ok(MetricReport::new(
        model.into(),
        dataset.into(),
        regime.into(),
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f32, dims: (usize, usize, usize)) -> ImageTensor {
        ImageTensor::from_elem(dims, v)
    }

    #[test]
    fn l1_l2_closed_forms() {
        let a = img(0.5, (3, 16, 16));
        let b = img(0.0, (3, 16, 16));
        assert!((l1_metric(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert!((l2_metric(&a, &b).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(l1_metric(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_metric(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn psnr_closed_forms() {
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert_eq!(psnr_from_mse(0.0001), 40.0);
        assert_eq!(psnr_from_mse(0.0), 100.0);
        // through images: f32 storage quantizes, so a loose tolerance
        let a = img(0.0, (1, 8, 8));
        let b = img(0.1, (1, 8, 8));
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = ImageTensor::from_shape_fn((3, 16, 16), |(c, i, j)| {
            ((c * 16 + i + j) % 7) as f32 / 7.0
        });
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let c3 = img(0.3, (1, 16, 16));
        assert!((ssim(&c3, &c3).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_binary_inversion_scores_low() {
        let a = ImageTensor::from_shape_fn((1, 16, 16), |(_, i, j)| ((i + j) % 2) as f32);
        let b = a.mapv(|v| 1.0 - v);
        let s = ssim(&a, &b).unwrap();
        assert!(s <= 0.0, "inverted checkerboard ssim {s}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = img(0.5, (1, 8, 8));
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn metric_symmetry() {
        let a = ImageTensor::from_shape_fn((3, 16, 16), |(c, i, j)| {
            ((c + 2 * i + 3 * j) % 11) as f32 / 11.0
        });
        let b = ImageTensor::from_shape_fn((3, 16, 16), |(c, i, j)| {
            ((2 * c + i + j) % 5) as f32 / 5.0
        });
        assert_eq!(l1_metric(&a, &b).unwrap(), l1_metric(&b, &a).unwrap());
        assert_eq!(l2_metric(&a, &b).unwrap(), l2_metric(&b, &a).unwrap());
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let d = (ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs();
        assert!(d < 1e-12);
    }

    #[test]
    fn report_means_match_rows() {
        let rows = vec![
            MetricRow {
                id: "0".into(),
                l1: 0.1,
                l2: 0.01,
                psnr: 20.0,
                ssim: 0.9,
            },
            MetricRow {
                id: "1".into(),
                l1: 0.3,
                l2: 0.03,
                psnr: 30.0,
                ssim: 0.7,
            },
        ];
        let rep = MetricReport::new("m".into(), "d".into(), "overlap".into(), rows);
        assert!((rep.mean.l1 - 0.2).abs() < 1e-9);
        assert!((rep.mean.psnr - 25.0).abs() < 1e-9);
        assert!((rep.mean.ssim - 0.8).abs() < 1e-9);
    }

    #[test]
    fn report_roundtrip_json() {
        let rep = MetricReport::new(
            "m".into(),
            "d".into(),
            "overlap".into(),
            vec![MetricRow {
                id: "0".into(),
                l1: 0.125,
                l2: 0.015625,
                psnr: 18.0618,
                ssim: 0.875,
            }],
        );
        let dir = tempfile::tempdir().unwrap();
        rep.write(dir.path(), "report").unwrap();
        let back = MetricReport::read_json(&dir.path().join("report.json")).unwrap();
        assert_eq!(rep, back);
    }
}
