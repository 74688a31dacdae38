//! PSNR and SSIM over linear RGB images in `[0, 1]`.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03 and a
//! dynamic range of 1, evaluated over valid window positions per channel and
//! averaged across channels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

pub const PSNR_CAP_DB: f64 = 100.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Input(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(pred: &Image, target: &Image) -> Result<f64> {
    check_dims(pred, target)?;
    let sum: f64 = pred
        .pixels
        .iter()
        .zip(&target.pixels)
        .flat_map(|(p, t)| (0..3).map(move |c| (p[c] as f64 - t[c] as f64).powi(2)))
        .sum();
    Ok(sum / (3 * pred.pixels.len()).max(1) as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(pred: &Image, target: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target)?))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" Gaussian filter of a single-channel plane.
fn filter_valid(plane: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

pub fn ssim(pred: &Image, target: &Image) -> Result<f64> {
    check_dims(pred, target)?;
    if pred.width < SSIM_WINDOW || pred.height < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            pred.width, pred.height
        )));
    }
    let (w, h) = (pred.width, pred.height);
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = pred.pixels.iter().map(|p| p[c] as f64).collect();
        let y: Vec<f64> = target.pixels.iter().map(|p| p[c] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&xx, w, h, &k);
        let syy = filter_valid(&yy, w, h, &k);
        let sxy = filter_valid(&xy, w, h, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image metrics plus their arithmetic means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ImageMetrics>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<ImageMetrics>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr_db = rows.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Self {
            rows,
            mean_psnr_db,
            mean_ssim,
        }
    }

    pub fn evaluate(preds: &[Image], targets: &[Image]) -> Result<Self> {
        if preds.len() != targets.len() {
            return Err(Error::Dimension {
                what: "metric image lists",
                expected: targets.len(),
                found: preds.len(),
            });
        }
        let rows = preds
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(k, (p, t))| {
                Ok(ImageMetrics {
                    name: format!("{k:03}"),
                    psnr_db: psnr(p, t)?,
                    ssim: ssim(p, t)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_rows(rows))
    }

    /// Tab-separated table: header, one row per image, then the mean.
    pub fn to_text(&self) -> String {
        let mut s = String::from("image\tpsnr_db\tssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}", r.name, r.psnr_db, r.ssim);
        }
        let _ = writeln!(s, "mean\t{:.6}\t{:.6}", self.mean_psnr_db, self.mean_ssim);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image {
            width: w,
            height: h,
            pixels: (0..w * h).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
        }
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        let a = noise_image(1, 16, 16);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let black = Image::filled(4, 4, [0.0; 3]);
        let white = Image::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);
        assert!(psnr(&black, &Image::filled(4, 5, [0.0; 3])).is_err());
    }

    #[test]
    fn psnr_symmetric_and_noise_monotone() {
        let a = noise_image(2, 16, 16);
        let b = noise_image(3, 16, 16);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        for seed in 0..5 {
            let base = Image::filled(32, 32, [0.5; 3]);
            let n = noise_image(100 + seed, 32, 32);
            let mut last = f64::INFINITY;
            for amp in [0.01f32, 0.03, 0.1, 0.3] {
                let noisy = Image {
                    pixels: base
                        .pixels
                        .iter()
                        .zip(&n.pixels)
                        .map(|(p, q)| [0, 1, 2].map(|c| p[c] + amp * (q[c] - 0.5)))
                        .collect(),
                    ..base.clone()
                };
                let v = psnr(&noisy, &base).unwrap();
                assert!(v < last);
                last = v;
            }
        }
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = noise_image(5, 24, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        // checkerboard vs its inverse: structure is anti-correlated
        let checker = Image {
            width: 32,
            height: 32,
            pixels: (0..32 * 32)
                .map(|i| if (i % 32 + i / 32) % 2 == 0 { [1.0; 3] } else { [0.0; 3] })
                .collect(),
        };
        let inv = Image {
            pixels: checker.pixels.iter().map(|p| p.map(|v| 1.0 - v)).collect(),
            ..checker.clone()
        };
        let s = ssim(&inv, &checker).unwrap();
        assert!(s < 0.5, "{s}");
        assert!(s < 0.0);
        assert!(ssim(&Image::filled(10, 12, [0.0; 3]), &Image::filled(10, 12, [0.0; 3])).is_err());
    }

    #[test]
    fn report_mean() {
        let r = MetricReport::from_rows(vec![
            ImageMetrics { name: "a".into(), psnr_db: 20.0, ssim: 0.5 },
            ImageMetrics { name: "b".into(), psnr_db: 30.0, ssim: 0.9 },
        ]);
        assert_eq!(r.mean_psnr_db, 25.0);
        assert!((r.mean_ssim - 0.7).abs() < 1e-12);
        assert!(r.to_text().ends_with("mean\t25.000000\t0.700000\n"));
    }
}
