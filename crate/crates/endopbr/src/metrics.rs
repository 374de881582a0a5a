//! Image-quality metrics for novel-view evaluation: masked PSNR and SSIM.

use std::path::Path;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};

/// PSNR in dB over masked pixels, all three channels, unit dynamic range.
/// Identical images cap at 100 dB.
pub fn psnr(pred: &[Vector3<f64>], gt: &[Vector3<f64>], mask: &[bool]) -> Result<f64> {
    assert_eq!(pred.len(), gt.len());
    assert_eq!(pred.len(), mask.len());
    let mut se = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let d = pred[i] - gt[i];
        se += d.x * d.x + d.y * d.y + d.z * d.z;
        n += 3;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = se / n as f64;
    if mse <= 1e-10 {
        return Ok(100.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(100.0))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for j in 0..SSIM_WINDOW {
        for i in 0..SSIM_WINDOW {
            let dx = i as f64 - c;
            let dy = j as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[j * SSIM_WINDOW + i] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), computed per
/// channel and averaged. Windows extending past the border or overlapping a
/// masked-out pixel are skipped.
pub fn ssim(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    mask: &[bool],
    width: usize,
    height: usize,
) -> Result<f64> {
    assert_eq!(pred.len(), width * height);
    assert_eq!(gt.len(), pred.len());
    assert_eq!(mask.len(), pred.len());
    let win = gaussian_window();
    let half = SSIM_WINDOW / 2;
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::EmptyMask);
    }

    // Integral image of invalid counts for O(1) window checks.
    let mut bad = vec![0u32; (width + 1) * (height + 1)];
    for j in 0..height {
        for i in 0..width {
            let b = !mask[j * width + i] as u32;
            bad[(j + 1) * (width + 1) + (i + 1)] =
                b + bad[j * (width + 1) + (i + 1)] + bad[(j + 1) * (width + 1) + i]
                    - bad[j * (width + 1) + i];
        }
    }
    let window_bad = |j0: usize, i0: usize| -> u32 {
        let (j1, i1) = (j0 + SSIM_WINDOW, i0 + SSIM_WINDOW);
        bad[j1 * (width + 1) + i1] + bad[j0 * (width + 1) + i0]
            - bad[j0 * (width + 1) + i1]
            - bad[j1 * (width + 1) + i0]
    };

    let mut total = 0.0;
    let mut count = 0usize;
    for cj in half..height - half {
        for ci in half..width - half {
            let (j0, i0) = (cj - half, ci - half);
            if window_bad(j0, i0) > 0 {
                continue;
            }
            let mut channel_sum = 0.0;
            for ch in 0..3 {
                let mut mu_x = 0.0;
                let mut mu_y = 0.0;
                for wj in 0..SSIM_WINDOW {
                    for wi in 0..SSIM_WINDOW {
                        let idx = (j0 + wj) * width + i0 + wi;
                        let w = win[wj * SSIM_WINDOW + wi];
                        mu_x += w * pred[idx][ch];
                        mu_y += w * gt[idx][ch];
                    }
                }
                let mut var_x = 0.0;
                let mut var_y = 0.0;
                let mut cov = 0.0;
                for wj in 0..SSIM_WINDOW {
                    for wi in 0..SSIM_WINDOW {
                        let idx = (j0 + wj) * width + i0 + wi;
                        let w = win[wj * SSIM_WINDOW + wi];
                        let dx = pred[idx][ch] - mu_x;
                        let dy = gt[idx][ch] - mu_y;
                        var_x += w * dx * dx;
                        var_y += w * dy * dy;
                        cov += w * dx * dy;
                    }
                }
                channel_sum += ((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2));
            }
            total += channel_sum / 3.0;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameEval {
    pub frame_id: u32,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub per_frame: Vec<FrameEval>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_frames(per_frame: Vec<FrameEval>) -> Self {
        let n = per_frame.len().max(1) as f64;
        let mean_psnr = per_frame.iter().map(|f| f.psnr).sum::<f64>() / n;
        let mean_ssim = per_frame.iter().map(|f| f.ssim).sum::<f64>() / n;
        EvalReport {
            per_frame,
            mean_psnr,
            mean_ssim,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("frame_id,psnr,ssim\n");
        for f in &self.per_frame {
            out.push_str(&format!("{},{:.6},{:.6}\n", f.frame_id, f.psnr, f.ssim));
        }
        out.push_str(&format!("mean,{:.6},{:.6}\n", self.mean_psnr, self.mean_ssim));
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(n: usize, v: f64) -> Vec<Vector3<f64>> {
        vec![Vector3::repeat(v); n]
    }

    #[test]
    fn psnr_identical_caps_at_100() {
        let img = constant_image(64, 0.4);
        let mask = vec![true; 64];
        assert_eq!(psnr(&img, &img, &mask).unwrap(), 100.0);
    }

    #[test]
    fn psnr_constant_offsets() {
        let a = constant_image(100, 0.5);
        let b = constant_image(100, 0.6);
        let mask = vec![true; 100];
        let p = psnr(&a, &b, &mask).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "psnr {p}");
        let c = constant_image(100, 0.51);
        let p = psnr(&a, &c, &mask).unwrap();
        assert!((p - 40.0).abs() < 1e-9, "psnr {p}");
    }

    #[test]
    fn psnr_respects_mask_and_rejects_empty() {
        let mut a = constant_image(100, 0.5);
        let b = constant_image(100, 0.5);
        // Corrupt a masked-out pixel; PSNR should stay capped.
        a[3] = Vector3::repeat(0.0);
        let mut mask = vec![true; 100];
        mask[3] = false;
        assert_eq!(psnr(&a, &b, &mask).unwrap(), 100.0);
        assert!(psnr(&a, &b, &vec![false; 100]).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let n = 32 * 32;
        let img: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::repeat(((i * 37) % 255) as f64 / 255.0))
            .collect();
        let mask = vec![true; n];
        assert_eq!(ssim(&img, &img, &mask, 32, 32).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_images_match_closed_form() {
        let n = 32 * 32;
        let (c1, c2) = (0.3, 0.7);
        let a = constant_image(n, c1);
        let b = constant_image(n, c2);
        let mask = vec![true; n];
        let got = ssim(&a, &b, &mask, 32, 32).unwrap();
        let expected = (2.0 * c1 * c2 + SSIM_C1) / (c1 * c1 + c2 * c2 + SSIM_C1);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let n = 32 * 32;
        let a: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::repeat(((i * 13 + 7) % 251) as f64 / 251.0))
            .collect();
        let b: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::repeat(((i * 29 + 3) % 241) as f64 / 241.0))
            .collect();
        let mask = vec![true; n];
        let ab = ssim(&a, &b, &mask, 32, 32).unwrap();
        let ba = ssim(&b, &a, &mask, 32, 32).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_inverted_high_contrast_is_low() {
        // Fixed 32x32 checker fixture; inverting destroys structure.
        let n = 32 * 32;
        let a: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let (x, y) = (i % 32, i / 32);
                Vector3::repeat(if (x / 4 + y / 4) % 2 == 0 { 0.9 } else { 0.1 })
            })
            .collect();
        let b: Vec<Vector3<f64>> = a.iter().map(|v| Vector3::repeat(1.0) - v).collect();
        let mask = vec![true; n];
        let s = ssim(&a, &b, &mask, 32, 32).unwrap();
        assert!(s < 0.5, "ssim {s}");
        // Independent straight-line check at one window: constant patches of
        // 0.9 vs 0.1 give ((2*0.09 + C1) / (0.81 + 0.01 + C1)) locally.
        let interior = (2.0 * 0.9 * 0.1 + SSIM_C1) / (0.9f64 * 0.9 + 0.1 * 0.1 + SSIM_C1);
        assert!(s < interior + 0.2);
    }

    #[test]
    fn ssim_skips_windows_touching_invalid_pixels() {
        let n = 32 * 32;
        let mut a = constant_image(n, 0.5);
        let b = constant_image(n, 0.5);
        let mut mask = vec![true; n];
        // Poison one pixel; windows covering it are skipped, so the score
        // stays exactly 1.
        a[16 * 32 + 16] = Vector3::repeat(0.0);
        mask[16 * 32 + 16] = false;
        assert_eq!(ssim(&a, &b, &mask, 32, 32).unwrap(), 1.0);
        assert!(ssim(&a, &b, &vec![false; n], 32, 32).is_err());
    }
}
