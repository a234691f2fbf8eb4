//! PSNR and SSIM.
//!
//! SSIM uses the common constants: an 11×11 Gaussian window with σ = 1.5,
//! `K1 = 0.01`, `K2 = 0.03`, valid windows only, averaged over windows and
//! channels. LPIPS needs a pretrained network and is not provided.

use std::fmt::Write as _;

use crate::dataio::Image;
use crate::error::ensure;
use crate::{Result, Scalar};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse<T: Scalar>(pred: &Image<T>, gt: &Image<T>) -> Result<f64> {
    ensure!(pred.same_shape(gt), Input, "image shapes differ");
    ensure!(!pred.data.is_empty(), Input, "empty image");
    let sum: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(sum / pred.data.len() as f64)
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP)
    }
}

/// `10·log10(max²/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr<T: Scalar>(pred: &Image<T>, gt: &Image<T>, max_val: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?, max_val))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode Gaussian filter of one plane.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
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

pub fn ssim<T: Scalar>(pred: &Image<T>, gt: &Image<T>) -> Result<f64> {
    ensure!(pred.same_shape(gt), Input, "image shapes differ");
    let (w, h, ch) = (pred.width as usize, pred.height as usize, pred.channels);
    ensure!(
        w >= SSIM_WINDOW && h >= SSIM_WINDOW,
        Input,
        "image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
    );
    let k = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        let x: Vec<f64> = pred.data.iter().skip(c).step_by(ch).map(|v| v.as_f64()).collect();
        let y: Vec<f64> = gt.data.iter().skip(c).step_by(ch).map(|v| v.as_f64()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let (mx, my) = (filter(&x, w, h, &k), filter(&y, w, h, &k));
        let (sxx, syy, sxy) = (filter(&xx, w, h, &k), filter(&yy, w, h, &k), filter(&xy, w, h, &k));
        for i in 0..mx.len() {
            let (a, b) = (mx[i], my[i]);
            let var_x = sxx[i] - a * a;
            let var_y = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            total += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (var_x + var_y + c2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// Per-view scores and their means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub names: Vec<String>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, pred: &Image<T>, gt: &Image<T>) -> Result<()> {
        let p = psnr(pred, gt, 1.0)?;
        let s = ssim(pred, gt)?;
        self.names.push(name.into());
        self.psnr.push(p);
        self.ssim.push(s);
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }

    /// `view,psnr,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,psnr,ssim\n");
        for i in 0..self.names.len() {
            let _ = writeln!(s, "{},{:.6},{:.6}", self.names[i], self.psnr[i], self.ssim[i]);
        }
        let _ = writeln!(s, "mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim());
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<16} {:>10} {:>8}\n", "view", "PSNR(dB)", "SSIM");
        for i in 0..self.names.len() {
            let _ = writeln!(s, "{:<16} {:>10.3} {:>8.4}", self.names[i], self.psnr[i], self.ssim[i]);
        }
        let _ = writeln!(s, "{:<16} {:>10.3} {:>8.4}", "mean", self.mean_psnr(), self.mean_ssim());
        s.push_str("(LPIPS not computed)\n");
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
