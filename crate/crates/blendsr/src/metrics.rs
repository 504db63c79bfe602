//! PSNR and SSIM on the luma plane with a 4-pixel border crop, plus
//! wall-clock timing and the evaluation report table.
//!
//! Both metrics operate on single-plane tensors on the 0-255 scale.
//! Identical planes produce an infinite PSNR sentinel; report aggregation
//! excludes infinite rows and records how many were excluded.

use crate::data::rgb_to_ycbcr;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::time::Instant;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn expect_plane(t: &Tensor<f64>, what: &str) -> Result<()> {
    if t.n() != 1 || t.c() != 1 {
        return Err(Error::Metric(format!("{what} expects a single plane, got {}", t.shape())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB against a peak of 255. Returns
/// `f64::INFINITY` when the planes are identical.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    expect_plane(a, "psnr")?;
    expect_plane(b, "psnr")?;
    if a.shape() != b.shape() {
        return Err(Error::Metric(format!("psnr shapes differ: {} vs {}", a.shape(), b.shape())));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-mode separable correlation of a plane with the 1-D Gaussian,
/// applied along rows then columns.
fn gaussian_filter_valid(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let out_w = w - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * out_w];
    for i in 0..h {
        for j in 0..out_w {
            let mut acc = 0.0;
            for (t, &wt) in win.iter().enumerate() {
                acc += wt * src[i * w + j + t];
            }
            rows[i * out_w + j] = acc;
        }
    }
    let out_h = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0; out_h * out_w];
    for i in 0..out_h {
        for j in 0..out_w {
            let mut acc = 0.0;
            for (t, &wt) in win.iter().enumerate() {
                acc += wt * rows[(i + t) * out_w + j];
            }
            out[i * out_w + j] = acc;
        }
    }
    out
}

/// Mean structural similarity over all fully interior 11x11 Gaussian
/// windows (sigma 1.5), with the standard constants for a 255 peak. The
/// three-factor form collapses to two terms with C3 = C2/2.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    expect_plane(a, "ssim")?;
    expect_plane(b, "ssim")?;
    if a.shape() != b.shape() {
        return Err(Error::Metric(format!("ssim shapes differ: {} vs {}", a.shape(), b.shape())));
    }
    if a.h() < SSIM_WINDOW || a.w() < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.h(),
            a.w()
        )));
    }
    let c1 = (0.01f64 * 255.0) * (0.01 * 255.0);
    let c2 = (0.03f64 * 255.0) * (0.03 * 255.0);

    let (h, w) = (a.h(), a.w());
    let xs = a.data();
    let ys = b.data();
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x * y).collect();

    let win = gaussian_window();
    let mu_x = gaussian_filter_valid(xs, h, w, &win);
    let mu_y = gaussian_filter_valid(ys, h, w, &win);
    let m_xx = gaussian_filter_valid(&xx, h, w, &win);
    let m_yy = gaussian_filter_valid(&yy, h, w, &win);
    let m_xy = gaussian_filter_valid(&xy, h, w, &win);

    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (ux, uy) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - ux * ux;
        let var_y = m_yy[i] - uy * uy;
        let cov = m_xy[i] - ux * uy;
        let num = (2.0 * ux * uy + c1) * (2.0 * cov + c2);
        let den = (ux * ux + uy * uy + c1) * (var_x + var_y + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}

/// Luma plane of an RGB or grayscale image on the 0-255 scale with a
/// 4-pixel border removed: the evaluation protocol input.
pub fn evaluation_plane(img: &Tensor<f32>) -> Result<Tensor<f64>> {
    if img.n() != 1 {
        return Err(Error::Metric(format!("evaluation expects one image, got batch of {}", img.n())));
    }
    if img.h() <= 8 || img.w() <= 8 {
        return Err(Error::Metric(format!(
            "image {}x{} too small: the 4-pixel border crop would leave nothing",
            img.h(),
            img.w()
        )));
    }
    let y255: Tensor<f64> = match img.c() {
        3 => {
            let as_f64 = Tensor::from_fn(1, 3, img.h(), img.w(), |n, c, i, j| f64::from(img.at(n, c, i, j)));
            let ycbcr = rgb_to_ycbcr(&as_f64)?;
            Tensor::from_fn(1, 1, img.h(), img.w(), |_, _, i, j| ycbcr.at(0, 0, i, j) * 255.0)
        }
        // gray pixels replicate to R=G=B, which reduces to 16 + 219*g
        1 => Tensor::from_fn(1, 1, img.h(), img.w(), |_, _, i, j| {
            16.0 + 219.0 * f64::from(img.at(0, 0, i, j))
        }),
        other => return Err(Error::Metric(format!("evaluation expects 1 or 3 channels, got {other}"))),
    };
    let (h, w) = (img.h() - 8, img.w() - 8);
    Ok(Tensor::from_fn(1, 1, h, w, |_, _, i, j| y255.at(0, 0, i + 4, j + 4)))
}

/// Full evaluation protocol: YCbCr conversion, Y plane on the 0-255
/// scale, 4-pixel border crop, then PSNR and SSIM.
pub fn evaluate_pair(sr: &Tensor<f32>, hr: &Tensor<f32>) -> Result<(f64, f64)> {
    if sr.shape() != hr.shape() {
        return Err(Error::Metric(format!(
            "evaluate_pair shapes differ: {} vs {}",
            sr.shape(),
            hr.shape()
        )));
    }
    let a = evaluation_plane(sr)?;
    let b = evaluation_plane(hr)?;
    Ok((psnr(&a, &b)?, ssim(&a, &b)?))
}

/// PSNR part of the protocol only; usable on planes too small for SSIM.
pub fn evaluate_psnr(sr: &Tensor<f32>, hr: &Tensor<f32>) -> Result<f64> {
    let a = evaluation_plane(sr)?;
    let b = evaluation_plane(hr)?;
    psnr(&a, &b)
}

/// Times `run` (excluding any I/O the caller keeps outside the closure):
/// median wall-clock seconds of 3 runs, together with the last result.
pub fn time_sr<T>(mut run: impl FnMut() -> T) -> (T, f64) {
    let mut times = Vec::with_capacity(3);
    let mut result = None;
    for _ in 0..3 {
        let start = Instant::now();
        result = Some(run());
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("durations are finite"));
    (result.expect("ran at least once"), times[1])
}

/// One evaluated image.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub seconds: Option<f64>,
}

/// Per-image rows plus aggregate means; serializes to a CSV table.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Filenames present on only one side of a pairing.
    pub unmatched: Vec<String>,
}

impl EvalReport {
    /// Mean PSNR over rows with finite PSNR, with the excluded count.
    pub fn mean_psnr(&self) -> (f64, usize) {
        let finite: Vec<f64> = self.rows.iter().map(|r| r.psnr_db).filter(|v| v.is_finite()).collect();
        let excluded = self.rows.len() - finite.len();
        if finite.is_empty() {
            (f64::INFINITY, excluded)
        } else {
            (finite.iter().sum::<f64>() / finite.len() as f64, excluded)
        }
    }

    pub fn mean_ssim(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_seconds(&self) -> Option<f64> {
        let times: Vec<f64> = self.rows.iter().filter_map(|r| r.seconds).collect();
        if times.is_empty() {
            None
        } else {
            Some(times.iter().sum::<f64>() / times.len() as f64)
        }
    }

    fn fmt_psnr(v: f64) -> String {
        if v.is_finite() {
            format!("{v:.4}")
        } else {
            "inf".to_string()
        }
    }

    /// CSV with a header, one row per image, a final aggregate row, and
    /// footer comments for unmatched files and excluded infinite rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,psnr_db,ssim,seconds\n");
        for row in &self.rows {
            let secs = row.seconds.map(|s| format!("{s:.4}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{:.5},{}", row.id, Self::fmt_psnr(row.psnr_db), row.ssim, secs);
        }
        let (mp, excluded) = self.mean_psnr();
        let secs = self.mean_seconds().map(|s| format!("{s:.4}")).unwrap_or_default();
        let _ = writeln!(out, "aggregate,{},{:.5},{}", Self::fmt_psnr(mp), self.mean_ssim(), secs);
        if excluded > 0 {
            let _ = writeln!(out, "# aggregate psnr excludes {excluded} row(s) with infinite psnr");
        }
        for name in &self.unmatched {
            let _ = writeln!(out, "# unmatched: {name}");
        }
        out
    }
}
