//! Image I/O, resampling with MATLAB `imresize` semantics, HR patch
//! cropping, augmentation and LR/HR pair generation.
//!
//! The bicubic path is the degradation operator for training pairs, so it
//! follows the MATLAB convention exactly: cubic kernel with a = -0.5,
//! kernel stretched by 1/factor and weights renormalized when downscaling
//! (antialiasing), replicate edges, and the half-pixel-centered source
//! mapping u = (i + 0.5)/factor - 0.5.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// One LR/HR training pair, with the LR side produced by bicubic
/// downscaling of the HR side.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
    pub scale: usize,
    pub source_id: String,
}

/// What to load and how to cut it into training pairs.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub image_paths: Vec<PathBuf>,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub scale: usize,
    pub augment: bool,
    pub seed: u64,
    pub channels: usize,
}

impl DatasetSpec {
    pub fn new(image_paths: Vec<PathBuf>, scale: usize) -> Self {
        Self { image_paths, patch_size: 96, patch_stride: 96, scale, augment: false, seed: 0, channels: 3 }
    }
}

/// Result of [`make_pairs`]: the samples plus a record of skipped inputs.
#[derive(Debug)]
pub struct DatasetBuild {
    pub samples: Vec<ImageSample>,
    pub skipped: Vec<(PathBuf, String)>,
}

#[derive(Clone, Copy)]
enum ResampleKernel {
    /// Cubic convolution kernel, a = -0.5.
    Cubic,
    /// Tent kernel.
    Linear,
}

impl ResampleKernel {
    fn support(self) -> f64 {
        match self {
            ResampleKernel::Cubic => 2.0,
            ResampleKernel::Linear => 1.0,
        }
    }

    fn eval(self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            ResampleKernel::Cubic => {
                if x <= 1.0 {
                    (1.5 * x - 2.5) * x * x + 1.0
                } else if x < 2.0 {
                    ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
                } else {
                    0.0
                }
            }
            ResampleKernel::Linear => {
                if x < 1.0 {
                    1.0 - x
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-output-pixel source taps: leftmost (unclamped) index plus
/// normalized weights. Indices clamp to the edge at application time.
struct TapTable {
    taps: usize,
    rows: Vec<(isize, Vec<f64>)>,
}

fn tap_table(out_size: usize, factor: f64, kernel: ResampleKernel) -> TapTable {
    // downscale: stretch the kernel by 1/factor and renormalize
    let kscale = if factor < 1.0 { factor } else { 1.0 };
    let support = kernel.support() / kscale;
    let taps = (2.0 * support).ceil() as usize + 2;
    let mut rows = Vec::with_capacity(out_size);
    for i in 0..out_size {
        let u = (i as f64 + 0.5) / factor - 0.5;
        let left = (u - support).floor() as isize;
        let mut weights = Vec::with_capacity(taps);
        let mut sum = 0.0;
        for t in 0..taps {
            let w = kernel.eval(kscale * (u - (left + t as isize) as f64));
            weights.push(w);
            sum += w;
        }
        for w in &mut weights {
            *w /= sum;
        }
        rows.push((left, weights));
    }
    TapTable { taps, rows }
}

/// Resamples one axis of a plane stored row-major `(rows, cols)`.
/// When `along_rows` is true the row count changes, otherwise the columns.
fn resample_axis(src: &[f64], rows: usize, cols: usize, table: &TapTable, along_rows: bool) -> Vec<f64> {
    let in_size = if along_rows { rows } else { cols };
    let (out_rows, out_cols) = if along_rows { (table.rows.len(), cols) } else { (rows, table.rows.len()) };
    let mut out = vec![0.0; out_rows * out_cols];
    for (oi, (left, weights)) in table.rows.iter().enumerate() {
        for (t, &w) in weights.iter().enumerate().take(table.taps) {
            if w == 0.0 {
                continue;
            }
            let idx = (left + t as isize).clamp(0, in_size as isize - 1) as usize;
            if along_rows {
                let src_row = &src[idx * cols..(idx + 1) * cols];
                let dst_row = &mut out[oi * cols..(oi + 1) * cols];
                for (d, &s) in dst_row.iter_mut().zip(src_row) {
                    *d += w * s;
                }
            } else {
                for r in 0..rows {
                    out[r * out_cols + oi] += w * src[r * cols + idx];
                }
            }
        }
    }
    out
}

fn resize_with_kernel<S: Scalar>(img: &Tensor<S>, factor: f64, kernel: ResampleKernel) -> Result<Tensor<S>> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Arg(format!("resize factor must be positive and finite, got {factor}")));
    }
    let out_h = (factor * img.h() as f64).round() as usize;
    let out_w = (factor * img.w() as f64).round() as usize;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Arg(format!(
            "resize factor {factor} collapses {}x{} to zero size",
            img.h(),
            img.w()
        )));
    }
    let row_table = tap_table(out_h, factor, kernel);
    let col_table = tap_table(out_w, factor, kernel);
    let mut out = Tensor::zeros(img.n(), img.c(), out_h, out_w);
    for n in 0..img.n() {
        for c in 0..img.c() {
            let plane: Vec<f64> = img.plane(n, c).iter().map(|&v| Scalar::to_f64(v)).collect();
            let tmp = resample_axis(&plane, img.h(), img.w(), &row_table, true);
            let done = resample_axis(&tmp, out_h, img.w(), &col_table, false);
            let start = out.idx(n, c, 0, 0);
            for (dst, &v) in out.data_mut()[start..start + out_h * out_w].iter_mut().zip(&done) {
                *dst = S::from_f64(v);
            }
        }
    }
    Ok(out)
}

/// Separable resampling with the cubic convolution kernel (a = -0.5),
/// antialiased on downscale. Output dims are `round(factor * input dims)`.
pub fn bicubic_resize<S: Scalar>(img: &Tensor<S>, factor: f64) -> Result<Tensor<S>> {
    resize_with_kernel(img, factor, ResampleKernel::Cubic)
}

/// Separable tent-kernel resampling, antialiased on downscale.
pub fn bilinear_resize<S: Scalar>(img: &Tensor<S>, factor: f64) -> Result<Tensor<S>> {
    resize_with_kernel(img, factor, ResampleKernel::Linear)
}

/// Regular-grid crop positions with a trailing window snapped to the edge
/// so the whole extent is covered.
fn grid_positions(size: usize, patch: usize, stride: usize, offset: usize) -> Vec<usize> {
    let mut pos = Vec::new();
    let mut at = offset;
    while at + patch <= size {
        pos.push(at);
        at += stride;
    }
    let last = size - patch;
    if pos.last() != Some(&last) {
        pos.push(last);
    }
    pos
}

/// Cuts `img` into patch_size x patch_size crops on a regular grid with the
/// given stride, snapping the final row/column of windows to the image edge.
/// `jitter_seed` optionally offsets the grid origin (deterministically).
pub fn crop_patches<S: Scalar>(img: &Tensor<S>, patch_size: usize, stride: usize, jitter_seed: Option<u64>) -> Result<Vec<Tensor<S>>> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::Arg("patch size and stride must be positive".into()));
    }
    if img.h() < patch_size || img.w() < patch_size {
        return Err(Error::Arg(format!(
            "image {}x{} smaller than patch size {patch_size}",
            img.h(),
            img.w()
        )));
    }
    let (off_y, off_x) = match jitter_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (rng.gen_range(0..stride), rng.gen_range(0..stride))
        }
        None => (0, 0),
    };
    let ys = grid_positions(img.h(), patch_size, stride, off_y.min(img.h() - patch_size));
    let xs = grid_positions(img.w(), patch_size, stride, off_x.min(img.w() - patch_size));
    let mut patches = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            patches.push(Tensor::from_fn(img.n(), img.c(), patch_size, patch_size, |n, c, i, j| {
                img.at(n, c, y + i, x + j)
            }));
        }
    }
    Ok(patches)
}

fn rot90ccw<S: Scalar>(img: &Tensor<S>) -> Tensor<S> {
    Tensor::from_fn(img.n(), img.c(), img.w(), img.h(), |n, c, i, j| img.at(n, c, j, img.w() - 1 - i))
}

fn flip_horizontal<S: Scalar>(img: &Tensor<S>) -> Tensor<S> {
    Tensor::from_fn(img.n(), img.c(), img.h(), img.w(), |n, c, i, j| img.at(n, c, i, img.w() - 1 - j))
}

/// Applies one of the 8 rotation/flip combinations: the low two bits select
/// a counter-clockwise rotation by 90 degrees that many times, bit 2 then
/// mirrors horizontally. Pure pixel permutation, no resampling.
pub fn augment<S: Scalar>(patch: &Tensor<S>, code: u8) -> Result<Tensor<S>> {
    if code > 7 {
        return Err(Error::Arg(format!("augment code must be 0..=7, got {code}")));
    }
    let mut out = patch.clone();
    for _ in 0..(code & 3) {
        out = rot90ccw(&out);
    }
    if code & 4 != 0 {
        out = flip_horizontal(&out);
    }
    Ok(out)
}

/// Cuts every listed image into HR patches (optionally augmented with all
/// 8 codes) and pairs each with its bicubic-downscaled LR counterpart.
/// Images smaller than the patch size are skipped with a warning record.
/// The final pair order is shuffled deterministically by `spec.seed`.
pub fn make_pairs(spec: &DatasetSpec) -> Result<DatasetBuild> {
    if !spec.patch_size.is_multiple_of(spec.scale) {
        return Err(Error::Config(format!(
            "patch size {} not divisible by scale {}",
            spec.patch_size, spec.scale
        )));
    }
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for path in &spec.image_paths {
        let hr_image = load_image(path, spec.channels)?;
        if hr_image.h() < spec.patch_size || hr_image.w() < spec.patch_size {
            skipped.push((
                path.clone(),
                format!(
                    "image {}x{} smaller than patch size {}",
                    hr_image.h(),
                    hr_image.w(),
                    spec.patch_size
                ),
            ));
            continue;
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let patches = crop_patches(&hr_image, spec.patch_size, spec.patch_stride, None)?;
        let codes: &[u8] = if spec.augment { &[0, 1, 2, 3, 4, 5, 6, 7] } else { &[0] };
        for (pi, patch) in patches.iter().enumerate() {
            for &code in codes {
                let hr = augment(patch, code)?;
                let lr = bicubic_resize(&hr, 1.0 / spec.scale as f64)?;
                samples.push(ImageSample {
                    hr,
                    lr,
                    scale: spec.scale,
                    source_id: format!("{stem}:p{pi}:a{code}"),
                });
            }
        }
    }
    // deterministic order under the dataset seed
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in (1..samples.len()).rev() {
        let j = rng.gen_range(0..=i);
        samples.swap(i, j);
    }
    Ok(DatasetBuild { samples, skipped })
}

/// Loads an 8-bit PNG as a `(1, channels, h, w)` tensor scaled to [0, 1].
/// Grayscale files replicate to 3 channels when `channels == 3`.
pub fn load_image(path: &Path, channels: usize) -> Result<Tensor<f32>> {
    let dynimg = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    use image::DynamicImage as D;
    match &dynimg {
        D::ImageLuma8(_) | D::ImageLumaA8(_) | D::ImageRgb8(_) | D::ImageRgba8(_) => {}
        _ => {
            return Err(Error::Config(format!(
                "{}: only 8-bit grayscale or RGB images are supported",
                path.display()
            )))
        }
    }
    match channels {
        1 => {
            if matches!(&dynimg, D::ImageRgb8(_) | D::ImageRgba8(_)) {
                return Err(Error::Config(format!(
                    "{}: cannot load a color image with channels=1",
                    path.display()
                )));
            }
            let gray = dynimg.to_luma8();
            let (w, h) = gray.dimensions();
            Ok(Tensor::from_fn(1, 1, h as usize, w as usize, |_, _, i, j| {
                f32::from(gray.get_pixel(j as u32, i as u32).0[0]) / 255.0
            }))
        }
        3 => {
            let rgb = dynimg.to_rgb8();
            let (w, h) = rgb.dimensions();
            Ok(Tensor::from_fn(1, 3, h as usize, w as usize, |_, c, i, j| {
                f32::from(rgb.get_pixel(j as u32, i as u32).0[c]) / 255.0
            }))
        }
        other => Err(Error::Config(format!("channels must be 1 or 3, got {other}"))),
    }
}

/// Saves a `(1, 1|3, h, w)` tensor as an 8-bit PNG. Values are clamped to
/// [0, 1] and quantized round-half-up.
pub fn save_image(img: &Tensor<f32>, path: &Path) -> Result<()> {
    if img.n() != 1 {
        return Err(Error::Shape(format!(
            "save_image expects a single image, got batch of {}",
            img.n()
        )));
    }
    let quantize = |v: f32| -> u8 { (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8 };
    let (h, w) = (img.h() as u32, img.w() as u32);
    let result = match img.c() {
        1 => {
            let buf: Vec<u8> = img.plane(0, 0).iter().map(|&v| quantize(v)).collect();
            image::GrayImage::from_raw(w, h, buf)
                .expect("sized buffer")
                .save_with_format(path, image::ImageFormat::Png)
        }
        3 => {
            let mut buf = Vec::with_capacity((w * h * 3) as usize);
            for i in 0..img.h() {
                for j in 0..img.w() {
                    for c in 0..3 {
                        buf.push(quantize(img.at(0, c, i, j)));
                    }
                }
            }
            image::RgbImage::from_raw(w, h, buf)
                .expect("sized buffer")
                .save_with_format(path, image::ImageFormat::Png)
        }
        other => return Err(Error::Shape(format!("save_image expects 1 or 3 channels, got {other}"))),
    };
    result.map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// BT.601 RGB -> YCbCr (digital form) for inputs on [0, 1]; the output
/// stays on the [0, 1] scale (the 0-255 digital form divided by 255).
pub fn rgb_to_ycbcr<S: Scalar>(img: &Tensor<S>) -> Result<Tensor<S>> {
    if img.c() != 3 {
        return Err(Error::Shape(format!("rgb_to_ycbcr expects 3 channels, got {}", img.c())));
    }
    let mut out = Tensor::zeros(img.n(), 3, img.h(), img.w());
    for n in 0..img.n() {
        for i in 0..img.h() {
            for j in 0..img.w() {
                let r = img.at(n, 0, i, j).to_f64();
                let g = img.at(n, 1, i, j).to_f64();
                let b = img.at(n, 2, i, j).to_f64();
                let y = (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
                let cb = (128.0 - 37.797 * r - 74.203 * g + 112.0 * b) / 255.0;
                let cr = (128.0 + 112.0 * r - 93.786 * g - 18.214 * b) / 255.0;
                out.set(n, 0, i, j, S::from_f64(y));
                out.set(n, 1, i, j, S::from_f64(cb));
                out.set(n, 2, i, j, S::from_f64(cr));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(1, 1, h, w, |_, _, i, j| (i * w + j) as f64 / (h * w) as f64)
    }

    #[test]
    fn constant_image_survives_any_factor() {
        let img = Tensor::filled(1, 2, 8, 8, 0.37f64);
        for factor in [0.25, 1.0 / 3.0, 0.5, 1.0, 2.0, 3.0] {
            for out in [bicubic_resize(&img, factor).unwrap(), bilinear_resize(&img, factor).unwrap()] {
                for &v in out.data() {
                    assert!((v - 0.37).abs() < 1e-12, "factor {factor}: {v}");
                }
            }
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let img = ramp(7, 9);
        let out = bicubic_resize(&img, 1.0).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nonpositive_factor_is_error() {
        let img = ramp(4, 4);
        assert!(bicubic_resize(&img, 0.0).is_err());
        assert!(bicubic_resize(&img, -2.0).is_err());
        assert!(bilinear_resize(&img, f64::NAN).is_err());
    }

    #[test]
    fn bilinear_2x_checkerboard_matches_hand_weights() {
        // 2x2 checkerboard upscaled 2x with the tent kernel and the
        // half-pixel mapping u = (i + 0.5)/2 - 0.5: outputs sit at
        // u in {-0.25, 0.25, 0.75, 1.25}, so interior weights are 3/4, 1/4.
        let img = Tensor::from_vec(1, 1, 2, 2, vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let out = bilinear_resize(&img, 2.0).unwrap();
        assert_eq!((out.h(), out.w()), (4, 4));
        // row 0: source row is clamped row 0 = [1, 0]
        let want_row0 = [1.0, 0.75, 0.25, 0.0];
        for (j, want) in want_row0.iter().enumerate() {
            assert!((out.at(0, 0, 0, j) - want).abs() < 1e-12, "col {j}");
        }
        // row 1 blends rows 0 and 1 with 3/4, 1/4
        let want_row1 = [0.75, 0.625, 0.375, 0.25];
        for (j, want) in want_row1.iter().enumerate() {
            assert!((out.at(0, 0, 1, j) - want).abs() < 1e-12, "col {j}");
        }
    }

    #[test]
    fn monotone_row_overshoot_is_bounded() {
        // cubic overshoot on a monotone ramp stays within 0.25 of the range
        let img = ramp(8, 8);
        let lo = 0.0 - 0.25;
        let hi = 1.0 + 0.25;
        for factor in [0.5, 2.0] {
            let out = bicubic_resize(&img, factor).unwrap();
            for &v in out.data() {
                assert!(v > lo && v < hi);
            }
        }
    }

    #[test]
    fn down_then_up_roundtrip_on_smooth_image_is_close() {
        let img = Tensor::from_fn(1, 1, 32, 32, |_, _, i, j| {
            0.5 + 0.3 * ((i as f64) / 10.0).sin() * ((j as f64) / 12.0).cos()
        });
        let down = bicubic_resize(&img, 0.5).unwrap();
        let up = bicubic_resize(&down, 2.0).unwrap();
        for (a, b) in up.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn crop_exact_fit_returns_whole_image() {
        let img = ramp(96, 96);
        let patches = crop_patches(&img, 96, 96, None).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0], img);
    }

    #[test]
    fn crop_tiles_without_overlap() {
        let img = ramp(192, 192);
        let patches = crop_patches(&img, 96, 96, None).unwrap();
        assert_eq!(patches.len(), 4);
        assert_eq!(patches[0].at(0, 0, 0, 0), img.at(0, 0, 0, 0));
        assert_eq!(patches[3].at(0, 0, 0, 0), img.at(0, 0, 96, 96));
    }

    #[test]
    fn crop_snaps_trailing_window_to_edge() {
        let img = ramp(100, 100);
        let patches = crop_patches(&img, 96, 48, None).unwrap();
        // positions {0, 4} x {0, 4}
        assert_eq!(patches.len(), 4);
        assert_eq!(patches[1].at(0, 0, 0, 0), img.at(0, 0, 0, 4));
        assert_eq!(patches[2].at(0, 0, 0, 0), img.at(0, 0, 4, 0));
    }

    #[test]
    fn crop_smaller_than_patch_is_error() {
        let img = ramp(50, 100);
        assert!(crop_patches(&img, 96, 96, None).is_err());
    }

    fn asymmetric_patch() -> Tensor<f64> {
        Tensor::from_vec(1, 1, 3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap()
    }

    #[test]
    fn augment_identity_and_rotation_order() {
        let p = asymmetric_patch();
        assert_eq!(augment(&p, 0).unwrap(), p);
        let mut four = p.clone();
        for _ in 0..4 {
            four = augment(&four, 1).unwrap();
        }
        assert_eq!(four, p);
        let double_flip = augment(&augment(&p, 4).unwrap(), 4).unwrap();
        assert_eq!(double_flip, p);
    }

    #[test]
    fn augment_codes_are_all_distinct() {
        let p = asymmetric_patch();
        let variants: Vec<Tensor<f64>> = (0..8).map(|c| augment(&p, c).unwrap()).collect();
        for i in 0..8 {
            for j in (i + 1)..8 {
                assert_ne!(variants[i], variants[j], "codes {i} and {j} collide");
            }
        }
        assert!(augment(&p, 8).is_err());
    }

    #[test]
    fn augment_codes_form_a_closed_group_of_order_8() {
        let p = asymmetric_patch();
        let variants: Vec<Tensor<f64>> = (0..8u8).map(|c| augment(&p, c).unwrap()).collect();
        let find = |t: &Tensor<f64>| -> Option<u8> { variants.iter().position(|v| v == t).map(|i| i as u8) };
        let mut table = [[255u8; 8]; 8];
        for a in 0..8u8 {
            for b in 0..8u8 {
                let composed = augment(&variants[a as usize], b).unwrap();
                let c = find(&composed).expect("composition stays inside the set");
                table[a as usize][b as usize] = c;
            }
        }
        // group structure: rows and columns are permutations, identity and
        // inverses exist
        for (a, row_vals) in table.iter().enumerate() {
            let mut row: Vec<u8> = row_vals.to_vec();
            row.sort_unstable();
            assert_eq!(row, (0..8).collect::<Vec<u8>>(), "row {a} not a permutation");
            let mut col: Vec<u8> = (0..8).map(|b| table[b][a]).collect();
            col.sort_unstable();
            assert_eq!(col, (0..8).collect::<Vec<u8>>(), "col {a} not a permutation");
            assert_eq!(row_vals[0], a as u8, "0 must be the identity");
            assert!(row_vals.contains(&0), "{a} has no inverse");
        }
    }

    #[test]
    fn ycbcr_anchor_values() {
        let black = Tensor::from_vec(1, 3, 1, 1, vec![0.0f64, 0.0, 0.0]).unwrap();
        let y = rgb_to_ycbcr(&black).unwrap();
        assert!((y.at(0, 0, 0, 0) - 16.0 / 255.0).abs() < 1e-12);

        let white = Tensor::from_vec(1, 3, 1, 1, vec![1.0f64, 1.0, 1.0]).unwrap();
        let y = rgb_to_ycbcr(&white).unwrap();
        assert!((y.at(0, 0, 0, 0) - 235.0 / 255.0).abs() < 1e-12);

        let gray = Tensor::from_vec(1, 3, 1, 1, vec![0.42f64, 0.42, 0.42]).unwrap();
        let y = rgb_to_ycbcr(&gray).unwrap();
        assert!((y.at(0, 1, 0, 0) - 128.0 / 255.0).abs() < 1e-12);
        assert!((y.at(0, 2, 0, 0) - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip_and_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        // exactly 8-bit-representable values round-trip bitwise
        let img = Tensor::from_fn(1, 3, 5, 4, |_, c, i, j| ((c * 40 + i * 9 + j * 3) % 256) as f32 / 255.0);
        save_image(&img, &path).unwrap();
        let back = load_image(&path, 3).unwrap();
        assert_eq!(back, img);

        // clamping and round-half-up
        let hot = Tensor::from_vec(1, 1, 1, 3, vec![1.5f32, 0.5, -0.2]).unwrap();
        let p2 = dir.path().join("q.png");
        save_image(&hot, &p2).unwrap();
        let back = load_image(&p2, 1).unwrap();
        assert_eq!(back.data()[0], 1.0); // 255
        assert_eq!(back.data()[1], 128.0 / 255.0); // round(127.5) = 128
        assert_eq!(back.data()[2], 0.0);
    }

    #[test]
    fn grayscale_png_replicates_to_rgb_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = Tensor::from_fn(1, 1, 4, 4, |_, _, i, j| ((i * 4 + j) * 16) as f32 / 255.0);
        save_image(&img, &path).unwrap();
        let rgb = load_image(&path, 3).unwrap();
        assert_eq!(rgb.c(), 3);
        for c in 0..3 {
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(rgb.at(0, c, i, j), img.at(0, 0, i, j));
                }
            }
        }
    }

    #[test]
    fn load_missing_file_reports_path() {
        let err = load_image(Path::new("/nonexistent/x.png"), 3).unwrap_err();
        assert!(err.to_string().contains("x.png"));
    }

    #[test]
    fn make_pairs_shapes_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::from_fn(1, 3, 96, 96, |_, _, _, _| rng.gen_range(0.0f32..1.0));
        let path = dir.path().join("a.png");
        save_image(&img, &path).unwrap();

        let mut spec = DatasetSpec::new(vec![path.clone()], 2);
        spec.patch_size = 48;
        spec.patch_stride = 48;
        let build = make_pairs(&spec).unwrap();
        assert_eq!(build.samples.len(), 4);
        for s in &build.samples {
            assert_eq!((s.hr.h(), s.hr.w()), (48, 48));
            assert_eq!((s.lr.h(), s.lr.w()), (24, 24));
        }
        // scale 3 gives 32x32 LR patches from 96
        let spec3 = DatasetSpec::new(vec![path.clone()], 3);
        let build3 = make_pairs(&spec3).unwrap();
        assert_eq!(build3.samples.len(), 1);
        assert_eq!((build3.samples[0].lr.h(), build3.samples[0].lr.w()), (32, 32));

        let again = make_pairs(&spec).unwrap();
        let ids: Vec<&str> = build.samples.iter().map(|s| s.source_id.as_str()).collect();
        let ids2: Vec<&str> = again.samples.iter().map(|s| s.source_id.as_str()).collect();
        assert_eq!(ids, ids2);
    }

    #[test]
    fn make_pairs_constant_patch_gives_constant_lr() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::filled(1, 3, 96, 96, 100.0 / 255.0);
        let path = dir.path().join("c.png");
        save_image(&img, &path).unwrap();
        let build = make_pairs(&DatasetSpec::new(vec![path], 2)).unwrap();
        for &v in build.samples[0].lr.data() {
            assert!((v - 100.0 / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn make_pairs_skips_small_images_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let small = Tensor::filled(1, 3, 32, 32, 0.5f32);
        let p1 = dir.path().join("small.png");
        save_image(&small, &p1).unwrap();
        let big = Tensor::filled(1, 3, 96, 96, 0.5f32);
        let p2 = dir.path().join("big.png");
        save_image(&big, &p2).unwrap();
        let build = make_pairs(&DatasetSpec::new(vec![p1.clone(), p2], 2)).unwrap();
        assert_eq!(build.samples.len(), 1);
        assert_eq!(build.skipped.len(), 1);
        assert_eq!(build.skipped[0].0, p1);
    }

    #[test]
    fn augmented_pairs_expand_eightfold() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::from_fn(1, 3, 96, 96, |_, _, _, _| rng.gen_range(0.0f32..1.0));
        let path = dir.path().join("a.png");
        save_image(&img, &path).unwrap();
        let mut spec = DatasetSpec::new(vec![path], 2);
        spec.augment = true;
        let build = make_pairs(&spec).unwrap();
        assert_eq!(build.samples.len(), 8);
    }

    /// Deterministic pseudo-random fixture, identical across languages.
    fn lcg_matrix(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut state = seed;
        Tensor::from_fn(1, 1, h, w, |_, _, _, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64
        })
    }

    #[test]
    fn bicubic_matches_frozen_matlab_reference_values() {
        // anchors computed with an independent implementation of the
        // MATLAB imresize "contributions" algorithm
        let ramp8 = Tensor::from_fn(1, 1, 8, 8, |_, _, i, j| (i * 8 + j) as f64 / 64.0);
        let got = bicubic_resize(&ramp8, 0.5).unwrap();
        let want = [
            0.0714111328125, 0.10235595703125, 0.13397216796875, 0.1649169921875,
            0.3189697265625, 0.34991455078125, 0.38153076171875, 0.4124755859375,
            0.5718994140625, 0.60284423828125, 0.63446044921875, 0.6654052734375,
            0.8194580078125, 0.85040283203125, 0.88201904296875, 0.9129638671875,
        ];
        assert_eq!((got.h(), got.w()), (4, 4));
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }

        let checker8 = Tensor::from_fn(1, 1, 8, 8, |_, _, i, j| ((i + j) % 2) as f64);
        let up = bicubic_resize(&checker8, 2.0).unwrap();
        let want_row0 = [
            -0.1505126953125, 0.1881103515625, 0.9188232421875, 0.89208984375,
            0.10791015625, 0.10791015625, 0.89208984375, 0.89208984375,
            0.10791015625, 0.10791015625, 0.89208984375, 0.89208984375,
            0.10791015625, 0.0811767578125, 0.8118896484375, 1.1505126953125,
        ];
        let want_row3 = [
            0.89208984375, 0.68798828125, 0.24755859375, 0.263671875,
            0.736328125, 0.736328125, 0.263671875, 0.263671875,
            0.736328125, 0.736328125, 0.263671875, 0.263671875,
            0.736328125, 0.75244140625, 0.31201171875, 0.10791015625,
        ];
        for j in 0..16 {
            assert!((up.at(0, 0, 0, j) - want_row0[j]).abs() < 1e-12, "row0 col {j}");
            assert!((up.at(0, 0, 3, j) - want_row3[j]).abs() < 1e-12, "row3 col {j}");
        }

        let up3 = bicubic_resize(&ramp8, 3.0).unwrap();
        let want_row5 = [
            0.16550925925925922, 0.16666666666666663, 0.17071759259259256, 0.17650462962962957,
            0.18229166666666663, 0.18749999999999997, 0.19270833333333331, 0.19791666666666663,
            0.20312499999999997, 0.20833333333333331, 0.21354166666666663, 0.21874999999999997,
            0.2239583333333333, 0.22916666666666663, 0.23437499999999994, 0.23958333333333331,
            0.24479166666666663, 0.24999999999999994, 0.25520833333333326, 0.26041666666666663,
            0.26620370370370366, 0.2719907407407407, 0.27604166666666663, 0.27719907407407407,
        ];
        for (j, want) in want_row5.iter().enumerate() {
            assert!((up3.at(0, 0, 5, j) - want).abs() < 1e-12, "col {j}");
        }

        let rand16 = lcg_matrix(16, 16, 12345);
        assert!((rand16.at(0, 0, 0, 0) - 0.10957860574126244).abs() < 1e-15);
        assert!((rand16.at(0, 0, 0, 1) - 0.2653852957300842).abs() < 1e-15);

        let down3 = bicubic_resize(&rand16, 1.0 / 3.0).unwrap();
        let want3 = [
            0.5069837622571467, 0.3925293759542797, 0.4279446651695067, 0.5120718543821738, 0.512921112441486,
            0.5419152228470002, 0.49327999378022647, 0.49993023350745414, 0.5575347898773266, 0.6132882862118897,
            0.5210861424262389, 0.6000437145569952, 0.4035950737181756, 0.5925977044593899, 0.5353645669894551,
            0.34657631490646157, 0.6046015529085226, 0.401284824363161, 0.4780282133981821, 0.5244646975177248,
            0.5505424053024944, 0.5539103190778277, 0.4438202744379646, 0.33724733131371726, 0.5661465615405864,
        ];
        assert_eq!((down3.h(), down3.w()), (5, 5));
        for (a, b) in down3.data().iter().zip(&want3) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }

        let down4 = bicubic_resize(&rand16, 0.25).unwrap();
        let want4 = [
            0.5030218452855965, 0.4032763114970692, 0.5051664625016408, 0.49545660242019984,
            0.5418073617753248, 0.5059444315223257, 0.584613721102969, 0.5054888276421958,
            0.4628743595203697, 0.5013150068657259, 0.45445609539434717, 0.5234922379516911,
            0.514329674926884, 0.48559733936358696, 0.38763432588306845, 0.5626474700663815,
        ];
        for (a, b) in down4.data().iter().zip(&want4) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn bilinear_matches_frozen_matlab_reference_values() {
        let rand16 = lcg_matrix(16, 16, 12345);
        let got = bilinear_resize(&rand16, 0.5).unwrap();
        let want = [
            0.3843502708550659, 0.5539837860342232, 0.35215133366000373, 0.4789967022516066,
            0.5611220039209002, 0.6131990936191869, 0.5048512799330638, 0.431184387729445,
            0.5541559025950846, 0.5970423308608588, 0.358037948513811, 0.3081995248430758,
            0.4214544367787312, 0.3926203351074946, 0.4759106508863624, 0.538895185723959,
            0.45241461544355843, 0.5491428390450892, 0.4902330575787346, 0.5653847865978605,
            0.6162424099384225, 0.657776454827399, 0.6732000472329673, 0.43331693602522137,
            0.49748815013299463, 0.6254060439241584, 0.5630404913899838, 0.39646864906535484,
            0.4934937864745734, 0.6235307582755922, 0.5865134887062595, 0.3132242350257002,
            0.4743986358080292, 0.4471589065869921, 0.6771129816552275, 0.37484507190674776,
            0.4314709357568063, 0.5225559430618887, 0.5361273466187413, 0.471430215278815,
            0.2741637844737852, 0.4908043500399799, 0.6185422086637118, 0.32361341152136447,
            0.5354447311547119, 0.4297162462680717, 0.5183793373871595, 0.5714180253708037,
            0.516741759958677, 0.6700637887042831, 0.5316157328052213, 0.40237849231925793,
            0.5258832840045216, 0.29173651675955625, 0.5221318816111307, 0.698537668424251,
            0.5171962293170509, 0.3789538862547488, 0.49867927245941246, 0.4789555022289278,
            0.3869038259217632, 0.35013197442458477, 0.5616086035370245, 0.5155443322801148,
        ];
        assert_eq!((got.h(), got.w()), (8, 8));
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// resamplers keep values within the input range plus the documented
        /// cubic overshoot allowance (0.25 of the local range)
        #[test]
        fn resample_range_is_bounded(seed in 0u64..500, up in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Tensor::from_fn(1, 1, 12, 12, |_, _, _, _| rng.gen_range(0.0f64..1.0));
            let factor = if up { 2.0 } else { 0.5 };
            let out = bicubic_resize(&img, factor).unwrap();
            let (lo, hi) = (-0.25, 1.25);
            for &v in out.data() {
                prop_assert!(v > lo && v < hi);
            }
        }

        /// grid positions always cover the full extent
        #[test]
        fn grid_covers_extent(size in 8usize..64, patch in 4usize..8, stride in 1usize..9) {
            prop_assume!(patch <= size);
            let pos = grid_positions(size, patch, stride, 0);
            prop_assert_eq!(*pos.last().unwrap(), size - patch);
            prop_assert_eq!(pos[0], 0);
            for w in pos.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }
    }
}
