//! Handcrafted single-channel feature maps used as ablation inputs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{reflect_index, Image};
use crate::scatter::bank::gaussian_taps;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureMapKind {
    Hog,
    Canny,
    Gre,
    Haar,
    /// Handled by the scattering bridge, not by [`FeatureParams::apply`].
    Wst,
}

impl FeatureMapKind {
    pub const HANDCRAFTED: [FeatureMapKind; 4] = [Self::Hog, Self::Canny, Self::Gre, Self::Haar];

    pub fn name(self) -> &'static str {
        match self {
            Self::Hog => "HOG",
            Self::Canny => "Canny",
            Self::Gre => "GRE",
            Self::Haar => "HAAR",
            Self::Wst => "WST",
        }
    }
}

impl fmt::Display for FeatureMapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hog" => Ok(Self::Hog),
            "canny" => Ok(Self::Canny),
            "gre" => Ok(Self::Gre),
            "haar" => Ok(Self::Haar),
            "wst" => Ok(Self::Wst),
            _ => Err(Error::InvalidArgument(format!("unknown feature kind {s:?}"))),
        }
    }
}

/// Operator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureParams {
    pub hog_cell: usize,
    pub hog_bins: usize,
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub gre_sigma: f64,
    pub haar_scale: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            hog_cell: 8,
            hog_bins: 9,
            canny_sigma: 1.4,
            canny_low: 0.1,
            canny_high: 0.2,
            gre_sigma: 2.0,
            haar_scale: 8,
        }
    }
}

impl FeatureParams {
    pub fn apply(&self, kind: FeatureMapKind, img: &Image) -> Result<Image> {
        match kind {
            FeatureMapKind::Hog => hog_map(img, self.hog_cell, self.hog_bins),
            FeatureMapKind::Canny => canny_map(img, self.canny_sigma, self.canny_low, self.canny_high),
            FeatureMapKind::Gre => gre_map(img, self.gre_sigma),
            FeatureMapKind::Haar => haar_map(img, self.haar_scale),
            FeatureMapKind::Wst => Err(Error::InvalidArgument(
                "WST features come from the scattering bridge".into(),
            )),
        }
    }

    /// One-line `key=value` description.
    pub fn describe(&self) -> String {
        format!(
            "hog_cell={} hog_bins={} canny_sigma={} canny_low={} canny_high={} gre_sigma={} haar_scale={}",
            self.hog_cell, self.hog_bins, self.canny_sigma, self.canny_low, self.canny_high, self.gre_sigma, self.haar_scale
        )
    }
}

/// Separable reflective Gaussian blur, truncated at `3 sigma`.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let taps = gaussian_taps(sigma, (3.0 * sigma).ceil() as usize);
    let (h, w) = img.dims();
    Ok(Image::from_raw_unchecked(h, w, crate::scatter::engine::lowpass(img.pixels(), h, w, &taps)))
}

/// Central differences with reflection: `(d/dx, d/dy)`.
fn central_gradients(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = img.dims();
    let p = img.pixels();
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        let up = reflect_index(y as isize - 1, h);
        let down = reflect_index(y as isize + 1, h);
        for x in 0..w {
            let l = reflect_index(x as isize - 1, w);
            let r = reflect_index(x as isize + 1, w);
            gx[y * w + x] = 0.5 * (p[y * w + r] - p[y * w + l]);
            gy[y * w + x] = 0.5 * (p[down * w + x] - p[up * w + x]);
        }
    }
    (gx, gy)
}

/// Unsigned-orientation histogram bin of a gradient.
pub fn orientation_bin(gx: f64, gy: f64, bins: usize) -> usize {
    let angle = gy.atan2(gx).rem_euclid(PI);
    ((angle / PI * bins as f64).floor() as usize).min(bins - 1)
}

/// Magnitude-weighted orientation histograms per cell, row-major over cells.
pub fn hog_histograms(img: &Image, cell: usize, bins: usize) -> Result<Vec<Vec<f64>>> {
    let (h, w) = img.dims();
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("HOG needs at least 2 bins, got {bins}")));
    }
    if cell == 0 || cell > h || cell > w {
        return Err(Error::InvalidArgument(format!("HOG cell {cell} does not fit a {h}x{w} image")));
    }
    if h % cell != 0 || w % cell != 0 {
        return Err(Error::Dimensions(format!("HOG cell {cell} does not divide {h}x{w}")));
    }
    let (gx, gy) = central_gradients(img);
    let cw = w / cell;
    let mut hist = vec![vec![0.0; bins]; (h / cell) * cw];
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (gx[y * w + x], gy[y * w + x]);
            let m = (a * a + b * b).sqrt();
            if m > 0.0 {
                hist[(y / cell) * cw + x / cell][orientation_bin(a, b, bins)] += m;
            }
        }
    }
    Ok(hist)
}

/// Per-pixel energy of the dominant orientation bin of its cell, after L2
/// normalization over the 2x2 cell block anchored at that cell (shifted
/// inward at the last row/column of cells).
pub fn hog_map(img: &Image, cell: usize, bins: usize) -> Result<Image> {
    let hist = hog_histograms(img, cell, bins)?;
    let (h, w) = img.dims();
    let (ch, cw) = (h / cell, w / cell);
    let mut energy = vec![0.0; ch * cw];
    for cy in 0..ch {
        for cx in 0..cw {
            let by = cy.min(ch.saturating_sub(2));
            let bx = cx.min(cw.saturating_sub(2));
            let mut norm2 = 0.0;
            for yy in by..(by + 2).min(ch) {
                for xx in bx..(bx + 2).min(cw) {
                    norm2 += hist[yy * cw + xx].iter().map(|v| v * v).sum::<f64>();
                }
            }
            let peak = hist[cy * cw + cx].iter().cloned().fold(0.0, f64::max);
            energy[cy * cw + cx] = if norm2 > 0.0 { peak / norm2.sqrt() } else { 0.0 };
        }
    }
    Ok(Image::from_fn(h, w, |y, x| energy[(y / cell) * cw + x / cell]))
}

fn sobel(img: &Image) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = img.dims();
    let p = img.pixels();
    let at = |y: isize, x: isize| p[reflect_index(y, h) * w + reflect_index(x, w)];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            gy[i] = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        }
    }
    (gx, gy)
}

/// Binary Canny edge map; thresholds are fractions of the peak gradient
/// magnitude.
pub fn canny_map(img: &Image, sigma: f64, low: f64, high: f64) -> Result<Image> {
    if !(0.0 < low && low < high && high < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Canny thresholds need 0 < low < high < 1, got {low} / {high}"
        )));
    }
    let smooth = gaussian_blur(img, sigma)?;
    let (h, w) = img.dims();
    let (gx, gy) = sobel(&smooth);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![0.0; h * w];
    if peak <= 1e-12 {
        return Ok(Image::from_raw_unchecked(h, w, out));
    }
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    // 0: E-W neighbours, 1: NE-SW, 2: N-S, 3: NW-SE (y grows downward)
    let mut thin = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).rem_euclid(PI);
            let sector = ((angle + PI / 8.0) / (PI / 4.0)).floor() as usize % 4;
            let (dy, dx) = match sector {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            let (yi, xi) = (y as isize, x as isize);
            let ahead = at(yi + dy, xi + dx);
            let behind = at(yi - dy, xi - dx);
            // strict on one side so a symmetric ridge keeps a single pixel
            if m >= behind && m > ahead {
                thin[i] = m;
            }
        }
    }
    let (lo, hi) = (low * peak, high * peak);
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| thin[i] >= hi).collect();
    for &i in &stack {
        out[i] = 1.0;
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && thin[j] >= lo {
                    out[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    Ok(Image::from_raw_unchecked(h, w, out))
}

/// Gradient magnitude of the Gaussian-smoothed image.
pub fn gre_map(img: &Image, sigma: f64) -> Result<Image> {
    let smooth = gaussian_blur(img, sigma)?;
    let (gx, gy) = central_gradients(&smooth);
    let (h, w) = img.dims();
    Ok(Image::from_raw_unchecked(
        h,
        w,
        gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect(),
    ))
}

/// Summed-area table with one row and column of leading zeros.
pub struct IntegralImage {
    width: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn new(img: &Image) -> Self {
        let (h, w) = img.dims();
        let mut table = vec![0.0; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += img.get(y, x);
                table[(y + 1) * (w + 1) + x + 1] = table[y * (w + 1) + x + 1] + row;
            }
        }
        Self { width: w, table }
    }

    /// Sum over rows `r0..r1` and columns `c0..c1` (half-open).
    pub fn rect_sum(&self, r0: usize, c0: usize, r1: usize, c1: usize) -> f64 {
        let s = self.width + 1;
        self.table[r1 * s + c1] - self.table[r0 * s + c1] - self.table[r1 * s + c0] + self.table[r0 * s + c0]
    }
}

/// Max of the absolute horizontal and vertical two-rectangle responses of a
/// `scale x scale` window centred on each pixel, each half normalized by its
/// area. The image is reflect-padded by `scale / 2`.
pub fn haar_map(img: &Image, scale: usize) -> Result<Image> {
    let (h, w) = img.dims();
    if scale < 2 || scale % 2 != 0 {
        return Err(Error::InvalidArgument(format!("Haar scale must be even and >= 2, got {scale}")));
    }
    if scale > h || scale > w {
        return Err(Error::InvalidArgument(format!("Haar scale {scale} exceeds the {h}x{w} image")));
    }
    let half = scale / 2;
    let (ph, pw) = (h + scale, w + scale);
    // responses only see differences; removing the floor keeps flat regions
    // exactly zero after summed-area subtraction
    let floor = img.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
    let padded = Image::from_fn(ph, pw, |y, x| {
        img.get(
            reflect_index(y as isize - half as isize, h),
            reflect_index(x as isize - half as isize, w),
        ) - floor
    });
    let ii = IntegralImage::new(&padded);
    let area = (scale * half) as f64;
    Ok(Image::from_fn(h, w, |y, x| {
        let (py, px) = (y + half, x + half);
        let (top, bottom, left, right) = (py - half, py + half, px - half, px + half);
        let horiz = (ii.rect_sum(top, left, bottom, px) - ii.rect_sum(top, px, bottom, right)) / area;
        let vert = (ii.rect_sum(top, left, py, right) - ii.rect_sum(py, left, bottom, right)) / area;
        horiz.abs().max(vert.abs())
    }))
}
