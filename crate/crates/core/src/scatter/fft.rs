//! 2-D FFT plumbing for the scattering convolutions.
//!
//! Spectra are kept in transposed (column-major) layout; every consumer only
//! multiplies spectra pointwise, so the layout never leaks out.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::image::reflect_index;

/// Smallest `n >= min` whose only prime factors are 2, 3 and 5.
pub fn smooth_size(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
    }

    /// Row-major `rows x cols` signal to transposed spectrum.
    pub fn forward(&self, mut data: Vec<Complex64>) -> Vec<Complex64> {
        debug_assert_eq!(data.len(), self.len());
        Self::run(&self.row_fwd, &mut data);
        let mut t = transpose(&data, self.rows, self.cols);
        Self::run(&self.col_fwd, &mut t);
        t
    }

    /// Transposed spectrum back to a row-major signal, normalized.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<Complex64> {
        debug_assert_eq!(spec.len(), self.len());
        Self::run(&self.col_inv, &mut spec);
        let mut data = transpose(&spec, self.cols, self.rows);
        Self::run(&self.row_inv, &mut data);
        let scale = 1.0 / self.len() as f64;
        for z in &mut data {
            *z *= scale;
        }
        data
    }
}

/// `src` is `rows x cols` row-major; returns `cols x rows` row-major.
fn transpose(src: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    const B: usize = 16;
    let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    dst
}

/// Geometry of one padded FFT convolution grid: an `h x w` plane reflect-padded
/// by `pad` and zero-filled up to `fft.rows() x fft.cols()`.
pub struct ConvGrid {
    pub h: usize,
    pub w: usize,
    pub pad: usize,
    pub fft: Fft2,
}

impl ConvGrid {
    pub fn new(h: usize, w: usize, pad: usize) -> Self {
        let rows = smooth_size(h + 2 * pad);
        let cols = smooth_size(w + 2 * pad);
        Self {
            h,
            w,
            pad,
            fft: Fft2::new(rows, cols),
        }
    }

    fn zero_grid(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.fft.len()]
    }

    /// Spectrum of the reflect-padded real plane.
    pub fn spectrum_of_plane(&self, plane: &[f64]) -> Vec<Complex64> {
        let (h, w, p) = (self.h, self.w, self.pad as isize);
        let cols = self.fft.cols();
        let mut buf = self.zero_grid();
        for y in 0..h + 2 * self.pad {
            let sr = reflect_index(y as isize - p, h);
            let row = &plane[sr * w..(sr + 1) * w];
            let dst = &mut buf[y * cols..y * cols + w + 2 * self.pad];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = Complex64::new(row[reflect_index(x as isize - p, w)], 0.0);
            }
        }
        self.fft.forward(buf)
    }

    /// Spectrum of a centred `(2r+1)^2` kernel placed with wrap-around.
    pub fn spectrum_of_kernel(&self, radius: usize, values: &[Complex64]) -> Vec<Complex64> {
        let (rows, cols) = (self.fft.rows(), self.fft.cols());
        let size = 2 * radius + 1;
        let r = radius as isize;
        let mut buf = self.zero_grid();
        for v in -r..=r {
            let gy = v.rem_euclid(rows as isize) as usize;
            for u in -r..=r {
                let gx = u.rem_euclid(cols as isize) as usize;
                buf[gy * cols + gx] = values[((v + r) as usize) * size + (u + r) as usize];
            }
        }
        self.fft.forward(buf)
    }

    /// Inverse transform and crop of the `h x w` valid block.
    pub fn crop(&self, spec: Vec<Complex64>) -> Vec<Complex64> {
        let cols = self.fft.cols();
        let data = self.fft.inverse(spec);
        let mut out = Vec::with_capacity(self.h * self.w);
        for i in 0..self.h {
            let start = (self.pad + i) * cols + self.pad;
            out.extend_from_slice(&data[start..start + self.w]);
        }
        out
    }

    /// Spectrum of an `h x w` complex gradient embedded at the crop location.
    pub fn spectrum_of_grad(&self, grad: &[Complex64]) -> Vec<Complex64> {
        let cols = self.fft.cols();
        let mut buf = self.zero_grid();
        for i in 0..self.h {
            let start = (self.pad + i) * cols + self.pad;
            buf[start..start + self.w].copy_from_slice(&grad[i * self.w..(i + 1) * self.w]);
        }
        self.fft.forward(buf)
    }

    /// Inverse transform, then fold the real part of the padded region back
    /// onto the `h x w` plane (adjoint of reflect padding), accumulating into `dst`.
    pub fn fold_real(&self, spec: Vec<Complex64>, dst: &mut [f64]) {
        let (h, w, p) = (self.h, self.w, self.pad as isize);
        let cols = self.fft.cols();
        let data = self.fft.inverse(spec);
        for y in 0..h + 2 * self.pad {
            let sr = reflect_index(y as isize - p, h);
            for x in 0..w + 2 * self.pad {
                let sc = reflect_index(x as isize - p, w);
                dst[sr * w + sc] += data[y * cols + x].re;
            }
        }
    }

    /// Inverse transform and gather the `(2r+1)^2` kernel-shaped block around
    /// the origin (with wrap-around).
    pub fn gather_kernel(&self, spec: Vec<Complex64>, radius: usize) -> Vec<Complex64> {
        let (rows, cols) = (self.fft.rows(), self.fft.cols());
        let data = self.fft.inverse(spec);
        let r = radius as isize;
        let mut out = Vec::with_capacity((2 * radius + 1).pow(2));
        for v in -r..=r {
            let gy = v.rem_euclid(rows as isize) as usize;
            for u in -r..=r {
                let gx = u.rem_euclid(cols as isize) as usize;
                out.push(data[gy * cols + gx]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(100), 100);
        assert_eq!(smooth_size(101), 108);
        assert_eq!(smooth_size(1), 1);
    }

    #[test]
    fn round_trip_identity() {
        let f = Fft2::new(6, 10);
        let data: Vec<Complex64> = (0..60).map(|i| Complex64::new(i as f64, (i * 7 % 5) as f64)).collect();
        let back = f.inverse(f.forward(data.clone()));
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}
