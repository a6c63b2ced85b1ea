//! Scattering stack `[S0, S1, S2]` at full resolution and its reverse pass.
//!
//! Wavelet convolutions run on a shared FFT grid: each plane is reflect-padded
//! by the largest kernel radius, so the cropped circular result equals the
//! direct reflective convolution. The low-pass is applied directly as a
//! separable reflective filter.

use num_complex::Complex64;

use crate::image::reflect_index;
use crate::scatter::bank::FilterBank;
use crate::scatter::fft::ConvGrid;

/// Separable reflective convolution with symmetric 1-D taps.
pub(crate) fn lowpass(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &wt) in taps.iter().enumerate() {
                acc += wt * row[reflect_index(x as isize + t as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (t, &wt) in taps.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - r, h);
            let src_row = &tmp[sy * w..(sy + 1) * w];
            for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src_row) {
                *o += wt * s;
            }
        }
    }
    out
}

/// Adjoint of [`lowpass`], accumulated into `dst`.
pub(crate) fn lowpass_adjoint(grad: &[f64], h: usize, w: usize, taps: &[f64], dst: &mut [f64]) {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for (t, &wt) in taps.iter().enumerate() {
            let sy = reflect_index(y as isize + t as isize - r, h);
            let g_row = &grad[y * w..(y + 1) * w];
            for (d, g) in tmp[sy * w..(sy + 1) * w].iter_mut().zip(g_row) {
                *d += wt * g;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let g = tmp[y * w + x];
            for (t, &wt) in taps.iter().enumerate() {
                dst[y * w + reflect_index(x as isize + t as isize - r, w)] += wt * g;
            }
        }
    }
}

#[inline]
fn unit_phase(z: Complex64) -> (f64, Complex64) {
    let m = z.norm();
    if m > 0.0 {
        (m, z / m)
    } else {
        (0.0, Complex64::new(0.0, 0.0))
    }
}

/// Everything the reverse pass needs from one forward evaluation.
pub struct ScatterTape {
    input_spectrum: Vec<Complex64>,
    /// `z / |z|` of each first-order response (zero where `z == 0`).
    phase1: Vec<Vec<Complex64>>,
    /// Spectra of the padded first-order moduli `U_a`.
    u_spectra: Vec<Vec<Complex64>>,
    /// `z / |z|` of each second-order response, in pair order.
    phase2: Vec<Vec<Complex64>>,
}

/// Gradients of a scattering evaluation.
pub struct ScatterGrads {
    /// `dL/dpsi_n` in `dRe + i dIm` form, one kernel-shaped block per filter.
    pub kernel_grads: Vec<Vec<Complex64>>,
    pub input_grad: Option<Vec<f64>>,
}

/// A filter bank bound to an image size.
pub struct ScatterEngine {
    bank: FilterBank,
    grid: ConvGrid,
    kernel_spectra: Vec<Vec<Complex64>>,
    pairs: Vec<(usize, usize)>,
}

impl ScatterEngine {
    pub fn new(bank: FilterBank, h: usize, w: usize) -> Self {
        let grid = ConvGrid::new(h, w, bank.pad_radius());
        let kernel_spectra = bank
            .kernels()
            .iter()
            .map(|k| grid.spectrum_of_kernel(k.radius, &k.values))
            .collect();
        let pairs = bank.config().pairs();
        Self {
            bank,
            grid,
            kernel_spectra,
            pairs,
        }
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.grid.h, self.grid.w)
    }

    pub fn channel_count(&self) -> usize {
        1 + self.kernel_spectra.len() + self.pairs.len()
    }

    pub(crate) fn grid_spectrum(&self, plane: &[f64]) -> Vec<Complex64> {
        self.grid.spectrum_of_plane(plane)
    }

    pub(crate) fn filtered(&self, spec: &[Complex64], n: usize) -> Vec<Complex64> {
        let prod = spec.iter().zip(&self.kernel_spectra[n]).map(|(a, b)| a * b).collect();
        self.grid.crop(prod)
    }

    /// Full-resolution `C x H x W` stack in channel order
    /// `[S0, S1_0..S1_{n-1}, S2 pairs]`, plus a tape when `record` is set.
    pub fn forward(&self, img: &[f64], record: bool) -> (Vec<f64>, Option<ScatterTape>) {
        let (h, w) = self.dims();
        let hw = h * w;
        let n_filters = self.kernel_spectra.len();
        let phi = self.bank.phi_taps();
        let mut out = Vec::with_capacity(self.channel_count() * hw);
        out.extend(lowpass(img, h, w, phi));

        let input_spectrum = self.grid.spectrum_of_plane(img);
        let mut phase1 = Vec::with_capacity(if record { n_filters } else { 0 });
        let mut moduli = Vec::with_capacity(n_filters);
        for n in 0..n_filters {
            let z = self.filtered(&input_spectrum, n);
            let mut m = Vec::with_capacity(hw);
            let mut ph = Vec::with_capacity(if record { hw } else { 0 });
            for &v in &z {
                let (a, p) = unit_phase(v);
                m.push(a);
                if record {
                    ph.push(p);
                }
            }
            out.extend(lowpass(&m, h, w, phi));
            moduli.push(m);
            if record {
                phase1.push(ph);
            }
        }

        let u_spectra: Vec<Vec<Complex64>> = moduli.iter().map(|m| self.grid.spectrum_of_plane(m)).collect();
        let mut phase2 = Vec::with_capacity(if record { self.pairs.len() } else { 0 });
        for &(a, b) in &self.pairs {
            let z = self.filtered(&u_spectra[a], b);
            let mut m = Vec::with_capacity(hw);
            let mut ph = Vec::with_capacity(if record { hw } else { 0 });
            for &v in &z {
                let (amp, p) = unit_phase(v);
                m.push(amp);
                if record {
                    ph.push(p);
                }
            }
            out.extend(lowpass(&m, h, w, phi));
            if record {
                phase2.push(ph);
            }
        }

        let tape = record.then(|| ScatterTape {
            input_spectrum,
            phase1,
            u_spectra,
            phase2,
        });
        (out, tape)
    }

    /// Reverse pass for an upstream gradient on the full-resolution stack.
    pub fn backward(&self, tape: &ScatterTape, grad: &[f64], want_input: bool) -> ScatterGrads {
        let (h, w) = self.dims();
        let hw = h * w;
        let n_filters = self.kernel_spectra.len();
        let phi = self.bank.phi_taps();
        assert_eq!(grad.len(), self.channel_count() * hw, "upstream gradient shape");
        let grid_len = self.grid.fft.len();
        let zero = Complex64::new(0.0, 0.0);

        let mut input_grad = want_input.then(|| vec![0.0; hw]);
        if let Some(gi) = input_grad.as_mut() {
            lowpass_adjoint(&grad[..hw], h, w, phi, gi);
        }

        // kernel-gradient spectra accumulated over every use of a filter
        let mut kernel_acc = vec![vec![zero; grid_len]; n_filters];
        let mut du: Vec<Vec<f64>> = (0..n_filters)
            .map(|n| {
                let mut d = vec![0.0; hw];
                lowpass_adjoint(&grad[(1 + n) * hw..(2 + n) * hw], h, w, phi, &mut d);
                d
            })
            .collect();

        let mut du_spec = vec![vec![zero; grid_len]; n_filters];
        let s2_base = 1 + n_filters;
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            let g = &grad[(s2_base + p) * hw..(s2_base + p + 1) * hw];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let mut dmod = vec![0.0; hw];
            lowpass_adjoint(g, h, w, phi, &mut dmod);
            let dz: Vec<Complex64> = dmod.iter().zip(&tape.phase2[p]).map(|(&d, &ph)| ph * d).collect();
            let gs = self.grid.spectrum_of_grad(&dz);
            let ua = &tape.u_spectra[a];
            let kb = &self.kernel_spectra[b];
            for idx in 0..grid_len {
                kernel_acc[b][idx] += gs[idx] * ua[idx].conj();
                du_spec[a][idx] += gs[idx] * kb[idx].conj();
            }
        }
        for (a, spec) in du_spec.into_iter().enumerate() {
            if spec.iter().any(|z| *z != zero) {
                self.grid.fold_real(spec, &mut du[a]);
            }
        }

        let mut di_spec = vec![zero; if want_input { grid_len } else { 0 }];
        for n in 0..n_filters {
            let dz: Vec<Complex64> = du[n].iter().zip(&tape.phase1[n]).map(|(&d, &ph)| ph * d).collect();
            let gs = self.grid.spectrum_of_grad(&dz);
            let ka = &self.kernel_spectra[n];
            for idx in 0..grid_len {
                kernel_acc[n][idx] += gs[idx] * tape.input_spectrum[idx].conj();
                if want_input {
                    di_spec[idx] += gs[idx] * ka[idx].conj();
                }
            }
        }
        if let Some(gi) = input_grad.as_mut() {
            self.grid.fold_real(di_spec, gi);
        }

        let kernel_grads = kernel_acc
            .into_iter()
            .enumerate()
            .map(|(n, spec)| self.grid.gather_kernel(spec, self.bank.kernel(n).radius))
            .collect();
        ScatterGrads {
            kernel_grads,
            input_grad,
        }
    }
}

/// Direct reflective convolution `out(y,x) = sum src(y-v, x-u) k(v,u)`; the
/// brute-force reference for the FFT path.
pub fn convolve_direct(src: &[f64], h: usize, w: usize, radius: usize, kernel: &[Complex64]) -> Vec<Complex64> {
    let r = radius as isize;
    let size = 2 * radius + 1;
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for v in -r..=r {
                let sy = reflect_index(y as isize - v, h);
                for u in -r..=r {
                    let sx = reflect_index(x as isize - u, w);
                    acc += kernel[((v + r) as usize) * size + (u + r) as usize] * src[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scatter::bank::{BankConfig, OffsetParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(h: usize, w: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..h * w).map(|_| rng.random()).collect()
    }

    #[test]
    fn fft_path_matches_direct_convolution() {
        let cfg = BankConfig::default();
        let bank = FilterBank::new(&cfg, &OffsetParams::zeros(&cfg)).unwrap();
        for &(h, w) in &[(8usize, 8usize), (12, 10)] {
            let img = random_plane(h, w, 5);
            let engine = ScatterEngine::new(bank.clone(), h, w);
            let spec = engine.grid.spectrum_of_plane(&img);
            for n in [0, 7, 17] {
                let fast = engine.filtered(&spec, n);
                let k = bank.kernel(n);
                let slow = convolve_direct(&img, h, w, k.radius, &k.values);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).norm() < 1e-10, "n={n} {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn lowpass_adjoint_identity() {
        let taps = [0.1, 0.2, 0.4, 0.2, 0.1];
        let (h, w) = (5, 7);
        let x = random_plane(h, w, 1);
        let y = random_plane(h, w, 2);
        let lx = lowpass(&x, h, w, &taps);
        let mut ay = vec![0.0; h * w];
        lowpass_adjoint(&y, h, w, &taps, &mut ay);
        let lhs: f64 = lx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
