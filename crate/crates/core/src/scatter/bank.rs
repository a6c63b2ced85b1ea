//! Morlet filter bank with learnable per-filter scale and orientation offsets.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest admissible scale-exponent offset (half an octave).
pub const MAX_DELTA_J: f64 = 0.5;

/// Filter-bank geometry. Kernel shapes never depend on the offsets inside
/// their clamp range, so the bank is a smooth function of them.
#[derive(Clone, Debug, PartialEq)]
pub struct BankConfig {
    /// Number of dyadic scales `J`.
    pub scales: usize,
    /// Number of orientations `K` spread over `[0, pi)`.
    pub orientations: usize,
    /// Kernel half-width in multiples of the envelope sigma.
    pub kernel_truncation: f64,
    /// Scale `s` (pixels) of the finest filter, `j = 1`.
    pub base_scale: f64,
    /// Carrier frequency at the base scale, radians per pixel.
    pub xi: f64,
    /// Envelope sigma as a multiple of the scale.
    pub sigma_ratio: f64,
    /// Sigma of the fixed Gaussian low-pass.
    pub phi_sigma: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            scales: 3,
            orientations: 6,
            kernel_truncation: 4.0,
            base_scale: 1.0,
            xi: 3.0 * PI / 4.0,
            sigma_ratio: 0.8,
            phi_sigma: 1.0,
        }
    }
}

impl BankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.orientations == 0 {
            return Err(Error::InvalidArgument(format!(
                "bank needs J >= 1 and K >= 1, got J={} K={}",
                self.scales, self.orientations
            )));
        }
        for (name, v) in [
            ("kernel_truncation", self.kernel_truncation),
            ("base_scale", self.base_scale),
            ("xi", self.xi),
            ("sigma_ratio", self.sigma_ratio),
            ("phi_sigma", self.phi_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `J * K`.
    pub fn filter_count(&self) -> usize {
        self.scales * self.orientations
    }

    /// `1 + JK + JK(JK-1)/2`.
    pub fn channel_count(&self) -> usize {
        let n = self.filter_count();
        1 + n + n * (n - 1) / 2
    }

    /// Base orientation `theta_k = (k-1) pi / K` for 1-based `k`.
    pub fn orientation(&self, k: usize) -> f64 {
        (k as f64 - 1.0) * PI / self.orientations as f64
    }

    pub fn max_delta_theta(&self) -> f64 {
        PI / (2.0 * self.orientations as f64)
    }

    /// Flattened, j-major index of filter `(j, k)` (both 1-based).
    pub fn filter_index(&self, j: usize, k: usize) -> usize {
        (j - 1) * self.orientations + (k - 1)
    }

    /// `(j, k)` (1-based) of flattened filter `n`.
    pub fn filter_jk(&self, n: usize) -> (usize, usize) {
        (n / self.orientations + 1, n % self.orientations + 1)
    }

    /// Kernel half-width at scale `j` for offset `dj`; constant for
    /// `dj <= MAX_DELTA_J`.
    pub fn kernel_radius(&self, j: usize, dj: f64) -> usize {
        let exponent = j as f64 - 1.0 + dj.max(MAX_DELTA_J);
        let sigma = self.sigma_ratio * self.base_scale * exponent.exp2();
        (self.kernel_truncation * sigma).ceil() as usize
    }

    /// Largest kernel half-width in the bank inside the clamp range.
    pub fn max_radius(&self) -> usize {
        self.kernel_radius(self.scales, 0.0)
    }

    pub fn phi_radius(&self) -> usize {
        (self.kernel_truncation * self.phi_sigma).ceil() as usize
    }

    /// All second-order pairs `(a, b)`, `a < b`, in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.filter_count();
        (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
    }
}

/// Learnable deformation of every filter: `psi_{j,theta} -> psi_{j+dj, theta+dtheta}`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetParams {
    pub delta_j: Vec<f64>,
    pub delta_theta: Vec<f64>,
}

impl OffsetParams {
    pub fn zeros(cfg: &BankConfig) -> Self {
        let n = cfg.filter_count();
        Self {
            delta_j: vec![0.0; n],
            delta_theta: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.delta_j.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_j.is_empty()
    }

    pub fn validate(&self, cfg: &BankConfig) -> Result<()> {
        let n = cfg.filter_count();
        if self.delta_j.len() != n || self.delta_theta.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected {n} offsets per kind, got {} / {}",
                self.delta_j.len(),
                self.delta_theta.len()
            )));
        }
        if self.delta_j.iter().chain(&self.delta_theta).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("filter offset".into()));
        }
        Ok(())
    }

    /// Projects onto `|dj| <= 0.5`, `|dtheta| <= pi / 2K`.
    pub fn clamp(&mut self, cfg: &BankConfig) {
        let t = cfg.max_delta_theta();
        for v in &mut self.delta_j {
            *v = v.clamp(-MAX_DELTA_J, MAX_DELTA_J);
        }
        for v in &mut self.delta_theta {
            *v = v.clamp(-t, t);
        }
    }

    pub fn within_bounds(&self, cfg: &BankConfig) -> bool {
        let t = cfg.max_delta_theta();
        self.delta_j.iter().all(|v| v.abs() <= MAX_DELTA_J) && self.delta_theta.iter().all(|v| v.abs() <= t)
    }
}

/// A square complex kernel with its derivatives with respect to `dj` and
/// `dtheta`. Entry `(v, u)` (row, column offsets in `-r..=r`) is stored at
/// `(v + r) * size + (u + r)`.
#[derive(Clone, Debug)]
pub struct MorletKernel {
    pub radius: usize,
    pub values: Vec<Complex64>,
    pub d_dj: Vec<Complex64>,
    pub d_dtheta: Vec<Complex64>,
}

impl MorletKernel {
    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, v: isize, u: isize) -> Complex64 {
        let r = self.radius as isize;
        self.values[((v + r) as usize) * self.size() + (u + r) as usize]
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).sum()
    }
}

/// Evaluates the DC-corrected Morlet wavelet at scale `base * 2^(j-1+dj)` and
/// orientation `theta + dtheta`, together with its analytic derivatives.
pub fn build_morlet(cfg: &BankConfig, j: usize, theta: f64, dj: f64, dtheta: f64) -> Result<MorletKernel> {
    if j == 0 || j > cfg.scales {
        return Err(Error::InvalidArgument(format!("scale index {j} outside 1..={}", cfg.scales)));
    }
    if !(theta.is_finite() && dj.is_finite() && dtheta.is_finite()) {
        return Err(Error::NonFinite("Morlet parameter".into()));
    }
    let radius = cfg.kernel_radius(j, dj);
    let size = 2 * radius + 1;
    let s = cfg.base_scale * (j as f64 - 1.0 + dj).exp2();
    let sigma = cfg.sigma_ratio * s;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let omega = cfg.xi / s;
    let (sin_t, cos_t) = (theta + dtheta).sin_cos();
    let i = Complex64::i();

    let n_px = size * size;
    let mut gauss = Vec::with_capacity(n_px);
    let mut carrier = Vec::with_capacity(n_px);
    let mut g_dj = Vec::with_capacity(n_px);
    let mut e_dj = Vec::with_capacity(n_px);
    let mut e_dt = Vec::with_capacity(n_px);
    let r = radius as isize;
    for v in -r..=r {
        for u in -r..=r {
            let (uf, vf) = (u as f64, v as f64);
            let r2 = uf * uf + vf * vf;
            let along = uf * cos_t + vf * sin_t;
            let across = -uf * sin_t + vf * cos_t;
            let g = (-r2 * inv_two_var).exp();
            let e = Complex64::from_polar(1.0, omega * along);
            gauss.push(g);
            carrier.push(e);
            // d/d(dj): ds/d(dj) = s ln2, sigma and 1/omega scale with s
            g_dj.push(g * r2 / (sigma * sigma) * LN_2);
            e_dj.push(e * (-i * omega * along * LN_2));
            e_dt.push(e * (i * omega * across));
        }
    }

    let sum_g: f64 = gauss.iter().sum();
    let sum_ge: Complex64 = gauss.iter().zip(&carrier).map(|(g, e)| e * g).sum();
    let beta = sum_ge / sum_g;

    let beta_prime = |gp: &[f64], ep: &[Complex64]| -> Complex64 {
        let mut a_p = Complex64::new(0.0, 0.0);
        let mut b_p = 0.0;
        for idx in 0..n_px {
            a_p += carrier[idx] * gp[idx] + ep[idx] * gauss[idx];
            b_p += gp[idx];
        }
        (a_p * sum_g - sum_ge * b_p) / (sum_g * sum_g)
    };
    let zeros = vec![0.0; n_px];
    let beta_dj = beta_prime(&g_dj, &e_dj);
    let beta_dt = beta_prime(&zeros, &e_dt);

    let norm = 1.0 / (2.0 * PI * sigma * sigma);
    let norm_dj = -2.0 * LN_2 * norm;

    let mut values = Vec::with_capacity(n_px);
    let mut d_dj = Vec::with_capacity(n_px);
    let mut d_dtheta = Vec::with_capacity(n_px);
    for idx in 0..n_px {
        let g = gauss[idx];
        let centred = carrier[idx] - beta;
        let raw = centred * g;
        values.push(raw * norm);
        let raw_dj = centred * g_dj[idx] + (e_dj[idx] - beta_dj) * g;
        d_dj.push(raw * norm_dj + raw_dj * norm);
        d_dtheta.push((e_dt[idx] - beta_dt) * (g * norm));
    }
    Ok(MorletKernel {
        radius,
        values,
        d_dj,
        d_dtheta,
    })
}

/// Normalized 1-D Gaussian taps of the separable low-pass `phi`.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    taps
}

/// Morlet filters evaluated at the current offsets, plus the low-pass.
#[derive(Clone, Debug)]
pub struct FilterBank {
    cfg: BankConfig,
    kernels: Vec<MorletKernel>,
    phi: Vec<f64>,
}

impl FilterBank {
    pub fn new(cfg: &BankConfig, offsets: &OffsetParams) -> Result<Self> {
        cfg.validate()?;
        offsets.validate(cfg)?;
        let kernels = (0..cfg.filter_count())
            .map(|n| {
                let (j, k) = cfg.filter_jk(n);
                build_morlet(cfg, j, cfg.orientation(k), offsets.delta_j[n], offsets.delta_theta[n])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            kernels,
            phi: gaussian_taps(cfg.phi_sigma, cfg.phi_radius()),
        })
    }

    pub(crate) fn from_parts(cfg: BankConfig, kernels: Vec<MorletKernel>, phi: Vec<f64>) -> Self {
        Self { cfg, kernels, phi }
    }

    pub fn config(&self) -> &BankConfig {
        &self.cfg
    }

    pub fn kernels(&self) -> &[MorletKernel] {
        &self.kernels
    }

    pub fn kernel(&self, n: usize) -> &MorletKernel {
        &self.kernels[n]
    }

    /// 1-D taps; the 2-D low-pass is their outer product.
    pub fn phi_taps(&self) -> &[f64] {
        &self.phi
    }

    /// Largest kernel half-width actually present.
    pub fn pad_radius(&self) -> usize {
        self.kernels.iter().map(|k| k.radius).max().unwrap_or(0).max(self.phi.len() / 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn second_moment(k: &MorletKernel) -> f64 {
        let r = k.radius as isize;
        let (mut m, mut w) = (0.0, 0.0);
        for v in -r..=r {
            for u in -r..=r {
                let a = k.at(v, u).norm();
                m += a * (u * u + v * v) as f64;
                w += a;
            }
        }
        m / w
    }

    #[test]
    fn kernels_have_zero_mean() {
        let cfg = BankConfig::default();
        let bank = FilterBank::new(&cfg, &OffsetParams::zeros(&cfg)).unwrap();
        for k in bank.kernels() {
            let total: Complex64 = k.values.iter().sum();
            assert!(total.norm() <= 1e-10 * k.l1_norm(), "{}", total.norm() / k.l1_norm());
            assert_eq!(k.size() % 2, 1);
        }
    }

    #[test]
    fn orientation_offset_matches_next_orientation() {
        let cfg = BankConfig::default();
        let step = PI / cfg.orientations as f64;
        for j in 1..=3 {
            for k in 1..cfg.orientations {
                let a = build_morlet(&cfg, j, cfg.orientation(k), 0.0, step).unwrap();
                let b = build_morlet(&cfg, j, cfg.orientation(k + 1), 0.0, 0.0).unwrap();
                for (x, y) in a.values.iter().zip(&b.values) {
                    assert!((x - y).norm() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn unit_scale_offset_quadruples_second_moment() {
        let cfg = BankConfig::default();
        let base = build_morlet(&cfg, 2, 0.3, 0.0, 0.0).unwrap();
        let wide = build_morlet(&cfg, 2, 0.3, 1.0, 0.0).unwrap();
        let ratio = second_moment(&wide) / second_moment(&base);
        assert!((ratio - 4.0).abs() < 0.04, "ratio {ratio}");
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let cfg = BankConfig::default();
        let (dj, dt) = (0.17, -0.08);
        let h = 1e-6;
        for j in 1..=3 {
            let k0 = build_morlet(&cfg, j, 0.7, dj, dt).unwrap();
            let kp = build_morlet(&cfg, j, 0.7, dj + h, dt).unwrap();
            let km = build_morlet(&cfg, j, 0.7, dj - h, dt).unwrap();
            let tp = build_morlet(&cfg, j, 0.7, dj, dt + h).unwrap();
            let tm = build_morlet(&cfg, j, 0.7, dj, dt - h).unwrap();
            let scale = k0.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
            for idx in 0..k0.values.len() {
                let fd_j = (kp.values[idx] - km.values[idx]) / (2.0 * h);
                let fd_t = (tp.values[idx] - tm.values[idx]) / (2.0 * h);
                assert!((fd_j - k0.d_dj[idx]).norm() < 1e-7 * scale.max(1.0));
                assert!((fd_t - k0.d_dtheta[idx]).norm() < 1e-7 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn kernel_support_fixed_within_clamp() {
        let cfg = BankConfig::default();
        for j in 1..=3 {
            assert_eq!(cfg.kernel_radius(j, -0.5), cfg.kernel_radius(j, 0.5));
        }
        assert!(build_morlet(&cfg, 0, 0.0, 0.0, 0.0).is_err());
        assert!(build_morlet(&cfg, 4, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn pair_and_channel_counts() {
        let cfg = BankConfig::default();
        assert_eq!(cfg.pairs().len(), 153);
        assert_eq!(cfg.channel_count(), 172);
        for (jj, kk) in [(2usize, 3usize), (1, 1), (4, 5)] {
            let c = BankConfig {
                scales: jj,
                orientations: kk,
                ..BankConfig::default()
            };
            let n = jj * kk;
            assert_eq!(c.channel_count(), 1 + n + n * (n - 1) / 2);
            assert_eq!(c.pairs().len(), n * (n - 1) / 2);
        }
    }

    #[test]
    fn phi_is_normalized_and_nonnegative() {
        let taps = gaussian_taps(1.0, 4);
        assert_eq!(taps.len(), 9);
        assert!(taps.iter().all(|&t| t >= 0.0));
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clamp_bounds_offsets() {
        let cfg = BankConfig::default();
        let mut o = OffsetParams::zeros(&cfg);
        o.delta_j[0] = 3.0;
        o.delta_theta[5] = -2.0;
        assert!(!o.within_bounds(&cfg));
        o.clamp(&cfg);
        assert!(o.within_bounds(&cfg));
        assert_eq!(o.delta_j[0], 0.5);
        assert_eq!(o.delta_theta[5], -cfg.max_delta_theta());
    }
}
