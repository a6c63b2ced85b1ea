//! Frozen, offset-free scattering path used as the reference for the
//! deformable bridge. Kernels come from their own builder without derivative
//! bookkeeping, and every channel is evaluated on its own.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::bilinear_downsample2;
use crate::scatter::bank::{gaussian_taps, BankConfig, FilterBank, MorletKernel};
use crate::scatter::bridge::{channel_labels, scatter0, scatter1, scatter2};
use crate::scatter::norm::NormState;
use crate::tensor::FeatureTensor;

/// DC-corrected Morlet at scale `base * 2^(j-1)` and orientation `theta`.
pub fn frozen_morlet(cfg: &BankConfig, j: usize, theta: f64) -> Result<MorletKernel> {
    if j == 0 || j > cfg.scales {
        return Err(Error::InvalidArgument(format!("scale index {j} outside 1..={}", cfg.scales)));
    }
    let radius = cfg.kernel_radius(j, 0.0);
    let s = cfg.base_scale * (j as f64 - 1.0).exp2();
    let sigma = cfg.sigma_ratio * s;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let omega = cfg.xi / s;
    let (sin_t, cos_t) = theta.sin_cos();
    let r = radius as isize;
    let mut gauss = Vec::new();
    let mut carrier = Vec::new();
    for v in -r..=r {
        for u in -r..=r {
            let (uf, vf) = (u as f64, v as f64);
            gauss.push((-(uf * uf + vf * vf) * inv_two_var).exp());
            carrier.push(Complex64::from_polar(1.0, omega * (uf * cos_t + vf * sin_t)));
        }
    }
    let sum_g: f64 = gauss.iter().sum();
    let sum_ge: Complex64 = gauss.iter().zip(&carrier).map(|(g, e)| e * g).sum();
    let beta = sum_ge / sum_g;
    let norm = 1.0 / (2.0 * PI * sigma * sigma);
    let values = gauss.iter().zip(&carrier).map(|(&g, &e)| (e - beta) * g * norm).collect();
    Ok(MorletKernel {
        radius,
        values,
        d_dj: Vec::new(),
        d_dtheta: Vec::new(),
    })
}

pub fn frozen_bank(cfg: &BankConfig) -> Result<FilterBank> {
    cfg.validate()?;
    let kernels = (0..cfg.filter_count())
        .map(|n| {
            let (j, k) = cfg.filter_jk(n);
            frozen_morlet(cfg, j, cfg.orientation(k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterBank::from_parts(cfg.clone(), kernels, gaussian_taps(cfg.phi_sigma, cfg.phi_radius())))
}

/// `[S0, S1, S2]` of `img` channel by channel, decimated and normalized.
pub fn fixed_wst_reference(img: &Image, cfg: &BankConfig, norm: &NormState) -> Result<FeatureTensor> {
    let bank = frozen_bank(cfg)?;
    let mut chans = vec![scatter0(img, &bank)];
    for n in 0..cfg.filter_count() {
        let (j, k) = cfg.filter_jk(n);
        chans.push(scatter1(img, &bank, j, k)?);
    }
    for pair in cfg.pairs() {
        chans.push(scatter2(img, &bank, pair)?);
    }
    let full = FeatureTensor::from_images(&chans, channel_labels(cfg))?;
    let down = bilinear_downsample2(&full)?;
    norm.validate(down.channels())?;
    let (h, w, c) = (down.height(), down.width(), down.channels());
    let labels = down.labels().to_vec();
    let mut data = down.into_values();
    norm.apply(&mut data, h * w, false);
    Ok(FeatureTensor::from_raw_unchecked(h, w, c, data, labels))
}
