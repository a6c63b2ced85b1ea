//! The deformable scattering feature bridge: `[S0, S1, S2]` concatenation,
//! factor-two bilinear decimation and per-channel normalization, with exact
//! gradients for the filter offsets, the affine and the input pixels.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::{bilinear_down_plane, bilinear_down_plane_adjoint};
use crate::scatter::bank::{BankConfig, FilterBank, OffsetParams};
use crate::scatter::engine::{lowpass, ScatterEngine, ScatterTape};
use crate::scatter::norm::{NormState, NormTape};
use crate::tensor::{ChannelLabel, FeatureTensor};

/// Channel labels in bridge order.
pub fn channel_labels(cfg: &BankConfig) -> Vec<ChannelLabel> {
    let mut labels = vec![ChannelLabel::S0];
    labels.extend((0..cfg.filter_count()).map(|n| {
        let (j, k) = cfg.filter_jk(n);
        ChannelLabel::S1 { j, k }
    }));
    labels.extend(cfg.pairs().into_iter().map(|(a, b)| ChannelLabel::S2 { a, b }));
    labels
}

fn single(img: &Image, bank: &FilterBank) -> ScatterEngine {
    ScatterEngine::new(bank.clone(), img.height(), img.width())
}

fn modulus(z: &[num_complex::Complex64]) -> Vec<f64> {
    z.iter().map(|v| v.norm()).collect()
}

/// `S0 = I * phi`.
pub fn scatter0(img: &Image, bank: &FilterBank) -> Image {
    let (h, w) = img.dims();
    Image::from_raw_unchecked(h, w, lowpass(img.pixels(), h, w, bank.phi_taps()))
}

/// `S1 = |I * psi_{j,k}| * phi` for 1-based scale `j` and orientation `k`.
pub fn scatter1(img: &Image, bank: &FilterBank, j: usize, k: usize) -> Result<Image> {
    let cfg = bank.config();
    if j == 0 || j > cfg.scales || k == 0 || k > cfg.orientations {
        return Err(Error::InvalidArgument(format!(
            "filter (j={j}, k={k}) outside the {}x{} bank",
            cfg.scales, cfg.orientations
        )));
    }
    let (h, w) = img.dims();
    let engine = single(img, bank);
    let spec = engine.grid_spectrum(img.pixels());
    let u = modulus(&engine.filtered(&spec, cfg.filter_index(j, k)));
    Ok(Image::from_raw_unchecked(h, w, lowpass(&u, h, w, bank.phi_taps())))
}

/// `S2 = ||I * psi_a| * psi_b| * phi` for flattened filter indices `a < b`.
pub fn scatter2(img: &Image, bank: &FilterBank, pair: (usize, usize)) -> Result<Image> {
    let (a, b) = pair;
    let n = bank.config().filter_count();
    if a >= b || b >= n {
        return Err(Error::InvalidArgument(format!(
            "second-order pair ({a}, {b}) must satisfy a < b < {n}"
        )));
    }
    let (h, w) = img.dims();
    let engine = single(img, bank);
    let spec = engine.grid_spectrum(img.pixels());
    let ua = modulus(&engine.filtered(&spec, a));
    let ub = modulus(&engine.filtered(&engine.grid_spectrum(&ua), b));
    Ok(Image::from_raw_unchecked(h, w, lowpass(&ub, h, w, bank.phi_taps())))
}

/// Saved state of one bridge evaluation.
pub struct BridgeTape {
    scatter: ScatterTape,
    norm: NormTape,
}

/// Gradients of a scalar objective through the bridge.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeGrads {
    pub delta_j: Vec<f64>,
    pub delta_theta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub input: Option<Image>,
}

/// A bridge bound to a bank and a frame size; reusable across frames and
/// threads.
pub struct Bridge {
    engine: ScatterEngine,
    labels: Vec<ChannelLabel>,
}

impl Bridge {
    pub fn new(cfg: &BankConfig, offsets: &OffsetParams, height: usize, width: usize) -> Result<Self> {
        if height % 2 != 0 || width % 2 != 0 || height == 0 || width == 0 {
            return Err(Error::Dimensions(format!(
                "bridge input must have even dims, got {height}x{width}"
            )));
        }
        let bank = FilterBank::new(cfg, offsets)?;
        Ok(Self {
            engine: ScatterEngine::new(bank, height, width),
            labels: channel_labels(cfg),
        })
    }

    pub fn bank(&self) -> &FilterBank {
        self.engine.bank()
    }

    pub fn channels(&self) -> usize {
        self.labels.len()
    }

    pub fn input_dims(&self) -> (usize, usize) {
        self.engine.dims()
    }

    pub fn output_dims(&self) -> (usize, usize) {
        let (h, w) = self.engine.dims();
        (h / 2, w / 2)
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        if img.dims() != self.engine.dims() {
            return Err(Error::Dimensions(format!(
                "bridge built for {:?}, got a {:?} image",
                self.engine.dims(),
                img.dims()
            )));
        }
        Ok(())
    }

    /// Full-resolution scattering stack before decimation.
    pub fn stack(&self, img: &Image) -> Result<FeatureTensor> {
        self.check_input(img)?;
        let (h, w) = img.dims();
        let (data, _) = self.engine.forward(img.pixels(), false);
        Ok(FeatureTensor::from_raw_unchecked(h, w, self.channels(), data, self.labels.clone()))
    }

    fn decimate(&self, full: &[f64]) -> Vec<f64> {
        let (h, w) = self.engine.dims();
        let (hw, plane) = (h * w, (h / 2) * (w / 2));
        let mut out = vec![0.0; self.channels() * plane];
        for c in 0..self.channels() {
            bilinear_down_plane(&full[c * hw..(c + 1) * hw], h, w, &mut out[c * plane..(c + 1) * plane]);
        }
        out
    }

    /// Decimated stack before normalization.
    pub fn features(&self, img: &Image) -> Result<FeatureTensor> {
        self.check_input(img)?;
        let (data, _) = self.engine.forward(img.pixels(), false);
        let (oh, ow) = self.output_dims();
        Ok(FeatureTensor::from_raw_unchecked(oh, ow, self.channels(), self.decimate(&data), self.labels.clone()))
    }

    /// Normalized bridge output, plus a tape when `record` is set.
    pub fn forward(&self, img: &Image, norm: &NormState, record: bool) -> Result<(FeatureTensor, Option<BridgeTape>)> {
        self.check_input(img)?;
        norm.validate(self.channels())?;
        let (full, scatter) = self.engine.forward(img.pixels(), record);
        let mut data = self.decimate(&full);
        drop(full);
        let (oh, ow) = self.output_dims();
        let norm_tape = norm.apply(&mut data, oh * ow, record);
        let tensor = FeatureTensor::from_raw_unchecked(oh, ow, self.channels(), data, self.labels.clone());
        let tape = match (scatter, norm_tape) {
            (Some(scatter), Some(norm)) => Some(BridgeTape { scatter, norm }),
            _ => None,
        };
        Ok((tensor, tape))
    }

    /// Reverse pass for an upstream gradient shaped like the bridge output.
    pub fn backward(&self, tape: &BridgeTape, norm: &NormState, upstream: &FeatureTensor, want_input: bool) -> Result<BridgeGrads> {
        let (oh, ow) = self.output_dims();
        if (upstream.height(), upstream.width(), upstream.channels()) != (oh, ow, self.channels()) {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient is {}x{}x{}, bridge output is {oh}x{ow}x{}",
                upstream.height(),
                upstream.width(),
                upstream.channels(),
                self.channels()
            )));
        }
        let plane = oh * ow;
        let (d_feat, gamma, beta) = norm.backward(&tape.norm, upstream.values(), plane);
        let (h, w) = self.engine.dims();
        let hw = h * w;
        let mut d_full = vec![0.0; self.channels() * hw];
        for c in 0..self.channels() {
            bilinear_down_plane_adjoint(&d_feat[c * plane..(c + 1) * plane], h, w, &mut d_full[c * hw..(c + 1) * hw]);
        }
        let grads = self.engine.backward(&tape.scatter, &d_full, want_input);
        let n = self.bank().kernels().len();
        let mut delta_j = vec![0.0; n];
        let mut delta_theta = vec![0.0; n];
        for (idx, (kernel, g)) in self.bank().kernels().iter().zip(&grads.kernel_grads).enumerate() {
            let dot = |d: &[num_complex::Complex64]| -> f64 { g.iter().zip(d).map(|(a, b)| a.re * b.re + a.im * b.im).sum() };
            delta_j[idx] = dot(&kernel.d_dj);
            delta_theta[idx] = dot(&kernel.d_dtheta);
        }
        Ok(BridgeGrads {
            delta_j,
            delta_theta,
            gamma,
            beta,
            input: grads.input_grad.map(|g| Image::from_raw_unchecked(h, w, g)),
        })
    }
}

/// One-shot bridge evaluation.
pub fn bridge(img: &Image, cfg: &BankConfig, offsets: &OffsetParams, norm: &NormState) -> Result<FeatureTensor> {
    let b = Bridge::new(cfg, offsets, img.height(), img.width())?;
    Ok(b.forward(img, norm, false)?.0)
}

/// The non-deformable scattering path: the same bridge with all offsets zero.
pub fn fixed_wst(img: &Image, cfg: &BankConfig, norm: &NormState) -> Result<FeatureTensor> {
    bridge(img, cfg, &OffsetParams::zeros(cfg), norm)
}

/// One-shot gradient of `sum(upstream * bridge(img))`.
pub fn bridge_backward(
    img: &Image,
    cfg: &BankConfig,
    offsets: &OffsetParams,
    norm: &NormState,
    upstream: &FeatureTensor,
) -> Result<BridgeGrads> {
    let b = Bridge::new(cfg, offsets, img.height(), img.width())?;
    let (_, tape) = b.forward(img, norm, true)?;
    b.backward(&tape.expect("recorded"), norm, upstream, true)
}
