//! Per-channel normalization of the bridge output with a learnable affine.

use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Where the per-channel statistics come from.
#[derive(Clone, Debug, PartialEq)]
pub enum NormMode {
    /// Mean and variance of each channel of the tensor being normalized.
    Instance,
    /// Frozen per-channel mean and variance, e.g. calibrated on a dataset.
    Fixed { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    pub mode: NormMode,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Saved intermediate values of one normalization.
pub struct NormTape {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl NormState {
    /// Instance statistics, affine `(1, 0)`.
    pub fn instance(channels: usize) -> Self {
        Self {
            mode: NormMode::Instance,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        }
    }

    pub fn fixed(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} means but {} variances",
                mean.len(),
                var.len()
            )));
        }
        let c = mean.len();
        let s = Self {
            mode: NormMode::Fixed { mean, var },
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
        };
        s.validate(c)?;
        Ok(s)
    }

    /// Fixed statistics equal to the per-channel mean and variance pooled over
    /// `tensors` (each `C x P`, channel-major).
    pub fn calibrate(channels: usize, tensors: &[&[f64]]) -> Result<Self> {
        if tensors.is_empty() {
            return Err(Error::InvalidArgument("calibration needs at least one tensor".into()));
        }
        let plane = tensors[0].len() / channels.max(1);
        if tensors.iter().any(|t| t.len() != channels * plane) || plane == 0 {
            return Err(Error::ShapeMismatch("calibration tensors differ in shape".into()));
        }
        let n = (plane * tensors.len()) as f64;
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for c in 0..channels {
            let m = tensors.iter().map(|t| t[c * plane..(c + 1) * plane].iter().sum::<f64>()).sum::<f64>() / n;
            let v = tensors
                .iter()
                .map(|t| t[c * plane..(c + 1) * plane].iter().map(|x| (x - m).powi(2)).sum::<f64>())
                .sum::<f64>()
                / n;
            mean[c] = m;
            var[c] = v;
        }
        Self::fixed(mean, var)
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let stats_ok = match &self.mode {
            NormMode::Instance => true,
            NormMode::Fixed { mean, var } => mean.len() == channels && var.len() == channels,
        };
        if self.gamma.len() != channels || self.beta.len() != channels || !stats_ok {
            return Err(Error::ShapeMismatch(format!(
                "normalization sized for {} channels, tensor has {channels}",
                self.gamma.len()
            )));
        }
        let mut all = self.gamma.iter().chain(&self.beta);
        if let NormMode::Fixed { mean, var } = &self.mode {
            if var.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidArgument("negative calibrated variance".into()));
            }
            if mean.iter().chain(var).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("normalization statistics".into()));
            }
        }
        if all.any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normalization affine".into()));
        }
        Ok(())
    }

    /// Normalizes a `C x P` channel-major buffer in place.
    pub(crate) fn apply(&self, data: &mut [f64], plane: usize, record: bool) -> Option<NormTape> {
        let c_count = self.channels();
        let mut xhat = if record { vec![0.0; data.len()] } else { Vec::new() };
        let mut inv_std = vec![0.0; c_count];
        for c in 0..c_count {
            let x = &mut data[c * plane..(c + 1) * plane];
            let (m, v) = match &self.mode {
                NormMode::Instance => {
                    let m = x.iter().sum::<f64>() / plane as f64;
                    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / plane as f64;
                    (m, v)
                }
                NormMode::Fixed { mean, var } => (mean[c], var[c]),
            };
            let s = 1.0 / (v + NORM_EPS).sqrt();
            inv_std[c] = s;
            let (g, b) = (self.gamma[c], self.beta[c]);
            for (i, a) in x.iter_mut().enumerate() {
                let h = (*a - m) * s;
                if record {
                    xhat[c * plane + i] = h;
                }
                *a = g * h + b;
            }
        }
        record.then_some(NormTape { xhat, inv_std })
    }

    /// Returns `(d input, d gamma, d beta)` for an upstream gradient.
    pub(crate) fn backward(&self, tape: &NormTape, grad: &[f64], plane: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c_count = self.channels();
        let mut dx = vec![0.0; grad.len()];
        let mut dgamma = vec![0.0; c_count];
        let mut dbeta = vec![0.0; c_count];
        for c in 0..c_count {
            let g = &grad[c * plane..(c + 1) * plane];
            let h = &tape.xhat[c * plane..(c + 1) * plane];
            let sum_g: f64 = g.iter().sum();
            let sum_gh: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
            dgamma[c] = sum_gh;
            dbeta[c] = sum_g;
            let scale = self.gamma[c] * tape.inv_std[c];
            let out = &mut dx[c * plane..(c + 1) * plane];
            match self.mode {
                NormMode::Instance => {
                    let n = plane as f64;
                    for i in 0..plane {
                        out[i] = scale * (g[i] - sum_g / n - h[i] * sum_gh / n);
                    }
                }
                NormMode::Fixed { .. } => {
                    for i in 0..plane {
                        out[i] = scale * g[i];
                    }
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(n: &NormState, x: &[f64], w: &[f64], plane: usize) -> f64 {
        let mut y = x.to_vec();
        n.apply(&mut y, plane, false);
        y.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn check_grads(n: &NormState) {
        let plane = 6;
        let x: Vec<f64> = (0..12).map(|i| ((i * 37 % 11) as f64 * 0.31).sin()).collect();
        let w: Vec<f64> = (0..12).map(|i| ((i * 13 % 7) as f64 * 0.7).cos()).collect();
        let mut y = x.clone();
        let tape = n.apply(&mut y, plane, true).unwrap();
        let (dx, dg, db) = n.backward(&tape, &w, plane);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            let fd = (loss(n, &p, &w, plane) - loss(n, &m, &w, plane)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7, "{fd} vs {}", dx[i]);
        }
        for c in 0..2 {
            let mut p = n.clone();
            p.gamma[c] += h;
            let mut m = n.clone();
            m.gamma[c] -= h;
            let fd = (loss(&p, &x, &w, plane) - loss(&m, &x, &w, plane)) / (2.0 * h);
            assert!((fd - dg[c]).abs() < 1e-7);
            let mut p = n.clone();
            p.beta[c] += h;
            let mut m = n.clone();
            m.beta[c] -= h;
            let fd = (loss(&p, &x, &w, plane) - loss(&m, &x, &w, plane)) / (2.0 * h);
            assert!((fd - db[c]).abs() < 1e-7);
        }
    }

    #[test]
    fn instance_gradients() {
        let mut n = NormState::instance(2);
        n.gamma = vec![1.3, 0.6];
        n.beta = vec![0.1, -0.2];
        check_grads(&n);
    }

    #[test]
    fn fixed_gradients() {
        let mut n = NormState::fixed(vec![0.2, -0.1], vec![0.5, 2.0]).unwrap();
        n.gamma = vec![0.9, 1.4];
        check_grads(&n);
    }

    #[test]
    fn instance_standardizes() {
        let n = NormState::instance(1);
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        n.apply(&mut x, 4, false);
        let m: f64 = x.iter().sum::<f64>() / 4.0;
        let v: f64 = x.iter().map(|a| a * a).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-15);
        assert!((v - 1.25 / (1.25 + NORM_EPS)).abs() < 1e-12);
    }

    #[test]
    fn calibrate_pools_statistics() {
        let a = [1.0, 3.0, 10.0, 10.0];
        let b = [5.0, 7.0, 10.0, 10.0];
        let n = NormState::calibrate(2, &[&a, &b]).unwrap();
        let NormMode::Fixed { mean, var } = &n.mode else { panic!() };
        assert_eq!(mean, &vec![4.0, 10.0]);
        assert_eq!(var, &vec![5.0, 0.0]);
    }
}
