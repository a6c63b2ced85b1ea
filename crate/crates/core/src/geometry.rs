//! Sonar fan geometry and polar-to-Cartesian scan conversion.
//!
//! Convention: the apex sits at the bottom-centre of the Cartesian image, the
//! fan opens upward, bearing zero points straight up and positive bearings
//! lean right. The Cartesian image spans `max_range` over its full height.

use crate::error::{Error, Result};
use crate::image::{reflect_index, Image};

/// Range/bearing intensity grid of a forward-looking sonar ping.
///
/// `samples` is range-major: `samples[r * beam_count + b]`, range bin 0 is
/// nearest the apex, beam 0 is the leftmost bearing.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarFan {
    range_bins: usize,
    beam_count: usize,
    fov_deg: f64,
    max_range: f64,
    samples: Vec<f64>,
}

impl PolarFan {
    pub fn new(
        range_bins: usize,
        beam_count: usize,
        fov_deg: f64,
        max_range: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if range_bins == 0 || beam_count == 0 {
            return Err(Error::Dimensions(format!(
                "fan needs at least one range bin and beam, got {range_bins}x{beam_count}"
            )));
        }
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::InvalidArgument(format!(
                "field of view must lie in (0, 180) degrees, got {fov_deg}"
            )));
        }
        if !(max_range > 0.0 && max_range.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "max range must be positive, got {max_range}"
            )));
        }
        if samples.len() != range_bins * beam_count {
            return Err(Error::Dimensions(format!(
                "{} samples for a {range_bins}x{beam_count} fan",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "fan sample (range {}, beam {})",
                i / beam_count,
                i % beam_count
            )));
        }
        Ok(Self {
            range_bins,
            beam_count,
            fov_deg,
            max_range,
            samples,
        })
    }

    pub fn filled(range_bins: usize, beam_count: usize, fov_deg: f64, max_range: f64, value: f64) -> Result<Self> {
        Self::new(
            range_bins,
            beam_count,
            fov_deg,
            max_range,
            vec![value; range_bins * beam_count],
        )
    }

    pub fn range_bins(&self) -> usize {
        self.range_bins
    }
    pub fn beam_count(&self) -> usize {
        self.beam_count
    }
    pub fn fov_deg(&self) -> f64 {
        self.fov_deg
    }
    pub fn max_range(&self) -> f64 {
        self.max_range
    }
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, range_bin: usize, beam: usize) -> f64 {
        self.samples[range_bin * self.beam_count + beam]
    }

    /// Range bin width in metres.
    pub fn range_step(&self) -> f64 {
        self.max_range / self.range_bins as f64
    }

    /// Beam width in radians.
    pub fn bearing_step(&self) -> f64 {
        self.fov_deg.to_radians() / self.beam_count as f64
    }

    /// Centre range of bin `i` in metres.
    pub fn range_of(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.range_step()
    }

    /// Centre bearing of beam `k` in radians.
    pub fn bearing_of(&self, k: usize) -> f64 {
        -0.5 * self.fov_deg.to_radians() + (k as f64 + 0.5) * self.bearing_step()
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(self.range_bins, self.beam_count, self.fov_deg, self.max_range, samples)
    }
}

/// Range (metres) and bearing (radians) of the centre of Cartesian pixel
/// `(row, col)` in an `n x n` scan-converted image, or `None` outside the fan.
pub fn pixel_to_polar(row: usize, col: usize, n: usize, fov_deg: f64, max_range: f64) -> Option<(f64, f64)> {
    let x = col as f64 + 0.5 - n as f64 / 2.0;
    let y = n as f64 - (row as f64 + 0.5);
    let range = (x * x + y * y).sqrt() * max_range / n as f64;
    let bearing = x.atan2(y);
    let half = 0.5 * fov_deg.to_radians();
    (range <= max_range && bearing.abs() <= half).then_some((range, bearing))
}

/// Scan-converts a fan into an `out_size x out_size` image. In-sector pixels
/// are bilinearly sampled at their (range, bearing); everything else is 0.
pub fn polar_to_cartesian(fan: &PolarFan, out_size: usize) -> Result<Image> {
    if out_size < 2 {
        return Err(Error::Dimensions(format!(
            "Cartesian output must be at least 2x2, got {out_size}"
        )));
    }
    let dr = fan.range_step();
    let db = fan.bearing_step();
    let half = 0.5 * fan.fov_deg.to_radians();
    let mut data = vec![0.0; out_size * out_size];
    for row in 0..out_size {
        for col in 0..out_size {
            let Some((range, bearing)) = pixel_to_polar(row, col, out_size, fan.fov_deg, fan.max_range) else {
                continue;
            };
            let fr = range / dr - 0.5;
            let fb = (bearing + half) / db - 0.5;
            data[row * out_size + col] = sample_bilinear(fan, fr, fb);
        }
    }
    Ok(Image::from_raw_unchecked(out_size, out_size, data))
}

fn sample_bilinear(fan: &PolarFan, fr: f64, fb: f64) -> f64 {
    let r0 = fr.floor();
    let b0 = fb.floor();
    let tr = fr - r0;
    let tb = fb - b0;
    let (r0, b0) = (r0 as isize, b0 as isize);
    let at = |r: isize, b: isize| fan.get(reflect_index(r, fan.range_bins), reflect_index(b, fan.beam_count));
    let top = at(r0, b0) * (1.0 - tb) + at(r0, b0 + 1) * tb;
    let bottom = at(r0 + 1, b0) * (1.0 - tb) + at(r0 + 1, b0 + 1) * tb;
    top * (1.0 - tr) + bottom * tr
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_fan_fills_sector_only() {
        let fan = PolarFan::filled(40, 30, 50.0, 10.0, 0.7).unwrap();
        let img = polar_to_cartesian(&fan, 64).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let v = img.get(r, c);
                if pixel_to_polar(r, c, 64, 50.0, 10.0).is_some() {
                    assert!((v - 0.7).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn single_bin_lands_at_closed_form_location() {
        let (nr, nb, n) = (48usize, 31usize, 96usize);
        for &(ri, bi) in &[(30usize, 15usize), (20, 4), (40, 27)] {
            let mut s = vec![0.0; nr * nb];
            s[ri * nb + bi] = 1.0;
            let fan = PolarFan::new(nr, nb, 50.0, 12.0, s).unwrap();
            let img = polar_to_cartesian(&fan, n).unwrap();
            let (best, _) = img
                .pixels()
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let (row, col) = (best / n, best % n);
            // apex at (x = n/2, y = n) in pixel-edge coordinates
            let rho = fan.range_of(ri) * n as f64 / 12.0;
            let b = fan.bearing_of(bi);
            let ex = n as f64 / 2.0 + rho * b.sin();
            let ey = n as f64 - rho * b.cos();
            let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
            assert!(
                ((px - ex).powi(2) + (py - ey).powi(2)).sqrt() <= 1.0,
                "bin ({ri},{bi}) peaked at ({px},{py}) but expected ({ex},{ey})"
            );
        }
    }

    #[test]
    fn sector_fraction_matches_monte_carlo() {
        let n = 200;
        let fan = PolarFan::filled(10, 10, 50.0, 1.0, 1.0).unwrap();
        let img = polar_to_cartesian(&fan, n).unwrap();
        let inside = img.pixels().iter().filter(|&&v| v != 0.0).count() as f64 / (n * n) as f64;

        // independent oracle: random points in the unit square, apex at (0.5, 0)
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 400_000;
        let half = 25f64.to_radians();
        let hits = (0..trials)
            .filter(|_| {
                let x: f64 = rng.random::<f64>() - 0.5;
                let y: f64 = rng.random::<f64>();
                (x * x + y * y).sqrt() <= 1.0 && x.atan2(y).abs() <= half
            })
            .count() as f64
            / trials as f64;
        assert!(((inside - hits) / hits).abs() < 0.01, "{inside} vs {hits}");
    }

    #[test]
    fn linear_in_intensity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..20 * 16).map(|_| rng.random()).collect();
        let fan = PolarFan::new(20, 16, 50.0, 5.0, s.clone()).unwrap();
        let scaled = fan.with_samples(s.iter().map(|v| v * 4.0).collect()).unwrap();
        let a = polar_to_cartesian(&fan, 32).unwrap();
        let b = polar_to_cartesian(&scaled, 32).unwrap();
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            assert_eq!(x * 4.0, *y);
        }
    }

    #[test]
    fn rejects_invalid_fans() {
        assert!(PolarFan::new(2, 2, 50.0, 1.0, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        assert!(PolarFan::filled(2, 2, 180.0, 1.0, 0.0).is_err());
        assert!(PolarFan::filled(0, 2, 50.0, 1.0, 0.0).is_err());
        let fan = PolarFan::filled(2, 2, 50.0, 1.0, 0.0).unwrap();
        assert!(polar_to_cartesian(&fan, 1).is_err());
    }
}
