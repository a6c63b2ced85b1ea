//! Reference-free objective: decimation consistency plus local and gradient
//! consistency against the median reference.

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::resample::{bicubic_down_plane_adjoint, bicubic_downsample2};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_con: f64,
    pub lambda_grad: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_con: 0.1,
            lambda_grad: 0.1,
        }
    }
}

impl LossWeights {
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_into("lambda_con", &mut self.lambda_con)?;
        kv.take_into("lambda_grad", &mut self.lambda_grad)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("lambda_con", self.lambda_con), ("lambda_grad", self.lambda_grad)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{n} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The three terms and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub down: f64,
    pub con: f64,
    pub grad: f64,
}

/// Per-pixel median over frames; mean of the two middle values for even `K`.
pub fn median_reference(frames: &[Image]) -> Result<Image> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("median of an empty frame set".into()))?;
    let dims = first.dims();
    if let Some(i) = frames.iter().position(|f| f.dims() != dims) {
        return Err(Error::Dimensions(format!(
            "frame {i} is {:?}, frame 0 is {dims:?}",
            frames[i].dims()
        )));
    }
    let k = frames.len();
    let mut buf = vec![0.0; k];
    let data = (0..first.len())
        .map(|i| {
            for (b, f) in buf.iter_mut().zip(frames) {
                *b = f.pixels()[i];
            }
            buf.sort_by(f64::total_cmp);
            if k % 2 == 1 {
                buf[k / 2]
            } else {
                0.5 * (buf[k / 2 - 1] + buf[k / 2])
            }
        })
        .collect();
    Image::new(dims.0, dims.1, data)
}

fn same_dims(a: &Image, b: &Image, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimensions(format!(
            "{what}: {:?} vs reference {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `mean((H(y) - jstar)^2)`.
pub fn loss_down(y: &Image, jstar: &Image) -> Result<f64> {
    let hy = bicubic_downsample2(y)?;
    same_dims(&hy, jstar, "downsampled output")?;
    Ok(mse(hy.pixels(), jstar.pixels()))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn check_interior(h: usize, w: usize) -> Result<()> {
    if h < 3 || w < 3 {
        return Err(Error::Dimensions(format!(
            "consistency losses need an interior pixel, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Mean over interior pixels `p` and their 4-neighbours `q` of
/// `| |y_p - y_q| - |r_p - r_q| |`, on raw planes.
fn consistency(y: &[f64], r: &[f64], h: usize, w: usize, grad: Option<&mut [f64]>, scale: f64) -> f64 {
    let count = ((h - 2) * (w - 2) * 4) as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for py in 1..h - 1 {
        for px in 1..w - 1 {
            let p = py * w + px;
            for (dy, dx) in NEIGHBOURS {
                let q = (py as isize + dy) as usize * w + (px as isize + dx) as usize;
                let dyv = y[p] - y[q];
                let inner = dyv.abs() - (r[p] - r[q]).abs();
                total += inner.abs();
                if let Some(g) = grad.as_deref_mut() {
                    let s = inner.signum() * (inner != 0.0) as u8 as f64 * dyv.signum() * (dyv != 0.0) as u8 as f64;
                    g[p] += scale * s / count;
                    g[q] -= scale * s / count;
                }
            }
        }
    }
    total / count
}

pub fn loss_con(y_base: &Image, jstar: &Image) -> Result<f64> {
    same_dims(y_base, jstar, "local consistency")?;
    let (h, w) = y_base.dims();
    check_interior(h, w)?;
    Ok(consistency(y_base.pixels(), jstar.pixels(), h, w, None, 1.0))
}

/// Forward differences `(d/dx, d/dy)`, zero in the last column / row.
pub fn forward_gradients(p: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                gx[i] = p[i + 1] - p[i];
            }
            if y + 1 < h {
                gy[i] = p[i + w] - p[i];
            }
        }
    }
    (gx, gy)
}

fn forward_gradients_adjoint(dgx: &[f64], dgy: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                out[i + 1] += dgx[i];
                out[i] -= dgx[i];
            }
            if y + 1 < h {
                out[i + w] += dgy[i];
                out[i] -= dgy[i];
            }
        }
    }
}

/// Local consistency applied to each forward-difference component, summed.
pub fn loss_grad(y_base: &Image, jstar: &Image) -> Result<f64> {
    same_dims(y_base, jstar, "gradient consistency")?;
    let (h, w) = y_base.dims();
    check_interior(h, w)?;
    let (yx, yy) = forward_gradients(y_base.pixels(), h, w);
    let (rx, ry) = forward_gradients(jstar.pixels(), h, w);
    Ok(consistency(&yx, &rx, h, w, None, 1.0) + consistency(&yy, &ry, h, w, None, 1.0))
}

/// Records the quantities the reverse pass needs.
pub struct LossTape {
    pub(crate) y_dims: (usize, usize),
    pub(crate) y_base: Vec<f64>,
    pub(crate) reference: Image,
    pub(crate) weights: LossWeights,
}

/// `L_down + lambda_con L_con + lambda_grad L_grad` between `H(y)` and a
/// reference of the same size as `H(y)`.
pub fn loss_total(y: &Image, reference: &Image, weights: &LossWeights) -> Result<(LossBreakdown, LossTape)> {
    weights.validate()?;
    let hy = bicubic_downsample2(y)?;
    same_dims(&hy, reference, "downsampled output")?;
    let (h, w) = hy.dims();
    check_interior(h, w)?;
    let down = mse(hy.pixels(), reference.pixels());
    let con = loss_con(&hy, reference)?;
    let grad = loss_grad(&hy, reference)?;
    let total = down + weights.lambda_con * con + weights.lambda_grad * grad;
    Ok((
        LossBreakdown { total, down, con, grad },
        LossTape {
            y_dims: y.dims(),
            y_base: hy.into_pixels(),
            reference: reference.clone(),
            weights: *weights,
        },
    ))
}

/// `d loss_total / d y`.
pub fn loss_backward(tape: &LossTape) -> Image {
    let (h, w) = tape.reference.dims();
    let n = (h * w) as f64;
    let r = tape.reference.pixels();
    let yb = &tape.y_base;
    let mut g: Vec<f64> = yb.iter().zip(r).map(|(a, b)| 2.0 * (a - b) / n).collect();
    let wts = tape.weights;
    if wts.lambda_con != 0.0 {
        consistency(yb, r, h, w, Some(&mut g), wts.lambda_con);
    }
    if wts.lambda_grad != 0.0 {
        let (yx, yy) = forward_gradients(yb, h, w);
        let (rx, ry) = forward_gradients(r, h, w);
        let mut gx = vec![0.0; h * w];
        let mut gy = vec![0.0; h * w];
        consistency(&yx, &rx, h, w, Some(&mut gx), wts.lambda_grad);
        consistency(&yy, &ry, h, w, Some(&mut gy), wts.lambda_grad);
        forward_gradients_adjoint(&gx, &gy, h, w, &mut g);
    }
    let (yh, yw) = tape.y_dims;
    Image::from_raw_unchecked(yh, yw, bicubic_down_plane_adjoint(&g, yh, yw))
}

/// Reference at the resolution of `H(Y)`: the median itself when the output
/// is super-resolved, otherwise its bicubic decimation.
pub fn reference_for(median: &Image, output_dims: (usize, usize)) -> Result<Image> {
    let (mh, mw) = median.dims();
    if output_dims == (2 * mh, 2 * mw) {
        Ok(median.clone())
    } else if output_dims == (mh, mw) {
        bicubic_downsample2(median)
    } else {
        Err(Error::Dimensions(format!(
            "output {output_dims:?} is neither the frame size nor twice the frame size {:?}",
            median.dims()
        )))
    }
}
