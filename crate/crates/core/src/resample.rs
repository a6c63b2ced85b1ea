//! Factor-two resampling with reflective boundaries, plus the adjoints the
//! training code needs for backpropagation.

use crate::error::{Error, Result};
use crate::image::{reflect_index, Image};
use crate::tensor::FeatureTensor;

/// Catmull-Rom cubic convolution parameter.
pub const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel with parameter `a`.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Taps of the factor-two bicubic decimator. Output `i` samples the input at
/// `2i + 0.5`, so the taps sit at `2i-1 .. 2i+2`.
fn bicubic_taps() -> [f64; 4] {
    [
        cubic_kernel(1.5, CUBIC_A),
        cubic_kernel(0.5, CUBIC_A),
        cubic_kernel(0.5, CUBIC_A),
        cubic_kernel(1.5, CUBIC_A),
    ]
}

fn check_even(h: usize, w: usize) -> Result<()> {
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::Dimensions(format!(
            "factor-two resampling needs even dims, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Separable bicubic decimation of one `h x w` plane.
pub(crate) fn bicubic_down_plane(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let taps = bicubic_taps();
    let (oh, ow) = (h / 2, w / 2);
    // rows first: h x ow
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for j in 0..ow {
            let base = 2 * j as isize - 1;
            let mut acc = 0.0;
            for (t, &wt) in taps.iter().enumerate() {
                acc += wt * row[reflect_index(base + t as isize, w)];
            }
            tmp[r * ow + j] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        let base = 2 * i as isize - 1;
        for (t, &wt) in taps.iter().enumerate() {
            let r = reflect_index(base + t as isize, h);
            let src_row = &tmp[r * ow..(r + 1) * ow];
            let dst = &mut out[i * ow..(i + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += wt * s;
            }
        }
    }
    out
}

/// Adjoint of [`bicubic_down_plane`]: maps an `h/2 x w/2` gradient back to `h x w`.
pub(crate) fn bicubic_down_plane_adjoint(grad: &[f64], h: usize, w: usize) -> Vec<f64> {
    let taps = bicubic_taps();
    let (oh, ow) = (h / 2, w / 2);
    let mut tmp = vec![0.0; h * ow];
    for i in 0..oh {
        let base = 2 * i as isize - 1;
        for (t, &wt) in taps.iter().enumerate() {
            let r = reflect_index(base + t as isize, h);
            for j in 0..ow {
                tmp[r * ow + j] += wt * grad[i * ow + j];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for j in 0..ow {
            let g = tmp[r * ow + j];
            let base = 2 * j as isize - 1;
            for (t, &wt) in taps.iter().enumerate() {
                out[r * w + reflect_index(base + t as isize, w)] += wt * g;
            }
        }
    }
    out
}

/// Catmull-Rom bicubic decimation by two with reflective boundaries.
pub fn bicubic_downsample2(img: &Image) -> Result<Image> {
    let (h, w) = img.dims();
    check_even(h, w)?;
    Ok(Image::from_raw_unchecked(
        h / 2,
        w / 2,
        bicubic_down_plane(img.pixels(), h, w),
    ))
}

/// Half-grid bilinear decimation: each output sits at the centre of a 2x2
/// input block, which makes it the block average.
pub(crate) fn bilinear_down_plane(src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    let ow = w / 2;
    for i in 0..h / 2 {
        let r0 = &src[2 * i * w..(2 * i + 1) * w];
        let r1 = &src[(2 * i + 1) * w..(2 * i + 2) * w];
        for j in 0..ow {
            dst[i * ow + j] =
                0.25 * ((r0[2 * j] + r0[2 * j + 1]) + (r1[2 * j] + r1[2 * j + 1]));
        }
    }
}

pub(crate) fn bilinear_down_plane_adjoint(grad: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    let ow = w / 2;
    for i in 0..h / 2 {
        for j in 0..ow {
            let g = 0.25 * grad[i * ow + j];
            dst[2 * i * w + 2 * j] += g;
            dst[2 * i * w + 2 * j + 1] += g;
            dst[(2 * i + 1) * w + 2 * j] += g;
            dst[(2 * i + 1) * w + 2 * j + 1] += g;
        }
    }
}

/// Per-channel bilinear decimation by two; labels are carried over.
pub fn bilinear_downsample2(tensor: &FeatureTensor) -> Result<FeatureTensor> {
    let (h, w) = (tensor.height(), tensor.width());
    check_even(h, w)?;
    let n_out = (h / 2) * (w / 2);
    let mut data = vec![0.0; n_out * tensor.channels()];
    for c in 0..tensor.channels() {
        bilinear_down_plane(tensor.channel(c), h, w, &mut data[c * n_out..(c + 1) * n_out]);
    }
    Ok(FeatureTensor::from_raw_unchecked(
        h / 2,
        w / 2,
        tensor.channels(),
        data,
        tensor.labels().to_vec(),
    ))
}

/// Two-tap source indices and weights for output `i` of a 2x bilinear upsample
/// (half-pixel centres, reflective boundary).
#[inline]
fn up_taps(i: usize, n: usize) -> ((usize, f64), (usize, f64)) {
    let m = (i / 2) as isize;
    if i % 2 == 0 {
        ((reflect_index(m - 1, n), 0.25), (reflect_index(m, n), 0.75))
    } else {
        ((reflect_index(m, n), 0.75), (reflect_index(m + 1, n), 0.25))
    }
}

/// Bilinear 2x upsample of an `h x w` plane into `2h x 2w`.
pub(crate) fn bilinear_up_plane(src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    let (oh, ow) = (2 * h, 2 * w);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for j in 0..ow {
            let ((a, wa), (b, wb)) = up_taps(j, w);
            tmp[r * ow + j] = wa * src[r * w + a] + wb * src[r * w + b];
        }
    }
    for i in 0..oh {
        let ((a, wa), (b, wb)) = up_taps(i, h);
        for j in 0..ow {
            dst[i * ow + j] = wa * tmp[a * ow + j] + wb * tmp[b * ow + j];
        }
    }
}

pub(crate) fn bilinear_up_plane_adjoint(grad: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    let (oh, ow) = (2 * h, 2 * w);
    let mut tmp = vec![0.0; h * ow];
    for i in 0..oh {
        let ((a, wa), (b, wb)) = up_taps(i, h);
        for j in 0..ow {
            let g = grad[i * ow + j];
            tmp[a * ow + j] += wa * g;
            tmp[b * ow + j] += wb * g;
        }
    }
    for r in 0..h {
        for j in 0..ow {
            let ((a, wa), (b, wb)) = up_taps(j, w);
            let g = tmp[r * ow + j];
            dst[r * w + a] += wa * g;
            dst[r * w + b] += wb * g;
        }
    }
}
