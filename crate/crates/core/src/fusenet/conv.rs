//! 3x3 reflective convolutions as im2col + GEMM.

use crate::image::reflect_index;

/// `C x H x W` activations, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "plane buffer size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &Planes) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }
}

/// `c = alpha * a * b + beta * c` for row-major operands given by
/// (row stride, column stride).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Column matrix `[C*9, H*W]`: row `(c, dy, dx)` holds the input shifted by
/// `(dy-1, dx-1)` with reflection.
pub(crate) fn im2col(x: &Planes) -> Vec<f64> {
    let (h, w) = (x.height, x.width);
    let hw = h * w;
    let mut cols = vec![0.0; x.channels * 9 * hw];
    for c in 0..x.channels {
        let src = x.plane(c);
        for dy in 0..3 {
            for dx in 0..3 {
                let row = &mut cols[((c * 9) + dy * 3 + dx) * hw..((c * 9) + dy * 3 + dx + 1) * hw];
                for y in 0..h {
                    let sy = reflect_index(y as isize + dy as isize - 1, h);
                    let s = &src[sy * w..(sy + 1) * w];
                    let d = &mut row[y * w..(y + 1) * w];
                    for (xx, out) in d.iter_mut().enumerate() {
                        *out = s[reflect_index(xx as isize + dx as isize - 1, w)];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`], accumulated into `dx`.
pub(crate) fn col2im(cols: &[f64], dx: &mut Planes) {
    let (h, w) = (dx.height, dx.width);
    let hw = h * w;
    for c in 0..dx.channels {
        let dst = &mut dx.data[c * hw..(c + 1) * hw];
        for dy in 0..3 {
            for ddx in 0..3 {
                let row = &cols[((c * 9) + dy * 3 + ddx) * hw..((c * 9) + dy * 3 + ddx + 1) * hw];
                for y in 0..h {
                    let sy = reflect_index(y as isize + dy as isize - 1, h);
                    for xx in 0..w {
                        dst[sy * w + reflect_index(xx as isize + ddx as isize - 1, w)] += row[y * w + xx];
                    }
                }
            }
        }
    }
}

/// Geometry of one 3x3 convolution inside a flat parameter vector: weights
/// `[out, in, 3, 3]` at `weight`, biases `[out]` at `bias`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: usize,
    pub bias: usize,
}

impl ConvLayer {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * 9
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.c_out
    }

    pub fn forward(&self, params: &[f64], x: &Planes) -> Planes {
        assert_eq!(x.channels, self.c_in, "conv input channels");
        let hw = x.plane_len();
        let cols = im2col(x);
        let mut out = vec![0.0; self.c_out * hw];
        for (o, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.fill(params[self.bias + o]);
        }
        let k = self.c_in * 9;
        let w = &params[self.weight..self.weight + self.weight_len()];
        gemm(self.c_out, k, hw, w, (k, 1), &cols, (hw, 1), 1.0, &mut out);
        Planes::new(self.c_out, x.height, x.width, out)
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient. `x` is the layer input from the forward pass.
    pub fn backward(&self, params: &[f64], x: &Planes, dout: &Planes, grads: &mut [f64]) -> Planes {
        let hw = x.plane_len();
        let k = self.c_in * 9;
        let cols = im2col(x);
        for o in 0..self.c_out {
            grads[self.bias + o] += dout.plane(o).iter().sum::<f64>();
        }
        let dw = &mut grads[self.weight..self.weight + self.weight_len()];
        gemm(self.c_out, hw, k, &dout.data, (hw, 1), &cols, (1, hw), 1.0, dw);
        let w = &params[self.weight..self.weight + self.weight_len()];
        let mut dcols = vec![0.0; k * hw];
        gemm(k, self.c_out, hw, w, (1, k), &dout.data, (hw, 1), 0.0, &mut dcols);
        let mut dx = Planes::zeros(self.c_in, x.height, x.width);
        col2im(&dcols, &mut dx);
        dx
    }
}

pub const LEAK: f64 = 0.1;

pub fn leaky(x: &mut Planes) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v *= LEAK;
        }
    }
}

/// Backward of [`leaky`] given the pre-activation.
pub fn leaky_backward(pre: &Planes, grad: &mut Planes) {
    for (g, p) in grad.data.iter_mut().zip(&pre.data) {
        if *p < 0.0 {
            *g *= LEAK;
        }
    }
}
