//! Encoder, symmetric pairwise fusion and decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusenet::conv::{leaky, leaky_backward, ConvLayer, Planes};
use crate::image::Image;
use crate::resample::{bilinear_up_plane, bilinear_up_plane_adjoint};

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub c_in: usize,
    pub c_lat: usize,
    /// Insert a second 2x upsampling stage in the decoder.
    pub sr2x: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_lat == 0 {
            return Err(Error::InvalidArgument(format!(
                "model needs c_in, c_lat >= 1, got {} / {}",
                self.c_in, self.c_lat
            )));
        }
        Ok(())
    }

    /// Ratio of output side length to latent side length.
    pub fn output_scale(&self) -> usize {
        if self.sr2x {
            4
        } else {
            2
        }
    }
}

/// Named slices of the flat parameter vector, in storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layers {
    enc1: ConvLayer,
    enc2: ConvLayer,
    fuse1: ConvLayer,
    fuse2: ConvLayer,
    dec1: ConvLayer,
    dec_sr: Option<ConvLayer>,
    dec2: ConvLayer,
}

/// The fusion network. All parameters live in one flat vector so optimizers
/// and checkpoints treat them uniformly.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    spec: ModelSpec,
    seed: u64,
    layers: Layers,
    blocks: Vec<ParamBlock>,
    pub params: Vec<f64>,
}

/// Rounds to the nearest 32-bit float, the precision parameters are stored at.
pub fn f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

impl FusionModel {
    /// Builds the layout and draws weights uniformly in `+-1/sqrt(fan_in)`;
    /// biases start at zero.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(spec, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in model.conv_layers() {
            let bound = 1.0 / ((layer.c_in * 9) as f64).sqrt();
            for v in &mut model.params[layer.weight..layer.weight + layer.weight_len()] {
                *v = f32_grid(rng.random_range(-bound..bound));
            }
        }
        Ok(model)
    }

    /// Same layout with every parameter zero.
    pub fn zeroed(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut conv = |name: &str, c_in: usize, c_out: usize| {
            let layer = ConvLayer {
                c_in,
                c_out,
                weight: offset,
                bias: offset + c_out * c_in * 9,
            };
            blocks.push(ParamBlock {
                name: format!("{name}.weight"),
                shape: vec![c_out, c_in, 3, 3],
                offset: layer.weight,
                len: layer.weight_len(),
            });
            blocks.push(ParamBlock {
                name: format!("{name}.bias"),
                shape: vec![c_out],
                offset: layer.bias,
                len: c_out,
            });
            offset += layer.param_len();
            layer
        };
        let (ci, cl) = (spec.c_in, spec.c_lat);
        let layers = Layers {
            enc1: conv("enc1", ci, cl),
            enc2: conv("enc2", cl, cl),
            fuse1: conv("fuse1", 2 * cl, cl),
            fuse2: conv("fuse2", cl, cl),
            dec1: conv("dec1", cl, cl),
            dec_sr: spec.sr2x.then(|| conv("dec_sr", cl, cl)),
            dec2: conv("dec2", cl, 1),
        };
        Ok(Self {
            spec,
            seed,
            layers,
            blocks,
            params: vec![0.0; offset],
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn conv_layers(&self) -> Vec<ConvLayer> {
        let l = &self.layers;
        let mut v = vec![l.enc1, l.enc2, l.fuse1, l.fuse2, l.dec1];
        v.extend(l.dec_sr);
        v.push(l.dec2);
        v
    }

    // ---- encoder ----

    pub fn encode(&self, x: &Planes) -> Result<Planes> {
        Ok(self.encode_tape(x)?.0)
    }

    pub fn encode_tape(&self, x: &Planes) -> Result<(Planes, EncodeTape)> {
        if x.channels != self.spec.c_in {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {} channels, got {}",
                self.spec.c_in, x.channels
            )));
        }
        let pre1 = self.layers.enc1.forward(&self.params, x);
        let mut h1 = pre1.clone();
        leaky(&mut h1);
        let pre2 = self.layers.enc2.forward(&self.params, &h1);
        let mut z = pre2.clone();
        leaky(&mut z);
        Ok((z, EncodeTape { x: x.clone(), pre1, h1, pre2 }))
    }

    /// Returns the input gradient; parameter gradients accumulate into `grads`.
    pub fn encode_backward(&self, tape: &EncodeTape, dz: &Planes, grads: &mut [f64]) -> Planes {
        let mut g = dz.clone();
        leaky_backward(&tape.pre2, &mut g);
        let mut g = self.layers.enc2.backward(&self.params, &tape.h1, &g, grads);
        leaky_backward(&tape.pre1, &mut g);
        self.layers.enc1.backward(&self.params, &tape.x, &g, grads)
    }

    // ---- fusion ----

    pub fn fuse_pair(&self, a: &Planes, b: &Planes) -> Result<Planes> {
        Ok(self.fuse_tape(a, b)?.0)
    }

    /// `F(a, b) = (a + b)/2 + conv(leaky(conv([a + b, |a - b|])))`, symmetric
    /// in its arguments bit for bit.
    pub fn fuse_tape(&self, a: &Planes, b: &Planes) -> Result<(Planes, FuseTape)> {
        if !a.same_shape(b) || a.channels != self.spec.c_lat {
            return Err(Error::ShapeMismatch(format!(
                "fusion needs two {}-channel latents of equal shape, got {}x{}x{} and {}x{}x{}",
                self.spec.c_lat, a.channels, a.height, a.width, b.channels, b.height, b.width
            )));
        }
        let n = a.data.len();
        let mut cat = Vec::with_capacity(2 * n);
        cat.extend(a.data.iter().zip(&b.data).map(|(x, y)| x + y));
        cat.extend(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()));
        let cat = Planes::new(2 * a.channels, a.height, a.width, cat);
        let pre1 = self.layers.fuse1.forward(&self.params, &cat);
        let mut h1 = pre1.clone();
        leaky(&mut h1);
        let mut out = self.layers.fuse2.forward(&self.params, &h1);
        for (o, s) in out.data.iter_mut().zip(&cat.data[..n]) {
            *o += 0.5 * s;
        }
        let sign = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).signum() * ((x != y) as u8 as f64)).collect();
        Ok((out, FuseTape { cat, pre1, h1, sign }))
    }

    /// Returns `(d a, d b)`.
    pub fn fuse_backward(&self, tape: &FuseTape, dout: &Planes, grads: &mut [f64]) -> (Planes, Planes) {
        let mut g = self.layers.fuse2.backward(&self.params, &tape.h1, dout, grads);
        leaky_backward(&tape.pre1, &mut g);
        let dcat = self.layers.fuse1.backward(&self.params, &tape.cat, &g, grads);
        let n = dout.data.len();
        let (ds, dd) = dcat.data.split_at(n);
        let mut da = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        for i in 0..n {
            let s = ds[i] + 0.5 * dout.data[i];
            let d = dd[i] * tape.sign[i];
            da.push(s + d);
            db.push(s - d);
        }
        let shape = |v| Planes::new(dout.channels, dout.height, dout.width, v);
        (shape(da), shape(db))
    }

    /// Balanced pairwise reduction; an odd element at the end of a level is
    /// carried up unchanged.
    pub fn fuse_tree(&self, latents: &[Planes]) -> Result<Planes> {
        Ok(self.fuse_tree_tape(latents.to_vec())?.0)
    }

    pub fn fuse_tree_tape(&self, latents: Vec<Planes>) -> Result<(Planes, TreeTape)> {
        if latents.is_empty() {
            return Err(Error::InvalidArgument("fusion tree needs at least one latent".into()));
        }
        let mut level = latents;
        let mut levels = Vec::new();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            let mut tapes = Vec::with_capacity(level.len() / 2);
            let mut iter = level.chunks(2);
            for chunk in &mut iter {
                if let [a, b] = chunk {
                    let (out, tape) = self.fuse_tape(a, b)?;
                    next.push(out);
                    tapes.push(tape);
                } else {
                    next.push(chunk[0].clone());
                }
            }
            levels.push(TreeLevel {
                count: level.len(),
                tapes,
            });
            level = next;
        }
        let root = level.pop().expect("one latent left");
        Ok((root, TreeTape { levels }))
    }

    /// Gradients with respect to each leaf latent.
    pub fn fuse_tree_backward(&self, tape: &TreeTape, droot: &Planes, grads: &mut [f64]) -> Vec<Planes> {
        let mut upper = vec![droot.clone()];
        for level in tape.levels.iter().rev() {
            let mut lower = Vec::with_capacity(level.count);
            for (i, g) in upper.into_iter().enumerate() {
                if let Some(t) = level.tapes.get(i) {
                    let (da, db) = self.fuse_backward(t, &g, grads);
                    lower.push(da);
                    lower.push(db);
                } else {
                    lower.push(g);
                }
            }
            upper = lower;
        }
        upper
    }

    // ---- decoder ----

    pub fn decode(&self, z: &Planes) -> Result<Image> {
        Ok(self.decode_tape(z)?.0)
    }

    pub fn decode_tape(&self, z: &Planes) -> Result<(Image, DecodeTape)> {
        if z.channels != self.spec.c_lat {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {} channels, got {}",
                self.spec.c_lat, z.channels
            )));
        }
        let pre1 = self.layers.dec1.forward(&self.params, z);
        let mut h = pre1.clone();
        leaky(&mut h);
        let mut up = upsample(&h);
        let mut sr = None;
        if let Some(layer) = self.layers.dec_sr {
            let pre = layer.forward(&self.params, &up);
            let mut a = pre.clone();
            leaky(&mut a);
            let up2 = upsample(&a);
            sr = Some((up, pre));
            up = up2;
        }
        let out = self.layers.dec2.forward(&self.params, &up);
        let img = Image::new(out.height, out.width, out.data).map_err(|_| Error::NonFinite("decoder output".into()))?;
        Ok((
            img,
            DecodeTape {
                z: z.clone(),
                pre1,
                sr,
                last_in: up,
            },
        ))
    }

    pub fn decode_backward(&self, tape: &DecodeTape, dy: &Image, grads: &mut [f64]) -> Planes {
        let dout = Planes::new(1, dy.height(), dy.width(), dy.pixels().to_vec());
        let mut g = self.layers.dec2.backward(&self.params, &tape.last_in, &dout, grads);
        if let (Some(layer), Some((sr_in, sr_pre))) = (self.layers.dec_sr, tape.sr.as_ref()) {
            let mut ga = upsample_adjoint(&g);
            leaky_backward(sr_pre, &mut ga);
            g = layer.backward(&self.params, sr_in, &ga, grads);
        }
        let mut gh = upsample_adjoint(&g);
        leaky_backward(&tape.pre1, &mut gh);
        self.layers.dec1.backward(&self.params, &tape.z, &gh, grads)
    }
}

fn upsample(x: &Planes) -> Planes {
    let (h, w) = (x.height, x.width);
    let mut out = Planes::zeros(x.channels, 2 * h, 2 * w);
    let n = 4 * h * w;
    for c in 0..x.channels {
        bilinear_up_plane(x.plane(c), h, w, &mut out.data[c * n..(c + 1) * n]);
    }
    out
}

fn upsample_adjoint(g: &Planes) -> Planes {
    let (h, w) = (g.height / 2, g.width / 2);
    let mut out = Planes::zeros(g.channels, h, w);
    let n = h * w;
    for c in 0..g.channels {
        bilinear_up_plane_adjoint(g.plane(c), h, w, &mut out.data[c * n..(c + 1) * n]);
    }
    out
}

pub struct EncodeTape {
    x: Planes,
    pre1: Planes,
    h1: Planes,
    pre2: Planes,
}

pub struct FuseTape {
    cat: Planes,
    pre1: Planes,
    h1: Planes,
    sign: Vec<f64>,
}

struct TreeLevel {
    count: usize,
    tapes: Vec<FuseTape>,
}

pub struct TreeTape {
    levels: Vec<TreeLevel>,
}

impl TreeTape {
    /// Number of `fuse_pair` evaluations in the tree.
    pub fn merges(&self) -> usize {
        self.levels.iter().map(|l| l.tapes.len()).sum()
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

pub struct DecodeTape {
    z: Planes,
    pre1: Planes,
    sr: Option<(Planes, Planes)>,
    last_in: Planes,
}
