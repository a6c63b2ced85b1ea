//! End-to-end enhancer: input features, fusion network and checkpoints.
//!
//! The trainable parameters form one flat vector in the order
//! `[network, delta_j, delta_theta, gamma, beta]`; the last four groups exist
//! only for the scattering variant.

use std::path::Path;

use rayon::prelude::*;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::features::{FeatureMapKind, FeatureParams};
use crate::fusenet::checkpoint::CheckpointFile;
use crate::fusenet::model::{f32_grid, DecodeTape, EncodeTape, TreeTape};
use crate::fusenet::{FrameSequence, FusionModel, ModelSpec, Planes};
use crate::image::Image;
use crate::resample::bilinear_down_plane;
use crate::scatter::bridge::{Bridge, BridgeTape};
use crate::scatter::{BankConfig, NormMode, NormState, OffsetParams};
use crate::tensor::FeatureTensor;

/// What the encoder sees for each frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputVariant {
    /// The raw frame alone.
    Flr,
    /// Raw frame stacked with one handcrafted feature map.
    Handcrafted(FeatureMapKind),
    /// The deformable scattering bridge.
    Wst,
}

impl InputVariant {
    pub fn for_kind(kind: Option<FeatureMapKind>) -> Self {
        match kind {
            None => Self::Flr,
            Some(FeatureMapKind::Wst) => Self::Wst,
            Some(k) => Self::Handcrafted(k),
        }
    }

    /// Row label in ablation tables.
    pub fn label(self) -> String {
        match self {
            Self::Flr => "FLR".into(),
            Self::Handcrafted(k) => format!("FLR+{k}"),
            Self::Wst => "FLR+WST".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("flr") {
            return Ok(Self::Flr);
        }
        let rest = t
            .strip_prefix("FLR+")
            .or_else(|| t.strip_prefix("flr+"))
            .unwrap_or(t);
        Ok(Self::for_kind(Some(rest.parse()?)))
    }

    pub fn input_channels(self, bank: &BankConfig) -> usize {
        match self {
            Self::Flr => 1,
            Self::Handcrafted(_) => 2,
            Self::Wst => bank.channel_count(),
        }
    }
}

impl std::str::FromStr for InputVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Hyper-parameters fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerConfig {
    pub variant: InputVariant,
    pub c_lat: usize,
    pub sr2x: bool,
    pub bank: BankConfig,
    pub features: FeatureParams,
    pub seed: u64,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            variant: InputVariant::Wst,
            c_lat: 32,
            sr2x: false,
            bank: BankConfig::default(),
            features: FeatureParams::default(),
            seed: 0,
        }
    }
}

impl EnhancerConfig {
    /// Reads `variant`, `c_lat`, `sr2x`, `model_seed`, the `bank.*` geometry
    /// and the `features.*` operator parameters.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_into("variant", &mut self.variant)?;
        kv.take_into("c_lat", &mut self.c_lat)?;
        kv.take_into("sr2x", &mut self.sr2x)?;
        kv.take_into("model_seed", &mut self.seed)?;
        let b = &mut self.bank;
        kv.take_into("bank.scales", &mut b.scales)?;
        kv.take_into("bank.orientations", &mut b.orientations)?;
        kv.take_into("bank.kernel_truncation", &mut b.kernel_truncation)?;
        kv.take_into("bank.base_scale", &mut b.base_scale)?;
        kv.take_into("bank.xi", &mut b.xi)?;
        kv.take_into("bank.sigma_ratio", &mut b.sigma_ratio)?;
        kv.take_into("bank.phi_sigma", &mut b.phi_sigma)?;
        let f = &mut self.features;
        kv.take_into("features.hog_cell", &mut f.hog_cell)?;
        kv.take_into("features.hog_bins", &mut f.hog_bins)?;
        kv.take_into("features.canny_sigma", &mut f.canny_sigma)?;
        kv.take_into("features.canny_low", &mut f.canny_low)?;
        kv.take_into("features.canny_high", &mut f.canny_high)?;
        kv.take_into("features.gre_sigma", &mut f.gre_sigma)?;
        kv.take_into("features.haar_scale", &mut f.haar_scale)?;
        Ok(())
    }
}

pub struct Enhancer {
    cfg: EnhancerConfig,
    model: FusionModel,
    offsets: OffsetParams,
    norm: NormState,
    generation: u64,
}

/// Gradients in flat-parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerGrads {
    pub flat: Vec<f64>,
}

struct FrameTape {
    bridge: Option<BridgeTape>,
    encode: EncodeTape,
}

/// Everything recorded by [`Enhancer::forward_tape`].
pub struct EnhancerTape {
    generation: u64,
    bridge: Option<Bridge>,
    frames: Vec<FrameTape>,
    tree: TreeTape,
    decode: DecodeTape,
}

impl EnhancerTape {
    pub fn tree(&self) -> &TreeTape {
        &self.tree
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}

/// Largest 32-bit float not exceeding `bound`.
fn f32_within(bound: f64) -> f64 {
    let f = bound as f32;
    if f as f64 > bound {
        f32::from_bits(f.to_bits() - 1) as f64
    } else {
        f as f64
    }
}

fn planes_of(t: FeatureTensor) -> Planes {
    let (c, h, w) = (t.channels(), t.height(), t.width());
    Planes::new(c, h, w, t.into_values())
}

impl Enhancer {
    pub fn new(cfg: EnhancerConfig) -> Result<Self> {
        cfg.bank.validate()?;
        let spec = ModelSpec {
            c_in: cfg.variant.input_channels(&cfg.bank),
            c_lat: cfg.c_lat,
            sr2x: cfg.sr2x,
        };
        let model = FusionModel::new(spec, cfg.seed)?;
        let offsets = OffsetParams::zeros(&cfg.bank);
        let norm = NormState::instance(cfg.bank.channel_count());
        Ok(Self {
            cfg,
            model,
            offsets,
            norm,
            generation: 0,
        })
    }

    pub fn config(&self) -> &EnhancerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &FusionModel {
        &self.model
    }

    pub fn offsets(&self) -> &OffsetParams {
        &self.offsets
    }

    pub fn norm(&self) -> &NormState {
        &self.norm
    }

    /// Bumped whenever parameters change; tapes from older generations are stale.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn set_norm(&mut self, norm: NormState) -> Result<()> {
        norm.validate(self.cfg.bank.channel_count())?;
        self.norm = norm;
        self.generation += 1;
        Ok(())
    }

    pub fn set_offsets(&mut self, offsets: OffsetParams) -> Result<()> {
        offsets.validate(&self.cfg.bank)?;
        self.offsets = offsets;
        self.generation += 1;
        Ok(())
    }

    fn trains_bridge(&self) -> bool {
        self.cfg.variant == InputVariant::Wst
    }

    pub fn param_len(&self) -> usize {
        let mut n = self.model.param_count();
        if self.trains_bridge() {
            n += 2 * self.offsets.len() + 2 * self.norm.channels();
        }
        n
    }

    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = self.model.params.clone();
        if self.trains_bridge() {
            v.extend(&self.offsets.delta_j);
            v.extend(&self.offsets.delta_theta);
            v.extend(&self.norm.gamma);
            v.extend(&self.norm.beta);
        }
        v
    }

    /// Replaces every trainable parameter; offsets are not clamped here.
    pub fn set_param_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.param_len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters supplied, enhancer has {}",
                v.len(),
                self.param_len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        let mut it = v.iter().copied();
        for p in &mut self.model.params {
            *p = it.next().expect("length checked");
        }
        if self.trains_bridge() {
            for p in self
                .offsets
                .delta_j
                .iter_mut()
                .chain(self.offsets.delta_theta.iter_mut())
                .chain(self.norm.gamma.iter_mut())
                .chain(self.norm.beta.iter_mut())
            {
                *p = it.next().expect("length checked");
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// Projects offsets onto their admissible box and rounds parameters to the
    /// 32-bit grid they are stored at.
    pub fn project(&mut self) {
        for p in self.model.params.iter_mut().chain(self.norm.gamma.iter_mut()).chain(self.norm.beta.iter_mut()) {
            *p = f32_grid(*p);
        }
        let bj = f32_within(crate::scatter::bank::MAX_DELTA_J);
        let bt = f32_within(self.cfg.bank.max_delta_theta());
        for v in &mut self.offsets.delta_j {
            *v = f32_grid(*v).clamp(-bj, bj);
        }
        for v in &mut self.offsets.delta_theta {
            *v = f32_grid(*v).clamp(-bt, bt);
        }
        self.generation += 1;
    }

    /// Output size for frames of size `(h, w)`.
    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let s = self.model.spec().output_scale();
        (h / 2 * s, w / 2 * s)
    }

    fn check_frames(&self, seq: &FrameSequence) -> Result<()> {
        let (h, w) = seq.dims();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimensions(format!("frames must have even dims, got {h}x{w}")));
        }
        Ok(())
    }

    fn bridge_for(&self, seq: &FrameSequence) -> Result<Option<Bridge>> {
        if !self.trains_bridge() {
            return Ok(None);
        }
        let (h, w) = seq.dims();
        Ok(Some(Bridge::new(&self.cfg.bank, &self.offsets, h, w)?))
    }

    /// Encoder input for a non-scattering variant: `[raw, feature]` decimated
    /// to half resolution.
    pub fn handcrafted_input(&self, frame: &Image) -> Result<Planes> {
        let (h, w) = frame.dims();
        let (oh, ow) = (h / 2, w / 2);
        let mut chans = vec![frame.clone()];
        if let InputVariant::Handcrafted(kind) = self.cfg.variant {
            chans.push(self.cfg.features.apply(kind, frame)?);
        }
        let n = oh * ow;
        let mut data = vec![0.0; chans.len() * n];
        for (c, img) in chans.iter().enumerate() {
            bilinear_down_plane(img.pixels(), h, w, &mut data[c * n..(c + 1) * n]);
        }
        Ok(Planes::new(chans.len(), oh, ow, data))
    }

    /// Scattering features of each frame before normalization, for calibrating
    /// a fixed normalization.
    pub fn raw_bridge_features(&self, seq: &FrameSequence) -> Result<Vec<FeatureTensor>> {
        let (h, w) = seq.dims();
        let bridge = Bridge::new(&self.cfg.bank, &self.offsets, h, w)?;
        seq.frames().par_iter().map(|f| bridge.features(f)).collect()
    }

    fn encode_frame(&self, bridge: Option<&Bridge>, frame: &Image, record: bool) -> Result<(Planes, Option<FrameTape>)> {
        let (input, btape) = match bridge {
            Some(b) => {
                let (t, tape) = b.forward(frame, &self.norm, record)?;
                (planes_of(t), tape)
            }
            None => (self.handcrafted_input(frame)?, None),
        };
        let (z, etape) = self.model.encode_tape(&input)?;
        Ok((z, record.then_some(FrameTape { bridge: btape, encode: etape })))
    }

    pub fn forward(&self, seq: &FrameSequence) -> Result<Image> {
        self.check_frames(seq)?;
        let bridge = self.bridge_for(seq)?;
        let frames = seq.frames();
        let latents = seq
            .fusion_order()
            .into_par_iter()
            .map(|i| self.encode_frame(bridge.as_ref(), &frames[i], false).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        let z = self.model.fuse_tree(&latents)?;
        self.model.decode(&z)
    }

    pub fn forward_tape(&self, seq: &FrameSequence) -> Result<(Image, EnhancerTape)> {
        self.check_frames(seq)?;
        let bridge = self.bridge_for(seq)?;
        let frames = seq.frames();
        let encoded = seq
            .fusion_order()
            .into_par_iter()
            .map(|i| self.encode_frame(bridge.as_ref(), &frames[i], true))
            .collect::<Result<Vec<_>>>()?;
        let (latents, frames): (Vec<Planes>, Vec<FrameTape>) =
            encoded.into_iter().map(|(z, t)| (z, t.expect("recorded"))).unzip();
        let (z, tree) = self.model.fuse_tree_tape(latents)?;
        let (y, decode) = self.model.decode_tape(&z)?;
        Ok((
            y,
            EnhancerTape {
                generation: self.generation,
                bridge,
                frames,
                tree,
                decode,
            },
        ))
    }

    /// Gradient of a scalar loss with upstream gradient `dy` on the output.
    /// Per-frame gradients are computed in parallel and summed in frame order.
    pub fn backward(&self, tape: &EnhancerTape, dy: &Image) -> Result<EnhancerGrads> {
        if tape.generation != self.generation {
            return Err(Error::StaleTape(format!(
                "tape recorded at parameter generation {}, enhancer is at {}",
                tape.generation, self.generation
            )));
        }
        let n_model = self.model.param_count();
        let mut shared = vec![0.0; n_model];
        let dz = self.model.decode_backward(&tape.decode, dy, &mut shared);
        let dleaves = self.model.fuse_tree_backward(&tape.tree, &dz, &mut shared);

        let total = self.param_len();
        let per_frame = tape
            .frames
            .par_iter()
            .zip(dleaves.par_iter())
            .map(|(ft, dl)| -> Result<Vec<f64>> {
                let mut g = vec![0.0; total];
                let dx = self.model.encode_backward(&ft.encode, dl, &mut g[..n_model]);
                if let (Some(bridge), Some(bt)) = (tape.bridge.as_ref(), ft.bridge.as_ref()) {
                    let labels = crate::scatter::bridge::channel_labels(&self.cfg.bank);
                    let up = FeatureTensor::new(dx.height, dx.width, dx.channels, dx.data, labels)?;
                    let bg = bridge.backward(bt, &self.norm, &up, false)?;
                    let mut off = n_model;
                    for part in [&bg.delta_j, &bg.delta_theta, &bg.gamma, &bg.beta] {
                        g[off..off + part.len()].copy_from_slice(part);
                        off += part.len();
                    }
                }
                Ok(g)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut flat = vec![0.0; total];
        flat[..n_model].copy_from_slice(&shared);
        for g in &per_frame {
            for (a, b) in flat.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(EnhancerGrads { flat })
    }

    /// Switches to fixed normalization with per-channel statistics pooled over
    /// the scattering features of every frame in `seqs`; the affine resets to
    /// `(1, 0)`.
    pub fn calibrate_norm(&mut self, seqs: &[FrameSequence]) -> Result<()> {
        let mut feats = Vec::new();
        for s in seqs {
            feats.extend(self.raw_bridge_features(s)?);
        }
        let views: Vec<&[f64]> = feats.iter().map(|t| t.values()).collect();
        let mut norm = NormState::calibrate(self.cfg.bank.channel_count(), &views)?;
        if let NormMode::Fixed { mean, var } = &mut norm.mode {
            for v in mean.iter_mut().chain(var.iter_mut()) {
                *v = f32_grid(*v);
            }
        }
        self.set_norm(norm)
    }

    // ---- checkpoints ----

    pub fn to_checkpoint(&self) -> CheckpointFile {
        let mut c = CheckpointFile::default();
        let h = &mut c.header;
        let cfg = &self.cfg;
        let set = |h: &mut std::collections::BTreeMap<String, String>, k: &str, v: String| {
            h.insert(k.to_string(), v);
        };
        set(h, "variant", cfg.variant.label());
        set(h, "c_lat", cfg.c_lat.to_string());
        set(h, "sr2x", cfg.sr2x.to_string());
        set(h, "seed", cfg.seed.to_string());
        set(h, "bank.scales", cfg.bank.scales.to_string());
        set(h, "bank.orientations", cfg.bank.orientations.to_string());
        set(h, "bank.kernel_truncation", format!("{:?}", cfg.bank.kernel_truncation));
        set(h, "bank.base_scale", format!("{:?}", cfg.bank.base_scale));
        set(h, "bank.xi", format!("{:?}", cfg.bank.xi));
        set(h, "bank.sigma_ratio", format!("{:?}", cfg.bank.sigma_ratio));
        set(h, "bank.phi_sigma", format!("{:?}", cfg.bank.phi_sigma));
        let f = &cfg.features;
        set(h, "features.hog_cell", f.hog_cell.to_string());
        set(h, "features.hog_bins", f.hog_bins.to_string());
        set(h, "features.canny_sigma", format!("{:?}", f.canny_sigma));
        set(h, "features.canny_low", format!("{:?}", f.canny_low));
        set(h, "features.canny_high", format!("{:?}", f.canny_high));
        set(h, "features.gre_sigma", format!("{:?}", f.gre_sigma));
        set(h, "features.haar_scale", f.haar_scale.to_string());
        let mode = match self.norm.mode {
            NormMode::Instance => "instance",
            NormMode::Fixed { .. } => "fixed",
        };
        set(h, "norm.mode", mode.to_string());
        for b in self.model.blocks() {
            c.push(format!("net.{}", b.name), b.shape.clone(), &self.model.params[b.offset..b.offset + b.len]);
        }
        let n = self.offsets.len();
        c.push("bridge.delta_j", vec![n], &self.offsets.delta_j);
        c.push("bridge.delta_theta", vec![n], &self.offsets.delta_theta);
        let ch = self.norm.channels();
        c.push("norm.gamma", vec![ch], &self.norm.gamma);
        c.push("norm.beta", vec![ch], &self.norm.beta);
        if let NormMode::Fixed { mean, var } = &self.norm.mode {
            c.push("norm.mean", vec![ch], mean);
            c.push("norm.var", vec![ch], var);
        }
        c
    }

    pub fn from_checkpoint(c: &CheckpointFile, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        let get = |k: &str| c.header.get(k).ok_or_else(|| bad(format!("header key {k:?} missing")));
        fn parse<T: std::str::FromStr>(v: &str, k: &str, origin: &Path) -> Result<T> {
            v.parse().map_err(|_| Error::format(origin, format!("bad value {v:?} for {k}")))
        }
        let num = |k: &str| -> Result<f64> { parse(get(k)?, k, origin) };
        let int = |k: &str| -> Result<usize> { parse(get(k)?, k, origin) };
        let cfg = EnhancerConfig {
            variant: InputVariant::parse(get("variant")?).map_err(|e| bad(e.to_string()))?,
            c_lat: int("c_lat")?,
            sr2x: parse(get("sr2x")?, "sr2x", origin)?,
            seed: parse(get("seed")?, "seed", origin)?,
            bank: BankConfig {
                scales: int("bank.scales")?,
                orientations: int("bank.orientations")?,
                kernel_truncation: num("bank.kernel_truncation")?,
                base_scale: num("bank.base_scale")?,
                xi: num("bank.xi")?,
                sigma_ratio: num("bank.sigma_ratio")?,
                phi_sigma: num("bank.phi_sigma")?,
            },
            features: FeatureParams {
                hog_cell: int("features.hog_cell")?,
                hog_bins: int("features.hog_bins")?,
                canny_sigma: num("features.canny_sigma")?,
                canny_low: num("features.canny_low")?,
                canny_high: num("features.canny_high")?,
                gre_sigma: num("features.gre_sigma")?,
                haar_scale: int("features.haar_scale")?,
            },
        };
        let mut e = Self::new(cfg).map_err(|err| bad(err.to_string()))?;
        let block = |name: &str, len: usize| -> Result<Vec<f64>> {
            let b = c.block(name).ok_or_else(|| bad(format!("block {name:?} missing")))?;
            if b.values.len() != len {
                return Err(bad(format!("block {name:?} has {} values, expected {len}", b.values.len())));
            }
            Ok(b.values.iter().map(|&v| v as f64).collect())
        };
        let blocks = e.model.blocks().to_vec();
        for b in &blocks {
            let vals = block(&format!("net.{}", b.name), b.len)?;
            e.model.params[b.offset..b.offset + b.len].copy_from_slice(&vals);
        }
        let n = e.offsets.len();
        let ch = e.norm.channels();
        e.offsets = OffsetParams {
            delta_j: block("bridge.delta_j", n)?,
            delta_theta: block("bridge.delta_theta", n)?,
        };
        let mode = match get("norm.mode")?.as_str() {
            "instance" => NormMode::Instance,
            "fixed" => NormMode::Fixed {
                mean: block("norm.mean", ch)?,
                var: block("norm.var", ch)?,
            },
            other => return Err(bad(format!("unknown norm mode {other:?}"))),
        };
        e.norm = NormState {
            mode,
            gamma: block("norm.gamma", ch)?,
            beta: block("norm.beta", ch)?,
        };
        e.offsets.validate(&e.cfg.bank).map_err(|err| bad(err.to_string()))?;
        e.norm.validate(ch).map_err(|err| bad(err.to_string()))?;
        Ok(e)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&CheckpointFile::load(path)?, path)
    }
}
