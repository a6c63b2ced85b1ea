//! Synthetic forward-looking sonar sequences.
//!
//! Targets are 2D silhouettes seen from the sensor at the fan apex. The
//! sensor frame has `x` to the right and `y` straight ahead (bearing zero).
//! Each beam is a ray from the apex through its centre bearing; range bins
//! that overlap the silhouette return the target reflectivity, bins behind
//! the first surface hit return nothing (acoustic shadow) and the rest return
//! the background level.

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::fusenet::FrameSequence;
use crate::geometry::{polar_to_cartesian, PolarFan};
use crate::image::Image;
use crate::io::{atomic_write, quantize, read_image, write_image, ImageEncoding};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Ring,
    Capsule,
    Trapezoid,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ring => "ring",
            Self::Capsule => "capsule",
            Self::Trapezoid => "trapezoid",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ring" => Ok(Self::Ring),
            "capsule" => Ok(Self::Capsule),
            "trapezoid" => Ok(Self::Trapezoid),
            _ => Err(Error::InvalidArgument(format!("unknown target kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: TargetKind,
    /// Largest extent of the silhouette in metres.
    pub size: f64,
    /// Return strength of the target surface; 0 removes the target.
    pub reflectivity: f64,
    /// Target centre `(x, y)` in metres, sensor frame.
    pub position: (f64, f64),
    pub background_level: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.size > 0.0 && self.size.is_finite()) {
            return Err(Error::InvalidArgument(format!("target size must be positive, got {}", self.size)));
        }
        for (n, v) in [("reflectivity", self.reflectivity), ("background_level", self.background_level)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{n} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.position.0.is_finite() && self.position.1.is_finite()) {
            return Err(Error::NonFinite("target position".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    /// Gamma shape of the unit-mean speckle; infinity disables speckle.
    pub speckle_shape: f64,
    pub multipath_count: usize,
    /// Gain of the first ghost; ghost `m` is scaled by `gain^m`.
    pub multipath_gain: f64,
    /// Range bins between successive ghosts.
    pub multipath_delay: usize,
    pub contrast_gain: f64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            speckle_shape: 2.0,
            multipath_count: 1,
            multipath_gain: 0.3,
            multipath_delay: 4,
            contrast_gain: 0.6,
        }
    }
}

impl DegradationSpec {
    /// Leaves the clean fan untouched.
    pub fn none() -> Self {
        Self {
            speckle_shape: f64::INFINITY,
            multipath_count: 0,
            multipath_gain: 0.0,
            multipath_delay: 0,
            contrast_gain: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speckle_shape > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "speckle shape must be positive, got {}",
                self.speckle_shape
            )));
        }
        if !(0.0..=1.0).contains(&self.multipath_gain) {
            return Err(Error::InvalidArgument(format!(
                "multipath gain must lie in [0, 1], got {}",
                self.multipath_gain
            )));
        }
        if self.multipath_count > 0 && self.multipath_delay == 0 {
            return Err(Error::InvalidArgument("multipath ghosts need a delay of at least one bin".into()));
        }
        if !(self.contrast_gain > 0.0 && self.contrast_gain <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "contrast gain must lie in (0, 1], got {}",
                self.contrast_gain
            )));
        }
        Ok(())
    }
}

/// Polar sampling grid of the simulated sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FanGeometry {
    pub range_bins: usize,
    pub beam_count: usize,
    pub fov_deg: f64,
    pub max_range: f64,
}

impl Default for FanGeometry {
    fn default() -> Self {
        Self {
            range_bins: 192,
            beam_count: 96,
            fov_deg: 50.0,
            max_range: 8.0,
        }
    }
}

impl FanGeometry {
    pub fn validate(&self) -> Result<()> {
        PolarFan::filled(self.range_bins, self.beam_count, self.fov_deg, self.max_range, 0.0).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Render {
    pub fan: PolarFan,
    /// False when no beam hit the target (the fan is background only).
    pub target_in_view: bool,
}

/// Pose angles live on a grid of `2^-24` turns, so poses that differ by whole
/// turns render identically.
pub fn quantize_pose(angle: f64) -> f64 {
    const STEPS: f64 = (1u64 << 24) as f64;
    let n = (angle / TAU * STEPS).round().rem_euclid(STEPS);
    n * (TAU / STEPS)
}

/// Entry and exit distances of a ray with a convex or annular silhouette.
fn ray_intervals(kind: TargetKind, size: f64, o: (f64, f64), d: (f64, f64)) -> Vec<(f64, f64)> {
    match kind {
        TargetKind::Ring => {
            let outer = size / 2.0;
            let Some((a, b)) = circle_hit(o, d, (0.0, 0.0), outer) else {
                return vec![];
            };
            match circle_hit(o, d, (0.0, 0.0), 0.6 * outer) {
                Some((c, e)) => vec![(a, c), (e, b)],
                None => vec![(a, b)],
            }
        }
        TargetKind::Capsule => {
            let rho = size / 8.0;
            let half = size / 2.0 - rho;
            let parts = [
                circle_hit(o, d, (-half, 0.0), rho),
                circle_hit(o, d, (half, 0.0), rho),
                polygon_hit(o, d, &[(-half, -rho), (half, -rho), (half, rho), (-half, rho)]),
            ];
            let hits: Vec<(f64, f64)> = parts.into_iter().flatten().collect();
            if hits.is_empty() {
                return vec![];
            }
            let a = hits.iter().map(|h| h.0).fold(f64::INFINITY, f64::min);
            let b = hits.iter().map(|h| h.1).fold(f64::NEG_INFINITY, f64::max);
            vec![(a, b)]
        }
        TargetKind::Trapezoid => {
            let (w1, w2, h) = (size / 2.0, size / 4.0, 0.3 * size);
            polygon_hit(o, d, &[(-w1, -h), (w1, -h), (w2, h), (-w2, h)]).into_iter().collect()
        }
    }
}

fn circle_hit(o: (f64, f64), d: (f64, f64), c: (f64, f64), r: f64) -> Option<(f64, f64)> {
    let (px, py) = (o.0 - c.0, o.1 - c.1);
    let b = px * d.0 + py * d.1;
    let q = px * px + py * py - r * r;
    let disc = b * b - q;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some((-b - s, -b + s))
}

/// Cyrus-Beck clipping against a counter-clockwise convex polygon.
fn polygon_hit(o: (f64, f64), d: (f64, f64), verts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..verts.len() {
        let (a, b) = (verts[i], verts[(i + 1) % verts.len()]);
        // outward normal of a counter-clockwise edge
        let n = (b.1 - a.1, a.0 - b.0);
        let num = n.0 * (a.0 - o.0) + n.1 * (a.1 - o.1);
        let den = n.0 * d.0 + n.1 * d.1;
        if den == 0.0 {
            if num < 0.0 {
                return None;
            }
        } else if den > 0.0 {
            hi = hi.min(num / den);
        } else {
            lo = lo.max(num / den);
        }
    }
    (lo < hi).then_some((lo, hi))
}

/// Noise-free fan of `scene` with the target turned by `pose_angle` about
/// its centre.
pub fn render_clean(scene: &SceneSpec, pose_angle: f64, geom: &FanGeometry) -> Result<Render> {
    scene.validate()?;
    geom.validate()?;
    if !pose_angle.is_finite() {
        return Err(Error::NonFinite("pose angle".into()));
    }
    let (nr, nb) = (geom.range_bins, geom.beam_count);
    let bg = scene.background_level;
    let mut out = PolarFan::filled(nr, nb, geom.fov_deg, geom.max_range, bg)?;
    if scene.reflectivity == 0.0 {
        return Ok(Render {
            fan: out,
            target_in_view: false,
        });
    }
    let alpha = quantize_pose(pose_angle);
    let (s, c) = alpha.sin_cos();
    // sensor frame -> target frame: translate by -centre, rotate by -alpha
    let to_local = |v: (f64, f64)| (c * v.0 + s * v.1, -s * v.0 + c * v.1);
    let origin = to_local((-scene.position.0, -scene.position.1));
    let dr = out.range_step();
    let mut samples = out.samples().to_vec();
    let mut any = false;
    for beam in 0..nb {
        let bearing = out.bearing_of(beam);
        let dir = to_local((bearing.sin(), bearing.cos()));
        let hits: Vec<(f64, f64)> = ray_intervals(scene.kind, scene.size, origin, dir)
            .into_iter()
            .filter(|&(a, b)| b > 0.0 && a < b)
            .map(|(a, b)| (a.max(0.0), b))
            .collect();
        let Some(first_exit) = hits.first().map(|h| h.1) else {
            continue;
        };
        for r in 0..nr {
            let (lo, hi) = (r as f64 * dr, (r + 1) as f64 * dr);
            let v = if hits.iter().any(|&(a, b)| a < hi && b >= lo) {
                any = true;
                scene.reflectivity
            } else if lo >= first_exit {
                0.0
            } else {
                bg
            };
            samples[r * nb + beam] = v;
        }
    }
    out = out.with_samples(samples)?;
    Ok(Render {
        fan: out,
        target_in_view: any,
    })
}

/// `contrast_gain * (fan + ghosts)` times i.i.d. unit-mean Gamma speckle.
pub fn degrade(fan: &PolarFan, spec: &DegradationSpec, seed: u64) -> Result<PolarFan> {
    spec.validate()?;
    let (nr, nb) = (fan.range_bins(), fan.beam_count());
    let src = fan.samples();
    let mut acc = src.to_vec();
    let mut gain = 1.0;
    for m in 1..=spec.multipath_count {
        gain *= spec.multipath_gain;
        let shift = m * spec.multipath_delay;
        for r in shift..nr {
            for b in 0..nb {
                acc[r * nb + b] += gain * src[(r - shift) * nb + b];
            }
        }
    }
    if spec.speckle_shape.is_finite() {
        let gamma = Gamma::new(spec.speckle_shape, 1.0 / spec.speckle_shape)
            .map_err(|e| Error::InvalidArgument(format!("speckle distribution: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut acc {
            *v *= spec.contrast_gain * gamma.sample(&mut rng);
        }
    } else {
        for v in &mut acc {
            *v *= spec.contrast_gain;
        }
    }
    fan.with_samples(acc)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Speckle seed of frame `index`: `splitmix64(seed ^ splitmix64(index))`.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Trajectory {
    /// The sensor orbits the target; the target turns by `step_deg` per frame.
    Circular { step_deg: f64 },
    /// The sensor slides right by `step_m` per frame.
    Linear { step_m: f64 },
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Circular { step_deg } => write!(f, "circular:{step_deg:?}"),
            Self::Linear { step_m } => write!(f, "linear:{step_m:?}"),
        }
    }
}

impl FromStr for Trajectory {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("trajectory must be `circular:<deg>` or `linear:<m>`, got `{s}`"));
        let (kind, step) = s.split_once(':').ok_or_else(bad)?;
        let step: f64 = step.trim().parse().map_err(|_| bad())?;
        if !step.is_finite() {
            return Err(bad());
        }
        match kind.trim() {
            "circular" => Ok(Self::Circular { step_deg: step }),
            "linear" => Ok(Self::Linear { step_m: step }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Tire,
    Torpedo,
    Frustum,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Tire, Preset::Torpedo, Preset::Frustum];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tire => "tire",
            Self::Torpedo => "torpedo",
            Self::Frustum => "frustum",
        }
    }

    /// Low-contrast absorbing ring, bright capsule with strong multipath and
    /// speckle, or a moderately scattering trapezoid.
    pub fn scene_and_degradation(self) -> (SceneSpec, DegradationSpec) {
        match self {
            Self::Tire => (
                SceneSpec {
                    kind: TargetKind::Ring,
                    size: 1.6,
                    reflectivity: 0.55,
                    position: (0.0, 4.5),
                    background_level: 0.08,
                },
                DegradationSpec::default(),
            ),
            Self::Torpedo => (
                SceneSpec {
                    kind: TargetKind::Capsule,
                    size: 2.0,
                    reflectivity: 0.9,
                    position: (0.0, 4.5),
                    background_level: 0.05,
                },
                DegradationSpec {
                    speckle_shape: 1.5,
                    multipath_count: 3,
                    multipath_gain: 0.45,
                    multipath_delay: 5,
                    contrast_gain: 0.85,
                },
            ),
            Self::Frustum => (
                SceneSpec {
                    kind: TargetKind::Trapezoid,
                    size: 1.8,
                    reflectivity: 0.7,
                    position: (0.0, 4.5),
                    background_level: 0.06,
                },
                DegradationSpec {
                    speckle_shape: 3.0,
                    multipath_count: 1,
                    multipath_gain: 0.2,
                    multipath_delay: 4,
                    contrast_gain: 0.75,
                },
            ),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{s}` (tire, torpedo, frustum)")))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to regenerate one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub scene: SceneSpec,
    pub degradation: DegradationSpec,
    pub geometry: FanGeometry,
    pub trajectory: Trajectory,
    /// Pose of the first frame, radians.
    pub start_pose: f64,
    pub frames: usize,
    /// Side of the square Cartesian frames.
    pub resolution: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn preset(p: Preset) -> Self {
        let (scene, degradation) = p.scene_and_degradation();
        Self {
            scene,
            degradation,
            geometry: FanGeometry::default(),
            trajectory: Trajectory::Circular { step_deg: 1.0 },
            start_pose: 0.0,
            frames: 16,
            resolution: 128,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.degradation.validate()?;
        self.geometry.validate()?;
        if self.frames == 0 {
            return Err(Error::InvalidArgument("a sequence needs at least one frame".into()));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidArgument(format!("resolution must be >= 2, got {}", self.resolution)));
        }
        if !self.start_pose.is_finite() {
            return Err(Error::NonFinite("start pose".into()));
        }
        Ok(())
    }

    /// Target pose and centre of frame `i`, and the angle recorded for it.
    /// Circular runs record the target turn; linear runs record the bearing
    /// of the target centre.
    fn frame_pose(&self, i: usize) -> (f64, (f64, f64), f64) {
        let (x, y) = self.scene.position;
        match self.trajectory {
            Trajectory::Circular { step_deg } => {
                let a = self.start_pose + (i as f64 * step_deg).to_radians();
                (a, (x, y), a)
            }
            Trajectory::Linear { step_m } => {
                let cx = x - i as f64 * step_m;
                (self.start_pose, (cx, y), cx.atan2(y))
            }
        }
    }

    /// Config of sequence `index` in a multi-sequence dataset: a derived seed
    /// and a start pose spread over the full turn.
    pub fn nth_sequence(&self, index: usize) -> Self {
        let mut c = self.clone();
        c.seed = splitmix64(self.seed ^ 0xA5A5_0000_0000_0000 ^ index as u64);
        c.start_pose = self.start_pose + (index as f64 * 137.0).to_radians();
        c
    }

    pub fn to_manifest(&self) -> String {
        let s = &self.scene;
        let d = &self.degradation;
        let g = &self.geometry;
        format!(
            "scene.kind = {}\nscene.size = {:?}\nscene.reflectivity = {:?}\nscene.position_x = {:?}\n\
             scene.position_y = {:?}\nscene.background_level = {:?}\n\
             degradation.speckle_shape = {:?}\ndegradation.multipath_count = {}\n\
             degradation.multipath_gain = {:?}\ndegradation.multipath_delay = {}\n\
             degradation.contrast_gain = {:?}\n\
             fan.range_bins = {}\nfan.beam_count = {}\nfan.fov_deg = {:?}\nfan.max_range = {:?}\n\
             trajectory = {}\nstart_pose = {:?}\nframes = {}\nresolution = {}\nseed = {}\n",
            s.kind,
            s.size,
            s.reflectivity,
            s.position.0,
            s.position.1,
            s.background_level,
            d.speckle_shape,
            d.multipath_count,
            d.multipath_gain,
            d.multipath_delay,
            d.contrast_gain,
            g.range_bins,
            g.beam_count,
            g.fov_deg,
            g.max_range,
            self.trajectory,
            self.start_pose,
            self.frames,
            self.resolution,
            self.seed
        )
    }

    /// Overrides fields from `kv`; `preset` (if given) is applied first.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        if let Some((line, p)) = kv.take_str("preset") {
            let p: Preset = p.parse().map_err(|e: Error| Error::Config {
                line,
                reason: e.to_string(),
            })?;
            let (scene, degradation) = p.scene_and_degradation();
            self.scene = scene;
            self.degradation = degradation;
        }
        let s = &mut self.scene;
        kv.take_into("scene.kind", &mut s.kind)?;
        kv.take_into("scene.size", &mut s.size)?;
        kv.take_into("scene.reflectivity", &mut s.reflectivity)?;
        kv.take_into("scene.position_x", &mut s.position.0)?;
        kv.take_into("scene.position_y", &mut s.position.1)?;
        kv.take_into("scene.background_level", &mut s.background_level)?;
        let d = &mut self.degradation;
        kv.take_into("degradation.speckle_shape", &mut d.speckle_shape)?;
        kv.take_into("degradation.multipath_count", &mut d.multipath_count)?;
        kv.take_into("degradation.multipath_gain", &mut d.multipath_gain)?;
        kv.take_into("degradation.multipath_delay", &mut d.multipath_delay)?;
        kv.take_into("degradation.contrast_gain", &mut d.contrast_gain)?;
        let g = &mut self.geometry;
        kv.take_into("fan.range_bins", &mut g.range_bins)?;
        kv.take_into("fan.beam_count", &mut g.beam_count)?;
        kv.take_into("fan.fov_deg", &mut g.fov_deg)?;
        kv.take_into("fan.max_range", &mut g.max_range)?;
        kv.take_into("trajectory", &mut self.trajectory)?;
        kv.take_into("start_pose", &mut self.start_pose)?;
        kv.take_into("frames", &mut self.frames)?;
        kv.take_into("resolution", &mut self.resolution)?;
        kv.take_into("seed", &mut self.seed)?;
        Ok(())
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut c = Self::preset(Preset::Tire);
        for key in ["scene.kind", "trajectory", "frames", "resolution", "seed"] {
            if kv.line_of(key).is_none() {
                return Err(Error::Config {
                    line: 0,
                    reason: format!("manifest is missing `{key}`"),
                });
            }
        }
        c.apply(&mut kv)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }
}

/// Clean renders of every frame of `cfg`, scan-converted.
pub fn clean_frames(cfg: &SimConfig) -> Result<Vec<Image>> {
    cfg.validate()?;
    (0..cfg.frames)
        .into_par_iter()
        .map(|i| {
            let (angle, centre, _) = cfg.frame_pose(i);
            let scene = SceneSpec {
                position: centre,
                ..cfg.scene.clone()
            };
            polar_to_cartesian(&render_clean(&scene, angle, &cfg.geometry)?.fan, cfg.resolution)
        })
        .collect()
}

/// Degraded, scan-converted frames with their recorded poses.
pub fn gen_sequence(cfg: &SimConfig) -> Result<FrameSequence> {
    cfg.validate()?;
    let frames = (0..cfg.frames)
        .into_par_iter()
        .map(|i| {
            let (angle, centre, _) = cfg.frame_pose(i);
            let scene = SceneSpec {
                position: centre,
                ..cfg.scene.clone()
            };
            let clean = render_clean(&scene, angle, &cfg.geometry)?;
            let noisy = degrade(&clean.fan, &cfg.degradation, frame_seed(cfg.seed, i))?;
            polar_to_cartesian(&noisy, cfg.resolution)
        })
        .collect::<Result<Vec<_>>>()?;
    let poses = (0..cfg.frames).map(|i| cfg.frame_pose(i).2).collect();
    FrameSequence::new(frames, poses)
}

pub const MANIFEST: &str = "manifest";
pub const POSES: &str = "poses.csv";

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:03}.png")
}

/// The sequence as stored: pixels quantized to 16 bits.
pub fn stored_sequence(seq: &FrameSequence) -> Result<FrameSequence> {
    let frames = seq
        .frames()
        .iter()
        .map(|f| f.map(|v| quantize(v, ImageEncoding::Png16)))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, seq.poses().to_vec())
}

/// Writes `manifest`, `frame_NNN.png` and `poses.csv` into `dir`.
pub fn write_sequence_dir(dir: &Path, cfg: &SimConfig, seq: &FrameSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    atomic_write(&dir.join(MANIFEST), cfg.to_manifest().as_bytes())?;
    for (i, f) in seq.frames().iter().enumerate() {
        write_image(f, &dir.join(frame_file_name(i)))?;
    }
    let mut csv = String::from("index,angle_rad\n");
    for (i, p) in seq.poses().iter().enumerate() {
        csv.push_str(&format!("{i},{p:?}\n"));
    }
    atomic_write(&dir.join(POSES), csv.as_bytes())
}

pub fn read_poses(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("index,angle_rad") {
        return Err(Error::format(path, "expected header `index,angle_rad`"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let (idx, angle) = l
                .split_once(',')
                .ok_or_else(|| Error::format(path, format!("row {}: expected two fields", i + 1)))?;
            if idx.trim().parse::<usize>().ok() != Some(i) {
                return Err(Error::format(path, format!("row {}: index must be {i}", i + 1)));
            }
            angle
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|a| a.is_finite())
                .ok_or_else(|| Error::format(path, format!("row {}: bad angle `{angle}`", i + 1)))
        })
        .collect()
}

/// Reads a sequence directory: `poses.csv` fixes the frame count, frames are
/// `frame_NNN.png`, and the manifest is optional.
pub fn load_sequence_dir(dir: &Path) -> Result<(Option<SimConfig>, FrameSequence)> {
    let poses = read_poses(&dir.join(POSES))?;
    if poses.is_empty() {
        return Err(Error::format(dir.join(POSES), "no frames listed"));
    }
    let frames = (0..poses.len())
        .map(|i| read_image(&dir.join(frame_file_name(i))))
        .collect::<Result<Vec<_>>>()?;
    let manifest_path = dir.join(MANIFEST);
    let cfg = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        Some(SimConfig::from_manifest(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?)
    } else {
        None
    };
    Ok((cfg, FrameSequence::new(frames, poses)?))
}

/// Sequence directories directly under `root` (`seq_NNN`), or `root` itself
/// when it holds a `poses.csv`.
pub fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(POSES).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(POSES).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root, "no sequence directories (missing poses.csv)"));
    }
    Ok(dirs)
}

pub fn sequence_dir_name(i: usize) -> String {
    format!("seq_{i:03}")
}

/// Generates `count` sequences of `cfg` under `root/seq_NNN`.
pub fn write_dataset(root: &Path, cfg: &SimConfig, count: usize) -> Result<Vec<FrameSequence>> {
    if count == 0 {
        return Err(Error::InvalidArgument("a dataset needs at least one sequence".into()));
    }
    (0..count)
        .map(|i| {
            let c = cfg.nth_sequence(i);
            let seq = stored_sequence(&gen_sequence(&c)?)?;
            write_sequence_dir(&root.join(sequence_dir_name(i)), &c, &seq)?;
            Ok(seq)
        })
        .collect()
}

pub fn load_dataset(root: &Path) -> Result<Vec<FrameSequence>> {
    sequence_dirs(root)?
        .iter()
        .map(|d| load_sequence_dir(d).map(|(_, s)| s))
        .collect()
}
