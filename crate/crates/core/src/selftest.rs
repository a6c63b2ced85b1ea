//! Built-in structural and numerical checks: bridge shape, zero-offset
//! equivalence, full-model gradients, scattering stability, metric oracles,
//! loss identities and fusion invariances.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::gaussian_blur;
use crate::fusenet::{FrameSequence, FusionModel, ModelSpec, Planes};
use crate::image::Image;
use crate::metrics::{ag_metric, std_metric};
use crate::pipeline::{Enhancer, EnhancerConfig, InputVariant};
use crate::resample::bicubic_downsample2;
use crate::scatter::{fixed_wst_reference, BankConfig, Bridge, NormState, OffsetParams};
use crate::tensor::ChannelLabel;
use crate::training::{self, loss_total, LossWeights, TrainingExample};

pub type AgFn = fn(&Image) -> Result<f64>;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u32, name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        id,
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn uniform(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(h, w, |_, _| rng.random())
}

fn bit_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Bridge on a 64x64 frame with the default bank: a 32x32x172 tensor made of
/// 1 zeroth-, 18 first- and 153 second-order channels, in under a second.
pub fn channel_arithmetic() -> CheckResult {
    timed(1, "channel arithmetic", || {
        let cfg = BankConfig::default();
        let img = uniform(64, 64, &mut ChaCha8Rng::seed_from_u64(1));
        let t = Instant::now();
        let b = Bridge::new(&cfg, &OffsetParams::zeros(&cfg), 64, 64)?;
        let (out, _) = b.forward(&img, &NormState::instance(b.channels()), false)?;
        let secs = t.elapsed().as_secs_f64();
        let count = |f: fn(&ChannelLabel) -> bool| out.labels().iter().filter(|l| f(l)).count();
        let s0 = count(|l| matches!(l, ChannelLabel::S0));
        let s1 = count(|l| matches!(l, ChannelLabel::S1 { .. }));
        let s2 = count(|l| matches!(l, ChannelLabel::S2 { .. }));
        let dims = (out.height(), out.width(), out.channels());
        Ok((
            dims == (32, 32, 172) && (s0, s1, s2) == (1, 18, 153) && secs < 1.0,
            format!("{}x{}x{} = {s0}+{s1}+{s2} channels in {secs:.3} s", dims.0, dims.1, dims.2),
        ))
    })
}

/// The deformable bridge at zero offsets against the frozen per-channel path.
pub fn zero_offset_equivalence() -> CheckResult {
    timed(2, "zero-offset equivalence", || {
        let cfg = BankConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = Bridge::new(&cfg, &OffsetParams::zeros(&cfg), 64, 64)?;
        let norm = NormState::instance(b.channels());
        let mut exact = 0;
        for _ in 0..10 {
            let img = uniform(64, 64, &mut rng);
            let (a, _) = b.forward(&img, &norm, false)?;
            let r = fixed_wst_reference(&img, &cfg, &norm)?;
            exact += bit_equal(a.values(), r.values()) as usize;
        }
        Ok((exact == 10, format!("{exact}/10 images bit-identical")))
    })
}

/// Reverse-mode gradients of the total loss against central differences on
/// an 8x8, K=2, C_lat=4 WST model: every offset plus 120 other parameters.
pub fn gradient_fidelity() -> CheckResult {
    timed(3, "gradient fidelity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enh = Enhancer::new(EnhancerConfig {
            c_lat: 4,
            seed: 1,
            ..EnhancerConfig::default()
        })?;
        let mut p = enh.param_vector();
        let n_model = enh.model().param_count();
        let n_off = enh.offsets().len();
        for (i, v) in p.iter_mut().enumerate() {
            if (n_model..n_model + n_off).contains(&i) {
                *v = rng.random_range(-0.1..0.1);
            } else {
                *v += rng.random_range(-0.05..0.05);
            }
        }
        enh.set_param_vector(&p)?;
        let frames = (0..2).map(|_| uniform(8, 8, &mut rng)).collect();
        let ex = TrainingExample::new(&enh, FrameSequence::new(frames, vec![0.0, 0.05])?)?;
        let w = LossWeights::default();
        let grad = training::backward(&enh, &training::objective_tape(&enh, &ex, &w)?.1)?.flat;

        let mut idx: Vec<usize> = (n_model..n_model + n_off).collect();
        let mut rest: Vec<usize> = (0..p.len()).filter(|i| !(n_model..n_model + n_off).contains(i)).collect();
        rest.shuffle(&mut rng);
        idx.extend(&rest[..120]);
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let mut bad = 0;
        for &i in &idx {
            let mut at = |d: f64| -> Result<f64> {
                let mut q = p.clone();
                q[i] += d;
                enh.set_param_vector(&q)?;
                Ok(training::objective(&enh, &ex, &w)?.total)
            };
            let fd = (at(h)? - at(-h)?) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-7);
            worst = worst.max(rel);
            bad += (rel >= 1e-4) as usize;
        }
        Ok((
            bad == 0,
            format!("{} parameters ({n_off} offsets), worst relative error {worst:.2e}", idx.len()),
        ))
    })
}

/// Relative change of the pre-normalization scattering tensor under a
/// 2-pixel circular shift stays below the pixel-domain change.
pub fn scattering_stability() -> CheckResult {
    timed(4, "scattering stability", || {
        let cfg = BankConfig::default();
        let b = Bridge::new(&cfg, &OffsetParams::zeros(&cfg), 64, 64)?;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ok = 0;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let img = gaussian_blur(&uniform(64, 64, &mut rng), 2.0)?;
            let moved = img.circular_shift(0, 2);
            let pixel = l2(img.pixels().iter().zip(moved.pixels()).map(|(a, b)| a - b)) / l2(img.pixels().iter().copied());
            let s = b.features(&img)?;
            let t = b.features(&moved)?;
            let feat = l2(s.values().iter().zip(t.values()).map(|(a, b)| a - b)) / s.l2_norm();
            worst = worst.max(feat / pixel);
            ok += (feat < pixel) as usize;
        }
        Ok((ok == 20, format!("{ok}/20 cases, worst ratio {worst:.3}")))
    })
}

fn std_oracle(img: &Image) -> f64 {
    let (h, w) = img.dims();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            sum += 255.0 * img.get(y, x);
        }
    }
    let mean = sum / (h * w) as f64;
    let mut ss = 0.0;
    for y in 0..h {
        for x in 0..w {
            let d = 255.0 * img.get(y, x) - mean;
            ss += d * d;
        }
    }
    (ss / (h * w) as f64).sqrt()
}

fn ag_oracle(img: &Image) -> f64 {
    let (h, w) = img.dims();
    let mut sum = 0.0;
    for y in 1..h {
        for x in 1..w {
            let dx = 255.0 * (img.get(y, x) - img.get(y, x - 1));
            let dy = 255.0 * (img.get(y, x) - img.get(y - 1, x));
            sum += (dx * dx + dy * dy).sqrt();
        }
    }
    sum / ((h - 1) * (w - 1)) as f64
}

/// STD and AG against double-loop oracles on 50 random images, and exact
/// zeros on a constant image. `ag` is the average-gradient implementation
/// under test.
pub fn metric_oracles_with(ag: AgFn) -> CheckResult {
    timed(5, "metric oracles", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let h = rng.random_range(2..40);
            let w = rng.random_range(2..40);
            let img = uniform(h, w, &mut rng);
            worst = worst
                .max((std_metric(&img) - std_oracle(&img)).abs())
                .max((ag(&img)? - ag_oracle(&img)).abs());
        }
        let c = Image::filled(17, 23, 0.37);
        let (cs, ca) = (std_metric(&c), ag(&c)?);
        Ok((
            worst <= 1e-9 && cs == 0.0 && ca == 0.0,
            format!("worst deviation {worst:.2e}, constant image ({cs}, {ca})"),
        ))
    })
}

pub fn metric_oracles() -> CheckResult {
    metric_oracles_with(ag_metric)
}

/// All terms vanish when the decimated output equals the reference, and are
/// non-negative on random pairs.
pub fn loss_identities() -> CheckResult {
    timed(6, "loss identities", || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = LossWeights::default();
        let y = uniform(24, 24, &mut rng);
        let (zero, _) = loss_total(&y, &bicubic_downsample2(&y)?, &w)?;
        let zero_ok = [zero.total, zero.down, zero.con, zero.grad].iter().all(|&v| v == 0.0);
        let mut negative = 0;
        for _ in 0..100 {
            let n = 2 * rng.random_range(3..12);
            let y = uniform(n, n, &mut rng).scaled(rng.random_range(0.1..4.0))?;
            let r = uniform(n / 2, n / 2, &mut rng);
            let (l, _) = loss_total(&y, &r, &w)?;
            negative += [l.total, l.down, l.con, l.grad].iter().any(|&v| !(v >= 0.0)) as usize;
        }
        Ok((
            zero_ok && negative == 0,
            format!(
                "identity losses ({}, {}, {}, {}), {negative}/100 random pairs with a negative term",
                zero.total, zero.down, zero.con, zero.grad
            ),
        ))
    })
}

/// Bit-exact pair symmetry, 15 merges over 4 levels for 16 frames, and
/// frame-order invariance of the enhanced output for power-of-two K.
pub fn fusion_invariances() -> CheckResult {
    timed(10, "fusion invariances", || {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut symmetric = true;
        for seed in 0..5 {
            let m = FusionModel::new(
                ModelSpec {
                    c_in: 1,
                    c_lat: 4,
                    sr2x: false,
                },
                seed,
            )?;
            let mut planes = || Planes::new(4, 6, 6, (0..144).map(|_| rng.random_range(-1.0..1.0)).collect());
            let (a, b) = (planes(), planes());
            symmetric &= bit_equal(&m.fuse_pair(&a, &b)?.data, &m.fuse_pair(&b, &a)?.data);
        }
        let m = FusionModel::new(
            ModelSpec {
                c_in: 1,
                c_lat: 2,
                sr2x: false,
            },
            0,
        )?;
        let leaves = (0..16).map(|_| Planes::new(2, 4, 4, (0..32).map(|_| rng.random()).collect())).collect();
        let (_, tape) = m.fuse_tree_tape(leaves)?;
        let (merges, depth) = (tape.merges(), tape.depth());

        let mut invariant = 0;
        for (model, k) in [2usize, 4, 8, 16, 4].into_iter().enumerate() {
            let enh = Enhancer::new(EnhancerConfig {
                variant: InputVariant::Wst,
                c_lat: 4,
                seed: model as u64,
                ..EnhancerConfig::default()
            })?;
            let frames = (0..k).map(|_| uniform(16, 16, &mut rng)).collect();
            let poses = (0..k).map(|i| 0.01 * i as f64).collect();
            let seq = FrameSequence::new(frames, poses)?;
            let y = enh.forward(&seq)?;
            let mut all = true;
            for _ in 0..3 {
                let mut order: Vec<usize> = (0..k).collect();
                order.shuffle(&mut rng);
                all &= bit_equal(y.pixels(), enh.forward(&seq.permuted(&order)?)?.pixels());
            }
            invariant += all as usize;
        }
        Ok((
            symmetric && merges == 15 && depth == 4 && invariant == 5,
            format!("symmetric {symmetric}, K=16 tree {merges} merges in {depth} levels, {invariant}/5 models order-invariant"),
        ))
    })
}

/// Every suite in order, with `ag` as the average gradient under test.
pub fn run_with(ag: AgFn) -> Vec<CheckResult> {
    vec![
        channel_arithmetic(),
        zero_offset_equivalence(),
        gradient_fidelity(),
        scattering_stability(),
        metric_oracles_with(ag),
        loss_identities(),
        fusion_invariances(),
    ]
}

pub fn run() -> Vec<CheckResult> {
    run_with(ag_metric)
}
