//! No-reference quality metrics, evaluation tables and the feature ablation.
//!
//! Both metrics are computed on the 8-bit intensity scale (`255 * pixel`).

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMapKind;
use crate::fusenet::FrameSequence;
use crate::image::Image;
use crate::io::{quantize, ImageEncoding};
use crate::pipeline::{Enhancer, EnhancerConfig, InputVariant};
use crate::training::{prepare_examples, train, LossWeights, TrainConfig};

const SCALE: f64 = 255.0;

/// Population standard deviation, accumulated relative to the first pixel so
/// that a constant image gives exactly zero.
pub fn std_metric(img: &Image) -> f64 {
    let p = img.pixels();
    let n = p.len() as f64;
    let shift = p[0];
    let mean = p.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = p.iter().map(|v| (v - shift - mean) * (v - shift - mean)).sum::<f64>() / n;
    SCALE * var.sqrt()
}

/// Mean gradient magnitude from backward differences along both axes, over
/// pixels that have a left and an upper neighbour.
pub fn ag_metric(img: &Image) -> Result<f64> {
    let (h, w) = img.dims();
    if h < 2 || w < 2 {
        return Err(Error::Dimensions(format!("average gradient needs at least 2x2 pixels, got {h}x{w}")));
    }
    let p = img.pixels();
    let mut sum = 0.0;
    for y in 1..h {
        for x in 1..w {
            let i = y * w + x;
            let dx = p[i] - p[i - 1];
            let dy = p[i] - p[i - w];
            sum += (dx * dx + dy * dy).sqrt();
        }
    }
    Ok(SCALE * sum / ((h - 1) * (w - 1)) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub image_id: String,
    pub method: String,
    pub target: String,
    pub std: f64,
    pub ag: f64,
}

/// One image to score.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub image_id: String,
    pub method: String,
    pub target: String,
    pub image: Image,
}

/// Per-method, per-target means in order of first appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub reports: Vec<MetricsReport>,
    pub rows: Vec<(String, String, f64, f64)>,
}

impl Evaluation {
    pub fn csv(&self) -> String {
        let mut s = String::from("method,target,std,ag\n");
        for (m, t, std, ag) in &self.rows {
            let _ = writeln!(s, "{m},{t},{std:?},{ag:?}");
        }
        s
    }
}

pub fn evaluate(items: &[EvalItem]) -> Result<Evaluation> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let reports = items
        .par_iter()
        .map(|it| {
            let std = std_metric(&it.image);
            let ag = ag_metric(&it.image)?;
            if !(std.is_finite() && ag.is_finite()) {
                return Err(Error::NonFinite(format!("metrics of {}", it.image_id)));
            }
            Ok(MetricsReport {
                image_id: it.image_id.clone(),
                method: it.method.clone(),
                target: it.target.clone(),
                std,
                ag,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut groups: Vec<(String, String, f64, f64, usize)> = Vec::new();
    for r in &reports {
        match groups.iter_mut().find(|g| g.0 == r.method && g.1 == r.target) {
            Some(g) => {
                g.2 += r.std;
                g.3 += r.ag;
                g.4 += 1;
            }
            None => groups.push((r.method.clone(), r.target.clone(), r.std, r.ag, 1)),
        }
    }
    let rows = groups
        .into_iter()
        .map(|(m, t, s, a, n)| (m, t, s / n as f64, a / n as f64))
        .collect();
    Ok(Evaluation { reports, rows })
}

/// Mean STD and AG over the frames of a sequence.
pub fn raw_sequence_metrics(seq: &FrameSequence) -> Result<(f64, f64)> {
    let n = seq.len() as f64;
    let mut s = 0.0;
    let mut a = 0.0;
    for f in seq.frames() {
        s += std_metric(f);
        a += ag_metric(f)?;
    }
    Ok((s / n, a / n))
}

/// The enhanced image as it is stored and scored: clamped to `[0, 1]` and
/// quantized to 16 bits.
pub fn stored_output(y: &Image) -> Result<Image> {
    y.map(|v| quantize(v, ImageEncoding::Png16))
}

/// Stored outputs of `enh` on every sequence.
pub fn enhance_all(enh: &Enhancer, seqs: &[FrameSequence]) -> Result<Vec<Image>> {
    seqs.iter().map(|s| stored_output(&enh.forward(s)?)).collect()
}

/// Published values for the physical torpedo data, shown next to ablation
/// results for orientation only. They cannot be reproduced on synthetic data.
pub const PUBLISHED_ABLATION: [(&str, f64, f64); 6] = [
    ("FLR", 17.016, 4.932),
    ("FLR+HOG", 27.338, 4.809),
    ("FLR+Canny", 8.978, 1.552),
    ("FLR+GRE", 16.277, 3.131),
    ("FLR+HAAR", 10.348, 1.683),
    ("FLR+WST", 13.143, 5.918),
];

/// The six ablation inputs in table order.
pub fn ablation_variants() -> Vec<InputVariant> {
    let mut v = vec![InputVariant::Flr];
    v.extend(FeatureMapKind::HANDCRAFTED.map(InputVariant::Handcrafted));
    v.push(InputVariant::Wst);
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub input: String,
    pub std: f64,
    pub ag: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("input,std,ag\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?}", r.input, r.std, r.ag);
        }
        s
    }

    /// Human-readable table with the published values alongside.
    pub fn annotated(&self) -> String {
        let mut s = format!(
            "{:<12} {:>10} {:>10}   {:>10} {:>10}\n",
            "input", "std", "ag", "pub. std", "pub. ag"
        );
        for r in &self.rows {
            let published = PUBLISHED_ABLATION.iter().find(|p| p.0 == r.input);
            let (ps, pa) = published.map_or(("-".into(), "-".into()), |p| (format!("{:.3}", p.1), format!("{:.3}", p.2)));
            let _ = writeln!(s, "{:<12} {:>10.3} {:>10.3}   {:>10} {:>10}", r.input, r.std, r.ag, ps, pa);
        }
        s.push_str("published columns: physical torpedo recordings, not reproducible from synthetic data\n");
        s
    }

    pub fn row(&self, input: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.input == input)
    }
}

/// Trains one model per input variant from identical seeds and settings and
/// scores its outputs on `test`.
pub fn ablate(
    train_set: &[FrameSequence],
    test: &[FrameSequence],
    variants: &[InputVariant],
    base: &EnhancerConfig,
    cfg: &TrainConfig,
    w: &LossWeights,
) -> Result<AblationReport> {
    if train_set.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("ablation needs training and test sequences".into()));
    }
    if variants.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one input variant".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut enh = Enhancer::new(EnhancerConfig {
            variant,
            ..base.clone()
        })?;
        let data = prepare_examples(&enh, train_set)?;
        let run = TrainConfig {
            out_dir: cfg.out_dir.as_ref().map(|d| d.join(variant.label())),
            ..cfg.clone()
        };
        let rep = train(&mut enh, &data, &run, w)?;
        let outputs = enhance_all(&enh, test)?;
        let items: Vec<EvalItem> = outputs
            .into_iter()
            .enumerate()
            .map(|(i, image)| EvalItem {
                image_id: format!("test_{i:03}"),
                method: variant.label(),
                target: String::new(),
                image,
            })
            .collect();
        let ev = evaluate(&items)?;
        let (_, _, std, ag) = ev.rows[0].clone();
        rows.push(AblationRow {
            input: variant.label(),
            std,
            ag,
            initial_loss: rep.initial.total,
            final_loss: rep.last.total,
        });
    }
    Ok(AblationReport { rows })
}
