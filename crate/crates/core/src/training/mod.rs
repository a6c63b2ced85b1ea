//! Objective, optimizer and training loop.

pub mod loss;
pub mod optim;

pub use loss::{
    loss_backward, loss_con, loss_down, loss_grad, loss_total, median_reference, reference_for, LossBreakdown,
    LossTape, LossWeights,
};
pub use optim::Adam;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::fusenet::FrameSequence;
use crate::image::Image;
use crate::io::atomic_write;
use crate::pipeline::{Enhancer, EnhancerGrads, EnhancerTape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Sequences per optimizer step.
    pub batch: usize,
    /// Seeds the order in which sequences are visited.
    pub seed: u64,
    /// Write `checkpoint.ckpt` every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Where checkpoints, the loss trace and diagnostics go.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 200,
            batch: 1,
            seed: 0,
            checkpoint_every: 0,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    /// Reads `learning_rate`, `steps`, `batch`, `seed` and `checkpoint_every`.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_into("learning_rate", &mut self.learning_rate)?;
        kv.take_into("steps", &mut self.steps)?;
        kv.take_into("batch", &mut self.batch)?;
        kv.take_into("seed", &mut self.seed)?;
        kv.take_into("checkpoint_every", &mut self.checkpoint_every)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// A sequence with its loss reference precomputed.
pub struct TrainingExample {
    pub sequence: FrameSequence,
    pub reference: Image,
}

impl TrainingExample {
    pub fn new(enh: &Enhancer, sequence: FrameSequence) -> Result<Self> {
        let median = median_reference(sequence.frames())?;
        let (h, w) = sequence.dims();
        let reference = reference_for(&median, enh.output_dims(h, w))?;
        Ok(Self { sequence, reference })
    }
}

pub fn prepare_examples(enh: &Enhancer, data: &[FrameSequence]) -> Result<Vec<TrainingExample>> {
    data.iter().map(|s| TrainingExample::new(enh, s.clone())).collect()
}

/// Everything one loss evaluation recorded.
pub struct ObjectiveTape {
    enhancer: EnhancerTape,
    loss: LossTape,
}

/// Forward pass plus loss, recording both tapes.
pub fn objective_tape(enh: &Enhancer, ex: &TrainingExample, w: &LossWeights) -> Result<(LossBreakdown, ObjectiveTape)> {
    let (y, enhancer) = enh.forward_tape(&ex.sequence)?;
    let (loss, tape) = loss_total(&y, &ex.reference, w)?;
    Ok((loss, ObjectiveTape { enhancer, loss: tape }))
}

pub fn objective(enh: &Enhancer, ex: &TrainingExample, w: &LossWeights) -> Result<LossBreakdown> {
    let y = enh.forward(&ex.sequence)?;
    Ok(loss_total(&y, &ex.reference, w)?.0)
}

/// Reverse pass through loss, network and bridge; fails on a stale tape.
pub fn backward(enh: &Enhancer, tape: &ObjectiveTape) -> Result<EnhancerGrads> {
    let dy = loss_backward(&tape.loss);
    enh.backward(&tape.enhancer, &dy)
}

/// Mean loss over a set of examples.
pub fn dataset_loss(enh: &Enhancer, data: &[TrainingExample], w: &LossWeights) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown {
        total: 0.0,
        down: 0.0,
        con: 0.0,
        grad: 0.0,
    };
    for ex in data {
        let l = objective(enh, ex, w)?;
        acc.total += l.total;
        acc.down += l.down;
        acc.con += l.con;
        acc.grad += l.grad;
    }
    let n = data.len() as f64;
    Ok(LossBreakdown {
        total: acc.total / n,
        down: acc.down / n,
        con: acc.con / n,
        grad: acc.grad / n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Batch loss before each step.
    pub trace: Vec<LossBreakdown>,
    /// Mean loss over the whole dataset before the first step.
    pub initial: LossBreakdown,
    /// Mean loss over the whole dataset after the last step.
    pub last: LossBreakdown,
}

pub fn trace_csv(trace: &[LossBreakdown]) -> String {
    let mut s = String::from("step,loss_total,loss_down,loss_con,loss_grad\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{:?},{:?},{:?},{:?}", l.total, l.down, l.con, l.grad);
    }
    s
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<LossBreakdown>> {
    let mut lines = text.lines();
    if lines.next() != Some("step,loss_total,loss_down,loss_con,loss_grad") {
        return Err(Error::InvalidArgument("loss trace header mismatch".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |k: usize| -> Result<f64> {
                f.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("bad loss trace row {}", i + 1)))
            };
            if num(0)? != i as f64 {
                return Err(Error::InvalidArgument(format!("loss trace row {} out of order", i + 1)));
            }
            Ok(LossBreakdown {
                total: num(1)?,
                down: num(2)?,
                con: num(3)?,
                grad: num(4)?,
            })
        })
        .collect()
}

fn non_finite(enh: &Enhancer, out_dir: Option<&Path>, step: usize, what: &str) -> Error {
    let mut msg = format!("non-finite {what} at step {step}");
    if let Some(dir) = out_dir {
        let path = dir.join("diagnostic.ckpt");
        match enh.save(&path) {
            Ok(()) => {
                let _ = write!(msg, "; diagnostic checkpoint written to {}", path.display());
            }
            Err(e) => {
                let _ = write!(msg, "; diagnostic checkpoint failed: {e}");
            }
        }
    }
    Error::NonFinite(msg)
}

/// Runs `cfg.steps` Adam steps on batches drawn from a seeded shuffle of
/// `data`. Offsets are clamped and parameters rounded to 32 bits after
/// every step. Gradients are reduced in a fixed order, so the trace does not
/// depend on the thread count.
pub fn train(enh: &mut Enhancer, data: &[TrainingExample], cfg: &TrainConfig, w: &LossWeights) -> Result<TrainReport> {
    cfg.validate()?;
    w.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one sequence".into()));
    }
    let out_dir = cfg.out_dir.as_deref();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let initial = dataset_loss(enh, data, w)?;
    if !initial.total.is_finite() {
        return Err(non_finite(enh, out_dir, 0, "loss"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut adam = Adam::new(enh.param_len(), cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut batch_loss = LossBreakdown {
            total: 0.0,
            down: 0.0,
            con: 0.0,
            grad: 0.0,
        };
        let mut grad = vec![0.0; enh.param_len()];
        for _ in 0..cfg.batch {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let ex = &data[order.pop().expect("refilled")];
            let (l, tape) = objective_tape(enh, ex, w)?;
            if !l.total.is_finite() {
                return Err(non_finite(enh, out_dir, step, "loss"));
            }
            let g = backward(enh, &tape)?;
            for (a, b) in grad.iter_mut().zip(&g.flat) {
                *a += b / cfg.batch as f64;
            }
            batch_loss.total += l.total / cfg.batch as f64;
            batch_loss.down += l.down / cfg.batch as f64;
            batch_loss.con += l.con / cfg.batch as f64;
            batch_loss.grad += l.grad / cfg.batch as f64;
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(enh, out_dir, step, "gradient"));
        }
        trace.push(batch_loss);
        let mut params = enh.param_vector();
        adam.step(&mut params, &grad);
        if params.iter().any(|v| !(*v as f32).is_finite()) {
            return Err(non_finite(enh, out_dir, step, "parameter"));
        }
        enh.set_param_vector(&params)?;
        enh.project();
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                enh.save(&dir.join("checkpoint.ckpt"))?;
            }
        }
    }

    let last = dataset_loss(enh, data, w)?;
    if let Some(dir) = out_dir {
        atomic_write(&dir.join("loss.csv"), trace_csv(&trace).as_bytes())?;
        enh.save(&dir.join("model.ckpt"))?;
    }
    Ok(TrainReport { trace, initial, last })
}
