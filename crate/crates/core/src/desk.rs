//! Reduced settings that keep a full train-and-evaluate cycle within minutes
//! on one CPU core.

use crate::error::Result;
use crate::fusenet::FrameSequence;
use crate::pipeline::EnhancerConfig;
use crate::sonarsim::{gen_sequence, Preset, SimConfig};
use crate::training::TrainConfig;

pub const RESOLUTION: usize = 64;
pub const FRAMES: usize = 4;
pub const TRAINING_SEQUENCES: usize = 4;
/// Frame side for the ablation, which trains six models per repetition.
pub const ABLATION_RESOLUTION: usize = 32;
/// Sequence indices of held-out data start here, far from any training index.
pub const HELD_OUT_OFFSET: usize = 1000;

pub fn sim(p: Preset, seed: u64) -> SimConfig {
    SimConfig {
        frames: FRAMES,
        resolution: RESOLUTION,
        seed,
        ..SimConfig::preset(p)
    }
}

/// Four fixed sequences cycling through the presets (tire, torpedo, frustum,
/// tire).
pub fn training_set(seed: u64) -> Result<Vec<FrameSequence>> {
    (0..TRAINING_SEQUENCES)
        .map(|i| gen_sequence(&sim(Preset::ALL[i % Preset::ALL.len()], seed).nth_sequence(i)))
        .collect()
}

pub fn held_out(p: Preset, count: usize, seed: u64) -> Result<Vec<FrameSequence>> {
    let base = sim(p, seed);
    (0..count)
        .map(|i| gen_sequence(&base.nth_sequence(HELD_OUT_OFFSET + i)))
        .collect()
}

pub fn enhancer() -> EnhancerConfig {
    EnhancerConfig::default()
}

pub fn train_config() -> TrainConfig {
    TrainConfig::default()
}

/// Torpedo sequences at ablation size: `train` for fitting, `test` held out.
pub fn ablation_data(seed: u64, train: usize, test: usize) -> Result<(Vec<FrameSequence>, Vec<FrameSequence>)> {
    let base = SimConfig {
        resolution: ABLATION_RESOLUTION,
        ..sim(Preset::Torpedo, seed)
    };
    let fit = (0..train).map(|i| gen_sequence(&base.nth_sequence(i))).collect::<Result<_>>()?;
    let held = (0..test)
        .map(|i| gen_sequence(&base.nth_sequence(HELD_OUT_OFFSET + i)))
        .collect::<Result<_>>()?;
    Ok((fit, held))
}
