//! Multi-frame fusion network.

pub mod checkpoint;
pub mod conv;
pub mod model;

pub use conv::Planes;
pub use model::{FusionModel, ModelSpec};

use crate::error::{Error, Result};
use crate::image::Image;

/// `K` aligned frames with their trajectory poses.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Image>,
    poses: Vec<f64>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>, poses: Vec<f64>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("a sequence needs at least one frame".into()));
        }
        if frames.len() != poses.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} frames but {} poses",
                frames.len(),
                poses.len()
            )));
        }
        let dims = frames[0].dims();
        if let Some(i) = frames.iter().position(|f| f.dims() != dims) {
            return Err(Error::Dimensions(format!(
                "frame {i} is {:?}, frame 0 is {dims:?}",
                frames[i].dims()
            )));
        }
        if poses.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("pose angle".into()));
        }
        Ok(Self { frames, poses })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn poses(&self) -> &[f64] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Order in which frames enter the fusion tree: by pose, ties broken by
    /// pixel content. Depends only on the multiset of (frame, pose) pairs, so
    /// the enhanced output does not depend on how the sequence is listed.
    pub fn fusion_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.poses[a].total_cmp(&self.poses[b]).then_with(|| {
                let (pa, pb) = (self.frames[a].pixels(), self.frames[b].pixels());
                pa.iter()
                    .zip(pb)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        order
    }

    /// Frames and poses reordered by `order` (a permutation of `0..K`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument("not a permutation of the frames".into()));
            }
        }
        if order.len() != self.len() {
            return Err(Error::InvalidArgument("not a permutation of the frames".into()));
        }
        Self::new(
            order.iter().map(|&i| self.frames[i].clone()).collect(),
            order.iter().map(|&i| self.poses[i]).collect(),
        )
    }
}
