//! Multi-channel feature stacks and their raw dump format.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// What a channel of a [`FeatureTensor`] holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChannelLabel {
    /// Low-pass image `I * phi`.
    S0,
    /// First-order scattering for `(scale, orientation)`, both 1-based.
    S1 { j: usize, k: usize },
    /// Second-order scattering for flattened filter indices `a < b`.
    S2 { a: usize, b: usize },
    /// Raw frame intensities.
    Raw,
    /// A single handcrafted feature map.
    Handcrafted(String),
    Other(String),
}

impl fmt::Display for ChannelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelLabel::S0 => write!(f, "S0"),
            ChannelLabel::S1 { j, k } => write!(f, "S1(j={j},k={k})"),
            ChannelLabel::S2 { a, b } => write!(f, "S2({a},{b})"),
            ChannelLabel::Raw => write!(f, "raw"),
            ChannelLabel::Handcrafted(name) => write!(f, "{name}"),
            ChannelLabel::Other(name) => write!(f, "{name}"),
        }
    }
}

/// `C x H x W` stack stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    labels: Vec<ChannelLabel>,
}

impl FeatureTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        labels: Vec<ChannelLabel>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Dimensions(format!(
                "tensor dims must be nonzero, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimensions(format!(
                "buffer of {} values does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if labels.len() != channels {
            return Err(Error::Dimensions(format!(
                "{} labels for {channels} channels",
                labels.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature tensor value".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            labels,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        let labels = (0..channels)
            .map(|c| ChannelLabel::Other(format!("c{c}")))
            .collect();
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            labels,
        }
    }

    /// Stacks single-channel images (all of one size) into a tensor.
    pub fn from_images(images: &[Image], labels: Vec<ChannelLabel>) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("no channels to stack".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(h * w * images.len());
        for img in images {
            if img.dims() != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "channel of {:?} in a {h}x{w} stack",
                    img.dims()
                )));
            }
            data.extend_from_slice(img.pixels());
        }
        Self::new(h, w, images.len(), data, labels)
    }

    pub(crate) fn from_raw_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        labels: Vec<ChannelLabel>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert_eq!(labels.len(), channels);
        Self {
            height,
            width,
            channels,
            data,
            labels,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
    pub fn labels(&self) -> &[ChannelLabel] {
        &self.labels
    }
    pub fn values(&self) -> &[f64] {
        &self.data
    }
    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_image(&self, c: usize) -> Image {
        Image::from_raw_unchecked(self.height, self.width, self.channel(c).to_vec())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Writes `[u32 H][u32 W][u32 C]` little-endian, then `H*W*C` little-endian
    /// `f32` values channel-major.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for d in [self.height, self.width, self.channels] {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_dump<R: Read>(mut input: R, origin: &Path) -> Result<Self> {
        let mut header = [0u8; 12];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::format(origin, "truncated tensor header"))?;
        let dim = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let count = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .filter(|&n| n > 0 && n < (1 << 31))
            .ok_or_else(|| Error::format(origin, format!("implausible tensor dims {h}x{w}x{c}")))?;
        let mut raw = vec![0u8; count * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::format(origin, "truncated tensor payload"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let labels = (0..c).map(|i| ChannelLabel::Other(format!("c{i}"))).collect();
        Self::new(h, w, c, data, labels).map_err(|e| Error::format(origin, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_header_layout() {
        let t = FeatureTensor::new(
            1,
            2,
            2,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![ChannelLabel::Raw, ChannelLabel::S0],
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_dump(&mut buf).unwrap();
        assert_eq!(&buf[..12], &[1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&buf[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&buf[24..28], &4.0f32.to_le_bytes());
        let back = FeatureTensor::read_dump(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back.values(), t.values());
    }

    #[test]
    fn truncated_dump_rejected() {
        let buf = [2u8, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 0, 0];
        assert!(FeatureTensor::read_dump(&buf[..], Path::new("mem")).is_err());
    }
}
