//! Grayscale image files and atomic file output.
//!
//! Float pixels are clamped to `[0, 1]` and quantized linearly on write:
//! `round(v * 65535)` for 16-bit PNG, `round(v * 255)` for 8-bit binary PGM.
//! Reading divides by the format's maximum value.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::image::Image;

/// On-disk image encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageEncoding {
    Png16,
    Pgm8,
}

impl ImageEncoding {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => Ok(Self::Png16),
            Some("pgm") => Ok(Self::Pgm8),
            _ => Err(Error::format(path, "expected a .png or .pgm extension")),
        }
    }

    pub fn max_value(self) -> f64 {
        match self {
            Self::Png16 => 65535.0,
            Self::Pgm8 => 255.0,
        }
    }
}

/// The value a pixel takes after a write/read cycle in `encoding`.
pub fn quantize(v: f64, encoding: ImageEncoding) -> f64 {
    let m = encoding.max_value();
    (v.clamp(0.0, 1.0) * m).round() / m
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never observe a partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "path has no file name"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn encode_image(img: &Image, encoding: ImageEncoding) -> Result<Vec<u8>> {
    let (h, w) = img.dims();
    let m = encoding.max_value();
    let mut out = Cursor::new(Vec::new());
    let res = match encoding {
        ImageEncoding::Png16 => {
            let px: Vec<u16> = img.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * m).round() as u16).collect();
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w as u32, h as u32, px).expect("buffer sized");
            buf.write_to(&mut out, ImageFormat::Png)
        }
        ImageEncoding::Pgm8 => {
            let px: Vec<u8> = img.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * m).round() as u8).collect();
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w as u32, h as u32, px).expect("buffer sized");
            buf.write_to(&mut out, ImageFormat::Pnm)
        }
    };
    res.map_err(|e| Error::InvalidArgument(format!("image encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// Writes `img` as 16-bit PNG or 8-bit PGM depending on the extension.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    let encoding = ImageEncoding::from_path(path)?;
    atomic_write(path, &encode_image(img, encoding)?)
}

/// Reads an 8- or 16-bit grayscale PNG or PGM into `[0, 1]` floats.
pub fn read_image(path: &Path) -> Result<Image> {
    let encoding = ImageEncoding::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = match encoding {
        ImageEncoding::Png16 => ImageFormat::Png,
        ImageEncoding::Pgm8 => ImageFormat::Pnm,
    };
    let decoded = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported pixel layout {:?}; expected 8/16-bit grayscale", other.color()),
            ))
        }
    };
    Image::new(h, w, data).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn png16_round_trip_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = Image::from_fn(13, 17, |_, _| rng.random());
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        let bound = 1.0 / 65535.0 / 2.0;
        assert!(img.max_abs_diff(&back) <= bound + 1e-15);
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert_eq!(quantize(*a, ImageEncoding::Png16), *b);
        }
    }

    #[test]
    fn reads_handwritten_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.pgm");
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 0, 255]);
        fs::write(&path, bytes).unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.pixels(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pgm_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.pgm");
        let img = Image::from_fn(3, 4, |r, c| (r * 4 + c) as f64 / 11.0);
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert_eq!(quantize(*a, ImageEncoding::Pgm8), *b);
        }
    }

    #[test]
    fn missing_and_malformed_files_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_image(&dir.path().join("nope.png")), Err(Error::Io { .. })));
        let bad = dir.path().join("bad.pgm");
        fs::write(&bad, b"P5 2 2\n").unwrap();
        assert!(matches!(read_image(&bad), Err(Error::Format { .. })));
        assert!(ImageEncoding::from_path(Path::new("a.jpg")).is_err());
    }

    #[test]
    fn rgb_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(1, 1, vec![1, 2, 3]).unwrap();
        buf.save(&path).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format { .. })));
    }
}
