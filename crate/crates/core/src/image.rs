//! Images with intensities normalized to `[0, 1]`, and their file formats.
//!
//! Reading goes through the `image` crate (PNG, binary PGM/PPM, 8 or 16 bit).
//! PGM/PPM writing is done here so headers can carry `#` comment lines with
//! run parameters.

use std::fs;
use std::io::Write;
use std::path::Path;

use ::image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;

/// `height x width` pixels with `channels` interleaved values each.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape("image must have at least one pixel and channel".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite intensity {bad}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_gray(grid: &ScalarGrid) -> Self {
        Self {
            height: grid.height,
            width: grid.width,
            channels: 1,
            data: grid.data.clone(),
        }
    }

    /// Number of pixels.
    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, j: usize) -> &[f64] {
        &self.data[j * self.channels..(j + 1) * self.channels]
    }

    pub fn channel_mean(&self) -> ScalarGrid {
        let d = self.channels as f64;
        let data = (0..self.pixels())
            .map(|j| self.pixel(j).iter().sum::<f64>() / d)
            .collect();
        ScalarGrid {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Clamps every value into `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = ::image::open(path.as_ref())?;
        Ok(Self::from_dynamic(img))
    }

    fn from_dynamic(img: DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, data): (usize, Vec<f64>) = match img {
            DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
            DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
            DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
                let b = img.to_luma16();
                (1, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
            }
            DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
            DynamicImage::ImageRgba8(_) => {
                let b = img.to_rgb8();
                (3, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
            }
            other => {
                let b = other.to_rgb16();
                (3, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
            }
        };
        Self {
            height: h,
            width: w,
            channels,
            data,
        }
    }

    /// Writes the image; the format follows the extension (`pgm`, `ppm`, `png`).
    /// `sixteen_bit` selects 16-bit samples.
    pub fn save(&self, path: impl AsRef<Path>, sixteen_bit: bool, comments: &[String]) -> Result<()> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
        let samples: Vec<u16> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * maxval as f64).round() as u16)
            .collect();
        match ext.as_str() {
            "pgm" | "ppm" | "pnm" => {
                if (ext == "pgm") != (self.channels == 1) && ext != "pnm" {
                    return Err(Error::InvalidParameter(format!(
                        "cannot write a {}-channel image as .{ext}",
                        self.channels
                    )));
                }
                write_netpbm(path, self.width, self.height, self.channels, maxval, &samples, comments)
            }
            "png" => {
                let (w, h) = (self.width as u32, self.height as u32);
                let dynimg = match (self.channels, sixteen_bit) {
                    (1, false) => DynamicImage::ImageLuma8(
                        ImageBuffer::from_raw(w, h, samples.iter().map(|&v| v as u8).collect()).unwrap(),
                    ),
                    (1, true) => DynamicImage::ImageLuma16(ImageBuffer::from_raw(w, h, samples).unwrap()),
                    (3, false) => DynamicImage::ImageRgb8(
                        ImageBuffer::from_raw(w, h, samples.iter().map(|&v| v as u8).collect()).unwrap(),
                    ),
                    (3, true) => DynamicImage::ImageRgb16(ImageBuffer::from_raw(w, h, samples).unwrap()),
                    (c, _) => {
                        return Err(Error::InvalidParameter(format!("cannot write {c}-channel PNG")));
                    }
                };
                dynimg.save(path)?;
                Ok(())
            }
            other => Err(Error::InvalidParameter(format!("unsupported image extension '{other}'"))),
        }
    }
}

/// Binary PGM (`channels == 1`) or PPM (`channels == 3`) with comment lines.
pub fn write_netpbm(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    maxval: u32,
    samples: &[u16],
    comments: &[String],
) -> Result<()> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::InvalidParameter(format!("netpbm cannot hold {c} channels"))),
    };
    let mut buf = Vec::with_capacity(64 + samples.len() * 2);
    writeln!(buf, "{magic}")?;
    for c in comments {
        writeln!(buf, "# {c}")?;
    }
    writeln!(buf, "{width} {height}")?;
    writeln!(buf, "{maxval}")?;
    if maxval > 255 {
        for s in samples {
            buf.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        buf.extend(samples.iter().map(|&s| s as u8));
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Writes RGB palette colors for each label as an 8-bit PNG.
pub fn write_palette_png(path: &Path, width: usize, height: usize, labels: &[usize]) -> Result<()> {
    let mut buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(width as u32, height as u32);
    for (j, px) in buf.pixels_mut().enumerate() {
        *px = Rgb(PALETTE[labels[j] % PALETTE.len()]);
    }
    buf.save(path)?;
    Ok(())
}

/// Fixed 21-color palette used for label images.
pub const PALETTE: [[u8; 3]; 21] = [
    [0, 0, 0],
    [128, 0, 0],
    [0, 128, 0],
    [128, 128, 0],
    [0, 0, 128],
    [128, 0, 128],
    [0, 128, 128],
    [128, 128, 128],
    [64, 0, 0],
    [192, 0, 0],
    [64, 128, 0],
    [192, 128, 0],
    [64, 0, 128],
    [192, 0, 128],
    [64, 128, 128],
    [192, 128, 128],
    [0, 64, 0],
    [128, 64, 0],
    [0, 192, 0],
    [128, 192, 0],
    [0, 64, 128],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Image::new(0, 3, 1, vec![]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn pgm_roundtrip_8_and_16_bit() {
        let dir = tempdir();
        let img = Image::new(2, 3, 1, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        for (bits16, tol) in [(false, 0.5 / 255.0), (true, 0.5 / 65535.0)] {
            let p = dir.join(format!("g{}.pgm", bits16 as u8));
            img.save(&p, bits16, &["eps=0.01".to_string()]).unwrap();
            let back = Image::load(&p).unwrap();
            assert_eq!((back.height, back.width, back.channels), (2, 3, 1));
            for (a, b) in img.data.iter().zip(&back.data) {
                assert!((a - b).abs() <= tol + 1e-12);
            }
        }
    }

    #[test]
    fn color_png_and_ppm_roundtrip() {
        let dir = tempdir();
        let data: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let img = Image::new(2, 2, 3, data).unwrap();
        for name in ["c.png", "c.ppm"] {
            let p = dir.join(name);
            img.save(&p, false, &[]).unwrap();
            let back = Image::load(&p).unwrap();
            assert_eq!(back.channels, 3);
            for (a, b) in img.data.iter().zip(&back.data) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        assert!(img.save(dir.join("c.pgm"), false, &[]).is_err());
    }

    fn tempdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("volseg-image-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }
}
