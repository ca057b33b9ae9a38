use std::path::Path;

use image::{ColorType, ImageReader};

use super::normalize_channel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    /// Raw 8-bit intensities, row-major.
    pub pixels: Vec<f64>,
}

/// Reads an 8-bit grayscale PGM or PNG.
pub fn load_image_gray(path: &Path) -> Result<GrayImage> {
    let reader = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(Error::Io)?;
    let img = reader
        .decode()
        .map_err(|e| Error::UnsupportedEncoding(format!("{}: {e}", path.display())))?;
    if img.color() != ColorType::L8 {
        return Err(Error::UnsupportedEncoding(format!(
            "{}: color type {:?}, expected 8-bit grayscale",
            path.display(),
            img.color()
        )));
    }
    let (width, height) = (img.width(), img.height());
    let pixels = img.into_luma8().into_raw().into_iter().map(f64::from).collect();
    Ok(GrayImage { width, height, pixels })
}

/// Flattened, centered, unit-variance image channel.
pub fn load_image_channel(path: &Path, channel: usize) -> Result<Vec<f64>> {
    let mut v = load_image_gray(path)?.pixels;
    normalize_channel(&mut v, channel)?;
    Ok(v)
}
