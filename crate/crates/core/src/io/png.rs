//! 8-bit RGB PNG. Channel values are stored as-is (already display-encoded)
//! with round-to-nearest quantization.

use std::path::Path;

use image::{ImageEncoder, ImageReader};

use crate::error::{invalid, Result};
use crate::raster::RgbImage;

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode(img: &RgbImage) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data().iter().map(|v| quantize(*v)).collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        &bytes,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<RgbImage> {
    let dynamic = ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()?
        .decode()?;
    let rgb = dynamic.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(invalid("empty PNG"));
    }
    let data = rgb.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    RgbImage::new(w as usize, h as usize, data)
}

pub fn write(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    super::write_atomic(path, &encode(img)?)
}

pub fn read(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact_on_quantized_values() {
        let img = RgbImage::from_fn(5, 3, |x, y| {
            [x as f32 * 51.0 / 255.0, y as f32 * 100.0 / 255.0, 1.0]
        })
        .unwrap();
        let back = decode(&encode(&img).unwrap()).unwrap();
        assert_eq!(back.dims(), (5, 3));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_eq!(quantize(*a), quantize(*b));
        }
    }
}
