//! 8-bit RGB PNG images.

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Rgb};

use crate::error::{Error, Result};
use crate::scene::RgbImage;

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img
        .data
        .iter()
        .flat_map(|px| px.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw).expect("buffer matches dims");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::format("image", e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format("image", e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(RgbImage {
        width: w,
        height: h,
        data: img
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect(),
    })
}

pub fn save_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_png(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_images_round_trip() {
        let mut img = RgbImage::new(5, 4);
        for (i, px) in img.data.iter_mut().enumerate() {
            *px = [i as f64 / 255.0, 1.0, 0.0];
        }
        let bytes = encode_png(&img).unwrap();
        let back = decode_png(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_png(&back).unwrap(), bytes);
        assert!(decode_png(b"not a png").is_err());
    }
}
