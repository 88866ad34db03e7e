//! Grayscale image files: raw float grids (`.fgrd`) and 8/16-bit PNG.
//!
//! FGRD layout: `"FGRD"`, u32 width, u32 height, then `width · height`
//! little-endian `f32` values in row-major order.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use nusr_core::Tensor;

use crate::error::CliError;

const FGRD_MAGIC: &[u8; 4] = b"FGRD";
pub const MIN_SIDE: usize = 8;

fn check_side(w: usize, h: usize, what: &str) -> Result<(), CliError> {
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(CliError::data(format!(
            "{what}: {w}x{h} image is below the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    Ok(())
}

pub fn encode_fgrd(image: &Tensor<f32>) -> Result<Vec<u8>, CliError> {
    let (h, w) = image.image_dims()?;
    let mut out = Vec::with_capacity(12 + 4 * w * h);
    out.extend(FGRD_MAGIC);
    out.extend((w as u32).to_le_bytes());
    out.extend((h as u32).to_le_bytes());
    for v in image.data() {
        out.extend(v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fgrd(bytes: &[u8], what: &str) -> Result<Tensor<f32>, CliError> {
    if bytes.len() < 12 || &bytes[..4] != FGRD_MAGIC {
        return Err(CliError::data(format!("{what}: not an FGRD file")));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    check_side(w, h, what)?;
    let payload = &bytes[12..];
    if Some(payload.len()) != w.checked_mul(h).and_then(|n| n.checked_mul(4)) {
        return Err(CliError::data(format!(
            "{what}: payload is {} bytes, expected 4·{w}·{h}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Tensor::image(h, w, data)?)
}

/// Reads a `.fgrd` or `.png` file; PNG samples are scaled to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor<f32>, CliError> {
    let what = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("{what}: {e}")))?;
    match extension(path).as_deref() {
        Some("fgrd") => decode_fgrd(&bytes, &what),
        Some("png") => decode_png(&bytes, &what),
        _ => Err(CliError::data(format!("{what}: unsupported image type (use .fgrd or .png)"))),
    }
}

pub fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

pub fn is_image(path: &Path) -> bool {
    matches!(extension(path).as_deref(), Some("fgrd" | "png"))
}

fn decode_png(bytes: &[u8], what: &str) -> Result<Tensor<f32>, CliError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| CliError::data(format!("{what}: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    check_side(w, h, what)?;
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLumaA16(_) => img
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
        other => other.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    };
    Ok(Tensor::image(h, w, data)?)
}

/// 16-bit PNG of `image` with values clamped to `[0, 1]`.
pub fn encode_png16(image: &Tensor<f32>) -> Result<Vec<u8>, CliError> {
    let (h, w) = image.image_dims()?;
    let raw: Vec<u16> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer matches dims");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| CliError::data(e.to_string()))?;
    Ok(out.into_inner())
}

/// 8-bit preview, min/max stretched to the full grey range.
pub fn encode_preview(image: &Tensor<f32>) -> Result<Vec<u8>, CliError> {
    let (h, w) = image.image_dims()?;
    let (lo, hi) = image.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let raw: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer matches dims");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| CliError::data(e.to_string()))?;
    Ok(out.into_inner())
}

/// Writes by extension: `.fgrd` losslessly, `.png` as 16-bit.
pub fn write_image(path: &Path, image: &Tensor<f32>) -> Result<(), CliError> {
    let bytes = match extension(path).as_deref() {
        Some("fgrd") => encode_fgrd(image)?,
        Some("png") => encode_png16(image)?,
        _ => {
            return Err(CliError::usage(format!(
                "{}: output must end in .fgrd or .png",
                path.display()
            )))
        }
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fgrd_rejects_bad_payloads() {
        let img = Tensor::<f32>::full(&[1, 1, 8, 9], 0.25);
        let bytes = encode_fgrd(&img).unwrap();
        assert_eq!(decode_fgrd(&bytes, "t").unwrap(), img);
        assert!(decode_fgrd(&bytes[..bytes.len() - 1], "t").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_fgrd(&bad, "t").is_err());
        let tiny = encode_fgrd(&Tensor::<f32>::zeros(&[1, 1, 4, 8])).unwrap();
        assert!(decode_fgrd(&tiny, "t").is_err());
    }

    #[test]
    fn png_depths_scale_to_unit_range() {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(8, 8, (0..64).map(|v| (v * 4) as u8).collect()).unwrap();
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png).unwrap();
        let img = decode_png(&out.into_inner(), "t").unwrap();
        assert_eq!(img.data()[1], 4.0 / 255.0);

        let img16 = Tensor::<f32>::image(8, 8, (0..64).map(|v| v as f32 / 63.0).collect()).unwrap();
        let back = decode_png(&encode_png16(&img16).unwrap(), "t").unwrap();
        for (a, b) in img16.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }
}
