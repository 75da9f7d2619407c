//! PPM (P6) and PNG frames.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, RgbImage};
use pedestrian_core::FrameImage;

use crate::error::{self, Error, Result};

/// Decodes a PPM or PNG file into an RGB frame.
pub fn load_image(path: &Path) -> Result<FrameImage> {
    let bytes = error::read(path)?;
    let format = image::guess_format(&bytes).map_err(|e| Error::parse(path, e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(Error::parse(path, format!("unsupported image format {format:?}")));
    }
    let img = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| Error::parse(path, e.to_string()))?
        .into_rgb8();
    Ok(FrameImage::from_u8(
        img.width() as usize,
        img.height() as usize,
        3,
        img.as_raw(),
    )?)
}

/// Encodes an RGB frame; the format follows the extension (`.ppm` or `.png`).
pub fn save_image(img: &FrameImage, path: &Path) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Usage(format!(
            "can only save RGB frames, got {} channels",
            img.channels()
        )));
    }
    let (w, h) = (img.width() as u32, img.height() as u32);
    let buf = RgbImage::from_raw(w, h, img.to_u8()).expect("RGB buffer length");
    let mut out = Vec::new();
    let encoded = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(&buf, w, h, ExtendedColorType::Rgb8),
        Some("png") => buf.write_to(&mut std::io::Cursor::new(&mut out), ImageFormat::Png),
        _ => {
            return Err(Error::Usage(format!(
                "{}: extension must be .ppm or .png",
                path.display()
            )))
        }
    };
    encoded.map_err(|e| Error::parse(path, e.to_string()))?;
    error::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = FrameImage::from_u8(5, 4, 3, &px).unwrap();
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
        let ppm = std::fs::read(dir.path().join("a.ppm")).unwrap();
        assert!(ppm.starts_with(b"P6"));
        assert!(save_image(&img, &dir.path().join("a.jpg")).is_err());
        std::fs::write(dir.path().join("junk.ppm"), b"P6\n5 4\n255\n\x00").unwrap();
        assert!(load_image(&dir.path().join("junk.ppm")).is_err());
    }
}
