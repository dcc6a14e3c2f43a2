use std::io::Cursor;

use image::ImageFormat;

use crate::geometry::BoundingBox;

#[derive(Debug, thiserror::Error)]
pub enum ImageOpError {
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("crop box {0:?} does not cover any pixel of the image")]
    EmptyCrop([f64; 4]),
    #[error("cannot encode crop: {0}")]
    Encode(String),
}

/// Cut `bbox` out of an encoded image and re-encode it as PNG. The pixel
/// window is `floor(xmin)..ceil(xmax)` (likewise for y), clipped to the image.
pub fn crop_png(bytes: &[u8], bbox: &BoundingBox) -> Result<Vec<u8>, ImageOpError> {
    let img = image::load_from_memory(bytes).map_err(|e| ImageOpError::Decode(e.to_string()))?;
    let (w, h) = (img.width(), img.height());
    let x0 = (bbox.xmin().floor() as u32).min(w);
    let y0 = (bbox.ymin().floor() as u32).min(h);
    let x1 = (bbox.xmax().ceil() as u32).min(w);
    let y1 = (bbox.ymax().ceil() as u32).min(h);
    if x1 <= x0 || y1 <= y0 {
        return Err(ImageOpError::EmptyCrop(bbox.to_array()));
    }
    let crop = img.crop_imm(x0, y0, x1 - x0, y1 - y0);
    let mut out = Cursor::new(Vec::new());
    crop.write_to(&mut out, ImageFormat::Png).map_err(|e| ImageOpError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn png(w: u32, h: u32) -> Vec<u8> {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, 7]));
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn crop_has_expected_size_and_pixels() {
        let src = png(40, 30);
        let b = BoundingBox::new(4.5, 2.0, 10.2, 12.0).unwrap();
        let out = image::load_from_memory(&crop_png(&src, &b).unwrap()).unwrap().to_rgb8();
        assert_eq!(out.dimensions(), (7, 10));
        assert_eq!(out.get_pixel(0, 0), &Rgb([4, 2, 7]));
    }

    #[test]
    fn crop_is_deterministic() {
        let src = png(16, 16);
        let b = BoundingBox::new(1.0, 1.0, 9.0, 9.0).unwrap();
        assert_eq!(crop_png(&src, &b).unwrap(), crop_png(&src, &b).unwrap());
    }

    #[test]
    fn crop_outside_image_fails() {
        let src = png(16, 16);
        let b = BoundingBox::new(20.0, 20.0, 30.0, 30.0).unwrap();
        assert!(matches!(crop_png(&src, &b), Err(ImageOpError::EmptyCrop(_))));
        assert!(matches!(crop_png(b"not an image", &b), Err(ImageOpError::Decode(_))));
    }
}
