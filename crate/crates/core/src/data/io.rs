use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Read an 8-bit RGB or grayscale PNG as a `[1, 3, H, W]` tensor in `[0, 1]`.
pub fn load_png<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| image_err(path, e.to_string()))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(b) => b,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(image_err(path, format!("unsupported pixel format {:?} (8-bit only)", other.color())));
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let px = rgb.as_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        T::from_f64(px[(y * w + x) * 3 + c] as f64 / 255.0)
    }))
}

/// Write the first image of a `[N, 3, H, W]` tensor as an 8-bit PNG,
/// clamping to `[0, 1]` and rounding to the nearest level.
pub fn save_png<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<()> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::dim("save_png", format!("expected 3 channels, got {s:?}")));
    }
    let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(s.w as u32, s.h as u32, |x, y| {
        Rgb(std::array::from_fn(|c| {
            (img.get(0, c, y as usize, x as usize).as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}

/// Write a single-channel map in `[0, 1]` as a grayscale PNG.
pub fn save_gray_png(map: &[f64], h: usize, w: usize, path: &Path) -> Result<()> {
    let buf = ImageBuffer::<image::Luma<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([(map[y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn known_bytes_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let bytes: Vec<u8> = vec![0, 10, 20, 255, 128, 1, 7, 8, 9, 200, 201, 202];
        ImageBuffer::<Rgb<u8>, _>::from_raw(2, 2, bytes.clone()).unwrap().save(&p).unwrap();
        let t = load_png::<f64>(&p).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 2));
        for (i, &b) in bytes.iter().enumerate() {
            let (pix, c) = (i / 3, i % 3);
            assert_eq!(t.get(0, c, pix / 2, pix % 2), b as f64 / 255.0);
        }
    }

    #[test]
    fn roundtrip_quantization_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 5, 7), 0.0, 1.0, &mut rng);
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        save_png(&x, &a).unwrap();
        let once = load_png::<f64>(&a).unwrap();
        assert!(once.max_abs_diff(&x) <= 1.0 / 510.0 + 1e-12);
        save_png(&once, &b).unwrap();
        assert_eq!(load_png::<f64>(&b).unwrap().data(), once.data());
    }

    #[test]
    fn grayscale_is_promoted_and_16_bit_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.png");
        ImageBuffer::<image::Luma<u8>, _>::from_raw(1, 1, vec![51u8]).unwrap().save(&g).unwrap();
        assert_eq!(load_png::<f64>(&g).unwrap().data(), &[0.2, 0.2, 0.2]);
        let d = dir.path().join("d.png");
        ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![1000u16]).unwrap().save(&d).unwrap();
        assert!(matches!(load_png::<f64>(&d), Err(Error::Image { .. })));
        assert!(matches!(load_png::<f64>(&dir.path().join("missing.png")), Err(Error::Image { .. })));
    }
}
