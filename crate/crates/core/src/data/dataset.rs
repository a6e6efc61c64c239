use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::data::color::quantize;
use crate::data::io::{load_png, save_png};
use crate::data::resize::bicubic_resize;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An HR image (cropped to a multiple of the scale) and its bicubic LR.
#[derive(Clone, Debug)]
pub struct ImagePair<T> {
    pub name: String,
    pub hr: Tensor<T>,
    pub lr: Tensor<T>,
    pub scale: usize,
    pub source: Option<PathBuf>,
}

impl<T: Scalar> ImagePair<T> {
    /// Crop `hr` to a multiple of `scale` and degrade it, quantizing the LR
    /// image to 8 bits as a saved file would be.
    pub fn from_hr(name: impl Into<String>, hr: &Tensor<T>, scale: usize) -> Result<Self> {
        let s = hr.shape();
        let (h, w) = (s.h / scale * scale, s.w / scale * scale);
        if h == 0 || w == 0 {
            return Err(Error::Input(format!("image {s:?} is smaller than the scale {scale}")));
        }
        let hr = hr.crop(0, 0, h, w)?;
        let lr = quantize(&bicubic_resize(&hr, h / scale, w / scale)?);
        Ok(ImagePair {
            name: name.into(),
            hr,
            lr,
            scale,
            source: None,
        })
    }
}

/// A directory of HR PNGs with cached LR versions `<name>_x{s}.png` beside them.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub pairs: Vec<ImagePair<T>>,
    pub scale: usize,
}

fn is_cached_lr(stem: &str) -> bool {
    stem.rsplit_once("_x")
        .is_some_and(|(_, s)| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit()))
}

impl<T: Scalar> Dataset<T> {
    pub fn from_pairs(pairs: Vec<ImagePair<T>>, scale: usize) -> Self {
        Dataset { pairs, scale }
    }

    /// Load every HR PNG in `dir` (sorted by file name), generating and
    /// caching missing LR files.
    pub fn load_dir(dir: &Path, scale: usize) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .filter(|p| p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| !is_cached_lr(s)))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Input(format!("no HR PNG files in {}", dir.display())));
        }
        let mut pairs = Vec::with_capacity(files.len());
        for path in files {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let hr_full = load_png::<T>(&path)?;
            let s = hr_full.shape();
            if s.h < scale || s.w < scale {
                warn!("skipping {}: {}x{} is smaller than the scale", path.display(), s.h, s.w);
                continue;
            }
            let hr = hr_full.crop(0, 0, s.h / scale * scale, s.w / scale * scale)?;
            let lr_path = path.with_file_name(format!("{name}_x{scale}.png"));
            let lr = match lr_path.exists() {
                true => load_png::<T>(&lr_path)?,
                false => {
                    let pair = ImagePair::from_hr(name.clone(), &hr, scale)?;
                    save_png(&pair.lr, &lr_path)?;
                    info!("cached {}", lr_path.display());
                    pair.lr
                }
            };
            let (ls, hs) = (lr.shape(), hr.shape());
            if ls.h * scale != hs.h || ls.w * scale != hs.w {
                return Err(Error::Input(format!(
                    "{}: cached LR {}x{} does not match HR {}x{} at x{scale}",
                    lr_path.display(),
                    ls.h,
                    ls.w,
                    hs.h,
                    hs.w
                )));
            }
            pairs.push(ImagePair {
                name,
                hr,
                lr,
                scale,
                source: Some(path),
            });
        }
        Ok(Dataset { pairs, scale })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth;

    #[test]
    fn cache_names() {
        assert!(is_cached_lr("img_x2"));
        assert!(is_cached_lr("a_b_x4"));
        assert!(!is_cached_lr("img_x"));
        assert!(!is_cached_lr("box_xy"));
        assert!(!is_cached_lr("img"));
    }

    #[test]
    fn load_dir_caches_lr_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        synth::write_dataset(dir.path(), 3, 25, 23, 5).unwrap();
        let a = Dataset::<f32>::load_dir(dir.path(), 2).unwrap();
        assert_eq!(a.len(), 3);
        assert!(dir.path().join("img_000_x2.png").exists());
        let p = &a.pairs[0];
        assert_eq!((p.hr.shape().h, p.hr.shape().w), (24, 22));
        assert_eq!((p.lr.shape().h, p.lr.shape().w), (12, 11));
        let b = Dataset::<f32>::load_dir(dir.path(), 2).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.lr.data(), y.lr.data());
        }
    }
}
