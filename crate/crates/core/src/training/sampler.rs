use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Dihedral};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Aligned LR/HR training patches.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
    /// `(image, left, top, transform)` per sample, in LR pixels.
    pub picks: Vec<(usize, usize, usize, Dihedral)>,
}

/// Generator for iteration `iter`: one stream per iteration of a
/// seed-keyed ChaCha8, so any iteration can be replayed in isolation.
pub fn iteration_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter);
    rng
}

/// Draw `batch` aligned crops. Per sample the draws are, in order: image
/// index, crop x, crop y, transform index (always drawn; ignored without
/// augmentation). Images smaller than the patch are never chosen.
pub fn sample_batch<T: Scalar>(
    data: &Dataset<T>,
    patch: usize,
    batch: usize,
    augment: bool,
    rng: &mut impl Rng,
) -> Result<Batch<T>> {
    let eligible: Vec<usize> = (0..data.pairs.len())
        .filter(|&i| {
            let s = data.pairs[i].lr.shape();
            s.h >= patch && s.w >= patch
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::Input(format!("no training image is at least {patch}x{patch} in LR")));
    }
    let scale = data.scale;
    let mut lrs = Vec::with_capacity(batch);
    let mut hrs = Vec::with_capacity(batch);
    let mut picks = Vec::with_capacity(batch);
    for _ in 0..batch {
        let img = eligible[rng.random_range(0..eligible.len())];
        let pair = &data.pairs[img];
        let s = pair.lr.shape();
        let x = rng.random_range(0..=s.w - patch);
        let y = rng.random_range(0..=s.h - patch);
        let t = rng.random_range(0..8usize);
        let d = if augment { Dihedral::new(t) } else { Dihedral::IDENTITY };
        lrs.push(d.apply(&pair.lr.crop(y, x, patch, patch)?));
        hrs.push(d.apply(&pair.hr.crop(y * scale, x * scale, patch * scale, patch * scale)?));
        picks.push((img, x, y, d));
    }
    Ok(Batch {
        lr: Tensor::stack(&lrs)?,
        hr: Tensor::stack(&hrs)?,
        picks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth, ImagePair};

    fn dataset() -> Dataset<f64> {
        let pairs = (0..3)
            .map(|i| ImagePair::from_hr(format!("{i}"), &synth::image::<f64>(40 + 8 * i, 36 + 8 * i, i as u64), 2).unwrap())
            .collect();
        Dataset::from_pairs(pairs, 2)
    }

    #[test]
    fn identity_crops_are_sub_windows() {
        let d = dataset();
        let b = sample_batch(&d, 8, 6, false, &mut iteration_rng(1, 0)).unwrap();
        for (k, &(img, x, y, t)) in b.picks.iter().enumerate() {
            assert_eq!(t, Dihedral::IDENTITY);
            let p = &d.pairs[img];
            assert_eq!(b.lr.batch_item(k).data(), p.lr.crop(y, x, 8, 8).unwrap().data());
            assert_eq!(b.hr.batch_item(k).data(), p.hr.crop(2 * y, 2 * x, 16, 16).unwrap().data());
        }
    }

    #[test]
    fn augmented_pairs_stay_aligned() {
        let d = dataset();
        let b = sample_batch(&d, 8, 8, true, &mut iteration_rng(2, 5)).unwrap();
        for (k, &(img, x, y, t)) in b.picks.iter().enumerate() {
            let back = t.inverse().apply(&b.hr.batch_item(k));
            assert_eq!(back.data(), d.pairs[img].hr.crop(2 * y, 2 * x, 16, 16).unwrap().data());
        }
    }

    #[test]
    fn transform_frequencies_are_uniform() {
        let d = dataset();
        let mut counts = [0usize; 8];
        let mut rng = iteration_rng(3, 0);
        for _ in 0..1250 {
            for p in sample_batch(&d, 4, 8, true, &mut rng).unwrap().picks {
                counts[p.3.index()] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.125).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn streams_replay_and_small_images_are_skipped() {
        let d = dataset();
        let a = sample_batch(&d, 8, 4, true, &mut iteration_rng(9, 17)).unwrap();
        let b = sample_batch(&d, 8, 4, true, &mut iteration_rng(9, 17)).unwrap();
        assert_eq!(a.picks, b.picks);
        let big = sample_batch(&d, 23, 16, false, &mut iteration_rng(9, 1)).unwrap();
        assert!(big.picks.iter().all(|p| p.0 == 2));
        assert!(sample_batch(&d, 40, 1, false, &mut iteration_rng(9, 1)).is_err());
    }
}
