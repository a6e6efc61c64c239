//! Sub-pixel rearrangement between channels and space.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// `[N, C*s*s, H, W] -> [N, C, H*s, W*s]` with
/// `out(n, c, h*s + dy, w*s + dx) = in(n, c*s*s + dy*s + dx, h, w)`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    if s == 0 || xs.c % (s * s) != 0 {
        return Err(Error::Config(format!(
            "pixel_shuffle: {} channels not divisible by {s}^2",
            xs.c
        )));
    }
    let c = xs.c / (s * s);
    let out_shape = Shape::new(xs.n, c, xs.h * s, xs.w * s);
    let mut out = vec![T::zero(); xs.numel()];
    for n in 0..xs.n {
        for co in 0..c {
            for dy in 0..s {
                for dx in 0..s {
                    let src = x.plane(n, co * s * s + dy * s + dx);
                    for h in 0..xs.h {
                        let row = out_shape.index(n, co, h * s + dy, 0);
                        for w in 0..xs.w {
                            out[row + w * s + dx] = src[h * xs.w + w];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Inverse of [`pixel_shuffle`]; also its adjoint.
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let xs = x.shape();
    if s == 0 || xs.h % s != 0 || xs.w % s != 0 {
        return Err(Error::Config(format!(
            "pixel_unshuffle: {}x{} not divisible by {s}",
            xs.h, xs.w
        )));
    }
    let (h, w) = (xs.h / s, xs.w / s);
    let out_shape = Shape::new(xs.n, xs.c * s * s, h, w);
    let mut out = vec![T::zero(); xs.numel()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = x.plane(n, c);
            for dy in 0..s {
                for dx in 0..s {
                    let base = out_shape.index(n, c * s * s + dy * s + dx, 0, 0);
                    for y in 0..h {
                        for xx in 0..w {
                            out[base + y * w + xx] = src[(y * s + dy) * xs.w + xx * s + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_factor_is_identity() {
        let x = Tensor::<f32>::from_fn(Shape::new(2, 3, 2, 4), |n, c, h, w| (n + 2 * c + 3 * h + 5 * w) as f32);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn four_channels_to_two_by_two() {
        let x = Tensor::new(Shape::new(1, 4, 1, 1), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn indivisible_channels_are_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 6, 2, 2));
        assert!(matches!(pixel_shuffle(&x, 2), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_and_value_multiset(seed in 0u64..1000, s in 1usize..4, c in 1usize..3, h in 1usize..4, w in 1usize..4) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::randn(Shape::new(2, c * s * s, h, w), 1.0, &mut rng);
            let y = pixel_shuffle(&x, s).unwrap();
            prop_assert_eq!(&pixel_unshuffle(&y, s).unwrap(), &x);
            let mut a = x.data().to_vec();
            let mut b = y.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }
}
