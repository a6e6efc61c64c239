//! Layer normalization over the channel axis, independently per pixel.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Per-site statistics kept for the adjoint.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    let want = Shape::new(1, x.shape().c, 1, 1);
    if gamma.shape() != want || beta.shape() != want {
        return Err(Error::dim(
            "layer_norm",
            format!("affine {:?}/{:?} expected {want:?}", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, NormStats<T>)> {
    check(x, gamma, beta)?;
    let s = x.shape();
    let plane = s.plane();
    let inv_c = T::from_f64(1.0 / s.c as f64);
    let eps = T::from_f64(LAYER_NORM_EPS);
    let mut mean = vec![T::zero(); s.n * plane];
    let mut rstd = vec![T::zero(); s.n * plane];
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        let m = &mut mean[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            for (acc, &v) in m.iter_mut().zip(x.plane(n, c)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v *= inv_c);
        let r = &mut rstd[n * plane..(n + 1) * plane];
        for c in 0..s.c {
            for ((acc, &v), &mu) in r.iter_mut().zip(x.plane(n, c)).zip(m.iter()) {
                let d = v - mu;
                *acc += d * d;
            }
        }
        r.iter_mut().for_each(|v| *v = T::one() / (*v * inv_c + eps).sqrt());
        for c in 0..s.c {
            let (g, b) = (gamma.data()[c], beta.data()[c]);
            let dst = &mut out[(n * s.c + c) * plane..(n * s.c + c + 1) * plane];
            for (((o, &v), &mu), &rs) in dst.iter_mut().zip(x.plane(n, c)).zip(m.iter()).zip(r.iter()) {
                *o = (v - mu) * rs * g + b;
            }
        }
    }
    Ok((Tensor::from_parts(s, out), NormStats { mean, rstd }))
}

pub struct NormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &NormStats<T>,
    dy: &Tensor<T>,
) -> NormGrads<T> {
    let s = x.shape();
    let plane = s.plane();
    let inv_c = T::from_f64(1.0 / s.c as f64);
    let mut dx = vec![T::zero(); s.numel()];
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    let mut sum_g = vec![T::zero(); plane];
    let mut sum_gx = vec![T::zero(); plane];
    for n in 0..s.n {
        let m = &stats.mean[n * plane..(n + 1) * plane];
        let r = &stats.rstd[n * plane..(n + 1) * plane];
        sum_g.iter_mut().for_each(|v| *v = T::zero());
        sum_gx.iter_mut().for_each(|v| *v = T::zero());
        for c in 0..s.c {
            let g = gamma.data()[c];
            let (mut dg, mut db) = (T::zero(), T::zero());
            for p in 0..plane {
                let xhat = (x.plane(n, c)[p] - m[p]) * r[p];
                let d = dy.plane(n, c)[p];
                dg += d * xhat;
                db += d;
                let gx = d * g;
                sum_g[p] += gx;
                sum_gx[p] += gx * xhat;
            }
            dgamma[c] += dg;
            dbeta[c] += db;
        }
        for c in 0..s.c {
            let g = gamma.data()[c];
            let dst = &mut dx[(n * s.c + c) * plane..(n * s.c + c + 1) * plane];
            for p in 0..plane {
                let xhat = (x.plane(n, c)[p] - m[p]) * r[p];
                let gx = dy.plane(n, c)[p] * g;
                dst[p] = r[p] * (gx - sum_g[p] * inv_c - xhat * sum_gx[p] * inv_c);
            }
        }
    }
    NormGrads {
        input: Tensor::from_parts(s, dx),
        gamma: Tensor::vector(dgamma),
        beta: Tensor::vector(dbeta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn affine(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::vector(vec![1.0; c]), Tensor::vector(vec![0.0; c]))
    }

    #[test]
    fn constant_channels_normalize_to_zero() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 4, 2, 3), |_, _, h, w| (h * 3 + w) as f64);
        let (g, b) = affine(4);
        let (y, _) = layer_norm(&x, &g, &b).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        // channels [-1, 1, -1, 1] have mean 0 and population variance 1
        let x = Tensor::<f64>::from_fn(Shape::new(1, 4, 1, 2), |_, c, _, _| if c % 2 == 0 { -1.0 } else { 1.0 });
        let (g, b) = affine(4);
        let (y, _) = layer_norm(&x, &g, &b).unwrap();
        assert!(y.max_abs_diff(&x) <= 1e-5);
    }

    #[test]
    fn matches_two_pass_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::randn(Shape::new(1, 8, 2, 2), 2.0, &mut rng);
        let g = Tensor::<f64>::randn(Shape::new(1, 8, 1, 1), 1.0, &mut rng);
        let b = Tensor::<f64>::randn(Shape::new(1, 8, 1, 1), 1.0, &mut rng);
        let (y, _) = layer_norm(&x, &g, &b).unwrap();
        for h in 0..2 {
            for w in 0..2 {
                let vals: Vec<f64> = (0..8).map(|c| x.get(0, c, h, w)).collect();
                let mu = vals.iter().sum::<f64>() / 8.0;
                let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 8.0;
                for c in 0..8 {
                    let want = (vals[c] - mu) / (var + LAYER_NORM_EPS).sqrt() * g.data()[c] + b.data()[c];
                    assert!((y.get(0, c, h, w) - want).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_channel_zero_variance_is_finite() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 2, 2), 3.0);
        let (y, _) = layer_norm(&x, &Tensor::vector(vec![1.0]), &Tensor::vector(vec![0.5])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }
}
