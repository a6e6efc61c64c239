//! Non-overlapping window self-attention with optional half-window cyclic
//! shift. Kept only as the ablation baseline; forward pass only.

use crate::error::{Error, Result};
use crate::ops::conv2d;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct WindowAttentionWeights<T> {
    /// `[3C, C, 1, 1]`
    pub qkv: Tensor<T>,
    /// `[C, C, 1, 1]`
    pub proj_weight: Tensor<T>,
    pub proj_bias: Option<Tensor<T>>,
    pub heads: usize,
}

/// Dense softmax attention inside `window x window` tiles.
///
/// Windows larger than the map shrink to the map. When a side is not a
/// multiple of the window, the last windows are partial: the padded
/// positions are masked out rather than attended as zeros.
pub fn window_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    window: usize,
    shifted: bool,
) -> Result<Tensor<T>> {
    let s = q.shape();
    if k.shape() != s || v.shape() != s {
        return Err(Error::dim("window_attention", "q, k, v shapes differ"));
    }
    if heads == 0 || s.c % heads != 0 || window == 0 {
        return Err(Error::Config(format!(
            "window attention: {} channels, {heads} heads, window {window}",
            s.c
        )));
    }
    let d = s.c / heads;
    let (wh, ww) = (window.min(s.h), window.min(s.w));
    let (sh, sw) = if shifted { (wh / 2, ww / 2) } else { (0, 0) };
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let mut out = vec![T::zero(); s.numel()];
    let mut sites = Vec::with_capacity(wh * ww);
    let mut logits = Vec::with_capacity(wh * ww);
    for top in (0..s.h).step_by(wh) {
        for left in (0..s.w).step_by(ww) {
            // window in rolled coordinates; map back to source pixels
            sites.clear();
            for r in top..(top + wh).min(s.h) {
                for c in left..(left + ww).min(s.w) {
                    sites.push(((r + sh) % s.h) * s.w + (c + sw) % s.w);
                }
            }
            for n in 0..s.n {
                for h in 0..heads {
                    let chan = |t: &Tensor<T>, ch: usize, p: usize| t.data()[(n * s.c + h * d + ch) * s.plane() + p];
                    for &qs in &sites {
                        logits.clear();
                        let mut max = T::neg_infinity();
                        for &ks in &sites {
                            let mut l = T::zero();
                            for ch in 0..d {
                                l += chan(q, ch, qs) * chan(k, ch, ks);
                            }
                            let l = l * scale;
                            max = max.max(l);
                            logits.push(l);
                        }
                        let mut total = T::zero();
                        for l in logits.iter_mut() {
                            *l = (*l - max).exp();
                            total += *l;
                        }
                        for ch in 0..d {
                            let mut acc = T::zero();
                            for (&ks, &w) in sites.iter().zip(&logits) {
                                acc += w * chan(v, ch, ks);
                            }
                            out[(n * s.c + h * d + ch) * s.plane() + qs] = acc / total;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(s, out))
}

/// Projection, window attention, output projection.
pub fn window_attention_baseline<T: Scalar>(
    x: &Tensor<T>,
    window: usize,
    shifted: bool,
    weights: &WindowAttentionWeights<T>,
) -> Result<Tensor<T>> {
    let c = x.shape().c;
    let qkv = conv2d(x, &weights.qkv, None)?;
    let attn = window_attention(
        &qkv.narrow_channels(0, c)?,
        &qkv.narrow_channels(c, c)?,
        &qkv.narrow_channels(2 * c, c)?,
        weights.heads,
        window,
        shifted,
    )?;
    conv2d(&attn, &weights.proj_weight, weights.proj_bias.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use crate::verify::oracles::dense_attention;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qkv(shape: Shape, seed: u64) -> [Tensor<f64>; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        [
            Tensor::randn(shape, 1.0, &mut rng),
            Tensor::randn(shape, 1.0, &mut rng),
            Tensor::randn(shape, 1.0, &mut rng),
        ]
    }

    #[test]
    fn window_covering_map_is_global() {
        let [q, k, v] = qkv(Shape::new(1, 4, 6, 6), 1);
        let out = window_attention(&q, &k, &v, 2, 8, false).unwrap();
        assert!(out.max_abs_diff(&dense_attention(&q, &k, &v, 2)) <= 1e-10);
    }

    #[test]
    fn per_window_dense_oracle() {
        let [q, k, v] = qkv(Shape::new(1, 4, 8, 8), 2);
        let out = window_attention(&q, &k, &v, 1, 4, false).unwrap();
        for (wy, wx) in [(0, 0), (0, 4), (4, 0), (4, 4)] {
            let crop = |t: &Tensor<f64>| t.crop(wy, wx, 4, 4).unwrap();
            let want = dense_attention(&crop(&q), &crop(&k), &crop(&v), 1);
            assert!(crop(&out).max_abs_diff(&want) <= 1e-10);
        }
    }

    #[test]
    fn shifted_windows_keep_shape_and_differ() {
        let [q, k, v] = qkv(Shape::new(1, 4, 8, 8), 3);
        let a = window_attention(&q, &k, &v, 2, 4, false).unwrap();
        let b = window_attention(&q, &k, &v, 2, 4, true).unwrap();
        assert_eq!(a.shape(), b.shape());
        assert!(a.max_abs_diff(&b) > 1e-3);
    }

    #[test]
    fn baseline_runs_on_indivisible_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::randn(Shape::new(1, 4, 10, 7), 1.0, &mut rng);
        let w = WindowAttentionWeights {
            qkv: Tensor::randn(Shape::new(12, 4, 1, 1), 0.3, &mut rng),
            proj_weight: Tensor::randn(Shape::new(4, 4, 1, 1), 0.3, &mut rng),
            proj_bias: None,
            heads: 2,
        };
        let y = window_attention_baseline(&x, 4, true, &w).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.is_finite());
    }
}
