//! Regional attention, sparse global (dilated) attention, their multi-range
//! aggregation, and a window-attention baseline.

pub mod geometry;
pub(crate) mod kernel;
pub mod multi_range;
pub mod window;

pub use geometry::{dilated_extent, max_dilation, neighborhood_indices, AttentionSpec};
pub use multi_range::{multi_range_attention, MultiRangeWeights};
pub use window::{window_attention, window_attention_baseline, WindowAttentionWeights};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax attention of every pixel over its `k x k` neighborhood.
///
/// `q`, `k`, `v` are `[N, heads * head_dim, H, W]`; `bias` is the optional
/// `[1, heads, 2k-1, 2k-1]` relative position table.
pub fn regional_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: AttentionSpec,
) -> Result<Tensor<T>> {
    if spec.dilation != 1 {
        return Err(Error::Config(format!(
            "regional attention is undilated; got dilation {}",
            spec.dilation
        )));
    }
    kernel::forward(q, k, v, bias, spec).map(|(out, _)| out)
}

/// Regional attention over a dilated lattice of keys.
pub fn sparse_global_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: AttentionSpec,
) -> Result<Tensor<T>> {
    kernel::forward(q, k, v, bias, spec).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use crate::verify::oracles::{dense_attention, gathered_attention};
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
    fn singleton_neighborhood_returns_value() {
        let [q, k, v] = qkv(Shape::new(1, 4, 5, 5), 1);
        let out = regional_attention(&q, &k, &v, None, AttentionSpec::new(1, 1, 2, 2)).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn full_square_neighborhood_is_global_attention() {
        let [q, k, v] = qkv(Shape::new(1, 4, 5, 5), 2);
        let out = regional_attention(&q, &k, &v, None, AttentionSpec::new(5, 1, 2, 2)).unwrap();
        assert!(out.max_abs_diff(&dense_attention(&q, &k, &v, 2)) <= 1e-10);
    }

    #[test]
    fn regional_matches_gather_oracle() {
        let [q, k, v] = qkv(Shape::new(1, 8, 6, 6), 3);
        let spec = AttentionSpec::new(3, 1, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let bias = Tensor::randn(Shape::new(1, 2, 5, 5), 0.5, &mut rng);
        let out = regional_attention(&q, &k, &v, Some(&bias), spec).unwrap();
        assert!(out.max_abs_diff(&gathered_attention(&q, &k, &v, Some(&bias), spec)) <= 1e-10);
    }

    #[test]
    fn sparse_matches_gather_oracle() {
        let [q, k, v] = qkv(Shape::new(1, 4, 12, 12), 4);
        let spec = AttentionSpec::new(3, 4, 1, 4);
        let out = sparse_global_attention(&q, &k, &v, None, spec).unwrap();
        assert!(out.max_abs_diff(&gathered_attention(&q, &k, &v, None, spec)) <= 1e-10);
    }

    #[test]
    fn unit_dilation_is_bit_identical_to_regional() {
        let [q, k, v] = qkv(Shape::new(2, 6, 7, 9), 5);
        let spec = AttentionSpec::new(3, 1, 3, 2);
        let a = regional_attention(&q, &k, &v, None, spec).unwrap();
        let b = sparse_global_attention(&q, &k, &v, None, spec).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn constant_values_pass_through() {
        let [q, k, _] = qkv(Shape::new(1, 4, 9, 9), 6);
        let v = Tensor::full(Shape::new(1, 4, 9, 9), 0.75f64);
        let out = sparse_global_attention(&q, &k, &v, None, AttentionSpec::new(3, 3, 2, 2)).unwrap();
        assert!(out.max_abs_diff(&v) <= 1e-12);
    }

    #[test]
    fn regional_rejects_dilation() {
        let [q, k, v] = qkv(Shape::new(1, 2, 8, 8), 7);
        assert!(regional_attention(&q, &k, &v, None, AttentionSpec::new(3, 2, 1, 2)).is_err());
        assert!(matches!(
            sparse_global_attention(&q, &k, &v, None, AttentionSpec::new(3, 4, 1, 2)),
            Err(Error::Geometry { .. })
        ));
    }
}
