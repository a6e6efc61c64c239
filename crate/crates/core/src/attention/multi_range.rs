//! Multi-range attention: head groups with different range sizes (and,
//! in the sparse variant, dilations) over one shared Q/K/V projection.

use crate::attention::geometry::AttentionSpec;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;

/// Graph handles for the parameters of one multi-range attention layer.
#[derive(Clone, Debug)]
pub struct MultiRangeWeights {
    /// `[3C, C, 1, 1]`, bias-free.
    pub qkv: Var,
    /// One `[1, heads, 2k-1, 2k-1]` table per head group.
    pub bias_tables: Vec<Var>,
    /// `[C, C, 1, 1]` fusion projection.
    pub fuse_weight: Var,
    pub fuse_bias: Option<Var>,
}

/// Project `x` to Q/K/V, run every head group with its own geometry,
/// concatenate along channels and fuse with a 1x1 convolution.
///
/// With `sparse == false` every group runs undilated regardless of the
/// dilation recorded in its spec.
pub fn multi_range_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    specs: &[AttentionSpec],
    weights: &MultiRangeWeights,
    sparse: bool,
) -> Result<Var> {
    let c = g.shape(x).c;
    let total: usize = specs.iter().map(AttentionSpec::channels).sum();
    if specs.is_empty() || total != c {
        return Err(Error::Config(format!(
            "head groups cover {total} channels but the input has {c}"
        )));
    }
    if weights.bias_tables.len() != specs.len() {
        return Err(Error::Config(format!(
            "{} bias tables for {} head groups",
            weights.bias_tables.len(),
            specs.len()
        )));
    }
    let qkv = g.conv2d(x, weights.qkv, None)?;
    let mut outputs = Vec::with_capacity(specs.len());
    let mut offset = 0;
    for (spec, &table) in specs.iter().zip(&weights.bias_tables) {
        let spec = if sparse { *spec } else { spec.with_dilation(1) };
        let width = spec.channels();
        let q = g.narrow_channels(qkv, offset, width)?;
        let k = g.narrow_channels(qkv, c + offset, width)?;
        let v = g.narrow_channels(qkv, 2 * c + offset, width)?;
        outputs.push(g.attention(q, k, v, Some(table), spec)?);
        offset += width;
    }
    let merged = if outputs.len() == 1 {
        outputs[0]
    } else {
        g.concat_channels(&outputs)?
    };
    g.conv2d(merged, weights.fuse_weight, weights.fuse_bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::regional_attention;
    use crate::tensor::{Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        x: Tensor<f64>,
        qkv: Tensor<f64>,
        tables: Vec<Tensor<f64>>,
        fuse: Tensor<f64>,
        fuse_b: Tensor<f64>,
    }

    fn fixture(c: usize, specs: &[AttentionSpec], hw: usize, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Fixture {
            x: Tensor::randn(Shape::new(1, c, hw, hw), 1.0, &mut rng),
            qkv: Tensor::randn(Shape::new(3 * c, c, 1, 1), 0.5, &mut rng),
            tables: specs
                .iter()
                .map(|s| Tensor::randn(Shape::new(1, s.heads, s.bias_side(), s.bias_side()), 0.3, &mut rng))
                .collect(),
            fuse: Tensor::randn(Shape::new(c, c, 1, 1), 0.5, &mut rng),
            fuse_b: Tensor::randn(Shape::new(1, c, 1, 1), 0.1, &mut rng),
        }
    }

    fn run(f: &Fixture, specs: &[AttentionSpec], sparse: bool) -> Tensor<f64> {
        let mut g = Graph::new();
        let x = g.input(f.x.clone());
        let w = MultiRangeWeights {
            qkv: g.param("qkv", f.qkv.clone()),
            bias_tables: f.tables.iter().map(|t| g.param("t", t.clone())).collect(),
            fuse_weight: g.param("fw", f.fuse.clone()),
            fuse_bias: Some(g.param("fb", f.fuse_b.clone())),
        };
        let y = multi_range_attention(&mut g, x, specs, &w, sparse).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn single_group_with_identity_fusion_is_regional_attention() {
        let specs = [AttentionSpec::new(3, 1, 2, 2)];
        let mut f = fixture(4, &specs, 6, 11);
        f.fuse = Tensor::from_fn(Shape::new(4, 4, 1, 1), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        f.fuse_b = Tensor::zeros(Shape::new(1, 4, 1, 1));
        let got = run(&f, &specs, false);
        let qkv = crate::ops::conv2d(&f.x, &f.qkv, None).unwrap();
        let want = regional_attention(
            &qkv.narrow_channels(0, 4).unwrap(),
            &qkv.narrow_channels(4, 4).unwrap(),
            &qkv.narrow_channels(8, 4).unwrap(),
            Some(&f.tables[0]),
            specs[0],
        )
        .unwrap();
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }

    #[test]
    fn sparse_at_unit_dilation_is_bit_identical() {
        let specs = [AttentionSpec::new(3, 1, 1, 3), AttentionSpec::new(5, 1, 1, 3)];
        let f = fixture(6, &specs, 12, 12);
        assert_eq!(run(&f, &specs, true).data(), run(&f, &specs, false).data());
    }

    #[test]
    fn head_group_permutation_with_fusion_permutation_is_invariant() {
        let specs = [AttentionSpec::new(3, 2, 1, 2), AttentionSpec::new(5, 1, 1, 2)];
        let f = fixture(4, &specs, 10, 13);
        let base = run(&f, &specs, true);
        // swap the two groups: permute q/k/v rows, tables, and fusion columns
        let perm = [2usize, 3, 0, 1];
        let swapped_specs = [specs[1], specs[0]];
        let qkv = Tensor::from_fn(f.qkv.shape(), |o, i, _, _| {
            let (block, within) = (o / 4, o % 4);
            f.qkv.get(block * 4 + perm[within], i, 0, 0)
        });
        let fuse = Tensor::from_fn(f.fuse.shape(), |o, i, _, _| f.fuse.get(o, perm[i], 0, 0));
        let g2 = Fixture {
            x: f.x.clone(),
            qkv,
            tables: vec![f.tables[1].clone(), f.tables[0].clone()],
            fuse,
            fuse_b: f.fuse_b.clone(),
        };
        let permuted = run(&g2, &swapped_specs, true);
        assert!(base.max_abs_diff(&permuted) <= 1e-12);
    }

    #[test]
    fn channel_coverage_is_checked() {
        let specs = [AttentionSpec::new(3, 1, 1, 3)];
        let f = fixture(4, &[AttentionSpec::new(3, 1, 1, 4)], 6, 14);
        let mut g = Graph::new();
        let x = g.input(f.x.clone());
        let w = MultiRangeWeights {
            qkv: g.param("qkv", f.qkv.clone()),
            bias_tables: vec![g.param("t", f.tables[0].clone())],
            fuse_weight: g.param("fw", f.fuse.clone()),
            fuse_bias: None,
        };
        assert!(matches!(
            multi_range_attention(&mut g, x, &specs, &w, false),
            Err(Error::Config(_))
        ));
    }
}
