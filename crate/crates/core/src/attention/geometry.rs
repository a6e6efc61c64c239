//! Neighborhood geometry for regional and dilated (sparse global) attention.
//!
//! A query at `(i, j)` attends to the `k x k` lattice
//! `{(i + x*d, j + y*d) | -k/2 <= x, y <= k/2}`. Near the border the whole
//! lattice is translated as a rigid block until it fits, so every query keeps
//! exactly `k*k` keys and the stride `d` is preserved. Lattices that cannot
//! fit at all (`k + (k-1)(d-1) > min(H, W)`) are rejected instead of padded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of one attention head group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttentionSpec {
    /// Side length `k` of the neighborhood; odd.
    pub range_k: usize,
    /// Stride between attended keys.
    pub dilation: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionSpec {
    pub fn new(range_k: usize, dilation: usize, heads: usize, head_dim: usize) -> Self {
        AttentionSpec {
            range_k,
            dilation,
            heads,
            head_dim,
        }
    }

    /// Extent `k_d` of the dilated lattice along one axis.
    pub fn extent(&self) -> usize {
        dilated_extent(self.range_k, self.dilation)
    }

    pub fn channels(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Side of the relative-position bias table, `2k - 1`.
    pub fn bias_side(&self) -> usize {
        2 * self.range_k - 1
    }

    pub fn with_dilation(self, dilation: usize) -> Self {
        AttentionSpec { dilation, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.range_k == 0 || self.range_k % 2 == 0 {
            return Err(Error::Config(format!("range size {} must be odd and >= 1", self.range_k)));
        }
        if self.dilation == 0 {
            return Err(Error::Config("dilation must be >= 1".into()));
        }
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Config(format!(
                "attention needs at least one head of positive width (heads = {}, head_dim = {})",
                self.heads, self.head_dim
            )));
        }
        Ok(())
    }

    pub fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        check_fits(self.range_k, self.dilation, height, width)
    }
}

pub fn dilated_extent(k: usize, dilation: usize) -> usize {
    k + (k - 1) * (dilation - 1)
}

/// The largest dilation whose lattice still fits: `floor(min(H, W) / k)`,
/// floored at 1.
pub fn max_dilation(k: usize, height: usize, width: usize) -> usize {
    (height.min(width) / k).max(1)
}

pub(crate) fn check_fits(k: usize, dilation: usize, height: usize, width: usize) -> Result<()> {
    let extent = dilated_extent(k, dilation);
    if extent > height.min(width) {
        return Err(Error::Geometry {
            range: k,
            dilation,
            height,
            width,
            extent,
            hint: "",
        });
    }
    Ok(())
}

/// Per-axis placement of every query's key block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct AxisPlan {
    /// First key coordinate of the block for each query coordinate.
    pub start: Vec<usize>,
    /// Bias-table coordinate of the block's first key, in dilated units.
    pub bias_base: Vec<usize>,
}

impl AxisPlan {
    pub fn new(len: usize, k: usize, dilation: usize) -> Self {
        let extent = dilated_extent(k, dilation);
        debug_assert!(extent <= len);
        let reach = (k / 2) * dilation;
        let last_start = len - extent;
        let mut start = Vec::with_capacity(len);
        let mut bias_base = Vec::with_capacity(len);
        for i in 0..len {
            let s = i.saturating_sub(reach).min(last_start);
            // query's position on the block lattice, rounded down
            let pos = (i - s) / dilation;
            start.push(s);
            bias_base.push(k - 1 - pos);
        }
        AxisPlan { start, bias_base }
    }
}

/// Key coordinates attended by query `(i, j)`, row-major over the lattice.
pub fn neighborhood_indices(
    i: usize,
    j: usize,
    k: usize,
    dilation: usize,
    height: usize,
    width: usize,
) -> Result<Vec<(usize, usize)>> {
    AttentionSpec::new(k, dilation, 1, 1).validate()?;
    check_fits(k, dilation, height, width)?;
    if i >= height || j >= width {
        return Err(Error::Input(format!("query ({i}, {j}) outside {height}x{width} map")));
    }
    let rows = AxisPlan::new(height, k, dilation);
    let cols = AxisPlan::new(width, k, dilation);
    let (si, sj) = (rows.start[i], cols.start[j]);
    let mut out = Vec::with_capacity(k * k);
    for x in 0..k {
        for y in 0..k {
            out.push((si + x * dilation, sj + y * dilation));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[usize], cols: &[usize]) -> Vec<(usize, usize)> {
        rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect()
    }

    #[test]
    fn centered_dilated_lattice() {
        let got = neighborhood_indices(3, 3, 3, 2, 7, 7).unwrap();
        assert_eq!(got, grid(&[1, 3, 5], &[1, 3, 5]));
    }

    #[test]
    fn corner_block_is_shifted_in_bounds() {
        let got = neighborhood_indices(0, 0, 3, 1, 8, 8).unwrap();
        assert_eq!(got, grid(&[0, 1, 2], &[0, 1, 2]));
        let got = neighborhood_indices(7, 6, 3, 1, 8, 8).unwrap();
        assert_eq!(got, grid(&[5, 6, 7], &[5, 6, 7]));
    }

    #[test]
    fn widest_light_lattice_fits_on_64() {
        assert_eq!(dilated_extent(7, 9), 55);
        assert_eq!(dilated_extent(11, 5), 51);
        let got = neighborhood_indices(0, 63, 7, 9, 64, 64).unwrap();
        assert_eq!(got.len(), 49);
        assert!(got.iter().all(|&(a, b)| a < 64 && b < 64));
        assert_eq!(max_dilation(7, 64, 64), 9);
        assert_eq!(max_dilation(9, 64, 64), 7);
        assert_eq!(max_dilation(11, 64, 64), 5);
    }

    #[test]
    fn oversized_extent_is_a_geometry_error() {
        let err = neighborhood_indices(0, 0, 9, 8, 64, 64).unwrap_err();
        match err {
            Error::Geometry { range, dilation, extent, .. } => {
                assert_eq!((range, dilation, extent), (9, 8, 65));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_query_gets_k_squared_in_bounds_keys() {
        for &(k, d, h, w) in &[(3, 1, 5, 6), (3, 2, 7, 9), (5, 3, 13, 14), (1, 1, 2, 2), (3, 3, 7, 8)] {
            for i in 0..h {
                for j in 0..w {
                    let idx = neighborhood_indices(i, j, k, d, h, w).unwrap();
                    assert_eq!(idx.len(), k * k);
                    assert!(idx.iter().all(|&(a, b)| a < h && b < w));
                }
            }
        }
    }

    #[test]
    fn bias_coordinates_stay_inside_table() {
        for &(len, k, d) in &[(7, 3, 2), (12, 5, 2), (9, 3, 4), (64, 11, 5)] {
            let plan = AxisPlan::new(len, k, d);
            for i in 0..len {
                assert!(plan.bias_base[i] + k - 1 <= 2 * k - 2);
                let interior = i >= (k / 2) * d && i + (k / 2) * d < len;
                if interior {
                    assert_eq!(plan.bias_base[i], k / 2);
                }
            }
        }
    }
}
