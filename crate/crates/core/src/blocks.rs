//! Network blocks: LAB, MSConvStar, MAB and RMAG.
//!
//! Each block reads its parameters from a [`Scope`] whose prefix is the
//! block's dotted name, so the same functions serve the full model and
//! stand-alone tests.

use crate::attention::{multi_range_attention, AttentionSpec, MultiRangeWeights};
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::model::config::{AttentionMode, ModelConfig};
use crate::model::params::Scope;
use crate::scalar::Scalar;

fn conv<T: Scalar>(g: &mut Graph<T>, x: Var, s: &Scope) -> Result<Var> {
    g.conv2d(x, s.var("weight")?, s.opt("bias"))
}

fn dw<T: Scalar>(g: &mut Graph<T>, x: Var, s: &Scope) -> Result<Var> {
    g.dwconv2d(x, s.var("weight")?, s.opt("bias"))
}

/// Squeeze-excitation: `x * sigmoid(up(relu(down(mean(x)))))`.
pub fn channel_attention<T: Scalar>(g: &mut Graph<T>, x: Var, s: &Scope) -> Result<Var> {
    let pooled = g.global_avg_pool(x);
    let down = conv(g, pooled, &s.sub("down"))?;
    let act = g.relu(down);
    let up = conv(g, act, &s.sub("up"))?;
    let gate = g.sigmoid(up);
    g.channel_scale(x, gate)
}

/// Local aggregation block: `x + CA(DW3x3(Conv1x1(x)))`.
pub fn lab_forward<T: Scalar>(g: &mut Graph<T>, x: Var, s: &Scope) -> Result<Var> {
    let y = conv(g, x, &s.sub("conv"))?;
    let y = dw(g, y, &s.sub("dw"))?;
    let y = channel_attention(g, y, &s.sub("ca"))?;
    g.add(x, y)
}

/// Token mixer: `proj(MSConv(gelu(fc1 x)) * fc2 x)` where
/// `MSConv(a) = a + sum_i dw_i(a)`.
pub fn msconvstar_forward<T: Scalar>(g: &mut Graph<T>, x: Var, s: &Scope) -> Result<Var> {
    let a = conv(g, x, &s.sub("fc1"))?;
    let a = g.gelu(a);
    let b = conv(g, x, &s.sub("fc2"))?;
    let mut m = a;
    let mut i = 0;
    while s.opt(&format!("dw.{i}.weight")).is_some() {
        let branch = dw(g, a, &s.sub(&format!("dw.{i}")))?;
        m = g.add(m, branch)?;
        i += 1;
    }
    let star = g.mul(m, b)?;
    conv(g, star, &s.sub("proj"))
}

/// Multi-range attention with the weights found under `s`.
pub fn attention_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    s: &Scope,
    specs: &[AttentionSpec],
    mode: AttentionMode,
) -> Result<Var> {
    let weights = MultiRangeWeights {
        qkv: s.var("qkv.weight")?,
        bias_tables: (0..specs.len())
            .map(|i| s.var(&format!("bias_table.{i}")))
            .collect::<Result<_>>()?,
        fuse_weight: s.var("fuse.weight")?,
        fuse_bias: s.opt("fuse.bias"),
    };
    multi_range_attention(g, x, specs, &weights, mode == AttentionMode::Sparse)
}

/// Pre-norm transformer block: attention then MSConvStar, each residual.
///
/// `specs` carry the sparse dilations; in [`AttentionMode::Dense`] they are
/// ignored and every group runs undilated.
pub fn mab_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    s: &Scope,
    specs: &[AttentionSpec],
    mode: AttentionMode,
) -> Result<Var> {
    let n1 = s.sub("norm1");
    let h = g.layer_norm(x, n1.var("weight")?, n1.var("bias")?)?;
    let h = attention_forward(g, h, &s.sub("attn"), specs, mode)?;
    let x = g.add(x, h)?;
    let n2 = s.sub("norm2");
    let h = g.layer_norm(x, n2.var("weight")?, n2.var("bias")?)?;
    let h = msconvstar_forward(g, h, &s.sub("mlp"))?;
    g.add(x, h)
}

/// Residual group: `x + Conv3x3(MAB_m(...MAB_1(LAB(x))))`.
pub fn rmag_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    s: &Scope,
    cfg: &ModelConfig,
    specs: &[AttentionSpec],
) -> Result<Var> {
    let mut y = lab_forward(g, x, &s.sub("lab"))?;
    for (name, mode) in cfg.mab_layers() {
        y = mab_forward(g, y, &s.sub(&name), specs, mode)?;
    }
    let y = conv(g, y, &s.sub("conv"))?;
    g.add(x, y)
}
