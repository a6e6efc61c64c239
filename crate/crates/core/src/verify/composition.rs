//! Straight-line f64 reference forwards for the network blocks, built only
//! from the brute-force oracles. No tape, no shared kernels.

use crate::attention::AttentionSpec;
use crate::model::config::{AttentionMode, ModelConfig};
use crate::model::params::ParamStore;
use crate::tensor::{Shape, Tensor};
use crate::verify::oracles::{gathered_attention, naive_conv2d, naive_dwconv2d};

type T64 = Tensor<f64>;

struct P<'a> {
    store: &'a ParamStore<f64>,
    prefix: String,
}

impl<'a> P<'a> {
    fn get(&self, leaf: &str) -> &'a T64 {
        let name = format!("{}.{leaf}", self.prefix);
        self.store.get(&name).unwrap_or_else(|_| panic!("oracle: missing {name}"))
    }

    fn try_get(&self, leaf: &str) -> Option<&'a T64> {
        self.store.get(&format!("{}.{leaf}", self.prefix)).ok()
    }

    fn sub(&self, leaf: &str) -> P<'a> {
        P {
            store: self.store,
            prefix: format!("{}.{leaf}", self.prefix),
        }
    }

    fn conv(&self, leaf: &str, x: &T64) -> T64 {
        naive_conv2d(x, self.get(&format!("{leaf}.weight")), self.try_get(&format!("{leaf}.bias")))
    }

    fn dw(&self, leaf: &str, x: &T64) -> T64 {
        naive_dwconv2d(x, self.get(&format!("{leaf}.weight")), self.try_get(&format!("{leaf}.bias")))
    }
}

fn zip(a: &T64, b: &T64, f: impl Fn(f64, f64) -> f64) -> T64 {
    let s = a.shape();
    Tensor::from_fn(s, |n, c, y, x| f(a.get(n, c, y, x), b.get(n, c, y, x)))
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn layer_norm(x: &T64, gamma: &T64, beta: &T64) -> T64 {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, y, xx| {
        let vals: Vec<f64> = (0..s.c).map(|k| x.get(n, k, y, xx)).collect();
        let mean = vals.iter().sum::<f64>() / s.c as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.c as f64;
        (x.get(n, c, y, xx) - mean) / (var + 1e-6).sqrt() * gamma.data()[c] + beta.data()[c]
    })
}

fn slice(x: &T64, start: usize, len: usize) -> T64 {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, len, s.h, s.w), |n, c, y, xx| x.get(n, start + c, y, xx))
}

pub fn lab(store: &ParamStore<f64>, prefix: &str, x: &T64) -> T64 {
    let p = P { store, prefix: prefix.into() };
    let y = p.dw("dw", &p.conv("conv", x));
    let s = y.shape();
    let ca = p.sub("ca");
    let (wd, bd) = (ca.get("down.weight"), ca.get("down.bias"));
    let (wu, bu) = (ca.get("up.weight"), ca.get("up.bias"));
    let r = wd.shape().n;
    Tensor::from_fn(s, |n, c, i, j| {
        let pooled: Vec<f64> = (0..s.c)
            .map(|k| y.plane(n, k).iter().sum::<f64>() / s.plane() as f64)
            .collect();
        let hidden: Vec<f64> = (0..r)
            .map(|h| (bd.data()[h] + (0..s.c).map(|k| wd.get(h, k, 0, 0) * pooled[k]).sum::<f64>()).max(0.0))
            .collect();
        let logit = bu.data()[c] + (0..r).map(|h| wu.get(c, h, 0, 0) * hidden[h]).sum::<f64>();
        let gate = 1.0 / (1.0 + (-logit).exp());
        x.get(n, c, i, j) + gate * y.get(n, c, i, j)
    })
}

pub fn msconvstar(store: &ParamStore<f64>, prefix: &str, x: &T64) -> T64 {
    let p = P { store, prefix: prefix.into() };
    let a = p.conv("fc1", x).map(gelu);
    let b = p.conv("fc2", x);
    let mut m = a.clone();
    let mut i = 0;
    while p.try_get(&format!("dw.{i}.weight")).is_some() {
        m = zip(&m, &p.dw(&format!("dw.{i}"), &a), |u, v| u + v);
        i += 1;
    }
    p.conv("proj", &zip(&m, &b, |u, v| u * v))
}

pub fn attention(store: &ParamStore<f64>, prefix: &str, x: &T64, specs: &[AttentionSpec], mode: AttentionMode) -> T64 {
    let p = P { store, prefix: prefix.into() };
    let c = x.shape().c;
    let qkv = p.conv("qkv", x);
    let mut parts = Vec::new();
    let mut off = 0;
    for (i, spec) in specs.iter().enumerate() {
        let spec = match mode {
            AttentionMode::Dense => spec.with_dilation(1),
            AttentionMode::Sparse => *spec,
        };
        let w = spec.channels();
        let (q, k, v) = (slice(&qkv, off, w), slice(&qkv, c + off, w), slice(&qkv, 2 * c + off, w));
        parts.push(gathered_attention(&q, &k, &v, Some(p.get(&format!("bias_table.{i}"))), spec));
        off += w;
    }
    let refs: Vec<&T64> = parts.iter().collect();
    let merged = Tensor::concat_channels(&refs).expect("oracle concat");
    p.conv("fuse", &merged)
}

pub fn mab(store: &ParamStore<f64>, prefix: &str, x: &T64, specs: &[AttentionSpec], mode: AttentionMode) -> T64 {
    let p = P { store, prefix: prefix.into() };
    let h = layer_norm(x, p.get("norm1.weight"), p.get("norm1.bias"));
    let x = zip(x, &attention(store, &format!("{prefix}.attn"), &h, specs, mode), |u, v| u + v);
    let h = layer_norm(&x, p.get("norm2.weight"), p.get("norm2.bias"));
    zip(&x, &msconvstar(store, &format!("{prefix}.mlp"), &h), |u, v| u + v)
}

pub fn rmag(store: &ParamStore<f64>, prefix: &str, x: &T64, cfg: &ModelConfig, specs: &[AttentionSpec]) -> T64 {
    let p = P { store, prefix: prefix.into() };
    let mut y = lab(store, &format!("{prefix}.lab"), x);
    for (name, mode) in cfg.mab_layers() {
        y = mab(store, &format!("{prefix}.{name}"), &y, specs, mode);
    }
    zip(x, &p.conv("conv", &y), |u, v| u + v)
}

/// Whole network, straight from its defining composition.
pub fn mat(store: &ParamStore<f64>, cfg: &ModelConfig, x: &T64) -> T64 {
    let s = x.shape();
    let specs = cfg.attention_specs(s.h, s.w).expect("oracle geometry");
    let top = |name: &str, t: &T64| {
        naive_conv2d(
            t,
            store.get(&format!("{name}.weight")).expect("weight"),
            store.get(&format!("{name}.bias")).ok(),
        )
    };
    let xs = top("shallow", x);
    let mut y = xs.clone();
    for g in 0..cfg.n_rmag {
        y = rmag(store, &format!("rmag.{g}"), &y, cfg, &specs);
    }
    let xd = top("trunk", &y);
    let r = top("recon", &zip(&xs, &xd, |u, v| u + v));
    let sc = cfg.scale;
    let rs = r.shape();
    Tensor::from_fn(Shape::new(rs.n, rs.c / (sc * sc), rs.h * sc, rs.w * sc), |n, c, y, x| {
        r.get(n, c * sc * sc + (y % sc) * sc + x % sc, y / sc, x / sc)
    })
}
