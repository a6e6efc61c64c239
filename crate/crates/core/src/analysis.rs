//! Parameter counts, multiply-accumulate estimates and effective
//! receptive fields.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::layout::param_specs;
use crate::model::params::ParamStore;
use crate::model::MatModel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One row of a [`CostReport`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEntry {
    pub name: String,
    pub params: u64,
    pub multi_adds: u64,
}

/// Totals plus a per-module breakdown that sums to them exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    pub multi_adds: u64,
    /// HR output resolution the multiply-adds refer to, `(height, width)`.
    pub output: Option<(usize, usize)>,
    pub breakdown: Vec<CostEntry>,
}

/// Module a parameter belongs to in the breakdown: `shallow`, `trunk`,
/// `recon`, or `rmag.{g}.{lab|mab.m|mab.m.ma|conv}`.
fn module_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["rmag", g, "mab", m, sub @ ("ma" | "sma"), ..] => format!("rmag.{g}.mab.{m}.{sub}"),
        ["rmag", g, "mab", m, ..] => format!("rmag.{g}.mab.{m}"),
        ["rmag", g, "lab", ..] => format!("rmag.{g}.lab"),
        ["rmag", g, ..] => format!("rmag.{g}.conv"),
        [first, ..] => first.to_string(),
        [] => String::new(),
    }
}

fn add_to(breakdown: &mut Vec<CostEntry>, module: String, params: u64, multi_adds: u64) {
    match breakdown.iter_mut().find(|e| e.name == module) {
        Some(e) => {
            e.params += params;
            e.multi_adds += multi_adds;
        }
        None => breakdown.push(CostEntry {
            name: module,
            params,
            multi_adds,
        }),
    }
}

fn finish(breakdown: Vec<CostEntry>, output: Option<(usize, usize)>) -> CostReport {
    CostReport {
        params: breakdown.iter().map(|e| e.params).sum(),
        multi_adds: breakdown.iter().map(|e| e.multi_adds).sum(),
        output,
        breakdown,
    }
}

/// Element count of every stored parameter, grouped by module.
pub fn count_params<T: Scalar>(params: &ParamStore<T>) -> CostReport {
    let mut b = Vec::new();
    for (name, t) in params.iter() {
        add_to(&mut b, module_of(name), t.numel() as u64, 0);
    }
    finish(b, None)
}

/// Analytic parameters and multiply-accumulates for producing one
/// `out_h x out_w` image. Convolutions count `Cin * Cout * kh * kw` per
/// output site (depthwise: `C * kh * kw`); attention counts `2 * k^2 * d`
/// per head and site for QK and AV; the channel-attention MLP counts once
/// per image; softmax, normalization, activations, elementwise products and
/// residual additions are not counted.
pub fn multi_adds(cfg: &ModelConfig, out_h: usize, out_w: usize) -> Result<CostReport> {
    cfg.validate()?;
    if out_h % cfg.scale != 0 || out_w % cfg.scale != 0 {
        return Err(Error::Config(format!(
            "output {out_h}x{out_w} is not a multiple of the scale {}",
            cfg.scale
        )));
    }
    let sites = ((out_h / cfg.scale) * (out_w / cfg.scale)) as u64;
    let mut b = Vec::new();
    for spec in param_specs(cfg) {
        let module = module_of(&spec.name);
        let s = spec.shape;
        let numel = s.numel() as u64;
        let is_weight = spec.name.ends_with(".weight");
        let is_norm = spec.name.contains(".norm");
        let macs = if !is_weight || is_norm {
            0
        } else if spec.name.contains(".ca.") {
            numel
        } else {
            // dense and depthwise kernels alike: one MAC per weight per site
            numel * sites
        };
        add_to(&mut b, module, numel, macs);
    }
    let head_dim = cfg.head_dim() as u64;
    let per_site: u64 = cfg
        .range_sizes
        .iter()
        .map(|&k| 2 * (k * k) as u64 * head_dim * cfg.heads_per_range as u64)
        .sum();
    for g in 0..cfg.n_rmag {
        for (name, _) in cfg.mab_layers() {
            add_to(&mut b, format!("rmag.{g}.{name}"), 0, per_site * sites);
        }
    }
    Ok(finish(b, Some((out_h, out_w))))
}

fn human(v: u64) -> String {
    match v {
        v if v >= 1_000_000_000 => format!("{:.2}G", v as f64 / 1e9),
        v if v >= 1_000_000 => format!("{:.2}M", v as f64 / 1e6),
        v if v >= 1_000 => format!("{:.1}K", v as f64 / 1e3),
        v => v.to_string(),
    }
}

impl CostReport {
    /// Aligned plain-text table with exact and abbreviated counts.
    pub fn table(&self) -> String {
        let width = self.breakdown.iter().map(|e| e.name.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>9}  {:>16}  {:>9}", "module", "params", "", "multi_adds", "");
        let mut row = |name: &str, p: u64, m: u64| {
            let _ = writeln!(s, "{name:<width$}  {p:>12}  {:>9}  {m:>16}  {:>9}", human(p), human(m));
        };
        for e in &self.breakdown {
            row(&e.name, e.params, e.multi_adds);
        }
        row("total", self.params, self.multi_adds);
        if let Some((h, w)) = self.output {
            let _ = writeln!(s, "multi-adds for one {w}x{h} output");
        }
        s
    }
}

/// Effective receptive field of one output window.
#[derive(Clone, Debug, PartialEq)]
pub struct ErfMap {
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`, maximum exactly 1 (all zero if the
    /// gradient vanished).
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErfSummary {
    /// `(threshold, fraction of pixels at or above it)`.
    pub area_ratios: Vec<(f64, f64)>,
    /// Side of the smallest centred square holding 99% of the gradient mass.
    pub mass_square_side: usize,
    /// Pixels with a nonzero gradient.
    pub support: usize,
}

pub const ERF_THRESHOLDS: [f64; 3] = [0.2, 0.45, 0.7];

impl ErfMap {
    pub fn area_ratio(&self, threshold: f64) -> f64 {
        self.values.iter().filter(|&&v| v >= threshold).count() as f64 / self.values.len() as f64
    }

    pub fn support(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Bounding box `(top, left, bottom, right)` (inclusive) of the nonzero values.
    pub fn support_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.values[y * self.width + x] > 0.0 {
                    bb = Some(match bb {
                        None => (y, x, y, x),
                        Some((t, l, b, r)) => (t.min(y), l.min(x), b.max(y), r.max(x)),
                    });
                }
            }
        }
        bb
    }

    /// Side of the smallest square centred on the map centre whose
    /// contents reach `fraction` of the total.
    pub fn mass_square_side(&self, fraction: f64) -> usize {
        let total: f64 = self.values.iter().sum();
        if total == 0.0 {
            return 0;
        }
        let (cy, cx) = (self.height as f64 / 2.0, self.width as f64 / 2.0);
        let max_side = self.height.max(self.width);
        for side in 1..=max_side {
            let half = side as f64 / 2.0;
            let (y0, y1) = ((cy - half).round().max(0.0) as usize, ((cy + half).round() as usize).min(self.height));
            let (x0, x1) = ((cx - half).round().max(0.0) as usize, ((cx + half).round() as usize).min(self.width));
            let inside: f64 = (y0..y1).flat_map(|y| (x0..x1).map(move |x| (y, x))).map(|(y, x)| self.values[y * self.width + x]).sum();
            if inside >= fraction * total {
                return side;
            }
        }
        max_side
    }

    pub fn summary(&self) -> ErfSummary {
        ErfSummary {
            area_ratios: ERF_THRESHOLDS.iter().map(|&t| (t, self.area_ratio(t))).collect(),
            mass_square_side: self.mass_square_side(0.99),
            support: self.support(),
        }
    }
}

/// Input-gradient footprint of the centred `window x window` output patch:
/// `|d sum(out[window]) / d input|`, summed over channels, max-normalized.
///
/// `forward` receives the graph and the input handle and returns the output
/// handle; it may be any differentiable function of the input.
pub fn erf_with<F>(probe: &Tensor<f64>, window: usize, forward: F) -> Result<ErfMap>
where
    F: Fn(&mut crate::graph::Graph<f64>, crate::graph::Var) -> Result<crate::graph::Var>,
{
    let mut g = crate::graph::Graph::new();
    let x = g.input(probe.clone());
    let y = forward(&mut g, x)?;
    let ys = g.shape(y);
    if ys.h < window || ys.w < window {
        return Err(Error::Input(format!("output {ys:?} is smaller than the {window}x{window} probe window")));
    }
    let (top, left) = ((ys.h - window) / 2, (ys.w - window) / 2);
    let seed = Tensor::from_fn(ys, |_, _, i, j| {
        if (top..top + window).contains(&i) && (left..left + window).contains(&j) {
            1.0
        } else {
            0.0
        }
    });
    let grads = g.backward_with(y, seed)?;
    let s = probe.shape();
    let dx = grads
        .wrt(x)
        .ok_or_else(|| Error::Unsupported("the model does not propagate gradients to its input".into()))?;
    let mut values = vec![0.0; s.h * s.w];
    for n in 0..s.n {
        for c in 0..s.c {
            for (v, d) in values.iter_mut().zip(dx.plane(n, c)) {
                *v += d.abs();
            }
        }
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(ErfMap {
        height: s.h,
        width: s.w,
        values,
    })
}

/// ERF of a MAT model on `probe` (an LR image) with a 2x2 centred window in
/// the SR output.
pub fn erf_map<T: Scalar>(model: &MatModel<T>, probe: &Tensor<T>) -> Result<ErfMap> {
    let m = model.cast::<f64>();
    erf_with(&probe.cast(), 2, |g, x| {
        let b = m.params().bind(g);
        m.forward_on(g, &b, x)
    })
}

/// Average of ERF maps over several probes, renormalized to max 1.
pub fn erf_map_mean<T: Scalar>(model: &MatModel<T>, probes: &[Tensor<T>]) -> Result<ErfMap> {
    let maps = probes.iter().map(|p| erf_map(model, p)).collect::<Result<Vec<_>>>()?;
    let first = maps.first().ok_or_else(|| Error::Input("no ERF probes".into()))?;
    if maps.iter().any(|m| (m.height, m.width) != (first.height, first.width)) {
        return Err(Error::Input("ERF probes differ in size".into()));
    }
    let mut values = vec![0.0; first.values.len()];
    for m in &maps {
        values.iter_mut().zip(&m.values).for_each(|(a, v)| *a += v);
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(ErfMap {
        height: first.height,
        width: first.width,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::tensor::Shape;

    #[test]
    fn single_conv_count_and_macs() {
        let mut p = ParamStore::<f32>::new();
        p.insert("conv.weight", Tensor::zeros(Shape::new(60, 3, 3, 3)));
        p.insert("conv.bias", Tensor::zeros(Shape::new(1, 60, 1, 1)));
        assert_eq!(count_params(&p).params, 1680);
        assert_eq!(9u64 * 1280 * 720, 8_294_400);
    }

    #[test]
    fn breakdown_sums_and_ledger_agree() {
        for cfg in [ModelConfig::tiny(), ModelConfig::light(4), ModelConfig::classical(2)] {
            let r = multi_adds(&cfg, 1280, 720).unwrap();
            assert_eq!(r.params, r.breakdown.iter().map(|e| e.params).sum::<u64>());
            assert_eq!(r.multi_adds, r.breakdown.iter().map(|e| e.multi_adds).sum::<u64>());
            let ledger: u64 = param_specs(&cfg).iter().map(|p| p.shape.numel() as u64).sum();
            assert_eq!(r.params, ledger);
        }
        let m = MatModel::<f32>::new(ModelConfig::tiny(), 0).unwrap();
        assert_eq!(count_params(m.params()).params, multi_adds(&ModelConfig::tiny(), 64, 64).unwrap().params);
    }

    #[test]
    fn macs_scale_with_pixels() {
        let cfg = ModelConfig::light(4);
        let a = multi_adds(&cfg, 1280, 720).unwrap();
        let b = multi_adds(&cfg, 2560, 720).unwrap();
        let ca: u64 = a.breakdown.iter().filter(|e| e.name.ends_with(".lab")).map(|e| e.multi_adds).sum();
        let cb: u64 = b.breakdown.iter().filter(|e| e.name.ends_with(".lab")).map(|e| e.multi_adds).sum();
        // everything but the per-image channel-attention MLP doubles
        let ca_mlp = cfg.n_rmag as u64 * 2 * (cfg.channels * cfg.ca_channels()) as u64;
        assert_eq!(b.multi_adds - ca_mlp, 2 * (a.multi_adds - ca_mlp));
        assert_eq!(cb - ca_mlp, 2 * (ca - ca_mlp));
        assert!(multi_adds(&cfg, 1281, 720).is_err());
    }

    #[test]
    fn attention_term_formula() {
        let cfg = ModelConfig {
            range_sizes: vec![7],
            heads_per_range: 1,
            channels: 10,
            n_rmag: 1,
            n_mab: 1,
            ..ModelConfig::light(2)
        };
        let with = multi_adds(&cfg, 40, 60).unwrap();
        let mab = with.breakdown.iter().find(|e| e.name == "rmag.0.mab.0").unwrap();
        let conv_part: u64 = param_specs(&cfg)
            .iter()
            .filter(|p| p.name.starts_with("rmag.0.mab.0.") && p.name.ends_with(".weight") && !p.name.contains("norm"))
            .map(|p| p.shape.numel() as u64 * 600)
            .sum();
        assert_eq!(mab.multi_adds - conv_part, 2 * 49 * 10 * 20 * 30);
    }

    #[test]
    fn erf_of_conv_is_window_dilated_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 3, 3), 0.1, 1.0, &mut rng);
        let probe = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 12, 12), 0.0, 1.0, &mut rng);
        let map = erf_with(&probe, 2, |g, x| {
            let wv = g.constant(w.clone());
            g.conv2d(x, wv, None)
        })
        .unwrap();
        assert_eq!(map.support(), 16);
        let (t, l, b, r) = map.support_box().unwrap();
        assert_eq!((b - t + 1, r - l + 1), (4, 4));
        assert_eq!(map.values.iter().copied().fold(0.0, f64::max), 1.0);
        assert!(map.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let pointwise = erf_with(&probe, 2, |g, x| Ok(g.gelu(x))).unwrap();
        assert_eq!(pointwise.support(), 4);
    }
}
