//! Config-driven enumeration of every parameter: name, shape and initializer.

use crate::model::config::ModelConfig;
use crate::tensor::Shape;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
    /// Normal with the given std, resampled outside two deviations.
    TruncNormal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

struct Ledger<'a> {
    cfg: &'a ModelConfig,
    out: Vec<ParamSpec>,
}

impl Ledger<'_> {
    fn push(&mut self, name: String, shape: Shape, init: Init) {
        let init = if self.cfg.zero_init_residual && is_residual_terminal(&name) {
            Init::Zeros
        } else {
            init
        };
        self.out.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, prefix: &str, cout: usize, cin: usize, k: usize, bias: bool) {
        let fan_in = cin * k * k;
        self.push(format!("{prefix}.weight"), Shape::new(cout, cin, k, k), Init::FanIn(fan_in));
        if bias {
            self.push(format!("{prefix}.bias"), Shape::new(1, cout, 1, 1), Init::FanIn(fan_in));
        }
    }

    fn dw(&mut self, prefix: &str, c: usize, k: usize) {
        self.push(format!("{prefix}.weight"), Shape::new(c, 1, k, k), Init::FanIn(k * k));
        self.push(format!("{prefix}.bias"), Shape::new(1, c, 1, 1), Init::FanIn(k * k));
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.weight"), Shape::new(1, c, 1, 1), Init::Ones);
        self.push(format!("{prefix}.bias"), Shape::new(1, c, 1, 1), Init::Zeros);
    }

    fn lab(&mut self, p: &str) {
        let c = self.cfg.channels;
        let r = self.cfg.ca_channels();
        self.conv(&format!("{p}.conv"), c, c, 1, true);
        self.dw(&format!("{p}.dw"), c, 3);
        self.conv(&format!("{p}.ca.down"), r, c, 1, true);
        self.conv(&format!("{p}.ca.up"), c, r, 1, true);
    }

    fn mab(&mut self, p: &str) {
        let cfg = self.cfg;
        let c = cfg.channels;
        let hidden = cfg.hidden_channels();
        self.norm(&format!("{p}.norm1"), c);
        self.push(format!("{p}.attn.qkv.weight"), Shape::new(3 * c, c, 1, 1), Init::TruncNormal(0.02));
        for (i, &k) in cfg.range_sizes.iter().enumerate() {
            let side = 2 * k - 1;
            self.push(
                format!("{p}.attn.bias_table.{i}"),
                Shape::new(1, cfg.heads_per_range, side, side),
                Init::TruncNormal(0.02),
            );
        }
        self.push(format!("{p}.attn.fuse.weight"), Shape::new(c, c, 1, 1), Init::TruncNormal(0.02));
        self.push(format!("{p}.attn.fuse.bias"), Shape::new(1, c, 1, 1), Init::Zeros);
        self.norm(&format!("{p}.norm2"), c);
        self.conv(&format!("{p}.mlp.fc1"), hidden, c, 1, true);
        self.conv(&format!("{p}.mlp.fc2"), hidden, c, 1, true);
        for (i, &k) in cfg.msconv_scales.iter().enumerate() {
            self.dw(&format!("{p}.mlp.dw.{i}"), hidden, k);
        }
        self.conv(&format!("{p}.mlp.proj"), c, hidden, 1, true);
    }
}

/// Parameters zeroed by `zero_init_residual`: the last projection of every
/// residual branch.
fn is_residual_terminal(name: &str) -> bool {
    let stem = name.rsplit_once('.').map_or(name, |(s, _)| s);
    stem.ends_with(".attn.fuse")
        || stem.ends_with(".mlp.proj")
        || stem.ends_with(".lab.dw")
        || (stem.starts_with("rmag.") && stem.ends_with(".conv") && !stem.contains(".lab."))
}

/// Every parameter of the network described by `cfg`, in forward order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let mut l = Ledger { cfg, out: Vec::new() };
    l.conv("shallow", c, 3, 3, true);
    for g in 0..cfg.n_rmag {
        l.lab(&format!("rmag.{g}.lab"));
        for (prefix, _) in cfg.mab_layers() {
            l.mab(&format!("rmag.{g}.{prefix}"));
        }
        l.conv(&format!("rmag.{g}.conv"), c, c, 3, true);
    }
    l.conv("trunk", c, c, 3, true);
    l.conv("recon", 3 * cfg.scale * cfg.scale, c, 3, true);
    l.out
}

/// Parameters of one residual group, with the `rmag.{g}.` prefix stripped.
pub fn rmag_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    param_specs(cfg)
        .into_iter()
        .filter_map(|mut p| {
            let rest = p.name.strip_prefix("rmag.0.")?.to_string();
            p.name = rest;
            Some(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let specs = param_specs(&ModelConfig::light(4));
        let mut names: Vec<_> = specs.iter().map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn residual_terminals() {
        assert!(is_residual_terminal("rmag.1.mab.0.attn.fuse.weight"));
        assert!(is_residual_terminal("rmag.1.mab.0.mlp.proj.bias"));
        assert!(is_residual_terminal("rmag.3.conv.weight"));
        assert!(is_residual_terminal("rmag.3.lab.dw.weight"));
        assert!(!is_residual_terminal("rmag.3.lab.conv.weight"));
        assert!(!is_residual_terminal("trunk.weight"));
        assert!(!is_residual_terminal("rmag.0.mab.1.mlp.dw.0.weight"));
    }

    #[test]
    fn shallow_conv_count() {
        let specs = param_specs(&ModelConfig::light(4));
        let n: usize = specs.iter().filter(|p| p.name.starts_with("shallow")).map(|p| p.shape.numel()).sum();
        assert_eq!(n, 1680);
    }
}
