use serde::{Deserialize, Serialize};

use crate::attention::{max_dilation, AttentionSpec};
use crate::error::{Error, Result};

/// How the sparse (SMA) branches choose their dilation rates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DilationRepr", into = "DilationRepr")]
pub enum DilationPolicy {
    /// `floor(min(H, W) / k)` per range, recomputed for every input size.
    Max,
    /// One fixed rate per range size.
    Explicit(Vec<usize>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DilationRepr {
    Keyword(String),
    List(Vec<usize>),
}

impl TryFrom<DilationRepr> for DilationPolicy {
    type Error = String;

    fn try_from(r: DilationRepr) -> std::result::Result<Self, String> {
        match r {
            DilationRepr::Keyword(k) if k == "max" => Ok(DilationPolicy::Max),
            DilationRepr::Keyword(k) => Err(format!("unknown dilation policy `{k}` (expected \"max\" or a list)")),
            DilationRepr::List(v) => Ok(DilationPolicy::Explicit(v)),
        }
    }
}

impl From<DilationPolicy> for DilationRepr {
    fn from(p: DilationPolicy) -> Self {
        match p {
            DilationPolicy::Max => DilationRepr::Keyword("max".into()),
            DilationPolicy::Explicit(v) => DilationRepr::List(v),
        }
    }
}

/// Placement of dense (MA) and sparse (SMA) attention across the MABs of
/// one group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MabSchedule {
    /// `n_mab` blocks alternating MA, SMA, MA, ...
    Alternate,
    /// Every MAB holds an MA layer followed by an SMA layer.
    Paired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Light,
    Classical,
    Tiny,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionMode {
    /// Multi-range attention, every group undilated.
    #[serde(rename = "ma")]
    Dense,
    /// Sparse multi-range attention with the configured dilations.
    #[serde(rename = "sma")]
    Sparse,
}

/// Architectural hyperparameters of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: usize,
    pub n_rmag: usize,
    pub n_mab: usize,
    pub range_sizes: Vec<usize>,
    pub dilation: DilationPolicy,
    pub heads_per_range: usize,
    pub scale: usize,
    pub ca_reduction: usize,
    pub msconv_scales: Vec<usize>,
    pub expansion_ratio: f64,
    pub schedule: MabSchedule,
    /// Start every residual branch's last projection at zero.
    pub zero_init_residual: bool,
    /// Start with the input carried on the first three feature channels and
    /// a head that replicates them to every sub-pixel.
    #[serde(default)]
    pub nearest_init: bool,
}

impl ModelConfig {
    /// Lightweight preset: 4 groups of 2 MABs at 60 channels, ranges
    /// 7/9/11 with two heads each.
    pub fn light(scale: usize) -> Self {
        ModelConfig {
            variant: Variant::Light,
            channels: 60,
            n_rmag: 4,
            n_mab: 2,
            range_sizes: vec![7, 9, 11],
            dilation: DilationPolicy::Max,
            heads_per_range: 2,
            scale,
            ca_reduction: 16,
            msconv_scales: vec![3, 5],
            expansion_ratio: 3.5,
            schedule: MabSchedule::Alternate,
            zero_init_residual: false,
            nearest_init: false,
        }
    }

    /// Classical preset: 6 groups of 3 MABs at 156 channels, ranges 13/15/17.
    pub fn classical(scale: usize) -> Self {
        ModelConfig {
            variant: Variant::Classical,
            channels: 156,
            n_rmag: 6,
            n_mab: 3,
            range_sizes: vec![13, 15, 17],
            ..Self::light(scale)
        }
    }

    /// Desk-scale surrogate that still exercises every block type.
    pub fn tiny() -> Self {
        ModelConfig {
            variant: Variant::Tiny,
            channels: 24,
            n_rmag: 2,
            n_mab: 2,
            range_sizes: vec![3, 5],
            dilation: DilationPolicy::Max,
            heads_per_range: 1,
            scale: 2,
            ca_reduction: 4,
            msconv_scales: vec![3, 5],
            expansion_ratio: 2.0,
            schedule: MabSchedule::Alternate,
            zero_init_residual: false,
            nearest_init: false,
        }
    }

    pub fn preset(name: &str, scale: usize) -> Result<Self> {
        let cfg = match name {
            "light" => Self::light(scale),
            "classical" => Self::classical(scale),
            "tiny" => ModelConfig {
                scale,
                ..Self::tiny()
            },
            other => return Err(Error::Config(format!("unknown preset `{other}` (light|classical|tiny)"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn total_heads(&self) -> usize {
        self.heads_per_range * self.range_sizes.len()
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.total_heads().max(1)
    }

    /// Width of the MSConvStar hidden layer.
    pub fn hidden_channels(&self) -> usize {
        ((self.channels as f64 * self.expansion_ratio).round() as usize).max(1)
    }

    /// Bottleneck width of the channel-attention MLP.
    pub fn ca_channels(&self) -> usize {
        (self.channels / self.ca_reduction.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.n_rmag == 0 || self.n_mab == 0 {
            return fail("channels, n_rmag and n_mab must be positive".into());
        }
        if self.range_sizes.is_empty() || self.heads_per_range == 0 {
            return fail("at least one range size and one head per range are required".into());
        }
        if let Some(k) = self.range_sizes.iter().find(|&&k| k == 0 || k % 2 == 0) {
            return fail(format!("range size {k} must be odd"));
        }
        if self.channels % self.total_heads() != 0 {
            return fail(format!(
                "{} channels not divisible by {} heads",
                self.channels,
                self.total_heads()
            ));
        }
        if !(2..=4).contains(&self.scale) {
            return fail(format!("scale {} not in {{2, 3, 4}}", self.scale));
        }
        if self.ca_reduction == 0 {
            return fail("ca_reduction must be positive".into());
        }
        if self.msconv_scales.iter().any(|&k| k == 0 || k % 2 == 0) {
            return fail(format!("msconv scales {:?} must be odd", self.msconv_scales));
        }
        if !(self.expansion_ratio > 0.0 && self.expansion_ratio.is_finite()) {
            return fail(format!("expansion ratio {} must be positive", self.expansion_ratio));
        }
        if self.nearest_init && self.channels < 3 {
            return fail(format!("nearest_init needs at least 3 channels, got {}", self.channels));
        }
        if let DilationPolicy::Explicit(d) = &self.dilation {
            if d.len() != self.range_sizes.len() || d.contains(&0) {
                return fail(format!(
                    "explicit dilations {d:?} must give one positive rate per range size {:?}",
                    self.range_sizes
                ));
            }
        }
        Ok(())
    }

    /// Dilation rates for the sparse branches on an `h x w` feature map.
    pub fn dilations(&self, h: usize, w: usize) -> Vec<usize> {
        match &self.dilation {
            DilationPolicy::Max => self.range_sizes.iter().map(|&k| max_dilation(k, h, w)).collect(),
            DilationPolicy::Explicit(d) => d.clone(),
        }
    }

    /// Head-group geometry for an `h x w` map, with sparse dilations filled
    /// in. Fails when any dilated lattice would not fit.
    pub fn attention_specs(&self, h: usize, w: usize) -> Result<Vec<AttentionSpec>> {
        let specs: Vec<AttentionSpec> = self
            .range_sizes
            .iter()
            .zip(self.dilations(h, w))
            .map(|(&k, d)| AttentionSpec::new(k, d, self.heads_per_range, self.head_dim()))
            .collect();
        for s in &specs {
            if let Err(Error::Geometry {
                range,
                dilation,
                height,
                width,
                extent,
                ..
            }) = s.check_fits(h, w)
            {
                let hint = match self.dilation {
                    DilationPolicy::Explicit(_) => {
                        "; use dilation policy \"max\" or a larger input"
                    }
                    DilationPolicy::Max => "; the input is smaller than the range size",
                };
                return Err(Error::Geometry {
                    range,
                    dilation,
                    height,
                    width,
                    extent,
                    hint,
                });
            }
        }
        Ok(specs)
    }

    /// `(name prefix, mode)` of every MAB layer inside one group.
    pub fn mab_layers(&self) -> Vec<(String, AttentionMode)> {
        match self.schedule {
            MabSchedule::Alternate => (0..self.n_mab)
                .map(|m| {
                    let mode = if m % 2 == 0 {
                        AttentionMode::Dense
                    } else {
                        AttentionMode::Sparse
                    };
                    (format!("mab.{m}"), mode)
                })
                .collect(),
            MabSchedule::Paired => (0..self.n_mab)
                .flat_map(|m| {
                    [
                        (format!("mab.{m}.ma"), AttentionMode::Dense),
                        (format!("mab.{m}.sma"), AttentionMode::Sparse),
                    ]
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for s in 2..=4 {
            ModelConfig::light(s).validate().unwrap();
            ModelConfig::classical(s).validate().unwrap();
        }
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(ModelConfig::light(4).head_dim(), 10);
        assert_eq!(ModelConfig::classical(2).head_dim(), 26);
        assert_eq!(ModelConfig::tiny().head_dim(), 12);
    }

    #[test]
    fn max_policy_on_64_gives_paper_rates() {
        assert_eq!(ModelConfig::light(4).dilations(64, 64), vec![9, 7, 5]);
    }

    #[test]
    fn explicit_oversized_dilation_is_a_geometry_error_with_hint() {
        let cfg = ModelConfig {
            dilation: DilationPolicy::Explicit(vec![10, 8, 6]),
            ..ModelConfig::light(2)
        };
        match cfg.attention_specs(64, 64) {
            Err(Error::Geometry { range, dilation, hint, .. }) => {
                assert_eq!((range, dilation), (9, 8));
                assert!(hint.contains("max"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn divisibility_is_enforced() {
        let cfg = ModelConfig {
            channels: 62,
            ..ModelConfig::light(2)
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn schedules() {
        let modes: Vec<_> = ModelConfig::light(2).mab_layers().into_iter().map(|(_, m)| m).collect();
        assert_eq!(modes, vec![AttentionMode::Dense, AttentionMode::Sparse]);
        let paired = ModelConfig {
            schedule: MabSchedule::Paired,
            ..ModelConfig::light(2)
        };
        assert_eq!(paired.mab_layers().len(), 4);
    }

    #[test]
    fn dilation_policy_serde() {
        let j = serde_json::to_string(&ModelConfig::tiny()).unwrap();
        assert!(j.contains("\"dilation\":\"max\""));
        let back: ModelConfig = serde_json::from_str(&j).unwrap();
        assert_eq!(back, ModelConfig::tiny());
        let p: DilationPolicy = serde_json::from_str("[1, 2]").unwrap();
        assert_eq!(p, DilationPolicy::Explicit(vec![1, 2]));
        assert!(serde_json::from_str::<DilationPolicy>("\"min\"").is_err());
    }
}
