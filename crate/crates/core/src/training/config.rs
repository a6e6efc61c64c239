use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Iterations at which the learning rate halves, strictly increasing.
    pub milestones: Vec<u64>,
    pub total_iters: u64,
    pub batch: usize,
    /// LR patch side.
    pub patch: usize,
    pub seed: u64,
    /// Dihedral augmentation of sampled pairs.
    pub augment: bool,
    pub log_every: u64,
    /// Checkpoint period; 0 saves only at the end.
    pub ckpt_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            betas: (0.9, 0.99),
            eps: 1e-8,
            milestones: vec![250_000, 400_000, 450_000, 475_000],
            total_iters: 500_000,
            batch: 16,
            patch: 64,
            seed: 0,
            augment: true,
            log_every: 100,
            ckpt_every: 5_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 {} must be positive", self.lr0));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return fail(format!("betas ({b1}, {b2}) must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return fail("eps must be positive".into());
        }
        if self.total_iters == 0 || self.batch == 0 || self.patch == 0 || self.log_every == 0 {
            return fail("total_iters, batch, patch and log_every must be positive".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("milestones {:?} must be strictly increasing", self.milestones));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.total_iters) {
            return fail(format!("milestones {:?} must be below total_iters {}", self.milestones, self.total_iters));
        }
        Ok(())
    }
}

/// `lr0 * 2^-(number of milestones <= iter)`.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    let halvings = cfg.milestones.iter().filter(|&&m| m <= iter).count();
    cfg.lr0 * 0.5f64.powi(halvings as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_schedule() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(lr_at(0, &c), 2e-4);
        assert_eq!(lr_at(249_999, &c), 2e-4);
        assert_eq!(lr_at(250_000, &c), 1e-4);
        assert_eq!(lr_at(499_999, &c), 1.25e-5);
        let mut prev = f64::INFINITY;
        let mut drops = 0;
        for it in (0..c.total_iters).step_by(1000).chain([249_999, 250_000]) {
            let lr = lr_at(it, &c);
            assert!(lr <= prev || it == 250_000 || it == 249_999);
            prev = lr;
        }
        for w in c.milestones.iter() {
            if lr_at(*w, &c) < lr_at(w - 1, &c) {
                drops += 1;
            }
        }
        assert_eq!(drops, 4);
    }

    #[test]
    fn validation() {
        let bad = TrainConfig {
            milestones: vec![10, 5],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            total_iters: 100,
            milestones: vec![100],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
