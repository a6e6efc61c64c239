use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::model::params::ParamStore;
use crate::model::{MatModel, ModelConfig};
use crate::scalar::Scalar;
use crate::training::adam::Adam;
use crate::training::config::{lr_at, TrainConfig};
use crate::training::sampler::{iteration_rng, sample_batch};

/// `iter=1200 lr=2.0e-4 l1=0.03412`
pub fn format_log_line(iter: u64, lr: f64, l1: f64) -> String {
    format!("iter={iter} lr={lr:.1e} l1={l1:.5}")
}

#[derive(Serialize, Deserialize)]
struct TrainerMeta {
    adam_t: u64,
    train: TrainConfig,
}

/// Model, optimizer state and iteration counter.
pub struct Trainer<T> {
    pub model: MatModel<T>,
    pub adam: Adam<T>,
    pub cfg: TrainConfig,
    /// Completed iterations.
    pub iter: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: MatModel<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.params(), cfg.betas, cfg.eps);
        Ok(Trainer { model, adam, cfg, iter: 0 })
    }

    /// Restore model, moments and counter from a checkpoint. `cfg` replaces
    /// the stored training config when given.
    pub fn resume(path: &Path, model_cfg: Option<&ModelConfig>, cfg: Option<TrainConfig>) -> Result<Self> {
        let ck = load_checkpoint::<T>(path, model_cfg)?;
        let meta: TrainerMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Input(format!("{}: no trainer state ({e})", path.display())))?;
        let cfg = cfg.unwrap_or(meta.train);
        cfg.validate()?;
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for (name, t) in ck.state.iter() {
            if let Some(p) = name.strip_prefix("adam.m.") {
                m.insert(p, t.clone());
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                v.insert(p, t.clone());
            }
        }
        let step = ck.step;
        let model = ck.into_model()?;
        for (name, p) in model.params().iter() {
            for store in [&m, &v] {
                if store.get(name)?.shape() != p.shape() {
                    return Err(Error::Integrity {
                        position: 0,
                        detail: format!("optimizer moment for `{name}` has the wrong shape"),
                    });
                }
            }
        }
        let adam = Adam {
            beta1: cfg.betas.0,
            beta2: cfg.betas.1,
            eps: cfg.eps,
            t: meta.adam_t,
            m,
            v,
        };
        Ok(Trainer {
            model,
            adam,
            cfg,
            iter: step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::from_model(&self.model, self.iter);
        for (name, t) in self.adam.m.iter() {
            ck.state.insert(format!("adam.m.{name}"), t.clone());
        }
        for (name, t) in self.adam.v.iter() {
            ck.state.insert(format!("adam.v.{name}"), t.clone());
        }
        ck.meta = serde_json::to_value(TrainerMeta {
            adam_t: self.adam.t,
            train: self.cfg.clone(),
        })
        .expect("plain data");
        save_checkpoint(&ck, path)
    }

    /// Loss and learning rate of the next iteration, without updating.
    pub fn peek_loss(&self, data: &Dataset<T>) -> Result<f64> {
        let (g, loss, _) = self.forward_loss(data)?;
        Ok(g.value(loss).item().as_f64())
    }

    fn forward_loss(&self, data: &Dataset<T>) -> Result<(crate::graph::Graph<T>, crate::graph::Var, f64)> {
        let lr = lr_at(self.iter, &self.cfg);
        let mut rng = iteration_rng(self.cfg.seed, self.iter);
        let batch = sample_batch(data, self.cfg.patch, self.cfg.batch, self.cfg.augment, &mut rng)?;
        let (mut g, _, y, _) = self.model.trace(&batch.lr)?;
        let target = g.constant(batch.hr);
        let loss = g.l1_loss(y, target)?;
        Ok((g, loss, lr))
    }

    /// Run one iteration; returns `(learning rate, loss)`.
    pub fn step(&mut self, data: &Dataset<T>) -> Result<(f64, f64)> {
        let (g, loss, lr) = self.forward_loss(data)?;
        let l = g.value(loss).item().as_f64();
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {}", self.iter)));
        }
        let grads = g.backward(loss)?;
        drop(g);
        self.adam.step(self.model.params_mut(), &grads, lr)?;
        self.iter += 1;
        Ok((lr, l))
    }

    /// Train until `total_iters`, writing a log line every `log_every`
    /// iterations and checkpoints to `ckpt_dir`. Returns every logged
    /// `(iter, lr, l1)` and the final checkpoint path.
    pub fn run(
        &mut self,
        data: &Dataset<T>,
        ckpt_dir: Option<&Path>,
        log: &mut dyn Write,
    ) -> Result<(Vec<(u64, f64, f64)>, Option<PathBuf>)> {
        let small = data
            .pairs
            .iter()
            .filter(|p| p.lr.shape().h < self.cfg.patch || p.lr.shape().w < self.cfg.patch)
            .count();
        if small > 0 {
            warn!("{small} image(s) smaller than the {0}x{0} LR patch will be skipped", self.cfg.patch);
        }
        let mut logged = Vec::new();
        while self.iter < self.cfg.total_iters {
            let (lr, l) = match self.step(data) {
                Ok(v) => v,
                Err(e) => {
                    if let Some(dir) = ckpt_dir {
                        let p = dir.join("abort.ckpt");
                        match self.save(&p) {
                            Ok(()) => warn!("saved last good state to {}", p.display()),
                            Err(se) => warn!("could not save abort checkpoint: {se}"),
                        }
                    }
                    return Err(e);
                }
            };
            if self.iter % self.cfg.log_every == 0 || self.iter == self.cfg.total_iters {
                writeln!(log, "{}", format_log_line(self.iter, lr, l)).map_err(|e| Error::io("<log>", e))?;
                logged.push((self.iter, lr, l));
            }
            if let Some(dir) = ckpt_dir {
                if self.cfg.ckpt_every > 0 && self.iter % self.cfg.ckpt_every == 0 && self.iter < self.cfg.total_iters {
                    self.save(&dir.join(format!("iter_{:07}.ckpt", self.iter)))?;
                }
            }
        }
        let last = match ckpt_dir {
            Some(dir) => {
                let p = dir.join("final.ckpt");
                self.save(&p)?;
                Some(p)
            }
            None => None,
        };
        Ok((logged, last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_format() {
        assert_eq!(format_log_line(1200, 2e-4, 0.034123), "iter=1200 lr=2.0e-4 l1=0.03412");
        assert_eq!(format_log_line(7, 1.25e-5, 0.5), "iter=7 lr=1.3e-5 l1=0.50000");
    }
}
