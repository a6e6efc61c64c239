use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::AttentionSpec;
use crate::blocks::rmag_forward;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::config::{AttentionMode, ModelConfig};
use crate::model::layout::{param_specs, Init, ParamSpec};
use crate::model::params::{Binding, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Overlapping-tile inference settings, in LR pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileOptions {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for TileOptions {
    fn default() -> Self {
        TileOptions { tile: 64, overlap: 16 }
    }
}

/// MAT network: a config plus the named parameters it determines.
#[derive(Clone, Debug)]
pub struct MatModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

fn init_tensor<T: Scalar>(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = spec.shape.numel();
    let data: Vec<T> = match spec.init {
        Init::Zeros => vec![T::zero(); n],
        Init::Ones => vec![T::one(); n],
        Init::FanIn(fan_in) => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect()
        }
        Init::TruncNormal(std) => {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n)
                .map(|_| loop {
                    let v: f64 = normal.sample(rng);
                    if v.abs() <= 2.0 * std {
                        break T::from_f64(v);
                    }
                })
                .collect()
        }
    };
    Tensor::new(spec.shape, data).expect("ledger shapes are valid")
}

/// Route the input through feature channels 0..3 of the shallow conv and
/// let the head copy channel `c` to all sub-pixels of output colour `c`.
fn nearest_head<T: Scalar>(params: &mut ParamStore<T>, scale: usize) -> Result<()> {
    let w = params.get_mut("shallow.weight")?;
    let s = w.shape();
    let data = w.data_mut();
    for c in 0..3 {
        for ci in 0..s.c {
            for k in 0..9 {
                data[s.index(c, ci, k / 3, k % 3)] = if ci == c && k == 4 { T::one() } else { T::zero() };
            }
        }
    }
    params.get_mut("shallow.bias")?.data_mut()[..3].fill(T::zero());
    let w = params.get_mut("recon.weight")?;
    let s = w.shape();
    let data = w.data_mut();
    for o in 0..s.n {
        for ci in 0..3 {
            for k in 0..9 {
                let hit = ci == o / (scale * scale) && k == 4;
                data[s.index(o, ci, k / 3, k % 3)] = if hit { T::one() } else { T::zero() };
            }
        }
    }
    params.get_mut("recon.bias")?.data_mut().fill(T::zero());
    Ok(())
}

impl<T: Scalar> MatModel<T> {
    /// Fresh model with deterministic initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in param_specs(&config) {
            let t = init_tensor(&spec, &mut rng);
            params.insert(spec.name, t);
        }
        if config.nearest_init {
            nearest_head(&mut params, config.scale)?;
        }
        Ok(MatModel { config, params })
    }

    /// Wrap existing parameters, checking them against the config's ledger.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        for spec in &specs {
            let found = params.get(&spec.name)?.shape();
            if found != spec.shape {
                return Err(Error::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape.dims(),
                    found: found.dims(),
                });
            }
        }
        if params.len() != specs.len() {
            let extra = params
                .names()
                .find(|n| !specs.iter().any(|s| s.name == *n))
                .unwrap_or_default()
                .to_string();
            return Err(Error::UnexpectedParam(extra));
        }
        Ok(MatModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<U: Scalar>(&self) -> MatModel<U> {
        MatModel {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Name prefixes of every sparse-attention MAB layer.
    pub fn sparse_layers(&self) -> Vec<String> {
        (0..self.config.n_rmag)
            .flat_map(|g| {
                self.config
                    .mab_layers()
                    .into_iter()
                    .filter(|(_, m)| *m == AttentionMode::Sparse)
                    .map(move |(name, _)| format!("rmag.{g}.{name}"))
            })
            .collect()
    }

    /// Zero the attention output projection of every SMA layer, removing the
    /// sparse branches from the residual stream.
    pub fn disable_sparse_attention(&mut self) {
        for p in self.sparse_layers() {
            self.params.zero_prefix(&format!("{p}.attn.fuse."));
        }
    }

    fn check_input(&self, shape: Shape) -> Result<Vec<AttentionSpec>> {
        if shape.c != 3 {
            return Err(Error::Input(format!("expected 3 input channels, got {shape:?}")));
        }
        self.config.attention_specs(shape.h, shape.w)
    }

    /// Build the forward pass on `g` from bound parameters.
    pub fn forward_on(&self, g: &mut Graph<T>, b: &Binding, x: Var) -> Result<Var> {
        let specs = self.check_input(g.shape(x))?;
        let root = b.scope("");
        let xs = g.conv2d(x, b.var("shallow.weight")?, Some(b.var("shallow.bias")?))?;
        let mut y = xs;
        for i in 0..self.config.n_rmag {
            y = rmag_forward(g, y, &root.sub(&format!("rmag.{i}")), &self.config, &specs)?;
        }
        let xd = g.conv2d(y, b.var("trunk.weight")?, Some(b.var("trunk.bias")?))?;
        let sum = g.add(xs, xd)?;
        let r = g.conv2d(sum, b.var("recon.weight")?, Some(b.var("recon.bias")?))?;
        g.pixel_shuffle(r, self.config.scale)
    }

    /// Forward pass keeping the whole graph (for gradients). Returns the
    /// graph, the input handle, the output handle and the parameter binding.
    pub fn trace(&self, x: &Tensor<T>) -> Result<(Graph<T>, Var, Var, Binding)> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let xv = g.input(x.clone());
        let y = self.forward_on(&mut g, &b, xv)?;
        Ok((g, xv, y, b))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (g, _, y, _) = self.trace(x)?;
        Ok(g.value(y).clone())
    }

    /// Inference that keeps only one residual group's intermediates alive
    /// at a time. Bit-identical to [`forward`](Self::forward).
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let specs = self.check_input(x.shape())?;
        let stage = |f: &dyn Fn(&mut Graph<T>, &Binding, Var) -> Result<Var>, input: &Tensor<T>| {
            let mut g = Graph::new();
            let b = self.params.bind(&mut g);
            let v = g.constant(input.clone());
            let out = f(&mut g, &b, v)?;
            Ok::<_, Error>(g.value(out).clone())
        };
        let xs = stage(&|g, b, v| g.conv2d(v, b.var("shallow.weight")?, Some(b.var("shallow.bias")?)), x)?;
        let mut y = xs.clone();
        for i in 0..self.config.n_rmag {
            y = stage(
                &|g, b, v| rmag_forward(g, v, &b.scope(format!("rmag.{i}")), &self.config, &specs),
                &y,
            )?;
        }
        let xd = stage(&|g, b, v| g.conv2d(v, b.var("trunk.weight")?, Some(b.var("trunk.bias")?)), &y)?;
        let sum = xs.add(&xd)?;
        stage(
            &|g, b, v| {
                let r = g.conv2d(v, b.var("recon.weight")?, Some(b.var("recon.bias")?))?;
                g.pixel_shuffle(r, self.config.scale)
            },
            &sum,
        )
    }

    /// Overlapping-tile inference with uniform averaging in overlaps.
    pub fn predict_tiled(&self, x: &Tensor<T>, opts: TileOptions) -> Result<Tensor<T>> {
        let sh = x.shape();
        if opts.overlap >= opts.tile {
            return Err(Error::Config(format!(
                "tile overlap {} must be smaller than tile {}",
                opts.overlap, opts.tile
            )));
        }
        if sh.h <= opts.tile && sh.w <= opts.tile {
            return self.predict(x);
        }
        let s = self.config.scale;
        let starts = |len: usize| -> Vec<usize> {
            let tile = opts.tile.min(len);
            let step = opts.tile - opts.overlap;
            let mut v: Vec<usize> = (0..).map(|i| i * step).take_while(|&p| p + tile < len).collect();
            v.push(len - tile);
            v.dedup();
            v
        };
        let (th, tw) = (opts.tile.min(sh.h), opts.tile.min(sh.w));
        let out_shape = Shape::new(sh.n, 3, sh.h * s, sh.w * s);
        let mut acc = vec![0.0f64; out_shape.numel()];
        let mut count = vec![0u32; out_shape.numel()];
        for &top in &starts(sh.h) {
            for &left in &starts(sh.w) {
                let tile = x.crop(top, left, th, tw)?;
                let y = self.predict(&tile)?;
                let ys = y.shape();
                for n in 0..ys.n {
                    for c in 0..3 {
                        for i in 0..ys.h {
                            for j in 0..ys.w {
                                let o = out_shape.index(n, c, top * s + i, left * s + j);
                                acc[o] += y.get(n, c, i, j).as_f64();
                                count[o] += 1;
                            }
                        }
                    }
                }
            }
        }
        let data = acc.iter().zip(&count).map(|(&a, &k)| T::from_f64(a / k as f64)).collect();
        Tensor::new(out_shape, data)
    }
}
