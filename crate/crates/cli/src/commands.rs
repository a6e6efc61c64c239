use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use mat_core::analysis::{count_params, erf_map, erf_map_mean, multi_adds};
use mat_core::attention::{regional_attention, sparse_global_attention, window_attention, AttentionSpec};
use mat_core::data::{bicubic_resize, evaluate, load_png, save_gray_png, save_png, Dataset};
use mat_core::model::TileOptions;
use mat_core::training::Trainer;
use mat_core::verify::criteria;
use mat_core::{MatModel, ModelConfig, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{self, Overrides};
use crate::{AttnKind, BenchArgs, CliError, CostArgs, ErfArgs, EvalArgs, SelftestArgs, TrainArgs, UpscaleArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Writes to stdout and, when present, a log file.
struct Tee(Option<File>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stdout().write_all(buf)?;
        if let Some(f) = &mut self.0 {
            f.write_all(buf)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stdout().flush()?;
        if let Some(f) = &mut self.0 {
            f.flush()?;
        }
        Ok(())
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Core(mat_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn train(a: TrainArgs) -> Result<()> {
    let file = a.config.as_deref().map(config::read_file).transpose()?;
    let mut flags = Overrides::default();
    flags.set_opt("model.preset", a.preset.clone());
    flags.set_opt("model.scale", a.scale.map(|v| v as i64));
    flags.set_opt("train.seed", a.seed.map(|v| v as i64));
    flags.set_opt("train.total_iters", a.iters.map(|v| v as i64));
    flags.set_opt("train.lr0", a.lr);
    flags.set_opt("train.batch", a.batch.map(|v| v as i64));
    flags.set_opt("train.patch", a.patch.map(|v| v as i64));
    let path_str = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    flags.set_opt("data.train_dir", path_str(&a.train_dir));
    flags.set_opt("data.val_dir", path_str(&a.val_dir));
    flags.set_opt("data.ckpt_dir", path_str(&a.ckpt_dir));
    for s in &a.set {
        flags.parse_assignment(s)?;
    }
    let resolved = config::resolve(file.as_ref(), &flags)?;
    println!("resolved configuration:\n{}", resolved.describe());
    if a.dry_run {
        return Ok(());
    }
    let cfg = resolved.config;
    let train_dir = cfg
        .data
        .train_dir
        .clone()
        .ok_or_else(|| CliError::Usage("data.train_dir is required (--train-dir or the config file)".into()))?;
    let data = Dataset::<f32>::load_dir(&train_dir, cfg.model.scale)?;
    info!("{} training images from {}", data.len(), train_dir.display());

    let mut trainer = match &a.resume {
        Some(path) => {
            let t = Trainer::<f32>::resume(path, Some(&cfg.model), Some(cfg.train.clone()))?;
            info!("resumed at iteration {} from {}", t.iter, path.display());
            t
        }
        None => Trainer::new(MatModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?,
    };
    info!("{} parameters", trainer.model.param_count());
    if let Some(dir) = &cfg.data.ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let log_file = match &cfg.data.log_file {
        Some(p) => Some(File::create(p).map_err(|e| io_err(p, e))?),
        None => None,
    };
    let mut log = Tee(log_file);
    let (_, last) = trainer.run(&data, cfg.data.ckpt_dir.as_deref(), &mut log)?;
    if let Some(p) = last {
        println!("final checkpoint: {}", p.display());
    }
    if let Some(dir) = &cfg.data.val_dir {
        let val = Dataset::<f32>::load_dir(dir, cfg.model.scale)?;
        let report = evaluate(&val.pairs, false, |x| trainer.model.predict(x))?;
        print!("{}", report.table());
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<MatModel<f32>> {
    Ok(MatModel::<f32>::load(path, None)?)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let data = Dataset::<f32>::load_dir(&a.data, model.config().scale)?;
    if data.is_empty() {
        return Err(CliError::Usage(format!("no PNG images in {}", a.data.display())));
    }
    let report = evaluate(&data.pairs, a.ensemble, |x| model.predict(x))?;
    let bicubic = evaluate(&data.pairs, false, |x| {
        let s = x.shape();
        let f = model.config().scale;
        bicubic_resize(x, s.h * f, s.w * f)
    })?;
    if a.json {
        print!("{}", report.json_lines());
    } else {
        print!("{}", report.table());
        println!(
            "bicubic baseline: PSNR {:.2} dB  SSIM {:.4}",
            bicubic.mean_psnr(),
            bicubic.mean_ssim()
        );
    }
    Ok(())
}

pub fn upscale(a: UpscaleArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let scale = model.config().scale;
    let lr = load_png::<f32>(&a.input)?;
    let sr = if a.tile {
        model.predict_tiled(
            &lr,
            TileOptions {
                tile: a.tile_size,
                overlap: a.overlap,
            },
        )?
    } else {
        model.predict(&lr)?
    };
    let out = a.out.unwrap_or_else(|| {
        let stem = a.input.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
        a.input.with_file_name(format!("{stem}_x{scale}.png"))
    });
    save_png(&sr, &out)?;
    let s = sr.shape();
    println!("{} -> {} ({}x{})", a.input.display(), out.display(), s.w, s.h);
    Ok(())
}

pub fn cost(a: CostArgs) -> Result<()> {
    let cfg = ModelConfig::preset(&a.preset, a.scale)?;
    let (w, h) = a.res;
    let report = multi_adds(&cfg, h, w)?;
    let counted = count_params(MatModel::<f32>::new(cfg, 0)?.params());
    if counted.params != report.params {
        return Err(CliError::Failed(format!(
            "parameter ledger {} disagrees with the built model {}",
            report.params, counted.params
        )));
    }
    println!("{} x{} at {w}x{h} output", a.preset, a.scale);
    print!("{}", report.table());
    Ok(())
}

pub fn erf(a: ErfArgs) -> Result<()> {
    let mut model = load_model(&a.ckpt)?;
    if a.no_sma {
        model.disable_sparse_attention();
    }
    let probes = a.input.iter().map(|p| load_png::<f32>(p)).collect::<mat_core::Result<Vec<_>>>()?;
    let map = if probes.len() == 1 {
        erf_map(&model, &probes[0])?
    } else {
        erf_map_mean(&model, &probes)?
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_gray_png(&map.values, map.height, map.width, &a.out)?;
    let summary = map.summary();
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Failed(e.to_string()))?;
    let summary_path = a.out.with_extension("json");
    std::fs::write(&summary_path, format!("{text}\n")).map_err(|e| io_err(&summary_path, e))?;
    println!("{text}");
    println!("map: {}  summary: {}", a.out.display(), summary_path.display());
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let (w, h) = a.res;
    if a.channels % a.heads != 0 {
        return Err(CliError::Usage(format!("{} channels do not split into {} heads", a.channels, a.heads)));
    }
    let head_dim = a.channels / a.heads;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let shape = Shape::new(1, a.channels, h, w);
    let q = Tensor::<f32>::randn(shape, 1.0, &mut rng);
    let k = Tensor::<f32>::randn(shape, 1.0, &mut rng);
    let v = Tensor::<f32>::randn(shape, 1.0, &mut rng);
    let dilations = match a.attn {
        AttnKind::Sga => a.dilation.clone(),
        _ => vec![1],
    };
    println!("{:<5} {:>3} {:>8} {:>11} {:>10} {:>12}", "attn", "k", "dilation", "res", "ms/call", "Mpixel/s");
    for d in dilations {
        let spec = AttentionSpec::new(a.k, d, a.heads, head_dim);
        let call = || -> mat_core::Result<Tensor<f32>> {
            match a.attn {
                AttnKind::Ra => regional_attention(&q, &k, &v, None, spec),
                AttnKind::Sga => sparse_global_attention(&q, &k, &v, None, spec),
                AttnKind::Wsa => window_attention(&q, &k, &v, a.heads, a.k, false),
            }
        };
        call()?;
        let start = Instant::now();
        for _ in 0..a.reps.max(1) {
            std::hint::black_box(call()?);
        }
        let ms = start.elapsed().as_secs_f64() * 1e3 / a.reps.max(1) as f64;
        println!(
            "{:<5} {:>3} {:>8} {:>11} {:>10.3} {:>12.2}",
            format!("{:?}", a.attn).to_lowercase(),
            a.k,
            d,
            format!("{w}x{h}"),
            ms,
            (w * h) as f64 / ms / 1e3
        );
    }
    Ok(())
}

pub fn selftest(a: SelftestArgs) -> Result<()> {
    let ids: Vec<usize> = if !a.only.is_empty() {
        a.only.clone()
    } else {
        (1..=criteria::NAMES.len())
            .filter(|id| a.all || !criteria::SLOW.contains(id))
            .collect()
    };
    if let Some(bad) = ids.iter().find(|&&id| id == 0 || id > criteria::NAMES.len()) {
        return Err(CliError::Usage(format!("no criterion {bad} (1..={})", criteria::NAMES.len())));
    }
    let mut failed = Vec::new();
    for id in ids {
        let outcome = criteria::run(id);
        println!("{outcome}");
        if a.verbose {
            if let Some(extra) = &outcome.extra {
                for line in extra.lines() {
                    println!("       {line}");
                }
            }
        }
        if !outcome.passed {
            failed.push(id);
        }
    }
    if !a.all && a.only.is_empty() {
        println!("(training checks {:?} skipped; pass --all to include them)", criteria::SLOW);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("criteria {failed:?} failed")))
    }
}
