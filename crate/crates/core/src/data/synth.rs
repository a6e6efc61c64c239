//! Procedural test images: smooth gradients, hard-edged shapes and striped
//! textures. They stand in for a natural-image corpus where none is
//! available; edges and stripes are exactly what bicubic upsampling blurs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::color::quantize;
use crate::data::io::save_png;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

type Rgb = [f64; 3];

enum Layer {
    Disc { cy: f64, cx: f64, r: f64, color: Rgb },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64, angle: f64, color: Rgb },
    Stripes { cy: f64, cx: f64, r: f64, angle: f64, period: f64, a: Rgb, b: Rgb },
}

fn color(rng: &mut ChaCha8Rng) -> Rgb {
    std::array::from_fn(|_| rng.random_range(0.05..0.95))
}

impl Layer {
    fn random(rng: &mut ChaCha8Rng, h: f64, w: f64) -> Layer {
        let side = h.min(w);
        match rng.random_range(0..3) {
            0 => Layer::Disc {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                r: rng.random_range(0.04..0.2) * side,
                color: color(rng),
            },
            1 => {
                let (cy, cx) = (rng.random_range(0.0..h), rng.random_range(0.0..w));
                let (hh, hw) = (rng.random_range(0.03..0.18) * side, rng.random_range(0.03..0.18) * side);
                Layer::Rect {
                    y0: cy - hh,
                    x0: cx - hw,
                    y1: cy + hh,
                    x1: cx + hw,
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    color: color(rng),
                }
            }
            _ => Layer::Stripes {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                r: rng.random_range(0.1..0.3) * side,
                angle: rng.random_range(0.0..std::f64::consts::PI),
                period: rng.random_range(2.5..8.0),
                a: color(rng),
                b: color(rng),
            },
        }
    }

    fn sample(&self, y: f64, x: f64) -> Option<Rgb> {
        match *self {
            Layer::Disc { cy, cx, r, color } => ((y - cy).powi(2) + (x - cx).powi(2) <= r * r).then_some(color),
            Layer::Rect { y0, x0, y1, x1, angle, color } => {
                let (cy, cx) = ((y0 + y1) / 2.0, (x0 + x1) / 2.0);
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let (ry, rx) = (c * dy - s * dx, s * dy + c * dx);
                (ry.abs() <= (y1 - y0) / 2.0 && rx.abs() <= (x1 - x0) / 2.0).then_some(color)
            }
            Layer::Stripes { cy, cx, r, angle, period, a, b } => {
                if (y - cy).powi(2) + (x - cx).powi(2) > r * r {
                    return None;
                }
                let (s, c) = angle.sin_cos();
                let t = (c * y + s * x) / period;
                Some(if t.rem_euclid(1.0) < 0.5 { a } else { b })
            }
        }
    }
}

/// Render one `[1, 3, h, w]` image in `[0, 1]`, quantized to 8 bits.
pub fn image<T: Scalar>(h: usize, w: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c0, c1) = (color(&mut rng), color(&mut rng));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let n_layers = rng.random_range(12..24);
    let layers: Vec<Layer> = (0..n_layers).map(|_| Layer::random(&mut rng, h as f64, w as f64)).collect();
    let diag = ((h * h + w * w) as f64).sqrt();
    const SS: usize = 3;
    let mut buf = vec![0.0f64; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..SS {
                for sx in 0..SS {
                    let (py, px) = (y as f64 + (sy as f64 + 0.5) / SS as f64, x as f64 + (sx as f64 + 0.5) / SS as f64);
                    let t = ((py * theta.sin() + px * theta.cos()) / diag + 1.0) / 2.0;
                    let mut c: Rgb = std::array::from_fn(|k| c0[k] * (1.0 - t) + c1[k] * t);
                    for l in &layers {
                        if let Some(v) = l.sample(py, px) {
                            c = v;
                        }
                    }
                    (0..3).for_each(|k| acc[k] += c[k]);
                }
            }
            for k in 0..3 {
                buf[(k * h + y) * w + x] = acc[k] / (SS * SS) as f64;
            }
        }
    }
    let t = Tensor::new(Shape::new(1, 3, h, w), buf.into_iter().map(T::from_f64).collect()).expect("sized");
    quantize(&t)
}

/// Write `n` images `img_000.png, ...` into `dir`.
pub fn write_dataset(dir: &Path, n: usize, h: usize, w: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    for i in 0..n {
        let img = image::<f32>(h, w, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        save_png(&img, &dir.join(format!("img_{i:03}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_range_and_varied() {
        let a = image::<f64>(32, 40, 1);
        assert_eq!(a.data(), image::<f64>(32, 40, 1).data());
        assert_ne!(a.data(), image::<f64>(32, 40, 2).data());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mean = a.mean();
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.numel() as f64;
        assert!(var > 1e-3);
    }
}
