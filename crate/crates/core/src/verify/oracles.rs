//! Brute-force reference implementations.
//!
//! Each routine here is written straight from the defining formula with
//! plain loops and shares no code with the optimized kernels it checks.

use crate::attention::AttentionSpec;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn softmax_combine(logits: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let d = values[0].len();
    (0..d)
        .map(|c| weights.iter().zip(values).map(|(w, v)| w * v[c]).sum::<f64>() / total)
        .collect()
}

fn head_vector<T: Scalar>(t: &Tensor<T>, n: usize, head: usize, d: usize, y: usize, x: usize) -> Vec<f64> {
    (0..d).map(|c| t.get(n, head * d + c, y, x).as_f64()).collect()
}

/// Full softmax self-attention over every pixel of the map.
pub fn dense_attention<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Tensor<T> {
    let s = q.shape();
    let d = s.c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Tensor::zeros(s);
    let buf = out.data_mut();
    for n in 0..s.n {
        for h in 0..heads {
            let keys: Vec<(usize, usize)> = (0..s.h).flat_map(|a| (0..s.w).map(move |b| (a, b))).collect();
            let values: Vec<Vec<f64>> = keys.iter().map(|&(a, b)| head_vector(v, n, h, d, a, b)).collect();
            for i in 0..s.h {
                for j in 0..s.w {
                    let qv = head_vector(q, n, h, d, i, j);
                    let logits: Vec<f64> = keys
                        .iter()
                        .map(|&(a, b)| {
                            let kv = head_vector(k, n, h, d, a, b);
                            qv.iter().zip(&kv).map(|(x, y)| x * y).sum::<f64>() * scale
                        })
                        .collect();
                    let o = softmax_combine(&logits, &values);
                    for c in 0..d {
                        buf[s.index(n, h * d + c, i, j)] = T::from_f64(o[c]);
                    }
                }
            }
        }
    }
    out
}

/// Start of the rigidly clamped dilated block along one axis.
fn block_start(i: usize, len: usize, k: usize, dilation: usize) -> usize {
    let extent = (k - 1) * dilation + 1;
    let wanted = i as i64 - (k / 2 * dilation) as i64;
    wanted.clamp(0, (len - extent) as i64) as usize
}

/// Gather each query's neighborhood explicitly, then run dense softmax
/// attention over just those keys.
pub fn gathered_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: AttentionSpec,
) -> Tensor<T> {
    let s = q.shape();
    let (kk, dil, d) = (spec.range_k, spec.dilation, spec.head_dim);
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Tensor::zeros(s);
    let buf = out.data_mut();
    for n in 0..s.n {
        for h in 0..spec.heads {
            for i in 0..s.h {
                let si = block_start(i, s.h, kk, dil);
                for j in 0..s.w {
                    let sj = block_start(j, s.w, kk, dil);
                    let qv = head_vector(q, n, h, d, i, j);
                    let mut logits = Vec::new();
                    let mut values = Vec::new();
                    for x in 0..kk {
                        for y in 0..kk {
                            let (a, b) = (si + x * dil, sj + y * dil);
                            let kv = head_vector(k, n, h, d, a, b);
                            let mut l = qv.iter().zip(&kv).map(|(p, r)| p * r).sum::<f64>() * scale;
                            if let Some(tb) = bias {
                                // relative lattice offset, query position rounded down
                                let row = x as i64 - ((i - si) / dil) as i64 + kk as i64 - 1;
                                let col = y as i64 - ((j - sj) / dil) as i64 + kk as i64 - 1;
                                l += tb.get(0, h, row as usize, col as usize).as_f64();
                            }
                            logits.push(l);
                            values.push(head_vector(v, n, h, d, a, b));
                        }
                    }
                    let o = softmax_combine(&logits, &values);
                    for c in 0..d {
                        buf[s.index(n, h * d + c, i, j)] = T::from_f64(o[c]);
                    }
                }
            }
        }
    }
    out
}

/// Same-padded convolution as a direct sextuple loop.
pub fn naive_conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let xs = x.shape();
    let ws = w.shape();
    let (ph, pw) = (ws.h as i64 / 2, ws.w as i64 / 2);
    Tensor::from_fn(Shape::new(xs.n, ws.n, xs.h, xs.w), |n, co, y, xx| {
        let mut acc = bias.map_or(0.0, |b| b.data()[co].as_f64());
        for ci in 0..xs.c {
            for ky in 0..ws.h {
                for kx in 0..ws.w {
                    let sy = y as i64 + ky as i64 - ph;
                    let sx = xx as i64 + kx as i64 - pw;
                    if sy >= 0 && sy < xs.h as i64 && sx >= 0 && sx < xs.w as i64 {
                        acc += w.get(co, ci, ky, kx).as_f64() * x.get(n, ci, sy as usize, sx as usize).as_f64();
                    }
                }
            }
        }
        T::from_f64(acc)
    })
}

/// Depthwise convolution as a direct loop.
pub fn naive_dwconv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let xs = x.shape();
    let ws = w.shape();
    let (ph, pw) = (ws.h as i64 / 2, ws.w as i64 / 2);
    Tensor::from_fn(xs, |n, c, y, xx| {
        let mut acc = bias.map_or(0.0, |b| b.data()[c].as_f64());
        for ky in 0..ws.h {
            for kx in 0..ws.w {
                let sy = y as i64 + ky as i64 - ph;
                let sx = xx as i64 + kx as i64 - pw;
                if sy >= 0 && sy < xs.h as i64 && sx >= 0 && sx < xs.w as i64 {
                    acc += w.get(c, 0, ky, kx).as_f64() * x.get(n, c, sy as usize, sx as usize).as_f64();
                }
            }
        }
        T::from_f64(acc)
    })
}

/// Bicubic resize evaluated as one direct 2-D weighted sum per output pixel
/// over every virtual sample in reach, mirrored into the image.
pub fn direct_bicubic<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    fn keys(x: f64) -> f64 {
        let a = -0.5;
        let t = x.abs();
        if t <= 1.0 {
            (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
        } else if t < 2.0 {
            a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
        } else {
            0.0
        }
    }
    // weights over 1-based virtual positions for one output coordinate
    fn axis(o: usize, n_in: usize, n_out: usize) -> Vec<(usize, f64)> {
        let s = n_out as f64 / n_in as f64;
        let k = |x: f64| if s < 1.0 { s * keys(s * x) } else { keys(x) };
        let u = (o + 1) as f64 / s + 0.5 * (1.0 - 1.0 / s);
        let reach = if s < 1.0 { 2.0 / s } else { 2.0 } + 2.0;
        let lo = (u - reach).floor() as i64;
        let hi = (u + reach).ceil() as i64;
        let pts: Vec<(i64, f64)> = (lo..=hi).map(|p| (p, k(u - p as f64))).collect();
        let total: f64 = pts.iter().map(|p| p.1).sum();
        pts.into_iter()
            .map(|(p, w)| {
                let n = n_in as i64;
                let mut q = p;
                // reflect across the half-sample borders at 0.5 and n + 0.5
                while q < 1 || q > n {
                    q = if q < 1 { 1 - q } else { 2 * n + 1 - q };
                }
                ((q - 1) as usize, w / total)
            })
            .collect()
    }
    let s = img.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, out_h, out_w), |n, c, i, j| {
        let (wy, wx) = (axis(i, s.h, out_h), axis(j, s.w, out_w));
        let mut acc = 0.0;
        for &(y, a) in &wy {
            for &(x, b) in &wx {
                acc += a * b * img.get(n, c, y, x).as_f64();
            }
        }
        T::from_f64(acc)
    })
}

/// PSNR from its definition, single pass over the cropped region.
pub fn direct_psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, crop: usize) -> f64 {
    let s = a.shape();
    let mut se = 0.0;
    let mut n = 0usize;
    for i in 0..s.n {
        for c in 0..s.c {
            for y in crop..s.h - crop {
                for x in crop..s.w - crop {
                    let d = a.get(i, c, y, x).as_f64() - b.get(i, c, y, x).as_f64();
                    se += d * d;
                    n += 1;
                }
            }
        }
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        100.0
    } else {
        -10.0 * mse.log10()
    }
}

/// SSIM with the 2-D Gaussian window applied at every valid position.
pub fn direct_ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, crop: usize) -> f64 {
    let s = a.shape();
    let k = 11usize;
    let mut win = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            win[y * k + x] = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let norm: f64 = win.iter().sum();
    win.iter_mut().for_each(|w| *w /= norm);
    let (c1, c2) = (1e-4, 9e-4);
    let (h, w) = (s.h - 2 * crop, s.w - 2 * crop);
    let mut total = 0.0;
    let mut planes = 0;
    for i in 0..s.n {
        for c in 0..s.c {
            let mut acc = 0.0;
            let mut count = 0;
            for oy in 0..=h - k {
                for ox in 0..=w - k {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for y in 0..k {
                        for x in 0..k {
                            let wt = win[y * k + x];
                            let pa = a.get(i, c, crop + oy + y, crop + ox + x).as_f64();
                            let pb = b.get(i, c, crop + oy + y, crop + ox + x).as_f64();
                            ma += wt * pa;
                            mb += wt * pb;
                            saa += wt * pa * pa;
                            sbb += wt * pb * pb;
                            sab += wt * pa * pb;
                        }
                    }
                    let (va, vb, cv) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    acc += (2.0 * ma * mb + c1) * (2.0 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
            planes += 1;
        }
    }
    total / planes as f64
}
