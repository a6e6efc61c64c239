//! Matlab-convention bicubic resampling (`imresize(..., 'bicubic')`).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Keys cubic kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let (ax2, ax3) = (ax * ax, ax * ax * ax);
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Sparse resampling matrix for one axis: per output index, a list of
/// `(input index, weight)`.
fn contributions(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    let antialias = scale < 1.0;
    let width = if antialias { 4.0 / scale } else { 4.0 };
    let kernel = |x: f64| if antialias { scale * cubic(scale * x) } else { cubic(x) };
    let taps = width.ceil() as i64 + 2;
    // mirror without repeating the edge sample twice in a row: 0,1,..,n-1,n-1,..,0
    let period = 2 * in_len as i64;
    let fold = |i: i64| -> usize {
        let m = i.rem_euclid(period);
        (if m < in_len as i64 { m } else { period - 1 - m }) as usize
    };
    (1..=out_len)
        .map(|o| {
            let u = o as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as i64;
            let raw: Vec<(i64, f64)> = (0..taps).map(|t| (left + t, kernel(u - (left + t) as f64))).collect();
            let total: f64 = raw.iter().map(|(_, w)| w).sum();
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for (i, w) in raw {
                if w == 0.0 {
                    continue;
                }
                // 1-based sample positions map to 0-based indices
                let idx = fold(i - 1);
                match acc.iter_mut().find(|(j, _)| *j == idx) {
                    Some(e) => e.1 += w / total,
                    None => acc.push((idx, w / total)),
                }
            }
            acc
        })
        .collect()
}

fn resize_axis(data: &[f64], shape: Shape, out_len: usize, vertical: bool) -> (Vec<f64>, Shape) {
    let in_len = if vertical { shape.h } else { shape.w };
    let plan = contributions(in_len, out_len);
    let out_shape = if vertical {
        Shape::new(shape.n, shape.c, out_len, shape.w)
    } else {
        Shape::new(shape.n, shape.c, shape.h, out_len)
    };
    let mut out = vec![0.0; out_shape.numel()];
    for nc in 0..shape.n * shape.c {
        let src = &data[nc * shape.plane()..(nc + 1) * shape.plane()];
        let dst = &mut out[nc * out_shape.plane()..(nc + 1) * out_shape.plane()];
        if vertical {
            for (o, taps) in plan.iter().enumerate() {
                let row = &mut dst[o * shape.w..(o + 1) * shape.w];
                for &(i, wgt) in taps {
                    for (d, s) in row.iter_mut().zip(&src[i * shape.w..(i + 1) * shape.w]) {
                        *d += wgt * s;
                    }
                }
            }
        } else {
            for y in 0..shape.h {
                let srow = &src[y * shape.w..(y + 1) * shape.w];
                for (o, taps) in plan.iter().enumerate() {
                    dst[y * out_len + o] = taps.iter().map(|&(i, wgt)| wgt * srow[i]).sum();
                }
            }
        }
    }
    (out, out_shape)
}

/// Separable bicubic resize with antialiasing on downscale and symmetric
/// boundary handling. The axis with the smaller scale factor goes first.
pub fn bicubic_resize<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!("resize target {out_h}x{out_w} must be positive")));
    }
    let s = img.shape();
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(img.clone());
    }
    let data: Vec<f64> = img.data().iter().map(|v| v.as_f64()).collect();
    let (sh, sw) = (out_h as f64 / s.h as f64, out_w as f64 / s.w as f64);
    let (data, shape) = if sh <= sw {
        let (d, sh1) = resize_axis(&data, s, out_h, true);
        resize_axis(&d, sh1, out_w, false)
    } else {
        let (d, sh1) = resize_axis(&data, s, out_w, false);
        resize_axis(&d, sh1, out_h, true)
    };
    Tensor::new(shape, data.into_iter().map(T::from_f64).collect())
}
