//! Same-padded stride-1 convolutions (dense and depthwise) with adjoints.

use crate::error::{Error, Result};
use crate::scalar::{matmul, MatRef, Scalar};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug)]
struct Window {
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
}

fn window(op: &'static str, kh: usize, kw: usize) -> Result<Window> {
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Config(format!(
            "{op}: kernel {kh}x{kw} must have odd spatial size for same padding"
        )));
    }
    Ok(Window {
        kh,
        kw,
        ph: kh / 2,
        pw: kw / 2,
    })
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != Shape::new(1, channels, 1, 1) {
            return Err(Error::dim(op, format!("bias {:?} expected [1, {channels}, 1, 1]", b.shape())));
        }
    }
    Ok(())
}

fn check_conv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Window> {
    let (xs, ws) = (x.shape(), w.shape());
    if ws.c != xs.c {
        return Err(Error::dim(
            "conv2d",
            format!("input has {} channels but weight {:?} expects {}", xs.c, ws, ws.c),
        ));
    }
    check_bias("conv2d", bias, ws.n)?;
    window("conv2d", ws.h, ws.w)
}

/// Valid output-column range for kernel column `kx` under same padding.
#[inline]
fn col_range(width: usize, kx: usize, pw: usize) -> (usize, usize) {
    let lo = pw.saturating_sub(kx).min(width);
    let hi = (width + pw).saturating_sub(kx).min(width);
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, win: Window, col: &mut [T]) {
    let plane = h * w;
    let mut row = 0;
    for ci in 0..c {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (x0, x1) = col_range(w, kx, win.pw);
                for y in 0..h {
                    let drow = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - win.ph as isize;
                    if sy < 0 || sy >= h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    drow[..x0].iter_mut().for_each(|v| *v = T::zero());
                    drow[x1..].iter_mut().for_each(|v| *v = T::zero());
                    let shift = x0 + kx - win.pw;
                    drow[x0..x1].copy_from_slice(&srow[shift..shift + (x1 - x0)]);
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, win: Window, dx: &mut [T]) {
    let plane = h * w;
    let mut row = 0;
    for ci in 0..c {
        let dst = &mut dx[ci * plane..(ci + 1) * plane];
        for ky in 0..win.kh {
            for kx in 0..win.kw {
                let src = &col[row * plane..(row + 1) * plane];
                let (x0, x1) = col_range(w, kx, win.pw);
                for y in 0..h {
                    let sy = y as isize + ky as isize - win.ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let shift = x0 + kx - win.pw;
                    let drow = &mut dst[sy as usize * w + shift..sy as usize * w + shift + (x1 - x0)];
                    for (d, s) in drow.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += *s;
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let win = check_conv(x, w, bias)?;
    let xs = x.shape();
    let cout = w.shape().n;
    let plane = xs.plane();
    let kdim = xs.c * win.kh * win.kw;
    let pointwise = win.kh == 1 && win.kw == 1;
    let mut out = vec![T::zero(); xs.n * cout * plane];
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kdim * plane] };
    for n in 0..xs.n {
        let xn = &x.data()[n * xs.c * plane..(n + 1) * xs.c * plane];
        let on = &mut out[n * cout * plane..(n + 1) * cout * plane];
        let cols = if pointwise {
            xn
        } else {
            im2col(xn, xs.c, xs.h, xs.w, win, &mut col);
            &col
        };
        matmul(MatRef::new(w.data(), cout, kdim), MatRef::new(cols, kdim, plane), on, false);
        if let Some(b) = bias {
            for (co, &bv) in b.data().iter().enumerate() {
                on[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(Tensor::from_parts(Shape::new(xs.n, cout, xs.h, xs.w), out))
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<ConvGrads<T>> {
    let win = check_conv(x, w, None)?;
    let xs = x.shape();
    let cout = w.shape().n;
    let plane = xs.plane();
    let kdim = xs.c * win.kh * win.kw;
    if dy.shape() != Shape::new(xs.n, cout, xs.h, xs.w) {
        return Err(Error::dim("conv2d_backward", format!("upstream {:?}", dy.shape())));
    }
    let pointwise = win.kh == 1 && win.kw == 1;
    let mut dx = vec![T::zero(); xs.numel()];
    let mut dw = vec![T::zero(); w.numel()];
    let mut db = vec![T::zero(); cout];
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kdim * plane] };
    let mut dcol = if pointwise { Vec::new() } else { vec![T::zero(); kdim * plane] };
    for n in 0..xs.n {
        let xn = &x.data()[n * xs.c * plane..(n + 1) * xs.c * plane];
        let dyn_ = &dy.data()[n * cout * plane..(n + 1) * cout * plane];
        for (co, acc) in db.iter_mut().enumerate() {
            *acc += dyn_[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
        let dxn = &mut dx[n * xs.c * plane..(n + 1) * xs.c * plane];
        if pointwise {
            matmul(MatRef::new(dyn_, cout, plane), MatRef::new(xn, kdim, plane).t(), &mut dw, true);
            matmul(MatRef::new(w.data(), cout, kdim).t(), MatRef::new(dyn_, cout, plane), dxn, false);
        } else {
            im2col(xn, xs.c, xs.h, xs.w, win, &mut col);
            matmul(MatRef::new(dyn_, cout, plane), MatRef::new(&col, kdim, plane).t(), &mut dw, true);
            matmul(MatRef::new(w.data(), cout, kdim).t(), MatRef::new(dyn_, cout, plane), &mut dcol, false);
            col2im(&dcol, xs.c, xs.h, xs.w, win, dxn);
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(xs, dx),
        weight: Tensor::from_parts(w.shape(), dw),
        bias: Tensor::vector(db),
    })
}

fn check_dw<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Window> {
    let (xs, ws) = (x.shape(), w.shape());
    if ws.n != xs.c || ws.c != 1 {
        return Err(Error::dim(
            "dwconv2d",
            format!("input has {} channels but weight is {:?}; expected [{}, 1, kh, kw]", xs.c, ws, xs.c),
        ));
    }
    check_bias("dwconv2d", bias, xs.c)?;
    window("dwconv2d", ws.h, ws.w)
}

/// Depthwise convolution: channel `c` of the output sees only channel `c`.
pub fn dwconv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let win = check_dw(x, w, bias)?;
    let xs = x.shape();
    let (h, wd) = (xs.h, xs.w);
    let plane = xs.plane();
    let taps = win.kh * win.kw;
    let mut out = vec![T::zero(); xs.numel()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = x.plane(n, c);
            let kern = &w.data()[c * taps..(c + 1) * taps];
            let dst = &mut out[(n * xs.c + c) * plane..(n * xs.c + c + 1) * plane];
            let b0 = bias.map_or(T::zero(), |b| b.data()[c]);
            dst.iter_mut().for_each(|v| *v = b0);
            for ky in 0..win.kh {
                for kx in 0..win.kw {
                    let kv = kern[ky * win.kw + kx];
                    let (x0, x1) = col_range(wd, kx, win.pw);
                    let shift = x0 + kx - win.pw;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - win.ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * wd + shift..sy as usize * wd + shift + (x1 - x0)];
                        let drow = &mut dst[y * wd + x0..y * wd + x1];
                        for (d, &s) in drow.iter_mut().zip(srow) {
                            *d += kv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(xs, out))
}

pub fn dwconv2d_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> Result<ConvGrads<T>> {
    let win = check_dw(x, w, None)?;
    let xs = x.shape();
    if dy.shape() != xs {
        return Err(Error::dim("dwconv2d_backward", format!("upstream {:?}", dy.shape())));
    }
    let (h, wd) = (xs.h, xs.w);
    let plane = xs.plane();
    let taps = win.kh * win.kw;
    let mut dx = vec![T::zero(); xs.numel()];
    let mut dw = vec![T::zero(); w.numel()];
    let mut db = vec![T::zero(); xs.c];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = x.plane(n, c);
            let g = dy.plane(n, c);
            db[c] += g.iter().copied().sum::<T>();
            let kern = &w.data()[c * taps..(c + 1) * taps];
            let dkern = &mut dw[c * taps..(c + 1) * taps];
            let dsrc = &mut dx[(n * xs.c + c) * plane..(n * xs.c + c + 1) * plane];
            for ky in 0..win.kh {
                for kx in 0..win.kw {
                    let kv = kern[ky * win.kw + kx];
                    let (x0, x1) = col_range(wd, kx, win.pw);
                    let shift = x0 + kx - win.pw;
                    let mut acc = T::zero();
                    for y in 0..h {
                        let sy = y as isize + ky as isize - win.ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let so = sy as usize * wd + shift;
                        let grow = &g[y * wd + x0..y * wd + x1];
                        let srow = &src[so..so + (x1 - x0)];
                        let mut row_acc = T::zero();
                        for (&gv, &sv) in grow.iter().zip(srow) {
                            row_acc += gv * sv;
                        }
                        acc += row_acc;
                        let drow = &mut dsrc[so..so + (x1 - x0)];
                        for (d, &gv) in drow.iter_mut().zip(grow) {
                            *d += kv * gv;
                        }
                    }
                    dkern[ky * win.kw + kx] += acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(xs, dx),
        weight: Tensor::from_parts(w.shape(), dw),
        bias: Tensor::vector(db),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct sextuple loop with explicit zero padding.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Tensor<f64> {
        let xs = x.shape();
        let ws = w.shape();
        let (ph, pw) = (ws.h as isize / 2, ws.w as isize / 2);
        Tensor::from_fn(Shape::new(xs.n, ws.n, xs.h, xs.w), |n, co, y, xx| {
            let mut acc = b[co];
            for ci in 0..xs.c {
                for ky in 0..ws.h {
                    for kx in 0..ws.w {
                        let sy = y as isize + ky as isize - ph;
                        let sx = xx as isize + kx as isize - pw;
                        if sy >= 0 && sy < xs.h as isize && sx >= 0 && sx < xs.w as isize {
                            acc += w.get(co, ci, ky, kx) * x.get(n, ci, sy as usize, sx as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::randn(Shape::new(1, 1, 5, 5), 1.0, &mut rng);
        let w = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, h, w| if h == 1 && w == 1 { 1.0 } else { 0.0 });
        let y = conv2d(&x, &w, Some(&Tensor::vector(vec![0.0]))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::randn(Shape::new(2, 3, 4, 5), 1.0, &mut rng);
        let w = Tensor::zeros(Shape::new(2, 3, 3, 3));
        let y = conv2d(&x, &w, Some(&Tensor::vector(vec![0.25, -1.5]))).unwrap();
        for n in 0..2 {
            assert!(y.plane(n, 0).iter().all(|&v| v == 0.25));
            assert!(y.plane(n, 1).iter().all(|&v| v == -1.5));
        }
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 4, 4), 1.0, &mut rng);
        let w = Tensor::<f64>::randn(Shape::new(3, 2, 3, 3), 1.0, &mut rng);
        let b = vec![0.1, -0.2, 0.3];
        let got = conv2d(&x, &w, Some(&Tensor::vector(b.clone()))).unwrap();
        assert!(got.max_abs_diff(&naive_conv(&x, &w, &b)) <= 1e-6);
        // 1x1 path and a 5x3 kernel take different code routes
        let w1 = Tensor::<f64>::randn(Shape::new(4, 2, 1, 1), 1.0, &mut rng);
        let got1 = conv2d(&x, &w1, None).unwrap();
        assert!(got1.max_abs_diff(&naive_conv(&x, &w1, &[0.0; 4])) <= 1e-12);
        let w53 = Tensor::<f64>::randn(Shape::new(2, 2, 5, 3), 1.0, &mut rng);
        let got53 = conv2d(&x, &w53, None).unwrap();
        assert!(got53.max_abs_diff(&naive_conv(&x, &w53, &[0.0; 2])) <= 1e-12);
    }

    #[test]
    fn rejects_even_kernel_and_channel_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        assert!(matches!(conv2d(&x, &Tensor::zeros(Shape::new(1, 2, 2, 2)), None), Err(Error::Config(_))));
        assert!(matches!(
            conv2d(&x, &Tensor::zeros(Shape::new(1, 3, 3, 3)), None),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            dwconv2d(&x, &Tensor::zeros(Shape::new(3, 1, 3, 3)), None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn depthwise_matches_block_diagonal_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
        let w = Tensor::<f64>::randn(Shape::new(2, 1, 3, 3), 1.0, &mut rng);
        let dense = Tensor::from_fn(Shape::new(2, 2, 3, 3), |co, ci, h, ww| {
            if co == ci {
                w.get(co, 0, h, ww)
            } else {
                0.0
            }
        });
        let b = Tensor::vector(vec![0.5, -0.5]);
        let got = dwconv2d(&x, &w, Some(&b)).unwrap();
        let want = conv2d(&x, &dense, Some(&b)).unwrap();
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }

    #[test]
    fn depthwise_identity_and_window_sum() {
        let x = Tensor::<f32>::full(Shape::new(1, 2, 5, 5), 1.0);
        let delta = Tensor::from_fn(Shape::new(2, 1, 3, 3), |_, _, h, w| if h == 1 && w == 1 { 1.0 } else { 0.0 });
        assert_eq!(dwconv2d(&x, &delta, None).unwrap(), x);
        let ones = Tensor::full(Shape::new(2, 1, 3, 3), 1.0f32);
        let y = dwconv2d(&x, &ones, None).unwrap();
        assert_eq!(y.get(0, 1, 2, 2), 9.0);
        assert_eq!(y.get(0, 0, 0, 0), 4.0);
    }
}
