//! Sliding-neighborhood softmax attention with optional dilation.
//!
//! Works per `(sample, head)` on site-major copies of Q, K and V so that the
//! inner products run over contiguous memory. The `k*k` keys of each query
//! are visited in row-major lattice order in both passes, which fixes the
//! accumulation order.

use crate::attention::geometry::{AttentionSpec, AxisPlan};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub(crate) struct Plan {
    spec: AttentionSpec,
    rows: AxisPlan,
    cols: AxisPlan,
    shape: Shape,
}

impl Plan {
    pub fn new<T: Scalar>(
        q: &Tensor<T>,
        k: &Tensor<T>,
        v: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        spec: AttentionSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let s = q.shape();
        if k.shape() != s || v.shape() != s {
            return Err(Error::dim(
                "attention",
                format!("q {:?}, k {:?}, v {:?} must match", s, k.shape(), v.shape()),
            ));
        }
        if s.c != spec.channels() {
            return Err(Error::dim(
                "attention",
                format!("{} channels but {} heads x {} dims", s.c, spec.heads, spec.head_dim),
            ));
        }
        if let Some(b) = bias {
            let side = spec.bias_side();
            if b.shape() != Shape::new(1, spec.heads, side, side) {
                return Err(Error::dim(
                    "attention",
                    format!("bias table {:?} expected [1, {}, {side}, {side}]", b.shape(), spec.heads),
                ));
            }
        }
        spec.check_fits(s.h, s.w)?;
        Ok(Plan {
            spec,
            rows: AxisPlan::new(s.h, spec.range_k, spec.dilation),
            cols: AxisPlan::new(s.w, spec.range_k, spec.dilation),
            shape: s,
        })
    }

    fn taps(&self) -> usize {
        self.spec.range_k * self.spec.range_k
    }

    fn probs_len(&self) -> usize {
        self.shape.n * self.spec.heads * self.shape.plane() * self.taps()
    }
}

/// Copy channels `[c0, c0 + d)` of sample `n` into `[site][d]` order.
fn gather_sites<T: Scalar>(t: &Tensor<T>, n: usize, c0: usize, d: usize, out: &mut [T]) {
    for c in 0..d {
        let src = t.plane(n, c0 + c);
        for (p, &v) in src.iter().enumerate() {
            out[p * d + c] = v;
        }
    }
}

fn scatter_sites<T: Scalar>(src: &[T], n: usize, c0: usize, d: usize, shape: Shape, out: &mut [T]) {
    let plane = shape.plane();
    for c in 0..d {
        let base = (n * shape.c + c0 + c) * plane;
        let dst = &mut out[base..base + plane];
        for (p, v) in dst.iter_mut().enumerate() {
            *v = src[p * d + c];
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Forward pass. Returns the output and the softmax weights laid out as
/// `[n][head][site][tap]`.
pub(crate) fn forward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: AttentionSpec,
) -> Result<(Tensor<T>, Vec<T>)> {
    let plan = Plan::new(q, k, v, bias, spec)?;
    let s = plan.shape;
    let (kk, dil, d) = (spec.range_k, spec.dilation, spec.head_dim);
    let taps = plan.taps();
    let plane = s.plane();
    let side = spec.bias_side();
    let scale = T::from_f64(1.0 / (d as f64).sqrt());

    let mut out = vec![T::zero(); s.numel()];
    let mut probs = vec![T::zero(); plan.probs_len()];
    let mut qt = vec![T::zero(); plane * d];
    let mut kt = vec![T::zero(); plane * d];
    let mut vt = vec![T::zero(); plane * d];
    let mut ot = vec![T::zero(); plane * d];
    let mut logits = vec![T::zero(); taps];

    for n in 0..s.n {
        for h in 0..spec.heads {
            let c0 = h * d;
            gather_sites(q, n, c0, d, &mut qt);
            gather_sites(k, n, c0, d, &mut kt);
            gather_sites(v, n, c0, d, &mut vt);
            let table = bias.map(|b| &b.data()[h * side * side..(h + 1) * side * side]);
            let pbase = (n * spec.heads + h) * plane * taps;
            for i in 0..s.h {
                let (si, bi) = (plan.rows.start[i], plan.rows.bias_base[i]);
                for j in 0..s.w {
                    let (sj, bj) = (plan.cols.start[j], plan.cols.bias_base[j]);
                    let site = i * s.w + j;
                    let qs = &qt[site * d..(site + 1) * d];
                    let mut max = T::neg_infinity();
                    for x in 0..kk {
                        let key_row = (si + x * dil) * s.w;
                        for y in 0..kk {
                            let key = key_row + sj + y * dil;
                            let mut l = dot(qs, &kt[key * d..(key + 1) * d]) * scale;
                            if let Some(tb) = table {
                                l += tb[(bi + x) * side + bj + y];
                            }
                            logits[x * kk + y] = l;
                            max = max.max(l);
                        }
                    }
                    let mut total = T::zero();
                    for l in logits.iter_mut() {
                        *l = (*l - max).exp();
                        total += *l;
                    }
                    let inv = T::one() / total;
                    let p = &mut probs[pbase + site * taps..pbase + (site + 1) * taps];
                    let os = &mut ot[site * d..(site + 1) * d];
                    os.iter_mut().for_each(|o| *o = T::zero());
                    for x in 0..kk {
                        let key_row = (si + x * dil) * s.w;
                        for y in 0..kk {
                            let t = x * kk + y;
                            let w = logits[t] * inv;
                            p[t] = w;
                            let key = key_row + sj + y * dil;
                            for (o, &vv) in os.iter_mut().zip(&vt[key * d..(key + 1) * d]) {
                                *o += w * vv;
                            }
                        }
                    }
                }
            }
            scatter_sites(&ot, n, c0, d, s, &mut out);
        }
    }
    Ok((Tensor::from_parts(s, out), probs))
}

pub(crate) struct AttentionGrads<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &[T],
    spec: AttentionSpec,
    dy: &Tensor<T>,
) -> Result<AttentionGrads<T>> {
    let plan = Plan::new(q, k, v, None, spec)?;
    let s = plan.shape;
    if dy.shape() != s || probs.len() != plan.probs_len() {
        return Err(Error::dim("attention_backward", format!("upstream {:?}", dy.shape())));
    }
    let (kk, dil, d) = (spec.range_k, spec.dilation, spec.head_dim);
    let taps = plan.taps();
    let plane = s.plane();
    let side = spec.bias_side();
    let scale = T::from_f64(1.0 / (d as f64).sqrt());

    let mut dq = vec![T::zero(); s.numel()];
    let mut dk = vec![T::zero(); s.numel()];
    let mut dv = vec![T::zero(); s.numel()];
    let mut dbias = vec![T::zero(); spec.heads * side * side];
    let mut qt = vec![T::zero(); plane * d];
    let mut kt = vec![T::zero(); plane * d];
    let mut vt = vec![T::zero(); plane * d];
    let mut gt = vec![T::zero(); plane * d];
    let mut dqt = vec![T::zero(); plane * d];
    let mut dkt = vec![T::zero(); plane * d];
    let mut dvt = vec![T::zero(); plane * d];
    let mut dlogit = vec![T::zero(); taps];

    for n in 0..s.n {
        for h in 0..spec.heads {
            let c0 = h * d;
            gather_sites(q, n, c0, d, &mut qt);
            gather_sites(k, n, c0, d, &mut kt);
            gather_sites(v, n, c0, d, &mut vt);
            gather_sites(dy, n, c0, d, &mut gt);
            dqt.iter_mut().for_each(|x| *x = T::zero());
            dkt.iter_mut().for_each(|x| *x = T::zero());
            dvt.iter_mut().for_each(|x| *x = T::zero());
            let db = &mut dbias[h * side * side..(h + 1) * side * side];
            let pbase = (n * spec.heads + h) * plane * taps;
            for i in 0..s.h {
                let (si, bi) = (plan.rows.start[i], plan.rows.bias_base[i]);
                for j in 0..s.w {
                    let (sj, bj) = (plan.cols.start[j], plan.cols.bias_base[j]);
                    let site = i * s.w + j;
                    let p = &probs[pbase + site * taps..pbase + (site + 1) * taps];
                    let gs = &gt[site * d..(site + 1) * d];
                    let mut weighted = T::zero();
                    for x in 0..kk {
                        let key_row = (si + x * dil) * s.w;
                        for y in 0..kk {
                            let t = x * kk + y;
                            let key = key_row + sj + y * dil;
                            let dp = dot(gs, &vt[key * d..(key + 1) * d]);
                            dlogit[t] = dp;
                            weighted += p[t] * dp;
                            for (acc, &g) in dvt[key * d..(key + 1) * d].iter_mut().zip(gs) {
                                *acc += p[t] * g;
                            }
                        }
                    }
                    let qs = &qt[site * d..(site + 1) * d];
                    let dqs = &mut dqt[site * d..(site + 1) * d];
                    for x in 0..kk {
                        let key_row = (si + x * dil) * s.w;
                        for y in 0..kk {
                            let t = x * kk + y;
                            let dl = p[t] * (dlogit[t] - weighted);
                            db[(bi + x) * side + bj + y] += dl;
                            let key = key_row + sj + y * dil;
                            let dls = dl * scale;
                            for (acc, &kv) in dqs.iter_mut().zip(&kt[key * d..(key + 1) * d]) {
                                *acc += dls * kv;
                            }
                            for (acc, &qv) in dkt[key * d..(key + 1) * d].iter_mut().zip(qs) {
                                *acc += dls * qv;
                            }
                        }
                    }
                }
            }
            scatter_sites(&dqt, n, c0, d, s, &mut dq);
            scatter_sites(&dkt, n, c0, d, s, &mut dk);
            scatter_sites(&dvt, n, c0, d, s, &mut dv);
        }
    }
    Ok(AttentionGrads {
        q: Tensor::from_parts(s, dq),
        k: Tensor::from_parts(s, dk),
        v: Tensor::from_parts(s, dv),
        bias: Tensor::from_parts(Shape::new(1, spec.heads, side, side), dbias),
    })
}
