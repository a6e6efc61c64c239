use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::model::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, betas: (f64, f64), eps: f64) -> Self {
        let zeros = |p: &ParamStore<T>| {
            let mut s = ParamStore::new();
            for (n, t) in p.iter() {
                s.insert(n, Tensor::zeros(t.shape()));
            }
            s
        };
        Adam {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            t: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient. Any non-finite gradient aborts before anything changes.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let list: Vec<(&str, Option<&Tensor<T>>)> = grads.params().collect();
        self.step_with(params, &list, lr)
    }

    /// [`step`](Self::step) over an explicit `(name, gradient)` list.
    pub fn step_with(&mut self, params: &mut ParamStore<T>, grads: &[(&str, Option<&Tensor<T>>)], lr: f64) -> Result<()> {
        for &(name, g) in grads {
            if g.is_some_and(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        self.t += 1;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (c1, c2) = (1.0 - self.beta1.powi(self.t as i32), 1.0 - self.beta2.powi(self.t as i32));
        let step = T::from_f64(lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        let eps = T::from_f64(self.eps);
        let one = T::one();
        for &(name, g) in grads {
            let p = params.get_mut(name)?.data_mut();
            let m = self.m.get_mut(name)?.data_mut();
            let v = self.v.get_mut(name)?.data_mut();
            match g {
                Some(g) => {
                    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
                    }
                }
                None => {
                    for ((p, m), v) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m;
                        *v = b2 * *v;
                        *p -= step * *m / ((*v * inv_c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Shape;

    fn quad_step(adam: &mut Adam<f64>, store: &mut ParamStore<f64>, lr: f64, grad_scale: f64) {
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let th = b.var("theta").unwrap();
        let sq = g.mul(th, th).unwrap();
        let out = g.scale(sq, grad_scale);
        let grads = g.backward(out).unwrap();
        adam.step(store, &grads, lr).unwrap();
    }

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::full(Shape::new(1, 1, 1, 1), v));
        s
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut s = scalar_store(0.7);
        let mut a = Adam::new(&s, (0.9, 0.99), 1e-8);
        quad_step(&mut a, &mut s, 0.1, 0.0);
        assert_eq!(s.get("theta").unwrap().item(), 0.7);
        assert_eq!(a.m.get("theta").unwrap().item(), 0.0);
        assert_eq!(a.v.get("theta").unwrap().item(), 0.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        let mut a = Adam::new(&s, (0.9, 0.99), 1e-8);
        quad_step(&mut a, &mut s, 0.01, 3.0);
        assert!((s.get("theta").unwrap().item() - 0.99).abs() < 1e-8);
    }

    #[test]
    fn descends_on_parabola() {
        let mut s = scalar_store(1.0);
        let mut a = Adam::new(&s, (0.9, 0.99), 1e-8);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            quad_step(&mut a, &mut s, 0.1, 1.0);
            let th = s.get("theta").unwrap().item();
            assert!(th.abs() < prev.abs());
            prev = th;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut a = Adam::new(&s, (0.9, 0.99), 1e-8);
        let bad = Tensor::from_parts(Shape::new(1, 1, 1, 1), vec![f64::NAN]);
        let err = a.step_with(&mut s, &[("theta", Some(&bad))], 0.1).unwrap_err();
        assert!(matches!(&err, Error::NonFinite(m) if m.contains("theta")), "{err}");
        assert_eq!(s.get("theta").unwrap().item(), 1.0);
        assert_eq!(a.t, 0);
    }
}
