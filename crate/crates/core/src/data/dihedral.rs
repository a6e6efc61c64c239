//! The eight symmetries of the square, used for augmentation and the
//! self-ensemble.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// `t = 4 * flip + rotation`: a horizontal flip (if `flip`) followed by
/// `rotation` quarter turns counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn new(index: usize) -> Self {
        assert!(index < 8, "dihedral index {index} out of range");
        Dihedral(index as u8)
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn rotation(self) -> usize {
        (self.0 % 4) as usize
    }

    pub fn flipped(self) -> bool {
        self.0 >= 4
    }

    pub fn inverse(self) -> Dihedral {
        if self.flipped() {
            // every reflection is its own inverse
            self
        } else {
            Dihedral(((4 - self.0) % 4) as u8)
        }
    }

    /// Source coordinate in an `h x w` input for output `(y, x)`.
    fn source(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        // output of r quarter turns has shape (w, h) for odd r
        let (mut y, mut x) = (y, x);
        let (mut ch, mut cw) = if self.rotation() % 2 == 1 { (w, h) } else { (h, w) };
        for _ in 0..self.rotation() {
            // undo one CCW turn: out(y, x) = in(x, W_in - 1 - y), W_in = ch
            let (ny, nx) = (x, ch - 1 - y);
            (y, x) = (ny, nx);
            (ch, cw) = (cw, ch);
        }
        if self.flipped() {
            x = cw - 1 - x;
        }
        (y, x)
    }

    pub fn apply<T: Scalar>(self, t: &Tensor<T>) -> Tensor<T> {
        if self.0 == 0 {
            return t.clone();
        }
        let s = t.shape();
        let (oh, ow) = if self.rotation() % 2 == 1 { (s.w, s.h) } else { (s.h, s.w) };
        Tensor::from_fn(Shape::new(s.n, s.c, oh, ow), |n, c, y, x| {
            let (sy, sx) = self.source(y, x, s.h, s.w);
            t.get(n, c, sy, sx)
        })
    }
}

/// Average of `inverse(predict(transform(x)))` over all eight transforms.
pub fn self_ensemble<T, F>(x: &Tensor<T>, predict: F) -> Result<Tensor<T>>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let mut acc: Option<Vec<f64>> = None;
    let mut shape = x.shape();
    for d in Dihedral::all() {
        let y = d.inverse().apply(&predict(&d.apply(x))?);
        shape = y.shape();
        match &mut acc {
            None => acc = Some(y.data().iter().map(|v| v.as_f64()).collect()),
            Some(a) => a.iter_mut().zip(y.data()).for_each(|(a, v)| *a += v.as_f64()),
        }
    }
    let data = acc.expect("eight transforms").into_iter().map(|v| T::from_f64(v / 8.0)).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn grid(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, 2, h, w), |_, c, y, x| (c * 100 + y * 10 + x) as f64)
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let t = Tensor::<f64>::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(Dihedral::new(1).apply(&t).data(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(Dihedral::new(4).apply(&t).data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn inverses_and_distinctness() {
        let x = grid(3, 5);
        let mut seen = HashSet::new();
        for d in Dihedral::all() {
            let y = d.apply(&x);
            assert_eq!(d.inverse().apply(&y).data(), x.data(), "{d:?}");
            let key: Vec<u64> = y.data().iter().map(|v| v.to_bits()).chain([y.shape().h as u64]).collect();
            assert!(seen.insert(key));
        }
        let r1 = Dihedral::new(1);
        assert_eq!(r1.apply(&r1.apply(&x)).data(), Dihedral::new(2).apply(&x).data());
    }

    #[test]
    fn ensemble_collapses_for_pointwise_models() {
        let x = grid(4, 6).map(|v| v / 500.0);
        let f = |t: &Tensor<f64>| Ok(t.map(|v| v * v + 0.1));
        let e = self_ensemble(&x, f).unwrap();
        assert!(e.max_abs_diff(&f(&x).unwrap()) <= 1e-12);
        let c = Tensor::<f64>::full(Shape::new(1, 3, 4, 4), 0.2);
        let e = self_ensemble(&c, |t: &Tensor<f64>| Ok(t.map(|_| 0.7))).unwrap();
        assert!(e.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }
}
