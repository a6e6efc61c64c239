use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions of an NCHW tensor.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_dims(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-D array in row-major NCHW order.
///
/// Storage is reference counted, so clones are cheap; mutation through
/// [`Tensor::data_mut`] copies on write when the buffer is shared.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &head)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::dim("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", shape.numel(), data.len()),
            ));
        }
        let t = Tensor {
            shape,
            data: Arc::new(data),
        };
        t.debug_check_finite();
        Ok(t)
    }

    /// Internal constructor for buffers whose length is known to be right.
    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self::from_parts(shape, vec![value; shape.numel()])
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self::from_parts(shape, data)
    }

    /// A per-channel vector stored as `[1, C, 1, 1]`.
    pub fn vector(values: Vec<T>) -> Self {
        let c = values.len().max(1);
        let mut values = values;
        if values.is_empty() {
            values.push(T::zero());
        }
        Self::from_parts(Shape::new(1, c, 1, 1), values)
    }

    pub fn scalar(v: T) -> Self {
        Self::from_parts(Shape::new(1, 1, 1, 1), vec![v])
    }

    /// Standard-normal samples scaled by `std`.
    pub fn randn(shape: Shape, std: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Self::from_parts(shape, data)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::from_f64(rng.random_range(lo..hi)))
            .collect();
        Self::from_parts(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    /// The `[H, W]` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let off = (n * self.shape.c + c) * p;
        &self.data[off..off + p]
    }

    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.numel() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self::from_parts(
            self.shape,
            self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(self.shape, self.data.iter().map(|v| U::from_f64(v.as_f64())).collect())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.numel() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// NaN/Inf in a tensor is a contract violation; checked in debug builds.
    #[inline]
    pub fn debug_check_finite(&self) {
        debug_assert!(self.is_finite(), "non-finite value in tensor of shape {:?}", self.shape);
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if len == 0 || start + len > s.c {
            return Err(Error::dim(
                "narrow_channels",
                format!("range {start}..{} outside {} channels", start + len, s.c),
            ));
        }
        let p = s.plane();
        let mut out = Vec::with_capacity(s.n * len * p);
        for n in 0..s.n {
            let off = (n * s.c + start) * p;
            out.extend_from_slice(&self.data[off..off + len * p]);
        }
        Ok(Self::from_parts(Shape::new(s.n, len, s.h, s.w), out))
    }

    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_channels", "no inputs"))?
            .shape;
        let mut c_total = 0;
        for p in parts {
            let s = p.shape;
            if s.n != first.n || s.h != first.h || s.w != first.w {
                return Err(Error::dim("concat_channels", format!("{s:?} vs {first:?}")));
            }
            c_total += s.c;
        }
        let plane = first.plane();
        let mut out = Vec::with_capacity(first.n * c_total * plane);
        for n in 0..first.n {
            for p in parts {
                let len = p.shape.c * plane;
                out.extend_from_slice(&p.data[n * len..(n + 1) * len]);
            }
        }
        Ok(Self::from_parts(Shape::new(first.n, c_total, first.h, first.w), out))
    }

    /// Sample `n` as a batch of one.
    pub fn batch_item(&self, n: usize) -> Self {
        let len = self.shape.c * self.shape.plane();
        Self::from_parts(
            Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            self.data[n * len..(n + 1) * len].to_vec(),
        )
    }

    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::dim("stack", "no inputs"))?.shape;
        let mut data = Vec::with_capacity(items.len() * first.numel());
        for t in items {
            if t.shape.c != first.c || t.shape.h != first.h || t.shape.w != first.w {
                return Err(Error::dim("stack", format!("{:?} vs {first:?}", t.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let n = data.len() / (first.c * first.plane());
        Ok(Self::from_parts(Shape::new(n, first.c, first.h, first.w), data))
    }

    /// Spatial window `[top, top + h) x [left, left + w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || top + h > s.h || left + w > s.w {
            return Err(Error::dim(
                "crop",
                format!("window {h}x{w} at ({top},{left}) outside {}x{}", s.h, s.w),
            ));
        }
        let mut out = Vec::with_capacity(s.n * s.c * h * w);
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = self.plane(n, c);
                for y in top..top + h {
                    out.extend_from_slice(&plane[y * s.w + left..y * s.w + left + w]);
                }
            }
        }
        Ok(Self::from_parts(Shape::new(s.n, s.c, h, w), out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_zero_dims() {
        assert!(Tensor::<f32>::new(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Tensor::<f32>::new(Shape::new(1, 0, 2, 2), vec![]).is_err());
    }

    #[test]
    fn narrow_and_concat_are_inverse() {
        let t = Tensor::<f64>::from_fn(Shape::new(2, 5, 3, 2), |n, c, h, w| {
            (n * 1000 + c * 100 + h * 10 + w) as f64
        });
        let a = t.narrow_channels(0, 2).unwrap();
        let b = t.narrow_channels(2, 3).unwrap();
        assert_eq!(Tensor::concat_channels(&[&a, &b]).unwrap(), t);
        assert_eq!(a.get(1, 1, 2, 1), 1121.0);
    }

    #[test]
    fn crop_reads_expected_window() {
        let t = Tensor::<f32>::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| (h * 4 + w) as f32);
        let c = t.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(t.crop(3, 3, 2, 2).is_err());
    }
}
