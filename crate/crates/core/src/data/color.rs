use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// BT.601 studio-swing luminance, `Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255`.
pub fn rgb_to_y<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::dim("rgb_to_y", format!("expected 3 channels, got {s:?}")));
    }
    Ok(Tensor::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, y, x| {
        let (r, g, b) = (img.get(n, 0, y, x).as_f64(), img.get(n, 1, y, x).as_f64(), img.get(n, 2, y, x).as_f64());
        T::from_f64((16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0)
    }))
}

/// Clamp to `[0, 1]` and round to the nearest 8-bit level.
pub fn quantize<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    img.map(|v| T::from_f64((v.as_f64().clamp(0.0, 1.0) * 255.0).round() / 255.0))
}
