//! Elementwise and channel-stacking kernels: ReLU, residual add, concat.

use super::{require_same_dims, Dims4, Scalar, ShapeError, Tensor4};

/// Elementwise max(0, x).
pub fn relu<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU cotangent; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
) -> Result<Tensor4<T>, ShapeError> {
    require_same_dims("relu_backward", grad_out, input)?;
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::new(input.dims(), data)
}

/// Elementwise sum; dims must match exactly.
pub fn add<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
    require_same_dims("add", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor4::new(a.dims(), data)
}

/// Both inputs receive the cotangent unchanged.
pub fn add_backward<T: Scalar>(grad_out: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>) {
    (grad_out.clone(), grad_out.clone())
}

/// Stack `a` then `b` along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
    let (da, db) = (a.dims(), b.dims());
    if da.n != db.n || da.h != db.h || da.w != db.w {
        return Err(ShapeError::Mismatch {
            op: "concat_channels",
            lhs: da.to_string(),
            rhs: db.to_string(),
        });
    }
    let out_dims = Dims4::new(da.n, da.c + db.c, da.h, da.w);
    let mut data = Vec::with_capacity(out_dims.len());
    for n in 0..da.n {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    Tensor4::new(out_dims, data)
}

/// Split the cotangent of a concat back into the two channel groups.
pub fn concat_channels_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    c_a: usize,
) -> Result<(Tensor4<T>, Tensor4<T>), ShapeError> {
    let d = grad_out.dims();
    if c_a >= d.c {
        return Err(ShapeError::Invalid {
            op: "concat_channels_backward",
            msg: format!("split at channel {c_a} of {}", d.c),
        });
    }
    let ga = slice_channels(grad_out, 0, c_a);
    let gb = slice_channels(grad_out, c_a, d.c);
    Ok((ga, gb))
}

/// Copy channels [c0, c1) into a new tensor.
pub fn slice_channels<T: Scalar>(t: &Tensor4<T>, c0: usize, c1: usize) -> Tensor4<T> {
    let d = t.dims();
    assert!(c0 <= c1 && c1 <= d.c);
    let hw = d.h * d.w;
    let out_dims = Dims4::new(d.n, c1 - c0, d.h, d.w);
    let mut data = Vec::with_capacity(out_dims.len());
    for n in 0..d.n {
        let sample = t.sample(n);
        data.extend_from_slice(&sample[c0 * hw..c1 * hw]);
    }
    Tensor4::new(out_dims, data).expect("sliced dims are consistent")
}
