//! 2x2 stride-2 max pooling with recorded argmax indices.

use super::{Dims4, Scalar, ShapeError, Tensor4};

/// 2x2 stride-2 max pool. Ties break to the first element in row-major scan
/// order. Returns the pooled tensor and, per output element, the flat index
/// of the winning input element.
pub fn maxpool2x2<T: Scalar>(input: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>), ShapeError> {
    let d = input.dims();
    if d.h % 2 != 0 || d.w % 2 != 0 {
        return Err(ShapeError::OddSpatial {
            op: "maxpool2x2",
            input: d,
        });
    }
    let (oh, ow) = (d.h / 2, d.w / 2);
    let out_dims = Dims4::new(d.n, d.c, oh, ow);
    let mut out = Vec::with_capacity(out_dims.len());
    let mut argmax = Vec::with_capacity(out_dims.len());
    let data = input.data();
    for n in 0..d.n {
        for c in 0..d.c {
            let base = (n * d.c + c) * d.h * d.w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = base + (2 * oy) * d.w + 2 * ox;
                    let i01 = i00 + 1;
                    let i10 = i00 + d.w;
                    let i11 = i10 + 1;
                    let mut best = i00;
                    if data[i01] > data[best] {
                        best = i01;
                    }
                    if data[i10] > data[best] {
                        best = i10;
                    }
                    if data[i11] > data[best] {
                        best = i11;
                    }
                    out.push(data[best]);
                    argmax.push(best as u32);
                }
            }
        }
    }
    Ok((Tensor4::new(out_dims, out)?, argmax))
}

/// Routes the cotangent back to the recorded argmax positions.
pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input_dims: Dims4,
    argmax: &[u32],
) -> Result<Tensor4<T>, ShapeError> {
    if grad_out.dims().len() != argmax.len() {
        return Err(ShapeError::Mismatch {
            op: "maxpool2x2_backward",
            lhs: grad_out.dims().to_string(),
            rhs: format!("{} argmax entries", argmax.len()),
        });
    }
    let mut grad_input = Tensor4::zeros(input_dims);
    let gi = grad_input.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gi[idx as usize] += g;
    }
    Ok(grad_input)
}
