//! Whole-network gradient check in the 64-bit evaluation mode.

use super::{forward_on_tape, forward_pure, Network};
use crate::rng::Rng;
use crate::tensor::{grad_check_fn, CheckedInput, ConvParams, Dims4, GradCheckReport, Tensor4};

/// Compare the tape-computed gradients of a scalar objective (a fixed
/// random weighting of the prediction) against central finite differences.
///
/// Checks the input and every parameter tensor. For large tensors at most
/// `max_coords_per_tensor` deterministic sample coordinates are compared;
/// pass `None` to check everything.
pub fn grad_check_network(
    net: &Network,
    input: &Tensor4<f32>,
    eps: f64,
    tol: f64,
    max_coords_per_tensor: Option<usize>,
) -> GradCheckReport {
    let params64: Vec<ConvParams<f64>> = net.params_f64();
    let input64: Tensor4<f64> = input.cast();
    let spec = net.spec.clone();

    // Fixed random cotangent defines the scalar objective.
    let mut rng = Rng::new(net.seed ^ 0x9E3779B97F4A7C15);
    let d = input.dims();
    let (oh, ow) = (spec.input_h, spec.input_w);
    let out_dims = Dims4::new(d.n, 1, oh, ow);
    let weights: Vec<f64> = (0..out_dims.len()).map(|_| rng.normal()).collect();

    // Analytic gradients via one tape backward.
    let mut fwd = forward_on_tape(&spec, &params64, input64.clone()).expect("tape forward");
    let seed_grad = Tensor4::new(out_dims, weights.clone()).expect("seed dims");
    fwd.tape.backward(fwd.prediction, &seed_grad).expect("backward");

    let mut inputs: Vec<CheckedInput> = Vec::new();
    inputs.push(CheckedInput {
        name: "input".into(),
        value: input64.clone(),
        analytic: fwd.tape.grad(fwd.input).expect("input grad").to_vec(),
        skip: None,
    });
    let defs = net.layer_defs();
    for (li, (kid, bid)) in fwd.param_ids.iter().enumerate() {
        inputs.push(CheckedInput {
            name: format!("{}.w", defs[li].name),
            value: params64[li].kernel.clone(),
            analytic: fwd
                .tape
                .grad(*kid)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; params64[li].kernel.dims().len()]),
            skip: None,
        });
        let bias_t = Tensor4::new(
            Dims4::new(1, params64[li].bias.len(), 1, 1),
            params64[li].bias.clone(),
        )
        .expect("bias dims");
        inputs.push(CheckedInput {
            name: format!("{}.b", defs[li].name),
            value: bias_t,
            analytic: fwd
                .tape
                .grad(*bid)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; params64[li].bias.len()]),
            skip: None,
        });
    }

    // Objective closure: views are [input, layer0.w, layer0.b, layer1.w, ...].
    let weights_ref = &weights;
    let base_params = &params64;
    let spec_ref = &spec;
    grad_check_fn(
        move |views: &[&Tensor4<f64>]| {
            let input = views[0];
            let params: Vec<ConvParams<f64>> = base_params
                .iter()
                .enumerate()
                .map(|(li, p)| ConvParams {
                    kernel: views[1 + 2 * li].clone(),
                    bias: views[2 + 2 * li].data().to_vec(),
                    stride: p.stride,
                    padding: p.padding,
                })
                .collect();
            let (pred, _, _) = forward_pure(spec_ref, &params, input).expect("forward");
            pred.data()
                .iter()
                .zip(weights_ref)
                .map(|(a, b)| a * b)
                .sum()
        },
        &inputs,
        eps,
        tol,
        max_coords_per_tensor,
        net.seed,
    )
}
