//! Forward passes over a [`NetSpec`]: a pure path that drops intermediates
//! as it goes (inference, benchmarking) and a tape-recorded path for
//! training. Both compose the same kernels, so outputs are bit-identical.

use super::{BlockSpec, NetError, NetSpec};
use crate::tensor::{
    add, concat_channels, conv2d, deconv2d, maxpool2x2, relu, ConvParams, Dims4, Scalar, Tape,
    Tensor4, ValueId,
};

/// Shape record for one block of a traced forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub label: String,
    pub in_dims: Dims4,
    pub out_dims: Dims4,
}

/// Run one block on the pure path, consuming `layers[..]` starting at the
/// block's first layer.
fn run_block<T: Scalar>(
    block: &BlockSpec,
    layers: &[ConvParams<T>],
    x: &Tensor4<T>,
) -> Result<Tensor4<T>, NetError> {
    let y = match block {
        BlockSpec::Downsample { .. } => {
            let conv = conv2d(x, &layers[0])?;
            let (pool, _) = maxpool2x2(x)?;
            relu(&concat_channels(&conv, &pool)?)
        }
        BlockSpec::NonBtl1d { .. } | BlockSpec::NonBtlNd { .. } => {
            let t = relu(&conv2d(x, &layers[0])?);
            let t = relu(&conv2d(&t, &layers[1])?);
            let t = relu(&conv2d(&t, &layers[2])?);
            let t = conv2d(&t, &layers[3])?;
            relu(&add(&t, x)?)
        }
        BlockSpec::Deconv { .. } => deconv2d(x, &layers[0])?,
        BlockSpec::Predictor { .. } => conv2d(x, &layers[0])?,
    };
    Ok(y)
}

/// Pure forward pass: returns (prediction, penultimate, per-block shapes).
pub fn forward_pure<T: Scalar>(
    spec: &NetSpec,
    params: &[ConvParams<T>],
    batch: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Vec<StageShape>), NetError> {
    let mut x = batch.clone();
    let mut trace = Vec::with_capacity(spec.blocks.len());
    let mut penultimate: Option<Tensor4<T>> = None;
    let mut layer_at = 0;
    for block in &spec.blocks {
        let defs = block.layer_defs(0);
        let layers = &params[layer_at..layer_at + defs.len()];
        layer_at += defs.len();
        if matches!(block, BlockSpec::Predictor { .. }) {
            penultimate = Some(x.clone());
        }
        let in_dims = x.dims();
        let y = run_block(block, layers, &x)?;
        trace.push(StageShape {
            label: block.label(),
            in_dims,
            out_dims: y.dims(),
        });
        x = y;
    }
    let penultimate = penultimate.ok_or_else(|| NetError::Config("no predictor block".into()))?;
    Ok((x, penultimate, trace))
}

/// Handles into a tape-recorded forward pass.
pub struct TapeForward<T: Scalar> {
    pub tape: Tape<T>,
    pub input: ValueId,
    /// (kernel, bias) leaf ids per layer, in layer order.
    pub param_ids: Vec<(ValueId, ValueId)>,
    pub prediction: ValueId,
    pub penultimate: ValueId,
}

/// Record a forward pass on a fresh tape, registering every parameter as a
/// leaf so its gradient is available after `backward`.
pub fn forward_on_tape<T: Scalar>(
    spec: &NetSpec,
    params: &[ConvParams<T>],
    batch: Tensor4<T>,
) -> Result<TapeForward<T>, NetError> {
    let mut tape = Tape::new();
    let input = tape.leaf(batch);
    let param_ids: Vec<(ValueId, ValueId)> = params
        .iter()
        .map(|p| {
            let k = tape.leaf(p.kernel.clone());
            let b = tape.bias_leaf(&p.bias);
            (k, b)
        })
        .collect();

    let mut x = input;
    let mut penultimate = None;
    let mut layer_at = 0;
    for block in &spec.blocks {
        let n_layers = block.layer_defs(0).len();
        let ids = &param_ids[layer_at..layer_at + n_layers];
        let cfg: Vec<((usize, usize), (usize, usize))> = params
            [layer_at..layer_at + n_layers]
            .iter()
            .map(|p| (p.stride, p.padding))
            .collect();
        layer_at += n_layers;
        if matches!(block, BlockSpec::Predictor { .. }) {
            penultimate = Some(x);
        }
        x = match block {
            BlockSpec::Downsample { .. } => {
                let conv = tape.conv2d(x, ids[0].0, ids[0].1, cfg[0].0, cfg[0].1)?;
                let pool = tape.maxpool2x2(x)?;
                let cat = tape.concat_channels(conv, pool)?;
                tape.relu(cat)
            }
            BlockSpec::NonBtl1d { .. } | BlockSpec::NonBtlNd { .. } => {
                let t = tape.conv2d(x, ids[0].0, ids[0].1, cfg[0].0, cfg[0].1)?;
                let t = tape.relu(t);
                let t = tape.conv2d(t, ids[1].0, ids[1].1, cfg[1].0, cfg[1].1)?;
                let t = tape.relu(t);
                let t = tape.conv2d(t, ids[2].0, ids[2].1, cfg[2].0, cfg[2].1)?;
                let t = tape.relu(t);
                let t = tape.conv2d(t, ids[3].0, ids[3].1, cfg[3].0, cfg[3].1)?;
                let s = tape.add(t, x)?;
                tape.relu(s)
            }
            BlockSpec::Deconv { .. } => tape.deconv2d(x, ids[0].0, ids[0].1, cfg[0].0, cfg[0].1)?,
            BlockSpec::Predictor { .. } => tape.conv2d(x, ids[0].0, ids[0].1, cfg[0].0, cfg[0].1)?,
        };
    }
    let penultimate = penultimate.ok_or_else(|| NetError::Config("no predictor block".into()))?;
    Ok(TapeForward {
        tape,
        input,
        param_ids,
        prediction: x,
        penultimate,
    })
}
