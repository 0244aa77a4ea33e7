//! Bias-corrected Adam with per-layer frozen-parameter support.

use super::TrainError;
use crate::net::Network;

/// Per-layer gradient buffers matching the layer's kernel and bias.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

struct Moments {
    mk: Vec<f32>,
    vk: Vec<f32>,
    mb: Vec<f32>,
    vb: Vec<f32>,
}

/// First/second-moment buffers mirroring a network's parameters plus the
/// step counter.
pub struct OptimState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<Moments>,
}

impl OptimState {
    pub fn new(net: &Network) -> Self {
        let moments = net
            .layers()
            .iter()
            .map(|p| Moments {
                mk: vec![0.0; p.kernel.dims().len()],
                vk: vec![0.0; p.kernel.dims().len()],
                mb: vec![0.0; p.bias.len()],
                vb: vec![0.0; p.bias.len()],
            })
            .collect();
        OptimState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

fn update_buffer(
    params: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    beta1: f32,
    beta2: f32,
    eps: f32,
    lr: f32,
    c1: f32,
    c2: f32,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] * c1;
        let v_hat = v[i] * c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One optimizer step. `grads[i]` must be `None` exactly for frozen layers;
/// their parameters and moment buffers stay untouched. Non-finite gradients
/// abort with a diagnostic naming the layer.
pub fn adam_step(
    net: &mut Network,
    grads: &[Option<LayerGrads>],
    state: &mut OptimState,
    lr: f64,
) -> Result<(), TrainError> {
    assert_eq!(grads.len(), net.layers().len());
    let defs = net.layer_defs();
    for (def, g) in defs.iter().zip(grads) {
        if let Some(g) = g {
            if g.kernel.iter().any(|v| !v.is_finite()) || g.bias.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGrad {
                    layer: def.name.clone(),
                });
            }
        }
    }

    state.t += 1;
    let c1 = (1.0 / (1.0 - state.beta1.powi(state.t as i32))) as f32;
    let c2 = (1.0 / (1.0 - state.beta2.powi(state.t as i32))) as f32;
    let (beta1, beta2, eps, lr) = (
        state.beta1 as f32,
        state.beta2 as f32,
        state.eps as f32,
        lr as f32,
    );

    for (li, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let moments = &mut state.moments[li];
        let layer = &mut net.layers_mut()[li];
        update_buffer(
            layer.kernel.data_mut(),
            &g.kernel,
            &mut moments.mk,
            &mut moments.vk,
            beta1,
            beta2,
            eps,
            lr,
            c1,
            c2,
        );
        update_buffer(
            &mut layer.bias,
            &g.bias,
            &mut moments.mb,
            &mut moments.vb,
            beta1,
            beta2,
            eps,
            lr,
            c1,
            c2,
        );
    }
    Ok(())
}
