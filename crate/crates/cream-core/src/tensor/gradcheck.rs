//! Central-difference gradient checking (64-bit evaluation mode).

use super::Tensor4;
use crate::rng::Rng;
use crate::runtime;

/// One differentiable input to check: its value, the analytic gradient
/// produced by the implementation under test, and optional per-element skip
/// flags for known nondifferentiable points (e.g. ReLU at exactly 0).
pub struct CheckedInput {
    pub name: String,
    pub value: Tensor4<f64>,
    pub analytic: Vec<f64>,
    pub skip: Option<Vec<bool>>,
}

/// Outcome of a gradient check. Always produced; `passed` compares the worst
/// relative error against the requested tolerance.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input name, element index) of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub compared: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        return 0.0;
    }
    (analytic - numeric).abs() / scale.max(1e-8)
}

/// Compare analytic gradients against central finite differences of the
/// scalar objective `f`.
///
/// Every element of every input is checked unless `max_coords_per_tensor`
/// caps the count, in which case a deterministic sample (seeded by
/// `sample_seed`) is drawn per tensor. Coordinates are evaluated in
/// parallel; each evaluation perturbs a private copy of one input tensor.
pub fn grad_check_fn<F>(
    f: F,
    inputs: &[CheckedInput],
    eps: f64,
    tol: f64,
    max_coords_per_tensor: Option<usize>,
    sample_seed: u64,
) -> GradCheckReport
where
    F: Fn(&[&Tensor4<f64>]) -> f64 + Sync,
{
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for (ti, input) in inputs.iter().enumerate() {
        let len = input.value.dims().len();
        assert_eq!(input.analytic.len(), len, "analytic gradient length");
        let take = max_coords_per_tensor.unwrap_or(len).min(len);
        let coords: Vec<usize> = if take >= len {
            (0..len).collect()
        } else {
            let mut order: Vec<usize> = (0..len).collect();
            let mut rng = Rng::substream(sample_seed, ti as u64);
            for i in 0..take {
                let j = rng.range_usize(i, len);
                order.swap(i, j);
            }
            order.truncate(take);
            order
        };
        for ei in coords {
            if input
                .skip
                .as_ref()
                .map(|s| s[ei])
                .unwrap_or(false)
            {
                continue;
            }
            jobs.push((ti, ei));
        }
    }

    let base: Vec<&Tensor4<f64>> = inputs.iter().map(|i| &i.value).collect();
    let errors: Vec<f64> = runtime::par_map(jobs.len(), |j| {
        let (ti, ei) = jobs[j];
        let mut perturbed = inputs[ti].value.clone();

        perturbed.data_mut()[ei] += eps;
        let plus = {
            let mut views = base.clone();
            views[ti] = &perturbed;
            f(&views)
        };

        perturbed.data_mut()[ei] -= 2.0 * eps;
        let minus = {
            let mut views = base.clone();
            views[ti] = &perturbed;
            f(&views)
        };

        let numeric = (plus - minus) / (2.0 * eps);
        relative_error(inputs[ti].analytic[ei], numeric)
    });

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        compared: errors.len(),
        tol,
    };
    for (j, &err) in errors.iter().enumerate() {
        if err > report.max_rel_err {
            let (ti, ei) = jobs[j];
            report.max_rel_err = err;
            report.worst = Some((inputs[ti].name.clone(), ei));
        }
    }
    report
}
