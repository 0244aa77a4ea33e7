//! Training losses, depth-evaluation metrics and penultimate-tensor
//! similarity maps.
//!
//! The depth loss is the mean squared error over valid ground-truth pixels;
//! the tensor loss is the mean squared difference between student and
//! teacher penultimate activations. Metrics pool pixels across the whole
//! evaluation set and accumulate in f64.

use crate::tensor::{Dims4, Scalar, ShapeError, Tensor4};

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// Per-pixel validity of ground-truth depth (true where depth > 0).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl ValidityMask {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<bool>) -> Result<Self, ShapeError> {
        if data.len() != n * h * w {
            return Err(ShapeError::DataLength {
                dims: Dims4::new(n, 1, h, w),
                len: data.len(),
            });
        }
        Ok(ValidityMask { n, h, w, data })
    }

    pub fn all_valid(n: usize, h: usize, w: usize) -> Self {
        ValidityMask {
            n,
            h,
            w,
            data: vec![true; n * h * w],
        }
    }

    /// Valid wherever the stored depth is strictly positive.
    pub fn from_depth(depth: &Tensor4<f32>) -> Self {
        let d = depth.dims();
        ValidityMask {
            n: d.n,
            h: d.h,
            w: d.w,
            data: depth.data().iter().map(|&v| v > 0.0).collect(),
        }
    }

    pub fn dims(&self) -> Dims4 {
        Dims4::new(self.n, 1, self.h, self.w)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    fn check_against<T: Scalar>(
        &self,
        op: &'static str,
        t: &Tensor4<T>,
    ) -> Result<(), ShapeError> {
        let d = t.dims();
        if d.c != 1 || d.n != self.n || d.h != self.h || d.w != self.w {
            return Err(ShapeError::Mismatch {
                op,
                lhs: d.to_string(),
                rhs: self.dims().to_string(),
            });
        }
        Ok(())
    }
}

/// Mean squared depth error over valid pixels plus its gradient w.r.t. the
/// prediction. The normalizer is the valid-pixel count pooled over the
/// whole batch.
pub fn depth_loss<T: Scalar>(
    pred: &Tensor4<T>,
    gt: &Tensor4<T>,
    mask: &ValidityMask,
) -> Result<(f64, Tensor4<T>), ObjectiveError> {
    if pred.dims() != gt.dims() {
        return Err(ShapeError::Mismatch {
            op: "depth_loss",
            lhs: pred.dims().to_string(),
            rhs: gt.dims().to_string(),
        }
        .into());
    }
    mask.check_against("depth_loss", pred)?;
    let m = mask.count_valid();
    if m == 0 {
        return Err(ObjectiveError::DegenerateInput(
            "depth_loss: no valid pixels in mask".into(),
        ));
    }
    let inv_m = T::from_f64(1.0 / m as f64);
    let two = T::from_f64(2.0);
    let mut loss = 0.0f64;
    let mut grad = vec![T::zero(); pred.dims().len()];
    for ((i, (&p, &g)), &valid) in pred
        .data()
        .iter()
        .zip(gt.data())
        .enumerate()
        .zip(mask.as_slice())
    {
        if valid {
            let d = p - g;
            loss += d.to_f64() * d.to_f64();
            grad[i] = two * d * inv_m;
        }
    }
    let grad = Tensor4::new(pred.dims(), grad)?;
    Ok((loss / m as f64, grad))
}

/// Mean squared difference between student and teacher penultimate tensors
/// over all elements, plus its gradient w.r.t. the student tensor.
pub fn tensor_loss<T: Scalar>(
    student: &Tensor4<T>,
    teacher: &Tensor4<T>,
) -> Result<(f64, Tensor4<T>), ObjectiveError> {
    if student.dims() != teacher.dims() {
        return Err(ShapeError::Mismatch {
            op: "tensor_loss",
            lhs: student.dims().to_string(),
            rhs: teacher.dims().to_string(),
        }
        .into());
    }
    let m = student.dims().len();
    if m == 0 {
        return Err(ObjectiveError::DegenerateInput(
            "tensor_loss: empty tensors".into(),
        ));
    }
    let inv_m = T::from_f64(1.0 / m as f64);
    let two = T::from_f64(2.0);
    let mut loss = 0.0f64;
    let mut grad = vec![T::zero(); m];
    for (i, (&s, &t)) in student.data().iter().zip(teacher.data()).enumerate() {
        let d = s - t;
        loss += d.to_f64() * d.to_f64();
        grad[i] = two * d * inv_m;
    }
    let grad = Tensor4::new(student.dims(), grad)?;
    Ok((loss / m as f64, grad))
}

/// Predictions are clamped to this floor (meters) before logarithms and
/// ratio thresholds; the predictor output is unbounded.
pub const PRED_FLOOR_M: f64 = 1e-3;

/// The six standard depth statistics plus bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rel_abs: f64,
    /// Meters.
    pub rms_lin: f64,
    pub rms_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_pixels: usize,
    pub depth_cap: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "rel_abs,rms_lin,rms_log,delta1,delta2,delta3";

    /// Single CSV row in the fixed evaluation-table column order.
    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.rel_abs, self.rms_lin, self.rms_log, self.delta1, self.delta2, self.delta3
        )
    }
}

/// Pixel-pooled evaluation metrics over valid pixels. With `cap` set,
/// ground-truth depths above the cap are treated as invalid.
pub fn compute_metrics(
    pred: &Tensor4<f32>,
    gt: &Tensor4<f32>,
    mask: &ValidityMask,
    cap: Option<f64>,
) -> Result<MetricsReport, ObjectiveError> {
    if pred.dims() != gt.dims() {
        return Err(ShapeError::Mismatch {
            op: "compute_metrics",
            lhs: pred.dims().to_string(),
            rhs: gt.dims().to_string(),
        }
        .into());
    }
    mask.check_against("compute_metrics", pred)?;

    let mut n = 0usize;
    let mut rel_sum = 0.0f64;
    let mut sq_sum = 0.0f64;
    let mut logsq_sum = 0.0f64;
    let mut inliers = [0usize; 3];
    let thresholds = [1.25f64, 1.25f64 * 1.25, 1.25f64 * 1.25 * 1.25];

    for ((&p, &g), &valid) in pred.data().iter().zip(gt.data()).zip(mask.as_slice()) {
        if !valid {
            continue;
        }
        let g = g as f64;
        if let Some(cap) = cap {
            if g > cap {
                continue;
            }
        }
        let p = p as f64;
        n += 1;
        rel_sum += (p - g).abs() / g;
        sq_sum += (p - g) * (p - g);
        let pc = p.max(PRED_FLOOR_M);
        let dl = pc.ln() - g.ln();
        logsq_sum += dl * dl;
        let ratio = (pc / g).max(g / pc);
        for (k, &t) in thresholds.iter().enumerate() {
            if ratio < t {
                inliers[k] += 1;
            }
        }
    }

    if n == 0 {
        return Err(ObjectiveError::DegenerateInput(
            "compute_metrics: no valid pixels (after capping)".into(),
        ));
    }
    let nf = n as f64;
    Ok(MetricsReport {
        rel_abs: rel_sum / nf,
        rms_lin: (sq_sum / nf).sqrt(),
        rms_log: (logsq_sum / nf).sqrt(),
        delta1: inliers[0] as f64 / nf,
        delta2: inliers[1] as f64 / nf,
        delta3: inliers[2] as f64 / nf,
        n_pixels: n,
        depth_cap: cap,
    })
}

/// Per-pixel Euclidean norm across channels: (n, c, h, w) -> (n, 1, h, w).
pub fn tensor_magnitude_map(t: &Tensor4<f32>) -> Tensor4<f32> {
    let d = t.dims();
    Tensor4::from_fn(Dims4::new(d.n, 1, d.h, d.w), |n, _, y, x| {
        let mut acc = 0.0f64;
        for c in 0..d.c {
            let v = t.at(n, c, y, x) as f64;
            acc += v * v;
        }
        acc.sqrt() as f32
    })
}

/// Per-pixel cosine similarity of the two channel vectors, in [-1, 1].
/// Pixels where either norm is below 1e-8 yield 0.
pub fn tensor_angle_map(
    student: &Tensor4<f32>,
    teacher: &Tensor4<f32>,
) -> Result<Tensor4<f32>, ObjectiveError> {
    if student.dims() != teacher.dims() {
        return Err(ShapeError::Mismatch {
            op: "tensor_angle_map",
            lhs: student.dims().to_string(),
            rhs: teacher.dims().to_string(),
        }
        .into());
    }
    let d = student.dims();
    Ok(Tensor4::from_fn(
        Dims4::new(d.n, 1, d.h, d.w),
        |n, _, y, x| {
            let mut dot = 0.0f64;
            let mut ns = 0.0f64;
            let mut nt = 0.0f64;
            for c in 0..d.c {
                let s = student.at(n, c, y, x) as f64;
                let t = teacher.at(n, c, y, x) as f64;
                dot += s * t;
                ns += s * s;
                nt += t * t;
            }
            let (ns, nt) = (ns.sqrt(), nt.sqrt());
            if ns < 1e-8 || nt < 1e-8 {
                0.0
            } else {
                (dot / (ns * nt)) as f32
            }
        },
    ))
}

/// Mean of a map over all pixels (used by the transfer-fidelity analysis).
pub fn mean_value(map: &Tensor4<f32>) -> f64 {
    let n = map.dims().len();
    if n == 0 {
        return 0.0;
    }
    map.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64
}
