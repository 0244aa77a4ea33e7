//! Model evaluation, forward-pass FPS benchmarking, trajectory error and
//! image emission.

mod ate;

pub use ate::{ate, AlignMode, Pose, Trajectory};

use std::path::Path;
use std::time::Instant;

use crate::net::{NetError, Network};
use crate::objectives::{compute_metrics, MetricsReport, ObjectiveError, ValidityMask};
use crate::rng::Rng;
use crate::runtime;
use crate::scenegen::{pnm, DataError, Dataset, DepthSample, Split};
use crate::tensor::{Dims4, ShapeError, Tensor4};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Pnm(#[from] pnm::PnmError),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Anything that maps an RGB-D sample to a depth prediction. Implemented by
/// [`Network`]; test oracles implement it directly.
pub trait DepthPredictor: Sync {
    fn predict(&self, sample: &DepthSample) -> Result<Tensor4<f32>, EvalError>;
}

impl DepthPredictor for Network {
    fn predict(&self, sample: &DepthSample) -> Result<Tensor4<f32>, EvalError> {
        Ok(self.forward(&sample.rgb)?.prediction)
    }
}

/// Pooled metrics over a split plus the per-sample breakdown (samples left
/// degenerate by capping are skipped in the breakdown).
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub pooled: MetricsReport,
    pub per_sample: Vec<(String, MetricsReport)>,
}

impl EvalOutcome {
    /// CSV with one row per sample plus a final pooled row.
    pub fn per_sample_csv(&self) -> String {
        let mut out = format!("id,{}\n", MetricsReport::CSV_HEADER);
        for (id, m) in &self.per_sample {
            out.push_str(&format!("{id},{}\n", m.csv_row()));
        }
        out.push_str(&format!("pooled,{}\n", self.pooled.csv_row()));
        out
    }
}

/// Run the predictor on every sample of the split and pool pixels across
/// the whole set. Evaluation does not mutate the predictor.
pub fn evaluate_model<P: DepthPredictor>(
    predictor: &P,
    dataset: &Dataset,
    split: Split,
    cap: Option<f64>,
) -> Result<EvalOutcome, EvalError> {
    let ids = dataset.ids(split);
    if ids.is_empty() {
        return Err(EvalError::Degenerate(format!(
            "split {} is empty",
            split.as_str()
        )));
    }
    let (w, h) = dataset.resolution();

    let results: Vec<Result<(Tensor4<f32>, Tensor4<f32>, Vec<bool>), EvalError>> =
        runtime::par_map(ids.len(), |i| {
            let sample = dataset.load(&ids[i])?;
            let pred = predictor.predict(&sample)?;
            if pred.dims() != sample.depth.dims() {
                return Err(EvalError::Shape(ShapeError::Mismatch {
                    op: "evaluate_model",
                    lhs: pred.dims().to_string(),
                    rhs: sample.depth.dims().to_string(),
                }));
            }
            Ok((pred, sample.depth, sample.mask.as_slice().to_vec()))
        });

    let mut preds = Vec::with_capacity(ids.len() * h * w);
    let mut gts = Vec::with_capacity(ids.len() * h * w);
    let mut masks = Vec::with_capacity(ids.len() * h * w);
    let mut per_sample = Vec::new();
    for (id, result) in ids.iter().zip(results) {
        let (pred, gt, mask_bits) = result?;
        let mask = ValidityMask::new(1, h, w, mask_bits.clone()).expect("mask dims");
        if let Ok(m) = compute_metrics(&pred, &gt, &mask, cap) {
            per_sample.push((id.clone(), m));
        }
        preds.extend_from_slice(pred.data());
        gts.extend_from_slice(gt.data());
        masks.extend(mask_bits);
    }

    let n = ids.len();
    let pred = Tensor4::new(Dims4::new(n, 1, h, w), preds).expect("pred dims");
    let gt = Tensor4::new(Dims4::new(n, 1, h, w), gts).expect("gt dims");
    let mask = ValidityMask::new(n, h, w, masks).expect("mask dims");
    let pooled = compute_metrics(&pred, &gt, &mask, cap).map_err(|e| match e {
        ObjectiveError::DegenerateInput(msg) => EvalError::Degenerate(msg),
        other => other.into(),
    })?;
    Ok(EvalOutcome { pooled, per_sample })
}

/// The four benchmark resolutions, widest first.
pub const BENCH_RESOLUTIONS: [(usize, usize); 4] = [(640, 480), (320, 240), (640, 192), (320, 96)];

/// FPS statistics for one resolution.
#[derive(Clone, Debug)]
pub struct BenchResult {
    pub width: usize,
    pub height: usize,
    pub runs: usize,
    pub fps_avg: f64,
    pub fps_min: f64,
    pub fps_max: f64,
    pub latencies_ms: Vec<f64>,
}

impl BenchResult {
    pub const CSV_HEADER: &'static str = "width,height,runs,fps_avg,fps_min,fps_max";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.3}",
            self.width, self.height, self.runs, self.fps_avg, self.fps_min, self.fps_max
        )
    }

    /// Table-style "avg (min, max)" cell.
    pub fn table_cell(&self) -> String {
        format!(
            "{:.2} ({:.2}, {:.2})",
            self.fps_avg, self.fps_min, self.fps_max
        )
    }
}

/// Time single-image forward passes at the given resolution: `warmup`
/// untimed iterations, then exactly `runs` timed ones on a monotonic clock.
/// Timing covers the forward pass only (no file IO) and runs on the
/// sequential reference path so numbers are comparable across machines.
pub fn benchmark_fps(
    net: &Network,
    width: usize,
    height: usize,
    runs: usize,
    warmup: usize,
) -> Result<BenchResult, EvalError> {
    if runs == 0 {
        return Err(EvalError::Degenerate("runs must be positive".into()));
    }
    let bench_net = net.with_resolution(width, height)?;
    let mut rng = Rng::new(0xBE11C);
    let input = Tensor4::from_fn(Dims4::new(1, 3, height, width), |_, _, _, _| rng.next_f32());

    let _guard = runtime::sequential_scope();
    for _ in 0..warmup {
        let _ = bench_net.forward(&input)?;
    }
    let mut latencies_ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        let out = bench_net.forward(&input)?;
        let dt = t0.elapsed().as_secs_f64();
        latencies_ms.push(dt * 1e3);
        debug_assert!(out.prediction.dims().h == height);
    }
    let total_s: f64 = latencies_ms.iter().sum::<f64>() / 1e3;
    let fps: Vec<f64> = latencies_ms.iter().map(|ms| 1e3 / ms).collect();
    Ok(BenchResult {
        width,
        height,
        runs,
        fps_avg: runs as f64 / total_s,
        fps_min: fps.iter().cloned().fold(f64::INFINITY, f64::min),
        fps_max: fps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        latencies_ms,
    })
}

/// Normalize by `max_value` and write an 8-bit grayscale PGM; non-positive
/// (invalid) pixels render black. Optionally also writes a jet-colormapped
/// PPM.
pub fn emit_depth_image(
    map: &Tensor4<f32>,
    gray_path: &Path,
    jet_path: Option<&Path>,
    max_value: f64,
) -> Result<(), EvalError> {
    let d = map.dims();
    if d.n != 1 || d.c != 1 {
        return Err(EvalError::Shape(ShapeError::Mismatch {
            op: "emit_depth_image",
            lhs: d.to_string(),
            rhs: "1x1xhxw".into(),
        }));
    }
    if max_value <= 0.0 || map.data().iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Degenerate(
            "emit_depth_image requires finite values and a positive max".into(),
        ));
    }
    let gray: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                0
            } else {
                ((v as f64 / max_value).clamp(0.0, 1.0) * 255.0).round() as u8
            }
        })
        .collect();
    pnm::write_pgm8(gray_path, d.w, d.h, &gray)?;
    if let Some(jet_path) = jet_path {
        let mut rgb = Vec::with_capacity(3 * d.h * d.w);
        for (&v, &g) in map.data().iter().zip(&gray) {
            if v <= 0.0 {
                rgb.extend_from_slice(&[0, 0, 0]);
            } else {
                rgb.extend_from_slice(&jet(g as f64 / 255.0));
            }
        }
        pnm::write_ppm(jet_path, d.w, d.h, &rgb)?;
    }
    Ok(())
}

/// Write a grayscale PGM of values already normalized to [0, 1] (used for
/// signed maps like angle correlation after remapping).
pub fn write_unit_gray(map: &Tensor4<f32>, path: &Path) -> Result<(), EvalError> {
    let d = map.dims();
    let gray: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| ((v as f64).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    pnm::write_pgm8(path, d.w, d.h, &gray)?;
    Ok(())
}

/// Classic jet colormap.
pub fn jet(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let seg = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    let r = seg(1.5 - (4.0 * t - 3.0).abs());
    let g = seg(1.5 - (4.0 * t - 2.0).abs());
    let b = seg(1.5 - (4.0 * t - 1.0).abs());
    [r, g, b]
}

impl Network {
    /// Same parameters bound to a different input resolution (the network
    /// is fully convolutional, so weights are resolution-independent).
    pub fn with_resolution(&self, width: usize, height: usize) -> Result<Network, NetError> {
        let mut spec = self.spec.clone();
        spec.input_w = width;
        spec.input_h = height;
        spec.validate()?;
        Ok(Network::from_parts(
            spec,
            self.layers().to_vec(),
            self.frozen().clone(),
            self.seed,
        ))
    }
}
