use std::path::PathBuf;

use clap::Parser;
use cream_core::evalbench::{emit_depth_image, write_unit_gray};
use cream_core::net::load_checkpoint;
use cream_core::objectives::{
    compute_metrics, mean_value, tensor_angle_map, tensor_magnitude_map,
};
use cream_core::scenegen::{pnm, Dataset};
use cream_core::tensor::Tensor4;

use super::runtime_error;
use crate::manifest::RunManifest;
use crate::CmdError;

/// Emits the qualitative panel for one sample: the RGB input and
/// ground-truth depth, both networks' predictions, magnitude maps of the
/// penultimate tensors, their angle-correlation map, and the depth-error
/// map. Prints each prediction's RMS error in meters.
#[derive(Parser)]
pub struct Args {
    /// Student checkpoint.
    #[arg(long)]
    pub student: PathBuf,
    /// Teacher checkpoint.
    #[arg(long)]
    pub teacher: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Sample id (e.g. 000070).
    #[arg(long)]
    pub id: String,
    /// Depth used as white in the emitted images; defaults to the dataset's
    /// maximum range.
    #[arg(long)]
    pub max_depth: Option<f64>,
    /// Output directory for the image panel and manifest.txt.
    #[arg(long, default_value = "analyze-out")]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CmdError> {
    let mut manifest = RunManifest::new("analyze");
    manifest.config("student", args.student.display());
    manifest.config("teacher", args.teacher.display());
    manifest.config("data", args.data.display());
    manifest.config("id", &args.id);
    manifest.config("out", args.out.display());
    manifest.input(&args.student)?;
    manifest.input(&args.teacher)?;
    manifest.input(&args.data.join("manifest.csv"))?;

    let student = load_checkpoint(&args.student).map_err(runtime_error)?;
    let teacher = load_checkpoint(&args.teacher).map_err(runtime_error)?;
    let dataset = Dataset::open(&args.data).map_err(runtime_error)?;
    let sample = dataset.load(&args.id).map_err(runtime_error)?;
    let max_depth = args
        .max_depth
        .unwrap_or(dataset.manifest.spec.z_max as f64);

    let s_out = student.forward(&sample.rgb).map_err(runtime_error)?;
    let t_out = teacher.forward(&sample.rgb).map_err(runtime_error)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CmdError::runtime(format!("cannot create {}: {e}", args.out.display())))?;
    let out = |name: &str| args.out.join(name);

    // Row 1: input RGB and ground truth.
    let d = sample.rgb.dims();
    let mut rgb8 = vec![0u8; 3 * d.h * d.w];
    for y in 0..d.h {
        for x in 0..d.w {
            for c in 0..3 {
                rgb8[(y * d.w + x) * 3 + c] =
                    (sample.rgb.at(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    pnm::write_ppm(&out("rgb.ppm"), d.w, d.h, &rgb8).map_err(runtime_error)?;
    emit_depth_image(
        &sample.depth,
        &out("gt_depth.pgm"),
        Some(&out("gt_depth_jet.ppm")),
        max_depth,
    )
    .map_err(runtime_error)?;

    // Row 2: penultimate magnitude maps.
    let t_mag = tensor_magnitude_map(&t_out.penultimate);
    let s_mag = tensor_magnitude_map(&s_out.penultimate);
    let mag_max = t_mag
        .data()
        .iter()
        .chain(s_mag.data())
        .fold(0.0f32, |a, &b| a.max(b))
        .max(1e-6) as f64;
    emit_depth_image(&t_mag, &out("teacher_magnitude.pgm"), None, mag_max).map_err(runtime_error)?;
    emit_depth_image(&s_mag, &out("student_magnitude.pgm"), None, mag_max).map_err(runtime_error)?;

    // Row 3: angle correlation, remapped from [-1, 1] to [0, 1].
    let angle = tensor_angle_map(&s_out.penultimate, &t_out.penultimate).map_err(runtime_error)?;
    let angle_mean = mean_value(&angle);
    let angle01 = angle.map(|v| (v + 1.0) * 0.5);
    write_unit_gray(&angle01, &out("angle_correlation.pgm")).map_err(runtime_error)?;

    // Row 4: predictions and depth-error maps.
    emit_depth_image(
        &s_out.prediction,
        &out("student_pred.pgm"),
        Some(&out("student_pred_jet.ppm")),
        max_depth,
    )
    .map_err(runtime_error)?;
    emit_depth_image(
        &t_out.prediction,
        &out("teacher_pred.pgm"),
        Some(&out("teacher_pred_jet.ppm")),
        max_depth,
    )
    .map_err(runtime_error)?;
    let err_map = |pred: &Tensor4<f32>| {
        Tensor4::from_fn(sample.depth.dims(), |n, c, y, x| {
            let gt = sample.depth.at(n, c, y, x);
            if gt > 0.0 {
                (pred.at(n, c, y, x) - gt).abs()
            } else {
                0.0
            }
        })
    };
    emit_depth_image(&err_map(&s_out.prediction), &out("student_error.pgm"), None, max_depth)
        .map_err(runtime_error)?;
    emit_depth_image(&err_map(&t_out.prediction), &out("teacher_error.pgm"), None, max_depth)
        .map_err(runtime_error)?;

    for name in [
        "rgb.ppm",
        "gt_depth.pgm",
        "gt_depth_jet.ppm",
        "teacher_magnitude.pgm",
        "student_magnitude.pgm",
        "angle_correlation.pgm",
        "student_pred.pgm",
        "student_pred_jet.ppm",
        "teacher_pred.pgm",
        "teacher_pred_jet.ppm",
        "student_error.pgm",
        "teacher_error.pgm",
    ] {
        manifest.output(&out(name));
    }
    manifest.write(&args.out, 0)?;

    let s_rms = compute_metrics(&s_out.prediction, &sample.depth, &sample.mask, None)
        .map_err(runtime_error)?
        .rms_lin;
    let t_rms = compute_metrics(&t_out.prediction, &sample.depth, &sample.mask, None)
        .map_err(runtime_error)?
        .rms_lin;
    println!("student rms: {s_rms:.4} m");
    println!("teacher rms: {t_rms:.4} m");
    println!("mean angle correlation (student vs teacher): {angle_mean:.4}");
    Ok(())
}
