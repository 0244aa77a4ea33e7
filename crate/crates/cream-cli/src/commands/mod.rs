pub mod analyze;
pub mod ate;
pub mod bench;
pub mod eval;
pub mod gen_data;
pub mod train;

use crate::CmdError;
use cream_core::trainer::TrainError;

/// "WxH" -> (width, height).
pub fn parse_resolution(s: &str) -> Result<(usize, usize), CmdError> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| CmdError::usage(format!("bad resolution {s:?}, expected WxH")))?;
    let w = w
        .parse()
        .map_err(|_| CmdError::usage(format!("bad width in {s:?}")))?;
    let h = h
        .parse()
        .map_err(|_| CmdError::usage(format!("bad height in {s:?}")))?;
    Ok((w, h))
}

pub fn train_error(e: TrainError) -> CmdError {
    match e {
        TrainError::Config(_) => CmdError::usage(e.to_string()),
        other => CmdError::runtime(other.to_string()),
    }
}

pub fn runtime_error(e: impl std::fmt::Display) -> CmdError {
    CmdError::runtime(e.to_string())
}
