//! Checkpoint serialization.
//!
//! Little-endian binary: magic "CRMW", format version u32, init seed u64,
//! the network spec as length-prefixed canonical text, the frozen-layer set
//! as a length-prefixed name list, then one record per parameter tensor
//! (length-prefixed name, dims as four u32, raw f32 data). Kernels are
//! stored as `<layer>.w`, biases as `<layer>.b` with dims (1, len, 1, 1).
//! Round-trips are bit-exact.

use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BlockSpec, LayerDef, NetSpec, Network};
use crate::tensor::{ConvParams, Dims4, Tensor4};

const MAGIC: &[u8; 4] = b"CRMW";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected CRMW")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint while reading {0}")]
    Truncated(String),
    #[error("malformed spec text: {0}")]
    Spec(String),
    #[error("parameter {name}: stored dims {stored} disagree with spec dims {expected}")]
    ShapeMismatch {
        name: String,
        stored: String,
        expected: String,
    },
    #[error("parameter {0} appears twice")]
    DuplicateParam(String),
    #[error("parameter {0} required by the spec is missing")]
    MissingParam(String),
    #[error("parameter {0} is not part of the spec")]
    UnknownParam(String),
    #[error("frozen layer {0} is not part of the spec")]
    UnknownFrozen(String),
}

/// Canonical one-line-per-block text form of a [`NetSpec`].
pub(crate) fn spec_to_text(spec: &NetSpec) -> String {
    let mut out = String::new();
    out.push_str("cream-net v1\n");
    out.push_str(&format!("input {}x{}\n", spec.input_w, spec.input_h));
    out.push_str(&format!("mult {}\n", spec.width_mult));
    for b in &spec.blocks {
        let line = match *b {
            BlockSpec::Downsample { c_in, c_out } => format!("down {c_in} {c_out}"),
            BlockSpec::NonBtl1d { c } => format!("nb1d {c}"),
            BlockSpec::NonBtlNd { c, n } => format!("nbnd {c} {n}"),
            BlockSpec::Deconv { c_in, c_out } => format!("deconv {c_in} {c_out}"),
            BlockSpec::Predictor { c_in } => format!("pred {c_in}"),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub(crate) fn spec_from_text(text: &str) -> Result<NetSpec, CheckpointError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CheckpointError::Spec("empty".into()))?;
    if header != "cream-net v1" {
        return Err(CheckpointError::Spec(format!("bad header {header:?}")));
    }
    let parse_usize = |s: &str| -> Result<usize, CheckpointError> {
        s.parse()
            .map_err(|_| CheckpointError::Spec(format!("bad integer {s:?}")))
    };
    let input_line = lines
        .next()
        .ok_or_else(|| CheckpointError::Spec("missing input line".into()))?;
    let res = input_line
        .strip_prefix("input ")
        .ok_or_else(|| CheckpointError::Spec(format!("bad input line {input_line:?}")))?;
    let (w, h) = res
        .split_once('x')
        .ok_or_else(|| CheckpointError::Spec(format!("bad resolution {res:?}")))?;
    let (input_w, input_h) = (parse_usize(w)?, parse_usize(h)?);
    let mult_line = lines
        .next()
        .ok_or_else(|| CheckpointError::Spec("missing mult line".into()))?;
    let width_mult = parse_usize(
        mult_line
            .strip_prefix("mult ")
            .ok_or_else(|| CheckpointError::Spec(format!("bad mult line {mult_line:?}")))?,
    )?;
    let mut blocks = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let mut arg = || -> Result<usize, CheckpointError> {
            parse_usize(
                parts
                    .next()
                    .ok_or_else(|| CheckpointError::Spec(format!("missing arg in {line:?}")))?,
            )
        };
        let block = match kind {
            "down" => BlockSpec::Downsample {
                c_in: arg()?,
                c_out: arg()?,
            },
            "nb1d" => BlockSpec::NonBtl1d { c: arg()? },
            "nbnd" => BlockSpec::NonBtlNd {
                c: arg()?,
                n: arg()?,
            },
            "deconv" => BlockSpec::Deconv {
                c_in: arg()?,
                c_out: arg()?,
            },
            "pred" => BlockSpec::Predictor { c_in: arg()? },
            other => return Err(CheckpointError::Spec(format!("unknown block {other:?}"))),
        };
        blocks.push(block);
    }
    Ok(NetSpec {
        blocks,
        input_w,
        input_h,
        width_mult,
    })
}

fn write_bytes<W: Write>(w: &mut W, path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    w.write_all(bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_str<W: Write>(w: &mut W, path: &Path, s: &str) -> Result<(), CheckpointError> {
    write_bytes(w, path, &(s.len() as u32).to_le_bytes())?;
    write_bytes(w, path, s.as_bytes())
}

/// Write a checkpoint. Parameter records follow spec layer order (kernel
/// then bias per layer), so identical networks serialize to identical
/// bytes.
pub fn save_checkpoint(net: &Network, path: &Path) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    write_bytes(&mut w, path, MAGIC)?;
    write_bytes(&mut w, path, &VERSION.to_le_bytes())?;
    write_bytes(&mut w, path, &net.seed.to_le_bytes())?;
    write_str(&mut w, path, &spec_to_text(&net.spec))?;
    write_bytes(&mut w, path, &(net.frozen().len() as u32).to_le_bytes())?;
    for name in net.frozen() {
        write_str(&mut w, path, name)?;
    }
    for (def, params) in net.layer_defs().iter().zip(net.layers()) {
        let kd = params.kernel.dims();
        write_str(&mut w, path, &format!("{}.w", def.name))?;
        for dim in [kd.n, kd.c, kd.h, kd.w] {
            write_bytes(&mut w, path, &(dim as u32).to_le_bytes())?;
        }
        for v in params.kernel.data() {
            write_bytes(&mut w, path, &v.to_le_bytes())?;
        }
        write_str(&mut w, path, &format!("{}.b", def.name))?;
        for dim in [1usize, params.bias.len(), 1, 1] {
            write_bytes(&mut w, path, &(dim as u32).to_le_bytes())?;
        }
        for v in &params.bias {
            write_bytes(&mut w, path, &v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
        self.inner
            .read_exact(buf)
            .map_err(|_| CheckpointError::Truncated(what.to_string()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self, what: &str) -> Result<String, CheckpointError> {
        let len = self.u32(what)? as usize;
        if len > (1 << 24) {
            return Err(CheckpointError::Truncated(format!(
                "{what}: implausible string length {len}"
            )));
        }
        let mut b = vec![0u8; len];
        self.exact(&mut b, what)?;
        String::from_utf8(b).map_err(|_| CheckpointError::Spec(format!("{what}: invalid utf-8")))
    }

    /// Returns None on clean EOF at a record boundary.
    fn maybe_string(&mut self, what: &str) -> Result<Option<String>, CheckpointError> {
        let mut b = [0u8; 4];
        match self.inner.read(&mut b) {
            Ok(0) => return Ok(None),
            Ok(4) => {}
            Ok(n) => {
                let mut rest = vec![0u8; 4 - n];
                self.inner
                    .read_exact(&mut rest)
                    .map_err(|_| CheckpointError::Truncated(what.to_string()))?;
                b[n..].copy_from_slice(&rest);
            }
            Err(_) => return Err(CheckpointError::Truncated(what.to_string())),
        }
        let len = u32::from_le_bytes(b) as usize;
        if len > (1 << 24) {
            return Err(CheckpointError::Truncated(format!(
                "{what}: implausible string length {len}"
            )));
        }
        let mut s = vec![0u8; len];
        self.exact(&mut s, what)?;
        Ok(Some(String::from_utf8(s).map_err(|_| {
            CheckpointError::Spec(format!("{what}: invalid utf-8"))
        })?))
    }
}

/// Load a checkpoint, validating every record against the embedded spec.
pub fn load_checkpoint(path: &Path) -> Result<Network, CheckpointError> {
    let file = std::fs::File::open(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let mut magic = [0u8; 4];
    r.exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let seed = r.u64("seed")?;
    let spec_text = r.string("spec")?;
    let spec = spec_from_text(&spec_text)?;
    let defs: Vec<LayerDef> = spec.layer_defs();

    let n_frozen = r.u32("frozen count")?;
    let mut frozen = BTreeSet::new();
    for _ in 0..n_frozen {
        let name = r.string("frozen name")?;
        if !defs.iter().any(|d| d.name == name) {
            return Err(CheckpointError::UnknownFrozen(name));
        }
        frozen.insert(name);
    }

    // Expected records derived from the spec.
    let mut expected: Vec<(String, Dims4)> = Vec::new();
    for def in &defs {
        expected.push((format!("{}.w", def.name), def.kernel_dims));
        expected.push((format!("{}.b", def.name), Dims4::new(1, def.bias_len, 1, 1)));
    }

    let mut records: Vec<Option<Vec<f32>>> = vec![None; expected.len()];
    while let Some(name) = r.maybe_string("record name")? {
        let mut dims = [0u32; 4];
        for d in dims.iter_mut() {
            *d = r.u32(&format!("{name} dims"))?;
        }
        let stored = Dims4::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize);
        let idx = expected
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| CheckpointError::UnknownParam(name.clone()))?;
        if records[idx].is_some() {
            return Err(CheckpointError::DuplicateParam(name));
        }
        let want = expected[idx].1;
        if stored != want {
            return Err(CheckpointError::ShapeMismatch {
                name,
                stored: stored.to_string(),
                expected: want.to_string(),
            });
        }
        let mut buf = vec![0u8; stored.len() * 4];
        r.exact(&mut buf, &format!("{name} data"))?;
        let data: Vec<f32> = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        records[idx] = Some(data);
    }

    let mut layers: Vec<ConvParams<f32>> = Vec::with_capacity(defs.len());
    for (li, def) in defs.iter().enumerate() {
        let kernel = records[2 * li]
            .take()
            .ok_or_else(|| CheckpointError::MissingParam(format!("{}.w", def.name)))?;
        let bias = records[2 * li + 1]
            .take()
            .ok_or_else(|| CheckpointError::MissingParam(format!("{}.b", def.name)))?;
        let kernel = Tensor4::new(def.kernel_dims, kernel)
            .map_err(|_| CheckpointError::Spec(format!("{}.w data length", def.name)))?;
        layers.push(ConvParams::new(kernel, bias, def.stride, def.padding));
    }

    Ok(Network::from_parts(spec, layers, frozen, seed))
}
