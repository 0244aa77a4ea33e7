//! Declarative construction of the condensed depth network and its
//! scaled-up teacher variant: block grammar, MSRA initialization, forward
//! passes (pure and tape-recorded), solver-layer transplant and checkpoint
//! serialization.

mod checkpoint;
mod forward;
mod gradcheck;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use forward::{forward_on_tape, forward_pure, StageShape, TapeForward};
pub use gradcheck::grad_check_network;

use std::collections::BTreeSet;

use crate::rng::Rng;
use crate::tensor::{ConvParams, Dims4, ShapeError, Tensor4};

/// One block of the encoder-decoder grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockSpec {
    /// Parallel strided 3x3 convolution (producing `c_out - c_in` channels)
    /// and 2x2 max-pool, channel-concatenated, then ReLU. Halves resolution.
    Downsample { c_in: usize, c_out: usize },
    /// Residual block of factorized 3x1/1x3 convolutions, channel count
    /// unchanged.
    NonBtl1d { c: usize },
    /// Residual block of 3x1/1x3 then Nx1/1xN convolutions, N in {5, 7}.
    NonBtlNd { c: usize, n: usize },
    /// 4x4 stride-2 transposed convolution. Doubles resolution.
    Deconv { c_in: usize, c_out: usize },
    /// Final 3x3 convolution mapping the penultimate channels to one depth
    /// channel (the solver layer).
    Predictor { c_in: usize },
}

/// Whether a layer runs `conv2d` or `deconv2d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

/// Fully resolved shape/config of one parameterized layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerDef {
    pub name: String,
    pub kind: LayerKind,
    /// Conv: (c_out, c_in, kh, kw). Deconv: (c_in, c_out, kh, kw).
    pub kernel_dims: Dims4,
    pub bias_len: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl BlockSpec {
    /// Output channel count of the block.
    pub fn c_out(&self) -> usize {
        match *self {
            BlockSpec::Downsample { c_out, .. } => c_out,
            BlockSpec::NonBtl1d { c } => c,
            BlockSpec::NonBtlNd { c, .. } => c,
            BlockSpec::Deconv { c_out, .. } => c_out,
            BlockSpec::Predictor { .. } => 1,
        }
    }

    pub fn c_in(&self) -> usize {
        match *self {
            BlockSpec::Downsample { c_in, .. } => c_in,
            BlockSpec::NonBtl1d { c } => c,
            BlockSpec::NonBtlNd { c, .. } => c,
            BlockSpec::Deconv { c_in, .. } => c_in,
            BlockSpec::Predictor { c_in } => c_in,
        }
    }

    /// Table-style label, e.g. "Non-btl ND (3x5)".
    pub fn label(&self) -> String {
        match *self {
            BlockSpec::Downsample { .. } => "Downsample (2x2)".into(),
            BlockSpec::NonBtl1d { .. } => "Non-btl 1D (3x3)".into(),
            BlockSpec::NonBtlNd { n, .. } => format!("Non-btl ND (3x{n})"),
            BlockSpec::Deconv { .. } => "Deconv (4x4)".into(),
            BlockSpec::Predictor { .. } => "Conv 2D (3x3)".into(),
        }
    }

    /// The parameterized layers this block instantiates, in forward order.
    pub fn layer_defs(&self, block_idx: usize) -> Vec<LayerDef> {
        let asym = |name: String, c: usize, kh: usize, kw: usize| LayerDef {
            name,
            kind: LayerKind::Conv,
            kernel_dims: Dims4::new(c, c, kh, kw),
            bias_len: c,
            stride: (1, 1),
            padding: ((kh - 1) / 2, (kw - 1) / 2),
        };
        match *self {
            BlockSpec::Downsample { c_in, c_out } => vec![LayerDef {
                name: format!("b{block_idx:02}_down.conv"),
                kind: LayerKind::Conv,
                kernel_dims: Dims4::new(c_out - c_in, c_in, 3, 3),
                bias_len: c_out - c_in,
                stride: (2, 2),
                padding: (1, 1),
            }],
            BlockSpec::NonBtl1d { c } => {
                let base = format!("b{block_idx:02}_nb1d");
                vec![
                    asym(format!("{base}.c0"), c, 3, 1),
                    asym(format!("{base}.c1"), c, 1, 3),
                    asym(format!("{base}.c2"), c, 3, 1),
                    asym(format!("{base}.c3"), c, 1, 3),
                ]
            }
            BlockSpec::NonBtlNd { c, n } => {
                let base = format!("b{block_idx:02}_nbnd{n}");
                vec![
                    asym(format!("{base}.c0"), c, 3, 1),
                    asym(format!("{base}.c1"), c, 1, 3),
                    asym(format!("{base}.c2"), c, n, 1),
                    asym(format!("{base}.c3"), c, 1, n),
                ]
            }
            BlockSpec::Deconv { c_in, c_out } => vec![LayerDef {
                name: format!("b{block_idx:02}_deconv.conv"),
                kind: LayerKind::Deconv,
                kernel_dims: Dims4::new(c_in, c_out, 4, 4),
                bias_len: c_out,
                stride: (2, 2),
                padding: (1, 1),
            }],
            BlockSpec::Predictor { c_in } => vec![LayerDef {
                name: "predictor".into(),
                kind: LayerKind::Conv,
                kernel_dims: Dims4::new(1, c_in, 3, 3),
                bias_len: 1,
                stride: (1, 1),
                padding: (1, 1),
            }],
        }
    }
}

/// Declarative network description: ordered block list plus input
/// resolution and the width multiplier it was generated with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSpec {
    pub blocks: Vec<BlockSpec>,
    pub input_w: usize,
    pub input_h: usize,
    pub width_mult: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("config error: {0}")]
    Config(String),
    #[error("transplant error: teacher predictor {teacher} vs student predictor {student}")]
    Transplant { teacher: String, student: String },
    #[error("unknown layer name: {0}")]
    UnknownLayer(String),
}

impl NetSpec {
    /// Layer definitions for every block, flattened in forward order.
    pub fn layer_defs(&self) -> Vec<LayerDef> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.layer_defs(i))
            .collect()
    }

    /// Distinct layer names (one per kernel/bias pair) in forward order.
    pub fn layer_names(&self) -> Vec<String> {
        self.layer_defs().into_iter().map(|d| d.name).collect()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_w % 8 != 0 || self.input_h % 8 != 0 {
            return Err(NetError::Shape(ShapeError::Invalid {
                op: "netspec",
                msg: format!(
                    "input resolution {}x{} must be divisible by 8",
                    self.input_w, self.input_h
                ),
            }));
        }
        let mut c = 3;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.c_in() != c {
                return Err(NetError::Config(format!(
                    "block {i} ({}) expects {} input channels, got {}",
                    b.label(),
                    b.c_in(),
                    c
                )));
            }
            if let BlockSpec::Downsample { c_in, c_out } = b {
                if c_out <= c_in {
                    return Err(NetError::Config(format!(
                        "downsample block {i} must grow channels ({c_in} -> {c_out})"
                    )));
                }
            }
            if let BlockSpec::NonBtlNd { n, .. } = b {
                if *n != 5 && *n != 7 {
                    return Err(NetError::Config(format!(
                        "non-btl ND kernel extent must be 5 or 7, got {n}"
                    )));
                }
            }
            c = b.c_out();
        }
        match self.blocks.last() {
            Some(BlockSpec::Predictor { .. }) => Ok(()),
            _ => Err(NetError::Config(
                "network must end with the predictor layer".into(),
            )),
        }
    }
}

/// Block list shared by the condensed net and the teacher. `mult` widens
/// every internal channel count and repeats the residual blocks; the
/// penultimate width stays 64 and the predictor shape is unchanged so the
/// solver layer stays transplant-compatible.
fn grammar(mult: usize) -> Vec<BlockSpec> {
    let mut blocks = Vec::new();
    blocks.push(BlockSpec::Downsample {
        c_in: 3,
        c_out: 16 * mult,
    });
    blocks.push(BlockSpec::Downsample {
        c_in: 16 * mult,
        c_out: 64 * mult,
    });
    for _ in 0..4 * mult {
        blocks.push(BlockSpec::NonBtl1d { c: 64 * mult });
    }
    blocks.push(BlockSpec::Downsample {
        c_in: 64 * mult,
        c_out: 128 * mult,
    });
    for _ in 0..2 * mult {
        blocks.push(BlockSpec::NonBtlNd {
            c: 128 * mult,
            n: 5,
        });
    }
    for _ in 0..mult {
        blocks.push(BlockSpec::NonBtlNd {
            c: 128 * mult,
            n: 7,
        });
    }
    blocks.push(BlockSpec::Deconv {
        c_in: 128 * mult,
        c_out: 64 * mult,
    });
    for _ in 0..mult {
        blocks.push(BlockSpec::NonBtl1d { c: 64 * mult });
    }
    blocks.push(BlockSpec::Deconv {
        c_in: 64 * mult,
        c_out: 64 * mult,
    });
    for _ in 0..mult {
        blocks.push(BlockSpec::NonBtl1d { c: 64 * mult });
    }
    // Final upsample pins the penultimate width at 64 for any multiplier.
    blocks.push(BlockSpec::Deconv {
        c_in: 64 * mult,
        c_out: 64,
    });
    blocks.push(BlockSpec::Predictor { c_in: 64 });
    blocks
}

/// Spec of the condensed (student) network for the given input resolution.
pub fn condensed_spec(input_w: usize, input_h: usize) -> NetSpec {
    NetSpec {
        blocks: grammar(1),
        input_w,
        input_h,
        width_mult: 1,
    }
}

/// Spec of the width-2/depth-2 teacher with a transplant-compatible solver
/// layer.
pub fn teacher_spec(input_w: usize, input_h: usize) -> NetSpec {
    NetSpec {
        blocks: grammar(2),
        input_w,
        input_h,
        width_mult: 2,
    }
}

/// Instantiated network: spec, parameters in layer order, frozen-layer set
/// and the seed used at initialization.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetSpec,
    layers: Vec<ConvParams<f32>>,
    frozen: BTreeSet<String>,
    pub seed: u64,
}

/// Outputs of a forward pass: the depth prediction and the 64-channel
/// penultimate activation feeding the solver layer.
#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub prediction: Tensor4<f32>,
    pub penultimate: Tensor4<f32>,
}

fn init_params(spec: &NetSpec, seed: u64) -> Vec<ConvParams<f32>> {
    let mut rng = Rng::new(seed);
    spec.layer_defs()
        .iter()
        .map(|def| {
            let kd = def.kernel_dims;
            // MSRA / He-normal: std = sqrt(2 / fan_in), fan_in counts the
            // inputs feeding one output unit.
            let fan_in = match def.kind {
                LayerKind::Conv => kd.c * kd.h * kd.w,
                LayerKind::Deconv => kd.n * kd.h * kd.w,
            };
            let std = (2.0f32 / fan_in as f32).sqrt();
            let kernel = Tensor4::from_fn(kd, |_, _, _, _| rng.normal_f32(0.0, std));
            ConvParams::new(kernel, vec![0.0; def.bias_len], def.stride, def.padding)
        })
        .collect()
}

fn build(spec: NetSpec, seed: u64) -> Result<Network, NetError> {
    spec.validate()?;
    let layers = init_params(&spec, seed);
    Ok(Network {
        spec,
        layers,
        frozen: BTreeSet::new(),
        seed,
    })
}

/// MSRA-initialized condensed network. Input resolution must be divisible
/// by 8.
pub fn build_condensed(input_w: usize, input_h: usize, seed: u64) -> Result<Network, NetError> {
    build(condensed_spec(input_w, input_h), seed)
}

/// MSRA-initialized teacher network (width multiplier 2, doubled residual
/// depth, penultimate width pinned at 64).
pub fn build_teacher(input_w: usize, input_h: usize, seed: u64) -> Result<Network, NetError> {
    build(teacher_spec(input_w, input_h), seed)
}

impl Network {
    pub(crate) fn from_parts(
        spec: NetSpec,
        layers: Vec<ConvParams<f32>>,
        frozen: BTreeSet<String>,
        seed: u64,
    ) -> Self {
        Network {
            spec,
            layers,
            frozen,
            seed,
        }
    }

    pub fn layers(&self) -> &[ConvParams<f32>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvParams<f32>] {
        &mut self.layers
    }

    pub fn layer_defs(&self) -> Vec<LayerDef> {
        self.spec.layer_defs()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.spec.layer_names().iter().position(|n| n == name)
    }

    pub fn layer_by_name(&self, name: &str) -> Option<&ConvParams<f32>> {
        self.layer_index(name).map(|i| &self.layers[i])
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    /// Replace the frozen-layer set. Unknown names are rejected.
    pub fn set_frozen<S: AsRef<str>>(&mut self, names: &[S]) -> Result<(), NetError> {
        let known = self.spec.layer_names();
        let mut set = BTreeSet::new();
        for n in names {
            let n = n.as_ref();
            if !known.iter().any(|k| k == n) {
                return Err(NetError::UnknownLayer(n.to_string()));
            }
            set.insert(n.to_string());
        }
        self.frozen = set;
        Ok(())
    }

    /// Total number of scalar parameters (kernels plus biases).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|p| p.kernel.dims().len() + p.bias.len())
            .sum()
    }

    /// Parameters converted to f64 for the gradient-check evaluation mode.
    pub fn params_f64(&self) -> Vec<ConvParams<f64>> {
        self.layers.iter().map(|p| p.cast()).collect()
    }

    /// Forward pass. The batch must be (n, 3, input_h, input_w).
    pub fn forward(&self, batch: &Tensor4<f32>) -> Result<ForwardResult, NetError> {
        let d = batch.dims();
        if d.c != 3 || d.h != self.spec.input_h || d.w != self.spec.input_w {
            return Err(NetError::Shape(ShapeError::Mismatch {
                op: "forward",
                lhs: d.to_string(),
                rhs: format!("nx3x{}x{}", self.spec.input_h, self.spec.input_w),
            }));
        }
        let (prediction, penultimate, _) = forward_pure(&self.spec, &self.layers, batch)?;
        Ok(ForwardResult {
            prediction,
            penultimate,
        })
    }

    /// Forward pass returning the per-block stage shapes (used by the
    /// architecture-conformance checks).
    pub fn forward_traced(
        &self,
        batch: &Tensor4<f32>,
    ) -> Result<(ForwardResult, Vec<StageShape>), NetError> {
        let (prediction, penultimate, trace) = forward_pure(&self.spec, &self.layers, batch)?;
        Ok((
            ForwardResult {
                prediction,
                penultimate,
            },
            trace,
        ))
    }
}

/// Copy the teacher's solver layer into the student bit-for-bit and freeze
/// it. All other student parameters are untouched.
pub fn transplant_solver(teacher: &Network, student: &Network) -> Result<Network, NetError> {
    let t_idx = teacher
        .layer_index("predictor")
        .ok_or_else(|| NetError::UnknownLayer("predictor".into()))?;
    let s_idx = student
        .layer_index("predictor")
        .ok_or_else(|| NetError::UnknownLayer("predictor".into()))?;
    let t_pred = &teacher.layers[t_idx];
    let s_pred = &student.layers[s_idx];
    if t_pred.kernel.dims() != s_pred.kernel.dims()
        || t_pred.bias.len() != s_pred.bias.len()
        || t_pred.stride != s_pred.stride
        || t_pred.padding != s_pred.padding
    {
        return Err(NetError::Transplant {
            teacher: t_pred.kernel.dims().to_string(),
            student: s_pred.kernel.dims().to_string(),
        });
    }
    let mut out = student.clone();
    out.layers[s_idx] = t_pred.clone();
    let mut frozen = out.frozen.clone();
    frozen.insert("predictor".to_string());
    out.frozen = frozen;
    Ok(out)
}
