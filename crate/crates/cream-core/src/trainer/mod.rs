//! Training: Adam, the learning-rate schedule, and the four knowledge
//! transfer regimes.
//!
//! - `R`: condensed net from MSRA init, depth loss throughout.
//! - `T`: tensor loss against the frozen teacher's penultimate activations
//!   until the validation stop rule (or the epoch cap), then the whole
//!   network fine-tunes on the depth loss for the remaining budget.
//! - `TR`: teacher solver layer transplanted into a fresh student and
//!   frozen; every other layer trains on the depth loss.
//! - `T+TR`: a fixed tensor-loss phase, then transplant, then a short
//!   depth-loss fine-tune with the solver frozen.
//!
//! Each phase restarts the learning-rate schedule and optimizer state (the
//! fine-tune stages are separate training runs in effect); history records
//! carry phase-local epoch indices so `lr == lr_schedule(epoch)` holds row
//! by row. Teacher activations are precomputed once per run since the
//! teacher never receives gradients.

mod adam;

pub use adam::{adam_step, LayerGrads, OptimState};

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::net::{
    build_condensed, build_teacher, forward_on_tape, load_checkpoint, save_checkpoint,
    transplant_solver, CheckpointError, NetError, Network,
};
use crate::objectives::{
    compute_metrics, depth_loss, tensor_loss, MetricsReport, ObjectiveError, ValidityMask,
};
use crate::rng::Rng;
use crate::scenegen::{assemble_batch, Batch, DataError, Dataset, Split};
use crate::tensor::{Dims4, Tensor4};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite gradient in layer {layer}; training aborted")]
    NonFiniteGrad { layer: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Shape(#[from] crate::tensor::ShapeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Knowledge-transfer regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    R,
    T,
    Tr,
    TTr,
}

impl Regime {
    pub fn parse(s: &str) -> Option<Regime> {
        match s.to_ascii_lowercase().as_str() {
            "r" => Some(Regime::R),
            "t" => Some(Regime::T),
            "tr" => Some(Regime::Tr),
            "t+tr" | "t_tr" | "ttr" => Some(Regime::TTr),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::R => "r",
            Regime::T => "t",
            Regime::Tr => "tr",
            Regime::TTr => "t+tr",
        }
    }

    pub fn needs_teacher(&self) -> bool {
        !matches!(self, Regime::R)
    }
}

/// Which loss drives the current phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Tensor,
    Depth,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Tensor => "tensor",
            Phase::Depth => "depth",
        }
    }
}

/// Which architecture to instantiate for the trainee.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetArch {
    Condensed,
    Teacher,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub regime: Regime,
    pub arch: NetArch,
    pub base_lr: f64,
    pub halve_every: u32,
    pub batch_size: usize,
    /// Total epoch budget for R, T and TR.
    pub epochs: u32,
    /// Tensor-phase cap (T) / exact tensor-phase length (T+TR).
    pub tensor_phase_epochs: u32,
    /// Depth fine-tune length after transplant (T+TR only).
    pub finetune_epochs: u32,
    /// Tensor-phase stop rule: relative improvement threshold and how many
    /// consecutive sub-threshold epochs end the phase.
    pub tensor_stop_rel: f64,
    pub tensor_stop_patience: u32,
    pub seed: u64,
    pub teacher_ckpt: Option<PathBuf>,
    /// Per-epoch checkpoints plus `best.crmw` are written here if set.
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(regime: Regime, seed: u64) -> Self {
        TrainConfig {
            regime,
            arch: NetArch::Condensed,
            base_lr: 1e-4,
            halve_every: 2,
            batch_size: 12,
            epochs: 30,
            tensor_phase_epochs: 20,
            finetune_epochs: 5,
            tensor_stop_rel: 0.01,
            tensor_stop_patience: 3,
            seed,
            teacher_ckpt: None,
            out_dir: None,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.halve_every == 0 {
            return Err(TrainError::Config("halve_every must be positive".into()));
        }
        if self.regime.needs_teacher() && self.teacher_ckpt.is_none() {
            return Err(TrainError::Config(format!(
                "regime {} requires a teacher checkpoint",
                self.regime.as_str()
            )));
        }
        if !self.regime.needs_teacher() && self.teacher_ckpt.is_some() {
            // Harmless, but almost certainly a mistake worth flagging.
            return Err(TrainError::Config(
                "regime r does not take a teacher checkpoint".into(),
            ));
        }
        if self.arch == NetArch::Teacher && self.regime != Regime::R {
            return Err(TrainError::Config(
                "the teacher itself can only be trained with regime r".into(),
            ));
        }
        Ok(())
    }
}

/// lr(epoch) with the standard halving schedule.
pub fn lr_schedule_with(epoch: u32, base_lr: f64, halve_every: u32) -> f64 {
    base_lr * 0.5f64.powi((epoch / halve_every) as i32)
}

/// The default schedule: 1e-4 halved every 2 epochs.
pub fn lr_schedule(epoch: u32) -> f64 {
    lr_schedule_with(epoch, 1e-4, 2)
}

/// One history row per epoch. `epoch` is phase-local and drives the
/// schedule; rows appear in execution order with their phase tag.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: u32,
    pub phase: Phase,
    pub lr: f64,
    pub train_loss: f64,
    pub val: MetricsReport,
    pub val_tensor_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Every batch's training loss in execution order.
    pub batch_losses: Vec<f64>,
    /// Instrumentation: depth-loss evaluations made during a tensor phase
    /// (must stay 0; the tensor phase never consults depth error).
    pub depth_loss_calls_tensor_phase: u64,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str =
        "epoch,phase,lr,train_loss,rel_abs,rms_lin,rms_log,delta1,delta2,delta3,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{:e},{:.6},{},{:.3}\n",
                r.epoch,
                r.phase.as_str(),
                r.lr,
                r.train_loss,
                r.val.csv_row(),
                r.seconds
            ));
        }
        out
    }
}

pub fn write_history_csv(history: &TrainHistory, path: &Path) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(history.to_csv().as_bytes())
        .map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Per-sample teacher penultimate activations, precomputed once.
type PenultCache = HashMap<String, Tensor4<f32>>;

struct Session<'a> {
    config: &'a TrainConfig,
    dataset: &'a Dataset,
    net: Network,
    cache: Option<PenultCache>,
    history: TrainHistory,
    global_epoch: u32,
    best_rms: f64,
}

impl Session<'_> {
    fn build_cache(&mut self, teacher: &Network) -> Result<(), TrainError> {
        let mut ids = self.dataset.ids(Split::Train);
        ids.extend(self.dataset.ids(Split::Test));
        let mut cache = PenultCache::with_capacity(ids.len());
        for chunk in ids.chunks(self.config.batch_size.max(1)) {
            let batch = assemble_batch(self.dataset, chunk)?;
            let out = teacher.forward(&batch.rgb)?;
            for (i, id) in chunk.iter().enumerate() {
                cache.insert(id.clone(), out.penultimate.sample_tensor(i));
            }
        }
        self.cache = Some(cache);
        Ok(())
    }

    fn penult_targets(&self, ids: &[String]) -> Result<Tensor4<f32>, TrainError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| TrainError::Config("tensor phase without teacher cache".into()))?;
        let mut data = Vec::new();
        let mut dims = None;
        for id in ids {
            let t = cache
                .get(id)
                .ok_or_else(|| TrainError::Config(format!("no cached activations for {id}")))?;
            dims = Some(t.dims());
            data.extend_from_slice(t.data());
        }
        let d = dims.ok_or_else(|| TrainError::Config("empty batch".into()))?;
        Ok(Tensor4::new(Dims4::new(ids.len(), d.c, d.h, d.w), data).expect("target dims"))
    }

    fn train_batch(
        &mut self,
        batch: &Batch,
        phase: Phase,
        lr: f64,
        optim: &mut OptimState,
    ) -> Result<f64, TrainError> {
        let mut fwd = forward_on_tape(&self.net.spec, self.net.layers(), batch.rgb.clone())?;
        let (loss, seed_at, grad) = match phase {
            Phase::Depth => {
                let (loss, grad) = {
                    let pred = fwd.tape.value(fwd.prediction);
                    depth_loss(pred, &batch.depth, &batch.mask)?
                };
                (loss, fwd.prediction, grad)
            }
            Phase::Tensor => {
                let target = self.penult_targets(&batch.ids)?;
                let (loss, grad) = {
                    let penult = fwd.tape.value(fwd.penultimate);
                    tensor_loss(penult, &target)?
                };
                (loss, fwd.penultimate, grad)
            }
        };
        fwd.tape.backward(seed_at, &grad)?;

        let defs = self.net.layer_defs();
        let grads: Vec<Option<LayerGrads>> = defs
            .iter()
            .zip(&fwd.param_ids)
            .map(|(def, (kid, bid))| {
                if self.net.is_frozen(&def.name) {
                    None
                } else {
                    Some(LayerGrads {
                        kernel: fwd
                            .tape
                            .grad(*kid)
                            .map(|g| g.to_vec())
                            .unwrap_or_else(|| vec![0.0; def.kernel_dims.len()]),
                        bias: fwd
                            .tape
                            .grad(*bid)
                            .map(|g| g.to_vec())
                            .unwrap_or_else(|| vec![0.0; def.bias_len]),
                    })
                }
            })
            .collect();
        adam_step(&mut self.net, &grads, optim, lr)?;
        Ok(loss)
    }

    /// Pixel-pooled metrics on the test split.
    fn validate(&self) -> Result<MetricsReport, TrainError> {
        let ids = self.dataset.ids(Split::Test);
        let (w, h) = self.dataset.resolution();
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        let mut masks = Vec::new();
        for chunk in ids.chunks(self.config.batch_size.max(1)) {
            let batch = assemble_batch(self.dataset, chunk)?;
            let out = self.net.forward(&batch.rgb)?;
            preds.extend_from_slice(out.prediction.data());
            gts.extend_from_slice(batch.depth.data());
            masks.extend_from_slice(batch.mask.as_slice());
        }
        let n = ids.len();
        let pred = Tensor4::new(Dims4::new(n, 1, h, w), preds).expect("pred dims");
        let gt = Tensor4::new(Dims4::new(n, 1, h, w), gts).expect("gt dims");
        let mask = ValidityMask::new(n, h, w, masks).expect("mask dims");
        Ok(compute_metrics(&pred, &gt, &mask, None)?)
    }

    /// Mean tensor loss against the cached teacher activations on the test
    /// split (drives the regime-T stop rule).
    fn validate_tensor_loss(&self) -> Result<f64, TrainError> {
        let ids = self.dataset.ids(Split::Test);
        let mut total_sq = 0.0f64;
        let mut total_n = 0usize;
        for chunk in ids.chunks(self.config.batch_size.max(1)) {
            let batch = assemble_batch(self.dataset, chunk)?;
            let out = self.net.forward(&batch.rgb)?;
            let target = self.penult_targets(&batch.ids)?;
            let (loss, _) = tensor_loss(&out.penultimate, &target)?;
            let count = target.dims().len();
            total_sq += loss * count as f64;
            total_n += count;
        }
        Ok(total_sq / total_n.max(1) as f64)
    }

    /// Run up to `max_epochs` epochs of one phase with a fresh optimizer and
    /// a restarted schedule. Returns the number of epochs actually run.
    fn run_phase(
        &mut self,
        phase: Phase,
        max_epochs: u32,
        use_stop_rule: bool,
    ) -> Result<u32, TrainError> {
        let mut optim = OptimState::new(&self.net);
        let mut best_tl = f64::INFINITY;
        let mut streak = 0u32;
        let mut epochs_run = 0u32;

        for phase_epoch in 0..max_epochs {
            let t0 = Instant::now();
            let lr = lr_schedule_with(phase_epoch, self.config.base_lr, self.config.halve_every);
            let epoch_seed =
                Rng::substream(self.config.seed, self.global_epoch as u64).next_u64();

            let mut loss_sum = 0.0f64;
            let mut n_batches = 0usize;
            let batches = self
                .dataset
                .batches(Split::Train, self.config.batch_size, epoch_seed)?;
            for batch in batches {
                let batch = batch?;
                let loss = self.train_batch(&batch, phase, lr, &mut optim)?;
                self.history.batch_losses.push(loss);
                loss_sum += loss;
                n_batches += 1;
            }

            let val = self.validate()?;
            let val_tl = if self.cache.is_some() {
                Some(self.validate_tensor_loss()?)
            } else {
                None
            };

            if let Some(dir) = &self.config.out_dir {
                save_checkpoint(&self.net, &dir.join(format!("epoch_{:03}.crmw", self.global_epoch)))?;
                if val.rms_lin < self.best_rms {
                    self.best_rms = val.rms_lin;
                    save_checkpoint(&self.net, &dir.join("best.crmw"))?;
                }
            }

            self.history.records.push(EpochRecord {
                epoch: phase_epoch,
                phase,
                lr,
                train_loss: loss_sum / n_batches.max(1) as f64,
                val,
                val_tensor_loss: val_tl,
                seconds: t0.elapsed().as_secs_f64(),
            });
            self.global_epoch += 1;
            epochs_run += 1;

            if phase == Phase::Tensor && use_stop_rule {
                let tl = val_tl.expect("tensor phase always evaluates the tensor loss");
                let improvement = if best_tl.is_finite() {
                    (best_tl - tl) / best_tl
                } else {
                    f64::INFINITY
                };
                if improvement < self.config.tensor_stop_rel {
                    streak += 1;
                } else {
                    streak = 0;
                }
                if tl < best_tl {
                    best_tl = tl;
                }
                if streak >= self.config.tensor_stop_patience {
                    break;
                }
            }
        }
        Ok(epochs_run)
    }
}

/// Train a network per the configured regime. Returns the final network and
/// the per-epoch history; per-epoch checkpoints and the best-by-validation
/// RMS checkpoint are written to `config.out_dir` when set.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<(Network, TrainHistory), TrainError> {
    config.validate()?;
    let n_train = dataset.len(Split::Train);
    if n_train < config.batch_size {
        return Err(TrainError::Config(format!(
            "train split has {n_train} samples, smaller than one batch of {}",
            config.batch_size
        )));
    }
    if dataset.len(Split::Test) == 0 {
        return Err(TrainError::Config("test split is empty".into()));
    }
    let (w, h) = dataset.resolution();

    let teacher = match &config.teacher_ckpt {
        Some(path) => {
            let t = load_checkpoint(path)?;
            if (t.spec.input_w, t.spec.input_h) != (w, h) {
                return Err(TrainError::Config(format!(
                    "teacher expects {}x{} input but the dataset is {}x{}",
                    t.spec.input_w, t.spec.input_h, w, h
                )));
            }
            Some(t)
        }
        None => None,
    };

    let net = match config.arch {
        NetArch::Condensed => build_condensed(w, h, config.seed)?,
        NetArch::Teacher => build_teacher(w, h, config.seed)?,
    };

    if let Some(t) = &teacher {
        // Fail fast if the solver layers are incompatible.
        let t_pred = t
            .layer_by_name("predictor")
            .ok_or_else(|| TrainError::Config("teacher has no predictor layer".into()))?;
        let s_pred = net.layer_by_name("predictor").expect("student predictor");
        if t_pred.kernel.dims() != s_pred.kernel.dims() {
            return Err(TrainError::Config(format!(
                "teacher predictor {} is incompatible with student predictor {}",
                t_pred.kernel.dims(),
                s_pred.kernel.dims()
            )));
        }
    }

    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }

    let mut session = Session {
        config,
        dataset,
        net,
        cache: None,
        history: TrainHistory::default(),
        global_epoch: 0,
        best_rms: f64::INFINITY,
    };

    match config.regime {
        Regime::R => {
            session.run_phase(Phase::Depth, config.epochs, false)?;
        }
        Regime::Tr => {
            let teacher = teacher.as_ref().expect("validated");
            session.net = transplant_solver(teacher, &session.net)?;
            session.run_phase(Phase::Depth, config.epochs, false)?;
        }
        Regime::T => {
            let teacher = teacher.as_ref().expect("validated");
            session.build_cache(teacher)?;
            let cap = config.tensor_phase_epochs.min(config.epochs);
            let used = session.run_phase(Phase::Tensor, cap, true)?;
            session.run_phase(Phase::Depth, config.epochs.saturating_sub(used), false)?;
        }
        Regime::TTr => {
            let teacher = teacher.as_ref().expect("validated");
            session.build_cache(teacher)?;
            session.run_phase(Phase::Tensor, config.tensor_phase_epochs, false)?;
            session.net = transplant_solver(teacher, &session.net)?;
            session.run_phase(Phase::Depth, config.finetune_epochs, false)?;
        }
    }

    Ok((session.net, session.history))
}

/// Replace the frozen-layer set (unknown names rejected); optimizer state
/// for newly frozen layers is retained by the next phase but stays inert.
pub fn set_frozen(net: &mut Network, layer_names: &[String]) -> Result<(), TrainError> {
    net.set_frozen(layer_names)?;
    Ok(())
}
