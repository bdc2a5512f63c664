//! Training loop: crop sampling, tape forward, composed loss, Adam.
//!
//! Determinism contract: every per-iteration random decision (which
//! volume, which crop origin) comes from a stream derived from
//! `(config seed, iteration index)`, never from a long-lived RNG. A run
//! resumed from a checkpoint therefore sees exactly the randomness a
//! straight run would have seen, and finishes bit-for-bit identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ckpt;
use crate::error::{Error, Result};
use crate::loss;
use crate::net::{self, ArchDescriptor, ModelParams};
use crate::optim::{self, AdamConfig, AdamState};
use crate::rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};
use crate::volume::{self, VolumeSample};

const TAG_PICK: u64 = 0x7069_636b;
const TAG_CROP: u64 = 0x6372_6f70;

/// Which terms the training objective combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    /// Voxel-wise cross-entropy only.
    #[serde(rename = "ce_only")]
    CeOnly,
    /// Cross-entropy plus the single-sided uniform boundary comparator.
    #[serde(rename = "ce+edge")]
    CeEdge,
    /// Cross-entropy plus the dual fine-grained boundary Dice.
    #[serde(rename = "ce+dfb")]
    CeDfb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    // Model.
    pub channels: Vec<usize>,
    pub sram: Vec<bool>,
    pub sram_kernel: usize,
    // Objective.
    pub loss: LossMode,
    pub dfb_k: usize,
    pub epsilon: Real,
    // Optimizer.
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub weight_decay: Real,
    pub iterations: usize,
    // Data.
    pub crop: [usize; 3],
    pub data_dir: PathBuf,
    pub seed: u64,
    // Artifacts.
    pub out_checkpoint: PathBuf,
    pub log_csv: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            channels: vec![8, 16, 32],
            sram: vec![false, false, false],
            sram_kernel: 7,
            loss: LossMode::CeOnly,
            dfb_k: 5,
            epsilon: loss::DEFAULT_EPS,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            iterations: 2000,
            crop: [32, 32, 16],
            data_dir: PathBuf::from("data"),
            seed: 0,
            out_checkpoint: PathBuf::from("model.ckpt"),
            log_csv: None,
            checkpoint_every: 500,
            resume: None,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self) -> ArchDescriptor {
        ArchDescriptor {
            in_channels: 1,
            channels: self.channels.clone(),
            sram: self.sram.clone(),
            sram_kernel: self.sram_kernel,
            dfb_k: self.dfb_k,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        self.adam().validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.crop.contains(&0) {
            return Err(Error::InvalidConfig(format!("crop shape {:?} has a zero dim", self.crop)));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("bad train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One logged optimizer step. `total == ce + dfb` holds exactly (the
/// tape computes the total as that very addition); for `ce_only` the
/// boundary term is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: u64,
    pub ce: Real,
    pub dfb: Real,
    pub total: Real,
    pub millis: f64,
}

pub fn log_to_csv(log: &[StepLog]) -> String {
    let mut s = String::from("iteration,ce,dfb,total,millis\n");
    for row in log {
        s.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.3}\n",
            row.iteration, row.ce, row.dfb, row.total, row.millis
        ));
    }
    s
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub state: AdamState,
    pub log: Vec<StepLog>,
}

/// Attaches the configured objective to the tape. Returns
/// `(total, ce, dfb)` nodes; `dfb` is `None` in `ce_only` mode (its
/// logged value is zero).
pub fn loss_on_tape(
    tape: &mut Tape,
    prob: NodeId,
    mask: &Tensor,
    mode: LossMode,
    k: usize,
    eps: Real,
) -> Result<(NodeId, NodeId, Option<NodeId>)> {
    let ce = tape.ce_loss(prob, mask)?;
    let weights = match mode {
        LossMode::CeOnly => return Ok((ce, ce, None)),
        LossMode::CeEdge => loss::edge_weights(mask, k)?,
        LossMode::CeDfb => loss::dfb_map(mask, k)?.weights,
    };
    let dfb = tape.weighted_dice_loss(prob, mask, &weights, eps)?;
    let total = tape.add(ce, dfb)?;
    Ok((total, ce, Some(dfb)))
}

/// Writes model parameters plus optimizer state to one checkpoint.
pub fn save_training_checkpoint(path: &Path, model: &ModelParams, state: &AdamState) -> Result<()> {
    let optim_named = state.to_named();
    let mut tensors: Vec<(String, &Tensor)> = model.named_tensors();
    tensors.extend(optim_named.iter().map(|(n, t)| (n.clone(), t)));
    ckpt::save(path, &model.arch, &tensors)
}

/// Loads a training checkpoint back into `(model, optimizer state)`.
pub fn load_training_checkpoint(path: &Path) -> Result<(ModelParams, AdamState)> {
    let c = ckpt::load(path)?;
    let model = ModelParams::from_named(&c.arch, &c.tensors)?;
    let state = AdamState::from_named(&model.named_tensors(), &c.tensors)?;
    Ok((model, state))
}

/// Runs the training loop over in-memory samples. Checkpoints land at
/// `cfg.out_checkpoint` every `checkpoint_every` iterations and at the
/// end; a resume path in the config continues from its stored step
/// count with bitwise-identical behavior.
pub fn train_on(cfg: &TrainConfig, data: &[VolumeSample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training requires at least one volume".into()));
    }
    for s in data {
        let shape = s.shape();
        if cfg.crop.iter().zip(shape.iter()).any(|(&c, &v)| c > v) {
            return Err(Error::WindowTooLarge { window: cfg.crop, volume: shape });
        }
    }

    let arch = cfg.arch();
    let (mut model, mut state) = match &cfg.resume {
        Some(path) => {
            let (model, state) = load_training_checkpoint(path)?;
            if model.arch != arch {
                return Err(Error::InvalidConfig(format!(
                    "resume checkpoint architecture {:?} differs from configured {:?}",
                    model.arch, arch
                )));
            }
            (model, state)
        }
        None => {
            let model = net::init_model(&arch, cfg.seed)?;
            let state = AdamState::new(&model.named_tensors());
            (model, state)
        }
    };
    let adam_cfg = cfg.adam();

    let mut log = Vec::new();
    while state.step_count() < cfg.iterations as u64 {
        let iter = state.step_count();
        let t0 = Instant::now();

        // Per-iteration derived streams; see the module docs.
        use rand::Rng;
        let mut pick = rng::stream(cfg.seed, &[TAG_PICK, iter]);
        let sample = &data[pick.gen_range(0..data.len())];
        let crop_seed = rng::derive_seed(cfg.seed, &[TAG_CROP, iter]);
        let crop = volume::random_crop(sample, cfg.crop, crop_seed)?;

        let mut tape = Tape::new();
        let x = crop.image.reshaped(&[1, cfg.crop[0], cfg.crop[1], cfg.crop[2]])?;
        let netf = net::forward_on_tape(&mut tape, &model, &x)?;
        let (total, ce, dfb) =
            loss_on_tape(&mut tape, netf.prob, &crop.mask, cfg.loss, cfg.dfb_k, cfg.epsilon)?;
        tape.backward(total)?;

        let grads: Vec<Option<Tensor>> = netf
            .param_nodes
            .iter()
            .map(|(_, id)| id.and_then(|n| tape.grad(n).cloned()))
            .collect();
        let mut params = model.named_tensors_mut();
        optim::adam_step(&mut params, &grads, &mut state, &adam_cfg)?;
        drop(params);

        log.push(StepLog {
            iteration: iter + 1,
            ce: tape.value(ce).item(),
            dfb: dfb.map_or(0.0, |n| tape.value(n).item()),
            total: tape.value(total).item(),
            millis: t0.elapsed().as_secs_f64() * 1e3,
        });

        let done = state.step_count() == cfg.iterations as u64;
        if done || (cfg.checkpoint_every > 0 && state.step_count() % cfg.checkpoint_every as u64 == 0)
        {
            save_training_checkpoint(&cfg.out_checkpoint, &model, &state)?;
        }
    }
    if log.is_empty() {
        // Resumed past the configured horizon: still (re)write the
        // checkpoint so the output artifact exists.
        save_training_checkpoint(&cfg.out_checkpoint, &model, &state)?;
    }

    if let Some(log_path) = &cfg.log_csv {
        fs::write(log_path, log_to_csv(&log))?;
    }
    Ok(TrainOutcome { model, state, log })
}

/// Loads every `<base>_image/<base>_mask` pair under a directory,
/// sorted by base name.
pub fn load_dir(dir: &Path) -> Result<Vec<VolumeSample>> {
    let mut bases = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| {
        Error::InvalidArgument(format!("cannot read data directory {}: {e}", dir.display()))
    })?;
    for entry in entries {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(base) = name.strip_suffix("_image.json") {
            bases.push(dir.join(base));
        }
    }
    if bases.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no volumes found in {} (expected <name>_image.json sidecars)",
            dir.display()
        )));
    }
    bases.sort();
    bases.iter().map(|b| volume::load_volume(b)).collect()
}

/// Loads the dataset from `cfg.data_dir` and trains.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_dir(&cfg.data_dir)?;
    train_on(cfg, &data)
}
