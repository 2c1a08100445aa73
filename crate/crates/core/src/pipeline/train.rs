use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::PipelineConfig;
use super::preprocess::{DatasetManifest, ManifestEntry, Split};
use crate::conditioning::LabeledPointCloud;
use crate::diffusion::{evaluate_loss, train_step, AdamW, TrainSample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::read_token_file;
use crate::transformer::{Checkpoint, PartDiffusionModel};

/// Mask levels used for deterministic loss evaluation.
pub const EVAL_TIMES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

const EPOCH_RECORD: &str = "opt.epoch";
pub const LAST_CHECKPOINT: &str = "last.pdck";

pub fn load_samples<T: Scalar>(entries: &[&ManifestEntry], block_len: usize) -> Result<Vec<TrainSample<T>>> {
    entries
        .iter()
        .map(|e| {
            let seq = read_token_file(&e.tokens)?;
            if seq.block_len() != block_len {
                return Err(Error::Length(format!(
                    "{}: block length {} but the model uses {block_len}",
                    e.id,
                    seq.block_len()
                )));
            }
            Ok(TrainSample {
                tokens: seq.into_ids(),
                cloud: LabeledPointCloud::load(&e.cond)?,
            })
        })
        .collect()
}

/// Model parameters, optimizer state and the number of finished epochs.
pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    cfg: &PipelineConfig,
    model: &PartDiffusionModel<T>,
    opt: Option<&AdamW<T>>,
    epoch: usize,
) -> Result<()> {
    let mut ckpt = Checkpoint::new(cfg.to_text());
    ckpt.push_store("", model.params());
    if let Some(opt) = opt {
        opt.save_into(&mut ckpt);
    }
    ckpt.push(EPOCH_RECORD, &Tensor::<f64>::from_vec(1, 1, vec![epoch as f64]));
    ckpt.save(path)
}

/// Loads a model and checks that its settings agree with `cfg` when given.
pub fn load_model<T: Scalar>(
    path: impl AsRef<Path>,
    cfg: Option<&PipelineConfig>,
) -> Result<(PartDiffusionModel<T>, PipelineConfig, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let saved = PipelineConfig::from_text(&ckpt.config)?;
    if let Some(cfg) = cfg {
        if cfg.model != saved.model || cfg.resolution != saved.resolution || cfg.vocab_block != saved.vocab_block {
            return Err(Error::invalid(
                "checkpoint model or tokenizer settings differ from the pipeline config",
            ));
        }
    }
    let model = PartDiffusionModel::from_params(saved.model.clone(), ckpt.store(""))?;
    Ok((model, saved, ckpt))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub nats_per_token: f64,
    pub val: Option<(f64, f64)>,
}

pub struct TrainOutcome<T> {
    pub model: PartDiffusionModel<T>,
    pub epochs: Vec<EpochStats>,
    pub last_checkpoint: PathBuf,
}

fn append(path: &Path, header: &str, line: &str) -> Result<()> {
    let new = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut s = String::new();
    if new {
        let _ = writeln!(s, "{header}");
    }
    let _ = writeln!(s, "{line}");
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains on the manifest's train split. Epoch `e` shuffles with its own
/// seeded generator, so a resumed run replays the same batches and masks.
/// Checkpoints are only written after finished epochs; a non-finite loss
/// aborts with the last one intact.
pub fn train<T: Scalar>(
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    run_dir: impl AsRef<Path>,
    resume: bool,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let dir = run_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cfg.freeze(dir)?;
    let train_set = load_samples::<T>(&manifest.split(Split::Train), cfg.block_len)?;
    if train_set.is_empty() {
        return Err(Error::invalid("train split is empty"));
    }
    let val_set = load_samples::<T>(&manifest.split(Split::Val), cfg.block_len)?;
    let per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let sched = cfg.lr_schedule(per_epoch * cfg.epochs as u64);
    let noise = cfg.noise_schedule();
    let last = dir.join(LAST_CHECKPOINT);

    let (mut model, mut opt, first_epoch) = if resume && last.exists() {
        let (model, _, ckpt) = load_model::<T>(&last, Some(cfg))?;
        let opt = AdamW::restore(&ckpt, model.params(), cfg.adamw(), sched)?;
        let done = ckpt.get(EPOCH_RECORD).map_or(0, |t| t.get(0, 0) as usize);
        (model, opt, done)
    } else {
        let model = PartDiffusionModel::<T>::new(cfg.model.clone(), cfg.train_seed)?;
        let opt = AdamW::new(model.params(), cfg.adamw(), sched);
        for f in ["loss.csv", "val.csv"] {
            let p = dir.join(f);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        (model, opt, 0)
    };
    if first_epoch == 0 {
        save_checkpoint(&last, cfg, &model, Some(&opt), 0)?;
    }

    let loss_csv = dir.join("loss.csv");
    let val_csv = dir.join("val.csv");
    let mut history = Vec::new();
    for epoch in first_epoch..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed ^ (epoch as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss, mut nats, mut steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainSample<T>> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let r = train_step(&mut model, &mut opt, &batch, &noise, &mut rng)?;
            append(
                &loss_csv,
                "epoch,step,loss,nats_per_token,lr,grad_norm,empty_blocks",
                &format!(
                    "{epoch},{},{:.6},{:.6},{:.6e},{:.6},{}",
                    r.step, r.loss, r.nats_per_token, r.lr, r.grad_norm, r.empty_blocks
                ),
            )?;
            loss += r.loss;
            nats += r.nats_per_token;
            steps += 1;
        }
        let done = epoch + 1;
        let val = if !val_set.is_empty() && cfg.val_every > 0 && done % cfg.val_every == 0 {
            let v = evaluate_loss(&model, &val_set, &noise, &EVAL_TIMES, cfg.train_seed)?;
            append(&val_csv, "epoch,loss,nats_per_token", &format!("{done},{:.6},{:.6}", v.0, v.1))?;
            Some(v)
        } else {
            None
        };
        let stats = EpochStats {
            epoch: done,
            loss: loss / steps as f64,
            nats_per_token: nats / steps as f64,
            val,
        };
        progress(&stats);
        // The epoch mean is noisy; confirm on the whole train set at fixed times.
        let stop = cfg.target_nats > 0.0
            && stats.nats_per_token < cfg.target_nats
            && evaluate_loss(&model, &train_set, &noise, &EVAL_TIMES, cfg.train_seed)?.1 < cfg.target_nats;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            save_checkpoint(dir.join(format!("epoch{done:04}.pdck")), cfg, &model, Some(&opt), done)?;
        }
        save_checkpoint(&last, cfg, &model, Some(&opt), done)?;
        history.push(stats);
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        epochs: history,
        last_checkpoint: last,
    })
}
