use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{diffusion_loss, diffusion_loss_graph, LossBreakdown, TrainBatchView};
use super::optim::{grad_norm, AdamW};
use super::schedule::NoiseSchedule;
use crate::autodiff::{Graph, Var};
use crate::conditioning::{encode_conditions_graph, LabeledPointCloud};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::transformer::{train_layout, PartDiffusionModel};

/// Tokens of all `N` blocks plus the labeled cloud they are conditioned on.
#[derive(Clone, Debug)]
pub struct TrainSample<T> {
    pub tokens: Vec<u32>,
    pub cloud: LabeledPointCloud<T>,
}

/// Draws an independent time per block and masks each block with it.
pub fn make_view<R: Rng>(
    tokens: &[u32],
    block_len: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> TrainBatchView {
    let n = tokens.len() / block_len;
    let mut noisy = Vec::with_capacity(tokens.len());
    let mut masked = Vec::with_capacity(tokens.len());
    let mut t = Vec::with_capacity(n);
    for block in tokens.chunks(block_len) {
        let tb = schedule.sample_t(rng);
        let (x, m) = schedule.mask_with(block, tb, rng);
        noisy.extend(x);
        masked.extend(m);
        t.push(tb);
    }
    TrainBatchView {
        clean: tokens.to_vec(),
        noisy,
        t,
        masked,
        block_len,
    }
}

/// Records encoder, transformer and loss for one sample. Only the masked
/// noisy rows go through the output head.
pub fn sample_loss_graph<T: Scalar>(
    model: &PartDiffusionModel<T>,
    g: &mut Graph<T>,
    sample: &TrainSample<T>,
    view: &TrainBatchView,
    schedule: &NoiseSchedule,
) -> Result<(Var, LossBreakdown)> {
    let l = model.config().block_len;
    if sample.tokens.len() % l != 0 || sample.tokens.is_empty() {
        return Err(Error::Length(format!(
            "{} tokens is not a whole number of {l}-token blocks",
            sample.tokens.len()
        )));
    }
    let n = sample.tokens.len() / l;
    if sample.cloud.part_count() != n {
        return Err(Error::invalid(format!(
            "{} part conditions for {n} blocks",
            sample.cloud.part_count()
        )));
    }
    let cond = encode_conditions_graph(g, model.params(), model.encoder(), &sample.cloud)?;
    let (tokens, mask) = train_layout(&view.noisy, &view.clean, l)?;
    let mut times = view.t.clone();
    times.extend(std::iter::repeat(0.0).take(n));
    let rows = view.masked_rows();
    let logits = model.forward(g, cond, &tokens, &times, &mask, &rows)?;
    diffusion_loss_graph(g, logits, view, schedule)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub nats_per_token: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub empty_blocks: usize,
}

/// One optimizer update over `batch`; the batch loss is the sample mean.
pub fn train_step<T: Scalar, R: Rng>(
    model: &mut PartDiffusionModel<T>,
    opt: &mut AdamW<T>,
    batch: &[TrainSample<T>],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let l = model.config().block_len;
    let mut grads = model.params().zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let (mut loss, mut ce, mut tokens, mut empty) = (0.0, 0.0, 0usize, 0usize);
    for sample in batch {
        let view = make_view(&sample.tokens, l, schedule, rng);
        if view.masked.iter().all(|&m| !m) {
            empty += view.block_count();
            continue;
        }
        let mut g = Graph::new();
        let (out, rep) = sample_loss_graph(model, &mut g, sample, &view, schedule)?;
        if !rep.total.is_finite() {
            return Err(Error::NonFinite { step: opt.step_count() });
        }
        g.backward(out).accumulate_into(&mut grads, lit(scale));
        loss += rep.total * scale;
        ce += rep.nats_per_token * rep.masked_tokens as f64;
        tokens += rep.masked_tokens;
        empty += rep.empty_blocks.len();
    }
    let norm = grad_norm(&grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite { step: opt.step_count() });
    }
    let step = opt.step_count();
    let lr = opt.update(model.params_mut(), &grads);
    Ok(StepReport {
        step,
        loss,
        nats_per_token: if tokens == 0 { 0.0 } else { ce / tokens as f64 },
        lr,
        grad_norm: norm,
        empty_blocks: empty,
    })
}

/// Deterministic evaluation: every sample is masked at each of `times`
/// (same time for all blocks) with a fixed seed. Returns the weighted loss
/// mean and the unweighted cross-entropy per masked token.
pub fn evaluate_loss<T: Scalar>(
    model: &PartDiffusionModel<T>,
    samples: &[TrainSample<T>],
    schedule: &NoiseSchedule,
    times: &[f64],
    seed: u64,
) -> Result<(f64, f64)> {
    let l = model.config().block_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut loss, mut ce, mut tokens, mut runs) = (0.0, 0.0, 0usize, 0usize);
    for sample in samples {
        let cond = model.encode(&sample.cloud)?;
        for &t in times {
            let n = sample.tokens.len() / l;
            let mut noisy = Vec::with_capacity(sample.tokens.len());
            let mut masked = Vec::with_capacity(sample.tokens.len());
            for block in sample.tokens.chunks(l) {
                let (x, m) = schedule.mask_with(block, t, &mut rng);
                noisy.extend(x);
                masked.extend(m);
            }
            let view = TrainBatchView {
                clean: sample.tokens.clone(),
                noisy,
                t: vec![t; n],
                masked,
                block_len: l,
            };
            let logits = model.train_logits(&cond, &view.noisy, &view.clean, &view.t)?;
            let rep = diffusion_loss(&logits, &view, schedule)?;
            loss += rep.total;
            runs += 1;
            ce += rep.nats_per_token * rep.masked_tokens as f64;
            tokens += rep.masked_tokens;
        }
    }
    if runs == 0 {
        return Err(Error::invalid("nothing to evaluate"));
    }
    Ok((loss / runs as f64, if tokens == 0 { 0.0 } else { ce / tokens as f64 }))
}
