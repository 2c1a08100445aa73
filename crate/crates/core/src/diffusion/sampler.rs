use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schedule::NoiseSchedule;
use crate::autodiff::log_sum_exp;
use crate::conditioning::ConditionSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{TokenSequence, MASK};
use crate::transformer::PartDiffusionModel;

/// Anything that predicts clean tokens for masked blocks.
pub trait Denoiser<T: Scalar> {
    fn block_len(&self) -> usize;

    fn vocab_size(&self) -> usize;

    /// `L x V` logits for the active block; its part index is the number of
    /// committed blocks.
    fn active_logits(
        &self,
        cond: &ConditionSet<T>,
        committed: &[u32],
        active: &[u32],
        t: f64,
    ) -> Result<Tensor<T>>;

    /// `N·L x V` logits for every noisy position in the train layout.
    fn train_logits(
        &self,
        cond: &ConditionSet<T>,
        noisy: &[u32],
        clean: &[u32],
        t: &[f64],
    ) -> Result<Tensor<T>>;
}

impl<T: Scalar> Denoiser<T> for PartDiffusionModel<T> {
    fn block_len(&self) -> usize {
        self.config().block_len
    }

    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn active_logits(
        &self,
        cond: &ConditionSet<T>,
        committed: &[u32],
        active: &[u32],
        t: f64,
    ) -> Result<Tensor<T>> {
        PartDiffusionModel::active_logits(self, cond, committed, active, t)
    }

    fn train_logits(
        &self,
        cond: &ConditionSet<T>,
        noisy: &[u32],
        clean: &[u32],
        t: &[f64],
    ) -> Result<Tensor<T>> {
        PartDiffusionModel::train_logits(self, cond, noisy, clean, t)
    }
}

/// Emits `confidence` on the ground-truth id and zero elsewhere, ignoring
/// its inputs. Used to check sampler and pipeline plumbing.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    truth: Vec<u32>,
    block_len: usize,
    vocab_size: usize,
    pub confidence: f64,
}

impl OracleDenoiser {
    pub fn new(truth: &TokenSequence, vocab_size: usize) -> Result<Self> {
        if let Some(&bad) = truth.ids().iter().find(|&&x| x as usize >= vocab_size) {
            return Err(Error::invalid(format!("token {bad} outside vocabulary")));
        }
        Ok(Self {
            truth: truth.ids().to_vec(),
            block_len: truth.block_len(),
            vocab_size,
            confidence: 60.0,
        })
    }

    fn one_hot<T: Scalar>(&self, range: std::ops::Range<usize>) -> Result<Tensor<T>> {
        if range.end > self.truth.len() {
            return Err(Error::invalid("oracle asked for a block it does not know"));
        }
        let mut out = Tensor::zeros(range.len(), self.vocab_size);
        let c = crate::scalar::lit(self.confidence);
        for (r, p) in range.enumerate() {
            out.set(r, self.truth[p] as usize, c);
        }
        Ok(out)
    }
}

impl<T: Scalar> Denoiser<T> for OracleDenoiser {
    fn block_len(&self) -> usize {
        self.block_len
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn active_logits(
        &self,
        _cond: &ConditionSet<T>,
        committed: &[u32],
        _active: &[u32],
        _t: f64,
    ) -> Result<Tensor<T>> {
        let start = committed.len();
        self.one_hot(start..start + self.block_len)
    }

    fn train_logits(
        &self,
        _cond: &ConditionSet<T>,
        noisy: &[u32],
        _clean: &[u32],
        _t: &[f64],
    ) -> Result<Tensor<T>> {
        self.one_hot(0..noisy.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CommitRule {
    Argmax,
    /// Categorical draw from `softmax(logits / temperature)`.
    Temperature(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Positions committed per step.
    pub k: usize,
    pub commit: CommitRule,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 1,
            commit: CommitRule::Argmax,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Steps per block; `k` must divide `block_len`.
    pub fn steps(&self, block_len: usize) -> Result<usize> {
        if self.k == 0 || block_len % self.k != 0 {
            return Err(Error::invalid(format!(
                "k = {} must divide block length {block_len}",
                self.k
            )));
        }
        Ok(block_len / self.k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutput {
    pub tokens: TokenSequence,
    pub model_calls: usize,
}

/// Generates `cond.part_count()` blocks, one part at a time.
pub fn sample<T: Scalar, D: Denoiser<T> + ?Sized>(
    cond: &ConditionSet<T>,
    model: &D,
    cfg: &SamplerConfig,
) -> Result<SampleOutput> {
    sample_traced(cond, model, cfg, &mut |_, _, _| {})
}

/// As [`sample`], calling `trace(part, step, active)` after every commit.
pub fn sample_traced<T: Scalar, D: Denoiser<T> + ?Sized>(
    cond: &ConditionSet<T>,
    model: &D,
    cfg: &SamplerConfig,
    trace: &mut dyn FnMut(usize, usize, &[u32]),
) -> Result<SampleOutput> {
    let l = model.block_len();
    let steps = cfg.steps(l)?;
    if let CommitRule::Temperature(temp) = cfg.commit {
        if !(temp > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut committed: Vec<u32> = Vec::with_capacity(cond.part_count() * l);
    let mut calls = 0;
    for part in 0..cond.part_count() {
        let mut active = vec![MASK; l];
        for s in 0..steps {
            let t = (steps - s) as f64 / steps as f64;
            let logits = model.active_logits(cond, &committed, &active, t)?;
            calls += 1;
            if logits.shape() != (l, model.vocab_size()) {
                return Err(Error::Length(format!(
                    "denoiser returned {:?} logits",
                    logits.shape()
                )));
            }
            let mut cands: Vec<(f64, usize, u32)> = Vec::new();
            for p in (0..l).filter(|&p| active[p] == MASK) {
                let row: Vec<f64> = logits
                    .row(p)
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        if i as u32 == MASK {
                            f64::NEG_INFINITY
                        } else {
                            x.to_f64().unwrap_or(f64::NAN)
                        }
                    })
                    .collect();
                let (conf, token) = choose(&row, cfg.commit, &mut rng);
                cands.push((conf, p, token));
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, p, token) in cands.iter().take(cfg.k) {
                active[p] = token;
            }
            trace(part, s, &active);
        }
        committed.extend_from_slice(&active);
    }
    Ok(SampleOutput {
        tokens: TokenSequence::new(committed, l)?,
        model_calls: calls,
    })
}

/// Returns (max softmax probability, chosen token).
fn choose<R: Rng>(row: &[f64], rule: CommitRule, rng: &mut R) -> (f64, u32) {
    let lse = log_sum_exp(row);
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    let conf = (row[best] - lse).exp();
    let conf = if conf.is_nan() { 0.0 } else { conf };
    match rule {
        CommitRule::Argmax => (conf, best as u32),
        CommitRule::Temperature(temp) => {
            let scaled: Vec<f64> = row.iter().map(|x| x / temp).collect();
            let lse_t = log_sum_exp(&scaled);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = best;
            for (i, x) in scaled.iter().enumerate() {
                acc += (x - lse_t).exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            (conf, pick as u32)
        }
    }
}

/// One Monte-Carlo draw of the likelihood bound.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodDraw {
    pub t: Vec<f64>,
    pub masked_counts: Vec<usize>,
    /// `w(t_i) * sum of masked cross-entropies` per block.
    pub block_bounds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodEstimate {
    /// Mean over draws of `-sum_i block_bound_i` (a lower bound on `log p`).
    pub value: f64,
    pub draws: Vec<LikelihoodDraw>,
}

pub fn sequence_log_likelihood<T: Scalar, D: Denoiser<T> + ?Sized>(
    x: &TokenSequence,
    cond: &ConditionSet<T>,
    model: &D,
    schedule: &NoiseSchedule,
    n_mc: usize,
    seed: u64,
) -> Result<LikelihoodEstimate> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be at least 1"));
    }
    let l = x.block_len();
    if l != model.block_len() {
        return Err(Error::Length("sequence and model block lengths differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_mc);
    let mut total = 0.0;
    for _ in 0..n_mc {
        let view = super::train::make_view(x.ids(), l, schedule, &mut rng);
        let logits = model.train_logits(cond, &view.noisy, &view.clean, &view.t)?;
        let mut bounds = vec![0.0; view.block_count()];
        for r in view.masked_rows() {
            let row = logits.row(r);
            let ce = (log_sum_exp(row) - row[view.clean[r] as usize])
                .to_f64()
                .unwrap_or(f64::NAN);
            bounds[r / l] += ce;
        }
        for (b, t) in bounds.iter_mut().zip(&view.t) {
            *b *= schedule.weight(*t);
        }
        total -= bounds.iter().sum::<f64>();
        draws.push(LikelihoodDraw {
            masked_counts: view.masked_counts(),
            t: view.t,
            block_bounds: bounds,
        });
    }
    Ok(LikelihoodEstimate {
        value: total / n_mc as f64,
        draws,
    })
}
