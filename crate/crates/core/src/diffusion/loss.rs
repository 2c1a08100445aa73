use super::schedule::NoiseSchedule;
use crate::autodiff::{log_sum_exp, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// One training sample after masking: `N` blocks of clean and noisy tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatchView {
    pub clean: Vec<u32>,
    pub noisy: Vec<u32>,
    /// One time per block.
    pub t: Vec<f64>,
    pub masked: Vec<bool>,
    pub block_len: usize,
}

impl TrainBatchView {
    pub fn block_count(&self) -> usize {
        self.t.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len() * self.block_len;
        if self.clean.len() != n || self.noisy.len() != n || self.masked.len() != n {
            return Err(Error::Length(format!(
                "batch view needs {n} positions for {} blocks",
                self.t.len()
            )));
        }
        Ok(())
    }

    pub fn masked_counts(&self) -> Vec<usize> {
        self.masked
            .chunks(self.block_len)
            .map(|c| c.iter().filter(|&&m| m).count())
            .collect()
    }

    /// Masked positions in order.
    pub fn masked_rows(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| self.masked[i]).collect()
    }

    /// Per-row weights so that `sum weight * CE` is the block-mean loss.
    fn row_weights(&self, schedule: &NoiseSchedule) -> Vec<f64> {
        let counts = self.masked_counts();
        let n = self.block_count() as f64;
        self.masked_rows()
            .iter()
            .map(|&r| {
                let b = r / self.block_len;
                schedule.weight(self.t[b]) / (counts[b] as f64 * n)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Mean over blocks of the per-block weighted loss.
    pub total: f64,
    pub per_block: Vec<f64>,
    /// Blocks that had no masked position.
    pub empty_blocks: Vec<usize>,
    /// Unweighted cross-entropy per masked token.
    pub nats_per_token: f64,
    pub masked_tokens: usize,
}

/// Loss from full noisy-position logits (`N·L x V`).
pub fn diffusion_loss<T: Scalar>(
    logits: &Tensor<T>,
    view: &TrainBatchView,
    schedule: &NoiseSchedule,
) -> Result<LossBreakdown> {
    view.validate()?;
    if logits.rows() != view.clean.len() {
        return Err(Error::Length(format!(
            "{} logit rows for {} positions",
            logits.rows(),
            view.clean.len()
        )));
    }
    let rows = view.masked_rows();
    let ce: Vec<f64> = rows
        .iter()
        .map(|&r| {
            let row = logits.row(r);
            (log_sum_exp(row) - row[view.clean[r] as usize])
                .to_f64()
                .unwrap_or(f64::NAN)
        })
        .collect();
    Ok(breakdown(view, schedule, &rows, &ce))
}

fn breakdown(view: &TrainBatchView, schedule: &NoiseSchedule, rows: &[usize], ce: &[f64]) -> LossBreakdown {
    let n = view.block_count();
    let counts = view.masked_counts();
    let mut sums = vec![0.0; n];
    for (&r, &c) in rows.iter().zip(ce) {
        sums[r / view.block_len] += c;
    }
    let per_block: Vec<f64> = (0..n)
        .map(|b| {
            if counts[b] == 0 {
                0.0
            } else {
                schedule.weight(view.t[b]) * sums[b] / counts[b] as f64
            }
        })
        .collect();
    let total_ce: f64 = ce.iter().sum();
    LossBreakdown {
        total: if n == 0 { 0.0 } else { per_block.iter().sum::<f64>() / n as f64 },
        empty_blocks: (0..n).filter(|&b| counts[b] == 0).collect(),
        nats_per_token: if ce.is_empty() { 0.0 } else { total_ce / ce.len() as f64 },
        masked_tokens: ce.len(),
        per_block,
    }
}

/// Records the loss on a graph whose `logits` hold exactly the masked rows
/// of `view`, in order. Returns the `1 x 1` loss and its breakdown.
pub fn diffusion_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    view: &TrainBatchView,
    schedule: &NoiseSchedule,
) -> Result<(Var, LossBreakdown)> {
    view.validate()?;
    let rows = view.masked_rows();
    if g.value(logits).rows() != rows.len() {
        return Err(Error::Length("logits must cover exactly the masked rows".into()));
    }
    let targets: Vec<u32> = rows.iter().map(|&r| view.clean[r]).collect();
    let weights: Vec<T> = view.row_weights(schedule).into_iter().map(lit).collect();
    let lt = g.value(logits);
    let ce: Vec<f64> = (0..rows.len())
        .map(|i| {
            let row = lt.row(i);
            (log_sum_exp(row) - row[targets[i] as usize])
                .to_f64()
                .unwrap_or(f64::NAN)
        })
        .collect();
    let report = breakdown(view, schedule, &rows, &ce);
    let loss = g.cross_entropy(logits, &targets, &weights);
    Ok((loss, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(t: Vec<f64>) -> TrainBatchView {
        let l = 4;
        let clean: Vec<u32> = (0..t.len() * l).map(|i| 2 + (i % 3) as u32).collect();
        let masked: Vec<bool> = (0..clean.len()).map(|i| i % 2 == 0).collect();
        let noisy = clean
            .iter()
            .zip(&masked)
            .map(|(&c, &m)| if m { crate::tokenizer::MASK } else { c })
            .collect();
        TrainBatchView {
            clean,
            noisy,
            t,
            masked,
            block_len: l,
        }
    }

    #[test]
    fn uniform_logits_closed_form() {
        let v = view(vec![0.25, 0.5, 1.0]);
        let logits = Tensor::<f64>::zeros(12, 7);
        let s = NoiseSchedule::default();
        let out = diffusion_loss(&logits, &v, &s).unwrap();
        let ln_v = 7f64.ln();
        let want = (4.0 + 2.0 + 1.0) * ln_v / 3.0;
        assert!((out.total - want).abs() < 1e-12);
        assert!((out.nats_per_token - ln_v).abs() < 1e-12);
    }

    #[test]
    fn confident_truth_gives_near_zero_loss() {
        let v = view(vec![0.3, 0.9]);
        let mut logits = Tensor::<f64>::zeros(8, 6);
        for r in 0..8 {
            logits.set(r, v.clean[r] as usize, 60.0);
        }
        let out = diffusion_loss(&logits, &v, &NoiseSchedule::default()).unwrap();
        assert!(out.total < 1e-20);
    }

    #[test]
    fn doubling_t_halves_block_loss() {
        let s = NoiseSchedule::default();
        let logits = Tensor::from_vec(8, 5, (0..40).map(|i| (i as f64 * 0.37).sin()).collect());
        let a = diffusion_loss(&logits, &view(vec![0.2, 0.4]), &s).unwrap();
        let b = diffusion_loss(&logits, &view(vec![0.4, 0.4]), &s).unwrap();
        assert_eq!(a.per_block[0], 2.0 * b.per_block[0]);
        assert_eq!(a.per_block[1], b.per_block[1]);
    }

    #[test]
    fn block_without_masks_contributes_zero() {
        let mut v = view(vec![0.5, 0.5]);
        for m in &mut v.masked[4..] {
            *m = false;
        }
        v.noisy[4..].copy_from_slice(&v.clean[4..].to_vec());
        let out = diffusion_loss(&Tensor::<f64>::zeros(8, 5), &v, &NoiseSchedule::default()).unwrap();
        assert_eq!(out.per_block[1], 0.0);
        assert_eq!(out.empty_blocks, vec![1]);
        assert!((out.total - 2.0 * 5f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn graph_loss_matches_value_loss() {
        let v = view(vec![0.3, 0.8]);
        let s = NoiseSchedule::default();
        let logits = Tensor::from_vec(8, 5, (0..40).map(|i| (i as f64 * 0.91).cos()).collect());
        let full = diffusion_loss(&logits, &v, &s).unwrap();
        let mut g = Graph::new();
        let rows = v.masked_rows();
        let all = g.constant(logits);
        let sel = g.select_rows(all, &rows);
        let (loss, rep) = diffusion_loss_graph(&mut g, sel, &v, &s).unwrap();
        assert!((g.value(loss).get(0, 0) - full.total).abs() < 1e-12);
        assert_eq!(rep.per_block, full.per_block);
    }
}
