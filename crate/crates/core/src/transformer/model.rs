use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{CleanCondition, ConditionVariant, ModelConfig};
use super::mask::{build_sample_mask, build_train_mask, CompositeMask};
use crate::autodiff::{AttnMask, Graph, Var};
use crate::conditioning::{
    encode_conditions, ConditionSet, ConditionVars, EncoderParams, LabeledPointCloud,
};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;
use crate::tokenizer::PAD;

const INIT_STD: f64 = 0.02;

fn lookup<T: Scalar>(store: &ParamStore<T>, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
}

/// Projections of one attention sublayer.
#[derive(Clone, Copy, Debug)]
pub struct AttnParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttnParams {
    fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        kv_in: usize,
        d: usize,
        out_std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            wq: store.insert_normal(format!("{prefix}.wq"), d, d, INIT_STD, rng),
            bq: store.insert_filled(format!("{prefix}.bq"), 1, d, 0.0),
            wk: store.insert_normal(format!("{prefix}.wk"), kv_in, d, INIT_STD, rng),
            bk: store.insert_filled(format!("{prefix}.bk"), 1, d, 0.0),
            wv: store.insert_normal(format!("{prefix}.wv"), kv_in, d, INIT_STD, rng),
            bv: store.insert_filled(format!("{prefix}.bv"), 1, d, 0.0),
            wo: store.insert_normal(format!("{prefix}.wo"), d, d, out_std, rng),
            bo: store.insert_filled(format!("{prefix}.bo"), 1, d, 0.0),
        }
    }

    fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let f = |s: &str| lookup(store, &format!("{prefix}.{s}"));
        Ok(Self {
            wq: f("wq")?,
            bq: f("bq")?,
            wk: f("wk")?,
            bk: f("bk")?,
            wv: f("wv")?,
            bv: f("bv")?,
            wo: f("wo")?,
            bo: f("bo")?,
        })
    }
}

/// One layer: pre-norm self-attention, cross-attention to the condition
/// rows, then a GELU feed-forward, each with a residual connection.
#[derive(Clone, Copy, Debug)]
pub struct PartAwareBlockParams {
    pub ln1: (ParamId, ParamId),
    pub self_attn: AttnParams,
    pub ln2: (ParamId, ParamId),
    pub cross_attn: AttnParams,
    pub ln3: (ParamId, ParamId),
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
}

impl PartAwareBlockParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.hidden;
        let ff = d * cfg.ff_mult;
        let out_std = INIT_STD / ((2 * cfg.layers) as f64).sqrt();
        let ln = |store: &mut ParamStore<T>, name: &str| {
            (
                store.insert_filled(format!("{prefix}.{name}.g"), 1, d, 1.0),
                store.insert_filled(format!("{prefix}.{name}.b"), 1, d, 0.0),
            )
        };
        let ln1 = ln(store, "ln1");
        let ln2 = ln(store, "ln2");
        let ln3 = ln(store, "ln3");
        let self_attn = AttnParams::register(store, &format!("{prefix}.attn"), d, d, out_std, rng);
        let cross_attn =
            AttnParams::register(store, &format!("{prefix}.xattn"), cfg.cond_dim, d, out_std, rng);
        Self {
            ln1,
            self_attn,
            ln2,
            cross_attn,
            ln3,
            ff_w1: store.insert_normal(format!("{prefix}.ff.w1"), d, ff, INIT_STD, rng),
            ff_b1: store.insert_filled(format!("{prefix}.ff.b1"), 1, ff, 0.0),
            ff_w2: store.insert_normal(format!("{prefix}.ff.w2"), ff, d, out_std, rng),
            ff_b2: store.insert_filled(format!("{prefix}.ff.b2"), 1, d, 0.0),
        }
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let f = |s: &str| lookup(store, &format!("{prefix}.{s}"));
        Ok(Self {
            ln1: (f("ln1.g")?, f("ln1.b")?),
            self_attn: AttnParams::lookup(store, &format!("{prefix}.attn"))?,
            ln2: (f("ln2.g")?, f("ln2.b")?),
            cross_attn: AttnParams::lookup(store, &format!("{prefix}.xattn"))?,
            ln3: (f("ln3.g")?, f("ln3.b")?),
            ff_w1: f("ff.w1")?,
            ff_b1: f("ff.b1")?,
            ff_w2: f("ff.w2")?,
            ff_b2: f("ff.b2")?,
        })
    }
}

fn attend<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &AttnParams,
    queries: Var,
    keys: Var,
    heads: usize,
    mask: Arc<AttnMask>,
) -> Var {
    let lin = |g: &mut Graph<T>, x, w, b| {
        let (w, b) = (g.param(store, w), g.param(store, b));
        g.linear(x, w, b)
    };
    let q = lin(g, queries, p.wq, p.bq);
    let k = lin(g, keys, p.wk, p.bk);
    let v = lin(g, keys, p.wv, p.bv);
    let a = g.attention(q, k, v, heads, mask);
    lin(g, a, p.wo, p.bo)
}

fn norm<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, ln: (ParamId, ParamId)) -> Var {
    let (gain, bias) = (g.param(store, ln.0), g.param(store, ln.1));
    g.layer_norm(x, gain, bias)
}

/// Runs one layer on `z` (`S x D`). `cond_rows` holds every condition row
/// (`M x d_c`) and `cross_mask` (`S x M`) picks each query's rows.
#[allow(clippy::too_many_arguments)]
pub fn part_aware_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &PartAwareBlockParams,
    z: Var,
    self_mask: Arc<AttnMask>,
    cond_rows: Var,
    cross_mask: Arc<AttnMask>,
    heads: usize,
) -> Var {
    let h = norm(g, store, z, p.ln1);
    let a = attend(g, store, &p.self_attn, h, h, heads, self_mask);
    let z = g.add(z, a);
    let h = norm(g, store, z, p.ln2);
    let c = attend(g, store, &p.cross_attn, h, cond_rows, heads, cross_mask);
    let z = g.add(z, c);
    let h = norm(g, store, z, p.ln3);
    let (w1, b1) = (g.param(store, p.ff_w1), g.param(store, p.ff_b1));
    let f = g.linear(h, w1, b1);
    let f = g.gelu(f);
    let (w2, b2) = (g.param(store, p.ff_w2), g.param(store, p.ff_b2));
    let f = g.linear(f, w2, b2);
    g.add(z, f)
}

/// Sinusoidal features of `t`; the first half are sines.
pub fn timestep_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = 1000.0 * t * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[derive(Clone, Debug)]
struct ModelIds {
    tok_emb: ParamId,
    pos_emb: ParamId,
    time_w: ParamId,
    time_b: ParamId,
    blocks: Vec<PartAwareBlockParams>,
    ln_f: (ParamId, ParamId),
    head_w: ParamId,
    head_b: ParamId,
}

/// Point encoder plus denoising transformer over one parameter store.
#[derive(Clone, Debug)]
pub struct PartDiffusionModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: EncoderParams,
    ids: ModelIds,
}

impl<T: Scalar> PartDiffusionModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.hidden;
        let encoder =
            EncoderParams::register(&mut store, config.encoder_hidden, config.cond_dim, &mut rng);
        let tok_emb = store.insert_normal("tok_emb", config.vocab_size, d, INIT_STD, &mut rng);
        let pos_emb = store.insert_normal("pos_emb", config.positions(), d, INIT_STD, &mut rng);
        let time_w = store.insert_normal("time.w", config.time_dim, d, INIT_STD, &mut rng);
        let time_b = store.insert_filled("time.b", 1, d, 0.0);
        let blocks = (0..config.layers)
            .map(|l| PartAwareBlockParams::register(&mut store, &format!("layer{l}"), &config, &mut rng))
            .collect();
        let ln_f = (
            store.insert_filled("ln_f.g", 1, d, 1.0),
            store.insert_filled("ln_f.b", 1, d, 0.0),
        );
        let head_w = store.insert_normal("head.w", d, config.vocab_size, INIT_STD, &mut rng);
        let head_b = store.insert_filled("head.b", 1, config.vocab_size, 0.0);
        Ok(Self {
            config,
            params: store,
            encoder,
            ids: ModelIds {
                tok_emb,
                pos_emb,
                time_w,
                time_b,
                blocks,
                ln_f,
                head_w,
                head_b,
            },
        })
    }

    /// Rebinds a loaded parameter store; shapes must match `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        for (id, name, t) in reference.params.iter() {
            let other = params
                .id(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if params.get(other).shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    params.get(other).shape(),
                    reference.params.get(id).shape()
                )));
            }
        }
        let blocks = (0..config.layers)
            .map(|l| PartAwareBlockParams::lookup(&params, &format!("layer{l}")))
            .collect::<Result<_>>()?;
        let ids = ModelIds {
            tok_emb: lookup(&params, "tok_emb")?,
            pos_emb: lookup(&params, "pos_emb")?,
            time_w: lookup(&params, "time.w")?,
            time_b: lookup(&params, "time.b")?,
            blocks,
            ln_f: (lookup(&params, "ln_f.g")?, lookup(&params, "ln_f.b")?),
            head_w: lookup(&params, "head.w")?,
            head_b: lookup(&params, "head.b")?,
        };
        Ok(Self {
            encoder: EncoderParams::lookup(&params)?,
            config,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn layer(&self, l: usize) -> &PartAwareBlockParams {
        &self.ids.blocks[l]
    }

    pub fn encode(&self, cloud: &LabeledPointCloud<T>) -> Result<ConditionSet<T>> {
        encode_conditions(&self.params, &self.encoder, cloud)
    }

    /// Condition keys each block row may read: `S x (1 + parts)`, key 0 is
    /// the global row and key `1 + p` the feature of part `p`.
    fn cross_mask(&self, mask: &CompositeMask, n_parts: usize) -> Result<AttnMask> {
        let l = mask.block_len();
        let mut allow = vec![false; mask.len() * (1 + n_parts)];
        for (s, slot) in mask.slots().iter().enumerate() {
            let (global, part) = if slot.noisy || self.config.clean_condition == CleanCondition::Part {
                match self.config.variant {
                    ConditionVariant::Full => (true, true),
                    ConditionVariant::GlobalOnly => (true, false),
                    ConditionVariant::PartsOnly => (false, true),
                }
            } else {
                (true, false)
            };
            if part && slot.part >= n_parts {
                return Err(Error::invalid(format!(
                    "no condition for part {} ({n_parts} available)",
                    slot.part
                )));
            }
            for r in s * l..(s + 1) * l {
                let row = &mut allow[r * (1 + n_parts)..(r + 1) * (1 + n_parts)];
                row[0] = global;
                if part {
                    row[1 + slot.part] = true;
                }
            }
        }
        Ok(AttnMask::new(mask.len(), 1 + n_parts, allow))
    }

    /// Records the forward pass and returns logits for `rows` only.
    ///
    /// `t` holds one time per slot of `mask`; clean slots always use `t = 0`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        cond: ConditionVars,
        tokens: &[u32],
        t: &[f64],
        mask: &CompositeMask,
        rows: &[usize],
    ) -> Result<Var> {
        let cfg = &self.config;
        let l = mask.block_len();
        if l != cfg.block_len {
            return Err(Error::Length(format!(
                "block length {l} differs from model block length {}",
                cfg.block_len
            )));
        }
        if tokens.len() != mask.len() {
            return Err(Error::Length(format!(
                "{} tokens for a mask over {} positions",
                tokens.len(),
                mask.len()
            )));
        }
        if t.len() != mask.slots().len() {
            return Err(Error::Length("one time per block required".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        if let Some(s) = mask.slots().iter().find(|s| s.part >= cfg.max_blocks) {
            return Err(Error::invalid(format!(
                "part {} exceeds max_blocks {}",
                s.part, cfg.max_blocks
            )));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= tokens.len()) {
            return Err(Error::invalid(format!("output row {r} out of range")));
        }
        let n_parts = g.value(cond.parts).rows();
        let cross = Arc::new(self.cross_mask(mask, n_parts)?);

        let ids: Vec<usize> = tokens.iter().map(|&id| id as usize).collect();
        let positions: Vec<usize> = (0..tokens.len())
            .map(|p| mask.slots()[p / l].part * l + p % l)
            .collect();
        let mut feats = Vec::with_capacity(t.len() * cfg.time_dim);
        for (slot, &ts) in mask.slots().iter().zip(t) {
            let ts = if slot.noisy { ts } else { 0.0 };
            feats.extend(timestep_features(ts, cfg.time_dim).into_iter().map(lit::<T>));
        }
        let slot_rows: Vec<usize> = (0..tokens.len()).map(|p| p / l).collect();

        let tok_table = g.param(&self.params, self.ids.tok_emb);
        let tok = g.gather(tok_table, &ids);
        let pos_table = g.param(&self.params, self.ids.pos_emb);
        let pos = g.gather(pos_table, &positions);
        let tf = g.constant(Tensor::from_vec(t.len(), cfg.time_dim, feats));
        let (tw, tb) = (g.param(&self.params, self.ids.time_w), g.param(&self.params, self.ids.time_b));
        let temb = g.linear(tf, tw, tb);
        let temb = g.select_rows(temb, &slot_rows);
        let z = g.add(tok, pos);
        let mut z = g.add(z, temb);

        let cond_rows = g.concat_rows(&[cond.global, cond.parts]);
        for p in &self.ids.blocks {
            z = part_aware_block_forward(
                g,
                &self.params,
                p,
                z,
                mask.grid().clone(),
                cond_rows,
                cross.clone(),
                cfg.heads,
            );
        }
        let out = g.select_rows(z, rows);
        let out = norm(g, &self.params, out, self.ids.ln_f);
        let (hw, hb) = (g.param(&self.params, self.ids.head_w), g.param(&self.params, self.ids.head_b));
        Ok(g.linear(out, hw, hb))
    }

    /// Train-layout logits for every noisy position (`N·L x V`).
    pub fn train_logits(
        &self,
        cond: &ConditionSet<T>,
        noisy: &[u32],
        clean: &[u32],
        t: &[f64],
    ) -> Result<Tensor<T>> {
        let l = self.config.block_len;
        if noisy.len() != clean.len() || noisy.len() % l != 0 {
            return Err(Error::Length("noisy and clean sequences must be whole, equal blocks".into()));
        }
        let n = noisy.len() / l;
        if t.len() != n {
            return Err(Error::Length("one time per block required".into()));
        }
        let (tokens, mask) = train_layout(noisy, clean, l)?;
        let mut times = t.to_vec();
        times.extend(std::iter::repeat(0.0).take(n));
        let mut g = Graph::new();
        let cv = ConditionVars::constant(&mut g, cond);
        let rows: Vec<usize> = (0..n * l).collect();
        let out = self.forward(&mut g, cv, &tokens, &times, &mask, &rows)?;
        Ok(g.value(out).clone())
    }

    /// Sample-layout logits for the active block (`L x V`); the active part
    /// index is the number of committed blocks.
    pub fn active_logits(
        &self,
        cond: &ConditionSet<T>,
        committed: &[u32],
        active: &[u32],
        t: f64,
    ) -> Result<Tensor<T>> {
        let l = self.config.block_len;
        if active.len() != l || committed.len() % l != 0 {
            return Err(Error::Length("committed and active tokens must be whole blocks".into()));
        }
        let a = committed.len() / l;
        let mut tokens = committed.to_vec();
        tokens.extend_from_slice(active);
        let pad: Vec<bool> = committed
            .iter()
            .map(|&x| x == PAD)
            .chain(std::iter::repeat(false).take(l))
            .collect();
        let mask = build_sample_mask(a, l, &pad)?;
        let mut times = vec![0.0; a];
        times.push(t);
        let mut g = Graph::new();
        let cv = ConditionVars::constant(&mut g, cond);
        let rows: Vec<usize> = (a * l..(a + 1) * l).collect();
        let out = self.forward(&mut g, cv, &tokens, &times, &mask, &rows)?;
        Ok(g.value(out).clone())
    }
}

/// Concatenates `noisy ++ clean` and builds the train mask; pad flags come
/// from the clean tokens and are mirrored onto the noisy copy.
pub fn train_layout(noisy: &[u32], clean: &[u32], block_len: usize) -> Result<(Vec<u32>, CompositeMask)> {
    let n = clean.len() / block_len;
    let mut tokens = noisy.to_vec();
    tokens.extend_from_slice(clean);
    let pad: Vec<bool> = clean.iter().chain(clean).map(|&x| x == PAD).collect();
    Ok((tokens, build_train_mask(n, block_len, &pad)?))
}
