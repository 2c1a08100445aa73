// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

use std::path::Path;
use std::time::Instant;

use partgen::autodiff::Graph;
use partgen::conditioning::{ConditionSet, LabeledPointCloud};
use partgen::diffusion::{
    evaluate_loss, forward_mask, sample, sample_loss_graph, NoiseSchedule, OracleDenoiser, SamplerConfig,
    TrainBatchView, TrainSample,
};
use partgen::mesh::{normalize_to_unit_cube, quantize, Point3};
use partgen::metrics::{chamfer, emd, f1_score, hausdorff};
use partgen::part_graph::{cluster_bounds, split_into_parts};
use partgen::pipeline::{
    ablate_k, eval_entries, load_samples, preprocess, serialize_mesh, synth_data, synth_shape, train,
    DatasetManifest, EvalSource, ManifestEntry, PipelineConfig, ShapeFamily, Split, EVAL_TIMES,
};
use partgen::tensor::Tensor;
use partgen::tokenizer::{check_block_length, detokenize_part, tokenize_part, TokenSequence, TokenVocabulary, PAD};
use partgen::transformer::{build_sample_mask, build_train_mask, ModelConfig, PartDiffusionModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn tokenizer_round_trip() -> Outcome {
    let vocab = TokenVocabulary::new(128, 8).unwrap();
    let mut parts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut i = 0;
    while parts.len() < 200 {
        let fam = ShapeFamily::ALL[i % 4];
        i += 1;
        let (mesh, labels) = synth_shape(fam, &mut rng).unwrap();
        let mesh = normalize_to_unit_cube(&mesh).unwrap();
        let order: Vec<usize> = (0..labels.part_count()).collect();
        for p in split_into_parts(&mesh, &labels, &order) {
            parts.push(quantize(&p, 128));
        }
    }
    parts.truncate(200);
    let start = Instant::now();
    let mut exact = 0;
    for p in &parts {
        let seq = tokenize_part(p, &vocab, 4096, 1).unwrap();
        let back = detokenize_part(seq.ids(), &vocab);
        if back.mesh.canonical_faces() == p.canonical_faces() && back.malformed == 0 {
            exact += 1;
        }
    }
    let ms = start.elapsed().as_secs_f64() * 1000.0 / parts.len() as f64;
    outcome(
        exact == parts.len() && ms < 5.0,
        format!("{exact}/{} parts exact, {ms:.3} ms/part", parts.len()),
    )
}

// ---------------------------------------------------------------- 2

/// Block-level rule for the train layout (`n` noisy blocks, then `n` clean).
fn train_rule(n: usize, l: usize, pad: &[bool], q: usize, k: usize) -> bool {
    let (bq, bk) = (q / l, k / l);
    let (q_noisy, k_noisy) = (bq < n, bk < n);
    let (i, j) = (bq % n, bk % n);
    if bq == bk {
        return true;
    }
    match (q_noisy, k_noisy) {
        (true, false) => j < i && !pad[k],
        (false, false) => j < i && !pad[k],
        (true, true) => false,
        (false, true) => false,
    }
}

/// Sample layout: `c` committed clean blocks then the active block.
fn sample_rule(c: usize, l: usize, pad: &[bool], q: usize, k: usize) -> bool {
    let (bq, bk) = (q / l, k / l);
    bq == bk || (bk < c && bk < bq && !pad[k])
}

// Block table for N = 3: rows and columns are
// noisy 1..3 then clean 1..3.
const TABLE_N3: [[u8; 6]; 6] = [
    [1, 0, 0, 0, 0, 0],
    [0, 1, 0, 1, 0, 0],
    [0, 0, 1, 1, 1, 0],
    [0, 0, 0, 1, 0, 0],
    [0, 0, 0, 1, 1, 0],
    [0, 0, 0, 1, 1, 1],
];

fn mask_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut cases = 0;
    let mut bad = Vec::new();
    for n in 1..=4usize {
        for l in [2usize, 4, 8] {
            for trial in 0..50 {
                let clean_pad: Vec<bool> = (0..n * l).map(|_| rng.gen_bool(0.3)).collect();
                let pad: Vec<bool> = clean_pad.iter().chain(&clean_pad).copied().collect();
                let m = build_train_mask(n, l, &pad).unwrap();
                let s = 2 * n * l;
                for q in 0..s {
                    for k in 0..s {
                        if m.allow(q, k) != train_rule(n, l, &pad, q, k) || m.grid().allowed(q, k) != m.allow(q, k) {
                            bad.push(format!("train n={n} l={l} trial={trial} ({q},{k})"));
                        }
                    }
                }
                for c in 0..n {
                    let mut sp: Vec<bool> = clean_pad[..c * l].to_vec();
                    sp.extend((0..l).map(|_| rng.gen_bool(0.3)));
                    let sm = build_sample_mask(c, l, &sp).unwrap();
                    let len = (c + 1) * l;
                    for q in 0..len {
                        for k in 0..len {
                            if sm.allow(q, k) != sample_rule(c, l, &sp, q, k) {
                                bad.push(format!("sample c={c} l={l} ({q},{k})"));
                            }
                        }
                    }
                    // active rows equal the train-mode noisy rows of part c
                    for r in 0..l {
                        let tq = c * l + r;
                        for k in 0..len {
                            let tk = if k < c * l { n * l + k } else { c * l + (k - c * l) };
                            if sm.allow(c * l + r, k) != m.allow(tq, tk) && !(k >= c * l && sp[k] != pad[tk]) {
                                bad.push(format!("slice c={c} l={l} ({r},{k})"));
                            }
                        }
                    }
                }
                cases += 1;
            }
        }
    }
    for l in [1usize, 3] {
        let m = build_train_mask(3, l, &vec![false; 6 * l]).unwrap();
        for q in 0..6 * l {
            for k in 0..6 * l {
                if m.allow(q, k) != (TABLE_N3[q / l][k / l] == 1) {
                    bad.push(format!("N=3 table l={l} ({q},{k})"));
                }
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{cases} pad patterns, {} mismatches{}", bad.len(), bad.first().map_or(String::new(), |b| format!(", first {b}"))),
    )
}

// ---------------------------------------------------------------- 3

fn tiny_config(vocab: usize, l: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        hidden: 16,
        layers: 2,
        heads: 2,
        ff_mult: 2,
        block_len: l,
        max_blocks: 4,
        cond_dim: 8,
        time_dim: 8,
        encoder_hidden: 8,
        ..ModelConfig::default()
    }
}

fn random_cond<T: partgen::Scalar>(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ConditionSet<T> {
    let mut r = |rows| Tensor::from_vec(rows, d, (0..rows * d).map(|_| T::from_f64(rng.gen_range(-1.0..1.0)).unwrap()).collect());
    ConditionSet {
        global: r(1),
        parts: r(n),
    }
}

fn block_rows(t: &Tensor<f32>, i: usize, l: usize) -> Vec<f32> {
    t.data()[i * l * t.cols()..(i + 1) * l * t.cols()].to_vec()
}

fn causality() -> Outcome {
    let (v, l, n) = (24usize, 4usize, 3usize);
    let mut passed = 0;
    let mut failures = Vec::new();
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + trial);
        let model = PartDiffusionModel::<f32>::new(tiny_config(v, l), trial).unwrap();
        let cond: ConditionSet<f32> = random_cond(&mut rng, n, 8);
        let mut clean: Vec<u32> = (0..n * l).map(|_| rng.gen_range(2..v as u32)).collect();
        for b in 0..n {
            let pads = rng.gen_range(0..l - 1);
            for p in l - pads..l {
                clean[b * l + p] = PAD;
            }
        }
        let noisy: Vec<u32> = clean.iter().map(|&x| if rng.gen_bool(0.5) { 1 } else { x }).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let i = rng.gen_range(0..n);
        let logits = |c: &ConditionSet<f32>, x: &[u32], y: &[u32]| block_rows(&model.train_logits(c, x, y, &t).unwrap(), i, l);
        let base = logits(&cond, &noisy, &clean);
        let mut ok = true;
        let mut why = String::new();
        let mut check = |cond_ok: bool, what: &str| {
            if !cond_ok {
                ok = false;
                why = what.to_string();
            }
        };

        for j in (0..n).filter(|&j| j != i) {
            let mut x = noisy.clone();
            let p = j * l + rng.gen_range(0..l);
            x[p] = if x[p] == 1 { 5 } else { 1 };
            check(logits(&cond, &x, &clean) == base, "noisy j != i changed block i");
        }
        for j in i..n {
            let mut y = clean.clone();
            let p = j * l + rng.gen_range(0..l);
            y[p] = if y[p] == 7 { 8 } else { 7 };
            check(logits(&cond, &noisy, &y) == base, "clean j >= i changed block i");
        }
        for j in 0..i {
            let mut y = clean.clone();
            let p = j * l;
            y[p] = if y[p] == 9 { 10 } else { 9 };
            check(logits(&cond, &noisy, &y) != base, "clean j < i left block i unchanged");
        }
        let mut c2 = cond.clone();
        for x in c2.parts.row_mut(i) {
            *x += 0.5;
        }
        check(logits(&c2, &noisy, &clean) != base, "C_part_i left block i unchanged");
        for j in (0..n).filter(|&j| j != i) {
            let mut c3 = cond.clone();
            c3.parts.row_mut(j).iter_mut().for_each(|x| *x = 0.0);
            check(logits(&c3, &noisy, &clean) == base, "zeroing C_part_j changed block i");
        }
        if ok {
            passed += 1;
        } else {
            failures.push(format!("trial {trial}: {why}"));
        }
    }
    outcome(
        passed == 100,
        format!("{passed}/100 trials{}", failures.first().map_or(String::new(), |f| format!(", first failure {f}"))),
    )
}

// ---------------------------------------------------------------- 4

fn gradient_check() -> Outcome {
    let (v, l, n) = (20usize, 6usize, 2usize);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut model = PartDiffusionModel::<f64>::new(tiny_config(v, l), 4).unwrap();
    let points: Vec<Point3<f64>> = (0..24).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let labels: Vec<u32> = (0..24).map(|i| (i % n) as u32).collect();
    let cloud = LabeledPointCloud::new(points, labels, n).unwrap();
    let clean: Vec<u32> = (0..n * l).map(|p| if p % l >= l - 1 { PAD } else { rng.gen_range(2..v as u32) }).collect();
    let masked: Vec<bool> = (0..n * l).map(|p| p % 2 == 0 || rng.gen_bool(0.4)).collect();
    let noisy: Vec<u32> = clean.iter().zip(&masked).map(|(&x, &m)| if m { 1 } else { x }).collect();
    let view = TrainBatchView {
        clean: clean.clone(),
        noisy,
        t: vec![0.4, 0.9],
        masked,
        block_len: l,
    };
    let sample = TrainSample { tokens: clean, cloud };
    let sched = NoiseSchedule::default();
    let loss = |m: &PartDiffusionModel<f64>| {
        let mut g = Graph::new();
        let (out, _) = sample_loss_graph(m, &mut g, &sample, &view, &sched).unwrap();
        g.value(out).get(0, 0)
    };
    let mut g = Graph::new();
    let (out, _) = sample_loss_graph(&model, &mut g, &sample, &view, &sched).unwrap();
    let grads = g.backward(out);

    let ids: Vec<_> = model.params().ids().collect();
    let group_of = |name: &str| -> String {
        if let Some(rest) = name.strip_prefix("layer") {
            format!("layer{}", rest.split('.').next().unwrap_or(""))
        } else if name.starts_with("enc.") {
            "encoder".into()
        } else {
            "embed+head".into()
        }
    };
    let mut groups: std::collections::BTreeMap<String, Vec<(partgen::params::ParamId, usize)>> = Default::default();
    for &id in &ids {
        let len = model.params().get(id).len();
        for c in 0..len {
            groups.entry(group_of(model.params().name(id))).or_default().push((id, c));
        }
    }
    // Five-point central difference: truncation O(h^4), so a larger step
    // keeps round-off far below the tolerance.
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut checked = 0;
    for coords in groups.values() {
        for _ in 0..20 {
            let (id, c) = coords[rng.gen_range(0..coords.len())];
            let a = grads.get(id).map_or(0.0, |t| t.data()[c]);
            let orig = model.params().get(id).data()[c];
            let mut at = |x: f64| {
                model.params_mut().get_mut(id).data_mut()[c] = x;
                loss(&model)
            };
            let (p1, m1, p2, m2) = (at(orig + h), at(orig - h), at(orig + 2.0 * h), at(orig - 2.0 * h));
            at(orig);
            let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
            if rel > worst {
                worst = rel;
                worst_at = format!("{}[{c}] analytic {a:.3e} numeric {fd:.3e}", model.params().name(id));
            }
            checked += 1;
        }
    }
    outcome(
        worst < 1e-4,
        format!(
            "{checked} coordinates over {} groups, worst relative error {worst:.2e} at {worst_at}",
            groups.len()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn forward_statistics() -> Outcome {
    let x0: Vec<u32> = (0..100_000u32).map(|i| 2 + i % 50).collect();
    let mut worst: f64 = 0.0;
    let mut all_mask = false;
    for (s, t) in [0.1, 0.3, 0.7, 1.0].into_iter().enumerate() {
        let (xt, m) = forward_mask(&x0, t, 500 + s as u64).unwrap();
        let frac = m.iter().filter(|&&b| b).count() as f64 / x0.len() as f64;
        worst = worst.max((frac - t).abs());
        if t == 1.0 {
            all_mask = xt.iter().all(|&x| x == partgen::tokenizer::MASK);
        }
    }
    outcome(
        worst <= 0.02 && all_mask,
        format!("max |fraction - t| = {worst:.4}, t=1 all MASK: {all_mask}"),
    )
}

// ---------------------------------------------------------------- 6

fn oracle_sampler() -> Outcome {
    let cfg = PipelineConfig::toy();
    let vocab = cfg.vocab().unwrap();
    let l = cfg.block_len;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut exact = 0;
    let mut total = 0;
    for fam in ShapeFamily::ALL {
        let (mesh, labels) = synth_shape(fam, &mut rng).unwrap();
        let mesh = normalize_to_unit_cube(&mesh).unwrap();
        let s = serialize_mesh(&mesh, &labels, 0, &cfg).unwrap();
        let truth = TokenSequence::new(s.tokens, l).unwrap();
        let oracle = OracleDenoiser::new(&truth, vocab.size()).unwrap();
        let cond = partgen::pipeline::blank_conditions::<f32>(truth.block_count());
        let mut outs = Vec::new();
        for k in [1, 2, 4, l] {
            let out = sample(&cond, &oracle, &SamplerConfig { k, ..Default::default() }).unwrap();
            outs.push(out.tokens);
        }
        total += 1;
        if outs.iter().all(|o| *o == truth) {
            exact += 1;
        }
    }
    outcome(exact == total, format!("{exact}/{total} sequences reproduced for k in {{1,2,4,{l}}}"))
}

// ---------------------------------------------------------------- 7, 8

struct Overfit {
    cfg: PipelineConfig,
    model: PartDiffusionModel<f32>,
    manifest: DatasetManifest,
    epochs: usize,
    train_secs: f64,
}

fn overfit_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::toy();
    for (k, v) in [
        ("data.augment", "false"),
        ("train.batch_size", "8"),
        ("train.epochs", "5000"),
        ("train.val_every", "0"),
        ("train.checkpoint_every", "0"),
        ("train.target_nats", "0.003"),
        ("optim.peak_lr", "2e-3"),
        ("optim.warmup", "50"),
        ("metric.n_points", "8192"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn overfit_run(dir: &Path) -> Overfit {
    let cfg = overfit_config();
    let corpus = synth_data(8, &ShapeFamily::ALL, 7, dir.join("corpus")).unwrap();
    let mut manifest = preprocess(&corpus, &cfg, dir.join("data")).unwrap().manifest;
    for e in &mut manifest.entries {
        e.split = Split::Train;
    }
    let start = Instant::now();
    let out = train::<f32>(&manifest, &cfg, dir.join("run"), false, &mut |_| {}).unwrap();
    Overfit {
        cfg,
        epochs: out.epochs.len(),
        model: out.model,
        manifest,
        train_secs: start.elapsed().as_secs_f64(),
    }
}

fn overfit_reconstruction(o: &Overfit) -> Outcome {
    let entries: Vec<&ManifestEntry> = o.manifest.entries.iter().collect();
    let samples: Vec<TrainSample<f32>> = load_samples(&entries, o.cfg.block_len).unwrap();
    let (_, nats) = evaluate_loss(&o.model, &samples, &o.cfg.noise_schedule(), &EVAL_TIMES, 0).unwrap();
    let mut cfg = o.cfg.clone();
    cfg.k = 1;
    let s = eval_entries(&entries, EvalSource::Model(&o.model), &cfg, 0).unwrap();
    outcome(
        nats < 0.05 && s.mean_cd_x1000 < 5.0 && s.mean_f1 > 0.9,
        format!(
            "{} params, {} epochs in {:.0}s, train {nats:.4} nats/token, k=1 mean cd_x1000 {:.4}, f1 {:.4}",
            o.model.params().num_scalars(),
            o.epochs,
            o.train_secs,
            s.mean_cd_x1000,
            s.mean_f1
        ),
    )
}

fn k_trend(o: &Overfit) -> Outcome {
    let entries: Vec<&ManifestEntry> = o.manifest.entries.iter().collect();
    let rows = ablate_k(&entries, EvalSource::Model(&o.model), &o.cfg, &[1, 2, 4], 0, None).unwrap();
    let cd_ok = rows.windows(2).all(|w| w[1].mean_cd_x1000 >= w[0].mean_cd_x1000);
    let time_ok = rows.windows(2).all(|w| w[1].mean_time_s <= w[0].mean_time_s);
    let detail = rows
        .iter()
        .map(|r| format!("k={} cd_x1000 {:.4} time {:.3}s", r.k, r.mean_cd_x1000, r.mean_time_s))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(cd_ok && time_ok, detail)
}

// ---------------------------------------------------------------- 9

fn brute_nn(a: &[Point3<f64>], b: &[Point3<f64>]) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
                    dx * dx + dy * dy + dz * dz
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn brute_metrics(a: &[Point3<f64>], b: &[Point3<f64>], tau: f64) -> (f64, f64, f64) {
    let (ab, ba) = (brute_nn(a, b), brute_nn(b, a));
    let mean = |v: &[f64]| {
        let mut s = 0.0;
        for &x in v {
            s += x;
        }
        s / v.len() as f64
    };
    let cd = (mean(&ab) + mean(&ba)) / 2.0;
    let hd = ab.iter().chain(&ba).fold(0.0f64, |m, &x| m.max(x)).sqrt();
    let frac = |v: &[f64]| v.iter().filter(|&&x| x < tau * tau).count() as f64 / v.len() as f64;
    let (p, r) = (frac(&ab), frac(&ba));
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (cd, hd, f1)
}

fn perm_min(cost: &[f64], n: usize) -> f64 {
    fn rec(cost: &[f64], n: usize, i: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if i == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                rec(cost, n, i + 1, used, acc + cost[i * n + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
    best / n as f64
}

/// Forward auction with epsilon scaling; optimal within `n * eps_final`.
fn auction_min(cost: &[f64], n: usize) -> f64 {
    let cmax = cost.iter().copied().fold(0.0, f64::max);
    let mut price = vec![0.0; n];
    let mut eps = cmax / 4.0 + 1e-12;
    let eps_final = 1e-10 / n as f64;
    let mut owner: Vec<Option<usize>>;
    let mut assigned: Vec<Option<usize>>;
    loop {
        owner = vec![None; n];
        assigned = vec![None; n];
        let mut free: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = free.pop() {
            let (mut best, mut second, mut bj) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for j in 0..n {
                let v = -cost[i * n + j] - price[j];
                if v > best {
                    second = best;
                    best = v;
                    bj = j;
                } else if v > second {
                    second = v;
                }
            }
            let bid = if n == 1 { eps } else { best - second + eps };
            price[bj] += bid;
            if let Some(prev) = owner[bj] {
                assigned[prev] = None;
                free.push(prev);
            }
            owner[bj] = Some(i);
            assigned[i] = Some(bj);
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 5.0).max(eps_final);
    }
    (0..n).map(|i| cost[i * n + assigned[i].unwrap()]).sum::<f64>() / n as f64
}

fn dist_matrix(a: &[Point3<f64>], b: &[Point3<f64>]) -> Vec<f64> {
    let mut c = Vec::new();
    for p in a {
        for q in b {
            c.push(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt());
        }
    }
    c
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut exact = 0;
    let cloud = |rng: &mut ChaCha8Rng, n| -> Vec<Point3<f64>> { (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect() };
    for _ in 0..100 {
        let (na, nb) = (rng.gen_range(1..=256), rng.gen_range(1..=256));
        let (a, b) = (cloud(&mut rng, na), cloud(&mut rng, nb));
        let tau = rng.gen_range(0.01..0.3);
        let (cd, hd, f1) = brute_metrics(&a, &b, tau);
        if chamfer(&a, &b).unwrap() == cd && hausdorff(&a, &b).unwrap() == hd && f1_score(&a, &b, tau).unwrap().f1 == f1 {
            exact += 1;
        }
    }
    let mut worst_small: f64 = 0.0;
    for n in 1..=8 {
        for _ in 0..3 {
            let (a, b) = (cloud(&mut rng, n), cloud(&mut rng, n));
            let truth = perm_min(&dist_matrix(&a, &b), n);
            for n_exact in [0, 256] {
                let e = emd(&a, &b, n_exact).unwrap().cost;
                worst_small = worst_small.max((e - truth).abs() / truth.max(1e-12));
            }
        }
    }
    let mut worst_large: f64 = 0.0;
    for n in [16usize, 64, 128, 256] {
        let (a, b) = (cloud(&mut rng, n), cloud(&mut rng, n));
        let truth = auction_min(&dist_matrix(&a, &b), n);
        for n_exact in [0, 256] {
            let e = emd(&a, &b, n_exact).unwrap().cost;
            worst_large = worst_large.max((e - truth).abs() / truth);
        }
    }
    outcome(
        exact == 100 && worst_small <= 0.01 && worst_large <= 0.01,
        format!(
            "CD/HD/F1 bit-exact {exact}/100; EMD worst rel. error {worst_small:.2e} (n<=8), {worst_large:.2e} (n<=256)"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn data_conformance(dir: &Path) -> Outcome {
    let mut bounds_ok = true;
    for cap in [1usize, 4, 8, 16, 40] {
        for f in 1..=10_000usize {
            let k_min = ((f as f64 * 0.5 / 500.0).floor() as usize).min(cap).max(1);
            let k_max = ((f as f64 * 2.0 / 500.0).floor() as usize).min(cap).max(k_min);
            let b = cluster_bounds(f, cap);
            bounds_ok &= b.k_min == k_min && b.k_max == k_max;
        }
    }
    let filter_ok = check_block_length(128, 128, 1024).is_ok()
        && check_block_length(1024, 128, 1024).is_ok()
        && check_block_length(127, 128, 1024).is_err()
        && check_block_length(1025, 128, 1024).is_err();
    let cfg = PipelineConfig::toy();
    let corpus = synth_data(200, &ShapeFamily::ALL, 11, dir.join("corpus")).unwrap();
    let report = preprocess(&corpus, &cfg, dir.join("data")).unwrap();
    let counts = report.manifest.mesh_counts();
    let kept = report.meshes_kept as f64;
    let get = |s| *counts.get(&s).unwrap_or(&0) as f64;
    let split_ok = (get(Split::Train) - kept * 9.0 / 11.0).abs() <= 1.0
        && (get(Split::Val) - kept / 11.0).abs() <= 1.0
        && (get(Split::Test) - kept / 11.0).abs() <= 1.0;
    let mut pairs_ok = report.meshes_kept == 200;
    let mut by_mesh: std::collections::HashMap<&str, Vec<&ManifestEntry>> = Default::default();
    for e in &report.manifest.entries {
        by_mesh.entry(e.mesh_id.as_str()).or_default().push(e);
    }
    for es in by_mesh.values() {
        pairs_ok &= es.len() == if es[0].parts > 1 { 2 } else { 1 };
        pairs_ok &= es.iter().all(|e| e.split == es[0].split);
    }
    outcome(
        bounds_ok && filter_ok && split_ok && pairs_ok,
        format!(
            "cluster_bounds {bounds_ok}, block filter {filter_ok}, split {}/{}/{} of {} kept, pairs co-located {pairs_ok}",
            get(Split::Train),
            get(Split::Val),
            get(Split::Test),
            report.meshes_kept
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        println!(
            "[{}] criterion {id:2} {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        results.push((id, name, o));
    };
    run(1, "tokenizer round trip", &mut tokenizer_round_trip);
    run(2, "composite mask oracle", &mut mask_equivalence);
    run(3, "information-flow causality", &mut causality);
    run(4, "gradient check", &mut gradient_check);
    run(5, "forward masking statistics", &mut forward_statistics);
    run(6, "oracle sampler exactness", &mut oracle_sampler);
    let overfit = overfit_run(&tmp.path().join("overfit"));
    run(7, "overfit reconstruction", &mut || overfit_reconstruction(&overfit));
    run(8, "k versus quality trend", &mut || k_trend(&overfit));
    run(9, "metric oracles", &mut metrics_oracle);
    run(10, "data preparation conformance", &mut || data_conformance(&tmp.path().join("corpus200")));
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
