use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use super::config::PipelineConfig;
use super::preprocess::{DatasetManifest, ManifestEntry, Split};
use super::sample::{blank_conditions, generate};
use crate::conditioning::LabeledPointCloud;
use crate::diffusion::OracleDenoiser;
use crate::error::{Error, Result};
use crate::mesh::{load_obj, TriangleMesh};
use crate::metrics::{evaluate_pair, MetricReport};
use crate::scalar::Scalar;
use crate::tokenizer::read_token_file;
use crate::transformer::PartDiffusionModel;

/// Source of the meshes being scored.
#[derive(Clone, Copy)]
pub enum EvalSource<'a, T> {
    Model(&'a PartDiffusionModel<T>),
    /// Replays the stored tokens through the sampler.
    Oracle,
    /// Scores the reference against itself.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub report: MetricReport,
    pub time_s: f64,
    pub malformed: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    pub mean_cd_x1000: f64,
    pub mean_hd: f64,
    pub mean_emd: f64,
    pub mean_f1: f64,
    pub mean_time_s: f64,
}

impl EvalSummary {
    pub const CSV_HEADER: &'static str = "id,n_points,tau,cd_x1000,hd,emd,f1,flags,time_s,malformed";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let mut flags = r.report.csv_row(&r.id);
            if let Some(e) = &r.error {
                flags.push_str(&format!("|error={}", e.replace([',', '\n'], ";")));
            }
            let _ = writeln!(s, "{flags},{:.6},{}", r.time_s, r.malformed);
        }
        let (n, tau) = self
            .rows
            .first()
            .map_or((0, 0.0), |r| (r.report.n_points, r.report.tau));
        let total_malformed: usize = self.rows.iter().map(|r| r.malformed).sum();
        let _ = writeln!(
            s,
            "mean,{n},{tau},{:.6},{:.6},{:.6},{:.6},summary,{:.6},{total_malformed}",
            self.mean_cd_x1000, self.mean_hd, self.mean_emd, self.mean_f1, self.mean_time_s
        );
        s
    }
}

fn one<T: Scalar>(
    entry: &ManifestEntry,
    source: EvalSource<'_, T>,
    cfg: &PipelineConfig,
) -> Result<(TriangleMesh<T>, f64, usize)> {
    let vocab = cfg.vocab()?;
    let sampler = cfg.sampler();
    let start = Instant::now();
    let (mesh, malformed) = match source {
        EvalSource::Model(model) => {
            let cloud = LabeledPointCloud::<T>::load(&entry.cond)?;
            let cond = model.encode(&cloud)?;
            let g = generate(model, &cond, &sampler, &vocab)?;
            let m = g.malformed_total();
            (g.mesh, m)
        }
        EvalSource::Oracle => {
            let seq = read_token_file(&entry.tokens)?;
            let oracle = OracleDenoiser::new(&seq, vocab.size())?;
            let g = generate(&oracle, &blank_conditions::<T>(seq.block_count()), &sampler, &vocab)?;
            let m = g.malformed_total();
            (g.mesh, m)
        }
        EvalSource::GroundTruth => (load_obj(&entry.reference)?, 0),
    };
    Ok((mesh, start.elapsed().as_secs_f64(), malformed))
}

/// Scores every mesh of `split` (first serialization only). Failures become
/// sentinel rows; the means include them.
pub fn eval_split<T: Scalar>(
    manifest: &DatasetManifest,
    split: Split,
    source: EvalSource<'_, T>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EvalSummary> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).into_iter().filter(|e| e.aug == 0).collect();
    eval_entries(&entries, source, cfg, seed)
}

pub fn eval_entries<T: Scalar>(
    entries: &[&ManifestEntry],
    source: EvalSource<'_, T>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<EvalSummary> {
    if entries.is_empty() {
        return Err(Error::invalid("nothing to evaluate: split is empty"));
    }
    let metric = cfg.metric();
    let mut rows = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let pair_seed = seed.wrapping_add(i as u64);
        let result = one(e, source, cfg).and_then(|(mesh, time, malformed)| {
            let reference: TriangleMesh<T> = load_obj(&e.reference)?;
            Ok((evaluate_pair(&mesh, &reference, &metric, pair_seed)?, time, malformed))
        });
        rows.push(match result {
            Ok((report, time_s, malformed)) => EvalRow {
                id: e.id.clone(),
                report,
                time_s,
                malformed,
                error: None,
            },
            Err(err) => EvalRow {
                id: e.id.clone(),
                report: MetricReport::sentinel(metric.n_points, metric.tau),
                time_s: 0.0,
                malformed: 0,
                error: Some(err.to_string()),
            },
        });
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(EvalSummary {
        mean_cd_x1000: mean(&|r| r.report.cd_x1000),
        mean_hd: mean(&|r| r.report.hd),
        mean_emd: mean(&|r| r.report.emd),
        mean_f1: mean(&|r| r.report.f1),
        mean_time_s: mean(&|r| r.time_s),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub k: usize,
    pub steps: usize,
    pub mean_time_s: f64,
    pub mean_cd_x1000: f64,
    pub mean_hd: f64,
    pub mean_f1: f64,
}

pub const ABLATION_HEADER: &str = "k,steps,mean_time_s,mean_cd_x1000,mean_hd,mean_f1";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.k, r.steps, r.mean_time_s, r.mean_cd_x1000, r.mean_hd, r.mean_f1
        );
    }
    s
}

/// Runs [`eval_entries`] once per `k`; per-k CSVs go to `out_dir` if given.
pub fn ablate_k<T: Scalar>(
    entries: &[&ManifestEntry],
    source: EvalSource<'_, T>,
    cfg: &PipelineConfig,
    ks: &[usize],
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || cfg.block_len % k != 0) {
        return Err(Error::invalid(format!("k = {bad} does not divide {}", cfg.block_len)));
    }
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut c = cfg.clone();
        c.k = k;
        let s = eval_entries(entries, source, &c, seed)?;
        if let Some(dir) = out_dir {
            let p = dir.join(format!("eval_k{k}.csv"));
            std::fs::write(&p, s.to_csv()).map_err(|e| Error::io(&p, e))?;
        }
        out.push(AblationRow {
            k,
            steps: cfg.block_len / k,
            mean_time_s: s.mean_time_s,
            mean_cd_x1000: s.mean_cd_x1000,
            mean_hd: s.mean_hd,
            mean_f1: s.mean_f1,
        });
    }
    Ok(out)
}
