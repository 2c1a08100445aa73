use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::PipelineConfig;
use super::preprocess::merge_parts;
use crate::conditioning::{build_labeled_cloud, ConditionSet, LabeledPointCloud};
use crate::diffusion::{sample, Denoiser, SamplerConfig};
use crate::error::{Error, Result};
use crate::mesh::{dequantize, load_obj, normalize_to_unit_cube, save_obj, QuantizedMesh, TriangleMesh};
use crate::part_graph::{bfs_part_order, build_adjacency, cluster_bounds, segment_mesh, PartLabeling};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{detokenize_part, write_token_text, TokenSequence, TokenVocabulary};

/// Decoded output of one sampling run.
#[derive(Clone, Debug)]
pub struct Generated<T> {
    pub tokens: TokenSequence,
    pub parts: Vec<QuantizedMesh>,
    pub merged: QuantizedMesh,
    pub mesh: TriangleMesh<T>,
    pub malformed: Vec<usize>,
    pub degenerate: Vec<usize>,
    pub model_calls: usize,
}

impl<T> Generated<T> {
    pub fn malformed_total(&self) -> usize {
        self.malformed.iter().sum()
    }
}

/// Decodes every block (never fails on bad tokens) and merges the parts.
pub fn decode_blocks<T: Scalar>(tokens: TokenSequence, vocab: &TokenVocabulary, model_calls: usize) -> Generated<T> {
    let mut parts = Vec::with_capacity(tokens.block_count());
    let mut malformed = Vec::new();
    let mut degenerate = Vec::new();
    for block in tokens.blocks() {
        let d = detokenize_part(block, vocab);
        parts.push(d.mesh);
        malformed.push(d.malformed);
        degenerate.push(d.degenerate_faces);
    }
    let merged = merge_parts(vocab.resolution(), &parts);
    Generated {
        mesh: dequantize(&merged),
        tokens,
        parts,
        merged,
        malformed,
        degenerate,
        model_calls,
    }
}

pub fn generate<T: Scalar, D: Denoiser<T> + ?Sized>(
    denoiser: &D,
    cond: &ConditionSet<T>,
    sampler: &SamplerConfig,
    vocab: &TokenVocabulary,
) -> Result<Generated<T>> {
    let out = sample(cond, denoiser, sampler)?;
    Ok(decode_blocks(out.tokens, vocab, out.model_calls))
}

/// Placeholder conditions for denoisers that ignore them.
pub fn blank_conditions<T: Scalar>(parts: usize) -> ConditionSet<T> {
    ConditionSet {
        global: Tensor::zeros(1, 1),
        parts: Tensor::zeros(parts, 1),
    }
}

/// Reads a `.pts` cloud as is, or builds one from an OBJ: normalized, labeled
/// from a `.labels` sidecar when present (segmented otherwise), and ordered
/// breadth-first from part 0.
pub fn load_condition_input<T: Scalar>(path: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<LabeledPointCloud<T>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pts") => LabeledPointCloud::load(path),
        Some("obj") => {
            let mesh = normalize_to_unit_cube(&load_obj::<T>(path)?)?;
            let sidecar = path.with_extension("labels");
            let labeling = if sidecar.exists() {
                PartLabeling::load(&sidecar)?
            } else {
                let bounds = cluster_bounds(mesh.faces().len(), cfg.cluster_cap);
                segment_mesh(&mesh, bounds, cfg.segment_seed)
            };
            let order = bfs_part_order(&build_adjacency(&mesh, &labeling), 0)?;
            build_labeled_cloud(
                &mesh,
                &labeling.reordered(&order),
                cfg.points,
                cfg.points_min_per_part,
                cfg.sample_seed,
            )
        }
        _ => Err(Error::invalid(format!(
            "{}: expected a .obj mesh or a .pts cloud",
            path.display()
        ))),
    }
}

/// Writes `stem.obj`, `stem.partN.obj`, `stem.tokens.txt` and
/// `stem.report.txt` under `dir`; returns the merged OBJ path.
pub fn write_generated<T: Scalar>(gen: &Generated<T>, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let merged = dir.join(format!("{stem}.obj"));
    save_obj(&gen.mesh, &merged)?;
    for (i, p) in gen.parts.iter().enumerate() {
        save_obj(&dequantize::<T>(p), dir.join(format!("{stem}.part{i}.obj")))?;
    }
    write_token_text(&gen.tokens, dir.join(format!("{stem}.tokens.txt")))?;
    let mut report = String::from("part,faces,malformed,degenerate\n");
    for (i, p) in gen.parts.iter().enumerate() {
        let _ = writeln!(report, "{i},{},{},{}", p.faces().len(), gen.malformed[i], gen.degenerate[i]);
    }
    let rp = dir.join(format!("{stem}.report.txt"));
    std::fs::write(&rp, report).map_err(|e| Error::io(&rp, e))?;
    Ok(merged)
}
