use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::PipelineConfig;
use super::synth::CorpusEntry;
use crate::conditioning::build_labeled_cloud;
use crate::error::{Error, Result};
use crate::mesh::{dequantize, load_obj, normalize_to_unit_cube, quantize, save_obj, QuantizedMesh, TriangleMesh};
use crate::part_graph::{bfs_part_order, build_adjacency, cluster_bounds, segment_mesh, split_into_parts, PartLabeling};
use crate::tokenizer::{assemble, tokenize_part, write_token_file};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

/// One serialization of one mesh.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub mesh_id: String,
    pub split: Split,
    pub tokens: PathBuf,
    pub cond: PathBuf,
    pub reference: PathBuf,
    pub parts: usize,
    pub aug: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "id\tmesh_id\tsplit\ttokens\tcond\treference\tparts\taug";

impl DatasetManifest {
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Distinct meshes per split.
    pub fn mesh_counts(&self) -> HashMap<Split, usize> {
        let mut seen = HashSet::new();
        let mut out = HashMap::new();
        for e in &self.entries {
            if seen.insert(&e.mesh_id) {
                *out.entry(e.split).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut mesh_split = HashMap::new();
        for e in &self.entries {
            if !ids.insert(&e.id) {
                return Err(Error::Format(format!("duplicate id {}", e.id)));
            }
            if *mesh_split.entry(&e.mesh_id).or_insert(e.split) != e.split {
                return Err(Error::Format(format!("mesh {} appears in two splits", e.mesh_id)));
            }
            for p in [&e.tokens, &e.cond, &e.reference] {
                if !p.exists() {
                    return Err(Error::Format(format!("{}: missing {}", e.id, p.display())));
                }
            }
        }
        Ok(())
    }

    /// Paths are written relative to `dir`.
    pub fn to_text(&self, dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut s = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.id,
                e.mesh_id,
                e.split,
                rel(&e.tokens),
                rel(&e.cond),
                rel(&e.reference),
                e.parts,
                e.aug
            );
        }
        s
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text(dir)).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads `dir/manifest.tsv` (or the file itself) and validates it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(MANIFEST_FILE);
        }
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let c: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| Error::Parse {
                path: path.clone(),
                line: i + 1,
                msg: msg.to_string(),
            };
            if c.len() != 8 {
                return Err(bad("expected 8 tab-separated columns"));
            }
            entries.push(ManifestEntry {
                id: c[0].to_string(),
                mesh_id: c[1].to_string(),
                split: c[2].parse()?,
                tokens: dir.join(c[3]),
                cond: dir.join(c[4]),
                reference: dir.join(c[5]),
                parts: c[6].parse().map_err(|_| bad("bad part count"))?,
                aug: c[7].parse().map_err(|_| bad("bad augmentation index"))?,
            });
        }
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }
}

/// Mesh-level split sizes for a 9:1:1 ratio: `(train, val, test)`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let small = ((n as f64) / 11.0).round() as usize;
    let val = small.min(n);
    let test = small.min(n - val);
    (n - val - test, val, test)
}

/// Up to two distinct BFS start parts.
pub fn pick_starts<R: Rng>(parts: usize, augment: bool, rng: &mut R) -> Vec<usize> {
    if parts <= 1 || !augment {
        return vec![rng.gen_range(0..parts.max(1))];
    }
    rand::seq::index::sample(rng, parts, 2).into_vec()
}

/// Ordered quantized parts of one serialization, plus the relabeled faces.
pub struct Serialization {
    pub order: Vec<usize>,
    pub parts: Vec<QuantizedMesh>,
    pub tokens: Vec<u32>,
    pub labeling: PartLabeling,
}

/// Quantizes each part in BFS order from `start` and tokenizes it; fails if
/// any block violates the length filter.
pub fn serialize_mesh(
    mesh: &TriangleMesh<f64>,
    labeling: &PartLabeling,
    start: usize,
    cfg: &PipelineConfig,
) -> Result<Serialization> {
    let vocab = cfg.vocab()?;
    let adj = build_adjacency(mesh, labeling);
    let order = bfs_part_order(&adj, start)?;
    let parts: Vec<QuantizedMesh> = split_into_parts(mesh, labeling, &order)
        .iter()
        .map(|p| quantize(p, cfg.resolution))
        .collect();
    let mut blocks = Vec::with_capacity(parts.len());
    for (i, p) in parts.iter().enumerate() {
        let seq = tokenize_part(p, &vocab, cfg.block_len, cfg.len_min)
            .map_err(|e| Error::invalid(format!("part {i}: {e}")))?;
        blocks.push(seq.into_ids());
    }
    let tokens = assemble(&blocks, cfg.block_len)?.into_ids();
    Ok(Serialization {
        labeling: labeling.reordered(&order),
        order,
        parts,
        tokens,
    })
}

/// Merges parts on one grid; identical vertices across parts are shared.
pub fn merge_parts(resolution: u32, parts: &[QuantizedMesh]) -> QuantizedMesh {
    let faces = parts
        .iter()
        .flat_map(|p| (0..p.faces().len()).map(move |f| p.face_coords(f)));
    QuantizedMesh::from_coordinate_faces(resolution, faces).0
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreprocessReport {
    pub manifest: DatasetManifest,
    pub meshes_in: usize,
    pub meshes_kept: usize,
    /// `(mesh id, reason)`.
    pub skipped: Vec<(String, String)>,
    pub log: Vec<String>,
}

struct Prepared {
    mesh_id: String,
    entries: Vec<(String, PathBuf, PathBuf, usize, usize)>,
    reference: PathBuf,
}

fn prepare_mesh(entry: &CorpusEntry, idx: usize, cfg: &PipelineConfig, out: &Path, log: &mut Vec<String>) -> Result<Prepared> {
    let raw: TriangleMesh<f64> = load_obj(&entry.mesh)?;
    if raw.faces().len() >= cfg.face_cap {
        return Err(Error::invalid(format!(
            "{} faces, cap is {}",
            raw.faces().len(),
            cfg.face_cap
        )));
    }
    let mesh = normalize_to_unit_cube(&raw)?;
    let labeling = if cfg.use_gt_labels {
        PartLabeling::load(&entry.labels)?
    } else {
        let bounds = cluster_bounds(mesh.faces().len(), cfg.cluster_cap);
        segment_mesh(&mesh, bounds, cfg.segment_seed ^ idx as u64)
    };
    if labeling.labels().len() != mesh.faces().len() {
        return Err(Error::invalid("labeling does not match face count"));
    }
    if labeling.part_count() > cfg.model.max_blocks {
        return Err(Error::invalid(format!(
            "{} parts exceed max_blocks {}",
            labeling.part_count(),
            cfg.model.max_blocks
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.split_seed ^ (idx as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
    let starts = pick_starts(labeling.part_count(), cfg.augment, &mut rng);
    if cfg.augment && labeling.part_count() == 1 {
        log.push(format!("{}: single part, one serialization", entry.id));
    }
    let mut entries = Vec::new();
    let mut reference = None;
    for (aug, &start) in starts.iter().enumerate() {
        let s = serialize_mesh(&mesh, &labeling, start, cfg)?;
        let cloud = build_labeled_cloud(
            &mesh,
            &s.labeling,
            cfg.points,
            cfg.points_min_per_part,
            cfg.split_seed ^ ((idx as u64) << 8) ^ aug as u64,
        )?;
        let id = format!("{}_a{aug}", entry.id);
        let tok = out.join(format!("{id}.pdtk"));
        let cond = out.join(format!("{id}.pts"));
        write_token_file(&crate::tokenizer::TokenSequence::new(s.tokens, cfg.block_len)?, &tok)?;
        cloud.save(&cond)?;
        if reference.is_none() {
            let path = out.join(format!("{}.ref.obj", entry.id));
            let merged: TriangleMesh<f64> = dequantize(&merge_parts(cfg.resolution, &s.parts));
            save_obj(&merged, &path)?;
            reference = Some(path);
        }
        entries.push((id, tok, cond, s.order.len(), aug));
    }
    Ok(Prepared {
        mesh_id: entry.id.clone(),
        entries,
        reference: reference.expect("at least one serialization"),
    })
}

/// Face-count histogram with fixed-width bins.
pub fn face_histogram(counts: &[usize], bin: usize) -> String {
    let bin = bin.max(1);
    let top = counts.iter().copied().max().unwrap_or(0) / bin;
    let mut hist = vec![0usize; top + 1];
    for &c in counts {
        hist[c / bin] += 1;
    }
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for (i, h) in hist.iter().enumerate() {
        let _ = writeln!(s, "{},{},{h}", i * bin, (i + 1) * bin);
    }
    s
}

/// Filters, labels, serializes (two BFS starts per mesh when possible),
/// tokenizes and splits a corpus. Writes everything under `out_dir`.
pub fn preprocess(corpus: &[CorpusEntry], cfg: &PipelineConfig, out_dir: impl AsRef<Path>) -> Result<PreprocessReport> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    let out = out_dir.as_ref();
    let data = out.join("data");
    std::fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    cfg.freeze(out)?;

    let mut report = PreprocessReport {
        meshes_in: corpus.len(),
        ..Default::default()
    };
    let mut prepared = Vec::new();
    let mut face_counts = Vec::new();
    for (idx, entry) in corpus.iter().enumerate() {
        if let Ok(m) = load_obj::<f64>(&entry.mesh) {
            face_counts.push(m.faces().len());
        }
        match prepare_mesh(entry, idx, cfg, &data, &mut report.log) {
            Ok(p) => prepared.push(p),
            Err(e) => {
                report.log.push(format!("{}: skipped: {e}", entry.id));
                report.skipped.push((entry.id.clone(), e.to_string()));
            }
        }
    }
    if report.skipped.len() * 2 > corpus.len() {
        return Err(Error::invalid(format!(
            "{} of {} meshes skipped",
            report.skipped.len(),
            corpus.len()
        )));
    }
    report.meshes_kept = prepared.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.split_seed);
    let mut idx: Vec<usize> = (0..prepared.len()).collect();
    idx.shuffle(&mut rng);
    let (n_train, n_val, _) = split_sizes(prepared.len());
    let mut split_of = vec![Split::Test; prepared.len()];
    for (rank, &i) in idx.iter().enumerate() {
        split_of[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    for (p, split) in prepared.into_iter().zip(split_of) {
        for (id, tokens, cond, parts, aug) in p.entries {
            report.manifest.entries.push(ManifestEntry {
                id,
                mesh_id: p.mesh_id.clone(),
                split,
                tokens,
                cond,
                reference: p.reference.clone(),
                parts,
                aug,
            });
        }
    }
    report.manifest.validate()?;
    report.manifest.save(out)?;
    let hist = out.join("face_histogram.csv");
    std::fs::write(&hist, face_histogram(&face_counts, 250)).map_err(|e| Error::io(&hist, e))?;
    let log = out.join("preprocess.log");
    std::fs::write(&log, report.log.join("\n") + "\n").map_err(|e| Error::io(&log, e))?;
    Ok(report)
}
