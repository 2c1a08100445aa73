use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use partgen::diffusion::OracleDenoiser;
use partgen::pipeline::{
    ablate_k, ablation_csv, blank_conditions, eval_split, generate, load_condition_input, load_model,
    preprocess, read_corpus, synth_data, train, write_generated, DatasetManifest, EvalSource,
    PipelineConfig, ShapeFamily, Split,
};
use partgen::tokenizer::read_token_file;

#[derive(Parser)]
#[command(name = "pd", version, about = "Part-wise mesh generation with block masked diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// key=value config file (`#` starts a comment).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small CPU preset instead of the defaults.
    #[arg(long)]
    toy: bool,
    /// Override one key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `sampler.k`.
    #[arg(long)]
    k: Option<usize>,
    /// Shorthand for `sampler.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `sampler.temperature` (0 means argmax).
    #[arg(long)]
    temperature: Option<f64>,
    /// Shorthand for `diffusion.schedule` (linear or cosine).
    #[arg(long)]
    schedule: Option<String>,
}

impl ConfigArgs {
    /// Base config (file, preset, or `fallback`) with every override applied.
    fn resolve(&self, fallback: Option<PipelineConfig>) -> Result<PipelineConfig> {
        let mut cfg = match (&self.config, fallback) {
            (Some(path), _) => PipelineConfig::load(path)?,
            (None, Some(c)) => c,
            (None, None) if self.toy => PipelineConfig::toy(),
            (None, None) => PipelineConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k, v)?;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(s) = self.seed {
            cfg.sample_seed = s;
        }
        if let Some(t) = self.temperature {
            cfg.temperature = t;
        }
        if let Some(s) = &self.schedule {
            cfg.set("diffusion.schedule", s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a parametric multi-part mesh corpus with ground-truth labels.
    SynthData {
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Comma-separated: table, dumbbell, stacked-boxes, l-bracket.
        #[arg(long, value_delimiter = ',')]
        families: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, segment, serialize, tokenize and split a corpus.
    Preprocess {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train on the train split of a preprocessed dataset.
    Train {
        /// Preprocessed dataset directory (holds manifest.tsv).
        #[arg(long)]
        data: PathBuf,
        /// Run directory; defaults to `run.dir`.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a mesh for one condition input.
    Sample {
        #[arg(long, required_unless_present = "oracle_tokens")]
        checkpoint: Option<PathBuf>,
        /// `.obj` mesh (optional `.labels` sidecar) or `.pts` labeled cloud.
        #[arg(long, required_unless_present = "oracle_tokens")]
        input: Option<PathBuf>,
        /// Replay a token file through the sampler instead of a model.
        #[arg(long)]
        oracle_tokens: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "sample")]
        name: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score one split and write per-sample metrics plus a summary row.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate once per commit size k and report the trend.
    AblateK {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
        ks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args)]
struct SourceArgs {
    #[arg(long, conflicts_with_all = ["oracle", "ground_truth"])]
    checkpoint: Option<PathBuf>,
    /// Sample the stored token sequences with the one-hot oracle.
    #[arg(long)]
    oracle: bool,
    /// Score the references against themselves.
    #[arg(long)]
    ground_truth: bool,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn eval_like(
    data: &Path,
    split: &str,
    source: &SourceArgs,
    cfg: &ConfigArgs,
    run: impl FnOnce(&DatasetManifest, Split, EvalSource<'_, f32>, &PipelineConfig) -> Result<()>,
) -> Result<()> {
    let manifest = DatasetManifest::load(data)?;
    let split: Split = split.parse()?;
    match &source.checkpoint {
        Some(path) => {
            let (model, saved, _) = load_model::<f32>(path, None)?;
            let c = cfg.resolve(if cfg.config.is_some() { None } else { Some(saved) })?;
            run(&manifest, split, EvalSource::Model(&model), &c)
        }
        None if source.oracle => run(&manifest, split, EvalSource::Oracle, &cfg.resolve(None)?),
        None if source.ground_truth => run(&manifest, split, EvalSource::GroundTruth, &cfg.resolve(None)?),
        None => bail!("pass --checkpoint, --oracle or --ground-truth"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SynthData {
            count,
            families,
            seed,
            out,
        } => {
            let fams = if families.is_empty() {
                ShapeFamily::ALL.to_vec()
            } else {
                families.iter().map(|f| f.parse()).collect::<Result<_, _>>()?
            };
            let entries = synth_data(count, &fams, seed, &out)?;
            println!("wrote {} meshes to {}", entries.len(), out.display());
        }
        Command::Preprocess { corpus, out, cfg } => {
            let cfg = cfg.resolve(None)?;
            let corpus = read_corpus(&corpus)?;
            let report = preprocess(&corpus, &cfg, &out)?;
            for line in &report.log {
                eprintln!("{line}");
            }
            let counts = report.manifest.mesh_counts();
            println!(
                "kept {}/{} meshes, {} samples; split train/val/test = {}/{}/{}",
                report.meshes_kept,
                report.meshes_in,
                report.manifest.entries.len(),
                counts.get(&Split::Train).unwrap_or(&0),
                counts.get(&Split::Val).unwrap_or(&0),
                counts.get(&Split::Test).unwrap_or(&0)
            );
        }
        Command::Train {
            data,
            run,
            resume,
            cfg,
        } => {
            let cfg = cfg.resolve(None)?;
            let manifest = DatasetManifest::load(&data)?;
            let dir = run.unwrap_or_else(|| cfg.run_dir.clone());
            let out = train::<f32>(&manifest, &cfg, &dir, resume, &mut |s| {
                match s.val {
                    Some((l, n)) => println!(
                        "epoch {:4}  loss {:.4}  nats/token {:.4}  val {:.4} / {:.4}",
                        s.epoch, s.loss, s.nats_per_token, l, n
                    ),
                    None => println!("epoch {:4}  loss {:.4}  nats/token {:.4}", s.epoch, s.loss, s.nats_per_token),
                }
            })?;
            println!("checkpoint: {}", out.last_checkpoint.display());
        }
        Command::Sample {
            checkpoint,
            input,
            oracle_tokens,
            out,
            name,
            cfg,
        } => {
            let gen = match oracle_tokens {
                Some(tok) => {
                    let cfg = cfg.resolve(None)?;
                    let seq = read_token_file(&tok)?;
                    let vocab = cfg.vocab()?;
                    let oracle = OracleDenoiser::new(&seq, vocab.size())?;
                    cfg.freeze(&out)?;
                    generate(&oracle, &blank_conditions::<f32>(seq.block_count()), &cfg.sampler(), &vocab)?
                }
                None => {
                    let ckpt = checkpoint.context("--checkpoint is required")?;
                    let (model, saved, _) = load_model::<f32>(&ckpt, None)?;
                    let cfg = cfg.resolve(if cfg.config.is_some() { None } else { Some(saved) })?;
                    if cfg.model != *model.config() {
                        bail!("checkpoint model settings differ from the config");
                    }
                    let cloud = load_condition_input::<f32>(input.context("--input is required")?, &cfg)?;
                    let cond = model.encode(&cloud)?;
                    cfg.freeze(&out)?;
                    generate(&model, &cond, &cfg.sampler(), &cfg.vocab()?)?
                }
            };
            let path = write_generated(&gen, &out, &name)?;
            println!(
                "wrote {} ({} faces, {} parts, {} malformed fragments, {} model calls)",
                path.display(),
                gen.merged.faces().len(),
                gen.parts.len(),
                gen.malformed_total(),
                gen.model_calls
            );
        }
        Command::Eval {
            data,
            split,
            source,
            out,
            cfg,
        } => eval_like(&data, &split, &source, &cfg, |m, split, src, c| {
            let s = eval_split(m, split, src, c, c.sample_seed)?;
            write(&out, &s.to_csv())?;
            if let Some(dir) = out.parent() {
                c.freeze(dir)?;
            }
            println!(
                "{} meshes: cd_x1000 {:.4}  hd {:.4}  emd {:.4}  f1 {:.4}  time {:.3}s",
                s.rows.len(),
                s.mean_cd_x1000,
                s.mean_hd,
                s.mean_emd,
                s.mean_f1,
                s.mean_time_s
            );
            Ok(())
        })?,
        Command::AblateK {
            data,
            split,
            source,
            ks,
            out,
            cfg,
        } => eval_like(&data, &split, &source, &cfg, |m, split, src, c| {
            let entries: Vec<_> = m.split(split).into_iter().filter(|e| e.aug == 0).collect();
            let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
            std::fs::create_dir_all(&dir)?;
            let rows = ablate_k(&entries, src, c, &ks, c.sample_seed, Some(&dir))?;
            let csv = ablation_csv(&rows);
            write(&out, &csv)?;
            print!("{csv}");
            Ok(())
        })?,
    }
    Ok(())
}
