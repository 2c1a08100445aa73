//! End-to-end driver: synthetic corpus, preprocessing, training, sampling,
//! evaluation and the commit-size ablation.

mod config;
mod eval;
mod preprocess;
mod sample;
mod synth;
mod train;

pub use config::PipelineConfig;
pub use eval::{ablate_k, ablation_csv, eval_entries, eval_split, AblationRow, EvalRow, EvalSource, EvalSummary, ABLATION_HEADER};
pub use preprocess::{
    face_histogram, merge_parts, pick_starts, preprocess, serialize_mesh, split_sizes, DatasetManifest, ManifestEntry,
    PreprocessReport, Serialization, Split, MANIFEST_FILE,
};
pub use sample::{blank_conditions, decode_blocks, generate, load_condition_input, write_generated, Generated};
pub use synth::{read_corpus, synth_data, synth_shape, CorpusEntry, ShapeFamily, CORPUS_LIST};
pub use train::{load_model, load_samples, save_checkpoint, train, EpochStats, TrainOutcome, EVAL_TIMES, LAST_CHECKPOINT};
