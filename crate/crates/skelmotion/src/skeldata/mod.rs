//! Skeleton-sequence ingestion, preprocessing, tuple splitting, positional
//! encoding inputs, synthetic data generation, and fold construction.

mod datagen;
mod folds;
mod io;
mod sequence;
mod synth;
mod tuples;

pub use datagen::{generate_dataset, DatagenSpec};
pub use folds::{make_folds, FoldSplit};
pub use io::{
    load_dataset, load_sequence, read_manifest, write_canonical, write_manifest, DatasetManifest,
    LoadedSample, ManifestEntry, SeqFormat,
};
pub use sequence::{frame_scale, preprocess, PreprocessStats, Role, SkeletonSequence};
pub use synth::{synthesize_pair, synthesize_sequence, PairedSequences, SynthClass, SynthConfig};
pub use tuples::{
    positional_encoding, positional_encoding_matrix, split_tuples, truncate_frames, TupleBatch,
};
