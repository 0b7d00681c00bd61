//! Synthetic EEG generation, windowing, labeling, splits, and persistence.

mod format;
mod label;
mod split;
mod synth;
mod types;

pub use format::{
    decode_dataset, encode_dataset, export_metadata_csv, read_dataset, write_dataset,
    DATASET_FORMAT_VERSION,
};
pub use label::{label_fatigue, segment_trial, FatigueLabel};
pub use split::{all_segments, loso_split, train_val_split, LabeledSegment, Split, ValSplit};
pub use synth::generate_synthetic;
pub use types::{ClassSignature, ClassSpec, EEGDataset, Segment, SubjectData, SyntheticSpec};
