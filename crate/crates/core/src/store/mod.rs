//! Embedding, label and class-name files, dataset manifests, and few-shot
//! episode sampling.

mod dataset;
mod episode;
pub mod format;

pub(crate) use dataset::check_aligned;
pub use dataset::{
    load_dataset, parse_key_values, ClassSpace, Dataset, DatasetManifest, EmbeddingTable, LabelVector, Split,
    NORMALIZED_TOL,
};
pub use episode::{sample_episode, split_validation, validation_size, Episode, Shortfall, DEFAULT_SHOTS};
pub use format::{
    decode_labels, decode_matrix, encode_labels, encode_matrix, read_class_names, read_labels, read_matrix,
    write_atomic, write_class_names, write_labels, write_matrix, MatrixMetadata,
};
