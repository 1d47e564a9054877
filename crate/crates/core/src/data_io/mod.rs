//! On-disk manifests (JSON-Lines) and vector files (`REIDVEC1`).

mod manifest;
mod vectors;

pub use manifest::{
    load_manifest, manifest_to_string, parse_manifest, save_manifest, ClassLabel, Condition,
    ItemRecord, Kind, Manifest, Split,
};
pub use vectors::{
    decode_matrix, decode_vectors, encode_vectors, load_vectors, save_vectors,
    save_vectors_with_crc, EmbeddingSet, HEADER_LEN, MAGIC, UNIT_NORM_TOL,
};

pub(crate) use vectors::row_norm;
