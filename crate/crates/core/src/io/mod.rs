//! File formats: model manifest + CGMB weight blob, EIMS map stacks, PNG
//! montages and CSV reports.

pub mod blob;
pub mod eims;
pub mod images;
pub mod manifest;
pub mod tables;

pub use blob::{read_blob, write_blob, BlobContents, BlobEntry, BLOB_MAGIC, BLOB_VERSION};
pub use eims::{decode_eims, encode_eims, read_eims, write_eims, EIMS_MAGIC, EIMS_VERSION};
pub use images::{montage, to_pixels, write_png, Pixels};
pub use manifest::{load_model, load_model_from_manifest, save_model, Manifest, MANIFEST_VERSION};
pub use tables::{read_csv, write_csv, Provenance, Table};
