//! Checkpoints, run configuration and NDJSON logs.

mod checkpoint;
mod config;
pub mod image;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_manifest, save_checkpoint, ArrayDesc, Checkpoint,
    DiscLayerDesc, GenLayerDesc, Manifest, TrainingState, FORMAT_VERSION, MAGIC,
};
pub use config::{MetricsConfig, ModelConfig, RunConfig};

use std::io::Write;

use serde::Serialize;

/// One compact JSON object per line.
pub fn write_ndjson<W: Write, S: Serialize>(mut out: W, records: impl IntoIterator<Item = S>) -> crate::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n").map_err(serde_json::Error::io)?;
    }
    Ok(())
}

pub fn ndjson_string<S: Serialize>(records: impl IntoIterator<Item = S>) -> String {
    let mut buf = Vec::new();
    write_ndjson(&mut buf, records).expect("in-memory write");
    String::from_utf8(buf).expect("JSON is UTF-8")
}
