use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_idx, ArcSpec, IdxOptions, LabeledDataset, SegmentSpec};
use crate::error::{Error, Result};

/// Where a run's training data comes from. Relative paths resolve against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Segments(SegmentSpec),
    Arcs(ArcSpec),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        downsample: bool,
        #[serde(default)]
        classes: Option<Vec<u8>>,
    },
    /// One `{"label": k, "values": [...]}` object per line.
    Ndjson { path: PathBuf },
}

impl DatasetSource {
    pub fn load(&self, seed: u64, base: &Path) -> Result<LabeledDataset<f64>> {
        match self {
            DatasetSource::Segments(s) => s.generate(seed),
            DatasetSource::Arcs(a) => a.generate(seed),
            DatasetSource::Idx {
                images,
                labels,
                limit,
                downsample,
                classes,
            } => {
                let opts = IdxOptions {
                    limit: *limit,
                    downsample: *downsample,
                    classes: classes.clone(),
                };
                load_idx(&base.join(images), &base.join(labels), &opts)
            }
            DatasetSource::Ndjson { path } => {
                let full = base.join(path);
                let file = std::fs::File::open(&full).map_err(|e| Error::io(&full, e))?;
                LabeledDataset::read_ndjson(std::io::BufReader::new(file))
            }
        }
    }
}
