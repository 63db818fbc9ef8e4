//! Labeled datasets: synthetic multi-manifold generators, the IDX reader and
//! image transforms.

mod idx;
mod source;
mod synthetic;
mod transform;

pub use idx::{load_idx, parse_idx, IdxOptions};
pub use source::DatasetSource;
pub use synthetic::{gen_disconnected_arcs, gen_parallel_segments, nearest_arc, ArcSpec, SegmentSpec};
pub use transform::{apply_transform, TransformFamily, TransformKind};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `n` samples stored as rows of `samples`; each row reshapes to
/// `sample_shape` (e.g. `[14, 14]` for images, `[d]` for vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub samples: Tensor<T>,
    pub sample_shape: Vec<usize>,
    /// Manifold index per sample, in `[0, num_manifolds)`.
    pub labels: Option<Vec<usize>>,
    pub num_manifolds: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<usize>,
    /// `x` lets sample records from the generator be read back directly.
    #[serde(alias = "x")]
    values: Vec<f64>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        samples: Tensor<T>,
        sample_shape: Vec<usize>,
        labels: Option<Vec<usize>>,
        num_manifolds: Option<usize>,
    ) -> Result<Self> {
        if samples.shape().len() != 2 {
            return Err(Error::contract(format!(
                "samples must be [n, d], got {:?}",
                samples.shape()
            )));
        }
        if sample_shape.iter().product::<usize>() != samples.cols() {
            return Err(Error::Dimension {
                op: "dataset sample shape",
                lhs: sample_shape,
                rhs: vec![samples.cols()],
            });
        }
        if let Some(l) = &labels {
            if l.len() != samples.rows() {
                return Err(Error::contract(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.rows()
                )));
            }
            let k = num_manifolds.ok_or_else(|| Error::contract("labels given without a manifold count"))?;
            if let Some(bad) = l.iter().find(|&&v| v >= k) {
                return Err(Error::contract(format!("label {bad} outside [0, {k})")));
            }
        }
        if samples.data().iter().any(|v| !v.is_finite() || v.abs() > T::one()) {
            return Err(Error::contract("dataset values must lie in [-1, 1]"));
        }
        Ok(Self {
            samples,
            sample_shape,
            labels,
            num_manifolds,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn sample(&self, i: usize) -> Tensor<T> {
        Tensor::vector(self.samples.row(i).to_vec())
    }

    /// Samples carrying label `k`.
    pub fn manifold(&self, k: usize) -> Vec<usize> {
        self.labels
            .as_ref()
            .map(|l| (0..l.len()).filter(|&i| l[i] == k).collect())
            .unwrap_or_default()
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            samples: self.samples.cast(),
            sample_shape: self.sample_shape.clone(),
            labels: self.labels.clone(),
            num_manifolds: self.num_manifolds,
        }
    }

    /// One `{label, values}` JSON object per line.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.len() {
            let rec = Record {
                label: self.labels.as_ref().map(|l| l[i]),
                values: self.samples.row(i).iter().map(|v| v.f64()).collect(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads the format written by [`write_ndjson`](Self::write_ndjson);
    /// other fields are ignored and `x` is accepted for `values`.
    /// Labels must be present on all lines or none.
    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut offset = 0u64;
        for line in input.lines() {
            let line = line.map_err(|e| Error::Format {
                offset,
                message: e.to_string(),
            })?;
            let len = line.len() as u64 + 1;
            if line.trim().is_empty() {
                offset += len;
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Format {
                offset,
                message: format!("bad record: {e}"),
            })?;
            if rec.values.is_empty() {
                return Err(Error::Format {
                    offset,
                    message: "empty values".into(),
                });
            }
            labels.push(rec.label);
            rows.push(Tensor::vector(rec.values.into_iter().map(T::c).collect()));
            offset += len;
        }
        if rows.is_empty() {
            return Err(Error::Format {
                offset: 0,
                message: "no samples".into(),
            });
        }
        let samples = Tensor::stack_rows(&rows)?;
        let d = samples.cols();
        let labels = if labels.iter().all(Option::is_some) {
            Some(labels.into_iter().map(|l| l.expect("checked")).collect::<Vec<_>>())
        } else if labels.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::contract("labels present on some records only"));
        };
        let k = labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1));
        Self::new(samples, vec![d], labels, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndjson_round_trip() {
        let samples = Tensor::<f64>::matrix(2, 3, vec![0.1, -0.2, 1.0, -1.0, 0.0, 0.5]).unwrap();
        let ds = LabeledDataset::new(samples, vec![3], Some(vec![0, 1]), Some(2)).unwrap();
        let mut buf = Vec::new();
        ds.write_ndjson(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"label":0,"values":[0.1,-0.2,1.0]}"#);
        let back = LabeledDataset::<f64>::read_ndjson(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_out_of_range_values_and_labels() {
        let samples = Tensor::<f64>::matrix(1, 2, vec![1.5, 0.0]).unwrap();
        assert!(LabeledDataset::new(samples, vec![2], None, None).is_err());
        let samples = Tensor::<f64>::matrix(1, 2, vec![0.5, 0.0]).unwrap();
        assert!(LabeledDataset::new(samples, vec![2], Some(vec![3]), Some(2)).is_err());
    }

    #[test]
    fn malformed_line_reports_offset() {
        let text = "{\"values\":[0.1]}\nnot json\n";
        match LabeledDataset::<f64>::read_ndjson(text.as_bytes()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 17),
            other => panic!("{other:?}"),
        }
    }
}
