//! Labelled feature datasets: Gaussian blob generation and CSV ingestion.
//!
//! Canonical CSV layout is `id,f0,…,f{d−1},label` with features written to 17
//! significant digits, so a save/load cycle reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    split: Split,
    num_classes: usize,
    dim: usize,
    instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(split: Split, num_classes: usize, instances: Vec<Instance>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("a dataset needs at least 2 classes"));
        }
        let dim = instances.first().map_or(0, |i| i.features.len());
        let mut ids = std::collections::HashSet::with_capacity(instances.len());
        for inst in &instances {
            if inst.features.len() != dim {
                return Err(Error::invalid(format!(
                    "instance {} has {} features, expected {dim}",
                    inst.id,
                    inst.features.len()
                )));
            }
            if inst.label >= num_classes {
                return Err(Error::invalid(format!(
                    "instance {} has label {} but only {num_classes} classes",
                    inst.id, inst.label
                )));
            }
            if !ids.insert(inst.id) {
                return Err(Error::invalid(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(Self {
            split,
            num_classes,
            dim,
            instances,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for inst in &self.instances {
            counts[inst.label] += 1;
        }
        counts
    }

    /// Same instances in a different order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::invalid("permutation length mismatch"));
        }
        Self::new(
            self.split,
            self.num_classes,
            order.iter().map(|&i| self.instances[i].clone()).collect(),
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim).map(|i| format!("f{i}")));
        header.push("label".to_string());
        w.write_record(&header)?;
        for inst in &self.instances {
            let mut row = Vec::with_capacity(self.dim + 2);
            row.push(inst.id.to_string());
            row.extend(inst.features.iter().map(|v| format!("{v:.16e}")));
            row.push(inst.label.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Column layout expected by [`load_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub num_classes: usize,
    pub split: Split,
}

impl TableSchema {
    /// `id,f0..f{dim−1},label`.
    pub fn canonical(dim: usize, num_classes: usize, split: Split) -> Self {
        Self {
            feature_columns: (0..dim).map(|i| format!("f{i}")).collect(),
            label_column: "label".to_string(),
            num_classes,
            split,
        }
    }
}

/// Parses a CSV table with a header row. Ids come from an `id` column when
/// present, otherwise from row order.
pub fn read_table<R: Read>(input: R, schema: &TableSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.clone();
    if header.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = column(&schema.label_column)?;
    let id_idx = header.iter().position(|h| h.trim() == "id");

    let mut instances = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let features = feature_idx
            .iter()
            .zip(&schema.feature_columns)
            .map(|(&i, name)| {
                let v: f64 = field(i).parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("column '{name}': '{}' is not a number", field(i)),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("column '{name}' is not finite"),
                    });
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        let label: usize = field(label_idx).parse().map_err(|_| Error::Parse {
            line,
            message: format!("label '{}' is not a class index", field(label_idx)),
        })?;
        if label >= schema.num_classes {
            return Err(Error::Parse {
                line,
                message: format!("label {label} out of range for {} classes", schema.num_classes),
            });
        }
        let id = match id_idx {
            Some(i) => field(i).parse().map_err(|_| Error::Parse {
                line,
                message: format!("id '{}' is not a non-negative integer", field(i)),
            })?,
            None => row as u64,
        };
        instances.push(Instance {
            id,
            features,
            label,
        });
    }
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(schema.split, schema.num_classes, instances)
}

pub fn load_table(path: impl AsRef<Path>, schema: &TableSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(file, schema)
}

/// Gaussian clusters, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub centers: Vec<Vec<f64>>,
    /// Per-class isotropic standard deviation.
    pub scales: Vec<f64>,
    pub train_per_class: Vec<usize>,
    pub test_per_class: Vec<usize>,
    /// Distances from the centroid of the centers are divided by this factor;
    /// small values push clusters apart, large values merge them.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    /// Three classes in the plane. Class 0 sits far from the others, classes 1
    /// and 2 overlap heavily, so teacher losses split into an easy and a hard mode.
    fn default() -> Self {
        Self {
            num_classes: 3,
            dim: 2,
            centers: vec![vec![-3.0, 0.0], vec![1.5, -1.0], vec![1.5, 1.0]],
            scales: vec![1.0, 1.0, 1.0],
            train_per_class: vec![200, 200, 200],
            test_per_class: vec![200, 200, 200],
            overlap: 1.0,
            seed: 0,
        }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 || self.dim == 0 {
            return Err(Error::invalid("blob spec needs >= 2 classes and dim >= 1"));
        }
        if self.centers.len() != c
            || self.scales.len() != c
            || self.train_per_class.len() != c
            || self.test_per_class.len() != c
        {
            return Err(Error::invalid("blob spec needs one center, scale and count per class"));
        }
        if self.centers.iter().any(|ctr| ctr.len() != self.dim || ctr.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(format!("every center must have {} finite coordinates", self.dim)));
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("scales must be positive"));
        }
        if self.train_per_class.iter().chain(&self.test_per_class).any(|&n| n == 0) {
            return Err(Error::invalid("per-class counts must be >= 1"));
        }
        if !(self.overlap > 0.0 && self.overlap.is_finite()) {
            return Err(Error::invalid("overlap must be positive"));
        }
        Ok(())
    }

    /// Centers after applying the overlap factor.
    pub fn effective_centers(&self) -> Vec<Vec<f64>> {
        let c = self.centers.len() as f64;
        let centroid: Vec<f64> = (0..self.dim)
            .map(|d| self.centers.iter().map(|ctr| ctr[d]).sum::<f64>() / c)
            .collect();
        self.centers
            .iter()
            .map(|ctr| {
                ctr.iter()
                    .zip(&centroid)
                    .map(|(v, m)| m + (v - m) / self.overlap)
                    .collect()
            })
            .collect()
    }
}

/// Draws train and test sets from independent streams of the spec's seed.
pub fn generate_blobs(spec: &BlobSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let centers = spec.effective_centers();
    let draw = |stream: u64, counts: &[usize], split: Split| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let mut instances = Vec::with_capacity(counts.iter().sum());
        for (label, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                let features = centers[label]
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + spec.scales[label] * z
                    })
                    .collect();
                instances.push(Instance {
                    id: instances.len() as u64,
                    features,
                    label,
                });
            }
        }
        Dataset::new(split, spec.num_classes, instances)
    };
    Ok((
        draw(0, &spec.train_per_class, Split::Train)?,
        draw(1, &spec.test_per_class, Split::Test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_counts_and_determinism() {
        let spec = BlobSpec {
            train_per_class: vec![5, 7, 9],
            test_per_class: vec![3, 3, 4],
            ..BlobSpec::default()
        };
        let (train, test) = generate_blobs(&spec).unwrap();
        assert_eq!(train.class_counts(), vec![5, 7, 9]);
        assert_eq!(test.class_counts(), vec![3, 3, 4]);
        assert_eq!(train.split(), Split::Train);

        let mut a = Vec::new();
        let mut b = Vec::new();
        train.write_csv(&mut a).unwrap();
        generate_blobs(&spec).unwrap().0.write_csv(&mut b).unwrap();
        assert_eq!(a, b);

        // train and test come from different streams
        assert_ne!(train.instances()[0].features, test.instances()[0].features);
    }

    #[test]
    fn overlap_scales_center_distances() {
        let spec = BlobSpec {
            overlap: 0.5,
            ..BlobSpec::default()
        };
        let c = spec.effective_centers();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((dist(&c[1], &c[2]) - 4.0).abs() < 1e-12);
        assert!(BlobSpec { overlap: 0.0, ..BlobSpec::default() }.validate().is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (train, _) = generate_blobs(&BlobSpec::default()).unwrap();
        let mut buf = Vec::new();
        train.write_csv(&mut buf).unwrap();
        let back = read_table(buf.as_slice(), &TableSchema::canonical(2, 3, Split::Train)).unwrap();
        assert_eq!(back, train);
    }

    #[test]
    fn table_errors() {
        let schema = TableSchema::canonical(2, 3, Split::Train);
        assert!(matches!(read_table("".as_bytes(), &schema), Err(Error::EmptyDataset)));
        assert!(matches!(
            read_table("id,f0,f1,label\n".as_bytes(), &schema),
            Err(Error::EmptyDataset)
        ));
        match read_table("id,f0,x1,label\n".as_bytes(), &schema) {
            Err(Error::Schema(msg)) => assert!(msg.contains("'f1'"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        match read_table("id,f0,f1,label\n0,1.0,2.0,1\n1,abc,2.0,0\n".as_bytes(), &schema) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match read_table("id,f0,f1,label\n0,1.0,2.0,3\n".as_bytes(), &schema) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
