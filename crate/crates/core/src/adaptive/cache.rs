use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::percentile_sorted;
use crate::error::{Error, Result};

/// Frozen teacher output for one training instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherRecord {
    pub id: u64,
    /// Teacher task loss in nats.
    pub loss: f64,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

/// Immutable per-instance teacher losses and logits with summary statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCache {
    records: Vec<TeacherRecord>,
    index: HashMap<u64, usize>,
    sorted: Vec<f64>,
    stats: CacheStats,
}

/// Compensated (Neumaier) sum.
fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl TeacherCache {
    pub fn new(records: Vec<TeacherRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("teacher cache needs at least one record"));
        }
        let width = records[0].logits.len();
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !(r.loss.is_finite() && r.loss >= 0.0) {
                return Err(Error::invalid(format!(
                    "record {} has invalid loss {}",
                    r.id, r.loss
                )));
            }
            if r.logits.len() != width || width < 2 {
                return Err(Error::invalid(format!(
                    "record {} has {} logits, expected {} (>= 2)",
                    r.id,
                    r.logits.len(),
                    width
                )));
            }
            if r.logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("record {} has non-finite logits", r.id)));
            }
            if index.insert(r.id, i).is_some() {
                return Err(Error::invalid(format!("duplicate record id {}", r.id)));
            }
        }

        let mut sorted: Vec<f64> = records.iter().map(|r| r.loss).collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let stats = CacheStats {
            count: n,
            mean: stable_sum(records.iter().map(|r| r.loss)) / n as f64,
            min: sorted[0],
            max: sorted[n - 1],
            p25: percentile_sorted(&sorted, 25.0)?,
            p50: percentile_sorted(&sorted, 50.0)?,
            p75: percentile_sorted(&sorted, 75.0)?,
        };
        Ok(Self {
            records,
            index,
            sorted,
            stats,
        })
    }

    /// Loss-only cache with sequential ids and two-class zero logits, for
    /// analysing a loss population without a teacher.
    pub fn from_losses(losses: &[f64]) -> Result<Self> {
        Self::new(
            losses
                .iter()
                .enumerate()
                .map(|(i, &loss)| TeacherRecord {
                    id: i as u64,
                    loss,
                    logits: vec![0.0, 0.0],
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TeacherRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&TeacherRecord> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn num_classes(&self) -> usize {
        self.records[0].logits.len()
    }

    /// Losses in ascending order.
    pub fn sorted_losses(&self) -> &[f64] {
        &self.sorted
    }

    /// One JSON object per line: `{"id":…,"loss":…,"logits":[…]}`. Floats
    /// use the shortest representation that parses back to the same bits.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: Read>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line.map_err(|e| Error::io("<jsonl>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Self::new(records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_and_lookup() {
        let cache = TeacherCache::from_losses(&[0.5, 0.1, 2.0, 0.4]).unwrap();
        let s = cache.stats();
        assert_eq!((s.count, s.min, s.max), (4, 0.1, 2.0));
        assert!((s.mean - 0.75).abs() < 1e-15);
        assert_eq!(cache.get(2).unwrap().loss, 2.0);
        assert!(cache.get(9).is_none());
        assert_eq!(cache.sorted_losses(), &[0.1, 0.4, 0.5, 2.0]);
    }

    #[test]
    fn rejects_bad_records() {
        assert!(TeacherCache::new(vec![]).is_err());
        assert!(TeacherCache::from_losses(&[-0.1]).is_err());
        assert!(TeacherCache::from_losses(&[f64::INFINITY]).is_err());
        let dup = vec![
            TeacherRecord { id: 1, loss: 0.1, logits: vec![0.0, 1.0] },
            TeacherRecord { id: 1, loss: 0.2, logits: vec![0.0, 1.0] },
        ];
        assert!(TeacherCache::new(dup).is_err());
        let ragged = vec![
            TeacherRecord { id: 1, loss: 0.1, logits: vec![0.0, 1.0] },
            TeacherRecord { id: 2, loss: 0.2, logits: vec![0.0, 1.0, 2.0] },
        ];
        assert!(TeacherCache::new(ragged).is_err());
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let text = "{\"id\":0,\"loss\":0.1,\"logits\":[0.0,1.0]}\n{\"id\":1,\"loss\":oops}\n";
        match TeacherCache::read_jsonl(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            TeacherCache::read_jsonl("".as_bytes()),
            Err(Error::EmptyDataset)
        ));
    }
}
