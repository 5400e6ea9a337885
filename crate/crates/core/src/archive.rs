//! Versioned binary archives for feature datasets and fitted models.
//!
//! Both formats are an 8-byte magic, a little-endian `u32` version, a `u64`
//! JSON header length, the JSON header, then little-endian payload words.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mrl::{FitDiagnostics, MrlModel, RegularizationParams, TrainingSet};
use crate::rtf::RtfVector;

pub const DATASET_MAGIC: &[u8; 8] = b"MRLDSET\0";
pub const MODEL_MAGIC: &[u8; 8] = b"MRLMODL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub split: Split,
    /// True source azimuth, degrees relative to the constellation.
    pub azimuth: f64,
    /// Whether the azimuth is available to the learner.
    pub labelled: bool,
    /// GCC delay estimate in seconds, if the correlation had a peak.
    pub tdoa: Option<f64>,
    pub rtf: RtfVector,
}

impl DatasetRecord {
    pub fn label(&self) -> Option<f64> {
        self.labelled.then_some(self.azimuth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    /// Hex SHA-256 of the room description.
    pub room_hash: String,
    pub t60: f64,
    pub train_snr_db: f64,
    pub test_snr_db: f64,
    pub seed: u64,
    pub rotation: f64,
    pub sample_rate: f64,
    pub fft_size: usize,
    pub band: Vec<usize>,
    pub source: String,
    /// Free-form resolved configuration the data was generated from.
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub metadata: DatasetMetadata,
    /// Training rows first (labelled ones leading), then test rows.
    pub records: Vec<DatasetRecord>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    metadata: DatasetMetadata,
    records: usize,
}

const FLAG_TEST: u8 = 1;
const FLAG_LABELLED: u8 = 2;
const FLAG_TDOA: u8 = 4;

impl Dataset {
    pub fn new(metadata: DatasetMetadata, records: Vec<DatasetRecord>) -> Result<Self> {
        let width = metadata.band.len();
        let mut seen_unlabelled = false;
        let mut seen_test = false;
        for r in &records {
            if r.rtf.band != metadata.band || r.rtf.fft_size != metadata.fft_size || r.rtf.values.len() != width {
                return Err(Error::BandMismatch);
            }
            match r.split {
                Split::Test => seen_test = true,
                Split::Train if seen_test => {
                    return Err(Error::Format("training rows must precede test rows".into()));
                }
                Split::Train => {}
            }
            if r.split == Split::Train {
                if r.labelled && seen_unlabelled {
                    return Err(Error::Format("labelled rows must lead the training split".into()));
                }
                seen_unlabelled |= !r.labelled;
            }
        }
        Ok(Dataset { metadata, records })
    }

    pub fn train(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(|r| r.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(|r| r.split == Split::Test)
    }

    pub fn train_count(&self) -> usize {
        self.train().count()
    }

    pub fn labelled_count(&self) -> usize {
        self.train().filter(|r| r.labelled).count()
    }

    pub fn training_set(&self) -> Result<TrainingSet> {
        let samples = self.train().map(|r| r.rtf.clone()).collect();
        let labels = self.train().filter_map(DatasetRecord::label).collect();
        TrainingSet::new(samples, labels)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&DatasetHeader {
            metadata: self.metadata.clone(),
            records: self.records.len(),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let width = self.metadata.band.len();
        let mut out = Vec::with_capacity(20 + header.len() + self.records.len() * (17 + 16 * width));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for r in &self.records {
            let mut flags = 0;
            if r.split == Split::Test {
                flags |= FLAG_TEST;
            }
            if r.labelled {
                flags |= FLAG_LABELLED;
            }
            if r.tdoa.is_some() {
                flags |= FLAG_TDOA;
            }
            out.push(flags);
            out.extend_from_slice(&r.azimuth.to_le_bytes());
            out.extend_from_slice(&r.tdoa.unwrap_or(0.0).to_le_bytes());
            for v in &r.rtf.values {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let header: DatasetHeader = cur.header(DATASET_MAGIC)?;
        let meta = header.metadata;
        let width = meta.band.len();
        let mut records = Vec::with_capacity(header.records);
        for _ in 0..header.records {
            let flags = cur.take(1)?[0];
            let azimuth = cur.f64()?;
            let tdoa = cur.f64()?;
            let mut values = Vec::with_capacity(width);
            for _ in 0..width {
                values.push(Complex64::new(cur.f64()?, cur.f64()?));
            }
            records.push(DatasetRecord {
                split: if flags & FLAG_TEST != 0 {
                    Split::Test
                } else {
                    Split::Train
                },
                azimuth,
                labelled: flags & FLAG_LABELLED != 0,
                tdoa: (flags & FLAG_TDOA != 0).then_some(tdoa),
                rtf: RtfVector::new(values, meta.band.clone(), meta.fft_size)?,
            });
        }
        cur.finish()?;
        Dataset::new(meta, records)
    }

    /// Hex SHA-256 of the serialized archive.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dataset::from_bytes(&fs::read(path)?)
    }

    /// One row per sample and bin: `sample,split,azimuth,labelled,bin,real,imag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,split,azimuth,labelled,bin,real,imag\n");
        for (i, r) in self.records.iter().enumerate() {
            let split = match r.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            for (bin, v) in r.rtf.band.iter().zip(&r.rtf.values) {
                out.push_str(&format!(
                    "{i},{split},{},{},{bin},{},{}\n",
                    r.azimuth, r.labelled as u8, v.re, v.im
                ));
            }
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated archive at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header<T: for<'de> Deserialize<'de>>(&mut self, magic: &[u8; 8]) -> Result<T> {
        if self.take(8)? != magic {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let len = self.u64()? as usize;
        serde_json::from_slice(self.take(len)?).map_err(|e| Error::Format(e.to_string()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    dataset_hash: String,
    indices: Vec<usize>,
    epsilon_k: f64,
    params: RegularizationParams,
    label_offset: f64,
    diagnostics: FitDiagnostics,
}

/// Writes the weights plus references to the training rows of `dataset`.
pub fn save_model(path: &Path, model: &MrlModel, dataset_hash: &str, indices: &[usize]) -> Result<()> {
    if indices.len() != model.len() {
        return Err(Error::DimensionMismatch {
            expected: model.len(),
            actual: indices.len(),
        });
    }
    let header = serde_json::to_vec(&ModelHeader {
        dataset_hash: dataset_hash.to_string(),
        indices: indices.to_vec(),
        epsilon_k: model.epsilon_k,
        params: model.params,
        label_offset: model.label_offset,
        diagnostics: model.diagnostics,
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for w in model.weights.iter() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a model, resolving its sample references against `dataset`.
pub fn load_model(path: &Path, dataset: &Dataset) -> Result<MrlModel> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    let header: ModelHeader = cur.header(MODEL_MAGIC)?;
    let hash = dataset.hash()?;
    if header.dataset_hash != hash {
        return Err(Error::Format(format!(
            "model was trained on dataset {} but {} was given",
            header.dataset_hash, hash
        )));
    }
    let mut weights = Vec::with_capacity(header.indices.len());
    for _ in 0..header.indices.len() {
        weights.push(cur.f64()?);
    }
    cur.finish()?;
    let samples = header
        .indices
        .iter()
        .map(|&i| {
            dataset
                .records
                .get(i)
                .map(|r| r.rtf.clone())
                .ok_or_else(|| Error::Format(format!("sample index {i} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MrlModel {
        weights: DVector::from_vec(weights),
        samples,
        epsilon_k: header.epsilon_k,
        params: header.params,
        label_offset: header.label_offset,
        diagnostics: header.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(split: Split, az: f64, labelled: bool, v: f64) -> DatasetRecord {
        DatasetRecord {
            split,
            azimuth: az,
            labelled,
            tdoa: (v > 0.5).then_some(v * 1e-4),
            rtf: RtfVector::new(vec![Complex64::new(v, -v), Complex64::new(1.0, v * v)], vec![1, 2], 8).unwrap(),
        }
    }

    fn sample() -> Dataset {
        let meta = DatasetMetadata {
            room_hash: "abc".into(),
            t60: 0.3,
            train_snr_db: 20.0,
            test_snr_db: 20.0,
            seed: 7,
            rotation: 12.5,
            sample_rate: 16000.0,
            fft_size: 8,
            band: vec![1, 2],
            source: "white-noise".into(),
            config: serde_json::json!({"n": 3}),
        };
        Dataset::new(
            meta,
            vec![
                record(Split::Train, 10.0, true, 0.1),
                record(Split::Train, 20.0, false, 0.7),
                record(Split::Test, 15.0, false, 0.3),
            ],
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_and_hash() {
        let ds = sample();
        let bytes = ds.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.hash().unwrap(), ds.hash().unwrap());
        assert_eq!(ds.train_count(), 2);
        assert_eq!(ds.labelled_count(), 1);
        let ts = ds.training_set().unwrap();
        assert_eq!(ts.labels, vec![10.0]);
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Dataset::from_bytes(&bad).is_err());
    }

    #[test]
    fn ordering_enforced() {
        let ds = sample();
        let mut recs = ds.records.clone();
        recs.swap(0, 1);
        assert!(Dataset::new(ds.metadata.clone(), recs).is_err());
        let mut recs = ds.records.clone();
        recs.swap(1, 2);
        assert!(Dataset::new(ds.metadata.clone(), recs).is_err());
    }

    #[test]
    fn csv_rows() {
        let csv = sample().to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,train,10,1,1,0.1,-0.1"));
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample();
        let hash = ds.hash().unwrap();
        let model = MrlModel {
            weights: DVector::from_vec(vec![0.5, -1.5]),
            samples: vec![ds.records[0].rtf.clone(), ds.records[1].rtf.clone()],
            epsilon_k: 0.25,
            params: RegularizationParams::default(),
            label_offset: 12.0,
            diagnostics: FitDiagnostics {
                relative_residual: 1e-15,
                condition: 10.0,
            },
        };
        let path = dir.path().join("m.bin");
        save_model(&path, &model, &hash, &[0, 1]).unwrap();
        assert_eq!(load_model(&path, &ds).unwrap(), model);
        let mut other = ds.clone();
        other.metadata.seed = 8;
        assert!(load_model(&path, &other).is_err());
        assert!(save_model(&path, &model, &hash, &[0]).is_err());
    }
}
