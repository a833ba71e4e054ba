//! Dataset ingestion, splits and experiment configuration.

mod config;
pub mod sdf;
pub mod synth;

pub use config::ExperimentConfig;
pub use sdf::{parse_sdf, write_sdf, SdfReport, Skip, SkipReason};
pub use synth::{synthesize, SynthConfig};

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chem::{check_valid, AtomVocabulary, BondVocabulary, MoleculeRecord};
use crate::graph::DiscreteGraph;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON graphs: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("unsupported dataset extension for {0}")]
    Format(PathBuf),
    #[error("split needs {needed} records, have {have}")]
    InsufficientRecords { needed: usize, have: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a JSON array of graphs.
pub fn read_json_graphs(path: &Path) -> Result<Vec<DiscreteGraph>, DataError> {
    let f = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|source| DataError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json_graphs(path: &Path, graphs: &[DiscreteGraph]) -> Result<(), DataError> {
    let text = serde_json::to_vec_pretty(graphs).expect("graphs serialize");
    crate::checkpoint::write_atomic(path, &text).map_err(io_err(path))
}

/// What happened to the records of a dataset file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub records: usize,
    pub sdf_skipped: Vec<Skip>,
    /// Records with more than `k` nodes.
    pub too_large: usize,
    /// Records failing the validity checker.
    pub invalid: usize,
    pub kept: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<MoleculeRecord>,
    pub report: LoadReport,
    /// SHA-256 of the source file, hex; `None` for synthesized data.
    pub checksum: Option<String>,
}

impl Dataset {
    /// Keeps records with `1 ≤ n ≤ k` that pass the validity checker.
    pub fn from_records(
        records: Vec<MoleculeRecord>,
        k: usize,
        atoms: &AtomVocabulary,
        bonds: &BondVocabulary,
    ) -> Self {
        let mut report = LoadReport {
            records: records.len(),
            ..Default::default()
        };
        let mut kept = Vec::with_capacity(records.len());
        for r in records {
            if r.graph.n() > k {
                report.too_large += 1;
            } else if !check_valid(&r.graph, atoms, bonds).is_ok_and(|v| v.is_valid()) {
                report.invalid += 1;
            } else {
                kept.push(r);
            }
        }
        report.kept = kept.len();
        Self {
            records: kept,
            report,
            checksum: None,
        }
    }

    /// Loads an `.sdf` or `.json` file.
    pub fn load(path: &Path, k: usize, atoms: &AtomVocabulary, bonds: &BondVocabulary) -> Result<Self, DataError> {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let (records, skipped) = match ext.as_deref() {
            Some("sdf") => {
                let f = File::open(path).map_err(io_err(path))?;
                let (recs, rep) = parse_sdf(BufReader::new(f), atoms, bonds).map_err(io_err(path))?;
                (recs, rep.skipped)
            }
            Some("json") => {
                let graphs = read_json_graphs(path)?;
                let recs = graphs.into_iter().map(|g| MoleculeRecord::new(g, None)).collect();
                (recs, Vec::new())
            }
            _ => return Err(DataError::Format(path.to_path_buf())),
        };
        let parsed = records.len() + skipped.len();
        let mut ds = Self::from_records(records, k, atoms, bonds);
        ds.report.records = parsed;
        ds.report.sdf_skipped = skipped;
        ds.checksum = Some(sha256_file(path)?);
        Ok(ds)
    }

    pub fn graphs(&self, idx: &[usize]) -> Vec<DiscreteGraph> {
        idx.iter().map(|&i| self.records[i].graph.clone()).collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String, DataError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Shuffles `0..n` by `seed`; the first `test` go to test, the next
/// `validation` to validation, the rest to train.
pub fn split(n: usize, seed: u64, test: usize, validation: usize) -> Result<DatasetSplit, DataError> {
    let needed = test + validation;
    if needed > n {
        return Err(DataError::InsufficientRecords { needed, have: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = idx.split_off(needed);
    let validation_part = idx.split_off(test);
    Ok(DatasetSplit {
        train,
        validation: validation_part,
        test: idx,
        seed,
    })
}
