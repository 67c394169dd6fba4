//! Expected per-split record counts for dataset releases.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::records::{read_records, RecordError};

/// A dataset version and the record count of each split. `None` marks a
/// split the release does not have.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub splits: BTreeMap<String, Option<u64>>,
}

impl DatasetManifest {
    pub fn new(version: &str, splits: &[(&str, Option<u64>)]) -> Self {
        DatasetManifest {
            version: version.to_string(),
            splits: splits.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    /// Published split sizes of the three HC-STVG releases.
    pub fn builtin(version: &str) -> Option<Self> {
        let splits: [(&str, Option<u64>); 3] = match version {
            "1.0" => [("train", Some(4500)), ("val", None), ("test", Some(1160))],
            "2.0" => [("train", Some(10131)), ("val", Some(2000)), ("test", Some(4413))],
            "2.1" => [("train", Some(10131)), ("val", Some(3482)), ("test", Some(2913))],
            _ => return None,
        };
        Some(DatasetManifest::new(version, &splits))
    }

    pub const BUILTIN_VERSIONS: [&'static str; 3] = ["1.0", "2.0", "2.1"];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCheck {
    pub split: String,
    pub expected: Option<u64>,
    pub actual: Option<u64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestReport {
    pub version: String,
    pub splits: Vec<SplitCheck>,
    pub pass: bool,
}

impl ManifestReport {
    pub fn to_table(&self) -> String {
        let show = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |n| n.to_string());
        let mut out = format!("manifest {}\n", self.version);
        for s in &self.splits {
            out.push_str(&format!(
                "  {:<8} expected {:>7}  actual {:>7}  {}\n",
                s.split,
                show(s.expected),
                show(s.actual),
                if s.pass { "ok" } else { "MISMATCH" }
            ));
        }
        out
    }
}

/// Compares actual split counts against a manifest. An absent split passes
/// when it is missing from the data or empty. Splits present in the data
/// but not in the manifest are reported as unexpected.
pub fn validate_manifest(manifest: &DatasetManifest, actual: &BTreeMap<String, u64>) -> ManifestReport {
    let mut splits: Vec<SplitCheck> = manifest
        .splits
        .iter()
        .map(|(split, &expected)| {
            let got = actual.get(split).copied();
            let pass = match expected {
                Some(n) => got == Some(n),
                None => got.unwrap_or(0) == 0,
            };
            SplitCheck {
                split: split.clone(),
                expected,
                actual: got,
                pass,
            }
        })
        .collect();
    for (split, &n) in actual {
        if !manifest.splits.contains_key(split) {
            splits.push(SplitCheck {
                split: split.clone(),
                expected: None,
                actual: Some(n),
                pass: n == 0,
            });
        }
    }
    let pass = splits.iter().all(|s| s.pass);
    ManifestReport {
        version: manifest.version.clone(),
        splits,
        pass,
    }
}

/// Counts records in every `<split>.jsonl` file of `dir`. Records are fully
/// parsed and validated.
pub fn count_split_records(dir: impl AsRef<Path>) -> Result<BTreeMap<String, u64>, RecordError> {
    let mut counts = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        let Some(split) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        counts.insert(split.to_string(), read_records(&path)?.len() as u64);
    }
    Ok(counts)
}
