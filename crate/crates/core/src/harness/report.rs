//! Report files: `records.csv`, `fits.json` and `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RECORDS_FILE: &str = "records.csv";
pub const FITS_FILE: &str = "fits.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_VERSION: u32 = 1;
pub const RECORD_HEADER: [&str; 8] = ["model_id", "sources", "epoch", "test_set", "metric", "value", "mask_seed", "flags"];

/// One scored cell. `sources` are joined with `+` and `flags` with `;` in
/// the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub model_id: String,
    pub sources: Vec<String>,
    pub epoch: usize,
    pub test_set: String,
    pub metric: String,
    pub value: f64,
    pub mask_seed: u64,
    pub flags: Vec<String>,
}

/// Named fit results and frozen thresholds, serialized in key order.
pub type Fits = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    pub format_version: u32,
    pub status: RunStatus,
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// SHA-256 of every other file under the report directory, keyed by
    /// `/`-separated relative path.
    pub artifacts: BTreeMap<String, String>,
}

fn check_records(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("a report needs at least one record"));
    }
    let mut keys = BTreeSet::new();
    for r in records {
        if !keys.insert((&r.model_id, r.epoch, &r.test_set, &r.metric)) {
            return Err(Error::invalid(format!(
                "duplicate record for model {} epoch {} on {} ({})",
                r.model_id, r.epoch, r.test_set, r.metric
            )));
        }
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("records csv: {other:?}")),
    }
}

pub fn write_records(records: &[EvalRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(RECORD_HEADER).map_err(csv_error)?;
    for r in records {
        w.write_record([
            r.model_id.clone(),
            r.sources.join("+"),
            r.epoch.to_string(),
            r.test_set.clone(),
            r.metric.clone(),
            r.value.to_string(),
            r.mask_seed.to_string(),
            r.flags.join(";"),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn split(field: &str, sep: char) -> Vec<String> {
    if field.is_empty() {
        Vec::new()
    } else {
        field.split(sep).map(str::to_owned).collect()
    }
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?;
    if header.iter().ne(RECORD_HEADER) {
        return Err(Error::Format(format!("unexpected records header {header:?}")));
    }
    let bad = |line: usize, what: &str| Error::Format(format!("records line {line}: bad {what}"));
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let line = i + 2;
        out.push(EvalRecord {
            model_id: row[0].to_owned(),
            sources: split(&row[1], '+'),
            epoch: row[2].parse().map_err(|_| bad(line, "epoch"))?,
            test_set: row[3].to_owned(),
            metric: row[4].to_owned(),
            value: row[5].parse().map_err(|_| bad(line, "value"))?,
            mask_seed: row[6].parse().map_err(|_| bad(line, "mask_seed"))?,
            flags: split(&row[7], ';'),
        });
    }
    Ok(out)
}

pub(crate) fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Relative paths of every regular file under `root`, sorted.
fn walk(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut pending = vec![PathBuf::new()];
    while let Some(rel) = pending.pop() {
        for entry in fs::read_dir(root.join(&rel))? {
            let entry = entry?;
            let child = rel.join(entry.file_name());
            if entry.file_type()?.is_dir() {
                pending.push(child);
            } else {
                out.push(child);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn artifact_hashes(root: &Path) -> Result<BTreeMap<String, String>> {
    walk(root)?
        .into_iter()
        .filter(|p| p != Path::new(MANIFEST_FILE))
        .map(|p| {
            let key = p.iter().map(|c| c.to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok((key, sha256_file(&root.join(&p))?))
        })
        .collect()
}

pub(crate) fn write_manifest(path: &Path, manifest: &ReportManifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    fs::write(path.join(MANIFEST_FILE), bytes)?;
    Ok(())
}

/// Writes the records, the fits and a manifest hashing every file in `path`
/// (including checkpoints written earlier). Output is byte-stable.
pub fn emit_report(records: &[EvalRecord], fits: &Fits, config_sha256: &str, path: &Path) -> Result<ReportManifest> {
    check_records(records)?;
    fs::create_dir_all(path)?;
    write_records(records, &path.join(RECORDS_FILE))?;
    let mut fits_bytes = serde_json::to_vec_pretty(fits)?;
    fits_bytes.push(b'\n');
    fs::write(path.join(FITS_FILE), fits_bytes)?;
    let manifest = ReportManifest {
        format_version: REPORT_VERSION,
        status: RunStatus::Complete,
        config_sha256: config_sha256.to_owned(),
        failed_stage: None,
        error: None,
        artifacts: artifact_hashes(path)?,
    };
    write_manifest(path, &manifest)?;
    Ok(manifest)
}

/// Marks a report directory as the output of a failed run.
pub(crate) fn mark_incomplete(path: &Path, config_sha256: &str, stage: &str, error: &Error) -> Result<()> {
    fs::create_dir_all(path)?;
    let manifest = ReportManifest {
        format_version: REPORT_VERSION,
        status: RunStatus::Incomplete,
        config_sha256: config_sha256.to_owned(),
        failed_stage: Some(stage.to_owned()),
        error: Some(error.to_string()),
        artifacts: artifact_hashes(path)?,
    };
    write_manifest(path, &manifest)
}

pub fn read_manifest(path: &Path) -> Result<ReportManifest> {
    Ok(serde_json::from_slice(&fs::read(path.join(MANIFEST_FILE))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<EvalRecord> {
        vec![
            EvalRecord {
                model_id: "joint".into(),
                sources: vec!["P".into(), "Q".into()],
                epoch: 3,
                test_set: "P".into(),
                metric: "ssim".into(),
                value: 0.123_456_789_012_345_67,
                mask_seed: u64::MAX,
                flags: vec![],
            },
            EvalRecord {
                model_id: "joint".into(),
                sources: vec!["P".into(), "Q".into()],
                epoch: 3,
                test_set: "Q".into(),
                metric: "normalized_ssim".into(),
                value: -1e-300,
                mask_seed: 7,
                flags: vec!["zero_variance_recon".into(), "region_grown".into()],
            },
        ]
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_records(&records(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("model_id,sources,epoch,test_set,metric,value,mask_seed,flags\n"));
        assert_eq!(read_records(&p).unwrap(), records());
    }

    #[test]
    fn emission_is_byte_stable() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut fits = Fits::new();
        fits.insert("z".into(), serde_json::json!({"slope": 0.5}));
        fits.insert("a".into(), serde_json::json!([1, 2]));
        let ma = emit_report(&records(), &fits, "abc", a.path()).unwrap();
        let mb = emit_report(&records(), &fits, "abc", b.path()).unwrap();
        assert_eq!(ma, mb);
        for f in [RECORDS_FILE, FITS_FILE, MANIFEST_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
        assert_eq!(ma.artifacts.len(), 2);
        assert_eq!(read_manifest(a.path()).unwrap(), ma);
    }

    #[test]
    fn empty_or_duplicate_records_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[], &Fits::new(), "", dir.path()).unwrap_err().is_validation());
        let mut r = records();
        r[1].test_set = "P".into();
        r[1].metric = "ssim".into();
        assert!(emit_report(&r, &Fits::new(), "", dir.path()).unwrap_err().is_validation());
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        fs::write(&file, b"x").unwrap();
        let err = emit_report(&records(), &Fits::new(), "", &file.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
