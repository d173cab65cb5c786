use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, PatentRecord};
use crate::{Error, Result};

/// On-disk record layouts accepted by [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    /// One JSON object per line.
    Jsonl,
    /// Tab-separated with a header row; code lists joined with `;`.
    Tsv,
}

impl RecordFormat {
    /// Guesses the format from a file extension, defaulting to JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => RecordFormat::Tsv,
            _ => RecordFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json" | "ndjson" => Ok(RecordFormat::Jsonl),
            "tsv" | "delimited" => Ok(RecordFormat::Tsv),
            other => Err(Error::InvalidInput(format!("unknown record format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestPolicy {
    /// Keep records whose abstract is empty. They tokenize to `[CLS][SEP]`.
    pub keep_empty_abstracts: bool,
}

/// Loads and validates a record file. Rows are numbered from 1.
pub fn load_corpus(path: &Path, format: RecordFormat, policy: IngestPolicy) -> Result<Vec<PatentRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let rows = match format {
        RecordFormat::Jsonl => parse_jsonl(reader, path)?,
        RecordFormat::Tsv => parse_tsv(reader)?,
    };
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for (row, mut record) in rows {
        if record.id.trim().is_empty() {
            return Err(Error::MalformedRow { row, reason: "empty `id`".into() });
        }
        record.id = record.id.trim().to_string();
        if !policy.keep_empty_abstracts && record.abstract_text.trim().is_empty() {
            return Err(Error::MalformedRow { row, reason: "empty `abstract`".into() });
        }
        record.normalize_codes();
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

fn parse_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<(usize, PatentRecord)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatentRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRow { row, reason: e.to_string() })?;
        out.push((row, record));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct TsvRow {
    id: Option<String>,
    #[serde(default)]
    title: String,
    #[serde(rename = "abstract", default)]
    abstract_text: String,
    #[serde(default)]
    ipc: String,
    #[serde(default)]
    cpc: String,
    #[serde(default)]
    uspc: String,
    valid: String,
    #[serde(default)]
    date: String,
}

fn split_codes(field: &str) -> Vec<String> {
    field.split(';').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect()
}

fn parse_tsv(reader: impl std::io::Read) -> Result<Vec<(usize, PatentRecord)>> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for (i, result) in rdr.deserialize::<TsvRow>().enumerate() {
        // header is row 1
        let row = i + 2;
        let raw = result.map_err(|e| Error::MalformedRow { row, reason: e.to_string() })?;
        let id = raw
            .id
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| Error::MalformedRow { row, reason: "missing `id`".into() })?;
        let valid = match raw.valid.trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => {
                return Err(Error::MalformedRow { row, reason: format!("`valid` must be a boolean, got `{other}`") })
            }
        };
        let publication_date = if raw.date.trim().is_empty() {
            None
        } else {
            Some(raw.date.trim().parse().map_err(|e| Error::MalformedRow { row, reason: format!("bad `date`: {e}") })?)
        };
        out.push((
            row,
            PatentRecord {
                id,
                title: raw.title,
                abstract_text: raw.abstract_text,
                ipc: split_codes(&raw.ipc),
                cpc: split_codes(&raw.cpc),
                uspc: split_codes(&raw.uspc),
                valid,
                publication_date,
            },
        ));
    }
    Ok(out)
}

/// Writes records as JSON lines.
pub fn write_records(path: &Path, records: &[PatentRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads JSON-lines records without ingest policy checks (for files this
/// crate wrote itself).
pub fn read_records(path: &Path) -> Result<Vec<PatentRecord>> {
    load_corpus(path, RecordFormat::Jsonl, IngestPolicy { keep_empty_abstracts: true })
}

/// Provenance for a serialized [`DatasetSplit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub valid_freq_threshold: f64,
    pub emergence_ratio_threshold: f64,
    pub negatives_per_split: [usize; 3],
    /// Record counts for train, validation, test.
    pub counts: [usize; 3],
    pub positives: [usize; 3],
    /// Distinct CPC codes among the valid patents.
    pub valid_distinct_codes: usize,
    pub candidate_pool: usize,
    pub important_codes: Vec<String>,
}

const SPLIT_FILES: [&str; 3] = ["train.jsonl", "validation.jsonl", "test.jsonl"];

pub fn write_dataset(dir: &Path, split: &DatasetSplit, manifest: &DatasetManifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, records) in SPLIT_FILES.iter().zip(split.parts()) {
        write_records(&dir.join(name), records)?;
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetSplit, DatasetManifest)> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format { line: e.line(), reason: e.to_string() })?;
    let mut parts = Vec::with_capacity(3);
    for name in SPLIT_FILES {
        parts.push(read_records(&dir.join(name))?);
    }
    let test = parts.pop().unwrap();
    let validation = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok((DatasetSplit::new(train, validation, test), manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = write_tmp("", ".jsonl");
        let recs = load_corpus(f.path(), RecordFormat::Jsonl, IngestPolicy::default()).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn missing_id_names_row() {
        let f = write_tmp(
            "{\"id\":\"a\",\"abstract\":\"x\",\"valid\":true}\n{\"abstract\":\"y\",\"valid\":false}\n",
            ".jsonl",
        );
        match load_corpus(f.path(), RecordFormat::Jsonl, IngestPolicy::default()) {
            Err(Error::MalformedRow { row, reason }) => {
                assert_eq!(row, 2);
                assert!(reason.contains("id"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tsv_missing_id_names_row() {
        let f = write_tmp("id\ttitle\tabstract\tipc\tcpc\tuspc\tvalid\tdate\n\tt\ta\t\t\t\tfalse\t\n", ".tsv");
        match load_corpus(f.path(), RecordFormat::Tsv, IngestPolicy::default()) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = "{\"id\":\"a\",\"abstract\":\"x\",\"valid\":true}\n";
        let f = write_tmp(&line.repeat(2), ".jsonl");
        assert!(matches!(
            load_corpus(f.path(), RecordFormat::Jsonl, IngestPolicy::default()),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn empty_abstract_policy() {
        let f = write_tmp("{\"id\":\"a\",\"abstract\":\"  \",\"valid\":true}\n", ".jsonl");
        assert!(load_corpus(f.path(), RecordFormat::Jsonl, IngestPolicy::default()).is_err());
        let keep = IngestPolicy { keep_empty_abstracts: true };
        assert_eq!(load_corpus(f.path(), RecordFormat::Jsonl, keep).unwrap().len(), 1);
    }

    #[test]
    fn unreadable_file() {
        let err = load_corpus(Path::new("/nonexistent/records.jsonl"), RecordFormat::Jsonl, IngestPolicy::default())
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
