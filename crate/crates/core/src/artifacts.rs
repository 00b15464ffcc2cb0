//! Artifact files: every output starts with a metadata header carrying the
//! config hash, seed and tool version.
//!
//! * JSONL: first line `{"_meta":{...}}`
//! * CSV and text: first line starting with `#`
//! * JSON: a top-level `"_meta"` key

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl ArtifactMeta {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        ArtifactMeta {
            config_hash: config_hash.into(),
            seed,
            version: VERSION.to_string(),
        }
    }

    /// Meta for a standalone subcommand: the hash covers its own arguments.
    pub fn for_args<T: Serialize>(args: &T, seed: u64) -> Self {
        ArtifactMeta::new(hash_json(args), seed)
    }

    fn comment_line(&self) -> String {
        format!(
            "# defminer version={} config_hash={} seed={}",
            self.version, self.config_hash, self.seed
        )
    }
}

/// Hex SHA-256 of the canonical JSON encoding.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_vec(&serde_json::to_value(value).unwrap_or(Value::Null))
        .unwrap_or_default();
    let digest = Sha256::digest(&canonical);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn is_jsonl_header(line: &str) -> bool {
    line.starts_with("{\"_meta\"")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, meta: &ArtifactMeta, items: &[T]) -> Result<()> {
    let mut out = serde_json::to_string(&serde_json::json!({ "_meta": meta }))?;
    out.push('\n');
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

/// Reads JSONL records, skipping blank lines and the metadata header.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let body = read_text(path)?;
    let mut items = Vec::new();
    for (idx, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || is_jsonl_header(line) {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: idx + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_json<T: Serialize>(path: &Path, meta: &ArtifactMeta, value: &T) -> Result<()> {
    let mut object = match serde_json::to_value(value)? {
        Value::Object(map) => map,
        other => {
            let mut map = Map::new();
            map.insert("data".into(), other);
            map
        }
    };
    object.insert("_meta".into(), serde_json::to_value(meta)?);
    let mut text = serde_json::to_string_pretty(&Value::Object(object))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = read_text(path)?;
    let mut value: Value = serde_json::from_str(&body)?;
    if let Value::Object(map) = &mut value {
        map.remove("_meta");
    }
    Ok(serde_json::from_value(value)?)
}

/// Writes a CSV with a `#` metadata line before the column header.
pub fn write_csv(path: &Path, meta: &ArtifactMeta, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = meta.comment_line();
    out.push('\n');
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("{}: {e}", path.display()));
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer.write_record(row).map_err(csv_err)?;
    }
    let body = writer
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    out.push_str(&String::from_utf8_lossy(&body));
    write_bytes(path, out.as_bytes())
}

/// Column header and rows of a CSV artifact; `#` lines are skipped.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let body = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(false)
        .from_reader(body.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedLine {
            line: idx + 2,
            message: format!("{}: {e}", path.display()),
        })?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

pub fn write_text(path: &Path, meta: &ArtifactMeta, body: &str) -> Result<()> {
    let mut out = meta.comment_line();
    out.push('\n');
    out.push_str(body);
    write_bytes(path, out.as_bytes())
}

/// Artifact contents with the metadata header removed, for golden
/// comparisons.
pub fn strip_header(contents: &str) -> String {
    let first = contents.lines().next().unwrap_or("");
    if first.starts_with('#') || is_jsonl_header(first) {
        return contents
            .split_once('\n')
            .map_or_else(String::new, |(_, rest)| rest.to_string());
    }
    if let Ok(Value::Object(mut map)) = serde_json::from_str::<Value>(contents) {
        if map.remove("_meta").is_some() {
            return serde_json::to_string_pretty(&Value::Object(map)).unwrap_or_default();
        }
    }
    contents.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        a: u32,
        b: String,
    }

    #[test]
    fn jsonl_roundtrip_skips_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x/rows.jsonl");
        let meta = ArtifactMeta::new("abc", 7);
        let rows = vec![Row { a: 1, b: "x".into() }, Row { a: 2, b: "y".into() }];
        write_jsonl(&path, &meta, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"_meta\""));
        assert_eq!(read_jsonl::<Row>(&path).unwrap(), rows);
        assert_eq!(strip_header(&text).lines().count(), 2);
    }

    #[test]
    fn csv_and_json_headers_strip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = ArtifactMeta::new("abc", 7);
        let csv_path = dir.path().join("t.csv");
        write_csv(&csv_path, &meta, &["k", "v"], &[vec!["a,b".into(), "1".into()]]).unwrap();
        let (header, rows) = read_csv(&csv_path).unwrap();
        assert_eq!(header, vec!["k", "v"]);
        assert_eq!(rows, vec![vec!["a,b".to_string(), "1".to_string()]]);
        let text = fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("# defminer"));
        assert!(strip_header(&text).starts_with("k,v"));

        let json_path = dir.path().join("t.json");
        write_json(&json_path, &meta, &Row { a: 3, b: "z".into() }).unwrap();
        assert_eq!(read_json::<Row>(&json_path).unwrap().a, 3);
        let other = ArtifactMeta::new("different", 8);
        let json_path2 = dir.path().join("t2.json");
        write_json(&json_path2, &other, &Row { a: 3, b: "z".into() }).unwrap();
        assert_eq!(
            strip_header(&fs::read_to_string(&json_path).unwrap()),
            strip_header(&fs::read_to_string(&json_path2).unwrap())
        );
    }

    #[test]
    fn missing_artifact_is_named() {
        let err = read_csv(Path::new("/nonexistent/temporal.csv")).unwrap_err();
        assert!(err.to_string().contains("temporal.csv"));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(hash_json(&vec![1, 2]), hash_json(&vec![1, 2]));
        assert_ne!(hash_json(&vec![1, 2]), hash_json(&vec![2, 1]));
    }
}
