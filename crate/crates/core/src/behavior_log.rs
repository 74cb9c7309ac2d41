//! Sandbox behavior-log parsing and dataset manifests.
//!
//! A behavior log is one sandbox run serialized as XML: a `report` root
//! carrying `action` elements in execution order. Each action records the
//! invoked system API, the calling process, timing, and result codes,
//! plus ordered `apiArg` / `exInfo` child values. Unknown elements and
//! attributes are permitted and ignored.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One monitored API call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    /// Name of the system function actually invoked. Never empty.
    pub api_name: String,
    /// Name of the process that made the call.
    pub call_name: String,
    /// PID of the calling process.
    pub call_pid: u64,
    /// Call timestamp in integer milliseconds (epoch- or sandbox-relative).
    pub call_time: i64,
    /// Error code produced by the call.
    pub err_code: i64,
    /// Return value of the API (hex forms like "0x0" accepted).
    pub ret_value: i64,
    /// Status code produced by the call.
    pub status_value: i64,
    /// Ordered API argument values.
    pub api_args: Vec<String>,
    /// Ordered extra-info values supplementing the API arguments.
    pub ex_info: Vec<String>,
}

/// A parsed sandbox run: ordered actions for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorLog {
    pub sample_id: String,
    pub actions: Vec<Action>,
    pub source_path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Benign,
    Malware,
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Benign => write!(f, "benign"),
            Label::Malware => write!(f, "malware"),
            Label::Unknown => write!(f, "unknown"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub path: PathBuf,
    pub label: Label,
    pub family: Option<String>,
    pub year: Option<u32>,
}

/// Dataset index: one row per sample, unique sample ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug)]
pub enum LogError {
    MalformedXml(String),
    SchemaViolation(String),
    DuplicateSampleId(String),
    MissingField { row: usize, field: &'static str },
    UnreadableFile { path: PathBuf, source: std::io::Error },
}

impl fmt::Display for LogError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogError::MalformedXml(msg) => write!(f, "malformed xml: {msg}"),
            LogError::SchemaViolation(msg) => write!(f, "schema violation: {msg}"),
            LogError::DuplicateSampleId(id) => write!(f, "duplicate sample_id: {id}"),
            LogError::MissingField { row, field } => {
                write!(f, "manifest row {row}: missing field {field}")
            }
            LogError::UnreadableFile { path, source } => {
                write!(f, "cannot read {}: {source}", path.display())
            }
        }
    }
}

impl std::error::Error for LogError {}

fn parse_int(raw: &str, what: &str) -> Result<i64, LogError> {
    let raw = raw.trim();
    let parsed = if let Some(hex) = raw.strip_prefix("0x").or_else(|| raw.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).map(|v| v as i64)
    } else if let Some(hex) = raw.strip_prefix("-0x").or_else(|| raw.strip_prefix("-0X")) {
        i64::from_str_radix(hex, 16).map(|v| -v)
    } else {
        raw.parse::<i64>()
    };
    parsed.map_err(|_| LogError::SchemaViolation(format!("{what}: not an integer: {raw:?}")))
}

/// Parses a canonical-schema behavior log.
///
/// One `Action` per `action` element, in document order. Missing optional
/// attributes default to 0 / empty string; missing `api_name` or an empty
/// action list is a schema violation.
pub fn parse_log(xml_bytes: &[u8]) -> Result<BehaviorLog, LogError> {
    let text = std::str::from_utf8(xml_bytes)
        .map_err(|e| LogError::MalformedXml(format!("invalid utf-8: {e}")))?;
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| LogError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "report" {
        return Err(LogError::SchemaViolation(format!(
            "root element must be <report>, found <{}>",
            root.tag_name().name()
        )));
    }
    let sample_id = root.attribute("sample_id").unwrap_or("").to_string();

    let mut actions = Vec::new();
    for node in root.children().filter(|n| n.has_tag_name("action")) {
        let api_name = node
            .attribute("api_name")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                LogError::SchemaViolation(format!(
                    "action #{} has no api_name",
                    actions.len() + 1
                ))
            })?
            .to_string();
        let call_pid = node
            .attribute("call_pid")
            .map(|s| parse_int(s, "call_pid"))
            .transpose()?
            .unwrap_or(0);
        if call_pid < 0 {
            return Err(LogError::SchemaViolation(format!(
                "call_pid must be non-negative, got {call_pid}"
            )));
        }
        let mut api_args = Vec::new();
        let mut ex_info = Vec::new();
        for child in node.children().filter(|n| n.is_element()) {
            match child.tag_name().name() {
                "apiArg" => api_args.push(child.attribute("value").unwrap_or("").to_string()),
                "exInfo" => ex_info.push(child.attribute("value").unwrap_or("").to_string()),
                _ => {} // unknown elements permitted
            }
        }
        actions.push(Action {
            api_name,
            call_name: node.attribute("call_name").unwrap_or("").to_string(),
            call_pid: call_pid as u64,
            call_time: node
                .attribute("call_time")
                .map(|s| parse_int(s, "call_time"))
                .transpose()?
                .unwrap_or(0),
            err_code: node
                .attribute("err_code")
                .map(|s| parse_int(s, "err_code"))
                .transpose()?
                .unwrap_or(0),
            ret_value: node
                .attribute("ret_value")
                .map(|s| parse_int(s, "ret_value"))
                .transpose()?
                .unwrap_or(0),
            status_value: node
                .attribute("status_value")
                .map(|s| parse_int(s, "status_value"))
                .transpose()?
                .unwrap_or(0),
            api_args,
            ex_info,
        });
    }
    if actions.is_empty() {
        return Err(LogError::SchemaViolation(
            "report contains no action elements".to_string(),
        ));
    }
    Ok(BehaviorLog {
        sample_id,
        actions,
        source_path: String::new(),
    })
}

/// Reads and parses a log file, recording its path in the result.
pub fn parse_log_file(path: &Path) -> Result<BehaviorLog, LogError> {
    let bytes = std::fs::read(path).map_err(|source| LogError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    let mut log = parse_log(&bytes)?;
    log.source_path = path.display().to_string();
    Ok(log)
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Serializes a log back to the canonical schema. Re-parsing the output
/// yields an equal `BehaviorLog` (modulo `source_path`).
pub fn to_canonical_xml(log: &BehaviorLog) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<report sample_id=\"{}\">",
        escape_xml(&log.sample_id)
    );
    for a in &log.actions {
        let _ = write!(
            out,
            "  <action api_name=\"{}\" call_name=\"{}\" call_pid=\"{}\" call_time=\"{}\" \
             err_code=\"{}\" ret_value=\"{}\" status_value=\"{}\"",
            escape_xml(&a.api_name),
            escape_xml(&a.call_name),
            a.call_pid,
            a.call_time,
            a.err_code,
            a.ret_value,
            a.status_value
        );
        if a.api_args.is_empty() && a.ex_info.is_empty() {
            out.push_str("/>\n");
        } else {
            out.push_str(">\n");
            for v in &a.api_args {
                let _ = writeln!(out, "    <apiArg value=\"{}\"/>", escape_xml(v));
            }
            for v in &a.ex_info {
                let _ = writeln!(out, "    <exInfo value=\"{}\"/>", escape_xml(v));
            }
            out.push_str("  </action>\n");
        }
    }
    out.push_str("</report>\n");
    out
}

/// Loads a manifest CSV with header `sample_id,path,label,family,year`.
/// Extra columns are permitted; empty family/year cells mean "absent".
pub fn load_manifest(path: &Path) -> Result<Manifest, LogError> {
    let file = std::fs::File::open(path).map_err(|source| LogError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| LogError::SchemaViolation(format!("manifest header: {e}")))?
        .clone();
    let col = |name: &'static str| headers.iter().position(|h| h == name);
    let idx_id = col("sample_id").ok_or(LogError::MissingField { row: 0, field: "sample_id" })?;
    let idx_path = col("path").ok_or(LogError::MissingField { row: 0, field: "path" })?;
    let idx_label = col("label").ok_or(LogError::MissingField { row: 0, field: "label" })?;
    let idx_family = col("family");
    let idx_year = col("year");

    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record
            .map_err(|e| LogError::SchemaViolation(format!("manifest row {row}: {e}")))?;
        let field = |idx: usize, name: &'static str| -> Result<&str, LogError> {
            record.get(idx).ok_or(LogError::MissingField { row, field: name })
        };
        let sample_id = field(idx_id, "sample_id")?.trim().to_string();
        if sample_id.is_empty() {
            return Err(LogError::MissingField { row, field: "sample_id" });
        }
        if !seen.insert(sample_id.clone()) {
            return Err(LogError::DuplicateSampleId(sample_id));
        }
        let label = match field(idx_label, "label")?.trim() {
            "benign" => Label::Benign,
            "malware" => Label::Malware,
            "unknown" | "" => Label::Unknown,
            other => {
                return Err(LogError::SchemaViolation(format!(
                    "manifest row {row}: unknown label {other:?}"
                )))
            }
        };
        let family = idx_family
            .and_then(|idx| record.get(idx))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from);
        let year = match idx_year.and_then(|idx| record.get(idx)).map(str::trim) {
            None | Some("") => None,
            Some(raw) => {
                let y: u32 = raw.parse().map_err(|_| {
                    LogError::SchemaViolation(format!(
                        "manifest row {row}: year must be a 4-digit integer, got {raw:?}"
                    ))
                })?;
                if !(1000..=9999).contains(&y) {
                    return Err(LogError::SchemaViolation(format!(
                        "manifest row {row}: year must be a 4-digit integer, got {y}"
                    )));
                }
                Some(y)
            }
        };
        entries.push(ManifestEntry {
            sample_id,
            path: PathBuf::from(field(idx_path, "path")?),
            label,
            family,
            year,
        });
    }
    Ok(Manifest { entries })
}

/// Writes a manifest in the canonical column order, with an optional
/// trailing `generated` column used by the sample generator.
pub fn write_manifest(
    manifest: &Manifest,
    path: &Path,
    generated: bool,
) -> Result<(), LogError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| {
        LogError::SchemaViolation(format!("cannot write manifest {}: {e}", path.display()))
    })?;
    let mut header = vec!["sample_id", "path", "label", "family", "year"];
    if generated {
        header.push("generated");
    }
    let to_io = |e: csv::Error| LogError::SchemaViolation(format!("manifest write: {e}"));
    writer.write_record(&header).map_err(to_io)?;
    for e in &manifest.entries {
        let mut record = vec![
            e.sample_id.clone(),
            e.path.display().to_string(),
            e.label.to_string(),
            e.family.clone().unwrap_or_default(),
            e.year.map(|y| y.to_string()).unwrap_or_default(),
        ];
        if generated {
            record.push("true".to_string());
        }
        writer.write_record(&record).map_err(to_io)?;
    }
    writer.flush().map_err(|e| {
        LogError::SchemaViolation(format!("manifest flush: {e}"))
    })?;
    Ok(())
}
