//! Evidence bundle: evidence.csv, summary.json, charts/*.svg and extra files,
//! each stamped with the config hash and seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use maxstab::stats_report::EvidenceRow;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_COLUMNS: [&str; 7] = ["label", "param", "n", "mean", "stderr", "ci_lo", "ci_hi"];

#[derive(Clone, Debug)]
pub struct Stamp {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn line(&self) -> String {
        format!("maxstab {} config_hash={} seed={}", self.command, self.config_hash, self.seed)
    }
}

/// SHA-256 of the resolved configuration (defaults filled in, seed set),
/// serialized as JSON.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a subcommand produces before it is written.
#[derive(Default)]
pub struct Bundle {
    pub rows: Vec<EvidenceRow>,
    pub summary: Map<String, Value>,
    /// `(file stem, svg body)`.
    pub charts: Vec<(String, String)>,
    /// `(file name, contents)`; contents get a `#` stamp line.
    pub files: Vec<(String, String)>,
}

impl Bundle {
    pub fn put(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).expect("summary value serializes"));
    }
}

pub fn write_bundle(dir: &Path, stamp: &Stamp, bundle: &Bundle) -> Result<Vec<PathBuf>, CliError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| CliError::Io(p, e)
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();

    let csv_path = dir.join("evidence.csv");
    write_evidence(&csv_path, stamp, &bundle.rows)?;
    written.push(csv_path);

    let mut summary = Map::new();
    summary.insert("schema_version".into(), SCHEMA_VERSION.into());
    summary.insert("command".into(), stamp.command.clone().into());
    summary.insert("config_hash".into(), stamp.config_hash.clone().into());
    summary.insert("seed".into(), stamp.seed.into());
    summary.extend(bundle.summary.clone());
    let json_path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&Value::Object(summary)).expect("summary serializes");
    text.push('\n');
    fs::write(&json_path, text).map_err(io(&json_path))?;
    written.push(json_path);

    if !bundle.charts.is_empty() {
        let charts = dir.join("charts");
        fs::create_dir_all(&charts).map_err(io(&charts))?;
        for (stem, svg) in &bundle.charts {
            let p = charts.join(format!("{stem}.svg"));
            fs::write(&p, format!("<!-- {} -->\n{svg}", stamp.line())).map_err(io(&p))?;
            written.push(p);
        }
    }
    for (name, body) in &bundle.files {
        let p = dir.join(name);
        fs::write(&p, format!("# {}\n{body}", stamp.line())).map_err(io(&p))?;
        written.push(p);
    }
    Ok(written)
}

fn write_evidence(path: &Path, stamp: &Stamp, rows: &[EvidenceRow]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::Io(path.into(), e))?;
    writeln!(f, "# {}", stamp.line()).map_err(|e| CliError::Io(path.into(), e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::Io(path.into(), e))?;
    Ok(())
}

/// Rows and stamp fields of an evidence file.
pub struct Evidence {
    pub header: Option<String>,
    pub rows: Vec<EvidenceRow>,
}

pub fn read_evidence(path: &Path) -> Result<Evidence, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.into(), e))?;
    let header = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .map(str::to_string);
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = r.deserialize().collect::<Result<Vec<EvidenceRow>, _>>()?;
    Ok(Evidence { header, rows })
}

/// `key=value` fields of a stamp line.
pub fn stamp_field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace().find_map(|w| w.strip_prefix(key)?.strip_prefix('='))
}
