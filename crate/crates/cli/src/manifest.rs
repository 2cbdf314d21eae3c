//! Run manifests. Every output file names the manifest and carries the
//! digest of the resolved inputs, so a file can be traced to its run
//! without breaking byte-for-byte reproducibility.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "retrialq.manifest/1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub command: String,
    pub tool_version: &'static str,
    /// Parameters, seeds and tolerances after defaults and overrides.
    pub inputs: Value,
    pub inputs_sha256: String,
    pub seeds: Vec<u64>,
    pub tolerances: Value,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputDigest>,
}

/// Collects output files of one run and writes the manifest last.
pub struct Run {
    dir: PathBuf,
    command: String,
    inputs: Value,
    seeds: Vec<u64>,
    tolerances: Value,
    inputs_sha256: String,
    started: SystemTime,
    clock: Instant,
    outputs: Vec<OutputDigest>,
}

impl Run {
    pub fn new(dir: &Path, command: &str, inputs: Value, seeds: Vec<u64>, tolerances: Value) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let canonical = serde_json::json!({
            "command": command,
            "inputs": inputs,
            "seeds": seeds,
            "tolerances": tolerances,
        });
        Ok(Run {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            inputs_sha256: sha256_hex(canonical.to_string().as_bytes()),
            inputs,
            seeds,
            tolerances,
            started: SystemTime::now(),
            clock: Instant::now(),
            outputs: Vec::new(),
        })
    }

    /// First line of every CSV output.
    pub fn csv_header_comment(&self) -> String {
        format!("# manifest={MANIFEST_FILE} inputs_sha256={}\n", self.inputs_sha256)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.outputs.push(OutputDigest {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Writes a JSON document with `schema`, `manifest` and `inputs_sha256`
    /// fields prepended.
    pub fn write_json(&mut self, name: &str, schema: &str, body: Value) -> Result<PathBuf, CliError> {
        let doc = self.stamp(schema, body);
        let text = serde_json::to_string_pretty(&doc).expect("JSON values serialize") + "\n";
        self.write(name, text.as_bytes())
    }

    pub fn stamp(&self, schema: &str, body: Value) -> Value {
        let mut doc = serde_json::Map::new();
        doc.insert("schema".into(), schema.into());
        doc.insert("manifest".into(), MANIFEST_FILE.into());
        doc.insert("inputs_sha256".into(), self.inputs_sha256.clone().into());
        if let Value::Object(m) = body {
            doc.extend(m);
        } else {
            doc.insert("data".into(), body);
        }
        Value::Object(doc)
    }

    pub fn finish(self) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA,
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: self.inputs,
            inputs_sha256: self.inputs_sha256,
            seeds: self.seeds,
            tolerances: self.tolerances,
            started_unix: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_seconds: self.clock.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
