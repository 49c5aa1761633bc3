use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transport::CompletionRequest;
use super::BridgeError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RequestKey {
    pub run: u32,
    pub round: u32,
    pub agent: String,
    pub kind: String,
    pub attempt: u32,
}

impl fmt::Display for RequestKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run {} round {} {} {} attempt {}", self.run, self.round, self.agent, self.kind, self.attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    #[serde(flatten)]
    pub key: RequestKey,
    pub digest: String,
    pub response: String,
}

/// SHA-256 over the canonical JSON encoding of the request.
pub fn request_digest(request: &CompletionRequest) -> String {
    let bytes = serde_json::to_vec(request).expect("request is serializable");
    hex::encode(Sha256::digest(&bytes))
}

/// Recorded request/response pairs. Files are JSON lines, appended in the
/// order responses arrive.
#[derive(Debug, Default)]
pub struct Cassette {
    entries: HashMap<RequestKey, CassetteEntry>,
    order: Vec<RequestKey>,
    writer: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

impl Cassette {
    pub fn in_memory() -> Self {
        Cassette::default()
    }

    /// Starts a new cassette file, truncating any existing one.
    pub fn create(path: &Path) -> Result<Self, BridgeError> {
        let file = File::create(path).map_err(|source| BridgeError::Cassette { path: path.to_path_buf(), source })?;
        Ok(Cassette { writer: Some(BufWriter::new(file)), path: Some(path.to_path_buf()), ..Default::default() })
    }

    pub fn load(path: &Path) -> Result<Self, BridgeError> {
        let file = File::open(path).map_err(|source| BridgeError::Cassette { path: path.to_path_buf(), source })?;
        let mut cassette = Cassette { path: Some(path.to_path_buf()), ..Default::default() };
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| BridgeError::Cassette { path: path.to_path_buf(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| BridgeError::CassetteFormat {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
            cassette.insert(entry);
        }
        Ok(cassette)
    }

    fn insert(&mut self, entry: CassetteEntry) {
        if self.entries.insert(entry.key.clone(), entry.clone()).is_none() {
            self.order.push(entry.key);
        }
    }

    pub fn get(&self, key: &RequestKey) -> Option<&CassetteEntry> {
        self.entries.get(key)
    }

    pub fn append(&mut self, entry: CassetteEntry) -> Result<(), BridgeError> {
        if let Some(w) = self.writer.as_mut() {
            let path = self.path.clone().unwrap_or_default();
            let line = serde_json::to_string(&entry).expect("entry is serializable");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|source| BridgeError::Cassette { path, source })?;
        }
        self.insert(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CassetteEntry> {
        self.order.iter().map(|k| &self.entries[k])
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::prompt::SchemaId;
    use crate::bridge::transport::Message;

    fn request(text: &str) -> CompletionRequest {
        CompletionRequest {
            model: "m".into(),
            temperature: 1.0,
            messages: vec![Message { role: "user".into(), content: text.into() }],
            schema_id: SchemaId::PriceBook,
        }
    }

    #[test]
    fn digest_tracks_content() {
        assert_eq!(request_digest(&request("a")), request_digest(&request("a")));
        assert_ne!(request_digest(&request("a")), request_digest(&request("b")));
        assert_eq!(request_digest(&request("a")).len(), 64);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut c = Cassette::create(&path).unwrap();
        let key = RequestKey { run: 0, round: 1, agent: "expert-0".into(), kind: "prices".into(), attempt: 0 };
        c.append(CassetteEntry { key: key.clone(), digest: "d".into(), response: "{}".into() }).unwrap();
        drop(c);
        let loaded = Cassette::load(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded.get(&key).unwrap().response, "{}");
    }
}
