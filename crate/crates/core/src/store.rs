//! Content-addressed blob store plus named append-only event streams.
//!
//! Layout under the data directory:
//!
//! ```text
//! <data_dir>/blobs/<hh>/<digest>      blob bytes, <hh> = first two hex chars
//! <data_dir>/streams/<name>.jsonl     one canonical-JSON event per line
//! ```
//!
//! Blobs are verified against their digest on every read. Stream appends are
//! flushed to stable storage before the offset is returned.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::canonical;
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::time::{system_clock, Clock, Timestamp};

/// One entry of a named stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamEvent {
    pub offset: u64,
    pub payload: Box<RawValue>,
    pub recorded_at: Timestamp,
    pub stream: String,
}

impl StreamEvent {
    pub fn payload_bytes(&self) -> &[u8] {
        self.payload.get().as_bytes()
    }

    pub fn decode<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_str(self.payload.get())?)
    }
}

/// The exact on-disk bytes of an event, without the trailing newline.
pub fn event_line(stream: &str, offset: u64, payload: &[u8], recorded_at: Timestamp) -> Vec<u8> {
    format!(
        "{{\"offset\":{offset},\"payload\":{},\"recorded_at\":\"{recorded_at}\",\"stream\":\"{stream}\"}}",
        String::from_utf8_lossy(payload)
    )
    .into_bytes()
}

/// Stream names are one or more `/`-separated segments of `[a-z0-9_-]+`.
pub fn validate_stream_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.split('/').all(|seg| {
            !seg.is_empty()
                && seg
                    .bytes()
                    .all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-'))
        });
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidStreamName(name.to_string()))
    }
}

#[derive(Debug, Default)]
struct StreamState {
    len: u64,
    file_size: u64,
}

pub struct ArtifactStore {
    root: PathBuf,
    clock: Clock,
    sync: bool,
    writers: Mutex<HashMap<String, Arc<Mutex<Option<StreamState>>>>>,
    tmp_counter: AtomicU64,
}

impl std::fmt::Debug for ArtifactStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ArtifactStore").field("root", &self.root).finish()
    }
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        Self::open_with_clock(root, system_clock())
    }

    pub fn open_with_clock(root: impl Into<PathBuf>, clock: Clock) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("blobs"))?;
        fs::create_dir_all(root.join("streams"))?;
        Ok(Self {
            root,
            clock,
            sync: true,
            writers: Mutex::new(HashMap::new()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    /// Disable fsync on writes. Only meant for throwaway stores in tests.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn now(&self) -> Timestamp {
        (self.clock)()
    }

    pub fn blob_path(&self, digest: &Digest) -> PathBuf {
        let hex = digest.to_hex();
        self.root.join("blobs").join(&hex[..2]).join(hex)
    }

    pub fn stream_path(&self, name: &str) -> PathBuf {
        self.root.join("streams").join(format!("{name}.jsonl"))
    }

    pub fn put_blob(&self, bytes: &[u8]) -> Result<Digest> {
        let digest = Digest::of(bytes);
        let path = self.blob_path(&digest);
        if path.exists() {
            return Ok(digest);
        }
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".tmp-{}-{}-{}",
            digest.short(16),
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            if self.sync {
                f.sync_all()?;
            }
        }
        fs::rename(&tmp, &path)?;
        Ok(digest)
    }

    pub fn get_blob(&self, digest: &Digest) -> Result<Vec<u8>> {
        let bytes = match fs::read(self.blob_path(digest)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("blob {digest}")))
            }
            Err(e) => return Err(e.into()),
        };
        if Digest::of(&bytes) != *digest {
            return Err(Error::IntegrityViolation { digest: *digest });
        }
        Ok(bytes)
    }

    /// Whether a blob file is present (no content verification).
    pub fn has_blob(&self, digest: &Digest) -> bool {
        self.blob_path(digest).is_file()
    }

    pub fn stream_exists(&self, name: &str) -> bool {
        validate_stream_name(name).is_ok() && self.stream_path(name).is_file()
    }

    /// Create an empty stream if it does not exist yet.
    pub fn create_stream(&self, name: &str) -> Result<()> {
        validate_stream_name(name)?;
        let path = self.stream_path(name);
        if !path.exists() {
            fs::create_dir_all(path.parent().expect("stream path has a parent"))?;
            OpenOptions::new().create(true).append(true).open(&path)?;
        }
        Ok(())
    }

    fn writer(&self, name: &str) -> Arc<Mutex<Option<StreamState>>> {
        let mut writers = self.writers.lock().expect("writer table poisoned");
        writers.entry(name.to_string()).or_default().clone()
    }

    /// Append a canonical-JSON payload; returns the new event's offset.
    pub fn append_event(&self, stream: &str, payload: &[u8]) -> Result<u64> {
        self.append_event_at(stream, payload, None)
    }

    /// Like [`append_event`](Self::append_event) with a caller-chosen
    /// `recorded_at`; `None` takes the store clock.
    pub fn append_event_at(&self, stream: &str, payload: &[u8], recorded_at: Option<Timestamp>) -> Result<u64> {
        validate_stream_name(stream)?;
        if !canonical::is_canonical(payload) {
            return Err(Error::InvalidInput(format!(
                "payload for stream {stream:?} is not canonical JSON"
            )));
        }
        let writer = self.writer(stream);
        let mut state = writer.lock().expect("stream writer poisoned");
        let path = self.stream_path(stream);
        fs::create_dir_all(path.parent().expect("stream path has a parent"))?;
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        let size = file.metadata()?.len();
        let len = match state.as_ref() {
            Some(s) if s.file_size == size => s.len,
            _ => count_lines(&path)?,
        };
        let recorded_at = recorded_at.unwrap_or_else(|| self.now());
        let mut line = event_line(stream, len, payload, recorded_at);
        line.push(b'\n');
        file.write_all(&line)?;
        if self.sync {
            file.sync_data()?;
        }
        *state = Some(StreamState {
            len: len + 1,
            file_size: size + line.len() as u64,
        });
        Ok(len)
    }

    /// Append any serializable value, canonicalized.
    pub fn append_json<T: Serialize + ?Sized>(&self, stream: &str, value: &T) -> Result<u64> {
        self.append_event(stream, &canonical::to_vec(value)?)
    }

    /// Raw line bytes of a stream, one entry per event, without parsing.
    pub fn read_raw_lines(&self, stream: &str) -> Result<Vec<Vec<u8>>> {
        validate_stream_name(stream)?;
        let path = self.stream_path(stream);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::UnknownStream(stream.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let mut reader = BufReader::new(file);
        let mut lines = Vec::new();
        loop {
            let mut buf = Vec::new();
            let n = reader.read_until(b'\n', &mut buf)?;
            if n == 0 {
                break;
            }
            if buf.last() == Some(&b'\n') {
                buf.pop();
            }
            lines.push(buf);
        }
        Ok(lines)
    }

    pub fn read_events(&self, stream: &str, from: u64) -> Result<Vec<StreamEvent>> {
        let lines = self.read_raw_lines(stream)?;
        lines
            .iter()
            .enumerate()
            .skip(from as usize)
            .map(|(i, line)| {
                parse_event_line(line).ok_or(Error::CorruptEvent {
                    stream: stream.to_string(),
                    line: i as u64,
                })
            })
            .collect()
    }

    /// Like [`read_events`](Self::read_events), treating an unknown stream as empty.
    pub fn read_events_or_empty(&self, stream: &str) -> Result<Vec<StreamEvent>> {
        match self.read_events(stream, 0) {
            Err(Error::UnknownStream(_)) => Ok(Vec::new()),
            other => other,
        }
    }

    pub fn stream_len(&self, stream: &str) -> Result<u64> {
        validate_stream_name(stream)?;
        let path = self.stream_path(stream);
        if !path.exists() {
            return Err(Error::UnknownStream(stream.to_string()));
        }
        count_lines(&path)
    }

    /// Names of all streams on disk, sorted.
    pub fn list_streams(&self) -> Result<Vec<String>> {
        let base = self.root.join("streams");
        let mut out = Vec::new();
        collect_streams(&base, &base, &mut out)?;
        out.sort();
        Ok(out)
    }
}

fn collect_streams(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_streams(base, &path, out)?;
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            let rel = path.strip_prefix(base).expect("under base").with_extension("");
            let name = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push(name);
        }
    }
    Ok(())
}

fn count_lines(path: &Path) -> Result<u64> {
    match fs::read(path) {
        Ok(bytes) => Ok(bytes.iter().filter(|b| **b == b'\n').count() as u64),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
        Err(e) => Err(e.into()),
    }
}

/// Parse one JSONL line into an event; `None` if the line is malformed.
pub fn parse_event_line(line: &[u8]) -> Option<StreamEvent> {
    serde_json::from_slice(line).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store() -> (tempfile::TempDir, ArtifactStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        (dir, store)
    }

    #[test]
    fn blob_vectors_and_idempotence() {
        let (_d, s) = store();
        let empty = s.put_blob(b"").unwrap();
        assert_eq!(
            empty.to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        let abc = s.put_blob(b"abc").unwrap();
        assert_eq!(
            abc.to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(s.put_blob(b"abc").unwrap(), abc);
        assert_eq!(s.get_blob(&abc).unwrap(), b"abc");
        assert!(s.blob_path(&abc).ends_with(format!("blobs/ba/{abc}")));
    }

    #[test]
    fn missing_and_corrupt_blobs() {
        let (_d, s) = store();
        let unknown = Digest::of(b"never stored");
        assert!(matches!(s.get_blob(&unknown), Err(Error::NotFound(_))));
        let d = s.put_blob(b"abc").unwrap();
        fs::write(s.blob_path(&d), b"abd").unwrap();
        let err = s.get_blob(&d).unwrap_err();
        assert_eq!(err.code(), "integrity-violation");
    }

    #[test]
    fn stream_offsets_and_reads() {
        let (_d, s) = store();
        assert_eq!(s.append_event("decisions", br#"{"n":0}"#).unwrap(), 0);
        assert_eq!(s.append_event("decisions", br#"{"n":1}"#).unwrap(), 1);
        assert_eq!(s.append_event("decisions", br#"{"n":2}"#).unwrap(), 2);
        let all = s.read_events("decisions", 0).unwrap();
        assert_eq!(all.iter().map(|e| e.offset).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(all[1].payload_bytes(), br#"{"n":1}"#);
        assert_eq!(s.read_events("decisions", 2).unwrap().len(), 1);
        assert!(s.read_events("decisions", 7).unwrap().is_empty());
        assert!(matches!(s.read_events("nonexistent", 0), Err(Error::UnknownStream(_))));
        s.create_stream("empty").unwrap();
        assert!(s.read_events("empty", 0).unwrap().is_empty());
    }

    #[test]
    fn stream_name_grammar() {
        let (_d, s) = store();
        let err = s.append_event("UPPER!", b"{}").unwrap_err();
        assert_eq!(err.code(), "invalid-stream-name");
        assert!(validate_stream_name("telemetry/latency_ms").is_ok());
        assert!(validate_stream_name("a//b").is_err());
        assert!(validate_stream_name("../x").is_err());
        assert!(validate_stream_name("").is_err());
        assert_eq!(s.append_event("telemetry/refusal_rate", b"{}").unwrap(), 0);
        assert_eq!(s.list_streams().unwrap(), vec!["telemetry/refusal_rate".to_string()]);
    }

    #[test]
    fn non_canonical_payload_rejected() {
        let (_d, s) = store();
        assert!(s.append_event("x", b"{ \"a\": 1 }").is_err());
    }

    #[test]
    fn external_append_is_noticed() {
        let (_d, s) = store();
        s.append_event("x", b"{}").unwrap();
        let other = ArtifactStore::open(s.root()).unwrap();
        assert_eq!(other.append_event("x", b"{}").unwrap(), 1);
        assert_eq!(s.append_event("x", b"{}").unwrap(), 2);
    }

    #[test]
    fn concurrent_appends_are_contiguous() {
        let (_d, s) = store();
        let s = Arc::new(s);
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let s = s.clone();
                std::thread::spawn(move || {
                    for i in 0..10 {
                        s.append_json("c", &serde_json::json!({"t": t, "i": i})).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let events = s.read_events("c", 0).unwrap();
        assert_eq!(events.len(), 80);
        assert!(events.iter().enumerate().all(|(i, e)| e.offset == i as u64));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn blob_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let (_d, s) = store();
            let d = s.put_blob(&bytes).unwrap();
            prop_assert_eq!(s.get_blob(&d).unwrap(), bytes);
        }

        #[test]
        fn reads_are_prefix_stable(ns in proptest::collection::vec(0u32..1000, 1..20)) {
            let (_d, s) = store();
            let mut previous: Vec<Vec<u8>> = Vec::new();
            for n in ns {
                s.append_json("p", &serde_json::json!({"n": n})).unwrap();
                let now: Vec<Vec<u8>> = s.read_events("p", 0).unwrap()
                    .iter().map(|e| e.payload_bytes().to_vec()).collect();
                prop_assert!(now.starts_with(&previous));
                previous = now;
            }
        }
    }
}
