use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{validate_caption, CaptionRequest, CaptionRules, Captioner, ClientError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Done,
    /// Transport or service failure.
    Failed,
    /// Reached the service but the output failed validation.
    Rejected,
}

/// Persisted outcome of one external call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub request_id: u64,
    pub status: CallStatus,
    pub attempts: u32,
    #[serde(default)]
    pub output: Option<String>,
    /// What produced the output: the template version for captions, the
    /// sampling parameters for generation. Resume skips a call only when
    /// it is done and the fingerprint still matches.
    #[serde(default)]
    pub fingerprint: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

impl CallRecord {
    pub fn is_done(&self) -> bool {
        self.status == CallStatus::Done
    }

    pub fn is_done_with(&self, fingerprint: Option<&str>) -> bool {
        self.is_done() && self.fingerprint.as_deref() == fingerprint
    }
}

/// Calls `captioner` and validates the reply. Invalid replies are retried up
/// to `retry_on_invalid` more times; the final outcome is always returned as
/// a record, never dropped.
pub fn caption_validated(
    captioner: &dyn Captioner,
    request: &CaptionRequest,
    rules: &CaptionRules,
    retry_on_invalid: u32,
) -> CallRecord {
    let fingerprint = request.template().ok().map(|t| t.version_tag());
    let mut attempts = 0;
    let record = |status, attempts, output, error| CallRecord {
        request_id: request.image_id,
        status,
        attempts,
        output,
        fingerprint: fingerprint.clone(),
        error,
    };
    let mut tries = 0;
    loop {
        tries += 1;
        match captioner.caption(request) {
            Err(e) => {
                attempts += match &e {
                    ClientError::Transport { attempts, .. }
                    | ClientError::Status { attempts, .. } => *attempts,
                    _ => 1,
                };
                return record(CallStatus::Failed, attempts, None, Some(e.to_string()));
            }
            Ok(c) => {
                attempts += c.attempts;
                match validate_caption(&c.text, request.mode, rules) {
                    Ok(text) => return record(CallStatus::Done, attempts, Some(text), None),
                    Err(e) if tries > retry_on_invalid => {
                        return record(
                            CallStatus::Rejected,
                            attempts,
                            Some(c.text),
                            Some(e.to_string()),
                        )
                    }
                    Err(e) => log::debug!(
                        "retrying image {} after rejected caption: {e}",
                        request.image_id
                    ),
                }
            }
        }
    }
}

/// Applies `f` to every item with at most `in_flight` calls running at once.
/// Results come back in item order whatever the completion order.
pub fn run_bounded<T: Sync, R: Send>(
    items: &[T],
    in_flight: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let workers = in_flight.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Append-only JSONL log of call outcomes. The last record per request wins.
#[derive(Debug)]
pub struct CallLog {
    path: PathBuf,
    records: BTreeMap<u64, CallRecord>,
}

impl CallLog {
    pub fn open(path: impl Into<PathBuf>) -> crate::Result<Self> {
        let path = path.into();
        let mut records = BTreeMap::new();
        if path.exists() {
            let file = std::fs::File::open(&path).map_err(|e| crate::Error::io(&path, e))?;
            for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| crate::Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: CallRecord =
                    serde_json::from_str(&line).map_err(|e| crate::Error::MalformedLine {
                        line: n + 1,
                        message: e.to_string(),
                    })?;
                records.insert(r.request_id, r);
            }
        }
        Ok(Self { path, records })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, request_id: u64) -> Option<&CallRecord> {
        self.records.get(&request_id)
    }

    pub fn is_done(&self, request_id: u64, fingerprint: Option<&str>) -> bool {
        self.get(request_id)
            .is_some_and(|r| r.is_done_with(fingerprint))
    }

    pub fn records(&self) -> impl Iterator<Item = &CallRecord> {
        self.records.values()
    }

    /// Appends `batch` in request-id order and flushes.
    pub fn commit(&mut self, mut batch: Vec<CallRecord>) -> crate::Result<()> {
        batch.sort_by_key(|r| r.request_id);
        let mut buf = Vec::new();
        for r in &batch {
            serde_json::to_writer(&mut buf, r).expect("plain data serializes");
            buf.push(b'\n');
        }
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(&buf).and_then(|_| f.sync_data()))
            .map_err(|e| crate::Error::io(&self.path, e))?;
        for r in batch {
            self.records.insert(r.request_id, r);
        }
        Ok(())
    }
}
