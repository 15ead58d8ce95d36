use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationRequest, GenerationResponse, PolicyBackend};

/// One line of a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedCall {
    pub seq: usize,
    pub request: GenerationRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<GenerationResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<BackendError>,
}

/// Replays a recorded session call by call. Requests must arrive in the
/// recorded order and be identical to the recorded ones.
pub struct ReplayBackend {
    id: String,
    calls: Vec<RecordedCall>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(calls: Vec<RecordedCall>) -> Self {
        ReplayBackend {
            id: "replay".into(),
            calls,
            cursor: Mutex::new(0),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, BackendError> {
        let mut calls = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let call: RecordedCall = serde_json::from_str(line)
                .map_err(|e| BackendError::Load(format!("recording line {}: {e}", n + 1)))?;
            calls.push(call);
        }
        Ok(Self::new(calls))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Load(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    /// Calls consumed so far.
    pub fn position(&self) -> usize {
        *self.cursor.lock().unwrap()
    }

    /// Rewinds to the start of the recording.
    pub fn rewind(&self) {
        *self.cursor.lock().unwrap() = 0;
    }
}

impl PolicyBackend for ReplayBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let mut cursor = self.cursor.lock().unwrap();
        let index = *cursor;
        let Some(call) = self.calls.get(index) else {
            return Err(BackendError::ReplayExhausted { index });
        };
        if call.request != *request {
            return Err(BackendError::ReplayMismatch {
                index,
                detail: describe_mismatch(&call.request, request),
            });
        }
        *cursor += 1;
        match (&call.response, &call.error) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(e)) => Err(e.clone()),
            (None, None) => Err(BackendError::Load(format!(
                "recording entry {index} has neither response nor error"
            ))),
        }
    }
}

fn describe_mismatch(recorded: &GenerationRequest, got: &GenerationRequest) -> String {
    if recorded.role_tag != got.role_tag {
        return format!(
            "role {} recorded, {} requested",
            recorded.role_tag, got.role_tag
        );
    }
    if recorded.response_schema_id != got.response_schema_id {
        return format!(
            "schema {} recorded, {} requested",
            recorded.response_schema_id, got.response_schema_id
        );
    }
    if recorded.messages != got.messages {
        return "prompt text differs".into();
    }
    "sampling parameters differ".into()
}

/// Wraps a backend and appends every call to `sink` as JSON Lines.
pub struct RecordingBackend<B, W> {
    inner: B,
    sink: Mutex<(usize, W)>,
}

pub fn record_session<B: PolicyBackend, W: Write + Send>(
    backend: B,
    sink: W,
) -> RecordingBackend<B, W> {
    RecordingBackend {
        inner: backend,
        sink: Mutex::new((0, sink)),
    }
}

impl<B, W: Write> RecordingBackend<B, W> {
    pub fn entries(&self) -> usize {
        self.sink.lock().unwrap().0
    }

    pub fn into_sink(self) -> W {
        let (_, mut w) = self.sink.into_inner().unwrap();
        let _ = w.flush();
        w
    }
}

impl<B: PolicyBackend, W: Write + Send> PolicyBackend for RecordingBackend<B, W> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        // The lock is held across the call so entries land in call order.
        let mut guard = self.sink.lock().unwrap();
        let result = self.inner.generate(request);
        let (seq, sink) = &mut *guard;
        let entry = RecordedCall {
            seq: *seq,
            request: request.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().cloned(),
        };
        let mut line = serde_json::to_string(&entry)
            .map_err(|e| BackendError::SinkWriteFailure(e.to_string()))?;
        line.push('\n');
        sink.write_all(line.as_bytes())
            .and_then(|_| sink.flush())
            .map_err(|e| BackendError::SinkWriteFailure(e.to_string()))?;
        *seq += 1;
        result
    }
}
