//! Content-addressed record/replay of chat completions.
//!
//! Each entry lives in `<dir>/<sha256 of the request>.json`. With an inner
//! backend, misses are forwarded and recorded; without one, a miss is a
//! [`BackendError::ReplayMiss`].

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};
use crate::util::write_atomic;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReplayEntry {
    key: String,
    request: ChatRequest,
    text: String,
    #[serde(default)]
    usage: Option<Usage>,
    model: String,
}

pub struct ReplayBackend {
    dir: PathBuf,
    inner: Option<Arc<dyn ChatBackend>>,
}

impl ReplayBackend {
    /// Replay only; unknown requests fail.
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        ReplayBackend {
            dir: dir.into(),
            inner: None,
        }
    }

    /// Replays known requests and records new ones from `inner`.
    pub fn recording(dir: impl Into<PathBuf>, inner: Arc<dyn ChatBackend>) -> Self {
        ReplayBackend {
            dir: dir.into(),
            inner: Some(inner),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn lookup(&self, key: &str) -> Result<Option<ReplayEntry>, BackendError> {
        let path = self.entry_path(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(BackendError::Config(format!("{}: {e}", path.display()))),
        };
        serde_json::from_str(&text).map(Some).map_err(|e| BackendError::Protocol {
            message: format!("corrupt replay entry {}: {e}", path.display()),
            raw: text,
        })
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> String {
        match &self.inner {
            Some(inner) => format!("record:{}", inner.id()),
            None => format!("replay:{}", self.dir.display()),
        }
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = request.content_key();
        if let Some(entry) = self.lookup(&key)? {
            return Ok(ChatResponse {
                text: entry.text,
                usage: entry.usage,
                model: entry.model,
                latency: Duration::ZERO,
            });
        }
        let Some(inner) = &self.inner else {
            return Err(BackendError::ReplayMiss { key });
        };
        let response = inner.complete(request)?;
        let entry = ReplayEntry {
            key: key.clone(),
            request: request.clone(),
            text: response.text.clone(),
            usage: response.usage,
            model: response.model.clone(),
        };
        fs::create_dir_all(&self.dir).map_err(|e| BackendError::Config(format!("{}: {e}", self.dir.display())))?;
        let json = serde_json::to_string_pretty(&entry).expect("replay entry serializes");
        write_atomic(&self.entry_path(&key), json.as_bytes())
            .map_err(|e| BackendError::Config(format!("recording {key}: {e}")))?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::ScriptedBackend;
    use crate::prompts::{ChatMessage, ChatPrompt};

    fn request(title: &str) -> ChatRequest {
        let prompt =
            ChatPrompt::new(vec![ChatMessage::system("s"), ChatMessage::user(format!("Product title: {title}"))]).unwrap();
        ChatRequest::new("m", prompt)
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let inner = Arc::new(ScriptedBackend::new([Ok("{\"a\": \"1\"}".to_string())]));
        let recorder = ReplayBackend::recording(dir.path(), inner.clone());
        assert_eq!(recorder.complete(&request("x")).unwrap().text, "{\"a\": \"1\"}");
        // second call is served from disk
        assert_eq!(recorder.complete(&request("x")).unwrap().text, "{\"a\": \"1\"}");
        assert_eq!(inner.calls(), 1);

        let replay = ReplayBackend::replay(dir.path());
        assert_eq!(replay.complete(&request("x")).unwrap().text, "{\"a\": \"1\"}");
        assert!(matches!(replay.complete(&request("y")), Err(BackendError::ReplayMiss { .. })));
    }
}
