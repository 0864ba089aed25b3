//! On-disk response cache, one JSON file per request key at
//! `{dir}/{key[..2]}/{key}.json`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{
    namespaced_key, request_key, ChatRequest, ClientError, Completer, CompletionResult, TokenUsage,
};

const LOCK_STRIPES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_digest: String,
    pub model_id: String,
    pub text: String,
    pub usage: Option<TokenUsage>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug)]
pub struct CacheStore {
    dir: PathBuf,
    locks: Vec<Mutex<()>>,
    quarantined: AtomicU64,
}

impl CacheStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            locks: (0..LOCK_STRIPES).map(|_| Mutex::new(())).collect(),
            quarantined: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.dir
            .join(&key[..2.min(key.len())])
            .join(format!("{key}.json"))
    }

    fn stripe(&self, key: &str) -> &Mutex<()> {
        let b = u8::from_str_radix(key.get(..2).unwrap_or("00"), 16).unwrap_or(0);
        &self.locks[b as usize % LOCK_STRIPES]
    }

    pub fn quarantined(&self) -> u64 {
        self.quarantined.load(Ordering::SeqCst)
    }

    /// Reads an entry. Unparseable or mismatched entries are moved aside and
    /// reported as a miss.
    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let path = self.entry_path(key);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if e.request_digest == key && !e.text.trim().is_empty() => Some(e),
            Ok(_) | Err(_) => {
                self.quarantine(&path);
                None
            }
        }
    }

    fn quarantine(&self, path: &Path) {
        let _guard = self
            .stripe(&path.file_stem().unwrap_or_default().to_string_lossy())
            .lock();
        let target = path.with_extension(format!(
            "json.corrupt-{}",
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_nanos())
        ));
        match std::fs::rename(path, &target) {
            Ok(()) => {
                self.quarantined.fetch_add(1, Ordering::SeqCst);
                log::warn!(
                    "corrupt cache entry {} moved to {}",
                    path.display(),
                    target.display()
                );
            }
            Err(e) => log::warn!("cannot quarantine {}: {e}", path.display()),
        }
    }

    /// Writes atomically: a temp file in the same directory is renamed over
    /// the final path, so readers never see a partial entry.
    pub fn put(&self, entry: &CacheEntry) -> std::io::Result<()> {
        let path = self.entry_path(&entry.request_digest);
        let parent = path.parent().expect("entry has a parent");
        std::fs::create_dir_all(parent)?;
        let _guard = self.stripe(&entry.request_digest).lock();
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        serde_json::to_writer_pretty(&mut tmp, entry)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// A backend whose answers are read from and written to a [`CacheStore`].
pub struct CachedBackend<C> {
    inner: C,
    store: CacheStore,
    hits: AtomicU64,
    misses: AtomicU64,
}

pub fn with_cache<C: Completer>(inner: C, store: CacheStore) -> CachedBackend<C> {
    CachedBackend {
        inner,
        store,
        hits: AtomicU64::new(0),
        misses: AtomicU64::new(0),
    }
}

impl<C> CachedBackend<C> {
    pub fn inner(&self) -> &C {
        &self.inner
    }

    pub fn store(&self) -> &CacheStore {
        &self.store
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }
}

impl<C: Completer> Completer for CachedBackend<C> {
    fn complete(&self, req: &ChatRequest) -> Result<CompletionResult, ClientError> {
        let key = namespaced_key(&self.inner.cache_namespace(), &request_key(req)?);
        if let Some(entry) = self.store.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(CompletionResult {
                text: entry.text,
                latency_ms: 0,
                token_usage: entry.usage,
                from_cache: true,
                retries: 0,
            });
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.complete(req)?;
        let entry = CacheEntry {
            request_digest: key,
            model_id: req.model_id.clone(),
            text: result.text.clone(),
            usage: result.token_usage,
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        if let Err(e) = self.store.put(&entry) {
            log::warn!("cannot write cache entry {}: {e}", entry.request_digest);
        }
        Ok(result)
    }

    fn max_inflight(&self) -> usize {
        self.inner.max_inflight()
    }

    fn cache_namespace(&self) -> String {
        self.inner.cache_namespace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{Backend, BackendSpec, Decoding, MockBehavior, RankingHint};
    use crate::prompting::{Part, Purpose, RenderedPrompt};

    fn req(seed: Option<u64>) -> ChatRequest {
        ChatRequest::new(
            "mock",
            RenderedPrompt {
                parts: vec![Part::Text("rank please".into())],
                purpose: Purpose::Ranking,
            },
            Decoding {
                seed,
                ..Decoding::default()
            },
        )
        .with_hint(RankingHint {
            candidates: vec!["A thing".into(), "B thing".into()],
            target_index: 1,
        })
    }

    fn cached(dir: &Path) -> CachedBackend<Backend> {
        let backend =
            Backend::from_spec(&BackendSpec::mock(MockBehavior::UniformRandom { seed: 1 }))
                .unwrap();
        with_cache(backend, CacheStore::open(dir).unwrap())
    }

    #[test]
    fn second_call_hits() {
        let dir = tempfile::tempdir().unwrap();
        let c = cached(dir.path());
        let a = c.complete(&req(None)).unwrap();
        let b = c.complete(&req(None)).unwrap();
        assert!(!a.from_cache);
        assert!(b.from_cache);
        assert_eq!(a.text, b.text);
        assert_eq!(c.inner().stats().calls, 1);
        let key = namespaced_key(
            &c.inner().cache_namespace(),
            &request_key(&req(None)).unwrap(),
        );
        let path = c.store().entry_path(&key);
        assert!(path.starts_with(dir.path().join(&key[..2])));
        let entry: CacheEntry = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
        assert_eq!(entry.request_digest, key);
        assert_eq!(entry.model_id, "mock");
    }

    #[test]
    fn other_backend_misses() {
        let dir = tempfile::tempdir().unwrap();
        cached(dir.path()).complete(&req(None)).unwrap();
        let oracle = Backend::from_spec(&BackendSpec::mock(MockBehavior::Oracle)).unwrap();
        let c = with_cache(oracle, CacheStore::open(dir.path()).unwrap());
        assert!(!c.complete(&req(None)).unwrap().from_cache);
    }

    #[test]
    fn different_seed_misses() {
        let dir = tempfile::tempdir().unwrap();
        let c = cached(dir.path());
        c.complete(&req(Some(1))).unwrap();
        let r = c.complete(&req(Some(2))).unwrap();
        assert!(!r.from_cache);
        assert_eq!(c.inner().stats().calls, 2);
    }

    #[test]
    fn truncated_entry_is_reexecuted_and_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let c = cached(dir.path());
        c.complete(&req(None)).unwrap();
        let key = namespaced_key(
            &c.inner().cache_namespace(),
            &request_key(&req(None)).unwrap(),
        );
        let path = c.store().entry_path(&key);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let r = c.complete(&req(None)).unwrap();
        assert!(!r.from_cache);
        assert_eq!(c.inner().stats().calls, 2);
        assert_eq!(c.store().quarantined(), 1);
        let siblings: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert!(siblings.iter().any(|n| n.contains(".corrupt-")));
        // The fresh entry is readable again.
        assert!(c.complete(&req(None)).unwrap().from_cache);
    }
}
