//! Content-addressed response cache: one JSON file per key, published by
//! write-to-temp-then-rename so concurrent writers never expose a torn entry.

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{CacheKey, GatewayError, ModelResponse, Payload, RequestKind};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub endpoint_name: String,
    pub kind: RequestKind,
    pub content_digest: String,
    pub payload: Payload,
    pub latency_ms: u64,
}

#[derive(Debug, Clone)]
pub struct CacheStore {
    root: PathBuf,
}

impl CacheStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let stem = key.stem();
        self.root.join(&stem[..2]).join(format!("{stem}.json"))
    }

    /// Returns the stored entry, or `None` on a miss. Unreadable or corrupt
    /// entries count as misses.
    pub fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        let path = self.path_for(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "unreadable cache entry");
                return None;
            }
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry)
                if entry.endpoint_name == key.endpoint_name
                    && entry.kind == key.kind
                    && entry.content_digest == key.content_digest =>
            {
                Some(entry)
            }
            Ok(_) => {
                tracing::warn!(path = %path.display(), "cache entry does not match its key");
                None
            }
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "corrupt cache entry, refetching");
                None
            }
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> std::io::Result<()> {
        let key = CacheKey::new(
            &entry.endpoint_name,
            entry.kind,
            entry.content_digest.clone(),
        );
        let path = self.path_for(&key);
        let dir = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            key.stem(),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let json = serde_json::to_vec(entry).expect("cache entry serializes");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, &path).inspect_err(|_| {
            let _ = std::fs::remove_file(&tmp);
        })
    }
}

/// Serves `key` from `store` when present; otherwise runs `thunk`, stores its
/// payload and returns it. Failures are never cached.
pub async fn cached_call<F, Fut>(
    store: Option<&CacheStore>,
    key: &CacheKey,
    thunk: F,
) -> Result<ModelResponse, GatewayError>
where
    F: FnOnce() -> Fut,
    Fut: Future<Output = Result<Payload, GatewayError>>,
{
    if let Some(entry) = store.and_then(|s| s.get(key)) {
        return Ok(ModelResponse {
            endpoint_name: entry.endpoint_name,
            kind: entry.kind,
            payload: entry.payload,
            latency_ms: entry.latency_ms,
            from_cache: true,
        });
    }
    let started = Instant::now();
    let payload = thunk().await?;
    let latency_ms = started.elapsed().as_millis() as u64;
    if let Some(store) = store {
        let entry = CacheEntry {
            endpoint_name: key.endpoint_name.clone(),
            kind: key.kind,
            content_digest: key.content_digest.clone(),
            payload: payload.clone(),
            latency_ms,
        };
        store.put(&entry).map_err(GatewayError::Cache)?;
    }
    Ok(ModelResponse {
        endpoint_name: key.endpoint_name.clone(),
        kind: key.kind,
        payload,
        latency_ms,
        from_cache: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    fn key(d: &str) -> CacheKey {
        CacheKey::new("vlm-a", RequestKind::Caption, d.into())
    }

    #[tokio::test]
    async fn miss_then_hit_runs_thunk_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        let calls = AtomicUsize::new(0);
        for expect_cached in [false, true] {
            let r = cached_call(Some(&store), &key("a"), || async {
                calls.fetch_add(1, Ordering::SeqCst);
                Ok(Payload::Text("a person walking".into()))
            })
            .await
            .unwrap();
            assert_eq!(r.from_cache, expect_cached);
            assert_eq!(r.text(), Some("a person walking"));
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn errors_are_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        let r = cached_call(Some(&store), &key("e"), || async {
            Err(GatewayError::Precondition("boom".into()))
        })
        .await;
        assert!(r.is_err());
        assert!(store.get(&key("e")).is_none());
    }

    #[tokio::test]
    async fn corrupt_entry_is_a_miss_and_gets_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::open(dir.path()).unwrap();
        let path = store.path_for(&key("c"));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, b"{ truncated").unwrap();
        let r = cached_call(Some(&store), &key("c"), || async {
            Ok(Payload::Text("fresh".into()))
        })
        .await
        .unwrap();
        assert!(!r.from_cache);
        assert_eq!(
            store.get(&key("c")).unwrap().payload,
            Payload::Text("fresh".into())
        );
    }

    #[tokio::test]
    async fn deleted_cache_dir_repopulates() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("cache");
        let store = CacheStore::open(&root).unwrap();
        let thunk = || async { Ok(Payload::Vector(vec![0.5, 0.5])) };
        cached_call(Some(&store), &key("d"), thunk).await.unwrap();
        std::fs::remove_dir_all(&root).unwrap();
        let r = cached_call(Some(&store), &key("d"), thunk).await.unwrap();
        assert!(!r.from_cache);
        let r = cached_call(Some(&store), &key("d"), thunk).await.unwrap();
        assert!(r.from_cache);
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn racing_writers_leave_one_valid_entry() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(CacheStore::open(dir.path()).unwrap());
        let mut tasks = Vec::new();
        for i in 0..16 {
            let store = store.clone();
            tasks.push(tokio::spawn(async move {
                cached_call(Some(&store), &key("race"), || async move {
                    tokio::task::yield_now().await;
                    Ok(Payload::Text(format!("writer {i}")))
                })
                .await
                .unwrap()
            }));
        }
        for t in tasks {
            t.await.unwrap();
        }
        let entry = store.get(&key("race")).expect("one valid entry");
        assert!(matches!(entry.payload, Payload::Text(ref t) if t.starts_with("writer ")));
        let leftovers: Vec<_> = std::fs::read_dir(store.path_for(&key("race")).parent().unwrap())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
