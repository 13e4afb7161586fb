use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use lru::LruCache;

use crate::backend::{Backend, BackendDescriptor, BackendError, BlobSource};
use crate::digest::Digest;
use crate::raster::ImageBlob;
use crate::request::GenerationRequest;

pub const DEFAULT_CACHE_ENTRIES: usize = 256;

/// Bounded LRU of finished images keyed by canonical-request digest.
///
/// Inputs are referenced by content digest inside the canonical bytes, so a
/// hit is always the image the wrapped backend would return for the same
/// request (given a deterministic backend).
pub struct CachedBackend {
    inner: Arc<dyn Backend>,
    entries: Mutex<LruCache<Digest, ImageBlob>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CachedBackend {
    pub fn new(inner: Arc<dyn Backend>, capacity: usize) -> Self {
        let capacity = NonZeroUsize::new(capacity).unwrap_or(NonZeroUsize::MIN);
        CachedBackend {
            inner,
            entries: Mutex::new(LruCache::new(capacity)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Backend for CachedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn generate(
        &self,
        request: &GenerationRequest,
        blobs: &dyn BlobSource,
    ) -> Result<ImageBlob, BackendError> {
        let key = request.canonical_digest();
        if let Some(hit) = self.entries.lock().expect("cache poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        // Errors are not cached; a failed request may succeed on retry.
        let image = self.inner.generate(request, blobs)?;
        self.entries
            .lock()
            .expect("cache poisoned")
            .put(key, image.clone());
        Ok(image)
    }

    fn precheck(&self, request: &GenerationRequest) -> Result<(), BackendError> {
        self.inner.precheck(request)
    }
}
