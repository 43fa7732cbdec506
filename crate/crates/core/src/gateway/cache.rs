//! On-disk candidate-pool cache.
//!
//! Layout: `<root>/pools/<sha256(prompt)>/<model_id>/manifest.json` plus
//! `000.png`, `001.png`, ... Entries are written to `<root>/tmp/` and renamed
//! into place, so readers never observe a partial entry. Concurrent requests
//! for the same entry serialize on a lock file under `<root>/locks/`.

use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imagecore::{load_image, save_image, Image};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid cache key: {0}")]
    InvalidKey(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub prompt: String,
    pub model_id: String,
    pub gamma: usize,
    pub seed: u64,
    pub created_unix: u64,
    pub tool_version: String,
}

/// Points at which the fault hook is consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultStage {
    /// All files are in the temp dir; the rename has not happened.
    BeforeRename,
}

type FaultHook = Arc<dyn Fn(FaultStage) -> io::Result<()> + Send + Sync>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

pub struct PoolCache {
    root: PathBuf,
    fault_hook: Option<FaultHook>,
    hits: AtomicUsize,
    misses: AtomicUsize,
    tmp_counter: AtomicU64,
}

impl std::fmt::Debug for PoolCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoolCache").field("root", &self.root).finish()
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

fn png_name(index: usize) -> String {
    format!("{index:03}.png")
}

impl PoolCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        PoolCache {
            root: root.into(),
            fault_hook: None,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            tmp_counter: AtomicU64::new(0),
        }
    }

    /// Installs a hook that may fail a write at the given stage. A failure
    /// aborts the write as a crash would: the temp dir is left behind.
    pub fn with_fault_hook(mut self, hook: impl Fn(FaultStage) -> io::Result<()> + Send + Sync + 'static) -> Self {
        self.fault_hook = Some(Arc::new(hook));
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn entry_dir(&self, prompt: &str, model_id: &str) -> Result<PathBuf, CacheError> {
        let ok = !model_id.is_empty() && model_id != "." && model_id != ".." && !model_id.contains(['/', '\\', '\0']);
        if !ok {
            return Err(CacheError::InvalidKey(format!(
                "model id {model_id:?} is not a valid path component"
            )));
        }
        Ok(self.root.join("pools").join(prompt_hash(prompt)).join(model_id))
    }

    /// Reads a complete, matching entry with at least `gamma` images.
    /// Anything else (missing, corrupt, other seed) is a miss.
    fn read_entry(&self, dir: &Path, prompt: &str, model_id: &str, gamma: usize, seed: u64) -> Option<Vec<Image>> {
        let text = fs::read_to_string(dir.join("manifest.json")).ok()?;
        let manifest: PoolManifest = match serde_json::from_str(&text) {
            Ok(m) => m,
            Err(e) => {
                warn!("ignoring corrupt cache manifest in {}: {e}", dir.display());
                return None;
            }
        };
        if manifest.prompt != prompt || manifest.model_id != model_id || manifest.seed != seed || manifest.gamma < gamma
        {
            return None;
        }
        (0..gamma).map(|i| load_image(dir.join(png_name(i))).ok()).collect()
    }

    fn write_entry(&self, dir: &Path, manifest: &PoolManifest, images: &[Image]) -> Result<(), CacheError> {
        let tmp_root = self.root.join("tmp");
        fs::create_dir_all(&tmp_root).map_err(io_err(&tmp_root))?;
        let unique = format!(
            "{}-{}-{}",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed),
            SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos())
        );
        let tmp = tmp_root.join(&unique);
        fs::create_dir(&tmp).map_err(io_err(&tmp))?;
        for (i, img) in images.iter().enumerate() {
            let path = tmp.join(png_name(i));
            save_image(img, &path).map_err(|e| CacheError::Io {
                path: path.clone(),
                source: io::Error::other(e.to_string()),
            })?;
        }
        let mpath = tmp.join("manifest.json");
        let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        fs::write(&mpath, json).map_err(io_err(&mpath))?;

        if let Some(hook) = &self.fault_hook {
            hook(FaultStage::BeforeRename).map_err(io_err(&tmp))?;
        }

        let parent = dir.parent().expect("entry dir has a parent");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        if dir.exists() {
            let old = tmp_root.join(format!("{unique}-old"));
            fs::rename(dir, &old).map_err(io_err(dir))?;
            fs::rename(&tmp, dir).map_err(io_err(dir))?;
            if let Err(e) = fs::remove_dir_all(&old) {
                warn!("could not remove replaced cache entry {}: {e}", old.display());
            }
        } else {
            fs::rename(&tmp, dir).map_err(io_err(dir))?;
        }
        Ok(())
    }

    /// Returns the first `gamma` images of the cached pool for
    /// `(prompt, model_id, seed)`, calling `producer(gamma)` and persisting
    /// its output when no usable entry exists.
    pub fn get_or_generate<E, F>(
        &self,
        prompt: &str,
        model_id: &str,
        gamma: usize,
        seed: u64,
        producer: F,
    ) -> Result<Vec<Image>, E>
    where
        E: From<CacheError>,
        F: FnOnce(usize) -> Result<Vec<Image>, E>,
    {
        let dir = self.entry_dir(prompt, model_id)?;
        let locks = self.root.join("locks");
        fs::create_dir_all(&locks).map_err(io_err(&locks))?;
        let lock_path = locks.join(format!("{}-{model_id}.lock", prompt_hash(prompt)));
        let lock = File::create(&lock_path).map_err(io_err(&lock_path))?;
        lock.lock().map_err(io_err(&lock_path))?;

        if let Some(images) = self.read_entry(&dir, prompt, model_id, gamma, seed) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            debug!("pool cache hit {}", dir.display());
            return Ok(images);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let images = producer(gamma)?;
        let manifest = PoolManifest {
            prompt: prompt.to_string(),
            model_id: model_id.to_string(),
            gamma: images.len(),
            seed,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            tool_version: TOOL_VERSION.to_string(),
        };
        self.write_entry(&dir, &manifest, &images)?;
        Ok(images)
    }
}

/// Free-function form of [`PoolCache::get_or_generate`].
pub fn pool_cache_get_or_generate<E, F>(
    cache_dir: &Path,
    prompt: &str,
    model_id: &str,
    gamma: usize,
    seed: u64,
    producer: F,
) -> Result<Vec<Image>, E>
where
    E: From<CacheError>,
    F: FnOnce(usize) -> Result<Vec<Image>, E>,
{
    PoolCache::new(cache_dir).get_or_generate(prompt, model_id, gamma, seed, producer)
}
