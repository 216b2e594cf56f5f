//! Checkpoint acquisition: local paths are used in place, URLs are
//! downloaded into the cache with HTTP resume and verified against their
//! expected digest when one is pinned.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{ModelSpec, RunnerError};

const FETCH_ATTEMPTS: usize = 3;

/// A checkpoint available on the local filesystem, with its content digest.
#[derive(Debug, Clone)]
pub struct LocalCheckpoint {
    pub language: String,
    pub path: PathBuf,
    pub digest: String,
}

/// SHA-256 of a file's contents, streamed.
pub fn file_digest(path: &Path) -> Result<String, RunnerError> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| RunnerError::Io(format!("cannot open {path:?}: {e}")))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| RunnerError::Io(format!("cannot read {path:?}: {e}")))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_encode(&hasher.finalize()))
}

fn hex_encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn is_url(source: &str) -> bool {
    source.starts_with("http://") || source.starts_with("https://")
}

/// Cache filename for a URL: stable across runs, independent of the digest
/// (which is unknown before the first download).
fn cache_name(url: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(url.as_bytes());
    let h = hex_encode(&hasher.finalize());
    format!("{}.bin", &h[..24])
}

/// Makes one checkpoint source local: a path is digest-checked in place, a
/// URL is downloaded (with resume) unless already cached.
pub fn ensure_local(
    language: &str,
    source: &str,
    pinned: Option<&str>,
    cache_dir: &Path,
) -> Result<LocalCheckpoint, RunnerError> {
    let path = if is_url(source) {
        let models_dir = cache_dir.join("models");
        std::fs::create_dir_all(&models_dir)
            .map_err(|e| RunnerError::Io(format!("cannot create {models_dir:?}: {e}")))?;
        let target = models_dir.join(cache_name(source));
        if !target.exists() {
            download_with_resume(language, source, &target)?;
        }
        target
    } else {
        PathBuf::from(source)
    };
    if !path.exists() {
        return Err(RunnerError::Io(format!(
            "checkpoint for {language} not found at {path:?}"
        )));
    }
    let digest = file_digest(&path)?;
    if let Some(expected) = pinned {
        if !expected.eq_ignore_ascii_case(&digest) {
            // a corrupted cached download is removed so a retry can heal it
            if is_url(source) {
                let _ = std::fs::remove_file(&path);
            }
            return Err(RunnerError::Integrity {
                language: language.to_string(),
                expected: expected.to_string(),
                actual: digest,
            });
        }
    }
    Ok(LocalCheckpoint {
        language: language.to_string(),
        path,
        digest,
    })
}

/// Fetches every checkpoint in the manifest (pretrained and, when present,
/// adapted), returning them in roster order.
pub fn fetch_models(
    manifest: &[ModelSpec],
    cache_dir: &Path,
) -> Result<Vec<LocalCheckpoint>, RunnerError> {
    let mut out = Vec::new();
    for model in manifest {
        out.push(ensure_local(
            &model.language,
            &model.source,
            model.sha256.as_deref(),
            cache_dir,
        )?);
        if let Some(adapted) = &model.adapted_source {
            out.push(ensure_local(
                &model.language,
                adapted,
                model.adapted_sha256.as_deref(),
                cache_dir,
            )?);
        }
    }
    Ok(out)
}

fn download_with_resume(language: &str, url: &str, target: &Path) -> Result<(), RunnerError> {
    let partial = target.with_extension("part");
    let mut last_error = String::new();
    for attempt in 0..FETCH_ATTEMPTS {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(500 * attempt as u64));
        }
        match download_attempt(url, &partial) {
            Ok(()) => {
                std::fs::rename(&partial, target)
                    .map_err(|e| RunnerError::Io(format!("cannot finalize {target:?}: {e}")))?;
                return Ok(());
            }
            Err(e) => last_error = e,
        }
    }
    Err(RunnerError::Fetch {
        language: language.to_string(),
        url: url.to_string(),
        reason: last_error,
    })
}

fn download_attempt(url: &str, partial: &Path) -> Result<(), String> {
    let agent = ureq::AgentBuilder::new()
        .timeout_connect(Duration::from_secs(30))
        .build();
    let offset = partial.metadata().map(|m| m.len()).unwrap_or(0);
    let mut request = agent.get(url);
    if offset > 0 {
        request = request.set("Range", &format!("bytes={offset}-"));
    }
    let response = request.call().map_err(|e| e.to_string())?;
    let status = response.status();
    let mut file = if status == 206 && offset > 0 {
        std::fs::OpenOptions::new()
            .append(true)
            .open(partial)
            .map_err(|e| e.to_string())?
    } else {
        std::fs::File::create(partial).map_err(|e| e.to_string())?
    };
    let mut reader = response.into_reader();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = reader.read(&mut buf).map_err(|e| e.to_string())?;
        if n == 0 {
            break;
        }
        file.write_all(&buf[..n]).map_err(|e| e.to_string())?;
    }
    Ok(())
}
