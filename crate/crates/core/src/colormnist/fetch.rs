use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use flate2::read::GzDecoder;

use super::idx::{parse_idx, MnistSet, Split};
use crate::error::{Error, Result};

pub const DEFAULT_MIRROR: &str = "https://storage.googleapis.com/cvdf-datasets/mnist/";

/// Environment variable naming the cache root.
pub const CACHE_ENV: &str = "SFD_CACHE_DIR";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte.gz";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte.gz";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte.gz";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte.gz";

/// Source of raw bytes for a URL. Injectable so tests can observe or forbid
/// network access.
pub trait Transport {
    fn get(&self, url: &str) -> Result<Vec<u8>>;
}

/// Blocking HTTP(S) GET.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    pub timeout: Duration,
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(120),
        }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Vec<u8>> {
        let http = |reason: String| Error::Http {
            url: url.to_string(),
            reason,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut resp = agent.get(url).call().map_err(|e| http(e.to_string()))?;
        resp.body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| http(e.to_string()))
    }
}

/// `$SFD_CACHE_DIR`, else `$HOME/.cache/sfd`, else `./.sfd-cache`.
pub fn default_cache_root() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache").join("sfd"),
        None => PathBuf::from(".sfd-cache"),
    }
}

fn gunzip(name: &str, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes).read_to_end(&mut out).map_err(|e| Error::Gzip {
        file: name.to_string(),
        reason: e.to_string(),
    })?;
    Ok(out)
}

/// Checks the element count declared in the header and the payload size
/// before full parsing, so a short download reports as a count mismatch.
fn check_count(name: &str, raw: &[u8], expected: usize) -> Result<()> {
    let item = if name.contains("images") { 28 * 28 } else { 1 };
    let header = if name.contains("images") { 16 } else { 8 };
    let declared = raw
        .get(4..8)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
        .unwrap_or(0);
    let present = raw.len().saturating_sub(header) / item;
    let found = if declared != expected { declared } else { present };
    if found != expected {
        return Err(Error::CountMismatch {
            file: name.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn load_one(
    base_url: &str,
    dir: &Path,
    name: &str,
    expected: usize,
    transport: &dyn Transport,
    offline: bool,
) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if path.exists() {
        let bytes = std::fs::read(&path)?;
        let raw = gunzip(name, &bytes)?;
        check_count(name, &raw, expected)?;
        return Ok(raw);
    }
    if offline {
        return Err(Error::Offline(path));
    }
    let url = format!("{}/{}", base_url.trim_end_matches('/'), name);
    let bytes = transport.get(&url)?;
    let raw = gunzip(name, &bytes)?;
    check_count(name, &raw, expected)?;
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.partial"));
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, &path)?;
    Ok(raw)
}

/// Loads the four canonical gzipped IDX files from `<cache_root>/mnist/`,
/// downloading missing ones from `base_url` unless `offline`.
pub fn fetch_mnist(
    base_url: &str,
    cache_root: &Path,
    transport: &dyn Transport,
    offline: bool,
) -> Result<(MnistSet, MnistSet)> {
    let dir = cache_root.join("mnist");
    let get = |name: &str, n: usize| load_one(base_url, &dir, name, n, transport, offline).and_then(|raw| parse_idx(&raw));
    let train = MnistSet::new(get(TRAIN_IMAGES, 60_000)?, get(TRAIN_LABELS, 60_000)?, Split::Train)?;
    let test = MnistSet::new(get(TEST_IMAGES, 10_000)?, get(TEST_LABELS, 10_000)?, Split::Test)?;
    Ok((train, test))
}
