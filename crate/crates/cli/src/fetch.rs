//! Runtime bytecode retrieval from an explorer HTTP API, with a disk
//! cache keyed by address.

use anyhow::{anyhow, bail, Context, Result};
use std::path::{Path, PathBuf};
use std::time::Duration;

pub struct FetchConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub cache_dir: PathBuf,
    pub max_retries: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("address 0x{0} has no deployed code")]
    NotAContract(String),
    #[error("rate limited, retry after {0:?}")]
    RateLimited(Duration),
    #[error("network error: {0}")]
    Network(String),
}

fn normalize_address(addr: &str) -> Result<String> {
    let a = addr.strip_prefix("0x").unwrap_or(addr);
    if a.len() != 40 || !a.chars().all(|c| c.is_ascii_hexdigit()) {
        bail!("not a 20-byte hex address: {addr}");
    }
    Ok(a.to_ascii_lowercase())
}

/// Fetch the deployed runtime bytecode for `address`. Served from the
/// cache when possible; a 429 with Retry-After is honored a bounded
/// number of times.
pub fn fetch_bytecode(address: &str, config: &FetchConfig) -> Result<Vec<u8>> {
    let addr = normalize_address(address)?;
    let cache_file = config.cache_dir.join(format!("{addr}.hex"));
    if let Ok(cached) = std::fs::read_to_string(&cache_file) {
        let code = hex::decode(cached.trim().trim_start_matches("0x"))
            .context("corrupt cache entry")?;
        return Ok(code);
    }

    let mut attempt = 0;
    let code = loop {
        match fetch_once(&addr, config) {
            Ok(code) => break code,
            Err(e) => {
                if let Some(FetchError::RateLimited(wait)) = e.downcast_ref::<FetchError>() {
                    if attempt < config.max_retries {
                        attempt += 1;
                        std::thread::sleep(*wait);
                        continue;
                    }
                }
                return Err(e);
            }
        }
    };

    std::fs::create_dir_all(&config.cache_dir).ok();
    std::fs::write(&cache_file, format!("0x{}", hex::encode(&code))).ok();
    Ok(code)
}

fn fetch_once(addr: &str, config: &FetchConfig) -> Result<Vec<u8>> {
    let mut url = format!(
        "{}?module=proxy&action=eth_getCode&address=0x{addr}&tag=latest",
        config.endpoint.trim_end_matches('/')
    );
    if let Some(key) = &config.api_key {
        url.push_str(&format!("&apikey={key}"));
    }
    let response = ureq::get(&url).call();
    let mut response = match response {
        Ok(r) => r,
        Err(ureq::Error::StatusCode(429)) => {
            return Err(FetchError::RateLimited(Duration::from_secs(1)).into());
        }
        Err(e) => return Err(FetchError::Network(e.to_string()).into()),
    };
    if response.status() == 429 {
        let wait = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse::<u64>().ok())
            .unwrap_or(1);
        return Err(FetchError::RateLimited(Duration::from_secs(wait)).into());
    }
    let body = response
        .body_mut()
        .read_to_string()
        .map_err(|e| FetchError::Network(e.to_string()))?;
    let parsed: serde_json::Value =
        serde_json::from_str(&body).map_err(|e| anyhow!("bad API response: {e}"))?;
    let result = parsed
        .get("result")
        .and_then(|r| r.as_str())
        .ok_or_else(|| anyhow!("API response has no result field: {body}"))?;
    let stripped = result.trim_start_matches("0x");
    if stripped.is_empty() {
        return Err(FetchError::NotAContract(addr.to_string()).into());
    }
    hex::decode(stripped).context("API returned invalid hex")
}

/// Default cache location, overridable for tests.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os("DEADMEM_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            std::env::var_os("HOME")
                .map(|h| Path::new(&h).join(".cache").join("deadmem"))
                .unwrap_or_else(|| PathBuf::from(".deadmem-cache"))
        })
}
