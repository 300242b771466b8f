//! Attribute-aware prompt generation: attribute extraction through a
//! language-model provider, seeded per-kind sampling, template rendering,
//! and image requests to a diffusion provider.
//!
//! Both providers share one JSON-over-HTTP contract:
//!
//! ```text
//! POST {endpoint}/v1/attributes  {"domain_context": str, "kinds": [str]}
//!   -> {"attributes": {kind: [value, ...]}}
//! POST {endpoint}/v1/images      {"prompt": str, "seed": int}
//!   -> {"image_base64": str}
//! ```
//!
//! In fixture mode the response for a request is read from
//! `{fixture_dir}/{route}/{key}.json`, where `key` is [`request_key`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ATTRIBUTES_ROUTE: &str = "attributes";
pub const IMAGES_ROUTE: &str = "images";
pub const DEFAULT_PARALLELISM: usize = 4;

/// Per-kind attribute values, deduplicated in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributePool(BTreeMap<String, Vec<String>>);

impl AttributePool {
    pub fn new(raw: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Validation("attribute pool has no kinds".into()));
        }
        let mut pool = BTreeMap::new();
        for (kind, values) in raw {
            let mut unique: Vec<String> = Vec::with_capacity(values.len());
            for v in values {
                let v = v.trim().to_string();
                if !v.is_empty() && !unique.contains(&v) {
                    unique.push(v);
                }
            }
            if unique.is_empty() {
                return Err(Error::Validation(format!("attribute kind {kind} has no values")));
            }
            pool.insert(kind, unique);
        }
        Ok(Self(pool))
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn values(&self, kind: &str) -> Option<&[String]> {
        self.0.get(kind).map(Vec::as_slice)
    }

    pub fn contains(&self, kind: &str, value: &str) -> bool {
        self.values(kind).is_some_and(|vs| vs.iter().any(|v| v == value))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_slice(&bytes)?;
        Self::new(raw)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Artistic,
    Photorealistic,
}

impl std::str::FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "artistic" => Ok(Self::Artistic),
            "photorealistic" => Ok(Self::Photorealistic),
            other => Err(Error::Validation(format!("unknown style {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleTemplates {
    /// Used when the switch attribute names an event.
    pub event: String,
    /// Used when the switch attribute equals `none_value`.
    pub no_event: String,
}

/// Prompt templates with `{kind}` placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub switch_kind: String,
    pub none_value: String,
    pub artistic: StyleTemplates,
    pub photorealistic: StyleTemplates,
}

const CAR_ACCIDENT_TEMPLATES: &str = include_str!("../templates/car_accident.json");

impl TemplateSet {
    /// The four car-accident templates (artistic/photorealistic x
    /// accident/no-accident).
    pub fn car_accident() -> Self {
        serde_json::from_str(CAR_ACCIDENT_TEMPLATES).expect("bundled templates parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn pick(&self, style: Style, attributes: &BTreeMap<String, String>) -> (&str, bool) {
        let set = match style {
            Style::Artistic => &self.artistic,
            Style::Photorealistic => &self.photorealistic,
        };
        let no_event = attributes.get(&self.switch_kind) == Some(&self.none_value);
        if no_event {
            (&set.no_event, true)
        } else {
            (&set.event, false)
        }
    }

    /// Renders the style's template. Every sampled attribute must have a
    /// placeholder, except the switch attribute when it holds `none_value`.
    pub fn render(&self, style: Style, attributes: &BTreeMap<String, String>) -> Result<String> {
        let (template, no_event) = self.pick(style, attributes);
        let (rendered, used) = fill(template, attributes)?;
        for kind in attributes.keys() {
            let skipped = no_event && *kind == self.switch_kind;
            if !skipped && !used.contains(kind) {
                return Err(Error::Template(format!(
                    "template has no placeholder for attribute {kind}"
                )));
            }
        }
        Ok(rendered)
    }
}

fn fill(template: &str, attributes: &BTreeMap<String, String>) -> Result<(String, Vec<String>)> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut used = vec![];
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::Template("unterminated placeholder".into()))?;
        let name = &after[..close];
        let value = attributes
            .get(name)
            .ok_or_else(|| Error::Template(format!("no sampled value for placeholder {{{name}}}")))?;
        out.push_str(value);
        used.push(name.to_string());
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok((out, used))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub style: Style,
    pub attributes: BTreeMap<String, String>,
    pub prompt: String,
}

/// Samples each kind independently and uniformly, `n` times.
pub fn sample_attributes(pool: &AttributePool, n: usize, seed: u64) -> Vec<BTreeMap<String, String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            pool.0
                .iter()
                .map(|(kind, values)| (kind.clone(), values[rng.gen_range(0..values.len())].clone()))
                .collect()
        })
        .collect()
}

pub fn create_prompts(pool: &AttributePool, n: usize, style: Style, seed: u64, templates: &TemplateSet) -> Result<Vec<PromptSpec>> {
    if n == 0 {
        return Err(Error::Validation("number of prompts must be positive".into()));
    }
    sample_attributes(pool, n, seed)
        .into_iter()
        .map(|attributes| {
            let prompt = templates.render(style, &attributes)?;
            Ok(PromptSpec {
                style,
                attributes,
                prompt,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Live,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Base URL; routes are appended as `/v1/{route}`.
    pub endpoint: String,
    /// Environment variable holding a bearer token, if any.
    pub auth_env: Option<String>,
    pub timeout_secs: f64,
    pub mode: ProviderMode,
    pub fixture_dir: Option<PathBuf>,
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl ProviderConfig {
    pub fn fixture(dir: impl Into<PathBuf>) -> Self {
        Self {
            endpoint: "fixture://".into(),
            auth_env: None,
            timeout_secs: 30.0,
            mode: ProviderMode::Fixture,
            fixture_dir: Some(dir.into()),
            attempts: 3,
            backoff_ms: 200,
        }
    }

    pub fn live(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            auth_env: None,
            timeout_secs: 60.0,
            mode: ProviderMode::Live,
            fixture_dir: None,
            attempts: 3,
            backoff_ms: 200,
        }
    }
}

/// Hex SHA-256 of `route` and the canonical (key-sorted) request body.
pub fn request_key(route: &str, body: &Value) -> String {
    let mut h = Sha256::new();
    h.update(route.as_bytes());
    h.update(b"\n");
    h.update(body.to_string().as_bytes());
    hex::encode(h.finalize())
}

pub fn fixture_path(dir: &Path, route: &str, body: &Value) -> PathBuf {
    dir.join(route).join(format!("{}.json", request_key(route, body)))
}

pub struct ProviderClient {
    config: ProviderConfig,
    http: Option<reqwest::blocking::Client>,
}

impl ProviderClient {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        let http = match config.mode {
            ProviderMode::Fixture => {
                if config.fixture_dir.is_none() {
                    return Err(Error::Validation("fixture mode requires a fixture directory".into()));
                }
                None
            }
            ProviderMode::Live => Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs_f64(config.timeout_secs))
                    .build()
                    .map_err(|e| Error::Provider(e.to_string()))?,
            ),
        };
        if config.attempts == 0 {
            return Err(Error::Validation("provider attempts must be at least 1".into()));
        }
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Fixture lookup, `None` when no fixture exists for the request.
    fn fixture(&self, route: &str, body: &Value) -> Result<Option<Value>> {
        let dir = self.config.fixture_dir.as_deref().expect("checked in new");
        let path = fixture_path(dir, route, body);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).map_err(|e| {
                Error::Parse(format!("fixture {}: {e}", path.display()))
            })?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn live_once(&self, route: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/v1/{route}", self.config.endpoint.trim_end_matches('/'));
        let mut req = self.http.as_ref().expect("live client").post(&url).json(body);
        if let Some(var) = &self.config.auth_env {
            let token = std::env::var(var)
                .map_err(|_| Error::Provider(format!("environment variable {var} is not set")))?;
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Error::Provider(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Provider(format!("{url}: {e}")))?;
        if !status.is_success() {
            return Err(Error::Provider(format!("{url} returned {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| {
            log::error!("malformed provider payload from {url}: {text}");
            Error::Parse(format!("{url}: {e}"))
        })
    }

    fn once(&self, route: &str, body: &Value) -> Result<Value> {
        let value = match self.config.mode {
            ProviderMode::Live => self.live_once(route, body)?,
            ProviderMode::Fixture => self.fixture(route, body)?.ok_or_else(|| {
                Error::Provider(format!("no fixture for {route} request {}", request_key(route, body)))
            })?,
        };
        if let Some(err) = value.get("error").and_then(Value::as_str) {
            return Err(Error::Provider(err.to_string()));
        }
        Ok(value)
    }

    /// Posts with up to `attempts` tries and exponential backoff. Parse
    /// errors are not retried.
    pub fn request(&self, route: &str, body: &Value) -> Result<Value> {
        let mut last = None;
        for attempt in 0..self.config.attempts {
            if attempt > 0 && self.config.mode == ProviderMode::Live {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
            }
            match self.once(route, body) {
                Ok(v) => return Ok(v),
                Err(e @ Error::Parse(_)) => return Err(e),
                Err(e) => {
                    log::warn!("{route} attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Deserialize)]
struct AttributesResponse {
    attributes: BTreeMap<String, Vec<String>>,
}

pub fn extract_attributes(domain_context: &str, kinds: &[String], provider: &ProviderClient) -> Result<AttributePool> {
    let body = json!({ "domain_context": domain_context, "kinds": kinds });
    let value = provider.request(ATTRIBUTES_ROUTE, &body)?;
    let parsed: AttributesResponse = serde_json::from_value(value.clone()).map_err(|e| {
        log::error!("malformed attribute payload: {value}");
        Error::Parse(format!("attribute response: {e}"))
    })?;
    AttributePool::new(parsed.attributes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub prompt: String,
    pub style: Style,
    pub attributes: BTreeMap<String, String>,
    pub seed: u64,
    pub status: EntryStatus,
    /// File name relative to the output directory.
    pub file: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn succeeded(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.status == EntryStatus::Succeeded)
            .count()
    }

    pub fn failed(&self) -> usize {
        self.entries.len() - self.succeeded()
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// 8x8 binary PPM whose pixels are the SHA-256 of the prompt, repeated.
pub fn placeholder_image(prompt: &str) -> Vec<u8> {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut out = b"P6\n8 8\n255\n".to_vec();
    out.extend((0..8 * 8 * 3).map(|i| digest[i % digest.len()]));
    out
}

fn extension_for(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "png"
    } else if bytes.starts_with(b"P6") {
        "ppm"
    } else if bytes.starts_with(&[0xFF, 0xD8]) {
        "jpg"
    } else {
        "bin"
    }
}

fn fetch_image(provider: &ProviderClient, prompt: &str, seed: u64) -> Result<Vec<u8>> {
    let body = json!({ "prompt": prompt, "seed": seed });
    if provider.config.mode == ProviderMode::Fixture && provider.fixture(IMAGES_ROUTE, &body)?.is_none() {
        return Ok(placeholder_image(prompt));
    }
    let value = provider.request(IMAGES_ROUTE, &body)?;
    let encoded = value
        .get("image_base64")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Parse("image response has no image_base64".into()))?;
    base64::engine::general_purpose::STANDARD
        .decode(encoded)
        .map_err(|e| Error::Parse(format!("image_base64: {e}")))
}

/// Requests one image per prompt with at most `parallelism` requests in
/// flight and writes `manifest.json` into `out_dir`. Entries keep prompt
/// order; a prompt whose request still fails after retries is recorded as
/// failed and the rest of the batch continues.
pub fn generate_images(
    prompts: &[PromptSpec],
    provider: &ProviderClient,
    out_dir: &Path,
    seed: u64,
    parallelism: usize,
) -> Result<DatasetManifest> {
    use rayon::prelude::*;
    if prompts.is_empty() {
        return Err(Error::Validation("no prompts to generate".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Provider(e.to_string()))?;
    let entries: Vec<ManifestEntry> = pool.install(|| {
        prompts
            .par_iter()
            .enumerate()
            .map(|(index, spec)| {
                let image_seed = seed.wrapping_add(index as u64);
                let outcome = fetch_image(provider, &spec.prompt, image_seed).and_then(|bytes| {
                    let key = request_key(IMAGES_ROUTE, &json!({ "prompt": spec.prompt, "seed": image_seed }));
                    let name = format!("{index:05}_{}.{}", &key[..12], extension_for(&bytes));
                    let path = out_dir.join(&name);
                    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
                    Ok(name)
                });
                let (status, file, error) = match outcome {
                    Ok(name) => (EntryStatus::Succeeded, Some(name), None),
                    Err(e) => {
                        log::warn!("prompt {index} failed: {e}");
                        (EntryStatus::Failed, None, Some(e.to_string()))
                    }
                };
                ManifestEntry {
                    index,
                    prompt: spec.prompt.clone(),
                    style: spec.style,
                    attributes: spec.attributes.clone(),
                    seed: image_seed,
                    status,
                    file,
                    error,
                }
            })
            .collect()
    });
    let manifest = DatasetManifest { entries };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
