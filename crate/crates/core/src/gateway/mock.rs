//! Deterministic in-process backends speaking the same JSON wire format as
//! real model services.
//!
//! Hash embeddings use a SHA-256-seeded splitmix64 stream:
//!
//! * `seed(bytes)` is the first 8 bytes of `SHA-256(bytes)`, little endian.
//! * splitmix64 step: `s += 0x9E3779B97F4A7C15`, then
//!   `z = (s ^ (s >> 30)) * 0xBF58476D1CE4E5B9`,
//!   `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`, output `z ^ (z >> 31)`.
//! * component `i` is `(out_i >> 11) / 2^53 * 2 - 1`, for `i` in `0..dims`.
//!
//! A text vector is the sum of the component vectors of its
//! [`word_tokens`] (repeats included; the empty string stands in when there
//! are no tokens), L2-normalized. An image vector is the normalized
//! component vector of the raw file bytes.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::backend::{Backend, BackendError};
use super::cache::hex_digest;
use crate::text::word_tokens;

pub const DEFAULT_MOCK_DIMS: usize = 256;

fn splitmix_components(bytes: &[u8], dims: usize) -> Vec<f64> {
    let digest = Sha256::digest(bytes);
    let mut state = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (0..dims)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn hash_text_vector(text: &str, dims: usize) -> Vec<f64> {
    let tokens = word_tokens(text);
    if tokens.is_empty() {
        return normalized(splitmix_components(b"", dims));
    }
    let mut acc = vec![0.0; dims];
    for tok in &tokens {
        for (a, c) in acc.iter_mut().zip(splitmix_components(tok.as_bytes(), dims)) {
            *a += c;
        }
    }
    normalized(acc)
}

pub fn hash_image_vector(bytes: &[u8], dims: usize) -> Vec<f64> {
    normalized(splitmix_components(bytes, dims))
}

fn field<'a>(body: &'a Value, name: &str) -> Result<&'a Value, BackendError> {
    body.get(name)
        .ok_or_else(|| BackendError::Status { code: 400, body: format!("missing field '{name}'") })
}

fn str_list(body: &Value, name: &str) -> Result<Vec<String>, BackendError> {
    serde_json::from_value(field(body, name)?.clone())
        .map_err(|e| BackendError::Status { code: 400, body: format!("field '{name}': {e}") })
}

fn str_field(body: &Value, name: &str) -> Result<String, BackendError> {
    field(body, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| BackendError::Status { code: 400, body: format!("field '{name}' must be a string") })
}

/// Token-bag hashing text embedder (`text_embed` wire format).
pub struct HashTextEmbedder {
    pub dims: usize,
}

impl Backend for HashTextEmbedder {
    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let texts = str_list(body, "texts")?;
        let vectors: Vec<Vec<f64>> = texts.iter().map(|t| hash_text_vector(t, self.dims)).collect();
        Ok(json!({ "vectors": vectors }))
    }
}

/// Byte-hashing image embedder (`image_embed` wire format).
pub struct HashImageEmbedder {
    pub dims: usize,
}

impl Backend for HashImageEmbedder {
    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let b64 = str_field(body, "image_b64")?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| BackendError::Status { code: 400, body: format!("image_b64: {e}") })?;
        Ok(json!({ "vector": hash_image_vector(&bytes, self.dims) }))
    }
}

/// Reranker scoring each candidate by the number of distinct
/// [`word_tokens`] it shares with the query.
pub struct OverlapReranker;

pub fn overlap_score(query: &str, candidate: &str) -> f64 {
    let q: BTreeSet<String> = word_tokens(query).into_iter().collect();
    let c: BTreeSet<String> = word_tokens(candidate).into_iter().collect();
    q.intersection(&c).count() as f64
}

impl Backend for OverlapReranker {
    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let query = str_field(body, "query")?;
        let candidates = str_list(body, "candidates")?;
        let scores: Vec<f64> = candidates.iter().map(|c| overlap_score(&query, c)).collect();
        Ok(json!({ "scores": scores }))
    }
}

/// Reranker that scores everything the same.
pub struct ConstantReranker {
    pub score: f64,
}

impl Backend for ConstantReranker {
    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let n = str_list(body, "candidates")?.len();
        Ok(json!({ "scores": vec![self.score; n] }))
    }
}

/// Key of a scripted response: SHA-256 over the prompt bytes followed by,
/// for each image, a 0x1F separator and its base64 text.
pub fn script_key(prompt: &str, images_b64: &[String]) -> String {
    let mut bytes = prompt.as_bytes().to_vec();
    for img in images_b64 {
        bytes.push(0x1f);
        bytes.extend_from_slice(img.as_bytes());
    }
    hex_digest(&bytes)
}

/// Generator answering from a fixed table and refusing anything else.
#[derive(Debug, Default, Clone)]
pub struct ScriptedGenerator {
    responses: HashMap<String, String>,
}

#[derive(Deserialize)]
struct ScriptLine {
    #[serde(default)]
    key: Option<String>,
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    images: Vec<String>,
    text: String,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, images: &[Vec<u8>], text: impl Into<String>) {
        let b64: Vec<String> = images
            .iter()
            .map(|b| base64::engine::general_purpose::STANDARD.encode(b))
            .collect();
        self.responses.insert(script_key(prompt, &b64), text.into());
    }

    pub fn insert_key(&mut self, key: String, text: impl Into<String>) {
        self.responses.insert(key, text.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Loads `{"prompt", "images"?, "text"}` or `{"key", "text"}` lines.
    /// Image paths are resolved relative to the script file.
    pub fn load(path: &Path) -> Result<Self, String> {
        let lines: Vec<ScriptLine> = crate::jsonl::read(path).map_err(|e| e.to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut script = Self::new();
        for line in lines {
            match (line.key, line.prompt) {
                (Some(key), _) => script.insert_key(key, line.text),
                (None, Some(prompt)) => {
                    let images = line
                        .images
                        .iter()
                        .map(|p| std::fs::read(base.join(p)).map_err(|e| format!("{p}: {e}")))
                        .collect::<Result<Vec<_>, _>>()?;
                    script.insert(&prompt, &images, line.text);
                }
                (None, None) => return Err("script line needs 'key' or 'prompt'".into()),
            }
        }
        Ok(script)
    }
}

impl Backend for ScriptedGenerator {
    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let prompt = str_field(body, "prompt")?;
        let images = str_list(body, "images_b64")?;
        let key = script_key(&prompt, &images);
        match self.responses.get(&key) {
            Some(text) => Ok(json!({ "text": text })),
            None => Err(BackendError::Unscripted(key)),
        }
    }
}
