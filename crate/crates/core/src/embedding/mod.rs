//! Frame-feature and joint image/text embeddings.
//!
//! Two spaces are kept apart: the frame-feature space used for change
//! detection and sampling, and the joint space where frames and label texts
//! are compared by cosine similarity. Every vector carries the space it was
//! produced in, and joint-space operations reject frame-space vectors.

mod cache;
mod http;
mod local;
mod mock;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::VectorCache;
pub use http::HttpEmbeddingBackend;
pub use local::{Activation, DenseLayer, LocalModel, LocalModelBackend};
pub use mock::MockEmbeddingBackend;

use crate::backend::{map_bounded, CallLog, CallRecord, RetryPolicy};
use crate::error::{Error, Result};
use crate::ingest::FrameRecord;
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    Frame,
    Joint,
}

impl Space {
    fn tag(self) -> &'static str {
        match self {
            Space::Frame => "frame",
            Space::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    norm: f64,
    space: Space,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>, space: Space) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding with zero dimensions".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "embedding component {pos} is not finite"
            )));
        }
        let norm = l2_norm(&values);
        Ok(EmbeddingVector {
            values,
            norm,
            space,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn scaled(&self, factor: f32) -> Result<Self> {
        EmbeddingVector::new(self.values.iter().map(|v| v * factor).collect(), self.space)
    }

    /// Euclidean distance in f64.
    pub fn distance(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|v| f64::from(*v) * f64::from(*v))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
///
/// The dot product is accumulated in index order and the denominator is a
/// product of two cached norms, so the result is exactly symmetric.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.space != b.space {
        return Err(Error::Config(format!(
            "cannot compare {:?}-space and {:?}-space vectors",
            a.space, b.space
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.norm == 0.0 || b.norm == 0.0 {
        return Err(Error::DegenerateVector("zero-norm vector".into()));
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Image,
    Text,
}

/// A model service mapping raw inputs to vectors.
pub trait EmbeddingBackend: Send + Sync {
    /// Stable identifier, used as the cache namespace.
    fn id(&self) -> &str;
    fn model_id(&self) -> &str;
    fn space(&self) -> Space;
    fn dim(&self) -> usize;
    fn embed_images(&self, images: &[&[u8]]) -> Result<Vec<Vec<f32>>>;
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingBackendKind {
    HttpService,
    LocalModel,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingBackendConfig {
    pub kind: EmbeddingBackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Serialized network file for `local-model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    /// Mock only: JSON map of image sha256 to a text the image embeds like.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Mock only: relative perturbation applied to fixture-aliased images.
    #[serde(default)]
    pub alias_noise: f64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_model_id() -> String {
    "default".to_string()
}

fn default_timeout_s() -> u64 {
    120
}

impl EmbeddingBackendConfig {
    pub fn mock(seed: u64, dim: usize) -> Self {
        EmbeddingBackendConfig {
            kind: EmbeddingBackendKind::Mock,
            endpoint: None,
            model_id: "mock".to_string(),
            dim,
            seed: Some(seed),
            model_path: None,
            fixtures: None,
            alias_noise: 0.0,
            timeout_s: default_timeout_s(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        match self.kind {
            EmbeddingBackendKind::HttpService if self.endpoint.is_none() => Err(Error::Config(
                "http-service embedding backend requires an endpoint".into(),
            )),
            EmbeddingBackendKind::Mock if self.seed.is_none() => {
                Err(Error::Config("mock embedding backend requires a seed".into()))
            }
            EmbeddingBackendKind::LocalModel if self.model_path.is_none() => Err(Error::Config(
                "local-model embedding backend requires model_path".into(),
            )),
            _ if !(self.alias_noise >= 0.0 && self.alias_noise.is_finite()) => {
                Err(Error::Config("alias_noise must be non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the backend. Relative paths resolve against `base`.
    pub fn build(&self, space: Space, base: &Path) -> Result<Arc<dyn EmbeddingBackend>> {
        self.validate()?;
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Ok(match self.kind {
            EmbeddingBackendKind::Mock => {
                let mut mock = MockEmbeddingBackend::new(self.seed.unwrap_or_default(), self.dim, space);
                if let Some(path) = &self.fixtures {
                    mock = mock.with_alias_file(&resolve(path), self.alias_noise)?;
                }
                Arc::new(mock)
            }
            EmbeddingBackendKind::HttpService => Arc::new(HttpEmbeddingBackend::new(
                self.endpoint.clone().unwrap_or_default(),
                self.model_id.clone(),
                self.dim,
                space,
                self.timeout_s,
            )?),
            EmbeddingBackendKind::LocalModel => {
                let path = resolve(self.model_path.as_ref().expect("validated"));
                let model = LocalModel::load(&path)?;
                Arc::new(LocalModelBackend::new(model, self.model_id.clone(), space)?)
            }
        })
    }
}

/// Caching, retrying front end over an [`EmbeddingBackend`].
pub struct Embedder {
    backend: Arc<dyn EmbeddingBackend>,
    cache: Option<VectorCache>,
    retry: RetryPolicy,
    max_inflight: usize,
    log: Arc<CallLog>,
}

impl Embedder {
    pub fn new(backend: Arc<dyn EmbeddingBackend>) -> Self {
        Embedder {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            max_inflight: 8,
            log: Arc::new(CallLog::default()),
        }
    }

    pub fn with_cache(mut self, cache_root: &Path) -> Self {
        self.cache = Some(VectorCache::new(cache_root, self.backend.id()));
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_inflight(mut self, max_inflight: usize) -> Self {
        self.max_inflight = max_inflight.max(1);
        self
    }

    pub fn with_call_log(mut self, log: Arc<CallLog>) -> Self {
        self.log = log;
        self
    }

    pub fn call_log(&self) -> &Arc<CallLog> {
        &self.log
    }

    pub fn space(&self) -> Space {
        self.backend.space()
    }

    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    fn require_space(&self, wanted: Space, op: &str) -> Result<()> {
        if self.backend.space() != wanted {
            return Err(Error::Config(format!(
                "{op} needs a {:?}-space backend, got {:?}",
                wanted,
                self.backend.space()
            )));
        }
        Ok(())
    }

    /// Frame-feature embedding of one still.
    pub fn embed_frame(&self, frame: &FrameRecord, base: &Path) -> Result<EmbeddingVector> {
        self.require_space(Space::Frame, "embed_frame")?;
        let bytes = util::read_bytes(&frame.image_path(base))?;
        self.embed_one(Modality::Image, &bytes)
    }

    pub fn embed_frames(&self, frames: &[FrameRecord], base: &Path) -> Result<Vec<EmbeddingVector>> {
        self.require_space(Space::Frame, "embed_frame")?;
        self.embed_images(frames, base)
    }

    /// Joint-space embedding of one still.
    pub fn embed_image_joint(&self, frame: &FrameRecord, base: &Path) -> Result<EmbeddingVector> {
        self.require_space(Space::Joint, "embed_image_joint")?;
        let bytes = util::read_bytes(&frame.image_path(base))?;
        self.embed_one(Modality::Image, &bytes)
    }

    pub fn embed_images_joint(&self, frames: &[FrameRecord], base: &Path) -> Result<Vec<EmbeddingVector>> {
        self.require_space(Space::Joint, "embed_image_joint")?;
        self.embed_images(frames, base)
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        self.require_space(Space::Joint, "embed_text")?;
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("cannot embed empty text".into()));
        }
        self.embed_one(Modality::Text, text.as_bytes())
    }

    fn embed_images(&self, frames: &[FrameRecord], base: &Path) -> Result<Vec<EmbeddingVector>> {
        let results = map_bounded(frames, self.max_inflight, |frame| {
            let bytes = util::read_bytes(&frame.image_path(base))?;
            self.embed_one(Modality::Image, &bytes)
        });
        results.into_iter().collect()
    }

    fn embed_one(&self, modality: Modality, content: &[u8]) -> Result<EmbeddingVector> {
        let content_hash = util::sha256_hex(content);
        let key = util::sha256_parts(&[
            self.backend.id().as_bytes(),
            self.backend.model_id().as_bytes(),
            self.backend.space().tag().as_bytes(),
            match modality {
                Modality::Image => b"image",
                Modality::Text => b"text",
            },
            content_hash.as_bytes(),
        ]);
        let cached = match &self.cache {
            Some(cache) => cache.get(&key)?,
            None => None,
        };
        let values = match cached {
            Some(v) => v,
            None => {
                let v = self.retry.run(|_| {
                    self.log.count_live_call();
                    let mut out = match modality {
                        Modality::Image => self.backend.embed_images(&[content])?,
                        Modality::Text => {
                            let text = std::str::from_utf8(content)
                                .map_err(|_| Error::InvalidInput("text is not UTF-8".into()))?;
                            self.backend.embed_texts(&[text])?
                        }
                    };
                    out.pop().ok_or_else(|| {
                        Error::backend(self.backend.id(), "backend returned no vectors", false)
                    })
                })?;
                if v.len() != self.backend.dim() {
                    return Err(Error::Config(format!(
                        "backend {} returned {} dims, expected {}",
                        self.backend.id(),
                        v.len(),
                        self.backend.dim()
                    )));
                }
                if let Some(cache) = &self.cache {
                    cache.put(&key, &v)?;
                }
                v
            }
        };
        let vector = EmbeddingVector::new(values, self.backend.space())?;
        let bytes: Vec<u8> = vector.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.log.record(CallRecord {
            backend: self.backend.id().to_string(),
            request_sha256: key,
            response_sha256: util::sha256_hex(&bytes),
        });
        Ok(vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec(), Space::Joint).unwrap()
    }

    #[test]
    fn cosine_closed_forms() {
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[2.0, 4.0, 6.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap(), -1.0);
    }

    #[test]
    fn cosine_rejects_degenerate_and_mismatched() {
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::DegenerateVector(_))
        ));
        assert!(cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])).is_err());
        let frame = EmbeddingVector::new(vec![1.0, 0.0], Space::Frame).unwrap();
        assert!(matches!(cosine_similarity(&frame, &v(&[1.0, 0.0])), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN], Space::Frame).is_err());
    }

    #[test]
    fn config_invariants() {
        let mut c = EmbeddingBackendConfig::mock(1, 8);
        c.validate().unwrap();
        c.seed = None;
        assert!(c.validate().is_err());
        let mut h = EmbeddingBackendConfig::mock(1, 8);
        h.kind = EmbeddingBackendKind::HttpService;
        assert!(h.validate().is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(
            a in proptest::collection::vec(-1e3f32..1e3, 1..16),
            b_seed in proptest::collection::vec(-1e3f32..1e3, 16),
        ) {
            let b: Vec<f32> = b_seed[..a.len()].to_vec();
            let va = v(&a);
            let vb = v(&b);
            prop_assume!(va.norm() > 0.0 && vb.norm() > 0.0);
            let ab = cosine_similarity(&va, &vb).unwrap();
            let ba = cosine_similarity(&vb, &va).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            prop_assert!((cosine_similarity(&va, &va).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn norm_matches_definition(a in proptest::collection::vec(-1e3f32..1e3, 1..64)) {
            let va = EmbeddingVector::new(a.clone(), Space::Frame).unwrap();
            let direct = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!((va.norm() - direct).abs() <= 1e-6 * direct.max(1e-300));
        }
    }
}
