use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EmbeddingBackend, Space};
use crate::error::{Error, Result};
use crate::util;

/// Seeded deterministic backend: input bytes hash to a pseudo-random unit
/// vector. Optional aliases make an image embed like a given text, which lets
/// fixture-driven runs produce controlled image/label similarities.
pub struct MockEmbeddingBackend {
    id: String,
    seed: u64,
    dim: usize,
    space: Space,
    aliases: BTreeMap<String, String>,
    alias_noise: f64,
}

impl MockEmbeddingBackend {
    pub fn new(seed: u64, dim: usize, space: Space) -> Self {
        MockEmbeddingBackend {
            id: format!("mock-{}-s{seed}-d{dim}", space.tag()),
            seed,
            dim,
            space,
            aliases: BTreeMap::new(),
            alias_noise: 0.0,
        }
    }

    pub fn with_aliases(mut self, aliases: BTreeMap<String, String>, noise: f64) -> Self {
        let digest = util::sha256_hex(
            serde_json::to_string(&aliases)
                .expect("string map serializes")
                .as_bytes(),
        );
        self.id = format!("{}-a{}-n{noise}", self.id, &digest[..12]);
        self.aliases = aliases;
        self.alias_noise = noise;
        self
    }

    pub fn with_alias_file(self, path: &Path, noise: f64) -> Result<Self> {
        let aliases: BTreeMap<String, String> = util::read_json(path)?;
        Ok(self.with_aliases(aliases, noise))
    }

    fn unit_vector(&self, modality: &[u8], bytes: &[u8]) -> Vec<f64> {
        let digest = util::sha256_parts(&[
            &self.seed.to_le_bytes(),
            self.space.tag().as_bytes(),
            modality,
            bytes,
        ]);
        let mut seed = [0u8; 32];
        hex::decode_to_slice(&digest, &mut seed).expect("sha256 hex is 32 bytes");
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut v);
        v
    }

    fn image_vector(&self, bytes: &[u8]) -> Vec<f32> {
        let own = self.unit_vector(b"image", bytes);
        match self.aliases.get(&util::sha256_hex(bytes)) {
            Some(text) => {
                let mut v = self.unit_vector(b"text", text.as_bytes());
                for (x, n) in v.iter_mut().zip(&own) {
                    *x += self.alias_noise * n;
                }
                normalize(&mut v);
                to_f32(&v)
            }
            None => to_f32(&own),
        }
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

impl EmbeddingBackend for MockEmbeddingBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_id(&self) -> &str {
        "mock"
    }

    fn space(&self) -> Space {
        self.space
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_images(&self, images: &[&[u8]]) -> Result<Vec<Vec<f32>>> {
        Ok(images.iter().map(|b| self.image_vector(b)).collect())
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        if self.space == Space::Frame {
            return Err(Error::Config("frame-space backend cannot embed text".into()));
        }
        Ok(texts
            .iter()
            .map(|t| to_f32(&self.unit_vector(b"text", t.as_bytes())))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{cosine_similarity, EmbeddingVector};
    use super::*;

    fn ev(v: Vec<f32>) -> EmbeddingVector {
        EmbeddingVector::new(v, Space::Joint).unwrap()
    }

    #[test]
    fn deterministic_and_dimensioned() {
        let m = MockEmbeddingBackend::new(42, 512, Space::Frame);
        let a = m.embed_images(&[b"same image"]).unwrap();
        let b = m.embed_images(&[b"same image"]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 512);
        // a fresh instance with the same seed gives the same bytes
        let again = MockEmbeddingBackend::new(42, 512, Space::Frame)
            .embed_images(&[b"same image"])
            .unwrap();
        assert_eq!(a, again);
        let other_seed = MockEmbeddingBackend::new(43, 512, Space::Frame)
            .embed_images(&[b"same image"])
            .unwrap();
        assert_ne!(a, other_seed);
    }

    #[test]
    fn trailing_space_changes_text_vector() {
        let m = MockEmbeddingBackend::new(1, 64, Space::Joint);
        let v = m.embed_texts(&["deep frying dough", "deep frying dough "]).unwrap();
        let c = cosine_similarity(&ev(v[0].clone()), &ev(v[1].clone())).unwrap();
        assert!(c < 1.0);
    }

    #[test]
    fn alias_makes_image_match_text() {
        let mut aliases = BTreeMap::new();
        aliases.insert(util::sha256_hex(b"img"), "chopping onions".to_string());
        let m = MockEmbeddingBackend::new(1, 64, Space::Joint).with_aliases(aliases.clone(), 0.0);
        let img = m.embed_images(&[b"img"]).unwrap().remove(0);
        let txt = m.embed_texts(&["chopping onions"]).unwrap().remove(0);
        assert!((cosine_similarity(&ev(img), &ev(txt.clone())).unwrap() - 1.0).abs() < 1e-6);

        let noisy = MockEmbeddingBackend::new(1, 64, Space::Joint).with_aliases(aliases, 0.3);
        let img = noisy.embed_images(&[b"img"]).unwrap().remove(0);
        let c = cosine_similarity(&ev(img), &ev(txt)).unwrap();
        assert!(c < 0.999 && c > 0.9, "cos {c}");
    }

    #[test]
    fn frame_space_refuses_text() {
        let m = MockEmbeddingBackend::new(1, 8, Space::Frame);
        assert!(m.embed_texts(&["x"]).is_err());
    }
}
