use std::path::Path;

use image::imageops::FilterType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EmbeddingBackend, Space};
use crate::error::{Error, Result};
use crate::util;

const FORMAT: &str = "vidsum-mlp/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl DenseLayer {
    fn forward(&self, x: &[f32]) -> Vec<f32> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| {
                let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b;
                match self.activation {
                    Activation::Identity => z,
                    Activation::Relu => z.max(0.0),
                    Activation::Tanh => z.tanh(),
                }
            })
            .collect()
    }
}

/// A small feed-forward network loaded from a JSON network file.
///
/// Images are resized to `image_side x image_side`, converted to RGB in
/// `[-0.5, 0.5]` and flattened; texts become L2-normalized hashed character
/// trigram counts over `text_buckets` bins. Each modality runs through its
/// own tower of dense layers; both towers must end at the same width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub format: String,
    pub image_side: u32,
    #[serde(default)]
    pub text_buckets: usize,
    pub image_layers: Vec<DenseLayer>,
    #[serde(default)]
    pub text_layers: Vec<DenseLayer>,
}

impl LocalModel {
    pub fn load(path: &Path) -> Result<Self> {
        let model: LocalModel = util::read_json(path)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }

    /// Single linear layer with `N(0, 1/inputs)` weights, for tests and demos.
    pub fn random_projection(seed: u64, image_side: u32, dim: usize, text_buckets: Option<usize>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |inputs: usize| {
            let normal = Normal::new(0.0f64, (1.0 / inputs as f64).sqrt()).expect("valid std");
            DenseLayer {
                inputs,
                outputs: dim,
                weights: (0..inputs * dim).map(|_| normal.sample(&mut rng) as f32).collect(),
                bias: vec![0.0; dim],
                activation: Activation::Identity,
            }
        };
        let image_layers = vec![layer(3 * (image_side as usize).pow(2))];
        let text_layers = text_buckets.map(|b| vec![layer(b)]).unwrap_or_default();
        LocalModel {
            format: FORMAT.to_string(),
            image_side,
            text_buckets: text_buckets.unwrap_or(0),
            image_layers,
            text_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Config(format!("unsupported network format '{}'", self.format)));
        }
        if self.image_side == 0 || self.image_layers.is_empty() {
            return Err(Error::Config("network needs image_side > 0 and an image tower".into()));
        }
        check_tower(&self.image_layers, 3 * (self.image_side as usize).pow(2), "image")?;
        if !self.text_layers.is_empty() {
            check_tower(&self.text_layers, self.text_buckets, "text")?;
            if self.text_layers.last().map(|l| l.outputs) != Some(self.output_dim()) {
                return Err(Error::Config("image and text towers end at different widths".into()));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.image_layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn has_text_tower(&self) -> bool {
        !self.text_layers.is_empty()
    }

    pub fn embed_image(&self, bytes: &[u8]) -> Result<Vec<f32>> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Image {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        let side = self.image_side;
        let rgb = img.resize_exact(side, side, FilterType::Triangle).to_rgb8();
        let x: Vec<f32> = rgb.as_raw().iter().map(|p| f32::from(*p) / 255.0 - 0.5).collect();
        Ok(run(&self.image_layers, x))
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        if !self.has_text_tower() {
            return Err(Error::Config("network has no text tower".into()));
        }
        Ok(run(&self.text_layers, trigram_features(text, self.text_buckets)))
    }
}

fn check_tower(layers: &[DenseLayer], input: usize, name: &str) -> Result<()> {
    let mut width = input;
    for (i, layer) in layers.iter().enumerate() {
        if layer.inputs != width
            || layer.weights.len() != layer.inputs * layer.outputs
            || layer.bias.len() != layer.outputs
            || layer.outputs == 0
        {
            return Err(Error::Config(format!(
                "{name} layer {i} has inconsistent shape (expected {width} inputs)"
            )));
        }
        width = layer.outputs;
    }
    Ok(())
}

fn run(layers: &[DenseLayer], mut x: Vec<f32>) -> Vec<f32> {
    for layer in layers {
        x = layer.forward(&x);
    }
    x
}

fn trigram_features(text: &str, buckets: usize) -> Vec<f32> {
    let padded: Vec<char> = format!("  {} ", text.to_lowercase()).chars().collect();
    let mut counts = vec![0f32; buckets];
    for w in padded.windows(3) {
        // FNV-1a
        let mut h: u64 = 0xcbf29ce484222325;
        for c in w {
            for b in (*c as u32).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        counts[(h % buckets as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f32>().sqrt();
    if norm > 0.0 {
        counts.iter_mut().for_each(|c| *c /= norm);
    }
    counts
}

pub struct LocalModelBackend {
    id: String,
    model_id: String,
    model: LocalModel,
    space: Space,
}

impl LocalModelBackend {
    pub fn new(model: LocalModel, model_id: String, space: Space) -> Result<Self> {
        model.validate()?;
        if space == Space::Joint && !model.has_text_tower() {
            return Err(Error::Config("joint-space local model needs a text tower".into()));
        }
        let digest = util::sha256_hex(&serde_json::to_vec(&model).expect("model serializes"));
        Ok(LocalModelBackend {
            id: format!("local-{}-{}", space.tag(), &digest[..16]),
            model_id,
            model,
            space,
        })
    }
}

impl EmbeddingBackend for LocalModelBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn space(&self) -> Space {
        self.space
    }

    fn dim(&self) -> usize {
        self.model.output_dim()
    }

    fn embed_images(&self, images: &[&[u8]]) -> Result<Vec<Vec<f32>>> {
        images.iter().map(|b| self.model.embed_image(b)).collect()
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        if self.space == Space::Frame {
            return Err(Error::Config("frame-space backend cannot embed text".into()));
        }
        texts.iter().map(|t| self.model.embed_text(t)).collect()
    }
}
