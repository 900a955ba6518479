//! Synthetic structured videos with matching mock-backend fixtures.
//!
//! A video is a run of visually distinct phases. Each phase is one step of a
//! made-up procedure; the generated chat fixtures caption every frame of a
//! phase with that step, and the joint-space aliases make the frame embed like
//! the step's label. With `noise = 0` all frames of a phase are identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chat::{ChatBackendConfig, MockFallback, MockFixtures, MockRule};
use crate::config::{BackendSet, PipelineConfig};
use crate::embedding::{EmbeddingBackendConfig, EmbeddingBackendKind, LocalModel};
use crate::error::{Error, Result};
use crate::ingest::{encode_jpeg, JPEG_QUALITY};
use crate::util;

pub const DATASET_DESCRIPTION: &str = "cooking a simple dish in a home kitchen";

/// Steps cycled through by the phases. The first is deliberately uninformative
/// so label validation has something to reject.
pub const STEPS: &[&str] = &[
    "black screen",
    "washing tomatoes in the sink",
    "chopping tomatoes on a board",
    "dicing a yellow onion",
    "heating oil in a frying pan",
    "adding onion to the hot pan",
    "stirring onion with a spatula",
    "adding chopped tomatoes to the pan",
    "seasoning the sauce with salt",
    "boiling pasta in a large pot",
    "draining pasta in a colander",
    "mixing pasta with tomato sauce",
    "grating cheese over the pasta",
    "plating pasta on a white dish",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub frames: usize,
    pub phases: usize,
    pub side: u32,
    /// Per-pixel uniform noise amplitude as a fraction of full scale.
    pub noise: f64,
    pub seed: u64,
    /// Relative perturbation of joint-space aliases; spreads image/label
    /// similarities below 1.
    pub alias_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            frames: 600,
            phases: 20,
            side: 64,
            noise: 0.0,
            seed: 7,
            alias_noise: 0.0,
        }
    }
}

/// Paths of everything [`generate`] wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub frames_dir: PathBuf,
    pub transcript: PathBuf,
    pub reference: PathBuf,
    pub annotations: PathBuf,
    pub config: PathBuf,
    pub chat_fixtures: PathBuf,
    pub joint_aliases: PathBuf,
    /// Phase of every frame.
    pub phase_of_frame: Vec<usize>,
}

pub fn phase_step(phase: usize) -> usize {
    phase % STEPS.len()
}

fn phase_of(frame: usize, frames: usize, phases: usize) -> usize {
    frame * phases / frames
}

fn phase_image(phase: usize, side: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (phase as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    if phase_step(phase) == 0 {
        return RgbImage::from_pixel(side, side, Rgb([4, 4, 4]));
    }
    let bg = Rgb([rng.random_range(0..=255u8), rng.random_range(0..=255u8), rng.random_range(0..=255u8)]);
    let fg = Rgb([255 - bg[0], 255 - bg[1], 255 - bg[2]]);
    let period = rng.random_range(4..=16u32);
    let diagonal = rng.random_bool(0.5);
    let (cx, cy, r) = (
        rng.random_range(0..side) as i64,
        rng.random_range(0..side) as i64,
        rng.random_range(side / 8..=side / 3) as i64,
    );
    RgbImage::from_fn(side, side, |x, y| {
        let (xi, yi) = (x as i64, y as i64);
        if (xi - cx).pow(2) + (yi - cy).pow(2) <= r * r {
            return fg;
        }
        let band = if diagonal { (x + y) / period } else { x / period };
        if band % 2 == 0 {
            bg
        } else {
            Rgb([bg[0] / 2, bg[1] / 2, bg[2] / 2])
        }
    })
}

fn add_noise(img: &mut RgbImage, amplitude: f64, rng: &mut ChaCha8Rng) {
    if amplitude <= 0.0 {
        return;
    }
    let a = amplitude * 255.0;
    for p in img.pixels_mut() {
        for c in p.0.iter_mut() {
            let v = f64::from(*c) + rng.random_range(-a..=a);
            *c = v.round().clamp(0.0, 255.0) as u8;
        }
    }
}

fn caption_marker(phase: usize) -> String {
    format!("[scene {phase:02}]")
}

fn caption(phase: usize) -> String {
    let step = STEPS[phase_step(phase)];
    format!("{} The image shows a home kitchen; the person is {step}.", caption_marker(phase))
}

fn srt_time(s: usize) -> String {
    format!("{:02}:{:02}:{:02},000", s / 3600, (s / 60) % 60, s % 60)
}

/// Writes the video as PNG stills plus transcript, reference, annotations,
/// fixtures and a ready-to-run config into `out_dir`.
pub fn generate(spec: &SyntheticSpec, out_dir: &Path) -> Result<SyntheticVideo> {
    if spec.frames == 0 || spec.phases == 0 || spec.phases > spec.frames || spec.side < 8 {
        return Err(Error::InvalidInput(
            "synthetic video needs frames >= phases >= 1 and side >= 8".into(),
        ));
    }
    let frames_dir = out_dir.join("video");
    if frames_dir.exists() {
        std::fs::remove_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    }
    util::create_dir_all(&frames_dir)?;

    let mut rules = vec![
        MockRule {
            prompt_contains: Some(format!("Given this label: {},", STEPS[0])),
            reply: Some("0".into()),
            ..MockRule::default()
        },
        MockRule {
            prompt_contains: Some("Imagine you are an expert on validating labels.".into()),
            reply: Some("1".into()),
            ..MockRule::default()
        },
    ];
    for phase in 0..spec.phases {
        rules.push(MockRule {
            prompt_contains: Some(caption_marker(phase)),
            reply: Some(STEPS[phase_step(phase)].to_string()),
            ..MockRule::default()
        });
    }

    let mut aliases: BTreeMap<String, String> = BTreeMap::new();
    let mut image_rules: BTreeMap<String, usize> = BTreeMap::new();
    let mut phase_of_frame = Vec::with_capacity(spec.frames);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut base: Option<(usize, RgbImage)> = None;
    for i in 0..spec.frames {
        let phase = phase_of(i, spec.frames, spec.phases);
        phase_of_frame.push(phase);
        if base.as_ref().is_none_or(|(p, _)| *p != phase) {
            base = Some((phase, phase_image(phase, spec.side, spec.seed)));
        }
        let mut img = base.as_ref().expect("set above").1.clone();
        add_noise(&mut img, spec.noise, &mut noise_rng);
        let path = frames_dir.join(format!("{i:06}.png"));
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        // Ingest re-encodes every still; fixtures key on those bytes.
        let jpeg = encode_jpeg(&DynamicImage::ImageRgb8(img), JPEG_QUALITY).map_err(|message| Error::Image {
            path: path.clone(),
            message,
        })?;
        let sha = util::sha256_hex(&jpeg);
        aliases.insert(sha.clone(), STEPS[phase_step(phase)].to_string());
        image_rules.entry(sha).or_insert(phase);
    }
    let mut image_rules: Vec<(String, usize)> = image_rules.into_iter().collect();
    image_rules.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    for (sha, phase) in image_rules {
        rules.push(MockRule {
            image_sha256: Some(sha),
            prompt_contains: Some("Explain what is happening in the image.".into()),
            reply: Some(caption(phase)),
            ..MockRule::default()
        });
    }

    let chat_fixtures = out_dir.join("chat_fixtures.json");
    MockFixtures {
        rules,
        fallback: MockFallback::Digest,
    }
    .save(&chat_fixtures)?;
    let joint_aliases = out_dir.join("joint_aliases.json");
    util::write_json(&joint_aliases, &aliases)?;

    let fps = 1.0;
    let mut srt = String::new();
    let mut reference = Vec::new();
    let per_phase = spec.frames as f64 / spec.phases as f64 / fps;
    for phase in 0..spec.phases {
        let step = STEPS[phase_step(phase)];
        let start = (phase as f64 * per_phase).round() as usize;
        let end = ((phase + 1) as f64 * per_phase).round() as usize;
        srt.push_str(&format!(
            "{}\n{} --> {}\nNow we are {step}.\n\n",
            phase + 1,
            srt_time(start),
            srt_time(end)
        ));
        if phase_step(phase) != 0 {
            reference.push(format!("The cook is {step}."));
        }
    }
    let transcript = out_dir.join("transcript.srt");
    util::write_atomic(&transcript, srt.as_bytes())?;
    let reference_path = out_dir.join("reference.txt");
    util::write_atomic(&reference_path, reference.join(" ").as_bytes())?;

    // Two annotators: the first scores phase changes, the second prefers
    // later frames within a phase.
    let mut tsv = String::from("frame\tuser1\tuser2\n");
    for (i, &p) in phase_of_frame.iter().enumerate() {
        let change = i == 0 || phase_of_frame[i - 1] != p;
        let within = i - phase_of_frame.iter().position(|&q| q == p).expect("phase present");
        tsv.push_str(&format!("{i}\t{}\t{}\n", if change { 5 } else { 1 }, 1 + within % 5));
    }
    let annotations = out_dir.join("annotations.tsv");
    util::write_atomic(&annotations, tsv.as_bytes())?;

    let frame_embed = if spec.noise > 0.0 {
        let model_path = out_dir.join("frame_model.json");
        LocalModel::random_projection(spec.seed, 16, 32, None).save(&model_path)?;
        EmbeddingBackendConfig {
            kind: EmbeddingBackendKind::LocalModel,
            model_id: "random-projection".into(),
            model_path: Some("frame_model.json".into()),
            seed: None,
            ..EmbeddingBackendConfig::mock(0, 32)
        }
    } else {
        EmbeddingBackendConfig::mock(spec.seed, 64)
    };
    let mut joint_embed = EmbeddingBackendConfig::mock(spec.seed.wrapping_add(100), 64);
    joint_embed.fixtures = Some("joint_aliases.json".into());
    joint_embed.alias_noise = spec.alias_noise;

    let mut config = PipelineConfig::default();
    config.semantics.dataset_description = DATASET_DESCRIPTION.into();
    config.backends = BackendSet {
        frame_embed: Some(frame_embed),
        joint_embed: Some(joint_embed),
        chat: Some(ChatBackendConfig::mock("chat_fixtures.json")),
    };
    config.retry = crate::backend::RetryPolicy::no_delay(2);
    // Paths are relative to the config file, which sits next to them.
    config.eval.annotations = Some("annotations.tsv".into());
    config.eval.references = vec!["reference.txt".into()];
    let config_path = out_dir.join("vidsum.toml");
    util::write_atomic(&config_path, config.to_toml()?.as_bytes())?;

    let video = SyntheticVideo {
        frames_dir,
        transcript,
        reference: reference_path,
        annotations,
        config: config_path,
        chat_fixtures,
        joint_aliases,
        phase_of_frame,
    };
    util::write_json(&out_dir.join("synthetic.json"), &video)?;
    Ok(video)
}
