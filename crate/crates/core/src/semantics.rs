//! Stage 2: per-frame captions, candidate labels, label validation, and
//! anchoring of frames to validated labels in the joint embedding space.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::map_bounded;
use crate::chat::{ChatClient, ChatRequest};
use crate::embedding::{cosine_similarity, Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::ingest::FrameRecord;
use crate::prompts::{PromptSet, TemplateId, SLOT_DATASET, SLOT_LABEL, SLOT_VLM_OUTPUT};
use crate::util;

pub const CAPTIONS_MANIFEST: &str = "captions.json";
pub const LABELS_MANIFEST: &str = "labels.json";
pub const ASSIGNMENTS_MANIFEST: &str = "assignments.json";
pub const MAX_LABEL_CHARS: usize = 120;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemanticsConfig {
    pub tau: f64,
    pub dataset_description: String,
    pub merge_near_duplicates: bool,
    pub near_duplicate_cosine: f64,
}

impl Default for SemanticsConfig {
    fn default() -> Self {
        SemanticsConfig {
            tau: 0.9,
            dataset_description: String::new(),
            merge_near_duplicates: false,
            near_duplicate_cosine: 0.95,
        }
    }
}

impl SemanticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() {
            return Err(Error::Config("semantics.tau must be finite".into()));
        }
        if self.dataset_description.trim().is_empty() {
            return Err(Error::Config("semantics.dataset_description is required".into()));
        }
        if self.dataset_description.contains('\n') {
            return Err(Error::Config("semantics.dataset_description must be one line".into()));
        }
        if !(-1.0..=1.0).contains(&self.near_duplicate_cosine) {
            return Err(Error::Config("semantics.near_duplicate_cosine must be in [-1, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub frame_index: usize,
    pub text: String,
    pub backend_id: String,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Valid,
    Invalid,
    /// Validation backend failed; the label is quarantined.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCandidate {
    pub frame_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelAnchor {
    pub label_id: String,
    pub text: String,
    pub source_frames: Vec<usize>,
    pub validated: bool,
    pub embedding: EmbeddingVector,
}

/// Serialized form of an anchor in `labels.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub label_id: String,
    pub text: String,
    pub source_frames: Vec<usize>,
    pub validated: bool,
}

impl From<&LabelAnchor> for AnchorRecord {
    fn from(a: &LabelAnchor) -> Self {
        AnchorRecord {
            label_id: a.label_id.clone(),
            text: a.text.clone(),
            source_frames: a.source_frames.clone(),
            validated: a.validated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage2Status {
    Ok,
    EmptyAnchors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsManifest {
    pub status: Stage2Status,
    pub anchors: Vec<AnchorRecord>,
    pub candidates: Vec<LabelCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatch {
    pub label_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub frame_index: usize,
    pub best_label: Option<String>,
    /// Highest similarity over all anchors; -1 when there are no anchors.
    pub best_score: f64,
    pub all_matches: Vec<LabelMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentsManifest {
    pub status: Stage2Status,
    pub tau: f64,
    pub assignments: Vec<Assignment>,
}

fn read_image(frame: &FrameRecord, base: &Path) -> Result<Vec<u8>> {
    util::read_bytes(&frame.image_path(base))
}

pub fn caption_frame(
    client: &ChatClient,
    prompts: &PromptSet,
    frame: &FrameRecord,
    base: &Path,
    dataset_description: &str,
) -> Result<Caption> {
    let prompt = prompts.render(TemplateId::FrameDescribe, &[(SLOT_DATASET, dataset_description)])?;
    let image = read_image(frame, base)?;
    let reply = client.complete(&ChatRequest::from_prompt(&prompt, Some(image)))?;
    let text = reply.text.trim().to_string();
    if text.is_empty() {
        return Err(Error::backend(client.backend_id(), "empty caption", false));
    }
    Ok(Caption {
        frame_index: frame.index,
        text,
        backend_id: client.backend_id().to_string(),
        prompt_hash: reply.prompt_hash,
    })
}

/// Trims whitespace and wrapping quotes, and caps the length.
pub fn normalize_label(raw: &str) -> String {
    let t = raw.trim().trim_matches(|c| c == '"' || c == '\'').trim();
    let t = t.split_whitespace().collect::<Vec<_>>().join(" ");
    t.chars().take(MAX_LABEL_CHARS).collect::<String>().trim_end().to_string()
}

pub fn generate_label(client: &ChatClient, prompts: &PromptSet, caption: &str) -> Result<String> {
    if caption.trim().is_empty() {
        return Err(Error::InvalidInput("cannot label an empty caption".into()));
    }
    let prompt = prompts.render(TemplateId::LabelGenerate, &[(SLOT_VLM_OUTPUT, caption)])?;
    let reply = client.complete(&ChatRequest::from_prompt(&prompt, None))?;
    let label = normalize_label(&reply.text);
    if label.is_empty() {
        return Err(Error::backend(client.backend_id(), "empty label", false));
    }
    Ok(label)
}

/// Only a reply of exactly `1` (after trimming whitespace) counts as valid.
pub fn parse_verdict(reply: &str) -> bool {
    reply.trim() == "1"
}

pub fn validate_label(client: &ChatClient, prompts: &PromptSet, label: &str) -> Result<bool> {
    if label.trim().is_empty() {
        return Err(Error::InvalidInput("cannot validate an empty label".into()));
    }
    let prompt = prompts.render(TemplateId::LabelValidate, &[(SLOT_LABEL, label)])?;
    match client.complete(&ChatRequest::from_prompt(&prompt, None)) {
        Ok(reply) => Ok(parse_verdict(&reply.text)),
        Err(e) => {
            log::warn!("label validation unavailable for {label:?}: {e}");
            Err(Error::ValidationUnavailable(e.to_string()))
        }
    }
}

fn dedupe_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deduplicates validated labels (case-insensitive), embeds each once, and
/// optionally merges near-duplicates. Anchor ids follow first appearance.
pub fn build_anchor_set(
    validated: &[(usize, String)],
    embedder: &Embedder,
    config: &SemanticsConfig,
) -> Result<Vec<LabelAnchor>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (String, Vec<usize>)> = BTreeMap::new();
    for (frame, text) in validated {
        let key = dedupe_key(text);
        if key.is_empty() {
            continue;
        }
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (text.clone(), Vec::new())
        });
        if !entry.1.contains(frame) {
            entry.1.push(*frame);
        }
    }
    let mut merged: Vec<(String, Vec<usize>, EmbeddingVector)> = Vec::new();
    for key in order {
        let (text, mut frames) = groups.remove(&key).expect("key recorded");
        let embedding = embedder.embed_text(&text)?;
        if config.merge_near_duplicates {
            let mut target = None;
            for (i, (_, _, e)) in merged.iter().enumerate() {
                if cosine_similarity(e, &embedding)? >= config.near_duplicate_cosine {
                    target = Some(i);
                    break;
                }
            }
            if let Some(i) = target {
                merged[i].1.append(&mut frames);
                continue;
            }
        }
        merged.push((text, frames, embedding));
    }
    Ok(merged
        .into_iter()
        .enumerate()
        .map(|(i, (text, mut source_frames, embedding))| {
            source_frames.sort_unstable();
            source_frames.dedup();
            LabelAnchor {
                label_id: format!("L{i:03}"),
                text,
                source_frames,
                validated: true,
                embedding,
            }
        })
        .collect())
}

/// Scores every frame against every anchor and applies the threshold.
pub fn assign_labels(
    frames: &[(usize, EmbeddingVector)],
    anchors: &[LabelAnchor],
    tau: f64,
) -> Result<Vec<Assignment>> {
    frames
        .iter()
        .map(|(frame_index, emb)| {
            let mut scores = Vec::with_capacity(anchors.len());
            for a in anchors {
                scores.push(LabelMatch {
                    label_id: a.label_id.clone(),
                    score: cosine_similarity(emb, &a.embedding)?,
                });
            }
            let mut best: Option<&LabelMatch> = None;
            for m in &scores {
                if best.is_none_or(|b| m.score > b.score) {
                    best = Some(m);
                }
            }
            let best_score = best.map_or(-1.0, |m| m.score);
            let best_label = best.filter(|m| m.score >= tau).map(|m| m.label_id.clone());
            let mut all_matches: Vec<LabelMatch> = scores.into_iter().filter(|m| m.score >= tau).collect();
            all_matches.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.label_id.cmp(&b.label_id)));
            Ok(Assignment {
                frame_index: *frame_index,
                best_label,
                best_score,
                all_matches,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Output {
    pub status: Stage2Status,
    pub captions: Vec<Caption>,
    pub candidates: Vec<LabelCandidate>,
    pub anchors: Vec<LabelAnchor>,
    pub assignments: Vec<Assignment>,
}

impl Stage2Output {
    pub fn labels_manifest(&self) -> LabelsManifest {
        LabelsManifest {
            status: self.status,
            anchors: self.anchors.iter().map(AnchorRecord::from).collect(),
            candidates: self.candidates.clone(),
        }
    }

    pub fn assignments_manifest(&self, tau: f64) -> AssignmentsManifest {
        AssignmentsManifest {
            status: self.status,
            tau,
            assignments: self.assignments.clone(),
        }
    }

    /// Frames that passed the threshold, with their best label id.
    pub fn anchored(&self) -> Vec<(usize, String)> {
        self.assignments
            .iter()
            .filter_map(|a| a.best_label.clone().map(|l| (a.frame_index, l)))
            .collect()
    }
}

struct FrameOutcome {
    caption: std::result::Result<Caption, String>,
    candidate: LabelCandidate,
}

fn process_frame(
    client: &ChatClient,
    prompts: &PromptSet,
    frame: &FrameRecord,
    base: &Path,
    description: &str,
) -> FrameOutcome {
    let mut candidate = LabelCandidate {
        frame_index: frame.index,
        label: None,
        verdict: None,
        error: None,
    };
    let caption = match caption_frame(client, prompts, frame, base, description) {
        Ok(c) => c,
        Err(e) => {
            candidate.error = Some(format!("caption: {e}"));
            return FrameOutcome {
                caption: Err(e.to_string()),
                candidate,
            };
        }
    };
    match generate_label(client, prompts, &caption.text) {
        Ok(label) => {
            candidate.verdict = Some(match validate_label(client, prompts, &label) {
                Ok(true) => Verdict::Valid,
                Ok(false) => Verdict::Invalid,
                Err(e) => {
                    candidate.error = Some(format!("validate: {e}"));
                    Verdict::Unavailable
                }
            });
            candidate.label = Some(label);
        }
        Err(e) => candidate.error = Some(format!("label: {e}")),
    }
    FrameOutcome {
        caption: Ok(caption),
        candidate,
    }
}

/// Runs the whole of Stage 2 over `selected` frame indices. Frames whose
/// caption fails are dropped at `s2-caption`; frames below `tau` for every
/// anchor are dropped at `s2-anchor`. Writes `s3` for every anchored-stage
/// frame.
pub fn run_stage2(
    frames: &mut [FrameRecord],
    selected: &[usize],
    base: &Path,
    client: &ChatClient,
    prompts: &PromptSet,
    joint: &Embedder,
    config: &SemanticsConfig,
) -> Result<Stage2Output> {
    config.validate()?;
    let targets: Vec<FrameRecord> = selected.iter().map(|&i| frames[i].clone()).collect();
    let outcomes = map_bounded(&targets, client.max_inflight(), |f| {
        process_frame(client, prompts, f, base, &config.dataset_description)
    });

    let mut captions = Vec::new();
    let mut candidates = Vec::new();
    let mut live: Vec<usize> = Vec::new();
    for (frame, outcome) in targets.iter().zip(outcomes) {
        match outcome.caption {
            Ok(c) => {
                captions.push(c);
                live.push(frame.index);
            }
            Err(e) => {
                log::warn!("frame {} dropped: caption failed: {e}", frame.index);
                frames[frame.index].drop_at("s2-caption");
            }
        }
        candidates.push(outcome.candidate);
    }

    let validated: Vec<(usize, String)> = candidates
        .iter()
        .filter(|c| c.verdict == Some(Verdict::Valid))
        .filter_map(|c| c.label.clone().map(|l| (c.frame_index, l)))
        .collect();
    let anchors = build_anchor_set(&validated, joint, config)?;
    let status = if anchors.is_empty() {
        log::warn!("no validated labels; every frame is unanchored");
        Stage2Status::EmptyAnchors
    } else {
        Stage2Status::Ok
    };

    let live_records: Vec<FrameRecord> = live.iter().map(|&i| frames[i].clone()).collect();
    let embeddings = joint.embed_images_joint(&live_records, base)?;
    let pairs: Vec<(usize, EmbeddingVector)> = live.iter().copied().zip(embeddings).collect();
    let assignments = assign_labels(&pairs, &anchors, config.tau)?;
    for a in &assignments {
        let frame = &mut frames[a.frame_index];
        frame.set_score("s3", a.best_score.clamp(0.0, 1.0))?;
        if a.best_label.is_none() {
            frame.drop_at("s2-anchor");
        }
    }
    Ok(Stage2Output {
        status,
        captions,
        candidates,
        anchors,
        assignments,
    })
}
