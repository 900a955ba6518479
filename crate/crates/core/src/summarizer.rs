//! Stage-3 text generation: one description per window composite, a
//! budget-bounded merge tree over those descriptions, and the final pass that
//! folds in the transcript.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::backend::map_bounded;
use crate::chat::{ChatClient, ChatRequest};
use crate::error::{Error, Result};
use crate::grouping::Window;
use crate::ingest::{encode_jpeg, Transcript, JPEG_QUALITY};
use crate::prompts::{
    PromptSet, TemplateId, SLOT_CHUNK, SLOT_DATASET, SLOT_FINAL_SUMMARY, SLOT_MAJORITY_LABEL,
    SLOT_TRANSCRIPT,
};
use crate::util;

pub const COMPOSITES_DIR: &str = "composites";
pub const SUMMARY_TREE: &str = "summary_tree.json";
pub const SUMMARY_TEXT: &str = "summary.txt";
pub const DEFAULT_TILE: u32 = 512;
pub const DEFAULT_CONTEXT_TOKENS: usize = 8000;

pub fn token_estimate(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn truncate_tokens(text: &str, tokens: usize) -> String {
    text.chars().take(tokens * 4).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryNode {
    pub node_id: String,
    pub level: usize,
    pub text: String,
    pub token_estimate: usize,
    pub children: Vec<String>,
    /// Inclusive `[first, last]` span of source window (or leaf) ids.
    pub source_windows: [usize; 2],
}

impl SummaryNode {
    pub fn leaf(id: usize, text: String) -> Self {
        SummaryNode {
            node_id: format!("w{id:04}"),
            level: 0,
            token_estimate: token_estimate(&text),
            text,
            children: Vec::new(),
            source_windows: [id, id],
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "V")]
    Vision,
    #[serde(rename = "V+T")]
    VisionText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryTree {
    pub modality: Modality,
    pub context_tokens: usize,
    pub root: String,
    /// Leaves first, then merged nodes in creation order.
    pub nodes: Vec<SummaryNode>,
    pub merge_calls: usize,
    pub final_text: String,
}

/// 2×2 grid: frames 1..4 go top-left, top-right, bottom-left, bottom-right.
/// Missing frames leave black quadrants.
pub fn compose_window_image(frame_paths: &[PathBuf], tile: u32) -> Result<RgbImage> {
    if frame_paths.is_empty() || frame_paths.len() > 4 {
        return Err(Error::InvalidInput(format!(
            "a composite takes 1 to 4 frames, got {}",
            frame_paths.len()
        )));
    }
    if tile == 0 {
        return Err(Error::InvalidInput("tile size must be positive".into()));
    }
    let mut canvas = RgbImage::from_pixel(2 * tile, 2 * tile, Rgb([0, 0, 0]));
    for (k, path) in frame_paths.iter().enumerate() {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let tile_img = imageops::resize(&img.to_rgb8(), tile, tile, FilterType::Triangle);
        let x = (k as u32 % 2) * tile;
        let y = (k as u32 / 2) * tile;
        imageops::replace(&mut canvas, &tile_img, i64::from(x), i64::from(y));
    }
    Ok(canvas)
}

/// Builds and writes `composites/window_NNNN.jpg`; returns the JPEG bytes.
pub fn write_window_composite(
    window: &Window,
    frame_paths: &[PathBuf],
    run_dir: &Path,
    tile: u32,
) -> Result<Vec<u8>> {
    let img = compose_window_image(frame_paths, tile)?;
    let bytes = encode_jpeg(&DynamicImage::ImageRgb8(img), JPEG_QUALITY).map_err(|message| Error::Image {
        path: run_dir.join(COMPOSITES_DIR),
        message,
    })?;
    let path = run_dir.join(COMPOSITES_DIR).join(format!("window_{:04}.jpg", window.window_id));
    util::write_atomic(&path, &bytes)?;
    Ok(bytes)
}

pub fn placeholder_text(window_id: usize) -> String {
    format!("[window {window_id} unavailable]")
}

pub fn describe_window(
    client: &ChatClient,
    prompts: &PromptSet,
    window: &Window,
    composite_jpeg: &[u8],
    dataset_description: &str,
) -> SummaryNode {
    let result = prompts
        .render(
            TemplateId::WindowDescribe,
            &[(SLOT_DATASET, dataset_description), (SLOT_MAJORITY_LABEL, &window.main_label)],
        )
        .and_then(|p| client.complete(&ChatRequest::from_prompt(&p, Some(composite_jpeg.to_vec()))));
    let text = match result {
        Ok(r) if !r.text.trim().is_empty() => r.text.trim().to_string(),
        Ok(_) => {
            log::warn!("window {}: empty description", window.window_id);
            placeholder_text(window.window_id)
        }
        Err(e) => {
            log::warn!("window {}: description failed: {e}", window.window_id);
            placeholder_text(window.window_id)
        }
    };
    SummaryNode::leaf(window.window_id, text)
}

/// Describes every window concurrently; leaves come back in window order.
pub fn describe_windows(
    client: &ChatClient,
    prompts: &PromptSet,
    windows: &[(Window, Vec<u8>)],
    dataset_description: &str,
) -> Vec<SummaryNode> {
    map_bounded(windows, client.max_inflight(), |(w, jpeg)| {
        describe_window(client, prompts, w, jpeg, dataset_description)
    })
}

/// Consecutive groups whose summed estimates stay within `budget`.
pub fn pack_groups(estimates: &[usize], budget: usize) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    let mut total = 0;
    for (i, &e) in estimates.iter().enumerate() {
        if i > start && total + e > budget {
            groups.push(start..i);
            start = i;
            total = 0;
        }
        total += e;
    }
    if start < estimates.len() {
        groups.push(start..estimates.len());
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeResult {
    pub root: SummaryNode,
    /// Every node of the tree: leaves first, then merged nodes.
    pub nodes: Vec<SummaryNode>,
    pub merge_calls: usize,
}

/// Merges leaves bottom-up. Each level packs consecutive nodes under the budget
/// and merges every multi-node group with one backend call; single-node groups
/// move up untouched. A level that would make no progress merges pairs, each
/// side cut to half the budget.
pub fn merge_tree(
    client: &ChatClient,
    prompts: &PromptSet,
    leaves: Vec<SummaryNode>,
    budget: usize,
    dataset_description: &str,
) -> Result<MergeResult> {
    if leaves.is_empty() {
        return Err(Error::InvalidInput("merge_tree needs at least one leaf".into()));
    }
    if budget == 0 {
        return Err(Error::Config("context budget must be positive".into()));
    }
    let mut all = leaves.clone();
    if leaves.len() == 1 {
        let root = leaves.into_iter().next().expect("one leaf");
        return Ok(MergeResult {
            root,
            nodes: all,
            merge_calls: 0,
        });
    }
    let mut current = leaves;
    let mut merge_calls = 0;
    let mut round = 0;
    while current.len() > 1 {
        round += 1;
        for node in current.iter_mut() {
            if node.token_estimate > budget {
                log::warn!(
                    "node {} has ~{} tokens, over the {budget}-token budget; truncating",
                    node.node_id,
                    node.token_estimate
                );
                node.text = truncate_tokens(&node.text, budget);
                node.token_estimate = token_estimate(&node.text);
            }
        }
        let estimates: Vec<usize> = current.iter().map(|n| n.token_estimate).collect();
        let mut groups = pack_groups(&estimates, budget);
        let forced = groups.len() == current.len();
        if forced {
            groups = (0..current.len())
                .step_by(2)
                .map(|s| s..(s + 2).min(current.len()))
                .collect();
        }
        let jobs: Vec<(usize, Vec<SummaryNode>)> = groups
            .iter()
            .enumerate()
            .map(|(k, g)| (k, current[g.clone()].to_vec()))
            .collect();
        let merged = map_bounded(&jobs, client.max_inflight(), |(k, members)| -> Result<SummaryNode> {
            if members.len() == 1 {
                return Ok(members[0].clone());
            }
            let chunk = members
                .iter()
                .map(|m| {
                    if forced {
                        truncate_tokens(&m.text, (budget / 2).max(1))
                    } else {
                        m.text.clone()
                    }
                })
                .collect::<Vec<_>>()
                .join("\n\n");
            let prompt = prompts.render(
                TemplateId::RecursiveMerge,
                &[(SLOT_DATASET, dataset_description), (SLOT_CHUNK, &chunk)],
            )?;
            let reply = client.complete(&ChatRequest::from_prompt(&prompt, None))?;
            let text = reply.text.trim().to_string();
            Ok(SummaryNode {
                node_id: format!("m{round:02}-{k:04}"),
                level: members.iter().map(|m| m.level).max().unwrap_or(0) + 1,
                token_estimate: token_estimate(&text),
                text,
                children: members.iter().map(|m| m.node_id.clone()).collect(),
                source_windows: [
                    members.first().expect("non-empty").source_windows[0],
                    members.last().expect("non-empty").source_windows[1],
                ],
            })
        });
        let mut next = Vec::with_capacity(merged.len());
        for node in merged {
            let node = node?;
            if !node.is_leaf() && !all.iter().any(|n| n.node_id == node.node_id) {
                merge_calls += 1;
                all.push(node.clone());
            }
            next.push(node);
        }
        current = next;
    }
    Ok(MergeResult {
        root: current.pop().expect("one node left"),
        nodes: all,
        merge_calls,
    })
}

/// With a non-empty transcript (and not vision-only) the final-integration
/// prompt combines both; otherwise one recursive-merge pass runs over the root.
pub fn integrate_transcript(
    client: &ChatClient,
    prompts: &PromptSet,
    root: &SummaryNode,
    transcript: Option<&Transcript>,
    video_only: bool,
    dataset_description: &str,
) -> Result<(String, Modality)> {
    let usable = transcript.filter(|t| !t.is_empty() && !video_only);
    let (prompt, modality) = match usable {
        Some(t) => (
            prompts.render(
                TemplateId::FinalIntegrate,
                &[
                    (SLOT_FINAL_SUMMARY, &root.text),
                    (SLOT_TRANSCRIPT, &t.full_text),
                    (SLOT_DATASET, dataset_description),
                ],
            )?,
            Modality::VisionText,
        ),
        None => (
            prompts.render(
                TemplateId::RecursiveMerge,
                &[(SLOT_DATASET, dataset_description), (SLOT_CHUNK, &root.text)],
            )?,
            Modality::Vision,
        ),
    };
    let reply = client.complete(&ChatRequest::from_prompt(&prompt, None))?;
    Ok((reply.text.trim().to_string(), modality))
}
