//! Stage-3 windowing of anchored frames and the per-frame layered importance
//! score.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FrameRecord;

pub const WINDOWS_MANIFEST: &str = "windows.json";
pub const SCORES_CSV: &str = "scores.csv";
pub const WINDOW_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelPattern {
    #[serde(rename = "4-distinct")]
    FourDistinct,
    #[serde(rename = "3:1")]
    ThreeOne,
    #[serde(rename = "2:2")]
    TwoTwo,
    #[serde(rename = "2:1:1")]
    TwoOneOne,
    Unanimous,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub window_id: usize,
    pub frame_indices: Vec<usize>,
    pub labels: Vec<String>,
    pub main_label: String,
    pub label_pattern: LabelPattern,
    /// Aligned with `frame_indices`.
    pub weights: Vec<f64>,
}

impl Window {
    pub fn weight_of(&self, frame: usize) -> Option<f64> {
        self.frame_indices
            .iter()
            .position(|&f| f == frame)
            .map(|p| self.weights[p])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowsManifest {
    pub windows: Vec<Window>,
}

/// Distinct labels with their counts, in order of first appearance.
fn tally(labels: &[String]) -> Vec<(&str, usize)> {
    let mut out: Vec<(&str, usize)> = Vec::new();
    for l in labels {
        match out.iter_mut().find(|(x, _)| *x == l.as_str()) {
            Some((_, c)) => *c += 1,
            None => out.push((l.as_str(), 1)),
        }
    }
    out
}

pub fn label_pattern(labels: &[String]) -> LabelPattern {
    if labels.len() < WINDOW_SIZE {
        return LabelPattern::Partial;
    }
    let mut counts: Vec<usize> = tally(labels).into_iter().map(|(_, c)| c).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    match counts.as_slice() {
        [4] => LabelPattern::Unanimous,
        [3, 1] => LabelPattern::ThreeOne,
        [2, 2] => LabelPattern::TwoTwo,
        [2, 1, 1] => LabelPattern::TwoOneOne,
        _ => LabelPattern::FourDistinct,
    }
}

/// Labels tied for the highest count, joined with " + " in order of first
/// appearance. Covers majority, 2:2 and all-distinct windows with one rule.
pub fn main_label(labels: &[String]) -> String {
    let t = tally(labels);
    let top = t.iter().map(|(_, c)| *c).max().unwrap_or(0);
    t.iter()
        .filter(|(_, c)| *c == top)
        .map(|(l, _)| *l)
        .collect::<Vec<_>>()
        .join(" + ")
}

/// Each frame gets `count(label) / 4`, except that a window whose frames all
/// share one label gets 0.25 per frame.
pub fn window_weights(labels: &[String]) -> Vec<f64> {
    let t = tally(labels);
    if t.len() <= 1 {
        return vec![0.25; labels.len()];
    }
    labels
        .iter()
        .map(|l| {
            let c = t.iter().find(|(x, _)| *x == l.as_str()).map_or(0, |(_, c)| *c);
            c as f64 / WINDOW_SIZE as f64
        })
        .collect()
}

/// Tiles anchored `(frame_index, label)` pairs into consecutive windows of four.
pub fn make_windows(anchored: &[(usize, String)]) -> Result<Vec<Window>> {
    if anchored.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::InvalidInput("anchored frames must be strictly ascending".into()));
    }
    Ok(anchored
        .chunks(WINDOW_SIZE)
        .enumerate()
        .map(|(window_id, chunk)| {
            let labels: Vec<String> = chunk.iter().map(|(_, l)| l.clone()).collect();
            Window {
                window_id,
                frame_indices: chunk.iter().map(|(f, _)| *f).collect(),
                main_label: main_label(&labels),
                label_pattern: label_pattern(&labels),
                weights: window_weights(&labels),
                labels,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScore {
    pub frame_index: usize,
    pub timestamp_s: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    #[serde(rename = "final")]
    pub final_score: f64,
}

/// Number of score components a frame keeps given where it was dropped.
pub fn components_kept(dropped_at: Option<&str>) -> Result<usize> {
    Ok(match dropped_at {
        None => 4,
        Some("s1") => 1,
        Some("s2") | Some("s2-caption") => 2,
        Some("s2-anchor") => 3,
        Some(other) => return Err(Error::InvalidInput(format!("unknown drop stage {other:?}"))),
    })
}

/// One score per original frame. Components after the drop stage are zero and
/// the mean always divides by four.
pub fn importance_scores(frames: &[FrameRecord], windows: &[Window]) -> Result<Vec<ImportanceScore>> {
    let mut s4 = vec![None; frames.len()];
    for w in windows {
        for (&f, &wt) in w.frame_indices.iter().zip(&w.weights) {
            let slot = s4.get_mut(f).ok_or_else(|| {
                Error::InvalidInput(format!("window {} names unknown frame {f}", w.window_id))
            })?;
            *slot = Some(wt);
        }
    }
    frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            if frame.index != i {
                return Err(Error::InvalidInput(format!("frame {i} has index {}", frame.index)));
            }
            let kept = components_kept(frame.dropped_at.as_deref())?;
            let raw = [
                frame.score("s1").unwrap_or(0.0),
                frame.score("s2").unwrap_or(0.0),
                frame.score("s3").unwrap_or(0.0).clamp(0.0, 1.0),
                s4[i].unwrap_or(0.0),
            ];
            let mut c = [0.0; 4];
            c[..kept].copy_from_slice(&raw[..kept]);
            Ok(ImportanceScore {
                frame_index: i,
                timestamp_s: frame.timestamp_s,
                s1: c[0],
                s2: c[1],
                s3: c[2],
                s4: c[3],
                final_score: (c[0] + c[1] + c[2] + c[3]) / 4.0,
            })
        })
        .collect()
}

pub fn write_scores_csv(path: &Path, scores: &[ImportanceScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["frame_index", "timestamp_s", "s1", "s2", "s3", "s4", "final"])
        .map_err(io)?;
    for s in scores {
        w.write_record([
            s.frame_index.to_string(),
            s.timestamp_s.to_string(),
            s.s1.to_string(),
            s.s2.to_string(),
            s.s3.to_string(),
            s.s4.to_string(),
            s.final_score.to_string(),
        ])
        .map_err(io)?;
    }
    let mut bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    bytes.flush().ok();
    crate::util::write_atomic(path, &bytes)
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ImportanceScore>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<ImportanceScore>().enumerate() {
        out.push(rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
