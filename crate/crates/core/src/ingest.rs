//! Frame extraction and transcript loading.
//!
//! A video is turned into a sequence of JPEG stills at a fixed sampling rate.
//! Container decoding is delegated to an external decoder executable
//! (ffmpeg-compatible command line); a directory of pre-extracted stills is
//! accepted as well, which keeps the rest of the pipeline codec-free.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub const FRAMES_DIR: &str = "frames";
pub const FRAMES_MANIFEST: &str = "frames.json";
pub const JPEG_QUALITY: u8 = 90;

const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    VideoFile,
    ImageDirectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSource {
    pub kind: SourceKind,
    pub path: PathBuf,
    pub fps: f64,
}

impl VideoSource {
    /// Picks the source kind from the path: directories are image sequences,
    /// anything else goes through the decoder.
    pub fn detect(path: impl Into<PathBuf>, fps: f64) -> Self {
        let path = path.into();
        let kind = if path.is_dir() {
            SourceKind::ImageDirectory
        } else {
            SourceKind::VideoFile
        };
        VideoSource { kind, path, fps }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        fs::metadata(&self.path).map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

/// Options that shape extraction but not the source itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    /// Decoder executable, invoked with an ffmpeg-style argument list.
    pub decoder: PathBuf,
    /// Optional `(width, height)` every still is resized to.
    pub resize: Option<(u32, u32)>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            decoder: PathBuf::from("ffmpeg"),
            resize: None,
        }
    }
}

/// A sampled frame and the per-stage state the pipeline attaches to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp_s: f64,
    /// Path of the still, relative to the run directory.
    pub image_ref: PathBuf,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stage_scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_at: Option<String>,
}

impl FrameRecord {
    pub fn new(index: usize, timestamp_s: f64, image_ref: impl Into<PathBuf>) -> Self {
        FrameRecord {
            index,
            timestamp_s,
            image_ref: image_ref.into(),
            stage_scores: BTreeMap::new(),
            dropped_at: None,
        }
    }

    pub fn image_path(&self, base: &Path) -> PathBuf {
        base.join(&self.image_ref)
    }

    /// Records a stage score. Scores live in `[0, 1]`.
    pub fn set_score(&mut self, stage: &str, score: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidInput(format!(
                "stage score {score} for frame {} outside [0, 1]",
                self.index
            )));
        }
        self.stage_scores.insert(stage.to_string(), score);
        Ok(())
    }

    pub fn score(&self, stage: &str) -> Option<f64> {
        self.stage_scores.get(stage).copied()
    }

    /// Marks the frame as dropped. The first drop wins; later calls are no-ops.
    pub fn drop_at(&mut self, stage: &str) {
        if self.dropped_at.is_none() {
            self.dropped_at = Some(stage.to_string());
        }
    }

    pub fn is_dropped(&self) -> bool {
        self.dropped_at.is_some()
    }
}

/// Entry of `frames.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifestEntry {
    pub index: usize,
    pub timestamp_s: f64,
    pub image_ref: PathBuf,
}

pub fn write_frames_manifest(out_dir: &Path, frames: &[FrameRecord]) -> Result<()> {
    let entries: Vec<FrameManifestEntry> = frames
        .iter()
        .map(|f| FrameManifestEntry {
            index: f.index,
            timestamp_s: f.timestamp_s,
            image_ref: f.image_ref.clone(),
        })
        .collect();
    util::write_json(&out_dir.join(FRAMES_MANIFEST), &entries)
}

pub fn read_frames_manifest(out_dir: &Path) -> Result<Vec<FrameRecord>> {
    let entries: Vec<FrameManifestEntry> = util::read_json(&out_dir.join(FRAMES_MANIFEST))?;
    Ok(entries
        .into_iter()
        .map(|e| FrameRecord::new(e.index, e.timestamp_s, e.image_ref))
        .collect())
}

/// Decodes `source` into `<out_dir>/frames/%06d.jpg` and writes `frames.json`.
pub fn extract_frames(
    source: &VideoSource,
    out_dir: &Path,
    options: &ExtractOptions,
) -> Result<Vec<FrameRecord>> {
    source.validate()?;
    let frames_dir = out_dir.join(FRAMES_DIR);
    if frames_dir.exists() {
        fs::remove_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    }
    util::create_dir_all(&frames_dir)?;

    let inputs = match source.kind {
        SourceKind::ImageDirectory => list_images(&source.path)?,
        SourceKind::VideoFile => run_decoder(source, &out_dir.join(".decode"), &options.decoder)?,
    };

    let mut frames = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let img = match image::open(input) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping undecodable still {}: {e}", input.display());
                continue;
            }
        };
        let index = frames.len();
        let rel = Path::new(FRAMES_DIR).join(format!("{index:06}.jpg"));
        let img = match options.resize {
            Some((w, h)) => img.resize_exact(w, h, FilterType::Triangle),
            None => img,
        };
        let bytes = encode_jpeg(&img, JPEG_QUALITY).map_err(|message| Error::Image {
            path: input.clone(),
            message,
        })?;
        util::write_atomic(&out_dir.join(&rel), &bytes)?;
        frames.push(FrameRecord::new(index, index as f64 / source.fps, rel));
    }

    if source.kind == SourceKind::VideoFile {
        let raw_dir = out_dir.join(".decode");
        let _ = fs::remove_dir_all(&raw_dir);
    }
    if frames.is_empty() {
        return Err(Error::EmptyVideo(source.path.clone()));
    }
    write_frames_manifest(out_dir, &frames)?;
    Ok(frames)
}

pub fn encode_jpeg(img: &DynamicImage, quality: u8) -> std::result::Result<Vec<u8>, String> {
    let rgb = img.to_rgb8();
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&rgb)
        .map_err(|e| e.to_string())?;
    Ok(buf)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                    .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn run_decoder(source: &VideoSource, raw_dir: &Path, decoder: &Path) -> Result<Vec<PathBuf>> {
    if raw_dir.exists() {
        fs::remove_dir_all(raw_dir).map_err(|e| Error::io(raw_dir, e))?;
    }
    util::create_dir_all(raw_dir)?;
    let pattern = raw_dir.join("%06d.png");
    let output = Command::new(decoder)
        .arg("-hide_banner")
        .arg("-loglevel")
        .arg("error")
        .arg("-i")
        .arg(&source.path)
        .arg("-vf")
        .arg(format!("fps={}", source.fps))
        .arg("-start_number")
        .arg("0")
        .arg(&pattern)
        .output()
        .map_err(|e| Error::Decoder(format!("failed to launch {}: {e}", decoder.display())))?;
    if !output.status.success() {
        return Err(Error::Decoder(format!(
            "{} exited with {}: {}",
            decoder.display(),
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    list_images(raw_dir)
}

/// One timed cue of a transcript. `end_s = None` means open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub start_s: f64,
    pub end_s: Option<f64>,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub segments: Vec<TranscriptSegment>,
    pub full_text: String,
}

impl Transcript {
    pub fn from_segments(segments: Vec<TranscriptSegment>) -> Self {
        let full_text = segments
            .iter()
            .map(|s| s.text.as_str())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        Transcript {
            segments,
            full_text,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.full_text.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TranscriptFormat {
    Srt,
    Vtt,
    Plain,
}

/// Loads an SRT, WebVTT or plain-text transcript.
pub fn load_transcript(path: &Path) -> Result<Transcript> {
    let bytes = util::read_bytes(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let text = text.trim_start_matches('\u{feff}');
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let format = match ext.as_deref() {
        Some("srt") => TranscriptFormat::Srt,
        Some("vtt") => TranscriptFormat::Vtt,
        Some("txt") => TranscriptFormat::Plain,
        _ if text.starts_with("WEBVTT") => TranscriptFormat::Vtt,
        _ if text.contains("-->") => TranscriptFormat::Srt,
        _ => TranscriptFormat::Plain,
    };
    parse_transcript(text, format, path)
}

fn parse_transcript(text: &str, format: TranscriptFormat, path: &Path) -> Result<Transcript> {
    if format == TranscriptFormat::Plain {
        let body = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if body.is_empty() {
            return Ok(Transcript::default());
        }
        return Ok(Transcript::from_segments(vec![TranscriptSegment {
            start_s: 0.0,
            end_s: None,
            text: body,
        }]));
    }

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let lines: Vec<&str> = text.lines().collect();
    let mut segments: Vec<TranscriptSegment> = Vec::new();
    let mut i = 0;
    if format == TranscriptFormat::Vtt {
        // skip the header block
        while i < lines.len() && !lines[i].trim().is_empty() {
            i += 1;
        }
    }
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let block_start = i;
        let mut block = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            block.push((i + 1, lines[i].trim()));
            i += 1;
        }
        if format == TranscriptFormat::Vtt {
            let head = block[0].1;
            if head.starts_with("NOTE") || head == "STYLE" || head == "REGION" {
                continue;
            }
        }
        let timing_pos = block.iter().position(|(_, l)| l.contains("-->"));
        let Some(timing_pos) = timing_pos else {
            return Err(parse_err(block_start + 1, "cue without a timing line".into()));
        };
        if timing_pos > 1 {
            return Err(parse_err(block[timing_pos].0, "unexpected lines before timing".into()));
        }
        let (line_no, timing) = block[timing_pos];
        let (start, end) = parse_timing_line(timing).map_err(|m| parse_err(line_no, m))?;
        if end < start {
            return Err(parse_err(line_no, format!("cue ends before it starts ({start} > {end})")));
        }
        if let Some(prev) = segments.last() {
            let prev_end = prev.end_s.unwrap_or(f64::INFINITY);
            if start < prev_end {
                return Err(parse_err(
                    line_no,
                    format!("cue starting at {start}s overlaps previous cue ending at {prev_end}s"),
                ));
            }
        }
        let body = block[timing_pos + 1..]
            .iter()
            .map(|(_, l)| strip_tags(l))
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        segments.push(TranscriptSegment {
            start_s: start,
            end_s: Some(end),
            text: body,
        });
    }
    Ok(Transcript::from_segments(segments))
}

fn parse_timing_line(line: &str) -> std::result::Result<(f64, f64), String> {
    let mut parts = line.split("-->");
    let start = parts.next().ok_or("missing start time")?;
    let rest = parts.next().ok_or("missing end time")?;
    if parts.next().is_some() {
        return Err("more than one '-->' in timing line".into());
    }
    // WebVTT cue settings follow the end timestamp
    let end = rest.split_whitespace().next().ok_or("missing end time")?;
    Ok((parse_timestamp(start.trim())?, parse_timestamp(end.trim())?))
}

fn parse_timestamp(s: &str) -> std::result::Result<f64, String> {
    let s = s.replace(',', ".");
    let fields: Vec<&str> = s.split(':').collect();
    let (h, m, sec) = match fields.as_slice() {
        [h, m, sec] => (*h, *m, *sec),
        [m, sec] => ("0", *m, *sec),
        _ => return Err(format!("malformed timestamp '{s}'")),
    };
    let h: u64 = h.parse().map_err(|_| format!("malformed hours in '{s}'"))?;
    let m: u64 = m.parse().map_err(|_| format!("malformed minutes in '{s}'"))?;
    let sec: f64 = sec.parse().map_err(|_| format!("malformed seconds in '{s}'"))?;
    if m >= 60 || !(0.0..60.0).contains(&sec) {
        return Err(format!("timestamp field out of range in '{s}'"));
    }
    Ok(h as f64 * 3600.0 + m as f64 * 60.0 + sec)
}

fn strip_tags(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut depth = 0usize;
    for c in line.chars() {
        match c {
            '<' => depth += 1,
            '>' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out.trim().to_string()
}
