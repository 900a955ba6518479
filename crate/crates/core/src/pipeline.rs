//! Stage runner over a run directory.
//!
//! Stages talk to each other only through files in the run directory, and
//! `run.json` records which of them are current. A stage that completed under
//! the same config is not run again, so an interrupted run picks up at the
//! first stage that has no record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{map_bounded, CallLog};
use crate::changepoint::{default_penalty, pelt, Signal};
use crate::chat::ChatClient;
use crate::config::PipelineConfig;
use crate::embedding::{Embedder, Space};
use crate::error::{Error, Result};
use crate::evaluate::{self, EvalPair, EvalReport, JudgeReport, EVAL_PAIRS, EVAL_REPORT, EXTERNAL_SCORES, JUDGE_RUBRIC};
use crate::grouping::{self, Window, WindowsManifest, SCORES_CSV, WINDOWS_MANIFEST};
use crate::ingest::{self, FrameRecord, Transcript, VideoSource};
use crate::manifest::{append_timing, InputRecord, RunManifest, StageId, StageRecord};
use crate::sampler::{self, CHANGEPOINTS_MANIFEST, SAMPLING_MANIFEST};
use crate::semantics::{self, Stage2Status, ASSIGNMENTS_MANIFEST, CAPTIONS_MANIFEST, LABELS_MANIFEST};
use crate::summarizer::{self, SummaryNode, SummaryTree, COMPOSITES_DIR, SUMMARY_TEXT, SUMMARY_TREE};
use crate::util;

pub const TRANSCRIPT_MANIFEST: &str = "transcript.json";
pub const STAGE1_STATE: &str = "stage1.json";
pub const STAGE2_STATE: &str = "stage2.json";

/// Frame state after Stage 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1State {
    pub skipped: bool,
    pub frames: Vec<FrameRecord>,
    /// Frames passed on to Stage 2, ascending.
    pub selected: Vec<usize>,
    /// Change-point segment of each selected frame.
    pub segments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoredFrame {
    pub frame_index: usize,
    pub label_id: String,
    pub label: String,
}

/// Frame state after Stage 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2State {
    pub skipped: bool,
    pub status: Stage2Status,
    pub frames: Vec<FrameRecord>,
    pub anchored: Vec<AnchoredFrame>,
}

/// Frame counts along the pipeline, read back from a finished run directory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAccounting {
    pub extracted: usize,
    /// Frames left after the motion filter.
    pub filtered: usize,
    /// Frames entering Stage 2.
    pub selected: usize,
    pub labels: usize,
    pub anchored: usize,
    pub windows: usize,
    /// Calls that described a composite window or a single frame leaf.
    pub representative_calls: usize,
}

pub struct Pipeline {
    run_dir: PathBuf,
    config: PipelineConfig,
    manifest: RunManifest,
}

impl Pipeline {
    /// Opens or creates a run directory. An existing run must have been made
    /// with the same configuration.
    pub fn open(run_dir: &Path, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        util::create_dir_all(run_dir)?;
        let hash = config.hash();
        let manifest = match RunManifest::load(run_dir)? {
            Some(m) if m.config_hash == hash => m,
            Some(m) => {
                return Err(Error::Config(format!(
                    "{} holds a run with config {} but the current config is {}; use a fresh run directory",
                    run_dir.display(),
                    &m.config_hash[..12],
                    &hash[..12]
                )))
            }
            None => RunManifest::new(&config),
        };
        Ok(Pipeline {
            run_dir: run_dir.to_path_buf(),
            config,
            manifest,
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn cache_root(&self) -> PathBuf {
        self.config
            .run
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.run_dir.join("cache"))
    }

    fn embedder(&self, space: Space, log: &Arc<CallLog>) -> Result<Embedder> {
        let b = &self.config.backends;
        let cfg = match space {
            Space::Frame => b.frame_embed.as_ref(),
            Space::Joint => b.joint_embed.as_ref(),
        }
        .ok_or_else(|| Error::Config(format!("no {space:?} embedding backend configured")))?;
        Ok(Embedder::new(cfg.build(space, Path::new(""))?)
            .with_cache(&self.cache_root())
            .with_retry(self.config.retry)
            .with_call_log(log.clone()))
    }

    fn chat(&self, log: &Arc<CallLog>) -> Result<ChatClient> {
        chat_client(&self.config, &self.cache_root(), log)
    }

    fn dataset(&self) -> &str {
        &self.config.semantics.dataset_description
    }

    /// Runs every stage that is not yet current.
    pub fn run(&mut self, video: &Path, transcript: Option<&Path>) -> Result<()> {
        let input_hash = hash_input(video, transcript)?;
        let ingested = self.manifest.is_completed(StageId::Ingest);
        match &self.manifest.input {
            Some(i) if ingested && i.input_hash != input_hash => {
                return Err(Error::Config(format!(
                    "{} already holds a run over different input; use a fresh run directory",
                    self.run_dir.display()
                )))
            }
            Some(_) if ingested => log::info!("ingest is current; skipping"),
            _ => self.ingest(video, transcript)?,
        }
        for stage in &StageId::ALL[1..] {
            if self.manifest.is_completed(*stage) {
                log::info!("{stage} is current; skipping");
                continue;
            }
            self.run_stage(*stage)?;
        }
        Ok(())
    }

    /// Runs one stage after Ingest, replacing any earlier output of it.
    pub fn run_stage(&mut self, stage: StageId) -> Result<()> {
        match stage {
            StageId::Ingest => Err(Error::InvalidInput("ingest needs an input video; use ingest()".into())),
            StageId::Stage1 => self.stage(stage, Self::stage1),
            StageId::Stage2 => self.stage(stage, Self::stage2),
            StageId::Stage3 => self.stage(stage, Self::stage3),
            StageId::Score => self.stage(stage, Self::score),
        }
    }

    fn stage(&mut self, stage: StageId, body: fn(&mut Self, &Arc<CallLog>) -> Result<StageRecord>) -> Result<()> {
        self.manifest.require(stage).map_err(|e| e.in_stage(stage.name()))?;
        log::info!("running {stage}");
        let started = Instant::now();
        let log = Arc::new(CallLog::default());
        let record = body(self, &log).map_err(|e| e.in_stage(stage.name()))?;
        self.finish(record, started)
    }

    fn finish(&mut self, record: StageRecord, started: Instant) -> Result<()> {
        let stage = record.stage;
        self.manifest.complete(record);
        self.manifest.save(&self.run_dir)?;
        append_timing(&self.run_dir, &self.manifest.run_id, stage, started.elapsed().as_secs_f64())
    }

    pub fn ingest(&mut self, video: &Path, transcript: Option<&Path>) -> Result<()> {
        let started = Instant::now();
        let record = self.ingest_inner(video, transcript).map_err(|e| e.in_stage("ingest"))?;
        self.finish(record, started)
    }

    fn ingest_inner(&mut self, video: &Path, transcript: Option<&Path>) -> Result<StageRecord> {
        let source = VideoSource::detect(video, self.config.ingest.fps);
        let input_hash = hash_input(video, transcript)?;
        let frames = ingest::extract_frames(&source, &self.run_dir, &self.config.ingest.extract_options())?;
        let transcript_path = self.run_dir.join(TRANSCRIPT_MANIFEST);
        match transcript {
            Some(p) => util::write_json(&transcript_path, &ingest::load_transcript(p)?)?,
            None if transcript_path.exists() => {
                std::fs::remove_file(&transcript_path).map_err(|e| Error::io(&transcript_path, e))?
            }
            None => {}
        }
        self.manifest.set_input(InputRecord {
            video: video.to_path_buf(),
            kind: source.kind,
            transcript: transcript.map(Path::to_path_buf),
            input_hash,
        });
        Ok(StageRecord::new(StageId::Ingest, frames.len(), frames.len(), &[]))
    }

    fn stage1(&mut self, log: &Arc<CallLog>) -> Result<StageRecord> {
        let mut frames = ingest::read_frames_manifest(&self.run_dir)?;
        let embedder = self.embedder(Space::Frame, log)?;
        let embeddings = embedder.embed_frames(&frames, &self.run_dir)?;
        let state = if self.config.run.skip_stage1 {
            for (frame, s1) in frames.iter_mut().zip(sampler::motion_scores(&embeddings)) {
                frame.set_score("s1", s1)?;
                frame.set_score("s2", 1.0)?;
            }
            Stage1State {
                skipped: true,
                selected: (0..frames.len()).collect(),
                segments: vec![0; frames.len()],
                frames,
            }
        } else {
            let signal = Signal::from_embeddings(&embeddings)?;
            let penalty = self.config.changepoint.penalty.unwrap_or_else(|| default_penalty(&signal));
            let cps = pelt(&signal, penalty)?;
            util::write_json(&self.run_dir.join(CHANGEPOINTS_MANIFEST), &cps)?;
            let survivors = sampler::diff_filter(&mut frames, &embeddings, self.config.sampler.diff_threshold)?;
            let report = sampler::adaptive_sample(&mut frames, &survivors, &embeddings, &cps, &self.config.sampler)?;
            util::write_json(&self.run_dir.join(SAMPLING_MANIFEST), &report)?;
            Stage1State {
                skipped: false,
                segments: report.retained.iter().map(|&i| cps.segment_of(i)).collect(),
                selected: report.retained,
                frames,
            }
        };
        util::write_json(&self.run_dir.join(STAGE1_STATE), &state)?;
        Ok(StageRecord::new(
            StageId::Stage1,
            state.frames.len(),
            state.selected.len(),
            &log.drain_sorted(),
        ))
    }

    fn stage2(&mut self, log: &Arc<CallLog>) -> Result<StageRecord> {
        let st1: Stage1State = util::read_json(&self.run_dir.join(STAGE1_STATE))?;
        let mut frames = st1.frames;
        let state = if self.config.run.skip_stage2 {
            let mut anchored = Vec::with_capacity(st1.selected.len());
            for (&i, &seg) in st1.selected.iter().zip(&st1.segments) {
                frames[i].set_score("s3", 0.0)?;
                anchored.push(AnchoredFrame {
                    frame_index: i,
                    label_id: format!("segment-{seg}"),
                    label: format!("segment-{seg}"),
                });
            }
            Stage2State {
                skipped: true,
                status: Stage2Status::Ok,
                frames,
                anchored,
            }
        } else {
            let chat = self.chat(log)?;
            let joint = self.embedder(Space::Joint, log)?;
            let out = semantics::run_stage2(
                &mut frames,
                &st1.selected,
                &self.run_dir,
                &chat,
                &self.config.prompts,
                &joint,
                &self.config.semantics,
            )?;
            util::write_json(&self.run_dir.join(CAPTIONS_MANIFEST), &out.captions)?;
            util::write_json(&self.run_dir.join(LABELS_MANIFEST), &out.labels_manifest())?;
            util::write_json(
                &self.run_dir.join(ASSIGNMENTS_MANIFEST),
                &out.assignments_manifest(self.config.semantics.tau),
            )?;
            let text: BTreeMap<&str, &str> = out
                .anchors
                .iter()
                .map(|a| (a.label_id.as_str(), a.text.as_str()))
                .collect();
            let anchored = out
                .anchored()
                .into_iter()
                .map(|(frame_index, label_id)| AnchoredFrame {
                    frame_index,
                    label: text[label_id.as_str()].to_string(),
                    label_id,
                })
                .collect();
            Stage2State {
                skipped: false,
                status: out.status,
                frames,
                anchored,
            }
        };
        util::write_json(&self.run_dir.join(STAGE2_STATE), &state)?;
        let mut record = StageRecord::new(
            StageId::Stage2,
            st1.selected.len(),
            state.anchored.len(),
            &log.drain_sorted(),
        );
        if state.status == Stage2Status::EmptyAnchors {
            record.status = Some("empty-anchors".into());
        }
        Ok(record)
    }

    fn stage3(&mut self, log: &Arc<CallLog>) -> Result<StageRecord> {
        let st2: Stage2State = util::read_json(&self.run_dir.join(STAGE2_STATE))?;
        let transcript_path = self.run_dir.join(TRANSCRIPT_MANIFEST);
        let transcript: Option<Transcript> = if transcript_path.is_file() {
            Some(util::read_json(&transcript_path)?)
        } else {
            None
        };
        let composites = self.run_dir.join(COMPOSITES_DIR);
        if composites.exists() {
            std::fs::remove_dir_all(&composites).map_err(|e| Error::io(&composites, e))?;
        }
        let chat = self.chat(log)?;
        let prompts = &self.config.prompts;
        let run_dir = &self.run_dir;

        let mut windows: Vec<Window> = Vec::new();
        let leaves: Vec<SummaryNode> = if st2.anchored.is_empty() {
            Vec::new()
        } else if self.config.run.no_grouping {
            let picked: Vec<&FrameRecord> = st2.anchored.iter().map(|a| &st2.frames[a.frame_index]).collect();
            let texts = map_bounded(&picked, chat.max_inflight(), |f| {
                semantics::caption_frame(&chat, prompts, f, run_dir, self.dataset())
            });
            texts
                .into_iter()
                .enumerate()
                .map(|(k, r)| {
                    let text = r.map(|c| c.text).unwrap_or_else(|e| {
                        log::warn!("frame leaf {k}: description failed: {e}");
                        summarizer::placeholder_text(k)
                    });
                    SummaryNode::leaf(k, text)
                })
                .collect()
        } else {
            let pairs: Vec<(usize, String)> = st2.anchored.iter().map(|a| (a.frame_index, a.label.clone())).collect();
            windows = grouping::make_windows(&pairs)?;
            let mut jobs = Vec::with_capacity(windows.len());
            for w in &windows {
                let paths: Vec<PathBuf> = w.frame_indices.iter().map(|&i| st2.frames[i].image_path(run_dir)).collect();
                let jpeg = summarizer::write_window_composite(w, &paths, run_dir, self.config.summarizer.tile_size)?;
                jobs.push((w.clone(), jpeg));
            }
            summarizer::describe_windows(&chat, prompts, &jobs, self.dataset())
        };
        util::write_json(
            &run_dir.join(WINDOWS_MANIFEST),
            &WindowsManifest {
                windows: windows.clone(),
            },
        )?;

        let leaf_count = leaves.len();
        let tree = if leaves.is_empty() {
            log::warn!("no anchored frames; the summary is empty");
            SummaryTree {
                modality: summarizer::Modality::Vision,
                context_tokens: self.config.summarizer.context_tokens,
                root: String::new(),
                nodes: Vec::new(),
                merge_calls: 0,
                final_text: String::new(),
            }
        } else {
            let merged = summarizer::merge_tree(
                &chat,
                prompts,
                leaves,
                self.config.summarizer.context_tokens,
                self.dataset(),
            )?;
            let (final_text, modality) = summarizer::integrate_transcript(
                &chat,
                prompts,
                &merged.root,
                transcript.as_ref(),
                self.config.run.video_only,
                self.dataset(),
            )?;
            SummaryTree {
                modality,
                context_tokens: self.config.summarizer.context_tokens,
                root: merged.root.node_id.clone(),
                nodes: merged.nodes,
                merge_calls: merged.merge_calls,
                final_text,
            }
        };
        util::write_json(&run_dir.join(SUMMARY_TREE), &tree)?;
        util::write_atomic(&run_dir.join(SUMMARY_TEXT), tree.final_text.as_bytes())?;
        let mut record = StageRecord::new(StageId::Stage3, st2.anchored.len(), leaf_count, &log.drain_sorted());
        if leaf_count == 0 {
            record.status = Some("empty-anchors".into());
        }
        Ok(record)
    }

    fn score(&mut self, _log: &Arc<CallLog>) -> Result<StageRecord> {
        let st2: Stage2State = util::read_json(&self.run_dir.join(STAGE2_STATE))?;
        let windows: WindowsManifest = util::read_json(&self.run_dir.join(WINDOWS_MANIFEST))?;
        let scores = grouping::importance_scores(&st2.frames, &windows.windows)?;
        grouping::write_scores_csv(&self.run_dir.join(SCORES_CSV), &scores)?;
        Ok(StageRecord::new(StageId::Score, st2.frames.len(), scores.len(), &[]))
    }

    /// Frame counts of a completed run.
    pub fn accounting(&self) -> Result<FrameAccounting> {
        read_accounting(&self.run_dir)
    }
}

pub fn read_accounting(run_dir: &Path) -> Result<FrameAccounting> {
    let st1: Stage1State = util::read_json(&run_dir.join(STAGE1_STATE))?;
    let st2: Stage2State = util::read_json(&run_dir.join(STAGE2_STATE))?;
    let windows: WindowsManifest = util::read_json(&run_dir.join(WINDOWS_MANIFEST))?;
    let tree: SummaryTree = util::read_json(&run_dir.join(SUMMARY_TREE))?;
    let filtered = if st1.skipped {
        st1.frames.len()
    } else {
        st1.frames
            .iter()
            .filter(|f| f.dropped_at.as_deref() != Some("s1"))
            .count()
    };
    let labels = if st2.skipped {
        0
    } else {
        let labels: semantics::LabelsManifest = util::read_json(&run_dir.join(LABELS_MANIFEST))?;
        labels.anchors.len()
    };
    Ok(FrameAccounting {
        extracted: st1.frames.len(),
        filtered,
        selected: st1.selected.len(),
        labels,
        anchored: st2.anchored.len(),
        windows: windows.windows.len(),
        representative_calls: tree.nodes.iter().filter(|n| n.is_leaf()).count(),
    })
}

pub fn chat_client(config: &PipelineConfig, cache_root: &Path, log: &Arc<CallLog>) -> Result<ChatClient> {
    let cfg = config
        .backends
        .chat
        .as_ref()
        .ok_or_else(|| Error::Config("no chat backend configured".into()))?;
    Ok(ChatClient::new(cfg.build(Path::new(""))?)
        .with_cache(cache_root)
        .with_retry(config.retry)
        .with_max_inflight(cfg.max_inflight)
        .with_call_log(log.clone()))
}

/// Digest of the input contents (not their paths).
pub fn hash_input(video: &Path, transcript: Option<&Path>) -> Result<String> {
    let mut parts: Vec<String> = Vec::new();
    if video.is_dir() {
        parts.push("dir".into());
        let mut entries: Vec<PathBuf> = std::fs::read_dir(video)
            .map_err(|e| Error::io(video, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            parts.push(format!("{name}:{}", util::sha256_hex(&util::read_bytes(&p)?)));
        }
    } else {
        parts.push("file".into());
        parts.push(util::sha256_hex(&util::read_bytes(video)?));
    }
    if let Some(t) = transcript {
        parts.push(format!("transcript:{}", util::sha256_hex(&util::read_bytes(t)?)));
    }
    let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_bytes()).collect();
    Ok(util::sha256_parts(&refs))
}

/// Scores a finished run against whatever evaluation inputs the config names,
/// writes `eval_report.json` and `eval_pairs.jsonl`, and returns the report.
pub fn evaluate_run(run_dir: &Path, config: &PipelineConfig) -> Result<EvalReport> {
    let eval = &config.eval;
    let mut report = EvalReport::default();
    if let Some(path) = &eval.annotations {
        let scores = grouping::read_scores_csv(&run_dir.join(SCORES_CSV))?;
        let pred: Vec<f64> = scores.iter().map(|s| s.final_score).collect();
        let truth = evaluate::load_annotations(path)?;
        report.ranking = Some(evaluate::evaluate_ranking(&pred, &truth)?);
        report.config.insert("annotations".into(), path.display().to_string());
    }
    let summary_path = run_dir.join(SUMMARY_TEXT);
    if !eval.references.is_empty() {
        let candidate = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let mut references = Vec::with_capacity(eval.references.len());
        for p in &eval.references {
            references.push(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?);
        }
        report.text = Some(evaluate::evaluate_text(&candidate, &references, &eval.bleu)?);
        let manifest = RunManifest::load(run_dir)?;
        let id = manifest.map_or_else(|| "run".to_string(), |m| m.run_id);
        evaluate::write_eval_pairs(
            &run_dir.join(EVAL_PAIRS),
            &[EvalPair {
                id,
                candidate: candidate.clone(),
                references: references.clone(),
            }],
        )?;
        let names: Vec<String> = eval.references.iter().map(|p| p.display().to_string()).collect();
        report.config.insert("references".into(), names.join(","));
        report.config.insert("bleu_max_n".into(), eval.bleu.max_n.to_string());
        report.config.insert("bleu_smoothing".into(), eval.bleu.smoothing.to_string());
        if eval.judge {
            let log = Arc::new(CallLog::default());
            let cache = config.run.cache_dir.clone().unwrap_or_else(|| run_dir.join("cache"));
            let client = chat_client(config, &cache, &log)?;
            let rubric = eval.judge_rubric.as_deref().unwrap_or(JUDGE_RUBRIC);
            let scores = evaluate::judge_summary(&client, rubric, &candidate, &references[0])?;
            report.judge = Some(JudgeReport {
                score: evaluate::llm_judge_score(&scores)?,
                scores,
            });
        }
    } else if eval.judge {
        return Err(Error::Config("eval.judge needs at least one reference summary".into()));
    }
    let external = run_dir.join(EXTERNAL_SCORES);
    if external.is_file() {
        report.external = evaluate::read_external_scores(&external)?;
    }
    util::write_json(&run_dir.join(EVAL_REPORT), &report)?;
    Ok(report)
}

