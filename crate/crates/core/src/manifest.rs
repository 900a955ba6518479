//! `run.json`: what a run directory holds and how it got there.
//!
//! Everything here is a pure function of the config and the inputs, so two
//! runs of the same thing produce the same bytes. Wall-clock times go to
//! `logs/timings.jsonl` instead.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::CallRecord;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::util;

pub const RUN_MANIFEST: &str = "run.json";
pub const LOGS_DIR: &str = "logs";
pub const TIMINGS_LOG: &str = "timings.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageId {
    Ingest,
    Stage1,
    Stage2,
    Stage3,
    Score,
}

impl StageId {
    pub const ALL: [StageId; 5] = [
        StageId::Ingest,
        StageId::Stage1,
        StageId::Stage2,
        StageId::Stage3,
        StageId::Score,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageId::Ingest => "ingest",
            StageId::Stage1 => "stage1",
            StageId::Stage2 => "stage2",
            StageId::Stage3 => "stage3",
            StageId::Score => "score",
        }
    }

    pub fn previous(self) -> Option<StageId> {
        let i = StageId::ALL.iter().position(|s| *s == self).expect("listed");
        i.checked_sub(1).map(|p| StageId::ALL[p])
    }
}

impl std::fmt::Display for StageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub video: PathBuf,
    pub kind: crate::ingest::SourceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    pub input_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageId,
    pub input_count: usize,
    pub output_count: usize,
    /// Logical backend calls, cache hits included.
    pub backend_calls: usize,
    /// sha256 over the sorted call records.
    pub call_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
}

impl StageRecord {
    pub fn new(stage: StageId, input_count: usize, output_count: usize, calls: &[CallRecord]) -> Self {
        let bytes = serde_json::to_vec(calls).expect("call records serialize");
        StageRecord {
            stage,
            input_count,
            output_count,
            backend_calls: calls.len(),
            call_digest: util::sha256_hex(&bytes),
            status: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub config: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<InputRecord>,
    /// Every stage execution in order; never rewritten.
    pub history: Vec<StageRecord>,
    /// Stages whose outputs are current.
    pub completed: Vec<StageId>,
}

impl RunManifest {
    pub fn new(config: &PipelineConfig) -> Self {
        let config_hash = config.hash();
        RunManifest {
            run_id: config_hash[..16].to_string(),
            config_hash,
            config: config.clone(),
            input: None,
            history: Vec::new(),
            completed: Vec::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        let path = run_dir.join(RUN_MANIFEST);
        if !path.is_file() {
            return Ok(None);
        }
        util::read_json(&path).map(Some)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        util::write_json(&run_dir.join(RUN_MANIFEST), self)
    }

    pub fn set_input(&mut self, input: InputRecord) {
        self.run_id = util::sha256_parts(&[self.config_hash.as_bytes(), input.input_hash.as_bytes()])[..16].to_string();
        self.input = Some(input);
    }

    pub fn is_completed(&self, stage: StageId) -> bool {
        self.completed.contains(&stage)
    }

    /// Records a finished stage. Later stages stop counting as current.
    pub fn complete(&mut self, record: StageRecord) {
        let stage = record.stage;
        self.completed.retain(|s| *s < stage);
        self.completed.push(stage);
        self.history.push(record);
    }

    pub fn latest(&self, stage: StageId) -> Option<&StageRecord> {
        self.history.iter().rev().find(|r| r.stage == stage)
    }

    pub fn require(&self, stage: StageId) -> Result<()> {
        match stage.previous() {
            Some(prev) if !self.is_completed(prev) => Err(Error::InvalidInput(format!(
                "{stage} needs {prev} to have completed in this run directory"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Serialize)]
struct TimingLine<'a> {
    run_id: &'a str,
    stage: StageId,
    wall_time_s: f64,
}

pub fn append_timing(run_dir: &Path, run_id: &str, stage: StageId, wall_time_s: f64) -> Result<()> {
    use std::io::Write;
    let dir = run_dir.join(LOGS_DIR);
    util::create_dir_all(&dir)?;
    let path = dir.join(TIMINGS_LOG);
    let mut line = serde_json::to_string(&TimingLine {
        run_id,
        stage,
        wall_time_s,
    })
    .expect("timing serializes");
    line.push('\n');
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Sum of recorded wall times per stage, most recent run id only.
pub fn read_timings(run_dir: &Path) -> Result<Vec<(StageId, f64)>> {
    #[derive(Deserialize)]
    struct Line {
        run_id: String,
        stage: StageId,
        wall_time_s: f64,
    }
    let path = run_dir.join(LOGS_DIR).join(TIMINGS_LOG);
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = Vec::new();
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed: Line = serde_json::from_str(l).map_err(|e| Error::Parse {
            path: path.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        lines.push(parsed);
    }
    let Some(last) = lines.last().map(|l| l.run_id.clone()) else {
        return Ok(Vec::new());
    };
    let mut out: Vec<(StageId, f64)> = Vec::new();
    for l in lines.iter().filter(|l| l.run_id == last) {
        match out.iter_mut().find(|(s, _)| *s == l.stage) {
            Some((_, t)) => *t += l.wall_time_s,
            None => out.push((l.stage, l.wall_time_s)),
        }
    }
    Ok(out)
}
