//! Ablation runs: one isolated pipeline run per setting, tabulated.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::manifest::{read_timings, RunManifest};
use crate::pipeline::{evaluate_run, read_accounting, Pipeline};
use crate::util;

pub const ABLATION_REPORT: &str = "ablation_report.json";
pub const ABLATION_TABLE: &str = "ablation_report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Full,
    VideoOnly,
    NoStage2,
    NoStage1,
    NoProcessing,
}

/// The four reduced pipelines compared against each other.
pub const STANDARD_ABLATIONS: [Preset; 4] = [
    Preset::VideoOnly,
    Preset::NoStage2,
    Preset::NoStage1,
    Preset::NoProcessing,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum AblationSetting {
    Preset(Preset),
    /// Label-assignment threshold.
    Stage2Tau(f64),
    /// Motion-filter threshold.
    Stage1Threshold(f64),
    /// Adaptive-sampling batch size.
    BatchSize(usize),
    /// Adaptive-sampling spread threshold.
    Delta(f64),
}

impl AblationSetting {
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut c = base.clone();
        match *self {
            AblationSetting::Preset(p) => match p {
                Preset::Full => {}
                Preset::VideoOnly => c.run.video_only = true,
                Preset::NoStage2 => c.run.skip_stage2 = true,
                Preset::NoStage1 => c.run.skip_stage1 = true,
                Preset::NoProcessing => {
                    c.run.skip_stage1 = true;
                    c.run.skip_stage2 = true;
                    c.run.no_grouping = true;
                }
            },
            AblationSetting::Stage2Tau(t) => c.semantics.tau = t,
            AblationSetting::Stage1Threshold(t) => c.sampler.diff_threshold = t,
            AblationSetting::BatchSize(s) => c.sampler.batch_size = s,
            AblationSetting::Delta(d) => c.sampler.delta = d,
        }
        c
    }

    /// Directory-safe name.
    pub fn slug(&self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for AblationSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationSetting::Preset(p) => f.write_str(match p {
                Preset::Full => "full",
                Preset::VideoOnly => "video-only",
                Preset::NoStage2 => "no-stage2",
                Preset::NoStage1 => "no-stage1",
                Preset::NoProcessing => "no-processing",
            }),
            AblationSetting::Stage2Tau(v) => write!(f, "stage2:{v}"),
            AblationSetting::Stage1Threshold(v) => write!(f, "stage1:{v}"),
            AblationSetting::BatchSize(v) => write!(f, "adaptive:{v}"),
            AblationSetting::Delta(v) => write!(f, "delta:{v}"),
        }
    }
}

impl FromStr for AblationSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidInput(format!("ablation setting {s:?}: {m}"));
        let preset = match s {
            "full" => Some(Preset::Full),
            "video-only" => Some(Preset::VideoOnly),
            "no-stage2" => Some(Preset::NoStage2),
            "no-stage1" => Some(Preset::NoStage1),
            "no-processing" => Some(Preset::NoProcessing),
            _ => None,
        };
        if let Some(p) = preset {
            return Ok(AblationSetting::Preset(p));
        }
        let (key, value) = s.split_once(':').ok_or_else(|| bad("expected a preset or key:value".into()))?;
        let num = |v: &str| v.parse::<f64>().map_err(|e| bad(e.to_string()));
        match key {
            "stage2" => Ok(AblationSetting::Stage2Tau(num(value)?)),
            "stage1" => Ok(AblationSetting::Stage1Threshold(num(value)?)),
            "adaptive" => Ok(AblationSetting::BatchSize(value.parse().map_err(|e| bad(format!("{e}")))?)),
            "delta" => Ok(AblationSetting::Delta(num(value)?)),
            other => Err(bad(format!("unknown key {other:?}"))),
        }
    }
}

/// Parses settings; `key:a,b,c` expands to one setting per value and
/// `standard` to the four standard ablations.
pub fn parse_settings<S: AsRef<str>>(args: &[S]) -> Result<Vec<AblationSetting>> {
    let mut out = Vec::new();
    for arg in args {
        let arg = arg.as_ref().trim();
        match arg.split_once(':') {
            Some((key, values)) => {
                for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                    out.push(format!("{key}:{v}").parse()?);
                }
            }
            None => {
                for v in arg.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                    if v == "standard" {
                        out.extend(STANDARD_ABLATIONS.iter().map(|p| AblationSetting::Preset(*p)));
                    } else {
                        out.push(v.parse()?);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub run_dir: PathBuf,
    pub extracted: usize,
    pub filtered: usize,
    pub selected: usize,
    pub labels: usize,
    pub anchored: usize,
    pub windows: usize,
    /// Frames or windows the summarizer described.
    pub frames_summarized: usize,
    pub backend_calls: usize,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kendall_tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Runs the pipeline once per setting under `out_dir/<setting>`. Settings that
/// already completed there are resumed, not redone.
pub fn run_ablation(
    base: &PipelineConfig,
    settings: &[AblationSetting],
    video: &Path,
    transcript: Option<&Path>,
    out_dir: &Path,
) -> Result<AblationReport> {
    if settings.is_empty() {
        return Err(Error::InvalidInput("ablation needs at least one setting".into()));
    }
    let evaluate = base.eval.annotations.is_some() || !base.eval.references.is_empty();
    let mut rows = Vec::with_capacity(settings.len());
    for setting in settings {
        let config = setting.apply(base);
        let run_dir = out_dir.join(setting.slug());
        log::info!("ablation {setting}: {}", run_dir.display());
        let started = Instant::now();
        let mut p = Pipeline::open(&run_dir, config.clone())?;
        p.run(video, transcript)?;
        let elapsed = started.elapsed().as_secs_f64();
        let timed: f64 = read_timings(&run_dir)?.iter().map(|(_, t)| t).sum();
        let acc = read_accounting(&run_dir)?;
        let manifest = RunManifest::load(&run_dir)?.expect("run just completed");
        let backend_calls = manifest
            .completed
            .iter()
            .filter_map(|s| manifest.latest(*s))
            .map(|r| r.backend_calls)
            .sum();
        let mut row = AblationRow {
            setting: setting.to_string(),
            run_dir: run_dir.clone(),
            extracted: acc.extracted,
            filtered: acc.filtered,
            selected: acc.selected,
            labels: acc.labels,
            anchored: acc.anchored,
            windows: acc.windows,
            frames_summarized: acc.representative_calls,
            backend_calls,
            wall_time_s: timed.max(elapsed),
            bleu: None,
            rouge_l: None,
            judge: None,
            kendall_tau: None,
            spearman_rho: None,
        };
        if evaluate {
            let report = evaluate_run(&run_dir, &config)?;
            if let Some(t) = &report.text {
                row.bleu = Some(t.bleu);
                row.rouge_l = Some(t.rouge_l.f1);
            }
            row.judge = report.judge.map(|j| j.score);
            if let Some(r) = &report.ranking {
                row.kendall_tau = Some(r.mean_tau).filter(|v| v.is_finite());
                row.spearman_rho = Some(r.mean_rho).filter(|v| v.is_finite());
            }
        }
        rows.push(row);
    }
    let report = AblationReport { rows };
    util::write_json(&out_dir.join(ABLATION_REPORT), &report)?;
    write_table(&out_dir.join(ABLATION_TABLE), &report)?;
    Ok(report)
}

const COLUMNS: [&str; 15] = [
    "setting",
    "extracted",
    "filtered",
    "selected",
    "labels",
    "anchored",
    "windows",
    "frames_summarized",
    "backend_calls",
    "wall_time_s",
    "bleu",
    "rouge_l",
    "judge",
    "kendall_tau",
    "spearman_rho",
];

fn cells(r: &AblationRow) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    vec![
        r.setting.clone(),
        r.extracted.to_string(),
        r.filtered.to_string(),
        r.selected.to_string(),
        r.labels.to_string(),
        r.anchored.to_string(),
        r.windows.to_string(),
        r.frames_summarized.to_string(),
        r.backend_calls.to_string(),
        format!("{:.3}", r.wall_time_s),
        opt(r.bleu),
        opt(r.rouge_l),
        opt(r.judge),
        opt(r.kendall_tau),
        opt(r.spearman_rho),
    ]
}

fn write_table(path: &Path, report: &AblationReport) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).map_err(io)?;
    for r in &report.rows {
        w.write_record(cells(r)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    util::write_atomic(path, &bytes)
}

/// Fixed-width text table for terminals.
pub fn render_table(report: &AblationReport) -> String {
    let rows: Vec<Vec<String>> = report.rows.iter().map(cells).collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([COLUMNS[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(COLUMNS.to_vec())];
    out.extend(rows.iter().map(|r| line(r.iter().map(String::as_str).collect())));
    out.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsing() {
        let s = parse_settings(&["stage2:0.5,0.7,0.9", "no-stage1", "video-only,no-processing"]).unwrap();
        assert_eq!(
            s,
            vec![
                AblationSetting::Stage2Tau(0.5),
                AblationSetting::Stage2Tau(0.7),
                AblationSetting::Stage2Tau(0.9),
                AblationSetting::Preset(Preset::NoStage1),
                AblationSetting::Preset(Preset::VideoOnly),
                AblationSetting::Preset(Preset::NoProcessing),
            ]
        );
        assert_eq!(parse_settings(&["stage1:10,30,50"]).unwrap().len(), 3);
        assert_eq!(parse_settings(&["adaptive:15"]).unwrap(), vec![AblationSetting::BatchSize(15)]);
        assert!(parse_settings(&["bogus"]).is_err());
        assert!(parse_settings(&["stage2:x"]).is_err());
        assert!(parse_settings::<&str>(&[]).unwrap().is_empty());
    }

    #[test]
    fn round_trip_names() {
        for s in ["full", "video-only", "no-stage2", "no-stage1", "no-processing", "stage2:0.7", "stage1:30", "adaptive:10", "delta:0.3"] {
            assert_eq!(s.parse::<AblationSetting>().unwrap().to_string(), s);
        }
        assert_eq!(AblationSetting::Stage2Tau(0.5).slug(), "stage2-0.5");
    }

    #[test]
    fn presets_touch_the_right_flags() {
        let base = PipelineConfig::default();
        let c = AblationSetting::Preset(Preset::NoProcessing).apply(&base);
        assert!(c.run.skip_stage1 && c.run.skip_stage2 && c.run.no_grouping && !c.run.video_only);
        let c = AblationSetting::Stage1Threshold(50.0).apply(&base);
        assert_eq!(c.sampler.diff_threshold, 50.0);
        assert_eq!(AblationSetting::Preset(Preset::Full).apply(&base), base);
    }

    #[test]
    fn empty_settings_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_ablation(&PipelineConfig::default(), &[], dir.path(), None, dir.path()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }
}
