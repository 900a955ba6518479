//! Evaluation: rank correlation against frame annotations, lexical overlap of
//! summary text, the rubric-judge aggregate, and a file hand-off for metrics
//! computed by an external scorer.

pub mod judge;
pub mod rank;
pub mod text;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use judge::{judge_summary, llm_judge_score, parse_judge_reply, JudgeScores, JUDGE_RUBRIC};
pub use rank::{average_ranks, kendall_tau, pearson, spearman_rho, Correlation, CorrelationStatus};
pub use text::{bleu, lcs_len, rouge_l, tokenize, BleuConfig, RougeScore};

use crate::error::{Error, Result};
use crate::util;

pub const EVAL_REPORT: &str = "eval_report.json";
pub const EVAL_PAIRS: &str = "eval_pairs.jsonl";
pub const EXTERNAL_SCORES: &str = "external_scores.json";

/// Per-frame importance annotations, one row per annotator.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMatrix {
    scores: Vec<Vec<f64>>,
}

impl AnnotationMatrix {
    pub fn new(scores: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = scores.first() else {
            return Err(Error::InvalidInput("annotation matrix has no users".into()));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::InvalidInput("annotation matrix has no frames".into()));
        }
        if scores.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("annotation rows differ in length".into()));
        }
        if scores.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("annotation values must be finite".into()));
        }
        Ok(AnnotationMatrix { scores })
    }

    pub fn n_users(&self) -> usize {
        self.scores.len()
    }

    pub fn n_frames(&self) -> usize {
        self.scores[0].len()
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.scores[u]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.scores
    }

    /// Per-frame mean over users.
    pub fn mean_row(&self) -> Vec<f64> {
        (0..self.n_frames())
            .map(|f| self.scores.iter().map(|r| r[f]).sum::<f64>() / self.n_users() as f64)
            .collect()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonMatrix {
    Bare(Vec<Vec<f64>>),
    Wrapped { scores: Vec<Vec<f64>> },
}

/// Reads a JSON users-by-frames matrix (`[[..], ..]` or `{"scores": [[..], ..]}`)
/// or a TSV with one row per frame: `frame<TAB>user1<TAB>...`, header optional.
pub fn load_annotations(path: &Path) -> Result<AnnotationMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        let m: JsonMatrix = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        return AnnotationMatrix::new(match m {
            JsonMatrix::Bare(s) | JsonMatrix::Wrapped { scores: s } => s,
        });
    }
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut frames: Vec<(f64, Vec<f64>)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(i + 1, e.to_string()))?;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let fields: Vec<&str> = rec.iter().map(str::trim).collect();
        let numeric: Option<Vec<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        match numeric {
            Some(v) if v.len() >= 2 => frames.push((v[0], v[1..].to_vec())),
            Some(_) => return Err(parse_err(i + 1, "expected frame and at least one score".into())),
            None if i == 0 => continue,
            None => return Err(parse_err(i + 1, format!("non-numeric field in {fields:?}"))),
        }
    }
    if frames.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(parse_err(0, "frame column must be strictly increasing".into()));
    }
    let users = frames.first().map_or(0, |f| f.1.len());
    if frames.iter().any(|f| f.1.len() != users) {
        return Err(parse_err(0, "rows have different numbers of users".into()));
    }
    AnnotationMatrix::new((0..users).map(|u| frames.iter().map(|f| f.1[u]).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserCorrelation {
    pub user: usize,
    pub tau: Correlation,
    pub rho: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub n_frames: usize,
    pub n_users: usize,
    pub truncated: bool,
    pub per_user: Vec<UserCorrelation>,
    /// Mean of defined per-user values; `null` if none is defined.
    #[serde(with = "rank::nan_as_null")]
    pub mean_tau: f64,
    #[serde(with = "rank::nan_as_null")]
    pub mean_rho: f64,
    /// Against the per-frame mean annotation.
    pub pooled_tau: Correlation,
    pub pooled_rho: Correlation,
}

fn mean_defined(values: impl Iterator<Item = Correlation>) -> f64 {
    let v: Vec<f64> = values.filter(Correlation::is_defined).map(|c| c.value).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn evaluate_ranking(pred: &[f64], truth: &AnnotationMatrix) -> Result<RankingReport> {
    let n = pred.len().min(truth.n_frames());
    let truncated = pred.len() != truth.n_frames();
    if truncated {
        log::warn!(
            "{} predicted frames vs {} annotated; comparing the first {n}",
            pred.len(),
            truth.n_frames()
        );
    }
    let pred = &pred[..n];
    let mut per_user = Vec::with_capacity(truth.n_users());
    for u in 0..truth.n_users() {
        let row = &truth.user(u)[..n];
        per_user.push(UserCorrelation {
            user: u,
            tau: kendall_tau(pred, row)?,
            rho: spearman_rho(pred, row)?,
        });
    }
    let pooled = truth.mean_row();
    Ok(RankingReport {
        n_frames: n,
        n_users: truth.n_users(),
        truncated,
        mean_tau: mean_defined(per_user.iter().map(|u| u.tau)),
        mean_rho: mean_defined(per_user.iter().map(|u| u.rho)),
        pooled_tau: kendall_tau(pred, &pooled[..n])?,
        pooled_rho: spearman_rho(pred, &pooled[..n])?,
        per_user,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextReport {
    pub candidate_tokens: usize,
    pub references: usize,
    /// Best F1 over references, with its precision and recall.
    pub rouge_l: RougeScore,
    pub bleu: f64,
    pub bleu_config: BleuConfig,
}

pub fn evaluate_text(candidate: &str, references: &[String], config: &BleuConfig) -> Result<TextReport> {
    if references.is_empty() {
        return Err(Error::InvalidInput("text evaluation needs at least one reference".into()));
    }
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let rouge = refs
        .iter()
        .map(|r| rouge_l(&cand, r))
        .fold(None::<RougeScore>, |best, s| match best {
            Some(b) if b.f1 >= s.f1 => Some(b),
            _ => Some(s),
        })
        .expect("at least one reference");
    Ok(TextReport {
        candidate_tokens: cand.len(),
        references: refs.len(),
        rouge_l: rouge,
        bleu: bleu(&cand, &refs, config)?,
        bleu_config: *config,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

/// One JSON object per line, for METEOR/BERTScore-style external scorers.
pub fn write_eval_pairs(path: &Path, pairs: &[EvalPair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?);
        out.push('\n');
    }
    util::write_atomic(path, out.as_bytes())
}

pub fn read_eval_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// `{"metric": value, ...}` or `{"pair id": {"metric": value}, ...}`.
pub type ExternalScores = BTreeMap<String, serde_json::Value>;

pub fn read_external_scores(path: &Path) -> Result<ExternalScores> {
    util::read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub scores: JudgeScores,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranking: Option<RankingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<TextReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: ExternalScores,
    /// Inputs used, for the record.
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}
