//! Rubric-based judging of a summary by a chat model, and the weighted
//! aggregation of the rubric.

use serde::{Deserialize, Serialize};

use crate::chat::{ChatClient, ChatRequest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeScores {
    pub factual_accuracy: u8,
    pub detail: u8,
    pub specificity: u8,
    pub completeness: u8,
    pub repetition: u8,
}

impl JudgeScores {
    pub fn new(factual_accuracy: u8, detail: u8, specificity: u8, completeness: u8, repetition: u8) -> Result<Self> {
        let s = JudgeScores {
            factual_accuracy,
            detail,
            specificity,
            completeness,
            repetition,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("factual_accuracy", self.factual_accuracy),
            ("detail", self.detail),
            ("specificity", self.specificity),
            ("completeness", self.completeness),
            ("repetition", self.repetition),
        ];
        for (name, v) in all {
            if !(1..=5).contains(&v) {
                return Err(Error::InvalidInput(format!("{name} must be 1..=5, got {v}")));
            }
        }
        Ok(())
    }
}

/// Factual accuracy counts double; the sum is normalized by its maximum, 30.
pub fn llm_judge_score(j: &JudgeScores) -> Result<f64> {
    j.validate()?;
    let sum = 2 * u32::from(j.factual_accuracy)
        + u32::from(j.detail)
        + u32::from(j.specificity)
        + u32::from(j.completeness)
        + u32::from(j.repetition);
    Ok(f64::from(sum) / 30.0)
}

/// Rubric prompt for the judge model. Not part of the summarization prompts;
/// replace it through config if a different rubric wording is wanted.
pub const JUDGE_RUBRIC: &str = "Rate the candidate summary of a video against the reference summary.
Score each criterion from 1 (poor) to 5 (excellent):
- factual_accuracy: statements agree with the reference
- detail: the summary includes concrete details
- specificity: steps and objects are named precisely
- completeness: all main steps of the reference are covered
- repetition: 5 means no redundant or repeated content
Reply with a JSON object with exactly these five integer fields and nothing else.

Reference:
{reference}

Candidate:
{candidate}";

/// Extracts the first `{...}` object in the reply and reads the rubric from it.
pub fn parse_judge_reply(reply: &str) -> Result<JudgeScores> {
    let start = reply.find('{');
    let end = reply.rfind('}');
    let (Some(s), Some(e)) = (start, end) else {
        return Err(Error::InvalidInput("judge reply has no JSON object".into()));
    };
    if e < s {
        return Err(Error::InvalidInput("judge reply has no JSON object".into()));
    }
    let scores: JudgeScores = serde_json::from_str(&reply[s..=e])
        .map_err(|err| Error::InvalidInput(format!("judge reply is not a rubric: {err}")))?;
    scores.validate()?;
    Ok(scores)
}

pub fn judge_summary(client: &ChatClient, rubric: &str, candidate: &str, reference: &str) -> Result<JudgeScores> {
    let prompt = crate::prompts::render(rubric, &[("{reference}", reference), ("{candidate}", candidate)])?;
    let reply = client.complete(&ChatRequest::text(prompt))?;
    parse_judge_reply(&reply.text)
}
