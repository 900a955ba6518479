//! Prompt templates and slot rendering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

pub const SLOT_DATASET: &str = "<dataset description>";
pub const SLOT_VLM_OUTPUT: &str = "{VLM_output}";
pub const SLOT_LABEL: &str = "{label}";
pub const SLOT_MAJORITY_LABEL: &str = "{majority_label}";
pub const SLOT_CHUNK: &str = "{chunk}";
pub const SLOT_FINAL_SUMMARY: &str = "{final_summary_text}";
pub const SLOT_TRANSCRIPT: &str = "{transcript_text}";

pub const FRAME_DESCRIPTION: &str = "Explain what is happening in the image. This is a frame from a video of an activity <dataset description>";

pub const LABEL_GENERATION: &str = "Extract info from: {VLM_output}
Tell me in few words (5–6) by giving a label for the most important details that you find from the text description of the activity happening in the image.
Don't make the label vague like only the heading of the main activity; tell me exactly what is going on in the image and only give the label in simple words.";

pub const LABEL_VALIDATION: &str = "Imagine you are an expert on validating labels. Given this label: {label}, do you think it is valid to check an image in an important video?
For example, is it not useful (like a black screen) or too general (like \"this is a surgery video\" or \"this is a girl standing\")?
I don't want labels that are not useful, say nothing about the image, or are too general.
Based on your judgement, return 0 if you think this is unimportant or too general; return 1 if you think it is an important label. Return only a number, nothing else.";

pub const WINDOW_DESCRIPTION: &str = "Context: This is a combination of 4 images from a video of an activity spanning <dataset description>
Each small picture represents a step in the sequence:
The current major label is '{majority_label}'.
- Top-right: Step 2
- Top-left: Step 1
- Bottom-right: Step 4
- Bottom-left: Step 3
Provide a detailed description for each of the 4 images.";

pub const RECURSIVE_SUMMARIZATION: &str = "You are summarizing partial text from a video of an activity spanning  <dataset description>.
Try to give a name to this activity (e.g., a lady doing movements could be dancing). Try to correlate the different activities to speak for one main act or theme.
Rewrite the text in a frame-wise, narrative format with transitions between steps:

{chunk}";

pub const FINAL_INTEGRATION: &str = "We have a final summary of video frames:

{final_summary_text}

We also have the raw transcript from the entire audio:

{transcript_text}

Please produce a unified, cohesive summary of all the steps in the activity happening in the video, which could be related to one of these: <dataset description>
Incorporate relevant information from the audio transcript. If the transcript provides additional details or clarifications, weave them into the final summary.
If the transcript includes extraneous content, omit it.
Focus on a coherent storyline of the entire action or activity of the video.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateId {
    FrameDescribe,
    LabelGenerate,
    LabelValidate,
    WindowDescribe,
    RecursiveMerge,
    FinalIntegrate,
}

/// The template set used by a run. Every field can be overridden from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSet {
    pub frame_describe: String,
    pub label_generate: String,
    pub label_validate: String,
    pub window_describe: String,
    pub recursive_merge: String,
    pub final_integrate: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            frame_describe: FRAME_DESCRIPTION.to_string(),
            label_generate: LABEL_GENERATION.to_string(),
            label_validate: LABEL_VALIDATION.to_string(),
            window_describe: WINDOW_DESCRIPTION.to_string(),
            recursive_merge: RECURSIVE_SUMMARIZATION.to_string(),
            final_integrate: FINAL_INTEGRATION.to_string(),
        }
    }
}

impl PromptSet {
    pub fn template(&self, id: TemplateId) -> &str {
        match id {
            TemplateId::FrameDescribe => &self.frame_describe,
            TemplateId::LabelGenerate => &self.label_generate,
            TemplateId::LabelValidate => &self.label_validate,
            TemplateId::WindowDescribe => &self.window_describe,
            TemplateId::RecursiveMerge => &self.recursive_merge,
            TemplateId::FinalIntegrate => &self.final_integrate,
        }
    }

    pub fn render(&self, id: TemplateId, slots: &[(&str, &str)]) -> Result<RenderedPrompt> {
        Ok(RenderedPrompt {
            template_id: id,
            text: render(self.template(id), slots)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template_id: TemplateId,
    pub text: String,
}

impl RenderedPrompt {
    pub fn hash(&self) -> String {
        sha256_hex(self.text.as_bytes())
    }
}

/// Single-pass slot substitution: text inserted for one slot is never rescanned,
/// so values containing slot markers come through untouched. Every slot passed
/// in must occur in the template.
pub fn render(template: &str, slots: &[(&str, &str)]) -> Result<String> {
    for (name, _) in slots {
        if !template.contains(name) {
            return Err(Error::Config(format!("template has no slot {name}")));
        }
    }
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    loop {
        let next = slots
            .iter()
            .filter_map(|(name, value)| rest.find(name).map(|pos| (pos, *name, *value)))
            .min_by_key(|(pos, name, _)| (*pos, std::cmp::Reverse(name.len())));
        match next {
            Some((pos, name, value)) => {
                out.push_str(&rest[..pos]);
                out.push_str(value);
                rest = &rest[pos + name.len()..];
            }
            None => {
                out.push_str(rest);
                return Ok(out);
            }
        }
    }
}
