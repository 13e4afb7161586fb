//! Stage prompt templates and the subject merge rule used when advancing.

use crate::stage::StageKind;

pub fn stage_template(stage: StageKind) -> &'static str {
    match stage {
        StageKind::Rough => "rough sketch of ",
        StageKind::Line => "clean line art of ",
        StageKind::Color => "flat colored illustration of ",
        StageKind::Finish => "polished final illustration of ",
    }
}

/// Effective prompt: the stage template applied to the subject text.
pub fn render_prompt(stage: StageKind, subject: &str) -> String {
    format!("{}{}", stage_template(stage), subject)
}

/// Appends a user delta to the subject, comma-separated. Blank deltas leave
/// the subject unchanged.
pub fn merge_subject(parent_subject: &str, delta: &str) -> String {
    let delta = delta.trim();
    if delta.is_empty() {
        parent_subject.to_string()
    } else if parent_subject.is_empty() {
        delta.to_string()
    } else {
        format!("{parent_subject}, {delta}")
    }
}
