use crate::stage::StageKind;
use crate::tutor::TutorContext;

/// One row of the offline rule table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRule {
    pub stage: StageKind,
    /// Heading the answer opens with.
    pub title: &'static str,
    /// Normative topic phrase every answer for this stage contains.
    pub topic: &'static str,
    pub tip: &'static str,
    pub reflection: &'static str,
}

const RULES: [StageRule; 4] = [
    StageRule {
        stage: StageKind::Rough,
        title: "Pose and composition",
        topic: "adjusting pose or composition",
        tip: "Before any detail, try adjusting pose or composition: block the figure in with simple shapes, find one clear line of action, and keep the silhouette readable at thumbnail size.",
        reflection: "If you squint at the sketch, can you still tell what the figure is doing?",
    },
    StageRule {
        stage: StageKind::Line,
        title: "Line weight",
        topic: "Why add line thickness here?",
        tip: "Why add line thickness here? Heavier lines on outer contours, overlaps and shadowed edges push a form forward; thin lines keep interior details quiet.",
        reflection: "Which contour should read as closest to the viewer?",
    },
    StageRule {
        stage: StageKind::Color,
        title: "Color theory",
        topic: "warm vs. cool contrast",
        tip: "Block in flat base colors first, then use warm vs. cool contrast: warm hues advance and suit the lit side, cool hues recede and suit shadows and the background.",
        reflection: "Does the palette still separate figure and background in grayscale?",
    },
    StageRule {
        stage: StageKind::Finish,
        title: "Lighting consistency",
        topic: "Where is the light source?",
        tip: "Check that every highlight, cast shadow and rim light agrees with one direction before adding final effects.",
        reflection: "Where is the light source?",
    },
];

pub fn stage_rule(stage: StageKind) -> &'static StageRule {
    &RULES[stage.index() as usize]
}

/// Deterministic rule-table answer. Opens with the topic title, gives the
/// stage tip, echoes the question and ends with a reflection prompt.
pub fn offline_answer(ctx: &TutorContext) -> String {
    let rule = stage_rule(ctx.stage);
    format!(
        "{title} ({stage} stage). {tip} You asked: \"{question}\". {reflection}",
        title = rule.title,
        stage = ctx.stage.display_name(),
        tip = rule.tip,
        question = ctx.question,
        reflection = rule.reflection,
    )
}
