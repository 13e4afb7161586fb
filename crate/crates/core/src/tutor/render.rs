use crate::tutor::TutorContext;

/// Versioned context template; placeholders are `{name}`.
pub const CONTEXT_TEMPLATE: &str = include_str!("../../assets/tutor_context_v1.txt");
pub const PERSONA: &str = include_str!("../../assets/tutor_persona.txt");

/// Renders `ctx` into the single user message sent to the remote tutor.
///
/// Only the newest `max_actions` actions are kept. Substitution is one pass,
/// so placeholder-looking text inside user fields is left as is.
pub fn render_message(ctx: &TutorContext, max_actions: usize) -> String {
    let start = ctx.recent_actions.len().saturating_sub(max_actions);
    let kept = &ctx.recent_actions[start..];
    let actions = if kept.is_empty() {
        "(none)".to_string()
    } else {
        kept.iter()
            .map(|a| format!("- {a}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let lookup = |name: &str| -> Option<String> {
        Some(match name {
            "theme" => ctx.project_theme.clone(),
            "stage" => ctx.stage.as_str().to_string(),
            "stage_name" => ctx.stage.display_name().to_string(),
            "prompt" => ctx.node_prompt.clone(),
            "actions" => actions.clone(),
            "question" => ctx.question.clone(),
            _ => return None,
        })
    };

    let mut out = String::with_capacity(CONTEXT_TEMPLATE.len() + 256);
    let mut rest = CONTEXT_TEMPLATE;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}').and_then(|close| lookup(&after[..close]).map(|v| (close, v))) {
            Some((close, value)) => {
                out.push_str(&value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out.trim_end().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::StageKind;

    fn ctx(actions: usize, question: &str) -> TutorContext {
        TutorContext {
            project_theme: "fantasy character".into(),
            stage: StageKind::Line,
            node_prompt: "clean line art of fantasy character".into(),
            recent_actions: (0..actions).map(|i| format!("action {i}")).collect(),
            question: question.into(),
        }
    }

    #[test]
    fn fixture_render() {
        let text = render_message(&ctx(2, "why thicker?"), 10);
        assert!(text.starts_with("[tutor-context v1]\nProject theme: fantasy character\n"));
        assert!(text.contains("Current stage: Line Art (line)"));
        assert!(text.contains("- action 0\n- action 1\n"));
        assert!(text.contains("Learner question: why thicker?"));
        for stage in StageKind::ALL {
            let mut c = ctx(0, "q");
            c.stage = stage;
            let r = render_message(&c, 10);
            assert!(r.contains(stage.display_name()) && r.contains(stage.as_str()));
            assert!(r.contains("(none)"));
        }
    }

    #[test]
    fn oldest_action_dropped_over_limit() {
        let text = render_message(&ctx(11, "q"), 10);
        assert!(!text.contains("- action 0\n"));
        assert!(text.contains("- action 1\n") && text.contains("- action 10\n"));
    }

    #[test]
    fn user_braces_are_not_expanded() {
        let text = render_message(&ctx(0, "what is {theme}?"), 10);
        assert!(text.contains("Learner question: what is {theme}?"));
    }

    #[test]
    fn distinct_questions_render_distinctly() {
        let qs = ["a", "b", "a ", "{question}", "ab", "why?"];
        let rendered: std::collections::HashSet<String> =
            qs.iter().map(|q| render_message(&ctx(3, q), 10)).collect();
        assert_eq!(rendered.len(), qs.len());
    }
}
