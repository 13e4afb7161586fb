use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The four drawing phases, in the order an illustration moves through them.
///
/// The derived `Ord` follows declaration order, so `Rough < Line < Color < Finish`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Rough,
    Line,
    Color,
    Finish,
}

impl StageKind {
    pub const ALL: [StageKind; 4] = [
        StageKind::Rough,
        StageKind::Line,
        StageKind::Color,
        StageKind::Finish,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    /// Successor in the fixed order, `None` for `Finish`.
    pub fn next(self) -> Option<StageKind> {
        match self {
            StageKind::Rough => Some(StageKind::Line),
            StageKind::Line => Some(StageKind::Color),
            StageKind::Color => Some(StageKind::Finish),
            StageKind::Finish => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Rough => "rough",
            StageKind::Line => "line",
            StageKind::Color => "color",
            StageKind::Finish => "finish",
        }
    }

    /// Human-readable phase name used in rendered tutor messages.
    pub fn display_name(self) -> &'static str {
        match self {
            StageKind::Rough => "Rough Sketch",
            StageKind::Line => "Line Art",
            StageKind::Color => "Coloring",
            StageKind::Finish => "Finishing",
        }
    }
}

/// Free-function form of [`StageKind::next`].
pub fn next_stage(stage: StageKind) -> Option<StageKind> {
    stage.next()
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown stage `{0}`")]
pub struct UnknownStage(pub String);

impl FromStr for StageKind {
    type Err = UnknownStage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rough" => Ok(StageKind::Rough),
            "line" => Ok(StageKind::Line),
            "color" => Ok(StageKind::Color),
            "finish" => Ok(StageKind::Finish),
            other => Err(UnknownStage(other.to_string())),
        }
    }
}
