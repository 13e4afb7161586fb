//! Session scripts: one command per line, `#` starts a comment line.
//!
//! ```text
//! project fantasy character
//! control sketch.png
//! advance clean confident lines
//! label base
//! advance warm palette
//! activate base
//! advance cool palette
//! ask does the light read?
//! ```

use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Project { theme: String },
    Generate,
    Advance { delta: String },
    Regenerate { seed: Option<u64> },
    Inpaint { mask: PathBuf, prompt: String },
    Control { image: PathBuf },
    Activate { label: String },
    Ask { question: String },
    Label { text: String },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Project { .. } => "project",
            Command::Generate => "generate",
            Command::Advance { .. } => "advance",
            Command::Regenerate { .. } => "regenerate",
            Command::Inpaint { .. } => "inpaint",
            Command::Control { .. } => "control",
            Command::Activate { .. } => "activate",
            Command::Ask { .. } => "ask",
            Command::Label { .. } => "label",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    /// 1-based source line.
    pub line: usize,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

/// A whitespace-delimited word and its 1-based column.
fn words(s: &str, offset: usize) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices().chain(std::iter::once((s.len(), ' '))) {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(st)) => {
                out.push((offset + s[..st].chars().count() + 1, &s[st..i]));
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn parse_line(line_no: usize, raw: &str) -> Result<Option<Command>, ParseError> {
    let indent = raw.len() - raw.trim_start().len();
    let text = raw.trim();
    if text.is_empty() || text.starts_with('#') {
        return Ok(None);
    }
    let err = |column: usize, message: String| ParseError {
        line: line_no,
        column,
        message,
    };
    let head_col = raw[..indent].chars().count() + 1;
    let (head, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], &text[i..]),
        None => (text, ""),
    };
    let rest_offset = raw[..indent + head.len()].chars().count();
    let arg = rest.trim();
    let arg_col = rest_offset + rest.chars().take_while(|c| c.is_whitespace()).count() + 1;
    let required = |what: &str| -> Result<String, ParseError> {
        if arg.is_empty() {
            Err(err(rest_offset + 1, format!("`{head}` needs {what}")))
        } else {
            Ok(arg.to_string())
        }
    };
    let no_args = || -> Result<(), ParseError> {
        if arg.is_empty() {
            Ok(())
        } else {
            Err(err(arg_col, format!("`{head}` takes no arguments")))
        }
    };

    let command = match head {
        "project" => Command::Project {
            theme: required("a theme")?,
        },
        "generate" => {
            no_args()?;
            Command::Generate
        }
        "advance" => Command::Advance {
            delta: arg.to_string(),
        },
        "regenerate" => {
            let mut seed = None;
            for (col, word) in words(rest, rest_offset) {
                match word.split_once('=') {
                    Some(("seed", v)) => {
                        let parsed = v.parse().map_err(|_| {
                            err(col + 5, format!("seed must be an unsigned integer, got `{v}`"))
                        })?;
                        seed = Some(parsed);
                    }
                    _ => return Err(err(col, format!("unknown option `{word}`; expected seed=N"))),
                }
            }
            Command::Regenerate { seed }
        }
        "inpaint" => {
            let ws = words(rest, rest_offset);
            let Some(&(col, file)) = ws.first() else {
                return Err(err(rest_offset + 1, "`inpaint` needs a mask file and a prompt".into()));
            };
            let prompt = arg[file.len()..].trim();
            if prompt.is_empty() {
                return Err(err(col + file.chars().count(), "`inpaint` needs a region prompt".into()));
            }
            Command::Inpaint {
                mask: PathBuf::from(file),
                prompt: prompt.to_string(),
            }
        }
        "control" => Command::Control {
            image: PathBuf::from(required("an image file")?),
        },
        "activate" => Command::Activate {
            label: required("a label")?,
        },
        "ask" => Command::Ask {
            question: required("a question")?,
        },
        "label" => Command::Label {
            text: required("label text")?,
        },
        other => return Err(err(head_col, format!("unknown command `{other}`"))),
    };
    Ok(Some(command))
}

/// Parses a whole script. It must declare exactly one project, first.
pub fn parse(source: &str) -> Result<Vec<Step>, ParseError> {
    let mut steps = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let Some(command) = parse_line(line, raw)? else {
            continue;
        };
        let is_project = matches!(command, Command::Project { .. });
        if is_project != steps.is_empty() {
            let column = raw.len() - raw.trim_start().len() + 1;
            let message = if is_project {
                "only one `project` per script"
            } else {
                "script must start with `project <theme>`"
            };
            return Err(ParseError {
                line,
                column,
                message: message.into(),
            });
        }
        steps.push(Step { line, command });
    }
    if steps.is_empty() {
        return Err(ParseError {
            line: source.lines().count().max(1),
            column: 1,
            message: "script must start with `project <theme>`".into(),
        });
    }
    Ok(steps)
}
