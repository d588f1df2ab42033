//! The `Thought:` / `Code:` / `<end_action>` step format.

use thiserror::Error;

pub const THOUGHT_HEADER: &str = "Thought:";
pub const CODE_HEADER: &str = "Code:";
pub const END_ACTION: &str = "<end_action>";
const FENCE: &str = "```";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing 'Thought:' sequence")]
    MissingThought,
    #[error("missing 'Code:' sequence")]
    MissingCode,
    #[error("code sequence does not end with '<end_action>'")]
    MissingSentinel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedStep {
    pub thought: String,
    pub code: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FenceTag {
    #[default]
    Py,
    Python,
    Bare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SentinelStyle {
    /// "```<end_action>"
    #[default]
    Inline,
    /// "```\n<end_action>"
    OwnLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RenderStyle {
    pub fence: FenceTag,
    pub sentinel: SentinelStyle,
}

/// Render one step the way the model is asked to write it.
pub fn render_step(thought: &str, code: &str) -> String {
    render_step_with(thought, code, RenderStyle::default())
}

pub fn render_step_with(thought: &str, code: &str, style: RenderStyle) -> String {
    let tag = match style.fence {
        FenceTag::Py => "py",
        FenceTag::Python => "python",
        FenceTag::Bare => "",
    };
    let sep = match style.sentinel {
        SentinelStyle::Inline => "",
        SentinelStyle::OwnLine => "\n",
    };
    format!("{THOUGHT_HEADER} {thought}\n{CODE_HEADER}\n{FENCE}{tag}\n{code}\n{FENCE}{sep}{END_ACTION}")
}

/// True if `(thought, code)` survive a render/parse round trip unchanged.
pub fn is_renderable(thought: &str, code: &str) -> bool {
    let trimmed = |s: &str| !s.is_empty() && s.trim() == s;
    trimmed(thought)
        && trimmed(code)
        && !thought.contains(CODE_HEADER)
        && !thought.contains(END_ACTION)
        && !code.contains(FENCE)
        && !code.contains(END_ACTION)
}

fn is_tag(s: &str) -> bool {
    s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '+' | '-'))
}

/// Split a model reply into thought and code.
///
/// The code is taken from the fenced block after `Code:` (a language tag on
/// the opening fence is dropped); an unfenced body up to the sentinel is also
/// accepted. Anything after `<end_action>` is ignored.
pub fn parse_step(text: &str) -> Result<ParsedStep, ParseError> {
    let t = text.find(THOUGHT_HEADER).ok_or(ParseError::MissingThought)?;
    let after_thought = &text[t + THOUGHT_HEADER.len()..];

    // prefer a `Code:` that opens a fence, so prose mentioning "Code:" stays in the thought
    let mut code_at = None;
    let mut search = 0;
    while let Some(pos) = after_thought[search..].find(CODE_HEADER) {
        let at = search + pos;
        if code_at.is_none() {
            code_at = Some(at);
        }
        if after_thought[at + CODE_HEADER.len()..].trim_start().starts_with(FENCE) {
            code_at = Some(at);
            break;
        }
        search = at + CODE_HEADER.len();
    }
    let code_at = code_at.ok_or(ParseError::MissingCode)?;
    let thought = after_thought[..code_at].trim();
    if thought.is_empty() {
        return Err(ParseError::MissingThought);
    }

    let body = &after_thought[code_at + CODE_HEADER.len()..];
    let end = body.find(END_ACTION).ok_or(ParseError::MissingSentinel)?;
    let body = body[..end].trim();
    let code = match body.strip_prefix(FENCE) {
        Some(fenced) => {
            let fenced = match fenced.split_once('\n') {
                Some((first, rest)) if is_tag(first.trim()) => rest,
                _ => fenced,
            };
            let fenced = fenced.trim_end();
            fenced.strip_suffix(FENCE).unwrap_or(fenced)
        }
        None => body,
    }
    .trim();
    if code.is_empty() {
        return Err(ParseError::MissingCode);
    }
    Ok(ParsedStep { thought: thought.to_owned(), code: code.to_owned() })
}
