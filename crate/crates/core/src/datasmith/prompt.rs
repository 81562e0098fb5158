//! The instruction template shared by dataset construction and the chat
//! refinement client. Changing the wording requires bumping the version.

pub const PROMPT_VERSION: &str = "v1";

pub const INSTRUCTION: &str = "You correct Mandarin lip-reading transcripts. \
The input gives a toneless Pinyin sequence predicted from silent video, which may contain errors, \
followed by candidate Chinese transcriptions ranked from most to least likely. \
Use the Pinyin and the candidates to resolve homophones and visually confusable characters. \
Reply with the single corrected Chinese sentence and nothing else.";

const PINYIN_LABEL: &str = "Pinyin: ";
const CANDIDATES_LABEL: &str = "Candidates:";

/// Serializes the Pinyin string and candidate texts. Scores, when given,
/// are appended to each candidate line.
pub fn format_input(pinyin: &str, candidates: &[&str], scores: Option<&[f64]>) -> String {
    let mut out = String::new();
    out.push_str(PINYIN_LABEL);
    out.push_str(pinyin);
    out.push('\n');
    out.push_str(CANDIDATES_LABEL);
    for (i, text) in candidates.iter().enumerate() {
        out.push_str(&format!("\n{}. {}", i + 1, text));
        if let Some(score) = scores.and_then(|s| s.get(i)) {
            out.push_str(&format!(" (log_score {score:.4})"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedInput {
    pub pinyin: String,
    pub candidates: Vec<String>,
}

/// Inverse of [`format_input`], dropping any score annotations.
pub fn parse_input(input: &str) -> Option<ParsedInput> {
    let mut lines = input.lines();
    let pinyin = lines.next()?.strip_prefix(PINYIN_LABEL)?.to_string();
    if lines.next()? != CANDIDATES_LABEL {
        return None;
    }
    let mut candidates = Vec::new();
    for (i, line) in lines.enumerate() {
        let rest = line.strip_prefix(&format!("{}. ", i + 1))?;
        let text = match rest.rfind(" (log_score ") {
            Some(at) if rest.ends_with(')') => &rest[..at],
            _ => rest,
        };
        candidates.push(text.to_string());
    }
    Some(ParsedInput { pinyin, candidates })
}
